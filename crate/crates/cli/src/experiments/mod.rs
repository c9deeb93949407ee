//! Experiment drivers: each takes a validated [`Config`] and produces a
//! [`RunRecord`] whose expectations decide the process exit code.

pub mod commute;
pub mod compat;
pub mod cone;
pub mod consistency;
pub mod deltanet;
pub mod exponents;
pub mod grids;

use std::time::Instant;

use anyhow::{bail, Result};
use distgeo_core::{AssocTolerance, AssociationSummary, AssociationVerdict};

use crate::config::{Config, ExperimentKind};
use crate::record::RunRecord;

/// Run one non-suite experiment and stamp its wall time.
pub fn run_single(cfg: &Config, hash: &str) -> Result<RunRecord> {
    let start = Instant::now();
    let mut record = match cfg.experiment.kind {
        ExperimentKind::Cone => cone::run(cfg, hash),
        ExperimentKind::Compat => compat::run(cfg, hash),
        ExperimentKind::Commute => commute::run(cfg, hash),
        ExperimentKind::Deltanet => deltanet::run(cfg, hash),
        ExperimentKind::Consistency => consistency::run(cfg, hash),
        ExperimentKind::Exponents => exponents::run(cfg, hash),
        ExperimentKind::Embed => grids::run_embed(cfg, hash),
        ExperimentKind::Curvature => grids::run_curvature(cfg, hash),
        ExperimentKind::Associate => grids::run_associate(cfg, hash),
        ExperimentKind::Suite => {
            bail!("suite configs are composite; run them through the suite subcommand")
        }
    }?;
    record.wall_secs = start.elapsed().as_secs_f64();
    Ok(record)
}

/// `abs.max(rel * |target|)`: how far an extrapolated limit may sit from its
/// target and still count as associated. Mirrors the association verdict.
pub fn allowance(tol: AssocTolerance, target: f64) -> f64 {
    tol.abs.max(tol.rel * target.abs())
}

/// Copy per-choice pairing failures out of a summary as record warnings.
pub fn warn_failures(record: &mut RunRecord, summary: &AssociationSummary) {
    for rep in &summary.per_choice {
        for f in &rep.failures {
            record.warn(format!(
                "{} [{}]: eps {:.6}: {}",
                summary.quantity, rep.choice, f.eps, f.message
            ));
        }
    }
}

/// Expect every per-choice verdict in a summary to be `Associated`.
pub fn expect_associated(record: &mut RunRecord, summary: &AssociationSummary, note: &str) {
    for rep in &summary.per_choice {
        record.expect_true(
            &format!("{}[{}]", summary.quantity, rep.choice),
            rep.verdict == AssociationVerdict::Associated,
            note,
        );
    }
}
