//! Delta-net convergence: pairings of embedded rough fields against several
//! test densities converge to the classical pairing `<S, psi>`, with
//! positive fitted rate, and the spread across (transport, kernel) choices
//! shrinks monotonically over the last four scales. Corpus: a continuous
//! radial-kink vector field and a two-point scalar mass sum.

use anyhow::{Context, Result};
use distgeo_core::{
    associate, iota, AssocTolerance, AssociationSummary, Point, Valence,
};

use crate::config::Config;
use crate::experiments::{expect_associated, warn_failures};
use crate::oracle::{delta_pairing, radial_kink_pairing};
use crate::record::RunRecord;
use crate::specs::{
    build_chart, build_choices, build_density, build_net, delta_sum_scalar, radial_kink_vector,
    with_coeff,
};

pub fn run(cfg: &Config, hash: &str) -> Result<RunRecord> {
    let chart = build_chart(&cfg.chart)?;
    if chart.dim() != 2 {
        anyhow::bail!("the delta-net corpus is two-dimensional");
    }
    let net = build_net(&cfg.net)?;
    let choices = build_choices(&chart, &cfg.choices)?;
    if choices.len() < 2 {
        anyhow::bail!("delta-net experiments need at least two pairing choices for the spread");
    }
    let quad = cfg.quad.clone().unwrap_or_default();
    let tol = AssocTolerance {
        rel: cfg.tolerances.rel,
        abs: cfg.tolerances.abs,
    };
    let mut record = RunRecord::new(cfg.experiment.kind.name(), &cfg.experiment.label, hash);

    // Continuous member: |x - c| times a fixed direction.
    let kink_center = Point::new(&[0.12, -0.08]);
    let kink_dir = vec![1.0, -0.5];
    let kink_amp = 1.0;
    let continuous = iota(&radial_kink_vector(
        chart.clone(),
        kink_center,
        kink_dir.clone(),
        kink_amp,
    ));

    // Singular member: two weighted point masses.
    let points = [Point::new(&[-0.2, 0.15]), Point::new(&[0.25, 0.1])];
    let weights = [1.0, 0.6];
    let masses = iota(&delta_sum_scalar(chart.clone(), &points, &weights)?);

    for (i, section) in cfg.densities.iter().enumerate() {
        // The config supplies a one-form coefficient for the vector pairing;
        // the scalar variant reuses the same bump geometry.
        let psi_vec = build_density(
            chart.clone(),
            section,
            Valence::new(0, 1),
            &format!("psi{i}"),
        )?;
        let psi_scalar = with_coeff(
            &psi_vec,
            distgeo_core::Components::scalar(1.0),
            &format!("{}-s", psi_vec.label),
        )?;

        let target_kink = radial_kink_pairing(&psi_vec, &kink_center, &kink_dir, kink_amp)?;
        let summary = associate(
            &continuous,
            &psi_vec,
            Some(target_kink),
            &choices,
            &net,
            &quad,
            tol,
            &format!("kink-vector[{}]", psi_vec.label),
        )
        .with_context(|| format!("pairing the kink vector with {}", psi_vec.label))?;
        net_expectations(&mut record, &summary, "continuous field pairings reach <S, psi>");

        let target_masses = delta_pairing(&psi_scalar, &points, &weights);
        let summary = associate(
            &masses,
            &psi_scalar,
            Some(target_masses),
            &choices,
            &net,
            &quad,
            tol,
            &format!("point-masses[{}]", psi_scalar.label),
        )
        .with_context(|| format!("pairing the mass sum with {}", psi_scalar.label))?;
        net_expectations(&mut record, &summary, "point-mass pairings reach <S, psi>");
    }

    record.finalize();
    Ok(record)
}

/// Verdict, positive rate, and monotone cross-choice spread for one summary.
fn net_expectations(record: &mut RunRecord, summary: &AssociationSummary, note: &str) {
    warn_failures(record, summary);
    expect_associated(record, summary, note);
    for rep in &summary.per_choice {
        // A missing slope with an associated verdict means the tail already
        // sits at the limit to roundoff: faster than any power.
        let positive = match rep.slope {
            Some(s) => s >= 0.05,
            None => rep.verdict == distgeo_core::AssociationVerdict::Associated,
        };
        record.expect_true(
            &format!("{}[{}]-slope", summary.quantity, rep.choice),
            positive,
            "pairing errors decay with a positive fitted rate",
        );
    }
    record.expect_true(
        &format!("{}-spread-monotone", summary.quantity),
        summary.spread_monotone_tail,
        "cross-choice spread is nonincreasing over the last four scales",
    );
    record.associations.push(summary.clone());
}
