//! Experiment harness around `distgeo-core`: TOML configs in, deterministic
//! JSON and CSV reports out. The library surface exists so integration and
//! acceptance tests can drive experiments in-process; the `distgeo` binary
//! is a thin layer over [`run_single`] and the report writers.

pub mod config;
pub mod experiments;
pub mod oracle;
pub mod record;
pub mod specs;

use std::path::Path;

use config::{ConfigError, ExperimentKind, LoadedConfig, Overrides};
pub use experiments::run_single;
use record::{RunRecord, SuiteMember, SuiteRecord, SCHEMA_VERSION};

/// Load every member config of a suite, relative to the suite's directory,
/// with the same command-line overrides applied (and hashed) per member.
pub fn load_suite_members(
    loaded: &LoadedConfig,
    overrides: &Overrides,
) -> Result<Vec<LoadedConfig>, ConfigError> {
    let suite = loaded.config.suite.as_ref().ok_or_else(|| ConfigError::Invalid {
        field: "suite".into(),
        message: "suite experiments need a [suite] table".into(),
    })?;
    let mut members = Vec::with_capacity(suite.configs.len());
    for rel in &suite.configs {
        let path = loaded.dir.join(rel);
        let member = config::load(&path, overrides)?;
        if member.config.experiment.kind == ExperimentKind::Suite {
            return Err(ConfigError::Invalid {
                field: "suite.configs".into(),
                message: format!("`{rel}` is itself a suite; nesting is not supported"),
            });
        }
        members.push(member);
    }
    Ok(members)
}

/// Run all members of a loaded suite and assemble the roll-up record.
/// Member configs must already be loaded (so config errors surface before
/// any numerics start).
pub fn run_suite(
    loaded: &LoadedConfig,
    members: &[LoadedConfig],
) -> anyhow::Result<(SuiteRecord, Vec<RunRecord>)> {
    let mut rows = Vec::with_capacity(members.len());
    let mut records = Vec::with_capacity(members.len());
    for member in members {
        let record = run_single(&member.config, &member.hash)?;
        rows.push(SuiteMember {
            label: record.label.clone(),
            experiment: record.experiment.clone(),
            config_hash: record.config_hash.clone(),
            pass: record.pass,
            report: format!("{}.json", record.label),
        });
        records.push(record);
    }
    let pass = rows.iter().all(|m| m.pass);
    let suite = SuiteRecord {
        schema_version: SCHEMA_VERSION,
        label: loaded.config.experiment.label.clone(),
        config_hash: loaded.hash.clone(),
        members: rows,
        pass,
    };
    Ok((suite, records))
}

/// Which experiment kinds a subcommand accepts; thematic groupings keep
/// every config kind reachable from the seven subcommands.
pub fn allowed_kinds(subcommand: &str) -> &'static [ExperimentKind] {
    match subcommand {
        "embed" => &[
            ExperimentKind::Embed,
            ExperimentKind::Consistency,
            ExperimentKind::Exponents,
        ],
        "curvature" => &[ExperimentKind::Curvature],
        "associate" => &[ExperimentKind::Associate, ExperimentKind::Deltanet],
        "cone" => &[ExperimentKind::Cone],
        "compat" => &[ExperimentKind::Compat],
        "commute" => &[ExperimentKind::Commute],
        "suite" => &[ExperimentKind::Suite],
        _ => &[],
    }
}

/// Resolve the output directory: flag, then the `DISTGEO_OUT` environment
/// override, then the config's `[output] dir`, then `runs`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg_dir: Option<&str>) -> std::path::PathBuf {
    if let Some(f) = flag {
        return f.to_path_buf();
    }
    if let Ok(env) = std::env::var("DISTGEO_OUT") {
        if !env.is_empty() {
            return env.into();
        }
    }
    cfg_dir.map_or_else(|| "runs".into(), Into::into)
}
