//! TOML experiment configs: schema, validation, canonical hashing.
//!
//! Validation failures name the offending table/field so the CLI can exit
//! with a usable diagnostic (exit code 2). The config hash is computed over
//! the raw file bytes (line endings normalized) plus any command-line
//! overrides, so float literals enter the hash exactly as written.

use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};

use distgeo_core::{QuadConfig, StepRule};

#[derive(Debug)]
pub enum ConfigError {
    Io { path: PathBuf, source: std::io::Error },
    Parse { path: PathBuf, message: String },
    Invalid { field: String, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => {
                write!(f, "config {}: {}", path.display(), source)
            }
            ConfigError::Parse { path, message } => {
                write!(f, "config {}: {}", path.display(), message)
            }
            ConfigError::Invalid { field, message } => {
                write!(f, "config field `{field}`: {message}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Cone,
    Compat,
    Commute,
    Deltanet,
    Consistency,
    Exponents,
    Embed,
    Curvature,
    Associate,
    Suite,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Cone => "cone",
            ExperimentKind::Compat => "compat",
            ExperimentKind::Commute => "commute",
            ExperimentKind::Deltanet => "deltanet",
            ExperimentKind::Consistency => "consistency",
            ExperimentKind::Exponents => "exponents",
            ExperimentKind::Embed => "embed",
            ExperimentKind::Curvature => "curvature",
            ExperimentKind::Associate => "associate",
            ExperimentKind::Suite => "suite",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub label: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Default for ChartSection {
    fn default() -> ChartSection {
        ChartSection {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub eps0: f64,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_ratio() -> f64 {
    0.5
}
fn default_levels() -> usize {
    8
}

impl Default for NetSection {
    fn default() -> NetSection {
        NetSection {
            eps0: 0.05,
            ratio: 0.5,
            levels: 8,
        }
    }
}

/// One (transport, kernel) pairing choice.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceSection {
    pub label: String,
    /// "identity" or "parallel" (geodesic transport of a canned constant
    /// background connection).
    #[serde(default = "default_transport")]
    pub transport: String,
    /// Strength of the canned background when transport = "parallel".
    #[serde(default = "default_transport_strength")]
    pub transport_strength: f64,
    pub q: u32,
    #[serde(default)]
    pub skew: f64,
}

fn default_transport() -> String {
    "identity".to_string()
}
fn default_transport_strength() -> f64 {
    0.3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub eps0: f64,
    pub ratio: f64,
    pub levels: usize,
    pub radii: Vec<f64>,
    #[serde(default = "default_angles")]
    pub angles: usize,
    /// Tolerance on fitted regime exponents.
    #[serde(default = "default_decay_tol")]
    pub exponent_tolerance: f64,
}

fn default_angles() -> usize {
    8
}
fn default_decay_tol() -> f64 {
    0.3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSection {
    /// Cone parameter A in (0, 1]; deficit angle 2*pi*(1-A).
    pub a: f64,
    /// Regime boundary for the decay fit, in units of eps.
    #[serde(default = "default_r0_factor")]
    pub r0_factor: f64,
    /// Pair against plain coordinate volume instead of sqrt|det g~|.
    #[serde(default)]
    pub plain_density: bool,
    /// Allowed relative disagreement between per-choice limits when the
    /// config lists several pairing choices.
    #[serde(default = "default_swap_rel")]
    pub choice_spread_rel: f64,
    #[serde(default)]
    pub decay: Option<DecaySection>,
}

fn default_r0_factor() -> f64 {
    2.0
}
fn default_swap_rel() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSection {
    /// "flat" | "conformal" | "sphere" | "skew3d" | "cone"
    pub kind: String,
    /// conformal: phi = phi_xy*x1*x2 + phi_xx*x1^2 + phi_yy*x2^2
    #[serde(default)]
    pub phi_xy: f64,
    #[serde(default)]
    pub phi_xx: f64,
    #[serde(default)]
    pub phi_yy: f64,
    /// sphere radius
    #[serde(default = "default_one")]
    pub radius: f64,
    /// skew3d: amplitude of the nonlinear part of the coordinate change
    #[serde(default = "default_skew_amp")]
    pub skew: f64,
    /// cone parameter when kind = "cone"
    #[serde(default)]
    pub a: Option<f64>,
}

fn default_one() -> f64 {
    1.0
}
fn default_skew_amp() -> f64 {
    0.15
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    /// "smooth_scalar" | "smooth_vector" | "radial_kink_vector" |
    /// "abs_vector" | "delta" | "delta_pair"
    pub kind: String,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default = "default_one")]
    pub amplitude: f64,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default)]
    pub plateau: f64,
    #[serde(default = "default_one")]
    pub amplitude: f64,
    /// Coefficient components (dual valence to the paired field);
    /// scalar when absent.
    #[serde(default)]
    pub coeff: Option<Vec<f64>>,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSection {
    #[serde(default = "default_rel")]
    pub rel: f64,
    #[serde(default = "default_abs")]
    pub abs: f64,
}

fn default_rel() -> f64 {
    0.02
}
fn default_abs() -> f64 {
    1e-6
}

impl Default for TolerancesSection {
    fn default() -> TolerancesSection {
        TolerancesSection {
            rel: default_rel(),
            abs: default_abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    #[serde(default = "default_slope_tol")]
    pub slope_tolerance: f64,
    #[serde(default = "default_residual_cutoff")]
    pub residual_cutoff: f64,
}

fn default_slope_tol() -> f64 {
    0.2
}
fn default_residual_cutoff() -> f64 {
    0.5
}

impl Default for ScalingSection {
    fn default() -> ScalingSection {
        ScalingSection {
            slope_tolerance: default_slope_tol(),
            residual_cutoff: default_residual_cutoff(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_axis: usize,
}

/// Finite probe corpus realizing the universally quantified predicates.
#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Canned kernel-difference perturbations (0..=2).
    #[serde(default)]
    pub kernel_perturbations: usize,
    /// Canned transport perturbations (0..=2).
    #[serde(default)]
    pub transport_perturbations: usize,
    /// Canned Lie directions fed to iterated derivatives (0..=2).
    #[serde(default)]
    pub lie_directions: usize,
    #[serde(default)]
    pub max_lie_order: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsSection {
    #[serde(default = "default_step_rule")]
    pub first: StepRule,
    #[serde(default = "default_step_rule")]
    pub second: StepRule,
    #[serde(default = "default_fd_order")]
    pub fd_order: usize,
}

fn default_step_rule() -> StepRule {
    StepRule::ProportionalToEps { factor: 0.35 }
}
fn default_fd_order() -> usize {
    2
}

impl Default for StepsSection {
    fn default() -> StepsSection {
        StepsSection {
            first: default_step_rule(),
            second: default_step_rule(),
            fd_order: default_fd_order(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    /// Member config paths, relative to this config's directory.
    pub configs: Vec<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExpectSection {
    /// Override the association target of a generic `associate` run.
    #[serde(default)]
    pub target: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub chart: ChartSection,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub choices: Vec<ChoiceSection>,
    #[serde(default)]
    pub cone: Option<ConeSection>,
    #[serde(default)]
    pub metric: Option<MetricSection>,
    #[serde(default)]
    pub field: Option<FieldSection>,
    #[serde(default)]
    pub densities: Vec<DensitySection>,
    #[serde(default)]
    pub region: Option<RegionSection>,
    #[serde(default)]
    pub tolerances: TolerancesSection,
    #[serde(default)]
    pub scaling: ScalingSection,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub steps: StepsSection,
    #[serde(default)]
    pub quad: Option<QuadConfig>,
    #[serde(default)]
    pub suite: Option<SuiteSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub expect: ExpectSection,
}

/// Net overrides passed on the command line; they participate in the hash.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub eps0: Option<f64>,
    pub ratio: Option<f64>,
    pub levels: Option<usize>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.eps0.is_none() && self.ratio.is_none() && self.levels.is_none()
    }
}

/// A parsed, validated config plus its provenance.
#[derive(Debug)]
pub struct LoadedConfig {
    pub config: Config,
    pub hash: String,
    pub dir: PathBuf,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<LoadedConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let canonical = raw.replace("\r\n", "\n");
    let mut config: Config = toml::from_str(&canonical).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;

    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    if let Some(eps0) = overrides.eps0 {
        config.net.eps0 = eps0;
        hasher.update(format!("\noverride:net.eps0={eps0:?}").as_bytes());
    }
    if let Some(ratio) = overrides.ratio {
        config.net.ratio = ratio;
        hasher.update(format!("\noverride:net.ratio={ratio:?}").as_bytes());
    }
    if let Some(levels) = overrides.levels {
        config.net.levels = levels;
        hasher.update(format!("\noverride:net.levels={levels}").as_bytes());
    }
    let hash = format!("{:x}", hasher.finalize());

    validate(&config)?;
    Ok(LoadedConfig {
        config,
        hash,
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

fn check_box(field: &str, lo: &[f64], hi: &[f64]) -> Result<(), ConfigError> {
    if lo.len() != hi.len() {
        return Err(invalid(field, "lo and hi lengths differ"));
    }
    if lo.is_empty() || lo.len() > 4 {
        return Err(invalid(field, "dimension must be 1..=4"));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(invalid(field, "needs lo < hi on every axis"));
    }
    Ok(())
}

fn validate(cfg: &Config) -> Result<(), ConfigError> {
    if cfg.schema_version != 1 {
        return Err(invalid(
            "schema_version",
            format!("unsupported version {} (expected 1)", cfg.schema_version),
        ));
    }
    if cfg.experiment.label.is_empty() {
        return Err(invalid("experiment.label", "must be nonempty"));
    }
    check_box("chart", &cfg.chart.lo, &cfg.chart.hi)?;
    if !(cfg.net.eps0 > 0.0) {
        return Err(invalid("net.eps0", "must be positive"));
    }
    if !(cfg.net.ratio > 0.0 && cfg.net.ratio < 1.0) {
        return Err(invalid("net.ratio", "must lie in (0, 1)"));
    }
    if cfg.net.levels < 2 {
        return Err(invalid("net.levels", "needs at least 2 levels"));
    }
    for (i, c) in cfg.choices.iter().enumerate() {
        let fname = format!("choices[{i}]");
        if c.label.is_empty() {
            return Err(invalid(&format!("{fname}.label"), "must be nonempty"));
        }
        if c.transport != "identity" && c.transport != "parallel" {
            return Err(invalid(
                &format!("{fname}.transport"),
                format!("unknown transport `{}` (identity|parallel)", c.transport),
            ));
        }
        if c.q > 6 {
            return Err(invalid(&format!("{fname}.q"), "moment order q must be <= 6"));
        }
        if c.q % 2 != 0 && c.skew != 0.0 {
            return Err(invalid(&format!("{fname}.skew"), "skew needs even q"));
        }
        if c.skew.abs() >= 1.0 {
            return Err(invalid(&format!("{fname}.skew"), "|skew| must be < 1"));
        }
    }
    if !(cfg.tolerances.rel > 0.0) || !(cfg.tolerances.abs > 0.0) {
        return Err(invalid("tolerances", "rel and abs must be positive"));
    }
    for (i, d) in cfg.densities.iter().enumerate() {
        let fname = format!("densities[{i}]");
        if d.center.len() != cfg.chart.lo.len() {
            return Err(invalid(
                &format!("{fname}.center"),
                "dimension mismatch with chart",
            ));
        }
        if !(d.radius > 0.0) || d.plateau < 0.0 || d.plateau >= d.radius {
            return Err(invalid(&format!("{fname}.radius"), "needs 0 <= plateau < radius"));
        }
    }
    if let Some(region) = &cfg.region {
        check_box("region", &region.lo, &region.hi)?;
        if region.points_per_axis < 2 {
            return Err(invalid("region.points_per_axis", "needs at least 2"));
        }
    }
    match cfg.experiment.kind {
        ExperimentKind::Cone => {
            let cone = cfg
                .cone
                .as_ref()
                .ok_or_else(|| invalid("cone", "missing [cone] table"))?;
            if !(cone.a > 0.0 && cone.a <= 1.0) {
                return Err(invalid("cone.a", "must lie in (0, 1]"));
            }
            if !(cone.r0_factor > 0.0) {
                return Err(invalid("cone.r0_factor", "must be positive"));
            }
            if let Some(d) = &cone.decay {
                if d.radii.is_empty() {
                    return Err(invalid("cone.decay.radii", "must be nonempty"));
                }
                if d.radii.iter().any(|r| !(*r > 0.0)) {
                    return Err(invalid("cone.decay.radii", "radii must be positive"));
                }
            }
            if cfg.chart.lo.len() != 2 {
                return Err(invalid("chart", "cone runs are two-dimensional"));
            }
            if cfg.choices.is_empty() {
                return Err(invalid("choices", "cone runs need at least one choice"));
            }
            if cfg.densities.is_empty() {
                return Err(invalid("densities", "cone runs need at least one density"));
            }
        }
        ExperimentKind::Compat => {
            let m = cfg
                .metric
                .as_ref()
                .ok_or_else(|| invalid("metric", "missing [metric] table"))?;
            let known = ["flat", "conformal", "sphere", "skew3d"];
            if !known.contains(&m.kind.as_str()) {
                return Err(invalid(
                    "metric.kind",
                    format!("unknown metric `{}` for compat", m.kind),
                ));
            }
            if cfg.choices.is_empty() {
                return Err(invalid("choices", "compat runs need at least one choice"));
            }
            if cfg.densities.is_empty() {
                return Err(invalid("densities", "compat runs need at least one density"));
            }
        }
        ExperimentKind::Commute => {
            if cfg.choices.is_empty() {
                return Err(invalid("choices", "commute runs need at least one choice"));
            }
            if cfg.densities.is_empty() {
                return Err(invalid("densities", "commute runs need at least one density"));
            }
        }
        ExperimentKind::Deltanet => {
            if cfg.choices.len() < 2 {
                return Err(invalid(
                    "choices",
                    "delta-net runs need at least two choices for the spread",
                ));
            }
            if cfg.densities.len() < 3 {
                return Err(invalid("densities", "delta-net runs need three densities"));
            }
        }
        ExperimentKind::Consistency | ExperimentKind::Exponents => {
            if cfg.region.is_none() {
                return Err(invalid("region", "scaling runs need a [region] table"));
            }
            if cfg.choices.is_empty() {
                return Err(invalid("choices", "scaling runs need at least one choice"));
            }
        }
        ExperimentKind::Embed => {
            if cfg.field.is_none() {
                return Err(invalid("field", "embed runs need a [field] table"));
            }
            if cfg.region.is_none() {
                return Err(invalid("region", "embed runs need a [region] table"));
            }
            if cfg.choices.is_empty() {
                return Err(invalid("choices", "embed runs need at least one choice"));
            }
        }
        ExperimentKind::Curvature => {
            if cfg.metric.is_none() {
                return Err(invalid("metric", "curvature runs need a [metric] table"));
            }
            if cfg.region.is_none() {
                return Err(invalid("region", "curvature runs need a [region] table"));
            }
            if cfg.choices.is_empty() {
                return Err(invalid("choices", "curvature runs need at least one choice"));
            }
        }
        ExperimentKind::Associate => {
            if cfg.field.is_none() {
                return Err(invalid("field", "associate runs need a [field] table"));
            }
            if cfg.choices.is_empty() {
                return Err(invalid("choices", "associate runs need at least one choice"));
            }
            if cfg.densities.is_empty() {
                return Err(invalid("densities", "associate runs need a density"));
            }
        }
        ExperimentKind::Suite => {
            let suite = cfg
                .suite
                .as_ref()
                .ok_or_else(|| invalid("suite", "missing [suite] table"))?;
            if suite.configs.is_empty() {
                return Err(invalid("suite.configs", "must list member configs"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "distgeo-config-test-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.toml");
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn minimal_cone_config_parses() {
        let path = write_temp(
            r#"
schema_version = 1
[experiment]
kind = "cone"
label = "t"
[net]
eps0 = 0.05
[cone]
a = 0.8
[[choices]]
label = "id-q0"
q = 0
[[densities]]
center = [0.0, 0.0]
radius = 0.5
"#,
        );
        let loaded = load(&path, &Overrides::default()).unwrap();
        assert_eq!(loaded.config.experiment.kind, ExperimentKind::Cone);
        assert_eq!(loaded.config.net.levels, 8);
        assert_eq!(loaded.hash.len(), 64);
    }

    #[test]
    fn missing_cone_table_names_the_field() {
        let path = write_temp(
            r#"
schema_version = 1
[experiment]
kind = "cone"
label = "t"
[[choices]]
label = "id-q0"
q = 0
[[densities]]
center = [0.0, 0.0]
radius = 0.5
"#,
        );
        let err = load(&path, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("`cone`"), "message: {err}");
    }

    #[test]
    fn overrides_change_the_hash() {
        let path = write_temp(
            r#"
schema_version = 1
[experiment]
kind = "consistency"
label = "t"
[region]
lo = [-0.4, -0.4]
hi = [0.4, 0.4]
points_per_axis = 5
[[choices]]
label = "id-q0"
q = 0
"#,
        );
        let a = load(&path, &Overrides::default()).unwrap();
        let b = load(
            &path,
            &Overrides {
                eps0: Some(0.04),
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(a.hash, b.hash);
        assert_eq!(b.config.net.eps0, 0.04);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let path = write_temp(
            r#"
schema_version = 1
[experiment]
kind = "cone"
label = "t"
typo_field = 1
"#,
        );
        let err = load(&path, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("typo_field"), "message: {err}");
    }
}
