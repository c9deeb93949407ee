//! Run records and report writers.
//!
//! A `RunRecord` collects everything one experiment produced: the config
//! hash, the expectation outcomes that decide pass/fail, and the full
//! asymptotics reports. Serialization is deterministic — struct field order,
//! ordered vectors, no timestamps — so identical configs yield bit-identical
//! JSON. Wall-clock time is kept on the record for console display but never
//! serialized.

use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use distgeo_core::{AssociationSummary, DecayProfileReport, ScalingReport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct ExpectationOutcome {
    pub name: String,
    /// Measured value, when the expectation is numeric.
    pub observed: Option<f64>,
    /// Value the measurement is compared against.
    pub target: Option<f64>,
    /// Allowed absolute deviation (or bound for one-sided checks).
    pub bound: Option<f64>,
    pub pass: bool,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct EqualityCheck {
    pub name: String,
    pub eps: f64,
    pub sup_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridRow {
    pub series: String,
    pub eps: f64,
    pub coords: Vec<f64>,
    pub index: String,
    pub value: f64,
}

#[derive(Serialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub experiment: String,
    pub label: String,
    pub config_hash: String,
    pub pass: bool,
    pub expectations: Vec<ExpectationOutcome>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scaling: Vec<ScalingReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub associations: Vec<AssociationSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub decay: Vec<DecayProfileReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub equalities: Vec<EqualityCheck>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grid_rows: Vec<GridRow>,
    #[serde(skip)]
    pub wall_secs: f64,
}

impl RunRecord {
    pub fn new(experiment: &str, label: &str, config_hash: &str) -> RunRecord {
        RunRecord {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.to_string(),
            label: label.to_string(),
            config_hash: config_hash.to_string(),
            pass: false,
            expectations: Vec::new(),
            warnings: Vec::new(),
            scaling: Vec::new(),
            associations: Vec::new(),
            decay: Vec::new(),
            equalities: Vec::new(),
            grid_rows: Vec::new(),
            wall_secs: 0.0,
        }
    }

    /// |observed - target| <= bound.
    pub fn expect_close(
        &mut self,
        name: &str,
        observed: Option<f64>,
        target: f64,
        bound: f64,
        note: &str,
    ) {
        let pass = observed.map_or(false, |v| v.is_finite() && (v - target).abs() <= bound);
        self.expectations.push(ExpectationOutcome {
            name: name.to_string(),
            observed,
            target: Some(target),
            bound: Some(bound),
            pass,
            note: note.to_string(),
        });
    }

    /// observed <= bound.
    pub fn expect_at_most(&mut self, name: &str, observed: Option<f64>, bound: f64, note: &str) {
        let pass = observed.map_or(false, |v| v.is_finite() && v <= bound);
        self.expectations.push(ExpectationOutcome {
            name: name.to_string(),
            observed,
            target: None,
            bound: Some(bound),
            pass,
            note: note.to_string(),
        });
    }

    /// observed >= bound.
    pub fn expect_at_least(&mut self, name: &str, observed: Option<f64>, bound: f64, note: &str) {
        let pass = observed.map_or(false, |v| v.is_finite() && v >= bound);
        self.expectations.push(ExpectationOutcome {
            name: name.to_string(),
            observed,
            target: None,
            bound: Some(bound),
            pass,
            note: note.to_string(),
        });
    }

    pub fn expect_true(&mut self, name: &str, pass: bool, note: &str) {
        self.expectations.push(ExpectationOutcome {
            name: name.to_string(),
            observed: None,
            target: None,
            bound: None,
            pass,
            note: note.to_string(),
        });
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    /// Recompute the overall verdict; grid dumps with no expectations pass.
    pub fn finalize(&mut self) {
        self.pass = self.expectations.iter().all(|e| e.pass);
    }
}

#[derive(Serialize)]
pub struct SuiteMember {
    pub label: String,
    pub experiment: String,
    pub config_hash: String,
    pub pass: bool,
    pub report: String,
}

#[derive(Serialize)]
pub struct SuiteRecord {
    pub schema_version: u32,
    pub label: String,
    pub config_hash: String,
    pub members: Vec<SuiteMember>,
    pub pass: bool,
}

// ---------------------------------------------------------------------------
// writers

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
    Both,
}

impl OutputFormat {
    pub fn parse(s: Option<&str>) -> Result<OutputFormat, String> {
        match s {
            None => Ok(OutputFormat::Both),
            Some("json") => Ok(OutputFormat::Json),
            Some("csv") => Ok(OutputFormat::Csv),
            Some(other) => Err(format!("unknown format `{other}` (json|csv)")),
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization");
    text.push('\n');
    std::fs::write(path, text)
}

fn push_csv_row(out: &mut String, fields: &[&str]) {
    let mut first = true;
    for f in fields {
        if !first {
            out.push(',');
        }
        first = false;
        if f.contains(',') || f.contains('"') {
            out.push('"');
            out.push_str(&f.replace('"', "\"\""));
            out.push('"');
        } else {
            out.push_str(f);
        }
    }
    out.push('\n');
}

fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v:?}").unwrap();
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Per-scale sample table: `series,kind,eps,aux,value`.
/// kinds: pairing (aux = choice), spread, sup_norm (aux = probe), decay
/// (aux = radius).
pub fn samples_csv(record: &RunRecord) -> String {
    let mut out = String::from("series,kind,eps,aux,value\n");
    for summary in &record.associations {
        for choice in &summary.per_choice {
            for s in &choice.pairings {
                push_csv_row(
                    &mut out,
                    &[
                        &summary.quantity,
                        "pairing",
                        &fmt_f64(s.eps),
                        &choice.choice,
                        &fmt_f64(s.value),
                    ],
                );
            }
        }
        for s in &summary.spread_by_eps {
            push_csv_row(
                &mut out,
                &[&summary.quantity, "spread", &fmt_f64(s.eps), "", &fmt_f64(s.value)],
            );
        }
    }
    for report in &record.scaling {
        for s in &report.sup_norms {
            push_csv_row(
                &mut out,
                &[&report.quantity, "sup_norm", &fmt_f64(s.eps), "", &fmt_f64(s.value)],
            );
        }
    }
    for report in &record.decay {
        for s in &report.samples {
            push_csv_row(
                &mut out,
                &[
                    &report.quantity,
                    "decay",
                    &fmt_f64(s.eps),
                    &fmt_f64(s.r),
                    &fmt_f64(s.value),
                ],
            );
        }
    }
    out
}

/// Verdict table: `name,observed,target,bound,pass,note` plus fitted slopes.
pub fn summary_csv(record: &RunRecord) -> String {
    let mut out = String::from("name,observed,target,bound,pass,note\n");
    for e in &record.expectations {
        push_csv_row(
            &mut out,
            &[
                &e.name,
                &fmt_opt(e.observed),
                &fmt_opt(e.target),
                &fmt_opt(e.bound),
                if e.pass { "true" } else { "false" },
                &e.note,
            ],
        );
    }
    for report in &record.scaling {
        push_csv_row(
            &mut out,
            &[
                &format!("slope[{}]", report.quantity),
                &report.fitted_slope.map_or(String::new(), fmt_f64),
                "",
                "",
                "",
                &format!("{:?}", report.verdict),
            ],
        );
    }
    for summary in &record.associations {
        for choice in &summary.per_choice {
            push_csv_row(
                &mut out,
                &[
                    &format!("limit[{}][{}]", summary.quantity, choice.choice),
                    &fmt_opt(choice.extrapolated_limit),
                    &fmt_opt(choice.target),
                    &fmt_opt(choice.slope),
                    "",
                    &format!("{:?}", choice.verdict),
                ],
            );
        }
    }
    out
}

/// Grid dump: `series,eps,index,x0,x1,x2,x3,value` (unused axes blank).
pub fn grid_csv(record: &RunRecord) -> String {
    let mut out = String::from("series,eps,index,x0,x1,x2,x3,value\n");
    for row in &record.grid_rows {
        let mut coords = [String::new(), String::new(), String::new(), String::new()];
        for (i, c) in row.coords.iter().enumerate().take(4) {
            coords[i] = fmt_f64(*c);
        }
        push_csv_row(
            &mut out,
            &[
                &row.series,
                &fmt_f64(row.eps),
                &row.index,
                &coords[0],
                &coords[1],
                &coords[2],
                &coords[3],
                &fmt_f64(row.value),
            ],
        );
    }
    out
}

/// Write a record's reports under `dir`, returning the written paths.
pub fn write_record(
    dir: &Path,
    record: &RunRecord,
    format: OutputFormat,
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if format != OutputFormat::Csv {
        let path = dir.join(format!("{}.json", record.label));
        write_json(&path, record)?;
        written.push(path);
    }
    if format != OutputFormat::Json {
        let path = dir.join(format!("{}.samples.csv", record.label));
        std::fs::write(&path, samples_csv(record))?;
        written.push(path);
        let path = dir.join(format!("{}.summary.csv", record.label));
        std::fs::write(&path, summary_csv(record))?;
        written.push(path);
        if !record.grid_rows.is_empty() {
            let path = dir.join(format!("{}.grid.csv", record.label));
            std::fs::write(&path, grid_csv(record))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectations_drive_the_verdict() {
        let mut r = RunRecord::new("t", "t", "h");
        r.expect_close("a", Some(1.0), 1.0005, 1e-2, "");
        r.finalize();
        assert!(r.pass);
        r.expect_at_most("b", Some(2.0), 1.0, "");
        r.finalize();
        assert!(!r.pass);
        r.expectations.pop();
        r.expect_at_least("c", Some(2.0), 1.0, "");
        r.expect_true("d", true, "");
        r.finalize();
        assert!(r.pass);
    }

    #[test]
    fn csv_escapes_commas_and_quotes() {
        let mut out = String::new();
        push_csv_row(&mut out, &["a,b", "c\"d", "e"]);
        assert_eq!(out, "\"a,b\",\"c\"\"d\",e\n");
    }

    #[test]
    fn missing_observations_fail_closed() {
        let mut r = RunRecord::new("t", "t", "h");
        r.expect_close("a", None, 1.0, 1e-2, "");
        r.expect_at_least("b", Some(f64::NAN), 0.0, "");
        r.finalize();
        assert!(!r.pass);
        assert!(r.expectations.iter().all(|e| !e.pass));
    }
}
