//! Grid-dump and generic association drivers behind the `embed`,
//! `curvature`, and `associate` subcommands: evaluate representatives over a
//! sampling grid per scale (plot-ready CSV), or associate a configured field
//! against configured densities with an independently integrated target.

use anyhow::{bail, Context, Result};
use distgeo_core::{
    associate, curvature, levi_civita, AssocTolerance, BackgroundConnection, CurvatureScheme,
    EvalCtx, GeneralizedMetric,
};

use crate::config::Config;
use crate::experiments::{allowance, expect_associated, warn_failures};
use crate::oracle::{abs_pairing, delta_pairing, radial_kink_pairing, smooth_pairing};
use crate::record::{GridRow, RunRecord};
use crate::specs::{
    build_chart, build_choices, build_density, build_field, build_metric, build_net, build_region,
    FieldOracle,
};

fn multi_index_label(comps: &distgeo_core::Components, flat: usize) -> String {
    let rank = comps.valence.rank();
    if rank == 0 {
        return String::new();
    }
    let mut idx = [0usize; 8];
    comps.decode(flat, &mut idx[..rank]);
    idx[..rank].iter().map(|i| i.to_string()).collect()
}

/// Dump the smoothed representatives of an embedded field over a grid.
pub fn run_embed(cfg: &Config, hash: &str) -> Result<RunRecord> {
    let chart = build_chart(&cfg.chart)?;
    let net = build_net(&cfg.net)?;
    let choices = build_choices(&chart, &cfg.choices)?;
    let region = build_region(cfg.region.as_ref().context("embed experiments need a [region] table")?)?;
    let quad = cfg.quad.clone().unwrap_or_default();
    let section = cfg.field.as_ref().context("embed experiments need a [field] table")?;
    let built = build_field(&chart, section)?;
    let mut record = RunRecord::new(cfg.experiment.kind.name(), &cfg.experiment.label, hash);

    let grid = region.grid();
    for &eps in &net.values() {
        let ctx = EvalCtx::new(choices[0].upsilon.clone(), choices[0].kernel.clone(), eps)
            .with_quad(quad.clone());
        let rep = built.field.eval(&ctx)?;
        let mut skipped = 0usize;
        for p in &grid {
            match rep.eval(p) {
                Ok(comps) => {
                    for flat in 0..comps.len() {
                        record.grid_rows.push(GridRow {
                            series: format!("embed[{}]", section.kind),
                            eps,
                            coords: p.coords().to_vec(),
                            index: multi_index_label(&comps, flat),
                            value: comps.as_slice()[flat],
                        });
                    }
                }
                Err(_) => skipped += 1,
            }
        }
        if skipped > 0 {
            record.warn(format!(
                "eps {eps:.6}: {skipped} grid points skipped (supports leave the chart)"
            ));
        }
    }
    record.finalize();
    Ok(record)
}

/// Dump pointwise curvature of a regularized metric over a grid.
pub fn run_curvature(cfg: &Config, hash: &str) -> Result<RunRecord> {
    let chart = build_chart(&cfg.chart)?;
    let net = build_net(&cfg.net)?;
    let choices = build_choices(&chart, &cfg.choices)?;
    let region = build_region(cfg.region.as_ref().context("curvature experiments need a [region] table")?)?;
    let quad = cfg.quad.clone().unwrap_or_default();
    let section = cfg.metric.as_ref().context("curvature experiments need a [metric] table")?;
    let built = build_metric(&chart, section)?;
    let mut record = RunRecord::new(cfg.experiment.kind.name(), &cfg.experiment.label, hash);

    let metric = GeneralizedMetric::new(built.field.clone())?;
    let background = BackgroundConnection::flat(chart.clone());
    let conn = levi_civita(&metric, &background)
        .with_step(cfg.steps.first)
        .with_order(cfg.steps.fd_order);
    let scheme = CurvatureScheme {
        first: cfg.steps.first,
        second: cfg.steps.second,
        order: cfg.steps.fd_order,
    };
    let bundle = curvature(&conn, scheme);

    let grid = region.grid();
    let dim = chart.dim();
    for &eps in &net.values() {
        let ctx = EvalCtx::new(choices[0].upsilon.clone(), choices[0].kernel.clone(), eps)
            .with_quad(quad.clone());
        let rep = bundle.representative(&ctx)?;
        let mut skipped = 0usize;
        for p in &grid {
            match rep.point(p) {
                Ok(cp) => {
                    let coords = p.coords().to_vec();
                    let series = format!("curvature[{}]", built.label);
                    record.grid_rows.push(GridRow {
                        series: series.clone(),
                        eps,
                        coords: coords.clone(),
                        index: "R".into(),
                        value: cp.scalar,
                    });
                    record.grid_rows.push(GridRow {
                        series: series.clone(),
                        eps,
                        coords: coords.clone(),
                        index: "det".into(),
                        value: cp.det,
                    });
                    for a in 0..dim {
                        for b in 0..dim {
                            record.grid_rows.push(GridRow {
                                series: series.clone(),
                                eps,
                                coords: coords.clone(),
                                index: format!("ric{a}{b}"),
                                value: cp.ricci.get(&[a, b]),
                            });
                        }
                    }
                    if let Some(oracle) = &built.scalar_oracle {
                        record.grid_rows.push(GridRow {
                            series: format!("curvature-error[{}]", built.label),
                            eps,
                            coords,
                            index: "R".into(),
                            value: (cp.scalar - oracle(p)).abs(),
                        });
                    }
                }
                Err(_) => skipped += 1,
            }
        }
        if skipped > 0 {
            record.warn(format!(
                "eps {eps:.6}: {skipped} grid points skipped (margins or degenerate metric)"
            ));
        }
    }
    record.finalize();
    Ok(record)
}

/// Associate a configured field against the configured densities.
pub fn run_associate(cfg: &Config, hash: &str) -> Result<RunRecord> {
    let chart = build_chart(&cfg.chart)?;
    let net = build_net(&cfg.net)?;
    let choices = build_choices(&chart, &cfg.choices)?;
    let quad = cfg.quad.clone().unwrap_or_default();
    let section = cfg.field.as_ref().context("associate experiments need a [field] table")?;
    let built = build_field(&chart, section)?;
    let tol = AssocTolerance {
        rel: cfg.tolerances.rel,
        abs: cfg.tolerances.abs,
    };
    let mut record = RunRecord::new(cfg.experiment.kind.name(), &cfg.experiment.label, hash);
    if cfg.densities.is_empty() {
        bail!("associate experiments need at least one density");
    }

    for (i, density) in cfg.densities.iter().enumerate() {
        let psi = build_density(
            chart.clone(),
            density,
            built.valence.dual(),
            &format!("psi{i}"),
        )?;
        // An explicit expectation overrides the integrated oracle: useful
        // for probing how far a limit sits from a hypothesis.
        let target = match cfg.expect.target {
            Some(t) => t,
            None => match &built.oracle {
                FieldOracle::Smooth(tensor) => smooth_pairing(&psi, tensor)?,
                FieldOracle::RadialKink {
                    center,
                    direction,
                    amplitude,
                } => radial_kink_pairing(&psi, center, direction, *amplitude)?,
                FieldOracle::AbsVector { amplitude } => abs_pairing(&psi, *amplitude)?,
                FieldOracle::Deltas { points, weights } => delta_pairing(&psi, points, weights),
            },
        };
        let quantity = format!("pairing[{}][{}]", section.kind, psi.label);
        let summary = associate(
            &built.field,
            &psi,
            Some(target),
            &choices,
            &net,
            &quad,
            tol,
            &quantity,
        )?;
        warn_failures(&mut record, &summary);
        expect_associated(&mut record, &summary, "pairings converge to the oracle target");
        let bound = allowance(tol, target);
        for rep in &summary.per_choice {
            record.expect_close(
                &format!("{quantity}[{}]-limit", rep.choice),
                rep.extrapolated_limit,
                target,
                bound,
                "extrapolated limit vs the oracle target",
            );
        }
        record.associations.push(summary);
    }
    record.finalize();
    Ok(record)
}
