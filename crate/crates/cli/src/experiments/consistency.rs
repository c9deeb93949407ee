//! Embedding consistency: for smooth fields the smoothing embedding and the
//! constant embedding differ negligibly. The sup norm of `iota(f) - sigma(f)`
//! over a compact grid must decay at least like `eps^(q+1)` for a kernel
//! with `q` vanishing moments.

use anyhow::{Context, Result};
use distgeo_core::{iota, scaling_exponent, EvalCtx, RoughTensorField, ScalingOptions};

use crate::config::Config;
use crate::record::RunRecord;
use crate::specs::{
    build_chart, build_choices, build_corpus, build_net, build_region, smooth_scalar_probe,
    smooth_vector_probe,
};

pub fn run(cfg: &Config, hash: &str) -> Result<RunRecord> {
    let chart = build_chart(&cfg.chart)?;
    let net = build_net(&cfg.net)?;
    let choices = build_choices(&chart, &cfg.choices)?;
    let region = build_region(cfg.region.as_ref().context("consistency experiments need a [region] table")?)?;
    let corpus = build_corpus(&chart, &cfg.corpus)?;
    let quad = cfg.quad.clone().unwrap_or_default();
    let opts = ScalingOptions {
        slope_tolerance: cfg.scaling.slope_tolerance,
        residual_cutoff: cfg.scaling.residual_cutoff,
    };
    let mut record = RunRecord::new(cfg.experiment.kind.name(), &cfg.experiment.label, hash);

    let scalar = smooth_scalar_probe(chart.clone(), 1.0);
    let vector = smooth_vector_probe(chart.clone(), 0.8);
    let probes = [
        ("scalar", iota(&RoughTensorField::from_smooth(&scalar)).add(&distgeo_core::sigma(&scalar).scale(-1.0))?),
        ("vector", iota(&RoughTensorField::from_smooth(&vector)).add(&distgeo_core::sigma(&vector).scale(-1.0))?),
    ];

    for (probe_name, diff) in &probes {
        for (choice, section) in choices.iter().zip(&cfg.choices) {
            let ctx0 = EvalCtx::new(choice.upsilon.clone(), choice.kernel.clone(), net.values()[0])
                .with_quad(quad.clone());
            let quantity = format!("embedding-error[{probe_name}][{}]", choice.label);
            let report = scaling_exponent(diff, &region, &corpus, &net, &ctx0, &quantity, &opts)
                .with_context(|| format!("measuring {quantity}"))?;
            let wanted = (section.q + 1) as f64;
            record.expect_at_least(
                &format!("{quantity}-slope"),
                report.fitted_slope,
                wanted - cfg.scaling.slope_tolerance,
                "sup|iota(f) - f| decays at least like eps^(q+1)",
            );
            let order_ok = matches!(
                report.verdict,
                distgeo_core::ScalingVerdict::NegligibleToOrder { order } if order >= (section.q + 1) as i64
            );
            record.expect_true(
                &format!("{quantity}-verdict"),
                order_ok,
                "scaling verdict certifies negligibility to order q+1",
            );
            record.scaling.push(report);
        }
    }

    record.finalize();
    Ok(record)
}
