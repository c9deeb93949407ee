//! Exponent suite: representative sup norms scale as the theory predicts.
//! An embedded planar point mass grows like `eps^-2`; the difference of the
//! two embeddings of a smooth field is negligible to order `q+1`; tensor
//! products of moderate members stay moderate.

use anyhow::{Context, Result};
use distgeo_core::{
    iota, scaling_exponent, sigma, tensor_product, Components, EvalCtx, Point, RoughTensorField,
    ScalingOptions, ScalingVerdict,
};

use crate::config::Config;
use crate::record::RunRecord;
use crate::specs::{
    build_chart, build_choices, build_corpus, build_net, build_region, smooth_scalar_probe,
    smooth_vector_probe,
};

pub fn run(cfg: &Config, hash: &str) -> Result<RunRecord> {
    let chart = build_chart(&cfg.chart)?;
    if chart.dim() != 2 {
        anyhow::bail!("the exponent corpus is calibrated for two dimensions");
    }
    let net = build_net(&cfg.net)?;
    let choices = build_choices(&chart, &cfg.choices)?;
    let region = build_region(cfg.region.as_ref().context("exponent experiments need a [region] table")?)?;
    let corpus = build_corpus(&chart, &cfg.corpus)?;
    let quad = cfg.quad.clone().unwrap_or_default();
    let opts = ScalingOptions {
        slope_tolerance: cfg.scaling.slope_tolerance,
        residual_cutoff: cfg.scaling.residual_cutoff,
    };
    let mut record = RunRecord::new(cfg.experiment.kind.name(), &cfg.experiment.label, hash);

    let ctx0 = EvalCtx::new(
        choices[0].upsilon.clone(),
        choices[0].kernel.clone(),
        net.values()[0],
    )
    .with_quad(quad.clone());

    // Point mass at the region midpoint so the grid sees its peak.
    let mid: Vec<f64> = region
        .lo
        .iter()
        .zip(&region.hi)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    if region.points_per_axis % 2 == 0 {
        record.warn("even points_per_axis: the grid misses the point-mass peak".to_string());
    }
    let p = Point::new(&mid);
    let rough_delta = RoughTensorField::delta(chart.clone(), p, Components::scalar(1.0))?;
    let delta = iota(&rough_delta);

    let report = scaling_exponent(&delta, &region, &corpus, &net, &ctx0, "point-mass", &opts)?;
    record.expect_close(
        "point-mass-slope",
        report.fitted_slope,
        -2.0,
        cfg.scaling.slope_tolerance,
        "planar point mass representatives grow like eps^-2",
    );
    record.expect_true(
        "point-mass-moderate",
        matches!(report.verdict, ScalingVerdict::Moderate { order } if order <= 2),
        "point mass is moderate of order two",
    );
    record.scaling.push(report);

    // Embedding difference per kernel order.
    let smooth = smooth_scalar_probe(chart.clone(), 1.0);
    let diff = iota(&RoughTensorField::from_smooth(&smooth)).add(&sigma(&smooth).scale(-1.0))?;
    for (choice, section) in choices.iter().zip(&cfg.choices) {
        let ctx = EvalCtx::new(choice.upsilon.clone(), choice.kernel.clone(), net.values()[0])
            .with_quad(quad.clone());
        let quantity = format!("embedding-difference[{}]", choice.label);
        let report = scaling_exponent(&diff, &region, &corpus, &net, &ctx, &quantity, &opts)?;
        let order_ok = matches!(
            report.verdict,
            ScalingVerdict::NegligibleToOrder { order } if order >= (section.q + 1) as i64
        );
        record.expect_true(
            &format!("{quantity}-negligible"),
            order_ok,
            "iota - sigma of a smooth field is negligible to order q+1",
        );
        record.scaling.push(report);
    }

    // Products of moderate members stay moderate.
    let witness = smooth_vector_probe(chart.clone(), 0.7);
    let moderate_smooth = iota(&RoughTensorField::from_smooth(&witness));
    let product = tensor_product(&delta, &moderate_smooth)?;
    let report = scaling_exponent(&product, &region, &corpus, &net, &ctx0, "product-mass-smooth", &opts)?;
    record.expect_true(
        "product-mass-smooth-moderate",
        matches!(report.verdict, ScalingVerdict::Moderate { .. }),
        "point mass times a smooth embedding stays moderate",
    );
    record.scaling.push(report);

    let square = tensor_product(&delta, &delta)?;
    let report = scaling_exponent(&square, &region, &corpus, &net, &ctx0, "product-mass-mass", &opts)?;
    record.expect_true(
        "product-mass-mass-moderate",
        matches!(report.verdict, ScalingVerdict::Moderate { .. }),
        "the squared point mass stays moderate",
    );
    record.expect_close(
        "product-mass-mass-slope",
        report.fitted_slope,
        -4.0,
        2.0 * cfg.scaling.slope_tolerance,
        "squared point mass grows like eps^-4",
    );
    record.scaling.push(report);

    record.finalize();
    Ok(record)
}
