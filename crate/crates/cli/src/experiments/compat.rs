//! Curvature compatibility: the distributional curvature of an embedded
//! smooth metric must agree with classical curvature. Metrics with
//! closed-form curvature are paired component-by-component against symbolic
//! targets; flat metrics in disguise must drive every Einstein pairing to
//! zero at rate `eps^1`, with terminal values far below the local curvature
//! scale `sup|dΓ| + sup|Γ|²`.

use anyhow::{bail, Context, Result};
use distgeo_core::{
    associate, curvature, fit_log_slope, levi_civita, AssocTolerance, AssociationVerdict,
    BackgroundConnection, CurvatureBundle, CurvatureScheme, EvalCtx, GeneralizedMetric,
    PairingChoice, Point, QuadConfig, Valence,
};

use crate::config::Config;
use crate::experiments::{allowance, warn_failures};
use crate::oracle::{component_density, weighted_profile_integral};
use crate::record::RunRecord;
use crate::specs::{build_chart, build_choices, build_density, build_net, BuiltMetric};

pub fn run(cfg: &Config, hash: &str) -> Result<RunRecord> {
    let section = cfg.metric.as_ref().context("compat experiments need a [metric] table")?;
    let chart = build_chart(&cfg.chart)?;
    let net = build_net(&cfg.net)?;
    let choices = build_choices(&chart, &cfg.choices)?;
    let quad = cfg.quad.clone().unwrap_or_default();
    let mut record = RunRecord::new(cfg.experiment.kind.name(), &cfg.experiment.label, hash);

    let built = crate::specs::build_metric(&chart, section)?;
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

    if built.vacuum && chart.dim() == 3 {
        run_vacuum(cfg, &built, &bundle, &choices, &quad, &net, &mut record)?;
    } else {
        run_oracle(cfg, &built, &bundle, &choices, &quad, &net, &mut record)?;
    }

    record.finalize();
    Ok(record)
}

/// Pair scalar curvature (and two Ricci components) against closed forms.
fn run_oracle(
    cfg: &Config,
    built: &BuiltMetric,
    bundle: &CurvatureBundle,
    choices: &[PairingChoice],
    quad: &QuadConfig,
    net: &distgeo_core::EpsNet,
    record: &mut RunRecord,
) -> Result<()> {
    let chart = bundle.conn.metric.field.chart.clone();
    let scalar_oracle = built
        .scalar_oracle
        .as_ref()
        .context("this metric has no closed-form curvature to compare against")?;
    let tol = AssocTolerance {
        rel: cfg.tolerances.rel,
        abs: cfg.tolerances.abs,
    };
    let scalar_field = bundle.scalar_field();

    for (i, section) in cfg.densities.iter().enumerate() {
        let psi = build_density(chart.clone(), section, Valence::SCALAR, &format!("psi{i}"))?;
        let target = weighted_profile_integral(&psi, |x| scalar_oracle(x));
        let quantity = format!("scalar-curvature[{}][{}]", built.label, psi.label);
        let summary = associate(
            &scalar_field,
            &psi,
            Some(target),
            choices,
            net,
            quad,
            tol,
            &quantity,
        )?;
        warn_failures(record, &summary);
        let bound = allowance(tol, target);
        for rep in &summary.per_choice {
            record.expect_close(
                &format!("{quantity}[{}]", rep.choice),
                rep.extrapolated_limit,
                target,
                bound,
                "extrapolated pairing vs the symbolic curvature integral",
            );
        }
        record.associations.push(summary);
    }

    if let Some(ricci_oracle) = &built.ricci_oracle {
        let ricci_field = bundle.ricci_field();
        let section = cfg
            .densities
            .first()
            .context("compat experiments need at least one density")?;
        let base = build_density(chart.clone(), section, Valence::SCALAR, "psi0")?;
        for (a, b) in [(0usize, 0usize), (0, 1)] {
            let label = format!("{}-ric{a}{b}", base.label);
            let psi = component_density(&base, a, b, &label)?;
            let target = weighted_profile_integral(&psi, |x| ricci_oracle(x).get(&[a, b]));
            let quantity = format!("ricci[{}][{a}{b}]", built.label);
            let summary = associate(
                &ricci_field,
                &psi,
                Some(target),
                choices,
                net,
                quad,
                tol,
                &quantity,
            )?;
            warn_failures(record, &summary);
            let bound = allowance(tol, target);
            for rep in &summary.per_choice {
                record.expect_close(
                    &format!("{quantity}[{}]", rep.choice),
                    rep.extrapolated_limit,
                    target,
                    bound,
                    "extrapolated pairing vs the symbolic Ricci integral",
                );
            }
            record.associations.push(summary);
        }
    }
    Ok(())
}

/// Flat metric in disguise: every Einstein pairing must converge to zero at
/// rate at least `eps^1`, terminating below 1e-4 of the curvature scale.
fn run_vacuum(
    cfg: &Config,
    built: &BuiltMetric,
    bundle: &CurvatureBundle,
    choices: &[PairingChoice],
    quad: &QuadConfig,
    net: &distgeo_core::EpsNet,
    record: &mut RunRecord,
) -> Result<()> {
    let chart = bundle.conn.metric.field.chart.clone();
    if cfg.densities.is_empty() {
        bail!("compat experiments need at least one density");
    }

    // Curvature scale of the regularized connection at the coarsest eps,
    // maximized over the density centers: the yardstick for "zero".
    let ctx0 = EvalCtx::new(
        choices[0].upsilon.clone(),
        choices[0].kernel.clone(),
        net.values()[0],
    )
    .with_quad(quad.clone());
    let rep0 = bundle.representative(&ctx0)?;
    let mut scale: f64 = 0.0;
    for section in &cfg.densities {
        let center = Point::new(&section.center);
        scale = scale.max(rep0.scale_estimate(&center)?);
    }
    record.expect_at_least(
        "curvature-scale",
        Some(scale),
        1e-12,
        "connection scale sup|dGamma| + sup|Gamma|^2 at the density centers",
    );
    let bound = 1e-4 * scale;
    let tol = AssocTolerance {
        rel: cfg.tolerances.rel,
        abs: bound.max(cfg.tolerances.abs),
    };

    let einstein_field = bundle.einstein_field();
    let components = [(0usize, 0usize), (0, 1), (1, 2)];
    for (i, section) in cfg.densities.iter().enumerate() {
        let base = build_density(chart.clone(), section, Valence::SCALAR, &format!("psi{i}"))?;
        let (a, b) = components[i % components.len()];
        let psi = component_density(&base, a, b, &format!("{}-G{a}{b}", base.label))?;
        let quantity = format!("einstein[{}][G{a}{b}][{}]", built.label, base.label);
        let summary = associate(
            &einstein_field,
            &psi,
            Some(0.0),
            choices,
            net,
            quad,
            tol,
            &quantity,
        )?;
        warn_failures(record, &summary);
        for rep in &summary.per_choice {
            record.expect_true(
                &format!("{quantity}[{}]", rep.choice),
                rep.verdict == AssociationVerdict::Associated,
                "Einstein pairings of a flat metric converge to zero",
            );
            let terminal = rep.pairings.last().map(|s| s.value.abs());
            record.expect_at_most(
                &format!("{quantity}[{}]-terminal", rep.choice),
                terminal,
                bound,
                "terminal pairing below 1e-4 of the curvature scale",
            );
            // Slope of |pairing| against eps directly: decay toward zero,
            // not toward the extrapolated limit.
            let samples: Vec<(f64, f64)> =
                rep.pairings.iter().map(|s| (s.eps, s.value.abs())).collect();
            let slope = fit_log_slope(&samples).map(|f| f.slope);
            record.expect_at_least(
                &format!("{quantity}[{}]-slope", rep.choice),
                slope,
                1.0,
                "Einstein pairings decay at least like eps^1",
            );
        }
        record.associations.push(summary);
    }
    Ok(())
}
