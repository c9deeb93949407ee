//! Cone curvature experiment: regularize the cone metric `g = c_flat δ +
//! c_m m(θ)` with deficit parameter `A`, compute distributional scalar
//! curvature, and check that density-weighted pairings converge to
//! `4π(1−A)·ψ(apex)` — the Gauss–Bonnet mass of the conical singularity.
//! Optionally fits the two-regime decay profile of the pointwise curvature:
//! `eps^-2` inside the smoothing scale, `eps^1 · r^-3` outside it.

use std::f64::consts::PI;

use anyhow::{Context, Result};
use distgeo_core::{
    associate, curvature, decay_profile, levi_civita, AssocTolerance, BackgroundConnection,
    CurvatureScheme, DecayOptions, EpsNet, EvalCtx, GeneralizedMetric, QuadConfig, Valence,
};

use crate::config::Config;
use crate::experiments::{allowance, warn_failures};
use crate::record::RunRecord;
use crate::specs::{build_chart, build_choices, build_density, build_net, cone_metric_field};

pub fn run(cfg: &Config, hash: &str) -> Result<RunRecord> {
    let cone = cfg.cone.as_ref().context("cone experiments need a [cone] table")?;
    let chart = build_chart(&cfg.chart)?;
    let net = build_net(&cfg.net)?;
    let choices = build_choices(&chart, &cfg.choices)?;
    let quad = cfg.quad.clone().unwrap_or_default();
    let mut record = RunRecord::new(cfg.experiment.kind.name(), &cfg.experiment.label, hash);

    let (metric_field, apex) = cone_metric_field(chart.clone(), cone.a)?;
    let metric = GeneralizedMetric::new(metric_field)?;
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
    let paired = if cone.plain_density {
        bundle.scalar_field()
    } else {
        bundle.scalar_density_field()
    };

    let mass = 4.0 * PI * (1.0 - cone.a);
    let tol = AssocTolerance {
        rel: cfg.tolerances.rel,
        abs: cfg.tolerances.abs,
    };

    for (i, section) in cfg.densities.iter().enumerate() {
        let psi = build_density(chart.clone(), section, Valence::SCALAR, &format!("psi{i}"))?;
        let target = mass * psi.eval(&apex).scalar_value();
        let quantity = format!("cone-curvature[{}]", psi.label);
        let summary = associate(&paired, &psi, Some(target), &choices, &net, &quad, tol, &quantity)
            .with_context(|| format!("pairing {quantity}"))?;
        warn_failures(&mut record, &summary);

        let bound = allowance(tol, target);
        for rep in &summary.per_choice {
            record.expect_close(
                &format!("{quantity}[{}]", rep.choice),
                rep.extrapolated_limit,
                target,
                bound,
                "extrapolated pairing vs 4*pi*(1-A)*psi(apex)",
            );
        }
        if choices.len() > 1 {
            let limits: Vec<f64> = summary
                .per_choice
                .iter()
                .filter_map(|r| r.extrapolated_limit)
                .collect();
            let name = format!("cone-choice-spread[{}]", psi.label);
            if limits.len() == summary.per_choice.len() {
                let lo = limits.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = limits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let spread_bound = cone.choice_spread_rel * target.abs().max(tol.abs);
                record.expect_at_most(
                    &name,
                    Some(hi - lo),
                    spread_bound,
                    "per-choice limits agree under kernel and transport swaps",
                );
            } else {
                record.expect_true(&name, false, "some choices produced no limit");
            }
        }
        record.associations.push(summary);
    }

    if let Some(decay) = &cone.decay {
        run_decay(cone, decay, &bundle, &apex, &choices, &quad, &mut record)?;
    }

    record.finalize();
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn run_decay(
    cone: &crate::config::ConeSection,
    decay: &crate::config::DecaySection,
    bundle: &distgeo_core::CurvatureBundle,
    apex: &distgeo_core::Point,
    choices: &[distgeo_core::PairingChoice],
    quad: &QuadConfig,
    record: &mut RunRecord,
) -> Result<()> {
    let decay_net = EpsNet::new(decay.eps0, decay.ratio, decay.levels)?;
    let ctx0 = EvalCtx::new(
        choices[0].upsilon.clone(),
        choices[0].kernel.clone(),
        decay.eps0,
    )
    .with_quad(quad.clone());
    let opts = DecayOptions {
        r0: cone.r0_factor,
        angles: decay.angles,
        noise_floor_rel: 1e-9,
    };
    let report = decay_profile(
        &bundle.scalar_field(),
        apex,
        &decay.radii,
        &decay_net,
        &ctx0,
        &opts,
        &format!("cone-decay[A={}]", cone.a),
    )
    .context("fitting the curvature decay profile")?;

    let tol = decay.exponent_tolerance;
    record.expect_close(
        "decay-inner-eps-exponent",
        report.inner.eps_exponent,
        -2.0,
        tol,
        "curvature inside the smoothing scale grows like eps^-2",
    );
    record.expect_close(
        "decay-outer-eps-exponent",
        report.outer.eps_exponent,
        1.0,
        tol,
        "curvature outside the smoothing scale decays like eps^1",
    );
    record.expect_close(
        "decay-outer-radius-exponent",
        report.outer.radius_exponent,
        -3.0,
        tol,
        "curvature outside the smoothing scale decays like r^-3",
    );
    if report.inner.sparse || report.outer.sparse {
        record.warn(format!(
            "decay fit sparse (inner: {}, outer: {}); widen the radius or eps range",
            report.inner.sparse, report.outer.sparse
        ));
    }
    for s in &report.r0_sensitivity {
        record.warn(format!(
            "r0={}: exponents inner eps {:?}, outer eps {:?}, outer r {:?}",
            s.r0, s.inner_eps_exponent, s.outer_eps_exponent, s.outer_radius_exponent
        ));
    }
    record.decay.push(report);
    Ok(())
}
