//! Numerical realization of the quotient predicates: scaling exponents for
//! moderateness and negligibility, association limits, and two-regime decay
//! profiles.
//!
//! The definitions quantify over all compacts, perturbations, and derivative
//! strings; here each verdict is relative to an explicit finite probe corpus
//! and a geometric net of scales, and the reports say exactly what was
//! sampled. Everything is deterministic: fixed grids, fixed reduction
//! order, no randomness.

use crate::calculus::lie_derivative_rep;
use crate::chart::{Point, SmoothVectorField, TestDensity};
use crate::embed::{pair, EvalCtx, GeneralizedField, QuadConfig};
use crate::error::{Error, Result};
use crate::kernels::{EpsNet, KernelPerturbation, SmoothingKernelFamily};
use crate::transport::{TransportOperator, TransportPerturbation};
use serde::Serialize;

/// One measured value at one smoothing scale.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpsSample {
    pub eps: f64,
    pub value: f64,
}

/// Least-squares line through `(log10 eps, log10 value)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation of a point from the fitted line, in
    /// log10 units.
    pub max_residual: f64,
}

/// Fits `log10 value ~ intercept + slope * log10 eps`, dropping samples
/// with nonpositive value or scale. Needs two surviving points.
pub fn fit_log_slope(samples: &[(f64, f64)]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(e, v)| *e > 0.0 && *v > 0.0)
        .map(|(e, v)| (e.log10(), v.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = pts
        .iter()
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Some(SlopeFit {
        slope,
        intercept,
        max_residual,
    })
}

/// Accelerated limit of a geometrically sampled net.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Extrapolation {
    pub limit: f64,
    /// Convergence order detected from consecutive difference ratios;
    /// absent when the tail is exactly constant or the ratios are unusable
    /// (first order is then assumed for the correction).
    pub order: Option<f64>,
    /// Spread between the estimates from the last two value pairs; zero
    /// when only one pair is available only if the correction itself is.
    pub uncertainty: f64,
}

/// Richardson extrapolation for `v_k = L + C * ratio^(p k) + ...` with the
/// scales shrinking geometrically by `ratio` per level.
pub fn extrapolate_geometric(values: &[f64], ratio: f64) -> Option<Extrapolation> {
    let n = values.len();
    if n < 2 || !(ratio > 0.0 && ratio < 1.0) {
        return None;
    }
    let diffs: Vec<f64> = (0..n - 1).map(|k| values[k + 1] - values[k]).collect();
    let d_last = diffs[n - 2];
    if d_last.abs() < 1e-300 {
        return Some(Extrapolation {
            limit: values[n - 1],
            order: None,
            uncertainty: 0.0,
        });
    }
    let mut order = None;
    if n >= 3 {
        let d_prev = diffs[n - 3];
        let rho = d_last / d_prev;
        if rho.is_finite() && rho > 0.0 && rho < 1.0 {
            let p = rho.ln() / ratio.ln();
            order = Some(p.clamp(0.3, 8.0));
        }
    }
    let p = order.unwrap_or(1.0);
    let q = ratio.powf(p);
    let corr = d_last * q / (1.0 - q);
    let limit = values[n - 1] + corr;
    let uncertainty = if n >= 3 {
        let prev_limit = values[n - 2] + diffs[n - 3] * q / (1.0 - q);
        (limit - prev_limit).abs()
    } else {
        corr.abs()
    };
    Some(Extrapolation {
        limit,
        order,
        uncertainty,
    })
}

// ---------------------------------------------------------------------------
// scaling exponents

/// Sup norms below this are treated as exactly zero families; their verdict
/// is capped at the order the floating-point budget can distinguish.
const VANISH_FLOOR: f64 = 1e-130;
const VANISH_ORDER: i64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingVerdict {
    /// Sup norms grow at most like `eps^-order` (slope >= -order - tol).
    Moderate { order: u32 },
    /// Sup norms decay at least like `eps^order` (slope >= order - tol).
    NegligibleToOrder { order: i64 },
    Inconclusive,
}

/// Sampling region: an axis box with a uniform grid.
#[derive(Clone, Debug, Serialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_axis: usize,
}

impl Region {
    pub fn new(lo: &[f64], hi: &[f64], points_per_axis: usize) -> Result<Region> {
        if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| a >= b) {
            return Err(Error::invalid("region needs lo < hi per axis"));
        }
        if points_per_axis == 0 {
            return Err(Error::invalid("region needs at least one grid point"));
        }
        Ok(Region {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            points_per_axis,
        })
    }

    pub fn grid(&self) -> Vec<Point> {
        let counts = vec![self.points_per_axis; self.lo.len()];
        crate::chart::grid_points(&self.lo, &self.hi, &counts)
    }
}

/// The finite set of probe directions a scaling verdict is relative to.
/// Expressions tested: ordinary Lie-derivative strings (length up to
/// `max_lie_order`) applied to representatives of `d1^j d2^k T` with
/// j, k <= 1 ranging over the listed perturbations.
#[derive(Clone, Default)]
pub struct ProbeCorpus {
    pub transport_perturbations: Vec<TransportPerturbation>,
    pub kernel_perturbations: Vec<KernelPerturbation>,
    pub lie_directions: Vec<SmoothVectorField>,
    pub max_lie_order: usize,
}

impl ProbeCorpus {
    /// Only the bare field, no derivatives or differentials.
    pub fn bare() -> ProbeCorpus {
        ProbeCorpus::default()
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScalingOptions {
    /// Slack on slope comparisons when picking the verdict order.
    pub slope_tolerance: f64,
    /// Fits with larger max log10 deviation are inconclusive.
    pub residual_cutoff: f64,
}

impl Default for ScalingOptions {
    fn default() -> ScalingOptions {
        ScalingOptions {
            slope_tolerance: 0.2,
            residual_cutoff: 0.5,
        }
    }
}

/// Per-probe diagnostic: its own slope and largest sup over the net.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeBreakdown {
    pub probe: String,
    pub slope: Option<f64>,
    pub max_sup: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub quantity: String,
    pub eps_values: EpsNet,
    /// Per scale: sup over the region grid and over every corpus probe.
    pub sup_norms: Vec<EpsSample>,
    pub fitted_slope: Option<f64>,
    pub residual: f64,
    pub verdict: ScalingVerdict,
    pub probes: Vec<ProbeBreakdown>,
    pub options: ScalingOptions,
}

fn verdict_from_slope(
    fit: &Option<SlopeFit>,
    vanishes: bool,
    opts: &ScalingOptions,
) -> ScalingVerdict {
    if vanishes {
        return ScalingVerdict::NegligibleToOrder {
            order: VANISH_ORDER,
        };
    }
    let Some(fit) = fit else {
        return ScalingVerdict::Inconclusive;
    };
    if fit.max_residual > opts.residual_cutoff {
        return ScalingVerdict::Inconclusive;
    }
    let m = (fit.slope + opts.slope_tolerance).floor() as i64;
    if m >= 1 {
        ScalingVerdict::NegligibleToOrder { order: m }
    } else {
        let n = (-fit.slope - opts.slope_tolerance).ceil().max(0.0) as u32;
        ScalingVerdict::Moderate { order: n }
    }
}

/// Measures sup norms of the corpus expressions over a geometric net and
/// classifies the growth rate. The verdict is a statement about the sampled
/// corpus only; see the corpus and options fields of the report.
pub fn scaling_exponent(
    t: &GeneralizedField,
    region: &Region,
    corpus: &ProbeCorpus,
    net: &EpsNet,
    ctx0: &EvalCtx,
    quantity: &str,
    opts: &ScalingOptions,
) -> Result<ScalingReport> {
    let grid = region.grid();
    let margin = net.eps0 * (t.chart.dim() as f64).sqrt();
    for x in &grid {
        t.chart.require_margin(x, margin)?;
    }

    // Derived fields d1^j d2^k T, j,k <= 1, plus the Lie strings applied to
    // their representatives scale by scale.
    struct Probe {
        label: String,
        field: GeneralizedField,
        lie: Vec<SmoothVectorField>,
    }
    let mut derived: Vec<(String, GeneralizedField)> = vec![(String::new(), t.clone())];
    for (i, p) in corpus.transport_perturbations.iter().enumerate() {
        derived.push((format!("d1[{i}]"), t.d1(p)?));
    }
    let base_len = derived.len();
    for (i, p) in corpus.kernel_perturbations.iter().enumerate() {
        for b in 0..base_len {
            let (name, f) = (derived[b].0.clone(), derived[b].1.d2(p)?);
            derived.push((format!("{name}d2[{i}]"), f));
        }
    }
    let mut lie_strings: Vec<Vec<SmoothVectorField>> = vec![Vec::new()];
    if corpus.max_lie_order >= 1 {
        for x in &corpus.lie_directions {
            lie_strings.push(vec![x.clone()]);
        }
    }
    if corpus.max_lie_order >= 2 {
        for x in &corpus.lie_directions {
            for y in &corpus.lie_directions {
                lie_strings.push(vec![x.clone(), y.clone()]);
            }
        }
    }
    let mut probes: Vec<Probe> = Vec::new();
    for (name, f) in &derived {
        for ls in &lie_strings {
            let lie_part = ls
                .iter()
                .map(|x| format!("L[{}]", x.label))
                .collect::<String>();
            let label = if name.is_empty() && lie_part.is_empty() {
                "id".to_string()
            } else {
                format!("{lie_part}{name}")
            };
            probes.push(Probe {
                label,
                field: f.clone(),
                lie: ls.clone(),
            });
        }
    }

    let eps_list = net.values();
    let mut sup_norms = Vec::with_capacity(eps_list.len());
    let mut per_probe: Vec<Vec<f64>> = vec![Vec::new(); probes.len()];
    for &eps in &eps_list {
        let ctx = ctx0.at_eps(eps);
        let mut level_sup: f64 = 0.0;
        for (pi, probe) in probes.iter().enumerate() {
            let mut rep = probe.field.eval(&ctx)?;
            for x_dir in &probe.lie {
                rep = lie_derivative_rep(&rep, x_dir, None);
            }
            let mut sup: f64 = 0.0;
            for x in &grid {
                let v = rep.eval(x)?;
                if !v.is_finite() {
                    return Err(Error::IntegrationPoisoned {
                        point: x.coords().to_vec(),
                    });
                }
                sup = sup.max(v.sup_norm());
            }
            per_probe[pi].push(sup);
            level_sup = level_sup.max(sup);
        }
        sup_norms.push(EpsSample {
            eps,
            value: level_sup,
        });
    }

    let pairs: Vec<(f64, f64)> = sup_norms.iter().map(|s| (s.eps, s.value)).collect();
    let fit = fit_log_slope(&pairs);
    let vanishes = sup_norms.iter().all(|s| s.value < VANISH_FLOOR);
    let verdict = verdict_from_slope(&fit, vanishes, opts);
    let probes_out = probes
        .iter()
        .zip(&per_probe)
        .map(|(p, sups)| {
            let pairs: Vec<(f64, f64)> =
                eps_list.iter().copied().zip(sups.iter().copied()).collect();
            ProbeBreakdown {
                probe: p.label.clone(),
                slope: fit_log_slope(&pairs).map(|f| f.slope),
                max_sup: sups.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(ScalingReport {
        quantity: quantity.to_string(),
        eps_values: net.clone(),
        sup_norms,
        fitted_slope: fit.as_ref().map(|f| f.slope),
        residual: fit.as_ref().map_or(0.0, |f| f.max_residual),
        verdict,
        probes: probes_out,
        options: *opts,
    })
}

// ---------------------------------------------------------------------------
// association

/// One admissible (transport, kernel) selection for a pairing run.
#[derive(Clone)]
pub struct PairingChoice {
    pub label: String,
    pub upsilon: TransportOperator,
    pub kernel: SmoothingKernelFamily,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AssocTolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for AssocTolerance {
    fn default() -> AssocTolerance {
        AssocTolerance {
            rel: 0.02,
            abs: 1e-6,
        }
    }
}

impl AssocTolerance {
    fn allowance(&self, target: f64) -> f64 {
        self.abs.max(self.rel * target.abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationVerdict {
    Associated,
    NotAssociated,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct PairingFailure {
    pub eps: f64,
    pub message: String,
}

/// Pairing trace for one (transport, kernel) choice.
#[derive(Clone, Debug, Serialize)]
pub struct AssociationReport {
    pub quantity: String,
    pub choice: String,
    pub pairings: Vec<EpsSample>,
    pub failures: Vec<PairingFailure>,
    pub extrapolated_limit: Option<f64>,
    pub extrapolation_order: Option<f64>,
    pub extrapolation_uncertainty: Option<f64>,
    /// Convergence rate of |pairing - limit|; absent when the tail already
    /// sits at the limit to roundoff.
    pub slope: Option<f64>,
    pub target: Option<f64>,
    pub verdict: AssociationVerdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssociationSummary {
    pub quantity: String,
    pub target: Option<f64>,
    pub tolerance: AssocTolerance,
    pub per_choice: Vec<AssociationReport>,
    /// max - min of the pairings across choices, at scales where every
    /// choice succeeded.
    pub spread_by_eps: Vec<EpsSample>,
    /// Whether the spread is nonincreasing over the last four levels.
    pub spread_monotone_tail: bool,
    pub verdict: AssociationVerdict,
}

fn choice_verdict(
    limit: Option<f64>,
    converged: bool,
    target: Option<f64>,
    tol: &AssocTolerance,
) -> AssociationVerdict {
    let Some(limit) = limit else {
        return AssociationVerdict::Inconclusive;
    };
    match target {
        Some(tg) => {
            let ok = (limit - tg).abs() <= tol.allowance(tg);
            if !converged {
                AssociationVerdict::Inconclusive
            } else if ok {
                AssociationVerdict::Associated
            } else {
                AssociationVerdict::NotAssociated
            }
        }
        None => {
            if converged {
                AssociationVerdict::Associated
            } else {
                AssociationVerdict::Inconclusive
            }
        }
    }
}

/// Runs the pairing net for each choice, extrapolates the limits, compares
/// to the target when given, and reports the cross-choice spread.
/// Quadrature failures at individual scales are recorded and skipped.
pub fn associate(
    t: &GeneralizedField,
    psi: &TestDensity,
    target: Option<f64>,
    choices: &[PairingChoice],
    net: &EpsNet,
    quad: &QuadConfig,
    tol: AssocTolerance,
    quantity: &str,
) -> Result<AssociationSummary> {
    if choices.is_empty() {
        return Err(Error::invalid("association needs at least one choice"));
    }
    let eps_list = net.values();
    let mut per_choice = Vec::with_capacity(choices.len());
    // pairing value per (choice, level), NaN marking failures
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(choices.len());
    for choice in choices {
        let mut pairings = Vec::new();
        let mut failures = Vec::new();
        let mut row = Vec::with_capacity(eps_list.len());
        for &eps in &eps_list {
            let ctx = EvalCtx::new(choice.upsilon.clone(), choice.kernel.clone(), eps)
                .with_quad(quad.clone());
            match pair(t, &ctx, psi) {
                Ok(v) if v.is_finite() => {
                    pairings.push(EpsSample { eps, value: v });
                    row.push(v);
                }
                Ok(v) => {
                    failures.push(PairingFailure {
                        eps,
                        message: format!("non-finite pairing {v}"),
                    });
                    row.push(f64::NAN);
                }
                Err(e) => {
                    failures.push(PairingFailure {
                        eps,
                        message: e.to_string(),
                    });
                    row.push(f64::NAN);
                }
            }
        }
        // extrapolate on the longest trailing run of consecutive successes,
        // so the geometric spacing assumption holds
        let mut tail = Vec::new();
        for &v in row.iter().rev() {
            if v.is_nan() {
                break;
            }
            tail.push(v);
        }
        tail.reverse();
        let extrap = extrapolate_geometric(&tail, net.ratio);
        let limit = extrap.as_ref().map(|e| e.limit);
        let (slope, converged) = match limit {
            Some(l) => {
                let scale = tail.iter().fold(l.abs().max(1.0), |m, v| m.max(v.abs()));
                let devs: Vec<(f64, f64)> = pairings
                    .iter()
                    .map(|s| (s.eps, (s.value - l).abs()))
                    .collect();
                let fit = fit_log_slope(&devs);
                let tail_exact = tail.len() >= 2
                    && tail[tail.len() - 2..]
                        .iter()
                        .all(|v| (v - l).abs() <= 1e-10 * scale);
                let converged = tail_exact || fit.as_ref().map_or(false, |f| f.slope > 0.05);
                (fit.map(|f| f.slope), converged)
            }
            None => (None, false),
        };
        per_choice.push(AssociationReport {
            quantity: quantity.to_string(),
            choice: choice.label.clone(),
            pairings,
            failures,
            extrapolated_limit: limit,
            extrapolation_order: extrap.as_ref().and_then(|e| e.order),
            extrapolation_uncertainty: extrap.as_ref().map(|e| e.uncertainty),
            slope,
            target,
            verdict: choice_verdict(limit, converged, target, &tol),
        });
        table.push(row);
    }

    let mut spread_by_eps = Vec::new();
    for (k, &eps) in eps_list.iter().enumerate() {
        let col: Vec<f64> = table.iter().map(|row| row[k]).collect();
        if col.iter().any(|v| v.is_nan()) {
            continue;
        }
        let max = col.iter().copied().fold(f64::MIN, f64::max);
        let min = col.iter().copied().fold(f64::MAX, f64::min);
        spread_by_eps.push(EpsSample {
            eps,
            value: max - min,
        });
    }
    let tail_len = spread_by_eps.len().min(4);
    let tail = &spread_by_eps[spread_by_eps.len() - tail_len..];
    let scale = spread_by_eps
        .iter()
        .map(|s| s.value)
        .fold(1e-30, f64::max);
    let spread_monotone_tail = tail_len >= 2
        && tail
            .windows(2)
            .all(|w| w[1].value <= w[0].value + 1e-9 * scale);

    let verdict = if per_choice
        .iter()
        .all(|r| r.verdict == AssociationVerdict::Associated)
    {
        AssociationVerdict::Associated
    } else if per_choice
        .iter()
        .any(|r| r.verdict == AssociationVerdict::NotAssociated)
    {
        AssociationVerdict::NotAssociated
    } else {
        AssociationVerdict::Inconclusive
    };
    Ok(AssociationSummary {
        quantity: quantity.to_string(),
        target,
        tolerance: tol,
        per_choice,
        spread_by_eps,
        spread_monotone_tail,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// decay profiles

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecaySample {
    pub eps: f64,
    pub r: f64,
    /// Largest |value| over the sampled circle.
    pub value: f64,
}

/// Power-law fit `value ~ 10^c * eps^alpha * r^beta` over one regime.
#[derive(Clone, Debug, Serialize)]
pub struct RegimeFit {
    pub name: String,
    pub samples: usize,
    /// Too few usable samples, or degenerate regressors; fit absent.
    pub sparse: bool,
    pub amplitude_log10: Option<f64>,
    pub eps_exponent: Option<f64>,
    pub radius_exponent: Option<f64>,
    pub max_residual: Option<f64>,
    pub max_abs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct R0Sensitivity {
    pub r0: f64,
    pub inner_eps_exponent: Option<f64>,
    pub outer_eps_exponent: Option<f64>,
    pub outer_radius_exponent: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayProfileReport {
    pub quantity: String,
    /// Regime boundary: inner is r < eps * r0.
    pub r0: f64,
    pub samples: Vec<DecaySample>,
    pub skipped: usize,
    pub inner: RegimeFit,
    pub outer: RegimeFit,
    pub r0_sensitivity: Vec<R0Sensitivity>,
}

#[derive(Clone, Copy, Debug)]
pub struct DecayOptions {
    /// Regime boundary in units of eps; default twice the kernel support.
    pub r0: f64,
    /// Sample count per circle.
    pub angles: usize,
    /// Samples below this fraction of the global max are dropped from fits.
    pub noise_floor_rel: f64,
}

impl Default for DecayOptions {
    fn default() -> DecayOptions {
        DecayOptions {
            r0: 2.0,
            angles: 8,
            noise_floor_rel: 1e-9,
        }
    }
}

fn fit_regime(name: &str, pts: &[DecaySample], floor: f64) -> RegimeFit {
    let max_abs = pts.iter().map(|s| s.value).fold(0.0, f64::max);
    let usable: Vec<&DecaySample> = pts.iter().filter(|s| s.value > floor).collect();
    let mut distinct_eps: Vec<f64> = usable.iter().map(|s| s.eps).collect();
    distinct_eps.sort_by(f64::total_cmp);
    distinct_eps.dedup();
    let mut distinct_r: Vec<f64> = usable.iter().map(|s| s.r).collect();
    distinct_r.sort_by(f64::total_cmp);
    distinct_r.dedup();
    if usable.len() < 4 || distinct_eps.len() < 2 || distinct_r.len() < 2 {
        return RegimeFit {
            name: name.to_string(),
            samples: pts.len(),
            sparse: true,
            amplitude_log10: None,
            eps_exponent: None,
            radius_exponent: None,
            max_residual: None,
            max_abs,
        };
    }
    // centered two-regressor least squares in log10 coordinates
    let n = usable.len() as f64;
    let (mut mx, mut my, mut mv) = (0.0, 0.0, 0.0);
    for s in &usable {
        mx += s.eps.log10();
        my += s.r.log10();
        mv += s.value.log10();
    }
    mx /= n;
    my /= n;
    mv /= n;
    let (mut sxx, mut syy, mut sxy, mut sxv, mut syv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in &usable {
        let x = s.eps.log10() - mx;
        let y = s.r.log10() - my;
        let v = s.value.log10() - mv;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        sxv += x * v;
        syv += y * v;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() <= 1e-12 * (sxx * syy).max(1e-300) {
        return RegimeFit {
            name: name.to_string(),
            samples: pts.len(),
            sparse: true,
            amplitude_log10: None,
            eps_exponent: None,
            radius_exponent: None,
            max_residual: None,
            max_abs,
        };
    }
    let alpha = (syy * sxv - sxy * syv) / det;
    let beta = (sxx * syv - sxy * sxv) / det;
    let c = mv - alpha * mx - beta * my;
    let max_residual = usable
        .iter()
        .map(|s| (s.value.log10() - c - alpha * s.eps.log10() - beta * s.r.log10()).abs())
        .fold(0.0, f64::max);
    RegimeFit {
        name: name.to_string(),
        samples: pts.len(),
        sparse: false,
        amplitude_log10: Some(c),
        eps_exponent: Some(alpha),
        radius_exponent: Some(beta),
        max_residual: Some(max_residual),
        max_abs,
    }
}

fn split_and_fit(samples: &[DecaySample], r0: f64, floor: f64) -> (RegimeFit, RegimeFit) {
    let inner: Vec<DecaySample> = samples
        .iter()
        .filter(|s| s.r < s.eps * r0)
        .copied()
        .collect();
    let outer: Vec<DecaySample> = samples
        .iter()
        .filter(|s| s.r >= s.eps * r0)
        .copied()
        .collect();
    (
        fit_regime("inner", &inner, floor),
        fit_regime("outer", &outer, floor),
    )
}

/// Samples |T| on circles around a center across the net and fits the
/// two-regime power model split at `r = eps * r0`. Two-dimensional charts
/// only. Points that cannot be evaluated (margins, excluded) are skipped
/// and counted, never fatal.
pub fn decay_profile(
    t: &GeneralizedField,
    center: &Point,
    radii: &[f64],
    net: &EpsNet,
    ctx0: &EvalCtx,
    opts: &DecayOptions,
    quantity: &str,
) -> Result<DecayProfileReport> {
    if t.valence.rank() != 0 {
        return Err(Error::invalid("decay profiles need a scalar field"));
    }
    if t.chart.dim() != 2 {
        return Err(Error::invalid("decay profiles are two-dimensional"));
    }
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::invalid("radii must be positive"));
    }
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for eps in net.values() {
        let rep = t.eval(&ctx0.at_eps(eps))?;
        for &r in radii {
            let mut sup: f64 = 0.0;
            let mut seen = false;
            for k in 0..opts.angles {
                let th = std::f64::consts::TAU * (k as f64 + 0.5) / opts.angles as f64;
                let x = Point::new(&[center.get(0) + r * th.cos(), center.get(1) + r * th.sin()]);
                match rep.eval(&x) {
                    Ok(v) if v.is_finite() => {
                        sup = sup.max(v.scalar_value().abs());
                        seen = true;
                    }
                    _ => skipped += 1,
                }
            }
            if seen {
                samples.push(DecaySample {
                    eps,
                    r,
                    value: sup,
                });
            }
        }
    }
    let global_max = samples.iter().map(|s| s.value).fold(0.0, f64::max);
    let floor = opts.noise_floor_rel * global_max;
    let (inner, outer) = split_and_fit(&samples, opts.r0, floor);
    let mut r0_sensitivity = Vec::new();
    for r0 in [0.5 * opts.r0, opts.r0, 2.0 * opts.r0] {
        let (i, o) = split_and_fit(&samples, r0, floor);
        r0_sensitivity.push(R0Sensitivity {
            r0,
            inner_eps_exponent: i.eps_exponent,
            outer_eps_exponent: o.eps_exponent,
            outer_radius_exponent: o.radius_exponent,
        });
    }
    Ok(DecayProfileReport {
        quantity: quantity.to_string(),
        r0: opts.r0,
        samples,
        skipped,
        inner,
        outer,
        r0_sensitivity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{Chart, Components, SmoothnessClass, TensorField, Valence};
    use proptest::prelude::*;
    use crate::embed::{iota, sigma, RoughTensorField};
    use crate::kernels::MollifierProfile;
    use crate::quadrature::integrate_box;
    use std::sync::Arc;

    fn chart() -> Arc<Chart> {
        Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap())
    }

    fn ctx(q: u32) -> EvalCtx {
        let c = chart();
        let fam = SmoothingKernelFamily::new(c.clone(), MollifierProfile::make(q, 0.0).unwrap());
        EvalCtx::new(TransportOperator::identity(c), fam, 0.1)
    }

    #[test]
    fn slope_fit_recovers_exact_power_laws() {
        let samples: Vec<(f64, f64)> = (0..6)
            .map(|k| {
                let e = 0.4 * 0.6f64.powi(k);
                (e, 3.2 * e.powf(2.5))
            })
            .collect();
        let fit = fit_log_slope(&samples).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-10, "{}", fit.slope);
        assert!((fit.intercept - 3.2f64.log10()).abs() < 1e-10);
        assert!(fit.max_residual < 1e-12);
    }

    #[test]
    fn slope_fit_drops_nonpositive_samples() {
        let fit = fit_log_slope(&[(0.1, 1.0), (0.05, 0.5), (0.025, 0.0)]).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!(fit_log_slope(&[(0.1, 1.0), (0.05, 0.0)]).is_none());
        assert!(fit_log_slope(&[]).is_none());
    }

    #[test]
    fn geometric_extrapolation_recovers_limit_and_order() {
        let ratio: f64 = 0.5;
        let values: Vec<f64> = (0..6)
            .map(|k| 1.7 + 0.3 * ratio.powi(2 * k))
            .collect();
        let e = extrapolate_geometric(&values, ratio).unwrap();
        assert!((e.limit - 1.7).abs() < 1e-10, "{}", e.limit);
        assert!((e.order.unwrap() - 2.0).abs() < 1e-6);
        assert!(e.uncertainty < 1e-6);
    }

    #[test]
    fn extrapolation_of_a_constant_tail_is_the_value() {
        let e = extrapolate_geometric(&[2.0, 2.0, 2.0], 0.5).unwrap();
        assert_eq!(e.limit, 2.0);
        assert_eq!(e.uncertainty, 0.0);
        assert!(extrapolate_geometric(&[1.0], 0.5).is_none());
    }

    fn region() -> Region {
        Region::new(&[-0.04, -0.04], &[0.04, 0.04], 5).unwrap()
    }

    #[test]
    fn constant_embeddings_are_moderate_of_order_zero() {
        let c = chart();
        let f = TensorField::scalar_closed_form(c, |x| 1.5 + x[0] * x[1]);
        let net = EpsNet::new(0.1, 0.7, 6).unwrap();
        let report = scaling_exponent(
            &sigma(&f),
            &region(),
            &ProbeCorpus::bare(),
            &net,
            &ctx(0),
            "sigma(f)",
            &ScalingOptions::default(),
        )
        .unwrap();
        let slope = report.fitted_slope.unwrap();
        assert!(slope.abs() < 0.05, "{slope}");
        assert_eq!(report.verdict, ScalingVerdict::Moderate { order: 0 });
    }

    #[test]
    fn embedded_point_mass_scales_like_the_kernel() {
        // the grid contains the origin, where the sup is exactly the kernel
        // peak eps^-2 * P(0)^2; slope -2 to high accuracy
        let c = chart();
        let delta =
            RoughTensorField::delta(c, Point::new(&[0.0, 0.0]), Components::scalar(1.0)).unwrap();
        let net = EpsNet::new(0.1, 0.7, 8).unwrap();
        let report = scaling_exponent(
            &iota(&delta),
            &region(),
            &ProbeCorpus::bare(),
            &net,
            &ctx(0),
            "iota(delta)",
            &ScalingOptions::default(),
        )
        .unwrap();
        let slope = report.fitted_slope.unwrap();
        assert!((slope + 2.0).abs() < 0.05, "{slope}");
        assert_eq!(report.verdict, ScalingVerdict::Moderate { order: 2 });
    }

    #[test]
    fn smoothing_error_of_smooth_fields_is_negligible_to_kernel_order() {
        // (iota - sigma) f with a q = 2 kernel decays at least like eps^3
        let c = chart();
        let f = TensorField::scalar_closed_form(c, |x| (x[0] + x[1]).sin());
        let diff = iota(&RoughTensorField::from_smooth(&f))
            .add(&sigma(&f).scale(-1.0))
            .unwrap();
        let net = EpsNet::new(0.2, 0.75, 6).unwrap();
        let small = Region::new(&[-0.3, -0.3], &[0.3, 0.3], 3).unwrap();
        let report = scaling_exponent(
            &diff,
            &small,
            &ProbeCorpus::bare(),
            &net,
            &ctx(2),
            "(iota-sigma)(f)",
            &ScalingOptions::default(),
        )
        .unwrap();
        let slope = report.fitted_slope.unwrap();
        assert!(slope >= 3.0, "{slope}");
        match report.verdict {
            ScalingVerdict::NegligibleToOrder { order } => assert!(order >= 3, "{order}"),
            v => panic!("unexpected verdict {v:?}"),
        }
    }

    #[test]
    fn adding_a_negligible_field_keeps_the_verdict() {
        let c = chart();
        let g = TensorField::scalar_closed_form(c.clone(), |x| 2.0 + x[0]);
        let f = TensorField::scalar_closed_form(c, |x| (x[0] + x[1]).sin());
        let small_region = Region::new(&[-0.3, -0.3], &[0.3, 0.3], 3).unwrap();
        let net = EpsNet::new(0.2, 0.75, 6).unwrap();
        let base = sigma(&g);
        let noise = iota(&RoughTensorField::from_smooth(&f))
            .add(&sigma(&f).scale(-1.0))
            .unwrap();
        let opts = ScalingOptions::default();
        let a = scaling_exponent(&base, &small_region, &ProbeCorpus::bare(), &net, &ctx(2), "g", &opts)
            .unwrap();
        let b = scaling_exponent(
            &base.add(&noise).unwrap(),
            &small_region,
            &ProbeCorpus::bare(),
            &net,
            &ctx(2),
            "g+n",
            &opts,
        )
        .unwrap();
        assert_eq!(a.verdict, b.verdict);
    }

    #[test]
    fn corpus_probes_run_and_reports_are_deterministic() {
        let c = chart();
        let v = TensorField::new(
            c.clone(),
            Valence::new(1, 0),
            SmoothnessClass::ClosedForm,
            |x| {
                Ok(Components::from_slice(
                    Valence::new(1, 0),
                    2,
                    &[x.get(0) * x.get(1), x.get(1)],
                ))
            },
        );
        let corpus = ProbeCorpus {
            transport_perturbations: vec![TransportPerturbation::custom(
                c.clone(),
                "skew",
                |x, y| {
                    let mut m = crate::chart::SquareMatrix::zero(2);
                    m.set(0, 1, x.get(0) - y.get(0));
                    m.set(1, 0, 0.5 * (x.get(1) - y.get(1)));
                    Ok(m)
                },
            )],
            kernel_perturbations: vec![KernelPerturbation::difference(
                &SmoothingKernelFamily::new(c.clone(), MollifierProfile::make(0, 0.0).unwrap()),
                &SmoothingKernelFamily::new(c.clone(), MollifierProfile::make(0, 0.5).unwrap()),
            )],
            lie_directions: vec![SmoothVectorField::constant(c, &[1.0, -0.5])],
            max_lie_order: 2,
        };
        let net = EpsNet::new(0.15, 0.7, 4).unwrap();
        let small_region = Region::new(&[-0.2, -0.2], &[0.2, 0.2], 3).unwrap();
        let run = || {
            scaling_exponent(
                &iota(&RoughTensorField::from_smooth(&v)),
                &small_region,
                &corpus,
                &net,
                &ctx(0),
                "iota(v)",
                &ScalingOptions::default(),
            )
            .unwrap()
        };
        let a = run();
        // bare, d1, d2, d1 d2, each with 1 + 1 + 1 lie strings
        assert_eq!(a.probes.len(), 4 * 3);
        assert!(matches!(a.verdict, ScalingVerdict::Moderate { .. }));
        let b = run();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    fn bump(c: Arc<Chart>) -> TestDensity {
        TestDensity::scalar_bump(c, &[0.1, -0.05], 0.5, 1.0, "psi").unwrap()
    }

    #[test]
    fn point_mass_pairings_hit_the_density_value() {
        let c = chart();
        let p = Point::new(&[0.1, 0.0]);
        let delta =
            RoughTensorField::delta(c.clone(), p, Components::scalar(1.0)).unwrap();
        let psi = bump(c.clone());
        let target = psi.profile(&p);
        let choices = vec![PairingChoice {
            label: "identity/q0".into(),
            upsilon: TransportOperator::identity(c.clone()),
            kernel: SmoothingKernelFamily::new(c, MollifierProfile::make(0, 0.0).unwrap()),
        }];
        let net = EpsNet::new(0.05, 0.7, 5).unwrap();
        let summary = associate(
            &iota(&delta),
            &psi,
            Some(target),
            &choices,
            &net,
            &QuadConfig::default(),
            AssocTolerance {
                rel: 1e-4,
                abs: 1e-8,
            },
            "iota(delta) . psi",
        )
        .unwrap();
        assert_eq!(summary.verdict, AssociationVerdict::Associated, "{summary:?}");
        let r = &summary.per_choice[0];
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        // <iota(delta_p), psi> mollifies psi at p with the reflected kernel:
        // off by the symmetric second-moment term, so O(eps^2) per scale.
        for s in &r.pairings {
            assert!(
                (s.value - target).abs() < 5.0 * s.eps * s.eps,
                "{} at {}",
                s.value,
                s.eps
            );
        }
    }

    #[test]
    fn continuous_fields_pair_to_their_integral() {
        let c = chart();
        let f = TensorField::scalar_closed_form(c.clone(), |x| 1.0 + 0.5 * x[0] - 0.3 * x[1] * x[1]);
        let psi = bump(c.clone());
        let f2 = f.clone();
        let psi2 = psi.clone();
        let target = integrate_box(&[-1.0, -1.0], &[1.0, 1.0], &[12, 12], 10, |x| {
            let p = Point::new(x);
            f2.eval(&p).unwrap().scalar_value() * psi2.profile(&p)
        });
        let choices = vec![
            PairingChoice {
                label: "identity/q0".into(),
                upsilon: TransportOperator::identity(c.clone()),
                kernel: SmoothingKernelFamily::new(
                    c.clone(),
                    MollifierProfile::make(0, 0.0).unwrap(),
                ),
            },
            PairingChoice {
                label: "identity/q2".into(),
                upsilon: TransportOperator::identity(c.clone()),
                kernel: SmoothingKernelFamily::new(c, MollifierProfile::make(2, 0.0).unwrap()),
            },
        ];
        let net = EpsNet::new(0.1, 0.6, 5).unwrap();
        let summary = associate(
            &iota(&RoughTensorField::from_smooth(&f)),
            &psi,
            Some(target),
            &choices,
            &net,
            &QuadConfig::default(),
            AssocTolerance {
                rel: 1e-4,
                abs: 1e-7,
            },
            "iota(f) . psi",
        )
        .unwrap();
        assert_eq!(summary.verdict, AssociationVerdict::Associated, "{summary:?}");
        assert!(summary.spread_monotone_tail, "{:?}", summary.spread_by_eps);
    }

    #[test]
    fn association_limits_are_linear_in_the_field() {
        let c = chart();
        let f = TensorField::scalar_closed_form(c.clone(), |x| x[0] + 0.2);
        let g = TensorField::scalar_closed_form(c.clone(), |x| x[1] * x[1]);
        let psi = bump(c.clone());
        let choices = vec![PairingChoice {
            label: "identity/q0".into(),
            upsilon: TransportOperator::identity(c.clone()),
            kernel: SmoothingKernelFamily::new(c, MollifierProfile::make(0, 0.0).unwrap()),
        }];
        let net = EpsNet::new(0.08, 0.6, 4).unwrap();
        let run = |t: &GeneralizedField, label: &str| {
            associate(
                t,
                &psi,
                None,
                &choices,
                &net,
                &QuadConfig::default(),
                AssocTolerance::default(),
                label,
            )
            .unwrap()
            .per_choice[0]
                .extrapolated_limit
                .unwrap()
        };
        let a = run(&iota(&RoughTensorField::from_smooth(&f)), "f");
        let b = run(&iota(&RoughTensorField::from_smooth(&g)), "g");
        let sum_field = iota(&RoughTensorField::from_smooth(&f))
            .add(&iota(&RoughTensorField::from_smooth(&g)).scale(2.0))
            .unwrap();
        let s = run(&sum_field, "f+2g");
        assert!((s - (a + 2.0 * b)).abs() < 1e-9, "{s} vs {}", a + 2.0 * b);
    }

    #[test]
    fn decay_fit_recovers_a_synthetic_two_regime_law() {
        // |T| = 0.8 eps^-2 inside r < 2 eps, 0.8 eps / r^3 outside
        let c = chart();
        let t = GeneralizedField::opaque(
            c.clone(),
            Valence::SCALAR,
            "synthetic",
            false,
            false,
            vec![Point::new(&[0.0, 0.0])],
            |ctx| {
                let eps = ctx.eps;
                Ok(TensorField::new(
                    ctx.upsilon.chart.clone(),
                    Valence::SCALAR,
                    SmoothnessClass::Regularized(eps),
                    move |x| {
                        let r = (x.get(0) * x.get(0) + x.get(1) * x.get(1)).sqrt();
                        let v = if r < 2.0 * eps {
                            0.8 / (eps * eps)
                        } else {
                            0.8 * eps / (r * r * r)
                        };
                        Ok(Components::scalar(v))
                    },
                ))
            },
        );
        let net = EpsNet::new(0.1, 0.6, 4).unwrap();
        let radii = [0.01, 0.02, 0.05, 0.11, 0.23, 0.47];
        let report = decay_profile(
            &t,
            &Point::new(&[0.0, 0.0]),
            &radii,
            &net,
            &ctx(0),
            &DecayOptions::default(),
            "synthetic",
        )
        .unwrap();
        assert!(!report.inner.sparse && !report.outer.sparse);
        let ai = report.inner.eps_exponent.unwrap();
        let bi = report.inner.radius_exponent.unwrap();
        let ao = report.outer.eps_exponent.unwrap();
        let bo = report.outer.radius_exponent.unwrap();
        assert!((ai + 2.0).abs() < 1e-9, "inner alpha {ai}");
        assert!(bi.abs() < 1e-9, "inner beta {bi}");
        assert!((ao - 1.0).abs() < 1e-9, "outer alpha {ao}");
        assert!((bo + 3.0).abs() < 1e-9, "outer beta {bo}");
        assert_eq!(report.skipped, 0);
    }

    #[test]
    fn vanishing_fields_report_sparse_regimes() {
        let c = chart();
        let zero = GeneralizedField::zero(c, Valence::SCALAR);
        let net = EpsNet::new(0.1, 0.6, 3).unwrap();
        let report = decay_profile(
            &zero,
            &Point::new(&[0.0, 0.0]),
            &[0.05, 0.1, 0.2],
            &net,
            &ctx(0),
            &DecayOptions::default(),
            "zero",
        )
        .unwrap();
        assert!(report.inner.sparse && report.outer.sparse);
        assert_eq!(report.inner.max_abs, 0.0);
        assert_eq!(report.outer.max_abs, 0.0);
        // and the scaling verdict for the zero family is the capped
        // negligibility order
        let r = scaling_exponent(
            &GeneralizedField::zero(chart(), Valence::SCALAR),
            &region(),
            &ProbeCorpus::bare(),
            &net,
            &ctx(0),
            "zero",
            &ScalingOptions::default(),
        )
        .unwrap();
        assert_eq!(r.verdict, ScalingVerdict::NegligibleToOrder { order: 16 });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        /// The classification rule: negligible-to-order m demands
        /// slope >= m - tol, moderate of order N demands slope >= -N - tol,
        /// and a residual above the cutoff is never classified.
        #[test]
        fn verdicts_respect_the_slope_inequalities(
            slope in -8.0f64..8.0,
            residual in 0.0f64..1.0,
        ) {
            let opts = ScalingOptions::default();
            let fit = Some(SlopeFit { slope, intercept: 0.3, max_residual: residual });
            match verdict_from_slope(&fit, false, &opts) {
                ScalingVerdict::Inconclusive => {
                    prop_assert!(residual > opts.residual_cutoff);
                }
                ScalingVerdict::NegligibleToOrder { order } => {
                    prop_assert!(residual <= opts.residual_cutoff);
                    prop_assert!(order >= 1);
                    prop_assert!(slope >= order as f64 - opts.slope_tolerance);
                }
                ScalingVerdict::Moderate { order } => {
                    prop_assert!(residual <= opts.residual_cutoff);
                    prop_assert!(slope >= -(order as f64) - opts.slope_tolerance);
                    // the bound is the tightest nonnegative one
                    if order > 0 {
                        prop_assert!(slope < -(order as f64 - 1.0) - opts.slope_tolerance);
                    }
                }
            }
        }

        /// Fitted slopes reproduce exact power laws regardless of scale.
        #[test]
        fn slope_fit_recovers_random_power_laws(
            c in 0.1f64..10.0,
            p in -4.0f64..4.0,
        ) {
            let samples: Vec<(f64, f64)> = (0..6)
                .map(|k| {
                    let eps = 0.1 * 0.7f64.powi(k);
                    (eps, c * eps.powf(p))
                })
                .collect();
            let fit = fit_log_slope(&samples).unwrap();
            prop_assert!((fit.slope - p).abs() < 1e-9);
            prop_assert!(fit.max_residual < 1e-9);
        }
    }
}
