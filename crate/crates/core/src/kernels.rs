//! Smoothing kernels: compactly supported mollifier profiles with prescribed
//! vanishing moments, tensor-product kernel families on the chart, scale
//! nets, kernel perturbations, and the kernel-side Lie derivative.

use crate::chart::{Chart, Point, SmoothVectorField, MAX_DIM};
use crate::error::{Error, Result};
use crate::quadrature::{self, Rule1D};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// One-dimensional mollifier profile on `(-1, 1)`:
/// `rho(t) = P(t) * exp(-1/(1-t^2))` with a polynomial `P` solved so that
/// the total mass is 1 and moments `1..=q` vanish. A nonzero `skew` pins the
/// coefficient of `t^(q+1)` (odd), producing a profile whose first surviving
/// moment is exactly `q+1`; lower odd moments are re-orthogonalized away.
#[derive(Clone)]
pub struct MollifierProfile {
    inner: Arc<ProfileInner>,
}

struct ProfileInner {
    q: u32,
    skew: f64,
    /// Polynomial coefficients of `P`, `coeffs[k]` multiplying `t^k`.
    coeffs: Vec<f64>,
    positive: bool,
    rule_cache: Mutex<HashMap<usize, Arc<Rule1D>>>,
}

/// Serializable description of a constructed profile.
#[derive(Clone, Debug, Serialize)]
pub struct ProfileRecord {
    pub q: u32,
    pub skew: f64,
    pub coeffs: Vec<f64>,
}

fn base_bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// d/dt of the base bump: `B(t) * (-2t / (1-t^2)^2)`.
fn base_bump_derivative(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - t * t;
        base_bump(t) * (-2.0 * t / (s * s))
    }
}

/// Dense Gaussian elimination with partial pivoting for the tiny moment
/// systems (at most ~5 unknowns).
fn solve_dense(a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-14 {
            return Err(Error::invalid("singular moment system"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

impl MollifierProfile {
    /// Build a profile with vanishing moments `1..=q`. `skew` must be zero
    /// when `q` is odd; `|skew| < 1` keeps the profile sign-definite at
    /// `q = 0`.
    pub fn make(q: u32, skew: f64) -> Result<MollifierProfile> {
        if q > 6 {
            return Err(Error::invalid("moment order q must be at most 6"));
        }
        if skew != 0.0 && q % 2 != 0 {
            return Err(Error::invalid("skewed profiles need even q"));
        }
        // Dense rule for the construction integrals; the base bump is smooth
        // so this is accurate far beyond the verification thresholds.
        let rule = quadrature::composite_axis(-1.0, 1.0, 48, 12);
        let max_pow = (2 * q + 4) as usize;
        let mut mom = vec![0.0; max_pow + 1];
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            let b = base_bump(t);
            let mut tk = 1.0;
            for m in mom.iter_mut() {
                *m += w * b * tk;
                tk *= t;
            }
        }

        // Even part: unknown coefficients at degrees 0, 2, ..., 2*floor(q/2).
        let e = (q / 2) as usize;
        let degrees: Vec<usize> = (0..=e).map(|i| 2 * i).collect();
        let constraints: Vec<usize> = std::iter::once(0)
            .chain((1..=q as usize).filter(|m| m % 2 == 0))
            .collect();
        let mut a: Vec<Vec<f64>> = constraints
            .iter()
            .map(|&m| degrees.iter().map(|&d| mom[m + d]).collect())
            .collect();
        let mut rhs: Vec<f64> = constraints
            .iter()
            .map(|&m| if m == 0 { 1.0 } else { 0.0 })
            .collect();
        let ceven = solve_dense(&mut a, &mut rhs)?;
        let mut even_poly = vec![0.0; 2 * e + 1];
        for (i, &d) in degrees.iter().enumerate() {
            even_poly[d] = ceven[i];
        }

        // Odd correction c0 * (skew t^(q+1) + d_1 t + d_3 t^3 + ...) added to
        // the even part. Odd terms leave the mass and the even moments alone;
        // the d_j cancel the odd moments 1..q-1 injected by the skew term.
        // The d_j system is a Hankel moment matrix of the positive base bump
        // restricted to odd degrees, hence nonsingular.
        let mut odd_poly = vec![0.0; q as usize + 2];
        if skew != 0.0 {
            let c0 = even_poly[0];
            odd_poly[q as usize + 1] = skew * c0;
            let odd_unknowns: Vec<usize> = (1..q as usize).step_by(2).collect();
            if !odd_unknowns.is_empty() {
                let ms: Vec<usize> = odd_unknowns.clone();
                let mut am: Vec<Vec<f64>> = ms
                    .iter()
                    .map(|&m| odd_unknowns.iter().map(|&j| mom[m + j]).collect())
                    .collect();
                let mut bm: Vec<f64> = ms
                    .iter()
                    .map(|&m| -skew * mom[m + q as usize + 1])
                    .collect();
                let d = solve_dense(&mut am, &mut bm)?;
                for (i, &j) in odd_unknowns.iter().enumerate() {
                    odd_poly[j] = d[i] * c0;
                }
            }
        }

        // coeffs = even_poly + odd correction.
        let mut coeffs = vec![0.0; even_poly.len().max(odd_poly.len())];
        for (i, &a) in even_poly.iter().enumerate() {
            coeffs[i] += a;
        }
        for (j, &b) in odd_poly.iter().enumerate() {
            coeffs[j] += b;
        }
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }

        let mut positive = true;
        let mut t = -1.0;
        while t <= 1.0 {
            if eval_poly(&coeffs, t) <= 0.0 {
                positive = false;
                break;
            }
            t += 1e-3;
        }

        let profile = MollifierProfile {
            inner: Arc::new(ProfileInner {
                q,
                skew,
                coeffs,
                positive,
                rule_cache: Mutex::new(HashMap::new()),
            }),
        };
        profile.verify()?;
        Ok(profile)
    }

    /// Independent verification against a finer rule than the construction
    /// used: unit mass within 1e-10, moments `1..=q` within 1e-8.
    fn verify(&self) -> Result<()> {
        let rule = quadrature::composite_axis(-1.0, 1.0, 64, 14);
        let q = self.inner.q as usize;
        let mut mom = vec![0.0; q + 1];
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            let v = self.eval(t);
            let mut tk = 1.0;
            for m in mom.iter_mut() {
                *m += w * v * tk;
                tk *= t;
            }
        }
        if (mom[0] - 1.0).abs() > 1e-10 {
            return Err(Error::ContractViolation(format!(
                "profile mass {} deviates from 1",
                mom[0]
            )));
        }
        for (k, &m) in mom.iter().enumerate().skip(1) {
            if m.abs() > 1e-8 {
                return Err(Error::ContractViolation(format!(
                    "profile moment {k} = {m} should vanish"
                )));
            }
        }
        Ok(())
    }

    pub fn q(&self) -> u32 {
        self.inner.q
    }

    pub fn skew(&self) -> f64 {
        self.inner.skew
    }

    /// True when the profile is sign-definite, which is what the
    /// weight-adapted Gauss rules require.
    pub fn is_positive(&self) -> bool {
        self.inner.positive
    }

    pub fn record(&self) -> ProfileRecord {
        ProfileRecord {
            q: self.inner.q,
            skew: self.inner.skew,
            coeffs: self.inner.coeffs.clone(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t.abs() >= 1.0 {
            return 0.0;
        }
        eval_poly(&self.inner.coeffs, t) * base_bump(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if t.abs() >= 1.0 {
            return 0.0;
        }
        let p = eval_poly(&self.inner.coeffs, t);
        let dp = eval_poly_derivative(&self.inner.coeffs, t);
        dp * base_bump(t) + p * base_bump_derivative(t)
    }

    pub fn moment(&self, k: u32) -> f64 {
        let rule = quadrature::composite_axis(-1.0, 1.0, 64, 14);
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| w * self.eval(t) * t.powi(k as i32))
            .sum()
    }

    /// Gauss rule on `(-1, 1)` whose weight is this profile; integrating a
    /// smooth `f` against the profile reduces to a plain weighted sum.
    /// Only available for sign-definite profiles.
    pub fn weight_rule(&self, m: usize) -> Result<Arc<Rule1D>> {
        if !self.inner.positive {
            return Err(Error::invalid(
                "weight-adapted rule needs a sign-definite profile",
            ));
        }
        Ok(self.quad_rule(m))
    }

    /// Weighted-sum rule for integrating smooth functions against this
    /// profile, available regardless of sign. Sign-definite profiles are
    /// used directly as the Gauss weight; signed profiles fall back to the
    /// positive base bump as the weight, with the moment polynomial folded
    /// into the node weights (`f * P * B` summed exactly for polynomial
    /// `f * P`), so the rule stays spectrally accurate.
    pub fn quad_rule(&self, m: usize) -> Arc<Rule1D> {
        let mut cache = self.inner.rule_cache.lock().unwrap();
        if let Some(r) = cache.get(&m) {
            return r.clone();
        }
        let rule = if self.inner.positive {
            let me = self.clone();
            Arc::new(quadrature::gauss_for_weight(
                move |t| me.eval(t),
                -1.0,
                1.0,
                m,
            ))
        } else {
            // Extra nodes cover the degree the polynomial factor consumes.
            let extra = self.inner.coeffs.len() / 2 + 1;
            let base = quadrature::gauss_for_weight(base_bump, -1.0, 1.0, (m + extra).min(24));
            let weights = base
                .nodes
                .iter()
                .zip(&base.weights)
                .map(|(&t, &w)| w * eval_poly(&self.inner.coeffs, t))
                .collect();
            Arc::new(Rule1D {
                nodes: base.nodes,
                weights,
            })
        };
        cache.insert(m, rule.clone());
        rule
    }
}

fn eval_poly(coeffs: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * t + c;
    }
    acc
}

fn eval_poly_derivative(coeffs: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &c) in coeffs.iter().enumerate().rev() {
        if k == 0 {
            break;
        }
        acc = acc * t + c * k as f64;
    }
    acc
}

/// Tensor-product translate-and-scale kernel family on the chart:
/// `omega_{x,eps}(y) = eps^-n * prod_i rho_i((y_i - x_i)/eps)`, supported in
/// the box `x +- eps`.
#[derive(Clone)]
pub struct SmoothingKernelFamily {
    pub chart: Arc<Chart>,
    profiles: Vec<MollifierProfile>,
}

impl SmoothingKernelFamily {
    pub fn new(chart: Arc<Chart>, profile: MollifierProfile) -> SmoothingKernelFamily {
        let profiles = vec![profile; chart.dim()];
        SmoothingKernelFamily { chart, profiles }
    }

    pub fn with_axis_profiles(
        chart: Arc<Chart>,
        profiles: Vec<MollifierProfile>,
    ) -> Result<SmoothingKernelFamily> {
        if profiles.len() != chart.dim() {
            return Err(Error::invalid("one profile per axis required"));
        }
        Ok(SmoothingKernelFamily { chart, profiles })
    }

    pub fn profile(&self, axis: usize) -> &MollifierProfile {
        &self.profiles[axis]
    }

    pub fn eval(&self, x: &Point, eps: f64, y: &Point) -> f64 {
        let n = self.chart.dim();
        let mut v = eps.powi(-(n as i32));
        for i in 0..n {
            v *= self.profiles[i].eval((y.get(i) - x.get(i)) / eps);
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }

    /// Gradient in the second argument, all axes at once.
    pub fn grad_y(&self, x: &Point, eps: f64, y: &Point) -> [f64; MAX_DIM] {
        let n = self.chart.dim();
        let mut vals = [0.0; MAX_DIM];
        let mut ders = [0.0; MAX_DIM];
        for i in 0..n {
            let z = (y.get(i) - x.get(i)) / eps;
            vals[i] = self.profiles[i].eval(z);
            ders[i] = self.profiles[i].derivative(z);
        }
        let scale = eps.powi(-(n as i32 + 1));
        let mut out = [0.0; MAX_DIM];
        for c in 0..n {
            let mut prod = ders[c];
            for i in 0..n {
                if i != c {
                    prod *= vals[i];
                }
            }
            out[c] = scale * prod;
        }
        out
    }

    pub fn support_box(&self, x: &Point, eps: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.chart.dim();
        let lo = (0..n).map(|i| x.get(i) - eps).collect();
        let hi = (0..n).map(|i| x.get(i) + eps).collect();
        (lo, hi)
    }

    /// Smoothing at `x` with scale `eps` requires the support box (with a
    /// diagonal safety margin) to stay inside the chart.
    pub fn require_admissible_center(&self, x: &Point, eps: f64) -> Result<()> {
        let n = self.chart.dim() as f64;
        self.chart.require_margin(x, eps * n.sqrt())
    }

    pub fn axis_weight_rule(&self, axis: usize, m: usize) -> Result<Arc<Rule1D>> {
        self.profiles[axis].weight_rule(m)
    }

    pub fn axis_quad_rule(&self, axis: usize, m: usize) -> Arc<Rule1D> {
        self.profiles[axis].quad_rule(m)
    }

    pub fn all_positive(&self) -> bool {
        self.profiles.iter().all(|p| p.is_positive())
    }

    pub fn max_q(&self) -> u32 {
        self.profiles.iter().map(|p| p.q()).max().unwrap_or(0)
    }

    pub fn records(&self) -> Vec<ProfileRecord> {
        self.profiles.iter().map(|p| p.record()).collect()
    }
}

/// Geometric net of smoothing scales `eps_k = eps0 * ratio^k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsNet {
    pub eps0: f64,
    pub ratio: f64,
    pub levels: usize,
}

impl EpsNet {
    pub fn new(eps0: f64, ratio: f64, levels: usize) -> Result<EpsNet> {
        if !(eps0 > 0.0) || !(ratio > 0.0 && ratio < 1.0) || levels < 2 {
            return Err(Error::invalid(
                "eps net needs eps0 > 0, ratio in (0,1), levels >= 2",
            ));
        }
        Ok(EpsNet { eps0, ratio, levels })
    }

    /// Default net for a chart: starts at a tenth of the diameter, halves
    /// eight times.
    pub fn default_for(chart: &Chart) -> EpsNet {
        EpsNet {
            eps0: 0.1 * chart.diameter(),
            ratio: 0.5,
            levels: 8,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|k| self.eps0 * self.ratio.powi(k as i32))
            .collect()
    }
}

type PerturbFn = dyn Fn(&Point, f64, &Point) -> f64 + Send + Sync;

type SupportFn = dyn Fn(&Point, f64) -> (Vec<f64>, Vec<f64>) + Send + Sync;

/// A kernel-direction perturbation: same call shape as a kernel family but
/// with zero total mass at every `(x, eps)`.
#[derive(Clone)]
pub struct KernelPerturbation {
    pub chart: Arc<Chart>,
    /// Support half-width in units of eps.
    pub support_factor: f64,
    pub label: String,
    eval: Arc<PerturbFn>,
    support_override: Option<Arc<SupportFn>>,
}

impl KernelPerturbation {
    /// Difference of two unit-mass families; mass cancels identically.
    pub fn difference(
        plus: &SmoothingKernelFamily,
        minus: &SmoothingKernelFamily,
    ) -> KernelPerturbation {
        let p = plus.clone();
        let m = minus.clone();
        KernelPerturbation {
            chart: plus.chart.clone(),
            support_factor: 1.0,
            label: "difference".into(),
            eval: Arc::new(move |x, eps, y| p.eval(x, eps, y) - m.eval(x, eps, y)),
            support_override: None,
        }
    }

    pub fn custom(
        chart: Arc<Chart>,
        support_factor: f64,
        label: &str,
        eval: impl Fn(&Point, f64, &Point) -> f64 + Send + Sync + 'static,
    ) -> KernelPerturbation {
        KernelPerturbation {
            chart,
            support_factor,
            label: label.to_string(),
            eval: Arc::new(eval),
            support_override: None,
        }
    }

    /// Like `custom`, but with an explicit support box (used when the
    /// support is not a centered cube, e.g. after a coordinate map).
    pub fn custom_with_support(
        chart: Arc<Chart>,
        support_factor: f64,
        label: &str,
        eval: impl Fn(&Point, f64, &Point) -> f64 + Send + Sync + 'static,
        support: impl Fn(&Point, f64) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    ) -> KernelPerturbation {
        KernelPerturbation {
            chart,
            support_factor,
            label: label.to_string(),
            eval: Arc::new(eval),
            support_override: Some(Arc::new(support)),
        }
    }

    pub fn eval(&self, x: &Point, eps: f64, y: &Point) -> f64 {
        (self.eval)(x, eps, y)
    }

    pub fn support_box(&self, x: &Point, eps: f64) -> (Vec<f64>, Vec<f64>) {
        if let Some(s) = &self.support_override {
            return s(x, eps);
        }
        let n = self.chart.dim();
        let h = self.support_factor * eps;
        let lo = (0..n).map(|i| x.get(i) - h).collect();
        let hi = (0..n).map(|i| x.get(i) + h).collect();
        (lo, hi)
    }
}

/// Lie derivative of the kernel family along a smooth field, split into its
/// constituent parts. The density part moves the `y` argument as a density
/// (advection plus a divergence weight); the base part moves the `x`
/// argument. Their sum has zero mass and is the perturbation fed to the
/// kernel differential.
#[derive(Clone)]
pub struct KernelLieDerivative {
    pub family: SmoothingKernelFamily,
    pub direction: SmoothVectorField,
}

pub fn kernel_lie_derivative(
    family: &SmoothingKernelFamily,
    direction: &SmoothVectorField,
) -> KernelLieDerivative {
    KernelLieDerivative {
        family: family.clone(),
        direction: direction.clone(),
    }
}

impl KernelLieDerivative {
    /// `X^c(y) d_{y^c} omega`
    pub fn advection_part(&self, x: &Point, eps: f64, y: &Point) -> f64 {
        let g = self.family.grad_y(x, eps, y);
        let v = self.direction.value(y);
        let n = self.family.chart.dim();
        (0..n).map(|c| v[c] * g[c]).sum()
    }

    /// `(div X)(y) omega`
    pub fn weight_part(&self, x: &Point, eps: f64, y: &Point) -> f64 {
        self.direction.divergence(y) * self.family.eval(x, eps, y)
    }

    /// Lie derivative of the `y`-slot density at fixed base point.
    pub fn density_part(&self, x: &Point, eps: f64, y: &Point) -> f64 {
        self.advection_part(x, eps, y) + self.weight_part(x, eps, y)
    }

    /// `X^c(x) d_{x^c} omega = -X^c(x) d_{y^c} omega` for translate kernels.
    pub fn base_part(&self, x: &Point, eps: f64, y: &Point) -> f64 {
        let g = self.family.grad_y(x, eps, y);
        let v = self.direction.value(x);
        let n = self.family.chart.dim();
        -(0..n).map(|c| v[c] * g[c]).sum::<f64>()
    }

    pub fn total(&self, x: &Point, eps: f64, y: &Point) -> f64 {
        self.density_part(x, eps, y) + self.base_part(x, eps, y)
    }

    pub fn as_perturbation(&self) -> KernelPerturbation {
        let me = self.clone();
        KernelPerturbation {
            chart: self.family.chart.clone(),
            support_factor: 1.0,
            label: format!("lie[{}]", self.direction.label),
            eval: Arc::new(move |x, eps, y| me.total(x, eps, y)),
            support_override: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::quadrature::integrate_box;

    #[test]
    fn plain_profile_has_unit_mass_and_odd_symmetry() {
        let p = MollifierProfile::make(0, 0.0).unwrap();
        assert!((p.moment(0) - 1.0).abs() < 1e-11);
        assert!(p.moment(1).abs() < 1e-12);
        assert!(p.is_positive());
        // vanishes identically outside (-1, 1) and decays fast near the edge
        assert_eq!(p.eval(1.0), 0.0);
        assert_eq!(p.eval(-1.2), 0.0);
        assert!(p.eval(0.999).abs() < 1e-100);
        assert!(p.derivative(0.999).abs() < 1e-90);
    }

    #[test]
    fn q2_profile_kills_first_two_moments() {
        let p = MollifierProfile::make(2, 0.0).unwrap();
        assert!((p.moment(0) - 1.0).abs() < 1e-10);
        assert!(p.moment(1).abs() < 1e-10);
        assert!(p.moment(2).abs() < 1e-10);
        // even profile: moment 3 also vanishes, moment 4 does not
        assert!(p.moment(3).abs() < 1e-10);
        assert!(p.moment(4).abs() > 1e-3);
        assert!(!p.is_positive());
    }

    #[test]
    fn q4_profile_kills_first_four_moments() {
        let p = MollifierProfile::make(4, 0.0).unwrap();
        for k in 1..=4 {
            assert!(p.moment(k).abs() < 1e-9, "moment {k} = {}", p.moment(k));
        }
        assert!((p.moment(0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn skewed_q0_first_moment_matches_variance_oracle() {
        // rho = rho_even (1 + s t) with rho_even = B / M0: moment 1 equals
        // s * M2 / M0 where Mk are base-bump moments. Compute the oracle by
        // direct quadrature of the base bump.
        let s = 0.9;
        let p = MollifierProfile::make(0, s).unwrap();
        let rule = quadrature::composite_axis(-1.0, 1.0, 64, 14);
        let m0: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| w * base_bump(t))
            .sum();
        let m2: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| w * t * t * base_bump(t))
            .sum();
        let oracle = s * m2 / m0;
        assert!((p.moment(1) - oracle).abs() < 1e-10);
        assert!(p.is_positive());
    }

    #[test]
    fn skewed_q2_reorthogonalizes_lower_moments() {
        let p = MollifierProfile::make(2, 0.7).unwrap();
        assert!(p.moment(1).abs() < 1e-9);
        assert!(p.moment(2).abs() < 1e-9);
        assert!(p.moment(3).abs() > 1e-4, "moment 3 should survive");
    }

    #[test]
    fn odd_q_rejects_skew() {
        assert!(MollifierProfile::make(1, 0.5).is_err());
        assert!(MollifierProfile::make(1, 0.0).is_ok());
    }

    #[test]
    fn family_mass_is_one_in_two_dims() {
        let chart = Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap());
        let fam = SmoothingKernelFamily::new(chart, MollifierProfile::make(0, 0.0).unwrap());
        let x = Point::new(&[0.1, -0.2]);
        for &eps in &[0.5, 0.05] {
            let (lo, hi) = fam.support_box(&x, eps);
            let mass = integrate_box(&lo, &hi, &[48, 48], 12, |y| {
                fam.eval(&x, eps, &Point::new(y))
            });
            assert!((mass - 1.0).abs() < 1e-10, "eps {eps}: mass {mass}");
        }
    }

    #[test]
    fn weight_rule_only_for_sign_definite_profiles() {
        let pos = MollifierProfile::make(0, 0.5).unwrap();
        assert!(pos.weight_rule(8).is_ok());
        let signed = MollifierProfile::make(2, 0.0).unwrap();
        assert!(signed.weight_rule(8).is_err());
    }

    #[test]
    fn grad_y_matches_finite_differences() {
        let chart = Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap());
        let fam = SmoothingKernelFamily::new(chart, MollifierProfile::make(0, 0.4).unwrap());
        let x = Point::new(&[0.0, 0.0]);
        let y = Point::new(&[0.03, -0.07]);
        let eps = 0.2;
        let g = fam.grad_y(&x, eps, &y);
        let h = 1e-7;
        for ax in 0..2 {
            let fd = (fam.eval(&x, eps, &y.offset(ax, h)) - fam.eval(&x, eps, &y.offset(ax, -h)))
                / (2.0 * h);
            assert!(
                (g[ax] - fd).abs() < 1e-4 * (1.0 + fd.abs()),
                "axis {ax}: {} vs {fd}",
                g[ax]
            );
        }
    }

    #[test]
    fn lie_parts_cancel_for_constant_direction() {
        let chart = Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap());
        let fam = SmoothingKernelFamily::new(
            chart.clone(),
            MollifierProfile::make(0, 0.0).unwrap(),
        );
        let x_dir = SmoothVectorField::constant(chart, &[0.7, -1.3]);
        let lie = kernel_lie_derivative(&fam, &x_dir);
        let x = Point::new(&[0.1, 0.2]);
        let eps = 0.25;
        for y in [
            Point::new(&[0.15, 0.1]),
            Point::new(&[0.0, 0.3]),
            Point::new(&[0.3, 0.05]),
        ] {
            let total = lie.total(&x, eps, &y);
            let scale = fam.eval(&x, eps, &y).abs() / eps;
            assert!(total.abs() <= 1e-12 * (1.0 + scale), "{total}");
        }
    }

    #[test]
    fn lie_part_masses_match_divergence_oracle() {
        // For any direction X: the advection part integrates (in y) to
        // -div X by parts, the full density part to 0, and the total to 0.
        let chart = Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap());
        let fam = SmoothingKernelFamily::new(
            chart.clone(),
            MollifierProfile::make(0, 0.0).unwrap(),
        );
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        a[0][0] = 1.0;
        a[0][1] = 0.5;
        a[1][1] = -0.25;
        let x_dir = SmoothVectorField::linear(chart, a, [0.2, 0.0, 0.0, 0.0]);
        let lie = kernel_lie_derivative(&fam, &x_dir);
        let x = Point::new(&[0.05, -0.1]);
        let eps = 0.3;
        let (lo, hi) = fam.support_box(&x, eps);
        let div = x_dir.divergence(&x);
        let adv = integrate_box(&lo, &hi, &[48, 48], 12, |y| {
            lie.advection_part(&x, eps, &Point::new(y))
        });
        assert!((adv - (-div)).abs() < 1e-8, "advection mass {adv} vs {}", -div);
        let dens = integrate_box(&lo, &hi, &[48, 48], 12, |y| {
            lie.density_part(&x, eps, &Point::new(y))
        });
        assert!(dens.abs() < 1e-8, "density mass {dens}");
        let tot = integrate_box(&lo, &hi, &[48, 48], 12, |y| {
            lie.total(&x, eps, &Point::new(y))
        });
        assert!(tot.abs() < 1e-8, "total mass {tot}");
    }

    #[test]
    fn lie_total_matches_expanded_form() {
        // total = div X(y) omega + (X^c(y) - X^c(x)) d_{y^c} omega
        let chart = Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap());
        let fam = SmoothingKernelFamily::new(
            chart.clone(),
            MollifierProfile::make(0, 0.3).unwrap(),
        );
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        a[0][1] = 1.0;
        a[1][0] = -0.7;
        let x_dir = SmoothVectorField::linear(chart, a, [0.1, -0.2, 0.0, 0.0]);
        let lie = kernel_lie_derivative(&fam, &x_dir);
        let x = Point::new(&[0.0, 0.1]);
        let y = Point::new(&[0.08, 0.02]);
        let eps = 0.2;
        let total = lie.total(&x, eps, &y);
        let g = fam.grad_y(&x, eps, &y);
        let vx = x_dir.value(&x);
        let vy = x_dir.value(&y);
        let mut expanded = x_dir.divergence(&y) * fam.eval(&x, eps, &y);
        for c in 0..2 {
            expanded += (vy[c] - vx[c]) * g[c];
        }
        assert!((total - expanded).abs() < 1e-12 * (1.0 + expanded.abs()));
    }

    #[test]
    fn difference_perturbation_has_zero_mass() {
        let chart = Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap());
        let f0 = SmoothingKernelFamily::new(chart.clone(), MollifierProfile::make(0, 0.0).unwrap());
        let f1 = SmoothingKernelFamily::new(chart, MollifierProfile::make(0, 0.6).unwrap());
        let pert = KernelPerturbation::difference(&f0, &f1);
        let x = Point::new(&[0.2, 0.2]);
        let eps = 0.3;
        let (lo, hi) = pert.support_box(&x, eps);
        let mass = integrate_box(&lo, &hi, &[8, 8], 10, |y| pert.eval(&x, eps, &Point::new(y)));
        assert!(mass.abs() < 1e-10, "{mass}");
    }

    #[test]
    fn eps_net_is_geometric() {
        let net = EpsNet::new(0.1, 0.5, 4).unwrap();
        let v = net.values();
        assert_eq!(v.len(), 4);
        assert!((v[0] - 0.1).abs() < 1e-15);
        for k in 1..4 {
            assert!((v[k] / v[k - 1] - 0.5).abs() < 1e-12);
        }
        assert!(EpsNet::new(0.0, 0.5, 4).is_err());
        assert!(EpsNet::new(0.1, 1.5, 4).is_err());
        assert!(EpsNet::new(0.1, 0.5, 1).is_err());
    }

    #[test]
    fn weighted_rule_reproduces_profile_integrals() {
        // Integrating smooth f against the q=0 skewed profile with the
        // 10-node adapted rule matches dense quadrature of f * rho.
        let p = MollifierProfile::make(0, 0.8).unwrap();
        let rule = p.weight_rule(10).unwrap();
        let f = |t: f64| (1.3 * t).sin() + t * t * (0.7 * t).cos();
        let fast: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| w * f(t))
            .sum();
        let dense = quadrature::composite_axis(-1.0, 1.0, 64, 14);
        let oracle: f64 = dense
            .nodes
            .iter()
            .zip(&dense.weights)
            .map(|(&t, &w)| w * p.eval(t) * f(t))
            .sum();
        assert!((fast - oracle).abs() < 1e-12, "{fast} vs {oracle}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Every admissible (q, skew) constructs: unit mass, moments 1..=q
        /// vanish (checked in `verify`), support edges flat, and a nonzero
        /// skew leaves a surviving moment at q+1 with the sign of the skew.
        #[test]
        fn constructed_profiles_satisfy_the_moment_contract(
            q_half in 0u32..=2,
            skew in -0.8f64..0.8,
        ) {
            let q = 2 * q_half;
            let p = MollifierProfile::make(q, skew).unwrap();
            prop_assert_eq!(p.eval(1.0), 0.0);
            prop_assert_eq!(p.eval(-1.0), 0.0);
            prop_assert!((p.moment(0) - 1.0).abs() < 1e-10);
            for k in 1..=q {
                prop_assert!(p.moment(k).abs() < 1e-8, "moment {} = {}", k, p.moment(k));
            }
            if skew.abs() > 1e-3 {
                let lead = p.moment(q + 1);
                prop_assert!(lead * skew > 0.0, "moment {} = {} for skew {}", q + 1, lead, skew);
            }
        }

        /// Scale nets are strictly decreasing geometric sequences.
        #[test]
        fn eps_nets_decrease_strictly(
            eps0 in 1e-3f64..0.5,
            ratio in 0.3f64..0.95,
            levels in 2usize..10,
        ) {
            let net = EpsNet::new(eps0, ratio, levels).unwrap();
            let scales = net.values();
            prop_assert_eq!(scales.len(), levels);
            for k in 1..scales.len() {
                prop_assert!(scales[k] < scales[k - 1]);
                prop_assert!((scales[k] / scales[k - 1] - ratio).abs() < 1e-12);
            }
        }
    }
}
