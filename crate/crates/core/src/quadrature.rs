//! Deterministic quadrature rules.
//!
//! Three rule families cover every integral in the crate:
//!
//! * composite Gauss-Legendre cells over axis-aligned boxes, the default for
//!   compactly supported smooth integrands;
//! * Gauss rules adapted to a fixed positive weight function (built once per
//!   mollifier profile by the Stieltjes procedure), which integrate
//!   `f(x + eps z) rho(z) dz` to near machine precision with a handful of
//!   nodes when `f` is smooth on the kernel scale;
//! * polar annulus/wedge rules in two dimensions, used when an integrand is
//!   singular at a known point: in polar coordinates about that point the
//!   integrand of a kernel pairing is jointly smooth, so fixed panel rules
//!   converge spectrally with no node ever touching the singularity.
//!
//! All rules are pure functions of their parameters; node tables are cached
//! behind `OnceLock` so repeated calls are cheap and bit-stable.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// One-dimensional rule on a stated interval.
#[derive(Debug, Clone)]
pub struct Rule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1D {
    /// Affine image of the rule on `[a, b]`, assuming `self` lives on `[-1, 1]`.
    pub fn scaled_to(&self, a: f64, b: f64) -> Rule1D {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        Rule1D {
            nodes: self.nodes.iter().map(|t| mid + half * t).collect(),
            weights: self.weights.iter().map(|w| half * w).collect(),
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, cached per order.
pub fn gauss_legendre(order: usize) -> &'static Rule1D {
    assert!(order >= 1 && order <= 64, "unsupported Gauss-Legendre order {order}");
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static Rule1D>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    if let Some(rule) = guard.get(&order) {
        return rule;
    }
    let rule: &'static Rule1D = Box::leak(Box::new(compute_gauss_legendre(order)));
    guard.insert(order, rule);
    rule
}

/// Newton iteration on Legendre polynomials; standard and fully deterministic.
fn compute_gauss_legendre(n: usize) -> Rule1D {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_and_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    Rule1D { nodes, weights }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule along one axis: `cells` equal cells on `[a, b]`, Gauss-Legendre
/// of the given order on each.
pub fn composite_axis(a: f64, b: f64, cells: usize, order: usize) -> Rule1D {
    assert!(cells >= 1);
    let base = gauss_legendre(order);
    let mut nodes = Vec::with_capacity(cells * order);
    let mut weights = Vec::with_capacity(cells * order);
    let width = (b - a) / cells as f64;
    for c in 0..cells {
        let lo = a + c as f64 * width;
        let scaled = base.scaled_to(lo, lo + width);
        nodes.extend(scaled.nodes);
        weights.extend(scaled.weights);
    }
    Rule1D { nodes, weights }
}

/// Visit every node of a tensor-product composite rule over an axis-aligned box.
///
/// `visit` receives the node coordinates (length `dim`) and the product weight.
pub fn for_each_box_node(
    lo: &[f64],
    hi: &[f64],
    cells: &[usize],
    order: usize,
    mut visit: impl FnMut(&[f64], f64),
) {
    let dim = lo.len();
    assert_eq!(hi.len(), dim);
    assert_eq!(cells.len(), dim);
    let axes: Vec<Rule1D> = (0..dim)
        .map(|i| composite_axis(lo[i], hi[i], cells[i], order))
        .collect();
    let counts: Vec<usize> = axes.iter().map(|r| r.nodes.len()).collect();
    let total: usize = counts.iter().product();
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0f64; dim];
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for ax in (0..dim).rev() {
            let i = rem % counts[ax];
            rem /= counts[ax];
            idx[ax] = i;
            x[ax] = axes[ax].nodes[i];
            w *= axes[ax].weights[i];
        }
        let _ = &idx;
        visit(&x, w);
    }
}

/// Integrate a scalar function over a box with the composite Gauss rule.
pub fn integrate_box(
    lo: &[f64],
    hi: &[f64],
    cells: &[usize],
    order: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut acc = 0.0;
    for_each_box_node(lo, hi, cells, order, |x, w| acc += w * f(x));
    acc
}

// ---------------------------------------------------------------------------
// Weight-adapted Gauss rules (Stieltjes + symmetric tridiagonal eigensolve)
// ---------------------------------------------------------------------------

/// Gauss rule for `int f(t) w(t) dt` on `[a, b]` with a fixed nonnegative
/// weight `w`. Exact for polynomials of degree `2m - 1`; for analytic `f`
/// varying on a scale much longer than `b - a` the error decays factorially
/// in `m`, which is what makes kernel pairings with smooth fields cheap.
pub fn gauss_for_weight(w: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> Rule1D {
    assert!(m >= 1 && m <= 24, "unsupported weighted-rule size {m}");
    // Dense discretization of the weight; panels keep the bump profiles and
    // their polynomial modulations well resolved.
    let disc = composite_axis(a, b, 48, 12);
    let dw: Vec<f64> = disc
        .nodes
        .iter()
        .zip(&disc.weights)
        .map(|(t, q)| q * w(*t))
        .collect();
    let mass: f64 = dw.iter().sum();
    assert!(mass > 0.0, "weight function has nonpositive mass");

    // Stieltjes: three-term recurrence coefficients of the orthogonal
    // polynomials for the discretized measure.
    let n = disc.nodes.len();
    let mut alpha = vec![0.0f64; m];
    let mut beta = vec![0.0f64; m];
    let mut p_prev = vec![0.0f64; n];
    let mut p_curr = vec![1.0f64; n];
    let mut norm_curr: f64 = mass;
    for k in 0..m {
        let mut tk = 0.0;
        for i in 0..n {
            tk += disc.nodes[i] * p_curr[i] * p_curr[i] * dw[i];
        }
        alpha[k] = tk / norm_curr;
        if k + 1 < m || true {
            let mut p_next = vec![0.0f64; n];
            for i in 0..n {
                p_next[i] = (disc.nodes[i] - alpha[k]) * p_curr[i]
                    - if k == 0 { 0.0 } else { beta[k] * p_prev[i] };
            }
            let mut norm_next = 0.0;
            for i in 0..n {
                norm_next += p_next[i] * p_next[i] * dw[i];
            }
            if k + 1 < m {
                beta[k + 1] = norm_next / norm_curr;
            }
            p_prev = std::mem::replace(&mut p_curr, p_next);
            norm_curr = norm_next;
        }
    }

    // Golub-Welsch: eigenvalues of the Jacobi matrix are the nodes, squared
    // first eigenvector components scaled by the mass are the weights.
    let mut diag = alpha;
    let mut off = vec![0.0f64; m];
    for k in 1..m {
        off[k - 1] = beta[k].sqrt();
    }
    let (vals, first_components) = symmetric_tridiagonal_eigen(&mut diag, &mut off);
    let mut pairs: Vec<(f64, f64)> = vals
        .into_iter()
        .zip(first_components)
        .map(|(v, c)| (v, mass * c * c))
        .collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("non-finite node"));
    Rule1D {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// QL with implicit shifts for a symmetric tridiagonal matrix, also
/// accumulating the first component of each eigenvector (all that
/// Golub-Welsch needs). Ported from the classic tql2 routine.
fn symmetric_tridiagonal_eigen(d: &mut [f64], e: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
    let n = d.len();
    // z holds the first row of the accumulating orthogonal transform.
    let mut z = vec![0.0f64; n];
    z[0] = 1.0;
    if n == 1 {
        return (d.to_vec(), z);
    }
    // Shift the off-diagonal so e[i] couples d[i] and d[i+1].
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 50, "tridiagonal eigensolve failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if r == 0.0 && m > l {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    (d.to_vec(), z)
}

// ---------------------------------------------------------------------------
// Polar rules
// ---------------------------------------------------------------------------

/// Two-dimensional quadrature nodes over an annulus sector around `center`.
///
/// Radial panels are Gauss-Legendre on `[r0, r1]` split into `r_panels`
/// pieces; the angular interval `[t0, t1]` is split into `t_panels` pieces.
/// Weights already contain the polar Jacobian `r`.
pub struct PolarRule {
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

pub fn annulus_wedge_rule(
    center: [f64; 2],
    r0: f64,
    r1: f64,
    t0: f64,
    t1: f64,
    r_panels: usize,
    t_panels: usize,
    order: usize,
) -> PolarRule {
    assert!(r1 > r0 && r0 >= 0.0);
    assert!(t1 > t0);
    let radial = composite_axis(r0, r1, r_panels.max(1), order);
    let angular = composite_axis(t0, t1, t_panels.max(1), order);
    let mut nodes = Vec::with_capacity(radial.nodes.len() * angular.nodes.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for (r, wr) in radial.nodes.iter().zip(&radial.weights) {
        for (t, wt) in angular.nodes.iter().zip(&angular.weights) {
            nodes.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
            weights.push(wr * wt * r);
        }
    }
    PolarRule { nodes, weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gauss_legendre_weights_sum_to_interval_length() {
        for order in [1, 2, 4, 8, 16, 32] {
            let rule = gauss_legendre(order);
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 2.0).abs() < 1e-13, "order {order}: {sum}");
        }
    }

    #[test]
    fn unit_constant_over_unit_square_is_exact() {
        let v = integrate_box(&[0.0, 0.0], &[1.0, 1.0], &[2, 2], 8, |_| 1.0);
        assert!((v - 1.0).abs() < 1e-14, "{v}");
    }

    #[test]
    fn bilinear_over_unit_square_matches_closed_form() {
        let v = integrate_box(&[0.0, 0.0], &[1.0, 1.0], &[1, 1], 4, |x| x[0] * x[1]);
        assert!((v - 0.25).abs() < 1e-12, "{v}");
    }

    /// Degree-by-degree exactness up to 2*order - 1 against the closed-form
    /// antiderivative of monomials.
    #[test]
    fn monomial_exactness_up_to_rule_degree() {
        for order in [2usize, 4, 8] {
            let rule = gauss_legendre(order).scaled_to(0.3, 1.7);
            for k in 0..(2 * order) {
                let quad: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(x, w)| w * x.powi(k as i32))
                    .sum();
                let exact = (1.7f64.powi(k as i32 + 1) - 0.3f64.powi(k as i32 + 1)) / (k as f64 + 1.0);
                assert!(
                    (quad - exact).abs() <= 1e-12 * exact.abs().max(1.0),
                    "order {order} degree {k}: {quad} vs {exact}"
                );
            }
        }
    }

    proptest! {
        /// Random polynomials of degree <= 2*order - 1 on random cells
        /// integrate exactly (relative 1e-12).
        #[test]
        fn random_polynomials_integrate_exactly(
            order in 2usize..=8,
            a in -2.0f64..2.0,
            width in 0.1f64..3.0,
            coeffs in proptest::collection::vec(-3.0f64..3.0, 1..8),
        ) {
            let b = a + width;
            let deg_max = 2 * order - 1;
            let coeffs: Vec<f64> = coeffs.into_iter().take(deg_max + 1).collect();
            let rule = gauss_legendre(order).scaled_to(a, b);
            let quad: f64 = rule.nodes.iter().zip(&rule.weights)
                .map(|(x, w)| {
                    let mut p = 0.0;
                    for (k, c) in coeffs.iter().enumerate() {
                        p += c * x.powi(k as i32);
                    }
                    w * p
                })
                .sum();
            let mut exact = 0.0;
            for (k, c) in coeffs.iter().enumerate() {
                exact += c / (k as f64 + 1.0) * (b.powi(k as i32 + 1) - a.powi(k as i32 + 1));
            }
            prop_assert!((quad - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn weighted_rule_reproduces_weighted_monomials() {
        // Weight: an asymmetric smooth bump. Oracle: dense composite rule.
        let w = |t: f64| {
            if t.abs() >= 1.0 {
                0.0
            } else {
                (1.0 + 0.4 * t) * (-1.0 / (1.0 - t * t)).exp()
            }
        };
        let m = 10;
        let rule = gauss_for_weight(w, -1.0, 1.0, m);
        for k in 0..(2 * m) {
            let quad: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(t, q)| q * t.powi(k as i32))
                .sum();
            let oracle = integrate_box(&[-1.0], &[1.0], &[64], 12, |x| w(x[0]) * x[0].powi(k as i32));
            assert!(
                (quad - oracle).abs() <= 2e-12 * oracle.abs().max(1.0),
                "degree {k}: {quad} vs {oracle}"
            );
        }
    }

    #[test]
    fn weighted_rule_handles_analytic_integrands_with_few_nodes() {
        let w = |t: f64| {
            if t.abs() >= 1.0 {
                0.0
            } else {
                (-1.0 / (1.0 - t * t)).exp()
            }
        };
        let rule = gauss_for_weight(w, -1.0, 1.0, 10);
        let f = |t: f64| (0.05 * t).sin() + (0.03 * t).cos();
        let quad: f64 = rule.nodes.iter().zip(&rule.weights).map(|(t, q)| q * f(*t)).sum();
        let oracle = integrate_box(&[-1.0], &[1.0], &[64], 12, |x| w(x[0]) * f(x[0]));
        assert!((quad - oracle).abs() < 1e-13 * oracle.abs(), "{quad} vs {oracle}");
    }

    #[test]
    fn wedge_rule_weights_cover_the_sector_area() {
        let rule = annulus_wedge_rule([0.3, -0.2], 0.1, 0.7, 0.4, 1.9, 3, 5, 6);
        let area: f64 = rule.weights.iter().sum();
        let exact = 0.5 * (0.7f64.powi(2) - 0.1f64.powi(2)) * (1.9 - 0.4);
        assert!((area - exact).abs() < 1e-14, "{area} vs {exact}");
    }

    #[test]
    fn wedge_rule_matches_cartesian_oracle_on_smooth_bump() {
        // Entire Gaussian whose tails are below roundoff at the annulus and
        // box edges; polar and Cartesian integrals must agree to spectral
        // accuracy.
        let c = [0.2, -0.1];
        let f = |x: &[f64]| {
            let dx = x[0] - c[0] - 0.3;
            let dy = x[1] - c[1];
            (-(dx * dx + dy * dy) / 0.0016).exp()
        };
        let rule = annulus_wedge_rule(c, 0.05, 0.6, 0.0, 2.0 * std::f64::consts::PI, 24, 48, 10);
        let polar: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * f(x))
            .sum();
        let cart = integrate_box(&[-0.4, -0.7], &[0.8, 0.5], &[32, 32], 10, f);
        assert!(
            (polar - cart).abs() < 1e-12 * cart.abs(),
            "{polar} vs {cart}"
        );
    }
}
