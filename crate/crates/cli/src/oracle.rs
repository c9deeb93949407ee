//! Independent pairing targets: refined quadrature against closed forms.
//!
//! Every association run compares its extrapolated limit against a number
//! computed here, through a different integration path than the pairing
//! machinery itself (plain composite boxes or polar rules, no kernels, no
//! transports).

use anyhow::{bail, Result};
use distgeo_core::quadrature::{annulus_wedge_rule, integrate_box};
use distgeo_core::{Components, Point, TensorField, TestDensity, Valence};

/// Shared composite-Gauss resolution for the box-based oracles.
fn box_cells(dim: usize) -> (Vec<usize>, usize) {
    (vec![if dim <= 2 { 16 } else { 8 }; dim], 12)
}

/// `integral of w(x) * profile(x) dx` over the density's support, where
/// `profile` includes the density amplitude.
pub fn weighted_profile_integral(
    psi: &TestDensity,
    w: impl Fn(&Point) -> f64,
) -> f64 {
    let (lo, hi) = psi.support_box();
    let dim = lo.len();
    // The bump profile is smooth but flattens at the support edge; cell
    // refinement buys more accuracy there than order. Keep 3D affordable.
    let (cells, order) = box_cells(dim);
    integrate_box(&lo, &hi, &cells, order, |x| {
        let p = Point::new(x);
        let f = psi.profile(&p);
        if f == 0.0 {
            0.0
        } else {
            w(&p) * f
        }
    })
}

/// Plain `integral of profile`.
pub fn profile_integral(psi: &TestDensity) -> f64 {
    weighted_profile_integral(psi, |_| 1.0)
}

/// Exact pairing of a smooth tensor field with the density:
/// `integral f^I(x) coeff_I(x) profile(x) dx`.
pub fn smooth_pairing(psi: &TestDensity, field: &TensorField) -> Result<f64> {
    if field.valence.dual() != psi.coeff.valence {
        bail!("density coefficient valence must be dual to the field");
    }
    let coeff = psi.coeff.clone();
    let failure = std::cell::Cell::new(false);
    let v = weighted_profile_integral(psi, |p| match field.eval(p) {
        Ok(c) => distgeo_core::chart::pair_contract(&c, &coeff),
        Err(_) => {
            failure.set(true);
            f64::NAN
        }
    });
    if failure.get() || !v.is_finite() {
        bail!("smooth pairing oracle failed to evaluate the field");
    }
    Ok(v)
}

/// Pairing of the continuous field `amp * |x - c| * d^a` against the
/// density. Polar quadrature around the kink makes the integrand smooth:
/// `r * profile` times the area element.
pub fn radial_kink_pairing(
    psi: &TestDensity,
    center: &Point,
    direction: &[f64],
    amplitude: f64,
) -> Result<f64> {
    if psi.chart.dim() != 2 {
        bail!("radial kink oracle is two-dimensional");
    }
    let proj: f64 = direction
        .iter()
        .zip(psi.coeff.as_slice())
        .map(|(d, c)| d * c)
        .sum();
    // outermost distance from the kink to the support circle
    let r_max = center.dist(&psi.center) + psi.radius;
    let rule = annulus_wedge_rule(
        [center.get(0), center.get(1)],
        0.0,
        r_max,
        0.0,
        std::f64::consts::TAU,
        32,
        32,
        10,
    );
    let mut acc = 0.0;
    for (node, w) in rule.nodes.iter().zip(&rule.weights) {
        let p = Point::new(node);
        let f = psi.profile(&p);
        if f != 0.0 {
            acc += w * amplitude * center.dist(&p) * proj * f;
        }
    }
    Ok(acc)
}

/// Pairing of `w(x) * profile(x)` over a disc around `center` covering the
/// density support; exact for weights smooth in polar coordinates there.
pub fn polar_pairing(psi: &TestDensity, center: &Point, w: impl Fn(&Point) -> f64) -> Result<f64> {
    if psi.chart.dim() != 2 {
        bail!("polar pairing oracle is two-dimensional");
    }
    let r_max = center.dist(&psi.center) + psi.radius;
    let rule = annulus_wedge_rule(
        [center.get(0), center.get(1)],
        0.0,
        r_max,
        0.0,
        std::f64::consts::TAU,
        32,
        32,
        10,
    );
    let mut acc = 0.0;
    for (node, wt) in rule.nodes.iter().zip(&rule.weights) {
        let p = Point::new(node);
        let f = psi.profile(&p);
        if f != 0.0 {
            acc += wt * w(&p) * f;
        }
    }
    Ok(acc)
}

/// Pairing of `(amp * |x1|, 0, ...)` against the density: the box is split
/// at the kink so each half integrates a smooth function.
pub fn abs_pairing(psi: &TestDensity, amplitude: f64) -> Result<f64> {
    let (lo, hi) = psi.support_box();
    let dim = lo.len();
    let coeff = psi.coeff.as_slice().to_vec();
    if coeff.len() != dim {
        bail!("abs oracle needs a one-form density coefficient");
    }
    let (cells, order) = box_cells(dim);
    let mut total = 0.0;
    for side in [-1.0f64, 1.0] {
        let mut l = lo.clone();
        let mut h = hi.clone();
        if side < 0.0 {
            h[0] = h[0].min(0.0);
        } else {
            l[0] = l[0].max(0.0);
        }
        if l[0] >= h[0] {
            continue;
        }
        total += integrate_box(&l, &h, &cells, order, |x| {
            let p = Point::new(x);
            amplitude * x[0].abs() * coeff[0] * psi.profile(&p)
        });
    }
    Ok(total)
}

/// Pairing of `(amp * sign(x1), 0, ...)` against the density: the box is
/// split at the jump so each half integrates a smooth function.
pub fn sign_pairing(psi: &TestDensity, amplitude: f64) -> Result<f64> {
    let (lo, hi) = psi.support_box();
    let dim = lo.len();
    let coeff = psi.coeff.as_slice().to_vec();
    if coeff.len() != dim {
        bail!("sign oracle needs a one-form density coefficient");
    }
    let (cells, order) = box_cells(dim);
    let mut total = 0.0;
    for side in [-1.0f64, 1.0] {
        let mut l = lo.clone();
        let mut h = hi.clone();
        if side < 0.0 {
            h[0] = h[0].min(0.0);
        } else {
            l[0] = l[0].max(0.0);
        }
        if l[0] >= h[0] {
            continue;
        }
        total += side
            * integrate_box(&l, &h, &cells, order, |x| {
                let p = Point::new(x);
                amplitude * coeff[0] * psi.profile(&p)
            });
    }
    Ok(total)
}

/// `sum_i w_i <coeff(p_i), psi(p_i)>` for a scalar delta sum.
pub fn delta_pairing(psi: &TestDensity, points: &[Point], weights: &[f64]) -> f64 {
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * psi.eval(p).scalar_value())
        .sum()
}

/// `-(d/dx1) psi at p`, the transpose of the unit-direction Lie derivative
/// acting on a scalar point mass.
pub fn minus_grad1_at(psi: &TestDensity, p: &Point, amplitude: f64) -> f64 {
    -amplitude * psi.coeff.scalar_value() * psi.profile_grad(p)[0]
}

/// Build a density whose coefficient is the (a, b) basis covector pair, for
/// pairing one component of a (0,2)-valued field.
pub fn component_density(
    psi: &TestDensity,
    a: usize,
    b: usize,
    label: &str,
) -> Result<TestDensity> {
    let dim = psi.chart.dim();
    let valence = Valence::new(2, 0);
    let mut data = vec![0.0; valence.count(dim)];
    data[a * dim + b] = 1.0;
    let coeff = Components::from_slice(valence, dim, &data);
    crate::specs::with_coeff(psi, coeff, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use distgeo_core::Chart;
    use std::sync::Arc;

    fn chart() -> Arc<Chart> {
        Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap())
    }

    #[test]
    fn profile_integral_matches_a_dense_reference() {
        let psi = TestDensity::scalar_bump(chart(), &[0.1, -0.2], 0.5, 1.3, "t").unwrap();
        let (lo, hi) = psi.support_box();
        let reference = integrate_box(&lo, &hi, &[48, 48], 12, |x| psi.profile(&Point::new(x)));
        let got = profile_integral(&psi);
        assert!(
            (got - reference).abs() <= 1e-9 * reference.abs(),
            "got {got}, reference {reference}"
        );
    }

    #[test]
    fn radial_kink_oracle_agrees_with_cartesian_splitting() {
        // away from the kink the integrand is smooth; a dense cartesian grid
        // converges slowly but bounds the polar value
        let c = chart();
        let psi0 = TestDensity::scalar_bump(c.clone(), &[0.0, 0.0], 0.5, 1.0, "t").unwrap();
        let psi = crate::specs::with_coeff(
            &psi0,
            Components::from_slice(Valence::new(0, 1), 2, &[1.0, 0.0]),
            "t",
        )
        .unwrap();
        let center = Point::new(&[0.1, 0.0]);
        let polar = radial_kink_pairing(&psi, &center, &[1.0, 0.0], 2.0).unwrap();
        let (lo, hi) = psi.support_box();
        let cart = integrate_box(&lo, &hi, &[60, 60], 8, |x| {
            let p = Point::new(x);
            2.0 * center.dist(&p) * psi.profile(&p)
        });
        assert!(
            (polar - cart).abs() <= 1e-6 * cart.abs().max(1.0),
            "polar {polar}, cartesian {cart}"
        );
    }

    #[test]
    fn sign_pairing_is_odd_in_the_density_center() {
        let c = chart();
        let mk = |x0: f64| {
            let psi0 =
                TestDensity::scalar_bump(c.clone(), &[x0, 0.0], 0.4, 1.0, "t").unwrap();
            crate::specs::with_coeff(
                &psi0,
                Components::from_slice(Valence::new(0, 1), 2, &[1.0, 0.0]),
                "t",
            )
            .unwrap()
        };
        let plus = sign_pairing(&mk(0.45), 1.0).unwrap();
        let minus = sign_pairing(&mk(-0.45), 1.0).unwrap();
        // support entirely on one side: pairing = +-integral of profile
        let mass = profile_integral(&mk(0.45));
        assert!((plus - mass).abs() < 1e-10);
        assert!((plus + minus).abs() < 1e-10);
    }
}
