//! Centered finite-difference stencils, generic over anything that supports
//! scaled accumulation. Orders 2 and 4 only; callers choose the step.

use crate::chart::Components;
use crate::error::{Error, Result};

/// Minimal linear-space interface so stencils work on scalars, component
/// arrays, and raw vectors alike.
pub trait Lin: Clone {
    fn scale_mut(&mut self, a: f64);
    fn axpy_in(&mut self, a: f64, other: &Self);
}

impl Lin for f64 {
    fn scale_mut(&mut self, a: f64) {
        *self *= a;
    }
    fn axpy_in(&mut self, a: f64, other: &Self) {
        *self += a * other;
    }
}

impl Lin for Components {
    fn scale_mut(&mut self, a: f64) {
        Components::scale_mut(self, a);
    }
    fn axpy_in(&mut self, a: f64, other: &Self) {
        self.axpy(a, other);
    }
}

impl Lin for Vec<f64> {
    fn scale_mut(&mut self, a: f64) {
        for v in self.iter_mut() {
            *v *= a;
        }
    }
    fn axpy_in(&mut self, a: f64, other: &Self) {
        for (s, o) in self.iter_mut().zip(other) {
            *s += a * o;
        }
    }
}

/// First derivative at offset 0 of `f` sampled at multiples of `h`.
pub fn central1<T: Lin>(
    mut f: impl FnMut(f64) -> Result<T>,
    h: f64,
    order: usize,
) -> Result<T> {
    match order {
        2 => {
            let mut out = f(h)?;
            out.scale_mut(1.0 / (2.0 * h));
            out.axpy_in(-1.0 / (2.0 * h), &f(-h)?);
            Ok(out)
        }
        4 => {
            // (-f(2h) + 8 f(h) - 8 f(-h) + f(-2h)) / (12 h)
            let mut out = f(2.0 * h)?;
            out.scale_mut(-1.0 / (12.0 * h));
            out.axpy_in(8.0 / (12.0 * h), &f(h)?);
            out.axpy_in(-8.0 / (12.0 * h), &f(-h)?);
            out.axpy_in(1.0 / (12.0 * h), &f(-2.0 * h)?);
            Ok(out)
        }
        _ => Err(Error::invalid("stencil order must be 2 or 4")),
    }
}

/// Second derivative at offset 0.
pub fn central2<T: Lin>(
    mut f: impl FnMut(f64) -> Result<T>,
    h: f64,
    order: usize,
) -> Result<T> {
    match order {
        2 => {
            // (f(h) - 2 f(0) + f(-h)) / h^2
            let mut out = f(h)?;
            out.scale_mut(1.0 / (h * h));
            out.axpy_in(-2.0 / (h * h), &f(0.0)?);
            out.axpy_in(1.0 / (h * h), &f(-h)?);
            Ok(out)
        }
        4 => {
            // (-f(2h) + 16 f(h) - 30 f(0) + 16 f(-h) - f(-2h)) / (12 h^2)
            let s = 1.0 / (12.0 * h * h);
            let mut out = f(2.0 * h)?;
            out.scale_mut(-s);
            out.axpy_in(16.0 * s, &f(h)?);
            out.axpy_in(-30.0 * s, &f(0.0)?);
            out.axpy_in(16.0 * s, &f(-h)?);
            out.axpy_in(-s, &f(-2.0 * h)?);
            Ok(out)
        }
        _ => Err(Error::invalid("stencil order must be 2 or 4")),
    }
}

/// Offsets (in units of `h`) touched by a stencil of the given derivative
/// count and order; used for boundary-margin checks.
pub fn stencil_reach(order: usize) -> f64 {
    if order == 4 {
        2.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central1_exact_on_quadratics() {
        // d/dt (3t^2 + 2t + 1) at 0 = 2, exactly for a symmetric stencil.
        let f = |t: f64| Ok(3.0 * t * t + 2.0 * t + 1.0);
        let d = central1(f, 0.37, 2).unwrap();
        assert!((d - 2.0).abs() < 1e-14);
    }

    #[test]
    fn central1_order4_exact_on_quartics() {
        let f = |t: f64| Ok(t * t * t * t + 2.0 * t * t * t - t);
        let d = central1(f, 0.25, 4).unwrap();
        // derivative at 0 is -1; order-4 stencil is exact through degree 4.
        assert!((d - (-1.0)).abs() < 1e-13, "{d}");
    }

    #[test]
    fn central2_matches_cosine_oracle() {
        let f = |t: f64| Ok((1.3 + t).sin());
        let h = 1e-3;
        let d2 = central2(f, h, 2).unwrap();
        let oracle = -(1.3f64).sin();
        assert!((d2 - oracle).abs() < 2.0 * h * h, "{d2} vs {oracle}");
        let d4 = central2(f, 1e-2, 4).unwrap();
        assert!((d4 - oracle).abs() < 1e-8, "{d4} vs {oracle}");
    }

    #[test]
    fn error_from_sample_propagates() {
        let f = |t: f64| {
            if t > 0.0 {
                Err(Error::invalid("boom"))
            } else {
                Ok(t)
            }
        };
        assert!(central1(f, 0.1, 2).is_err());
    }
}
