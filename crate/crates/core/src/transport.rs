//! Transport operators: two-point matrices carrying fiber indices between
//! chart points. The identity operator is the default everywhere; parallel
//! transport along background geodesics is the nontrivial model, built from
//! a shooting solver plus joint RK4 integration of the transport equation.
//!
//! Index convention: `eval(x, y)` maps vectors at `y` to vectors at `x` (the
//! direction a smoothing integral needs). The covariant-slot factor is the
//! transpose-swap `eval_lower(x, y) = eval(y, x)^T`.

use crate::asymptotics::{fit_log_slope, EpsSample};
use crate::chart::{Chart, Point, SmoothVectorField, SquareMatrix, MAX_DIM};
use crate::error::{Error, Result};
use crate::fd;
use crate::kernels::EpsNet;
use serde::Serialize;
use std::sync::Arc;

/// Connection coefficients at a point: `coeffs[a][b][c]` is the upper-`a`,
/// lower-`bc` symbol.
pub type ConnCoeffs = [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM];

/// Smooth background connection given in closed form.
#[derive(Clone)]
pub struct BackgroundConnection {
    pub chart: Arc<Chart>,
    pub label: String,
    eval: Arc<dyn Fn(&Point) -> ConnCoeffs + Send + Sync>,
}

impl BackgroundConnection {
    pub fn flat(chart: Arc<Chart>) -> BackgroundConnection {
        BackgroundConnection {
            chart,
            label: "flat".into(),
            eval: Arc::new(|_| [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]),
        }
    }

    pub fn constant(chart: Arc<Chart>, coeffs: ConnCoeffs) -> BackgroundConnection {
        BackgroundConnection {
            chart,
            label: "constant".into(),
            eval: Arc::new(move |_| coeffs),
        }
    }

    pub fn custom(
        chart: Arc<Chart>,
        label: &str,
        eval: impl Fn(&Point) -> ConnCoeffs + Send + Sync + 'static,
    ) -> BackgroundConnection {
        BackgroundConnection {
            chart,
            label: label.to_string(),
            eval: Arc::new(eval),
        }
    }

    pub fn coeffs(&self, x: &Point) -> ConnCoeffs {
        (self.eval)(x)
    }

    pub fn is_flat_label(&self) -> bool {
        self.label == "flat"
    }
}

#[derive(Clone, Copy)]
struct GeoState {
    x: [f64; MAX_DIM],
    v: [f64; MAX_DIM],
    u: [[f64; MAX_DIM]; MAX_DIM],
}

impl GeoState {
    fn axpy(&mut self, a: f64, o: &GeoState, dim: usize) {
        for i in 0..dim {
            self.x[i] += a * o.x[i];
            self.v[i] += a * o.v[i];
            for j in 0..dim {
                self.u[i][j] += a * o.u[i][j];
            }
        }
    }
}

/// Right-hand side of the joint geodesic + transport system:
/// x' = v, v'^a = -G^a_bc v^b v^c, u'^a_b = -G^a_ce v^c u^e_b.
fn geo_rhs(gamma: &BackgroundConnection, s: &GeoState, dim: usize) -> GeoState {
    let g = gamma.coeffs(&Point::new(&s.x[..dim]));
    let mut out = GeoState {
        x: [0.0; MAX_DIM],
        v: [0.0; MAX_DIM],
        u: [[0.0; MAX_DIM]; MAX_DIM],
    };
    out.x[..dim].copy_from_slice(&s.v[..dim]);
    for a in 0..dim {
        let mut acc = 0.0;
        for b in 0..dim {
            for c in 0..dim {
                acc -= g[a][b][c] * s.v[b] * s.v[c];
            }
        }
        out.v[a] = acc;
        for b in 0..dim {
            let mut du = 0.0;
            for c in 0..dim {
                for e in 0..dim {
                    du -= g[a][c][e] * s.v[c] * s.u[e][b];
                }
            }
            out.u[a][b] = du;
        }
    }
    out
}

fn rk4_step(gamma: &BackgroundConnection, s: &GeoState, dt: f64, dim: usize) -> GeoState {
    let k1 = geo_rhs(gamma, s, dim);
    let mut s2 = *s;
    s2.axpy(0.5 * dt, &k1, dim);
    let k2 = geo_rhs(gamma, &s2, dim);
    let mut s3 = *s;
    s3.axpy(0.5 * dt, &k2, dim);
    let k3 = geo_rhs(gamma, &s3, dim);
    let mut s4 = *s;
    s4.axpy(dt, &k3, dim);
    let k4 = geo_rhs(gamma, &s4, dim);
    let mut out = *s;
    out.axpy(dt / 6.0, &k1, dim);
    out.axpy(dt / 3.0, &k2, dim);
    out.axpy(dt / 3.0, &k3, dim);
    out.axpy(dt / 6.0, &k4, dim);
    out
}

fn step_count(from: &Point, to: &Point) -> usize {
    let dist = from.dist(to);
    ((64.0 * dist).ceil() as usize).max(16)
}

/// Integrate the geodesic flow from `from` with initial velocity `v` over
/// unit parameter time, carrying the transport matrix along. Leaving the
/// chart box at any step is a hard error.
fn integrate_geodesic(
    gamma: &BackgroundConnection,
    from: &Point,
    v: &[f64; MAX_DIM],
    steps: usize,
    target_for_error: &Point,
) -> Result<(Point, SquareMatrix)> {
    let dim = gamma.chart.dim();
    let mut s = GeoState {
        x: [0.0; MAX_DIM],
        v: *v,
        u: [[0.0; MAX_DIM]; MAX_DIM],
    };
    s.x[..dim].copy_from_slice(from.coords());
    for i in 0..dim {
        s.u[i][i] = 1.0;
    }
    let dt = 1.0 / steps as f64;
    for _ in 0..steps {
        s = rk4_step(gamma, &s, dt, dim);
        let p = Point::new(&s.x[..dim]);
        if !gamma.chart.contains(&p) {
            return Err(Error::DomainEscape {
                from: from.coords().to_vec(),
                to: target_for_error.coords().to_vec(),
            });
        }
    }
    let end = Point::new(&s.x[..dim]);
    let mut u = SquareMatrix::zero(dim);
    for i in 0..dim {
        for j in 0..dim {
            u.set(i, j, s.u[i][j]);
        }
    }
    Ok((end, u))
}

const SHOOT_TOL: f64 = 1e-10;
const SHOOT_MAX_ITER: usize = 25;

/// Newton shooting: find the initial velocity whose unit-time geodesic from
/// `from` lands on `to`.
pub fn geodesic_shoot(
    gamma: &BackgroundConnection,
    from: &Point,
    to: &Point,
) -> Result<[f64; MAX_DIM]> {
    let dim = gamma.chart.dim();
    let steps = step_count(from, to);
    let mut v = [0.0; MAX_DIM];
    for i in 0..dim {
        v[i] = to.get(i) - from.get(i);
    }
    let mut residual = f64::INFINITY;
    for it in 0..SHOOT_MAX_ITER {
        let (end, _) = integrate_geodesic(gamma, from, &v, steps, to)?;
        let mut f = [0.0; MAX_DIM];
        residual = 0.0;
        for i in 0..dim {
            f[i] = end.get(i) - to.get(i);
            residual += f[i] * f[i];
        }
        residual = residual.sqrt();
        if residual <= SHOOT_TOL {
            return Ok(v);
        }
        let vnorm = v[..dim].iter().map(|a| a * a).sum::<f64>().sqrt();
        let h = 1e-6 * (1.0 + vnorm);
        let mut jac = SquareMatrix::zero(dim);
        for k in 0..dim {
            let mut vk = v;
            vk[k] += h;
            let (endk, _) = integrate_geodesic(gamma, from, &vk, steps, to)?;
            for i in 0..dim {
                jac.set(i, k, (endk.get(i) - end.get(i)) / h);
            }
        }
        let jinv = jac.inverse(1e-14).map_err(|_| Error::NoGeodesic {
            from: from.coords().to_vec(),
            to: to.coords().to_vec(),
            iterations: it + 1,
            residual,
        })?;
        for i in 0..dim {
            let mut dv = 0.0;
            for k in 0..dim {
                dv += jinv.0.get(i, k) * f[k];
            }
            v[i] -= dv;
        }
    }
    Err(Error::NoGeodesic {
        from: from.coords().to_vec(),
        to: to.coords().to_vec(),
        iterations: SHOOT_MAX_ITER,
        residual,
    })
}

/// Point at parameter `t` on the connecting geodesic.
pub fn geodesic_point_between(
    gamma: &BackgroundConnection,
    from: &Point,
    to: &Point,
    t: f64,
) -> Result<Point> {
    let v = geodesic_shoot(gamma, from, to)?;
    let dim = gamma.chart.dim();
    let mut vt = [0.0; MAX_DIM];
    for i in 0..dim {
        vt[i] = v[i] * t;
    }
    let steps = step_count(from, to);
    let (end, _) = integrate_geodesic(gamma, from, &vt, steps, to)?;
    Ok(end)
}

/// Transport of a frame along the straight coordinate segment from `from`
/// to `to` (not a geodesic in general); for constant coefficients this has
/// a matrix-exponential closed form.
pub fn transport_along_line(
    gamma: &BackgroundConnection,
    from: &Point,
    to: &Point,
    steps: usize,
) -> Result<SquareMatrix> {
    let dim = gamma.chart.dim();
    let mut tangent = [0.0; MAX_DIM];
    for i in 0..dim {
        tangent[i] = to.get(i) - from.get(i);
    }
    let mut u = SquareMatrix::identity(dim);
    let dt = 1.0 / steps as f64;
    // RK4 on u' = -G(c(t)) tangent u along c(t) = from + t (to - from).
    let rhs = |t: f64, u: &SquareMatrix| -> SquareMatrix {
        let mut c = [0.0; MAX_DIM];
        for i in 0..dim {
            c[i] = from.get(i) + t * tangent[i];
        }
        let g = gamma.coeffs(&Point::new(&c[..dim]));
        let mut du = SquareMatrix::zero(dim);
        for a in 0..dim {
            for b in 0..dim {
                let mut acc = 0.0;
                for cidx in 0..dim {
                    for e in 0..dim {
                        acc -= g[a][cidx][e] * tangent[cidx] * u.get(e, b);
                    }
                }
                du.set(a, b, acc);
            }
        }
        du
    };
    let mat_axpy = |m: &mut SquareMatrix, a: f64, o: &SquareMatrix| {
        for i in 0..dim {
            for j in 0..dim {
                m.set(i, j, m.get(i, j) + a * o.get(i, j));
            }
        }
    };
    for s in 0..steps {
        let t = s as f64 * dt;
        let k1 = rhs(t, &u);
        let mut u2 = u;
        mat_axpy(&mut u2, 0.5 * dt, &k1);
        let k2 = rhs(t + 0.5 * dt, &u2);
        let mut u3 = u;
        mat_axpy(&mut u3, 0.5 * dt, &k2);
        let k3 = rhs(t + 0.5 * dt, &u3);
        let mut u4 = u;
        mat_axpy(&mut u4, dt, &k3);
        let k4 = rhs(t + dt, &u4);
        mat_axpy(&mut u, dt / 6.0, &k1);
        mat_axpy(&mut u, dt / 3.0, &k2);
        mat_axpy(&mut u, dt / 3.0, &k3);
        mat_axpy(&mut u, dt / 6.0, &k4);
    }
    Ok(u)
}

type TransportFn = dyn Fn(&Point, &Point) -> Result<SquareMatrix> + Send + Sync;

/// A two-point transport operator. `eval(x, y)` carries fiber data from `y`
/// to `x`; it is the identity on the diagonal.
#[derive(Clone)]
pub struct TransportOperator {
    pub chart: Arc<Chart>,
    pub label: String,
    identity: bool,
    eval: Arc<TransportFn>,
}

impl TransportOperator {
    pub fn identity(chart: Arc<Chart>) -> TransportOperator {
        let dim = chart.dim();
        TransportOperator {
            chart,
            label: "identity".into(),
            identity: true,
            eval: Arc::new(move |_, _| Ok(SquareMatrix::identity(dim))),
        }
    }

    pub fn custom(
        chart: Arc<Chart>,
        label: &str,
        eval: impl Fn(&Point, &Point) -> Result<SquareMatrix> + Send + Sync + 'static,
    ) -> TransportOperator {
        TransportOperator {
            chart,
            label: label.to_string(),
            identity: false,
            eval: Arc::new(eval),
        }
    }

    /// Exact identity operators let integrators skip the fiber factors.
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn eval(&self, x: &Point, y: &Point) -> Result<SquareMatrix> {
        (self.eval)(x, y)
    }

    /// Covariant-slot factor: transpose-swap of the vector factor.
    pub fn eval_lower(&self, x: &Point, y: &Point) -> Result<SquareMatrix> {
        Ok(self.eval(y, x)?.transpose())
    }
}

/// Parallel transport along connecting geodesics of the background.
pub fn parallel_transport(gamma: &BackgroundConnection) -> TransportOperator {
    let g = gamma.clone();
    let dim = gamma.chart.dim();
    TransportOperator {
        chart: gamma.chart.clone(),
        label: format!("parallel[{}]", gamma.label),
        identity: false,
        eval: Arc::new(move |x, y| {
            if x == y {
                return Ok(SquareMatrix::identity(dim));
            }
            // Transport FROM y TO x: shoot from y, carry the frame along.
            let v = geodesic_shoot(&g, y, x)?;
            let steps = step_count(y, x);
            let (_, u) = integrate_geodesic(&g, y, &v, steps, x)?;
            Ok(u)
        }),
    }
}

type PerturbMatFn = dyn Fn(&Point, &Point) -> Result<SquareMatrix> + Send + Sync;

/// A transport-direction perturbation: same call shape as an operator but
/// vanishing on the diagonal.
#[derive(Clone)]
pub struct TransportPerturbation {
    pub chart: Arc<Chart>,
    pub label: String,
    eval: Arc<PerturbMatFn>,
}

impl TransportPerturbation {
    pub fn custom(
        chart: Arc<Chart>,
        label: &str,
        eval: impl Fn(&Point, &Point) -> Result<SquareMatrix> + Send + Sync + 'static,
    ) -> TransportPerturbation {
        TransportPerturbation {
            chart,
            label: label.to_string(),
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, x: &Point, y: &Point) -> Result<SquareMatrix> {
        (self.eval)(x, y)
    }

    /// Covariant-slot perturbation factor, by the same transpose-swap as the
    /// operator itself.
    pub fn eval_lower(&self, x: &Point, y: &Point) -> Result<SquareMatrix> {
        Ok(self.eval(y, x)?.transpose())
    }
}

/// Lie derivative of a transport operator along a smooth direction, split
/// into the part moving the base (first) argument and the part moving the
/// fiber (second) argument. The sum vanishes on the diagonal, making it a
/// valid perturbation direction.
#[derive(Clone)]
pub struct TransportLieDerivative {
    pub op: TransportOperator,
    pub direction: SmoothVectorField,
    step: f64,
}

pub fn transport_lie_derivative(
    op: &TransportOperator,
    direction: &SmoothVectorField,
    step: Option<f64>,
) -> TransportLieDerivative {
    let step = step.unwrap_or(1e-5 * op.chart.diameter());
    TransportLieDerivative {
        op: op.clone(),
        direction: direction.clone(),
        step,
    }
}

fn matrix_to_vec(m: &SquareMatrix, dim: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            v.push(m.get(i, j));
        }
    }
    v
}

fn vec_to_matrix(v: &[f64], dim: usize) -> SquareMatrix {
    let mut m = SquareMatrix::zero(dim);
    for i in 0..dim {
        for j in 0..dim {
            m.set(i, j, v[i * dim + j]);
        }
    }
    m
}

impl TransportLieDerivative {
    /// Flow in the first slot: `X^c(x) d_x^c U^a_b - (d_c X^a)(x) U^c_b`.
    pub fn base_part(&self, x: &Point, y: &Point) -> Result<SquareMatrix> {
        let dim = self.op.chart.dim();
        let u = self.op.eval(x, y)?;
        let vx = self.direction.value(x);
        let jx = self.direction.jacobian(x);
        let mut out = SquareMatrix::zero(dim);
        for c in 0..dim {
            if vx[c] == 0.0 {
                continue;
            }
            let du = fd::central1(
                |t| Ok(matrix_to_vec(&self.op.eval(&x.offset(c, t), y)?, dim)),
                self.step,
                2,
            )?;
            let du = vec_to_matrix(&du, dim);
            for a in 0..dim {
                for b in 0..dim {
                    out.set(a, b, out.get(a, b) + vx[c] * du.get(a, b));
                }
            }
        }
        for a in 0..dim {
            for b in 0..dim {
                let mut acc = out.get(a, b);
                for c in 0..dim {
                    acc -= jx[a][c] * u.get(c, b);
                }
                out.set(a, b, acc);
            }
        }
        Ok(out)
    }

    /// Flow in the second slot: `X^c(y) d_y^c U^a_b + U^a_c (d_b X^c)(y)`.
    pub fn fiber_part(&self, x: &Point, y: &Point) -> Result<SquareMatrix> {
        let dim = self.op.chart.dim();
        let u = self.op.eval(x, y)?;
        let vy = self.direction.value(y);
        let jy = self.direction.jacobian(y);
        let mut out = SquareMatrix::zero(dim);
        for c in 0..dim {
            if vy[c] == 0.0 {
                continue;
            }
            let du = fd::central1(
                |t| Ok(matrix_to_vec(&self.op.eval(x, &y.offset(c, t))?, dim)),
                self.step,
                2,
            )?;
            let du = vec_to_matrix(&du, dim);
            for a in 0..dim {
                for b in 0..dim {
                    out.set(a, b, out.get(a, b) + vy[c] * du.get(a, b));
                }
            }
        }
        for a in 0..dim {
            for b in 0..dim {
                let mut acc = out.get(a, b);
                for c in 0..dim {
                    acc += u.get(a, c) * jy[c][b];
                }
                out.set(a, b, acc);
            }
        }
        Ok(out)
    }

    pub fn total(&self, x: &Point, y: &Point) -> Result<SquareMatrix> {
        let dim = self.op.chart.dim();
        let b = self.base_part(x, y)?;
        let f = self.fiber_part(x, y)?;
        let mut out = SquareMatrix::zero(dim);
        for i in 0..dim {
            for j in 0..dim {
                out.set(i, j, b.get(i, j) + f.get(i, j));
            }
        }
        Ok(out)
    }

    pub fn as_perturbation(&self) -> TransportPerturbation {
        let me = self.clone();
        TransportPerturbation {
            chart: self.op.chart.clone(),
            label: format!("lie[{} along {}]", self.op.label, self.direction.label),
            eval: Arc::new(move |x, y| me.total(x, y)),
        }
    }
}

/// Admissibility probe: sup of near-diagonal mixed derivatives of an
/// (optionally eps-dependent) operator family over a region, per scale, with
/// a boundedness verdict from the fitted log-log slope.
#[derive(Clone, Debug, Serialize)]
pub struct AdmissibilityReport {
    pub sups_by_eps: Vec<EpsSample>,
    pub slope: Option<f64>,
    pub bounded: bool,
    pub x_order: usize,
    pub y_order: usize,
}

pub fn check_admissibility(
    family: &dyn Fn(f64) -> TransportOperator,
    region_lo: &[f64],
    region_hi: &[f64],
    grid: &[usize],
    net: &EpsNet,
    x_order: usize,
    y_order: usize,
) -> Result<AdmissibilityReport> {
    if x_order > 2 || y_order > 2 {
        return Err(Error::invalid("admissibility derivative orders capped at 2"));
    }
    let points = crate::chart::grid_points(region_lo, region_hi, grid);
    let mut sups = Vec::new();
    for &eps in &net.values() {
        let op = family(eps);
        let dim = op.chart.dim();
        let h = eps / 8.0;
        let mut sup: f64 = 0.0;
        for x in &points {
            for dir in 0..dim {
                let y = x.offset(dir, eps / 2.0);
                for ax in 0..dim {
                    for ay in 0..dim {
                        let sample = |sx: f64, sy: f64| -> Result<Vec<f64>> {
                            let xs = x.offset(ax, sx);
                            let ys = y.offset(ay, sy);
                            Ok(matrix_to_vec(&op.eval(&xs, &ys)?, dim))
                        };
                        let in_y = |sx: f64| -> Result<Vec<f64>> {
                            match y_order {
                                0 => sample(sx, 0.0),
                                1 => fd::central1(|t| sample(sx, t), h, 2),
                                _ => fd::central2(|t| sample(sx, t), h, 2),
                            }
                        };
                        let full = match x_order {
                            0 => in_y(0.0)?,
                            1 => fd::central1(in_y, h, 2)?,
                            _ => fd::central2(in_y, h, 2)?,
                        };
                        for v in full {
                            sup = sup.max(v.abs());
                        }
                        if x_order == 0 && y_order == 0 {
                            break;
                        }
                    }
                    if x_order == 0 {
                        break;
                    }
                }
            }
        }
        sups.push(EpsSample { eps, value: sup });
    }
    let pairs: Vec<(f64, f64)> = sups.iter().map(|s| (s.eps, s.value)).collect();
    let fit = fit_log_slope(&pairs);
    let tiny = sups.iter().all(|s| s.value < 1e-100);
    let bounded = tiny || fit.as_ref().map_or(false, |f| f.slope >= -0.2);
    Ok(AdmissibilityReport {
        sups_by_eps: sups,
        slope: fit.map(|f| f.slope),
        bounded,
        x_order,
        y_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> Arc<Chart> {
        Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap())
    }

    #[test]
    fn flat_parallel_transport_is_identity() {
        let gamma = BackgroundConnection::flat(chart());
        let op = parallel_transport(&gamma);
        let pairs = [
            (Point::new(&[0.0, 0.0]), Point::new(&[0.4, -0.3])),
            (Point::new(&[-0.5, 0.2]), Point::new(&[0.1, 0.6])),
        ];
        for (x, y) in pairs {
            let u = op.eval(&x, &y).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((u.get(i, j) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn diagonal_transport_is_exact_identity() {
        let mut g = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        g[0][0][1] = 0.3;
        g[1][1][1] = -0.2;
        let gamma = BackgroundConnection::constant(chart(), g);
        let op = parallel_transport(&gamma);
        let x = Point::new(&[0.2, -0.1]);
        let u = op.eval(&x, &x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(u.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    /// Matrix exponential by scaling and squaring of the Taylor series;
    /// test-local oracle for constant-coefficient straight-line transport.
    fn matexp(a: &SquareMatrix, dim: usize) -> SquareMatrix {
        let mut norm: f64 = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                norm = norm.max(a.get(i, j).abs());
            }
        }
        let s = ((norm * dim as f64).log2().ceil().max(0.0)) as u32 + 4;
        let mut b = *a;
        let scale = 1.0 / 2f64.powi(s as i32);
        for i in 0..dim {
            for j in 0..dim {
                b.set(i, j, b.get(i, j) * scale);
            }
        }
        let mut result = SquareMatrix::identity(dim);
        let mut term = SquareMatrix::identity(dim);
        for k in 1..=20 {
            // term_k = term_{k-1} * b / k = b^k / k!
            term = term.mul(&b);
            for i in 0..dim {
                for j in 0..dim {
                    term.set(i, j, term.get(i, j) / k as f64);
                }
            }
            for i in 0..dim {
                for j in 0..dim {
                    result.set(i, j, result.get(i, j) + term.get(i, j));
                }
            }
        }
        let mut out = result;
        for _ in 0..s {
            out = out.mul(&out);
        }
        out
    }

    #[test]
    fn straight_line_transport_matches_matrix_exponential() {
        // Constant coefficients, straight segment: u(1) = exp(-A) with
        // A^a_e = G^a_ce (to - from)^c.
        let mut g = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        g[0][0][0] = 0.8;
        g[0][1][1] = -0.4;
        g[1][0][1] = 0.6;
        g[1][1][0] = 0.25;
        let gamma = BackgroundConnection::constant(chart(), g);
        let from = Point::new(&[-0.3, -0.2]);
        let to = Point::new(&[0.4, 0.3]);
        let u = transport_along_line(&gamma, &from, &to, 128).unwrap();
        let mut a = SquareMatrix::zero(2);
        for i in 0..2 {
            for e in 0..2 {
                let mut acc = 0.0;
                for c in 0..2 {
                    acc -= g[i][c][e] * (to.get(c) - from.get(c));
                }
                a.set(i, e, acc);
            }
        }
        let oracle = matexp(&a, 2);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (u.get(i, j) - oracle.get(i, j)).abs() < 1e-8,
                    "({i},{j}): {} vs {}",
                    u.get(i, j),
                    oracle.get(i, j)
                );
            }
        }
    }

    #[test]
    fn flat_shooting_returns_displacement_exactly() {
        let gamma = BackgroundConnection::flat(chart());
        let from = Point::new(&[-0.2, 0.1]);
        let to = Point::new(&[0.3, -0.4]);
        let v = geodesic_shoot(&gamma, &from, &to).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-12);
        assert!((v[1] - (-0.5)).abs() < 1e-12);
    }

    fn curved_connection() -> BackgroundConnection {
        // Connection of the metric exp(2 phi) delta with phi = 0.3 x1:
        // nonconstant enough to produce genuinely curved transport.
        BackgroundConnection::custom(chart(), "conformal", |p| {
            let dphi = [0.3, 0.0];
            let _ = p;
            let mut g = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        let mut v = 0.0;
                        if a == b {
                            v += dphi[c];
                        }
                        if a == c {
                            v += dphi[b];
                        }
                        if b == c {
                            v -= dphi[a];
                        }
                        g[a][b][c] = v;
                    }
                }
            }
            g
        })
    }

    #[test]
    fn transport_composes_along_the_geodesic() {
        let gamma = curved_connection();
        let op = parallel_transport(&gamma);
        let y = Point::new(&[-0.4, -0.3]);
        let x = Point::new(&[0.5, 0.4]);
        let m = geodesic_point_between(&gamma, &y, &x, 0.5).unwrap();
        let whole = op.eval(&x, &y).unwrap();
        let first = op.eval(&m, &y).unwrap();
        let second = op.eval(&x, &m).unwrap();
        let composed = second.mul(&first);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (whole.get(i, j) - composed.get(i, j)).abs() < 1e-8,
                    "({i},{j}): {} vs {}",
                    whole.get(i, j),
                    composed.get(i, j)
                );
            }
        }
    }

    #[test]
    fn transport_inverse_is_reverse_transport() {
        let gamma = curved_connection();
        let op = parallel_transport(&gamma);
        let x = Point::new(&[0.3, 0.2]);
        let y = Point::new(&[-0.2, -0.4]);
        let u = op.eval(&x, &y).unwrap();
        let v = op.eval(&y, &x).unwrap();
        let prod = u.mul(&v);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lower_factor_preserves_pairings() {
        // Vector goes with eval, covector with eval_lower; their contraction
        // must be transport invariant.
        let gamma = curved_connection();
        let op = parallel_transport(&gamma);
        let x = Point::new(&[0.3, 0.1]);
        let y = Point::new(&[-0.1, -0.2]);
        let u = op.eval(&x, &y).unwrap();
        let l = op.eval_lower(&x, &y).unwrap();
        let v = [0.7, -0.4];
        let w = [0.5, 1.2];
        let before: f64 = (0..2).map(|i| v[i] * w[i]).sum();
        let mut after = 0.0;
        for a in 0..2 {
            let tv: f64 = (0..2).map(|b| u.get(a, b) * v[b]).sum();
            let tw: f64 = (0..2).map(|b| l.get(a, b) * w[b]).sum();
            after += tv * tw;
        }
        assert!((after - before).abs() < 1e-8, "{after} vs {before}");
    }

    #[test]
    fn geodesic_escape_is_reported() {
        let mut g = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        g[1][0][0] = -10.0;
        let small = Arc::new(Chart::new(&[-0.5, -0.5], &[0.5, 0.5]).unwrap());
        let gamma = BackgroundConnection::constant(small, g);
        let from = Point::new(&[-0.4, 0.0]);
        let to = Point::new(&[0.4, 0.0]);
        let err = geodesic_shoot(&gamma, &from, &to).unwrap_err();
        assert!(matches!(err, Error::DomainEscape { .. }), "{err:?}");
    }

    #[test]
    fn lie_of_identity_operator_vanishes() {
        let c = chart();
        let op = TransportOperator::identity(c.clone());
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        a[0][1] = 1.3;
        a[1][0] = -0.4;
        a[1][1] = 0.7;
        let x_dir = SmoothVectorField::linear(c, a, [0.2, -0.1, 0.0, 0.0]);
        let lie = transport_lie_derivative(&op, &x_dir, None);
        let x = Point::new(&[0.2, -0.3]);
        let y = Point::new(&[0.1, 0.4]);
        let t = lie.total(&x, &y).unwrap();
        let jx = x_dir.jacobian(&x);
        let jy = x_dir.jacobian(&y);
        for i in 0..2 {
            for j in 0..2 {
                // base contributes -J(x), fiber +J(y); for a linear field the
                // two cancel exactly, leaving zero for the identity operator.
                let oracle = jy[i][j] - jx[i][j];
                assert!(oracle.abs() < 1e-15);
                assert!(
                    (t.get(i, j) - oracle).abs() < 1e-10,
                    "({i},{j}): {} vs {oracle}",
                    t.get(i, j)
                );
            }
        }
    }

    #[test]
    fn lie_total_vanishes_on_diagonal() {
        // Smooth custom operator: u = I + (x - y) outer c. Total Lie
        // derivative on the diagonal must vanish for any direction.
        let c = chart();
        let op = TransportOperator::custom(c.clone(), "affine", |x, y| {
            let mut u = SquareMatrix::identity(2);
            let cvec = [0.4, -0.7];
            for a in 0..2 {
                for b in 0..2 {
                    u.set(a, b, u.get(a, b) + (x.get(a) - y.get(a)) * cvec[b]);
                }
            }
            Ok(u)
        });
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        a[0][0] = 0.5;
        a[0][1] = -1.1;
        a[1][0] = 0.3;
        let x_dir = SmoothVectorField::linear(c, a, [0.15, 0.25, 0.0, 0.0]);
        let lie = transport_lie_derivative(&op, &x_dir, Some(1e-5));
        let p = Point::new(&[0.1, -0.2]);
        let t = lie.total(&p, &p).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(t.get(i, j).abs() < 1e-9, "({i},{j}): {}", t.get(i, j));
            }
        }
    }

    #[test]
    fn identity_family_is_admissible() {
        let c = chart();
        let net = EpsNet::new(0.1, 0.5, 5).unwrap();
        let fam = move |_eps: f64| TransportOperator::identity(c.clone());
        let report =
            check_admissibility(&fam, &[-0.3, -0.3], &[0.3, 0.3], &[3, 3], &net, 1, 1).unwrap();
        assert!(report.bounded, "{report:?}");
    }

    #[test]
    fn blowing_up_family_fails_admissibility() {
        let c = chart();
        let net = EpsNet::new(0.1, 0.5, 5).unwrap();
        let fam = move |eps: f64| {
            let c2 = c.clone();
            TransportOperator::custom(c2, "blowup", move |x, y| {
                let mut u = SquareMatrix::identity(2);
                let d = x.dist(y);
                u.set(0, 1, (1.0 / eps) * (-d * d / (eps * eps)).exp());
                Ok(u)
            })
        };
        let report =
            check_admissibility(&fam, &[-0.3, -0.3], &[0.3, 0.3], &[3, 3], &net, 0, 0).unwrap();
        assert!(!report.bounded, "{report:?}");
        assert!(report.slope.unwrap() < -0.5);
    }
}
