//! Tensor calculus on generalized fields: products, contractions, Lie and
//! covariant derivatives, the metric-compatible connection correction, and
//! the curvature stack built on top of it.
//!
//! Everything here acts scale-by-scale on smooth representatives. The
//! generalized Lie derivative subtracts the argument movement (transport and
//! kernel directions) so that it commutes with the smoothing embedding; the
//! connection and curvature operators difference representatives with
//! explicitly scheduled steps, since the representatives' own length scale
//! shrinks with eps.

use crate::chart::{
    Chart, Components, Point, SmoothVectorField, SmoothnessClass, SquareMatrix, TensorField,
    Valence,
};
use crate::embed::{EvalCtx, GeneralizedField, KernelHandle, Node};
use crate::error::{Error, Result};
use crate::fd;
use crate::kernels::kernel_lie_derivative;
use crate::transport::{transport_lie_derivative, BackgroundConnection};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Largest total rank the dense component layout is allowed to reach.
const MAX_RANK: usize = 6;

// ---------------------------------------------------------------------------
// component-level operations

/// Outer product; upper indices of `a` come before those of `b`, likewise
/// for lower indices.
pub(crate) fn comp_product(a: &Components, b: &Components, dim: usize) -> Components {
    let (ra, sa) = (a.valence.up as usize, a.valence.down as usize);
    let (rb, sb) = (b.valence.up as usize, b.valence.down as usize);
    let valence = Valence::new(ra + rb, sa + sb);
    let mut out = Components::zeros(valence, dim);
    let mut da = [0usize; 8];
    let mut db = [0usize; 8];
    let mut dc = [0usize; 8];
    for fa in 0..a.len() {
        a.decode(fa, &mut da[..ra + sa]);
        let va = a.as_slice()[fa];
        if va == 0.0 {
            continue;
        }
        for fb in 0..b.len() {
            b.decode(fb, &mut db[..rb + sb]);
            dc[..ra].copy_from_slice(&da[..ra]);
            dc[ra..ra + rb].copy_from_slice(&db[..rb]);
            dc[ra + rb..ra + rb + sa].copy_from_slice(&da[ra..ra + sa]);
            dc[ra + rb + sa..ra + rb + sa + sb].copy_from_slice(&db[rb..rb + sb]);
            let idx = out.flat_index(&dc[..ra + rb + sa + sb]);
            out.as_mut_slice()[idx] = va * b.as_slice()[fb];
        }
    }
    out
}

/// Trace over one upper and one lower slot.
pub(crate) fn comp_contract(t: &Components, up_slot: usize, down_slot: usize, dim: usize) -> Components {
    let r = t.valence.up as usize;
    let s = t.valence.down as usize;
    let valence = Valence::new(r - 1, s - 1);
    let mut out = Components::zeros(valence, dim);
    let mut d = [0usize; 8];
    let mut od = [0usize; 8];
    for flat in 0..t.len() {
        t.decode(flat, &mut d[..r + s]);
        if d[up_slot] != d[r + down_slot] {
            continue;
        }
        let mut k = 0;
        for i in 0..r {
            if i != up_slot {
                od[k] = d[i];
                k += 1;
            }
        }
        for j in 0..s {
            if j != down_slot {
                od[k] = d[r + j];
                k += 1;
            }
        }
        let idx = out.flat_index(&od[..k]);
        out.as_mut_slice()[idx] += t.as_slice()[flat];
    }
    out
}

fn merged_class(a: SmoothnessClass, b: SmoothnessClass) -> SmoothnessClass {
    match (a, b) {
        (SmoothnessClass::Regularized(e), _) | (_, SmoothnessClass::Regularized(e)) => {
            SmoothnessClass::Regularized(e)
        }
        (SmoothnessClass::Sampled, _) | (_, SmoothnessClass::Sampled) => SmoothnessClass::Sampled,
        _ => SmoothnessClass::ClosedForm,
    }
}

pub(crate) fn product_fields(a: &TensorField, b: &TensorField) -> TensorField {
    let fa = a.clone();
    let fb = b.clone();
    let dim = a.chart.dim();
    let valence = Valence::new(
        a.valence.up as usize + b.valence.up as usize,
        a.valence.down as usize + b.valence.down as usize,
    );
    TensorField::new(
        a.chart.clone(),
        valence,
        merged_class(a.class, b.class),
        move |x| Ok(comp_product(&fa.eval(x)?, &fb.eval(x)?, dim)),
    )
}

pub(crate) fn contract_field(
    f: &TensorField,
    up_slot: usize,
    down_slot: usize,
) -> Result<TensorField> {
    if up_slot >= f.valence.up as usize || down_slot >= f.valence.down as usize {
        return Err(Error::IndexOutOfRange {
            index: up_slot.max(down_slot),
            rank_up: f.valence.up as usize,
            rank_down: f.valence.down as usize,
        });
    }
    let inner = f.clone();
    let dim = f.chart.dim();
    let valence = Valence::new(f.valence.up as usize - 1, f.valence.down as usize - 1);
    Ok(TensorField::new(
        f.chart.clone(),
        valence,
        f.class,
        move |x| Ok(comp_contract(&inner.eval(x)?, up_slot, down_slot, dim)),
    ))
}

// ---------------------------------------------------------------------------
// generalized tensor algebra

pub fn tensor_product(a: &GeneralizedField, b: &GeneralizedField) -> Result<GeneralizedField> {
    if a.chart.dim() != b.chart.dim() {
        return Err(Error::invalid("tensor product across different charts"));
    }
    let up = a.valence.up as usize + b.valence.up as usize;
    let down = a.valence.down as usize + b.valence.down as usize;
    if up + down > MAX_RANK {
        return Err(Error::invalid(format!(
            "product rank {} exceeds the supported maximum {MAX_RANK}",
            up + down
        )));
    }
    Ok(GeneralizedField::from_node(
        a.chart.clone(),
        Valence::new(up, down),
        Node::Product(a.clone(), b.clone()),
    ))
}

pub fn contract(
    t: &GeneralizedField,
    up_slot: usize,
    down_slot: usize,
) -> Result<GeneralizedField> {
    if up_slot >= t.valence.up as usize || down_slot >= t.valence.down as usize {
        return Err(Error::IndexOutOfRange {
            index: up_slot.max(down_slot),
            rank_up: t.valence.up as usize,
            rank_down: t.valence.down as usize,
        });
    }
    Ok(GeneralizedField::from_node(
        t.chart.clone(),
        Valence::new(t.valence.up as usize - 1, t.valence.down as usize - 1),
        Node::Contract {
            inner: t.clone(),
            up_slot,
            down_slot,
        },
    ))
}

// ---------------------------------------------------------------------------
// Lie derivatives

/// Classical Lie derivative of a smooth representative along a vector field
/// with closed-form Jacobian; partials by centered differences.
pub fn lie_derivative_rep(
    rep: &TensorField,
    direction: &SmoothVectorField,
    step: Option<f64>,
) -> TensorField {
    let inner = rep.clone();
    let dir = direction.clone();
    TensorField::new(
        rep.chart.clone(),
        rep.valence,
        rep.class,
        move |x| {
            let h = step.unwrap_or_else(|| inner.class.default_step(&inner.chart));
            inner.chart.require_margin(x, h)?;
            let dim = inner.chart.dim();
            let r = inner.valence.up as usize;
            let s = inner.valence.down as usize;
            let mut out = Components::zeros(inner.valence, dim);
            let v = dir.value(x);
            for c in 0..dim {
                let partial = fd::central1(|t| inner.eval(&x.offset(c, t)), h, 2)?;
                out.axpy(v[c], &partial);
            }
            if r + s > 0 {
                let t0 = inner.eval(x)?;
                let j = dir.jacobian(x);
                let mut d = [0usize; 8];
                let mut other = [0usize; 8];
                for fo in 0..t0.len() {
                    t0.decode(fo, &mut d[..r + s]);
                    let mut corr = 0.0;
                    for i in 0..r {
                        other[..r + s].copy_from_slice(&d[..r + s]);
                        for c in 0..dim {
                            other[i] = c;
                            corr -= t0.get(&other[..r + s]) * j[d[i]][c];
                        }
                    }
                    for jj in 0..s {
                        let slot = r + jj;
                        other[..r + s].copy_from_slice(&d[..r + s]);
                        for c in 0..dim {
                            other[slot] = c;
                            corr += t0.get(&other[..r + s]) * j[c][d[slot]];
                        }
                    }
                    out.as_mut_slice()[fo] += corr;
                }
            }
            Ok(out)
        },
    )
}

/// Generalized Lie derivative: classical derivative of the representative
/// minus the argument differentials along the induced transport and kernel
/// directions. Commutes with the smoothing embedding.
pub fn gen_lie_derivative(
    t: &GeneralizedField,
    direction: &SmoothVectorField,
) -> GeneralizedField {
    GeneralizedField::from_node(
        t.chart.clone(),
        t.valence,
        Node::GenLie {
            direction: direction.clone(),
            inner: t.clone(),
        },
    )
}

pub(crate) fn gen_lie_eval(
    direction: &SmoothVectorField,
    inner: &GeneralizedField,
    ctx: &EvalCtx,
) -> Result<TensorField> {
    let rep = inner.eval(ctx)?;
    let mut out = lie_derivative_rep(&rep, direction, None);
    if inner.upsilon_dependent() {
        let pert = transport_lie_derivative(&ctx.upsilon, direction, None).as_perturbation();
        let moved = inner.d1(&pert)?.eval(ctx)?;
        out = out.lin_comb(1.0, &moved, -1.0);
    }
    if inner.kernel_dependent() {
        let family = match &ctx.kernel {
            KernelHandle::Family(f) => f.clone(),
            KernelHandle::Mapped { .. } => {
                return Err(Error::ContractViolation(
                    "generalized Lie derivative under a mapped kernel is not supported".into(),
                ))
            }
        };
        let pert = kernel_lie_derivative(&family, direction).as_perturbation();
        let moved = inner.d2(&pert)?.eval(ctx)?;
        out = out.lin_comb(1.0, &moved, -1.0);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// metric, connection correction, covariant derivative

/// How finite-difference steps scale with eps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    /// `step = factor * eps`; matched to self-similar representatives.
    ProportionalToEps { factor: f64 },
    /// `step = factor * sqrt(eps * diameter)`; balances truncation against
    /// quadrature noise for representatives that converge in C^2.
    SqrtEps { factor: f64 },
    Fixed { step: f64 },
}

impl StepRule {
    pub fn step(&self, eps: f64, chart: &Chart) -> f64 {
        match self {
            StepRule::ProportionalToEps { factor } => factor * eps,
            StepRule::SqrtEps { factor } => factor * (eps * chart.diameter()).sqrt(),
            StepRule::Fixed { step } => *step,
        }
    }
}

/// A generalized field of valence (0,2) used as a metric, with a floor on
/// the determinant below which inversion refuses to proceed.
#[derive(Clone)]
pub struct GeneralizedMetric {
    pub field: GeneralizedField,
    pub det_floor: f64,
}

impl GeneralizedMetric {
    pub fn new(field: GeneralizedField) -> Result<GeneralizedMetric> {
        if field.valence != Valence::new(0, 2) {
            return Err(Error::invalid("metric must have valence (0,2)"));
        }
        Ok(GeneralizedMetric {
            field,
            det_floor: 1e-8,
        })
    }

    pub fn with_det_floor(mut self, floor: f64) -> GeneralizedMetric {
        self.det_floor = floor;
        self
    }

    pub fn representative(&self, ctx: &EvalCtx) -> Result<MetricRep> {
        Ok(MetricRep {
            rep: self.field.eval(ctx)?,
            det_floor: self.det_floor,
            eps: ctx.eps,
        })
    }
}

/// One smooth metric representative with cached inversion policy.
#[derive(Clone)]
pub struct MetricRep {
    pub rep: TensorField,
    det_floor: f64,
    eps: f64,
}

impl MetricRep {
    pub fn value(&self, x: &Point) -> Result<Components> {
        self.rep.eval(x)
    }

    /// Metric matrix, inverse, and determinant at a point; degenerate
    /// metrics report the offending point and scale.
    pub fn matrices(&self, x: &Point) -> Result<(SquareMatrix, SquareMatrix, f64)> {
        let v = self.rep.eval(x)?;
        let dim = self.rep.chart.dim();
        let mut g = SquareMatrix::zero(dim);
        for a in 0..dim {
            for b in 0..dim {
                g.set(a, b, v.get(&[a, b]));
            }
        }
        match g.inverse(self.det_floor) {
            Ok((inv, det)) => Ok((g, inv, det)),
            Err(Error::DegenerateMetric { det, floor, .. }) => Err(Error::DegenerateMetric {
                point: x.coords().to_vec(),
                eps: self.eps,
                det,
                floor,
            }),
            Err(e) => Err(e),
        }
    }
}

/// The metric-compatible correction on top of a background connection:
/// `0.5 g^{ad} (g_{bd|c} + g_{cd|b} - g_{bc|d})`, where `|` is the
/// background-covariant derivative. A tensor, unlike the connection itself.
#[derive(Clone)]
pub struct ConnectionCorrection {
    pub metric: GeneralizedMetric,
    pub background: BackgroundConnection,
    pub step_rule: StepRule,
    pub fd_order: usize,
}

pub fn levi_civita(
    metric: &GeneralizedMetric,
    background: &BackgroundConnection,
) -> ConnectionCorrection {
    ConnectionCorrection {
        metric: metric.clone(),
        background: background.clone(),
        step_rule: StepRule::ProportionalToEps { factor: 0.05 },
        fd_order: 2,
    }
}

impl ConnectionCorrection {
    pub fn with_step(mut self, rule: StepRule) -> ConnectionCorrection {
        self.step_rule = rule;
        self
    }

    pub fn with_order(mut self, order: usize) -> ConnectionCorrection {
        self.fd_order = order;
        self
    }

    /// The (1,2) field of correction coefficients at one scale.
    pub fn representative(&self, ctx: &EvalCtx) -> Result<TensorField> {
        if self.fd_order != 2 && self.fd_order != 4 {
            return Err(Error::invalid("difference order must be 2 or 4"));
        }
        let mrep = self.metric.representative(ctx)?;
        let bg = self.background.clone();
        let chart = self.metric.field.chart.clone();
        let h = self.step_rule.step(ctx.eps, &chart);
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid("step rule produced a bad step"));
        }
        let order = self.fd_order;
        let dim = chart.dim();
        let reach = fd::stencil_reach(order);
        Ok(TensorField::new(
            chart.clone(),
            Valence::new(1, 2),
            SmoothnessClass::Regularized(ctx.eps),
            move |x| {
                chart.require_margin(x, h * reach)?;
                let mut dg: Vec<Components> = Vec::with_capacity(dim);
                for c in 0..dim {
                    dg.push(fd::central1(|t| mrep.value(&x.offset(c, t)), h, order)?);
                }
                let (g, ginv, _) = mrep.matrices(x)?;
                let gam = bg.coeffs(x);
                // background-covariant metric derivative
                let cov = |c: usize, b: usize, d: usize| -> f64 {
                    let mut v = dg[c].get(&[b, d]);
                    for e in 0..dim {
                        v -= gam[e][c][b] * g.get(e, d);
                        v -= gam[e][c][d] * g.get(b, e);
                    }
                    v
                };
                let mut out = Components::zeros(Valence::new(1, 2), dim);
                for a in 0..dim {
                    for b in 0..dim {
                        for c in 0..dim {
                            let mut acc = 0.0;
                            for d in 0..dim {
                                acc += ginv.get(a, d) * (cov(c, b, d) + cov(b, c, d) - cov(d, b, c));
                            }
                            out.set(&[a, b, c], 0.5 * acc);
                        }
                    }
                }
                Ok(out)
            },
        ))
    }
}

/// Covariant derivative along `z` with respect to background + correction.
pub fn covariant_derivative(
    t: &GeneralizedField,
    conn: &ConnectionCorrection,
    z: &SmoothVectorField,
) -> GeneralizedField {
    let t_inner = t.clone();
    let conn_inner = conn.clone();
    let z_inner = z.clone();
    let valence = t.valence;
    let chart = t.chart.clone();
    let chart2 = chart.clone();
    let mut hints = t.concentration_hints();
    hints.extend(conn.metric.field.concentration_hints());
    GeneralizedField::opaque(
        chart,
        valence,
        &format!("cov-derivative[{}]", z.label),
        t.upsilon_dependent() || conn.metric.field.upsilon_dependent(),
        t.kernel_dependent() || conn.metric.field.kernel_dependent(),
        hints,
        move |ctx| {
            let rep = t_inner.eval(ctx)?;
            let hat = conn_inner.representative(ctx)?;
            let bg = conn_inner.background.clone();
            let z = z_inner.clone();
            let chart = chart2.clone();
            let h = conn_inner.step_rule.step(ctx.eps, &chart);
            let order = conn_inner.fd_order;
            let reach = fd::stencil_reach(order);
            Ok(TensorField::new(
                chart.clone(),
                valence,
                SmoothnessClass::Regularized(ctx.eps),
                move |x| {
                    chart.require_margin(x, h * reach)?;
                    let dim = chart.dim();
                    let r = valence.up as usize;
                    let s = valence.down as usize;
                    let zv = z.value(x);
                    let mut out = Components::zeros(valence, dim);
                    for c in 0..dim {
                        let partial = fd::central1(|t| rep.eval(&x.offset(c, t)), h, order)?;
                        out.axpy(zv[c], &partial);
                    }
                    if r + s > 0 {
                        let t0 = rep.eval(x)?;
                        let hat0 = hat.eval(x)?;
                        let gam = bg.coeffs(x);
                        let tot = |a: usize, b: usize, c: usize| -> f64 {
                            gam[a][b][c] + hat0.get(&[a, b, c])
                        };
                        let mut d = [0usize; 8];
                        let mut other = [0usize; 8];
                        for fo in 0..t0.len() {
                            t0.decode(fo, &mut d[..r + s]);
                            let mut corr = 0.0;
                            for c in 0..dim {
                                if zv[c] == 0.0 {
                                    continue;
                                }
                                for i in 0..r {
                                    other[..r + s].copy_from_slice(&d[..r + s]);
                                    for e in 0..dim {
                                        other[i] = e;
                                        corr += zv[c] * tot(d[i], c, e) * t0.get(&other[..r + s]);
                                    }
                                }
                                for jj in 0..s {
                                    let slot = r + jj;
                                    other[..r + s].copy_from_slice(&d[..r + s]);
                                    for e in 0..dim {
                                        other[slot] = e;
                                        corr -= zv[c] * tot(e, c, d[slot]) * t0.get(&other[..r + s]);
                                    }
                                }
                            }
                            out.as_mut_slice()[fo] += corr;
                        }
                    }
                    Ok(out)
                },
            ))
        },
    )
}

/// `nabla g` for the correction built from `g` itself; identically zero in
/// exact arithmetic, a noise probe in floating point.
pub fn metric_compatibility(
    conn: &ConnectionCorrection,
    z: &SmoothVectorField,
) -> GeneralizedField {
    covariant_derivative(&conn.metric.field, conn, z)
}

// ---------------------------------------------------------------------------
// curvature

/// Step schedule for the two nested difference levels of the curvature.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CurvatureScheme {
    pub first: StepRule,
    pub second: StepRule,
    pub order: usize,
}

impl Default for CurvatureScheme {
    fn default() -> CurvatureScheme {
        CurvatureScheme {
            first: StepRule::ProportionalToEps { factor: 0.05 },
            second: StepRule::ProportionalToEps { factor: 0.1 },
            order: 2,
        }
    }
}

#[derive(Clone)]
pub struct CurvatureBundle {
    pub conn: ConnectionCorrection,
    pub scheme: CurvatureScheme,
}

pub fn curvature(conn: &ConnectionCorrection, scheme: CurvatureScheme) -> CurvatureBundle {
    CurvatureBundle {
        conn: conn.clone(),
        scheme,
    }
}

/// Everything curvature-related at one point, from one representative.
#[derive(Clone, Debug)]
pub struct CurvaturePoint {
    /// `R^rho_{sigma mu nu}`, layout `[rho, sigma, mu, nu]`.
    pub riemann: Components,
    pub ricci: Components,
    pub scalar: f64,
    pub einstein: Components,
    pub metric: SquareMatrix,
    pub metric_inv: SquareMatrix,
    pub det: f64,
}

#[derive(Clone)]
pub struct CurvatureRep {
    chart: Arc<Chart>,
    hat: TensorField,
    mrep: MetricRep,
    background: BackgroundConnection,
    scheme: CurvatureScheme,
    eps: f64,
}

impl CurvatureBundle {
    pub fn representative(&self, ctx: &EvalCtx) -> Result<CurvatureRep> {
        let conn = self
            .conn
            .clone()
            .with_step(self.scheme.first)
            .with_order(self.scheme.order);
        let hat = conn.representative(ctx)?;
        let mrep = conn.metric.representative(ctx)?;
        Ok(CurvatureRep {
            chart: conn.metric.field.chart.clone(),
            hat,
            mrep,
            background: conn.background.clone(),
            scheme: self.scheme,
            eps: ctx.eps,
        })
    }

    fn component_field(
        &self,
        label: &str,
        valence: Valence,
        pick: Arc<dyn Fn(&CurvaturePoint) -> Components + Send + Sync>,
    ) -> GeneralizedField {
        let bundle = self.clone();
        let chart = self.conn.metric.field.chart.clone();
        let chart2 = chart.clone();
        GeneralizedField::opaque(
            chart,
            valence,
            label,
            self.conn.metric.field.upsilon_dependent(),
            self.conn.metric.field.kernel_dependent(),
            self.conn.metric.field.concentration_hints(),
            move |ctx| {
                let rep = bundle.representative(ctx)?;
                let pick = pick.clone();
                Ok(TensorField::new(
                    chart2.clone(),
                    valence,
                    SmoothnessClass::Regularized(ctx.eps),
                    move |x| rep.point(x).map(|cp| pick(&cp)),
                ))
            },
        )
    }

    pub fn scalar_field(&self) -> GeneralizedField {
        self.component_field(
            "scalar-curvature",
            Valence::SCALAR,
            Arc::new(|cp| Components::scalar(cp.scalar)),
        )
    }

    /// Scalar curvature times the metric volume density.
    pub fn scalar_density_field(&self) -> GeneralizedField {
        self.component_field(
            "curvature-density",
            Valence::SCALAR,
            Arc::new(|cp| Components::scalar(cp.scalar * cp.det.abs().sqrt())),
        )
    }

    pub fn ricci_field(&self) -> GeneralizedField {
        self.component_field(
            "ricci",
            Valence::new(0, 2),
            Arc::new(|cp| cp.ricci.clone()),
        )
    }

    pub fn einstein_field(&self) -> GeneralizedField {
        self.component_field(
            "einstein",
            Valence::new(0, 2),
            Arc::new(|cp| cp.einstein.clone()),
        )
    }

    pub fn riemann_field(&self) -> GeneralizedField {
        self.component_field(
            "riemann",
            Valence::new(1, 3),
            Arc::new(|cp| cp.riemann.clone()),
        )
    }
}

impl CurvatureRep {
    /// Background plus correction coefficients at a point.
    pub fn total_connection(&self, x: &Point) -> Result<Components> {
        let mut tot = self.hat.eval(x)?;
        let gam = self.background.coeffs(x);
        let dim = self.chart.dim();
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    let idx = tot.flat_index(&[a, b, c]);
                    tot.as_mut_slice()[idx] += gam[a][b][c];
                }
            }
        }
        Ok(tot)
    }

    pub fn point(&self, x: &Point) -> Result<CurvaturePoint> {
        let dim = self.chart.dim();
        let h = self.scheme.second.step(self.eps, &self.chart);
        let reach = fd::stencil_reach(self.scheme.order);
        self.chart.require_margin(x, h * reach)?;
        let g0 = self.total_connection(x)?;
        let mut dg: Vec<Components> = Vec::with_capacity(dim);
        for mu in 0..dim {
            dg.push(fd::central1(
                |t| self.total_connection(&x.offset(mu, t)),
                h,
                self.scheme.order,
            )?);
        }
        let mut riemann = Components::zeros(Valence::new(1, 3), dim);
        for rho in 0..dim {
            for sig in 0..dim {
                for mu in 0..dim {
                    for nu in 0..dim {
                        let mut v =
                            dg[mu].get(&[rho, nu, sig]) - dg[nu].get(&[rho, mu, sig]);
                        for lam in 0..dim {
                            v += g0.get(&[rho, mu, lam]) * g0.get(&[lam, nu, sig]);
                            v -= g0.get(&[rho, nu, lam]) * g0.get(&[lam, mu, sig]);
                        }
                        riemann.set(&[rho, sig, mu, nu], v);
                    }
                }
            }
        }
        let mut ricci = Components::zeros(Valence::new(0, 2), dim);
        for sig in 0..dim {
            for nu in 0..dim {
                let mut v = 0.0;
                for rho in 0..dim {
                    v += riemann.get(&[rho, sig, rho, nu]);
                }
                ricci.set(&[sig, nu], v);
            }
        }
        let (g, ginv, det) = self.mrep.matrices(x)?;
        let mut scalar = 0.0;
        for sig in 0..dim {
            for nu in 0..dim {
                scalar += ginv.get(sig, nu) * ricci.get(&[sig, nu]);
            }
        }
        let mut einstein = ricci.clone();
        for sig in 0..dim {
            for nu in 0..dim {
                let idx = einstein.flat_index(&[sig, nu]);
                einstein.as_mut_slice()[idx] -= 0.5 * scalar * g.get(sig, nu);
            }
        }
        Ok(CurvaturePoint {
            riemann,
            ricci,
            scalar,
            einstein,
            metric: g,
            metric_inv: ginv,
            det,
        })
    }

    /// Local curvature magnitude `sup |dGamma| + sup |Gamma|^2`, the scale
    /// that absolute comparisons of curvature should be measured against.
    pub fn scale_estimate(&self, x: &Point) -> Result<f64> {
        let dim = self.chart.dim();
        let h = self.scheme.second.step(self.eps, &self.chart);
        let reach = fd::stencil_reach(self.scheme.order);
        self.chart.require_margin(x, h * reach)?;
        let g0 = self.total_connection(x)?;
        let mut dsup: f64 = 0.0;
        for mu in 0..dim {
            let d = fd::central1(
                |t| self.total_connection(&x.offset(mu, t)),
                h,
                self.scheme.order,
            )?;
            dsup = dsup.max(d.sup_norm());
        }
        let gs = g0.sup_norm();
        Ok(dsup + gs * gs)
    }
}
