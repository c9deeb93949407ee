//! Embeddings of rough tensor fields into one-parameter smooth families.
//!
//! A rough field (locally integrable part plus finitely many point masses)
//! is turned into a family of smooth fields by pairing against a smoothing
//! kernel, with transport operators carrying the tensor indices back to the
//! base point. Generalized fields form a small expression tree so that
//! argument differentials (transport and kernel directions) can be taken
//! structurally, which is what the generalized Lie derivative and the
//! scaling probes need.
//!
//! Evaluation picks one of three quadrature engines per point:
//! * weight-adapted Gauss rules when the kernel is a sign-definite product
//!   family and the integrand is smooth on the support (fast path),
//! * a graded polar grid centered at a singular point of the rough field
//!   when one is within reach of the support (two dimensions only),
//! * composite Gauss cells over the support box otherwise.

use crate::calculus;
use crate::chart::{
    Chart, Components, Point, SmoothVectorField, SmoothnessClass, SquareMatrix, TensorField,
    TestDensity, Valence,
};
use crate::error::{Error, Result};
use crate::kernels::{KernelPerturbation, SmoothingKernelFamily};
use crate::quadrature;
use crate::transport::{TransportOperator, TransportPerturbation};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One point mass: a constant coefficient tensor sitting at a point.
#[derive(Clone)]
pub struct DeltaTerm {
    pub point: Point,
    pub coeff: Components,
}

type RoughFn = dyn Fn(&Point) -> Result<Components> + Send + Sync;

#[derive(Clone)]
struct LocPart {
    eval: Arc<RoughFn>,
    /// Points where the closed form is singular; integration grids are
    /// graded around these.
    singular: Vec<Point>,
}

/// A rough tensor field: a locally integrable part given in closed form plus
/// a finite sum of point masses.
#[derive(Clone)]
pub struct RoughTensorField {
    pub chart: Arc<Chart>,
    pub valence: Valence,
    loc: Option<LocPart>,
    deltas: Vec<DeltaTerm>,
}

impl RoughTensorField {
    pub fn loc_integrable(
        chart: Arc<Chart>,
        valence: Valence,
        singular: &[Point],
        eval: impl Fn(&Point) -> Result<Components> + Send + Sync + 'static,
    ) -> RoughTensorField {
        RoughTensorField {
            chart,
            valence,
            loc: Some(LocPart {
                eval: Arc::new(eval),
                singular: singular.to_vec(),
            }),
            deltas: Vec::new(),
        }
    }

    pub fn from_smooth(field: &TensorField) -> RoughTensorField {
        let f = field.clone();
        RoughTensorField {
            chart: field.chart.clone(),
            valence: field.valence,
            loc: Some(LocPart {
                eval: Arc::new(move |x| f.eval(x)),
                singular: Vec::new(),
            }),
            deltas: Vec::new(),
        }
    }

    pub fn delta(chart: Arc<Chart>, point: Point, coeff: Components) -> Result<RoughTensorField> {
        if !chart.contains(&point) {
            return Err(Error::invalid("delta point outside chart"));
        }
        let valence = coeff.valence;
        Ok(RoughTensorField {
            chart,
            valence,
            loc: None,
            deltas: vec![DeltaTerm { point, coeff }],
        })
    }

    pub fn delta_sum(
        chart: Arc<Chart>,
        valence: Valence,
        terms: Vec<DeltaTerm>,
    ) -> Result<RoughTensorField> {
        for t in &terms {
            if t.coeff.valence != valence || !chart.contains(&t.point) {
                return Err(Error::invalid("delta term valence or point invalid"));
            }
        }
        Ok(RoughTensorField {
            chart,
            valence,
            loc: None,
            deltas: terms,
        })
    }

    /// Attach point masses to a loc-integrable field.
    pub fn with_deltas(mut self, terms: Vec<DeltaTerm>) -> Result<RoughTensorField> {
        for t in &terms {
            if t.coeff.valence != self.valence || !self.chart.contains(&t.point) {
                return Err(Error::invalid("delta term valence or point invalid"));
            }
        }
        self.deltas.extend(terms);
        Ok(self)
    }

    pub fn singular_points(&self) -> Vec<Point> {
        self.loc.as_ref().map_or(Vec::new(), |l| l.singular.clone())
    }

    pub fn delta_points(&self) -> Vec<Point> {
        self.deltas.iter().map(|t| t.point).collect()
    }

    fn only_loc(&self) -> RoughTensorField {
        RoughTensorField {
            chart: self.chart.clone(),
            valence: self.valence,
            loc: self.loc.clone(),
            deltas: Vec::new(),
        }
    }

    fn only_delta(&self, k: usize) -> RoughTensorField {
        RoughTensorField {
            chart: self.chart.clone(),
            valence: self.valence,
            loc: None,
            deltas: vec![self.deltas[k].clone()],
        }
    }
}

/// A smooth invertible coordinate map with closed-form Jacobian.
#[derive(Clone)]
pub struct Diffeo {
    pub chart: Arc<Chart>,
    pub label: String,
    forward: Arc<dyn Fn(&Point) -> Point + Send + Sync>,
    inverse: Arc<dyn Fn(&Point) -> Point + Send + Sync>,
    jac_forward: Arc<dyn Fn(&Point) -> SquareMatrix + Send + Sync>,
}

impl Diffeo {
    pub fn identity(chart: Arc<Chart>) -> Diffeo {
        let dim = chart.dim();
        Diffeo {
            chart,
            label: "identity".into(),
            forward: Arc::new(|x| *x),
            inverse: Arc::new(|x| *x),
            jac_forward: Arc::new(move |_| SquareMatrix::identity(dim)),
        }
    }

    pub fn translation(chart: Arc<Chart>, shift: &[f64]) -> Diffeo {
        let dim = chart.dim();
        let s: Vec<f64> = shift.to_vec();
        let s2 = s.clone();
        Diffeo {
            chart,
            label: "translation".into(),
            forward: Arc::new(move |x| {
                let mut p = *x;
                for i in 0..s.len() {
                    p.set(i, p.get(i) + s[i]);
                }
                p
            }),
            inverse: Arc::new(move |x| {
                let mut p = *x;
                for i in 0..s2.len() {
                    p.set(i, p.get(i) - s2[i]);
                }
                p
            }),
            jac_forward: Arc::new(move |_| SquareMatrix::identity(dim)),
        }
    }

    pub fn linear(chart: Arc<Chart>, a: SquareMatrix) -> Result<Diffeo> {
        let dim = chart.dim();
        let (ainv, _) = a.inverse(1e-12)?;
        Ok(Diffeo {
            chart,
            label: "linear".into(),
            forward: Arc::new(move |x| apply_matrix(&a, x, dim)),
            inverse: Arc::new(move |x| apply_matrix(&ainv, x, dim)),
            jac_forward: Arc::new(move |_| a),
        })
    }

    pub fn custom(
        chart: Arc<Chart>,
        label: &str,
        forward: impl Fn(&Point) -> Point + Send + Sync + 'static,
        inverse: impl Fn(&Point) -> Point + Send + Sync + 'static,
        jac_forward: impl Fn(&Point) -> SquareMatrix + Send + Sync + 'static,
    ) -> Diffeo {
        Diffeo {
            chart,
            label: label.to_string(),
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
            jac_forward: Arc::new(jac_forward),
        }
    }

    pub fn forward(&self, x: &Point) -> Point {
        (self.forward)(x)
    }

    pub fn inverse(&self, x: &Point) -> Point {
        (self.inverse)(x)
    }

    /// Jacobian of the forward map at `x`.
    pub fn jacobian(&self, x: &Point) -> SquareMatrix {
        (self.jac_forward)(x)
    }

    /// Composition: apply `self`, then `next`.
    pub fn then(&self, next: &Diffeo) -> Diffeo {
        let f1 = self.clone();
        let f2 = next.clone();
        let g1 = self.clone();
        let g2 = next.clone();
        let j1 = self.clone();
        let j2 = next.clone();
        Diffeo {
            chart: self.chart.clone(),
            label: format!("{};{}", self.label, next.label),
            forward: Arc::new(move |x| f2.forward(&f1.forward(x))),
            inverse: Arc::new(move |x| g1.inverse(&g2.inverse(x))),
            jac_forward: Arc::new(move |x| {
                let mid = j1.forward(x);
                j2.jacobian(&mid).mul(&j1.jacobian(x))
            }),
        }
    }
}

fn apply_matrix(a: &SquareMatrix, x: &Point, dim: usize) -> Point {
    let mut out = vec![0.0; dim];
    for i in 0..dim {
        for j in 0..dim {
            out[i] += a.get(i, j) * x.get(j);
        }
    }
    Point::new(&out)
}

/// The kernel slot of an evaluation context: either a product family or a
/// family pushed forward through a coordinate map.
#[derive(Clone)]
pub enum KernelHandle {
    Family(SmoothingKernelFamily),
    Mapped {
        family: SmoothingKernelFamily,
        map: Diffeo,
    },
}

impl KernelHandle {
    pub fn chart(&self) -> &Arc<Chart> {
        match self {
            KernelHandle::Family(f) => &f.chart,
            KernelHandle::Mapped { family, .. } => &family.chart,
        }
    }

    pub fn eval(&self, x: &Point, eps: f64, y: &Point) -> f64 {
        match self {
            KernelHandle::Family(f) => f.eval(x, eps, y),
            KernelHandle::Mapped { family, map } => {
                let xb = map.inverse(x);
                let yb = map.inverse(y);
                let jac = map.jacobian(&yb);
                let det = jac.det().abs();
                if det == 0.0 {
                    return 0.0;
                }
                family.eval(&xb, eps, &yb) / det
            }
        }
    }

    /// Axis-aligned box containing the support of the kernel centered at `x`.
    pub fn support_box(&self, x: &Point, eps: f64) -> (Vec<f64>, Vec<f64>) {
        match self {
            KernelHandle::Family(f) => f.support_box(x, eps),
            KernelHandle::Mapped { family, map } => {
                let xb = map.inverse(x);
                let (lo, hi) = family.support_box(&xb, eps);
                mapped_bounding_box(map, &lo, &hi)
            }
        }
    }

    pub fn as_family(&self) -> Option<&SmoothingKernelFamily> {
        match self {
            KernelHandle::Family(f) => Some(f),
            _ => None,
        }
    }

    fn pushforward(&self, map: &Diffeo) -> KernelHandle {
        match self {
            KernelHandle::Family(f) => KernelHandle::Mapped {
                family: f.clone(),
                map: map.clone(),
            },
            KernelHandle::Mapped { family, map: m1 } => KernelHandle::Mapped {
                family: family.clone(),
                map: m1.then(map),
            },
        }
    }
}

/// Image bounding box of a box under a smooth map, from a 3^n sample lattice
/// with a safety pad. Exact for affine maps.
fn mapped_bounding_box(map: &Diffeo, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dim = lo.len();
    let mut out_lo = vec![f64::INFINITY; dim];
    let mut out_hi = vec![f64::NEG_INFINITY; dim];
    let total = 3usize.pow(dim as u32);
    for flat in 0..total {
        let mut rem = flat;
        let mut c = vec![0.0; dim];
        for ax in 0..dim {
            let d = rem % 3;
            rem /= 3;
            c[ax] = lo[ax] + (hi[ax] - lo[ax]) * d as f64 / 2.0;
        }
        let img = map.forward(&Point::new(&c));
        for ax in 0..dim {
            out_lo[ax] = out_lo[ax].min(img.get(ax));
            out_hi[ax] = out_hi[ax].max(img.get(ax));
        }
    }
    for ax in 0..dim {
        let pad = 0.05 * (out_hi[ax] - out_lo[ax]);
        out_lo[ax] -= pad;
        out_hi[ax] += pad;
    }
    (out_lo, out_hi)
}

/// Quadrature parameters for embedding integrals and pairings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    /// Nodes per axis for weight-adapted rules on smooth integrands.
    pub weight_nodes: usize,
    /// Composite cells per support radius and Gauss order, general path.
    pub cells_per_radius: usize,
    pub cell_order: usize,
    /// Singular points within this many support radii of the base point
    /// switch the integral to the graded polar engine.
    pub singular_threshold: f64,
    /// Radial panel width of the polar engine, in units of eps.
    pub polar_radial_panel: f64,
    pub polar_order: usize,
    pub polar_theta_panels: usize,
    /// Pairing grid: cells per axis and order for the smooth path, and the
    /// graded-polar parameters for concentrated integrands.
    pub pair_cells: usize,
    pub pair_order: usize,
    /// Radius of the finely resolved inner disc, in units of eps.
    pub pair_inner_factor: f64,
    /// Radial panels across the inner disc.
    pub pair_inner_panels: usize,
    /// Geometric growth of radial panels outside the inner disc.
    pub pair_growth: f64,
}

impl Default for QuadConfig {
    fn default() -> QuadConfig {
        QuadConfig {
            weight_nodes: 12,
            cells_per_radius: 6,
            cell_order: 10,
            singular_threshold: 5.0,
            polar_radial_panel: 0.3,
            polar_order: 10,
            polar_theta_panels: 10,
            pair_cells: 16,
            pair_order: 10,
            pair_inner_factor: 4.0,
            pair_inner_panels: 12,
            pair_growth: 1.7,
        }
    }
}

/// Everything needed to evaluate a generalized field at one scale.
#[derive(Clone)]
pub struct EvalCtx {
    pub upsilon: TransportOperator,
    pub kernel: KernelHandle,
    pub eps: f64,
    pub quad: QuadConfig,
}

impl EvalCtx {
    pub fn new(upsilon: TransportOperator, kernel: SmoothingKernelFamily, eps: f64) -> EvalCtx {
        EvalCtx {
            upsilon,
            kernel: KernelHandle::Family(kernel),
            eps,
            quad: QuadConfig::default(),
        }
    }

    pub fn with_quad(mut self, quad: QuadConfig) -> EvalCtx {
        self.quad = quad;
        self
    }

    pub fn at_eps(&self, eps: f64) -> EvalCtx {
        let mut c = self.clone();
        c.eps = eps;
        c
    }
}

type OpaqueFn = dyn Fn(&EvalCtx) -> Result<TensorField> + Send + Sync;

pub(crate) enum Node {
    Zero,
    Sigma(TensorField),
    Iota {
        rough: RoughTensorField,
        d1: Option<TransportPerturbation>,
        d2: Option<KernelPerturbation>,
    },
    Sum(GeneralizedField, GeneralizedField),
    Scale(f64, GeneralizedField),
    Product(GeneralizedField, GeneralizedField),
    Contract {
        inner: GeneralizedField,
        up_slot: usize,
        down_slot: usize,
    },
    GenLie {
        direction: SmoothVectorField,
        inner: GeneralizedField,
    },
    Pullback {
        map: Diffeo,
        inner: GeneralizedField,
    },
    Opaque {
        label: String,
        upsilon_dep: bool,
        kernel_dep: bool,
        hints: Vec<Point>,
        eval: Arc<OpaqueFn>,
    },
}

/// A generalized tensor field: a map from (transport, kernel, scale) choices
/// to smooth fields, represented as an expression tree.
#[derive(Clone)]
pub struct GeneralizedField {
    pub chart: Arc<Chart>,
    pub valence: Valence,
    pub(crate) node: Arc<Node>,
}

/// Exact embedding of a smooth field: constant in the scale, independent of
/// transport and kernel choices.
pub fn sigma(field: &TensorField) -> GeneralizedField {
    GeneralizedField {
        chart: field.chart.clone(),
        valence: field.valence,
        node: Arc::new(Node::Sigma(field.clone())),
    }
}

/// Smoothing embedding of a rough field. Point masses are split into their
/// own nodes so pairings can grade around each one separately.
pub fn iota(rough: &RoughTensorField) -> GeneralizedField {
    let mut parts = Vec::new();
    if rough.loc.is_some() {
        parts.push(GeneralizedField {
            chart: rough.chart.clone(),
            valence: rough.valence,
            node: Arc::new(Node::Iota {
                rough: rough.only_loc(),
                d1: None,
                d2: None,
            }),
        });
    }
    for k in 0..rough.deltas.len() {
        parts.push(GeneralizedField {
            chart: rough.chart.clone(),
            valence: rough.valence,
            node: Arc::new(Node::Iota {
                rough: rough.only_delta(k),
                d1: None,
                d2: None,
            }),
        });
    }
    match parts.len() {
        0 => GeneralizedField::zero(rough.chart.clone(), rough.valence),
        1 => parts.pop().unwrap(),
        _ => {
            let mut acc = parts.remove(0);
            for p in parts {
                acc = GeneralizedField {
                    chart: acc.chart.clone(),
                    valence: acc.valence,
                    node: Arc::new(Node::Sum(acc, p)),
                };
            }
            acc
        }
    }
}

/// Pullback of a generalized field along a coordinate map: the inner field
/// is evaluated with pushed-forward transport and kernel, then the result is
/// pulled back classically.
pub fn pullback_diffeo(field: &GeneralizedField, map: &Diffeo) -> GeneralizedField {
    GeneralizedField {
        chart: field.chart.clone(),
        valence: field.valence,
        node: Arc::new(Node::Pullback {
            map: map.clone(),
            inner: field.clone(),
        }),
    }
}

impl GeneralizedField {
    pub fn zero(chart: Arc<Chart>, valence: Valence) -> GeneralizedField {
        GeneralizedField {
            chart,
            valence,
            node: Arc::new(Node::Zero),
        }
    }

    pub(crate) fn from_node(chart: Arc<Chart>, valence: Valence, node: Node) -> GeneralizedField {
        GeneralizedField {
            chart,
            valence,
            node: Arc::new(node),
        }
    }

    pub fn opaque(
        chart: Arc<Chart>,
        valence: Valence,
        label: &str,
        upsilon_dep: bool,
        kernel_dep: bool,
        hints: Vec<Point>,
        eval: impl Fn(&EvalCtx) -> Result<TensorField> + Send + Sync + 'static,
    ) -> GeneralizedField {
        GeneralizedField {
            chart,
            valence,
            node: Arc::new(Node::Opaque {
                label: label.to_string(),
                upsilon_dep,
                kernel_dep,
                hints,
                eval: Arc::new(eval),
            }),
        }
    }

    pub fn add(&self, other: &GeneralizedField) -> Result<GeneralizedField> {
        if self.valence != other.valence {
            return Err(Error::invalid("sum of fields with different valences"));
        }
        Ok(GeneralizedField {
            chart: self.chart.clone(),
            valence: self.valence,
            node: Arc::new(Node::Sum(self.clone(), other.clone())),
        })
    }

    pub fn scale(&self, a: f64) -> GeneralizedField {
        GeneralizedField {
            chart: self.chart.clone(),
            valence: self.valence,
            node: Arc::new(Node::Scale(a, self.clone())),
        }
    }

    pub fn is_zero_node(&self) -> bool {
        matches!(&*self.node, Node::Zero)
    }

    /// Whether evaluation reads the transport argument.
    pub fn upsilon_dependent(&self) -> bool {
        match &*self.node {
            Node::Zero => false,
            Node::Sigma(_) => false,
            Node::Iota { rough, .. } => rough.valence.rank() > 0,
            Node::Sum(a, b) => a.upsilon_dependent() || b.upsilon_dependent(),
            Node::Scale(_, a) => a.upsilon_dependent(),
            Node::Product(a, b) => a.upsilon_dependent() || b.upsilon_dependent(),
            Node::Contract { inner, .. } => inner.upsilon_dependent(),
            Node::GenLie { inner, .. } => inner.upsilon_dependent(),
            Node::Pullback { inner, .. } => inner.upsilon_dependent(),
            Node::Opaque { upsilon_dep, .. } => *upsilon_dep,
        }
    }

    /// Whether evaluation reads the kernel argument.
    pub fn kernel_dependent(&self) -> bool {
        match &*self.node {
            Node::Zero => false,
            Node::Sigma(_) => false,
            Node::Iota { .. } => true,
            Node::Sum(a, b) => a.kernel_dependent() || b.kernel_dependent(),
            Node::Scale(_, a) => a.kernel_dependent(),
            Node::Product(a, b) => a.kernel_dependent() || b.kernel_dependent(),
            Node::Contract { inner, .. } => inner.kernel_dependent(),
            Node::GenLie { inner, .. } => inner.kernel_dependent(),
            Node::Pullback { inner, .. } => inner.kernel_dependent(),
            Node::Opaque { kernel_dep, .. } => *kernel_dep,
        }
    }

    /// Points the field concentrates around (point masses, singularities);
    /// pairings grade their grids around these.
    pub fn concentration_hints(&self) -> Vec<Point> {
        match &*self.node {
            Node::Zero | Node::Sigma(_) => Vec::new(),
            Node::Iota { rough, .. } => {
                let mut h = rough.delta_points();
                h.extend(rough.singular_points());
                h
            }
            Node::Sum(a, b) => {
                let mut h = a.concentration_hints();
                h.extend(b.concentration_hints());
                h
            }
            Node::Scale(_, a) => a.concentration_hints(),
            Node::Product(a, b) => {
                let mut h = a.concentration_hints();
                h.extend(b.concentration_hints());
                h
            }
            Node::Contract { inner, .. } => inner.concentration_hints(),
            Node::GenLie { inner, .. } => inner.concentration_hints(),
            Node::Pullback { map, inner } => inner
                .concentration_hints()
                .iter()
                .map(|p| map.inverse(p))
                .collect(),
            Node::Opaque { hints, .. } => hints.clone(),
        }
    }

    /// Differential in the transport argument, in the direction of a
    /// perturbation vanishing on the diagonal.
    pub fn d1(&self, pert: &TransportPerturbation) -> Result<GeneralizedField> {
        let out = |node| GeneralizedField::from_node(self.chart.clone(), self.valence, node);
        match &*self.node {
            Node::Zero | Node::Sigma(_) => Ok(GeneralizedField::zero(
                self.chart.clone(),
                self.valence,
            )),
            Node::Iota { rough, d1, d2 } => {
                if rough.valence.rank() == 0 {
                    return Ok(GeneralizedField::zero(self.chart.clone(), self.valence));
                }
                if d1.is_some() {
                    return Err(Error::ContractViolation(
                        "second transport differential is outside the probe corpus".into(),
                    ));
                }
                Ok(out(Node::Iota {
                    rough: rough.clone(),
                    d1: Some(pert.clone()),
                    d2: d2.clone(),
                }))
            }
            Node::Sum(a, b) => a.d1(pert)?.add(&b.d1(pert)?),
            Node::Scale(s, a) => Ok(a.d1(pert)?.scale(*s)),
            Node::Product(a, b) => {
                let left = GeneralizedField::from_node(
                    self.chart.clone(),
                    self.valence,
                    Node::Product(a.d1(pert)?, b.clone()),
                );
                let right = GeneralizedField::from_node(
                    self.chart.clone(),
                    self.valence,
                    Node::Product(a.clone(), b.d1(pert)?),
                );
                left.add(&right)
            }
            Node::Contract {
                inner,
                up_slot,
                down_slot,
            } => Ok(out(Node::Contract {
                inner: inner.d1(pert)?,
                up_slot: *up_slot,
                down_slot: *down_slot,
            })),
            Node::GenLie { .. } => Err(Error::ContractViolation(
                "transport differential of a generalized Lie derivative is not structural".into(),
            )),
            Node::Pullback { map, inner } => {
                let pushed = pushforward_transport_perturbation(pert, map);
                Ok(out(Node::Pullback {
                    map: map.clone(),
                    inner: inner.d1(&pushed)?,
                }))
            }
            Node::Opaque {
                label, upsilon_dep, ..
            } => {
                if *upsilon_dep {
                    Err(Error::ContractViolation(format!(
                        "opaque field `{label}` has no structural transport differential"
                    )))
                } else {
                    Ok(GeneralizedField::zero(self.chart.clone(), self.valence))
                }
            }
        }
    }

    /// Differential in the kernel argument; the embedding is affine in the
    /// kernel, so this replaces the kernel by the perturbation.
    pub fn d2(&self, pert: &KernelPerturbation) -> Result<GeneralizedField> {
        let out = |node| GeneralizedField::from_node(self.chart.clone(), self.valence, node);
        match &*self.node {
            Node::Zero | Node::Sigma(_) => Ok(GeneralizedField::zero(
                self.chart.clone(),
                self.valence,
            )),
            Node::Iota { rough, d1, d2 } => {
                if d2.is_some() {
                    return Err(Error::ContractViolation(
                        "second kernel differential vanishes identically".into(),
                    ));
                }
                Ok(out(Node::Iota {
                    rough: rough.clone(),
                    d1: d1.clone(),
                    d2: Some(pert.clone()),
                }))
            }
            Node::Sum(a, b) => a.d2(pert)?.add(&b.d2(pert)?),
            Node::Scale(s, a) => Ok(a.d2(pert)?.scale(*s)),
            Node::Product(a, b) => {
                let left = GeneralizedField::from_node(
                    self.chart.clone(),
                    self.valence,
                    Node::Product(a.d2(pert)?, b.clone()),
                );
                let right = GeneralizedField::from_node(
                    self.chart.clone(),
                    self.valence,
                    Node::Product(a.clone(), b.d2(pert)?),
                );
                left.add(&right)
            }
            Node::Contract {
                inner,
                up_slot,
                down_slot,
            } => Ok(out(Node::Contract {
                inner: inner.d2(pert)?,
                up_slot: *up_slot,
                down_slot: *down_slot,
            })),
            Node::GenLie { .. } => Err(Error::ContractViolation(
                "kernel differential of a generalized Lie derivative is not structural".into(),
            )),
            Node::Pullback { map, inner } => {
                let pushed = pushforward_kernel_perturbation(pert, map);
                Ok(out(Node::Pullback {
                    map: map.clone(),
                    inner: inner.d2(&pushed)?,
                }))
            }
            Node::Opaque {
                label, kernel_dep, ..
            } => {
                if *kernel_dep {
                    Err(Error::ContractViolation(format!(
                        "opaque field `{label}` has no structural kernel differential"
                    )))
                } else {
                    Ok(GeneralizedField::zero(self.chart.clone(), self.valence))
                }
            }
        }
    }

    /// The smooth representative at one scale.
    pub fn eval(&self, ctx: &EvalCtx) -> Result<TensorField> {
        match &*self.node {
            Node::Zero => {
                let valence = self.valence;
                let dim = self.chart.dim();
                Ok(TensorField::new(
                    self.chart.clone(),
                    valence,
                    SmoothnessClass::ClosedForm,
                    move |_| Ok(Components::zeros(valence, dim)),
                ))
            }
            Node::Sigma(f) => Ok(f.clone()),
            Node::Iota { rough, d1, d2 } => {
                let rough = rough.clone();
                let d1 = d1.clone();
                let d2 = d2.clone();
                let ctx = ctx.clone();
                Ok(TensorField::new(
                    self.chart.clone(),
                    self.valence,
                    SmoothnessClass::Regularized(ctx.eps),
                    move |x| iota_point(&rough, d1.as_ref(), d2.as_ref(), &ctx, x),
                ))
            }
            Node::Sum(a, b) => {
                let fa = a.eval(ctx)?;
                let fb = b.eval(ctx)?;
                Ok(fa.lin_comb(1.0, &fb, 1.0))
            }
            Node::Scale(s, a) => {
                let fa = a.eval(ctx)?;
                let zero = GeneralizedField::zero(self.chart.clone(), self.valence).eval(ctx)?;
                Ok(fa.lin_comb(*s, &zero, 0.0))
            }
            Node::Product(a, b) => {
                let fa = a.eval(ctx)?;
                let fb = b.eval(ctx)?;
                Ok(calculus::product_fields(&fa, &fb))
            }
            Node::Contract {
                inner,
                up_slot,
                down_slot,
            } => {
                let f = inner.eval(ctx)?;
                calculus::contract_field(&f, *up_slot, *down_slot)
            }
            Node::GenLie { direction, inner } => calculus::gen_lie_eval(direction, inner, ctx),
            Node::Pullback { map, inner } => {
                let pushed_ctx = EvalCtx {
                    upsilon: pushforward_transport(&ctx.upsilon, map),
                    kernel: ctx.kernel.pushforward(map),
                    eps: ctx.eps,
                    quad: ctx.quad.clone(),
                };
                let rep = inner.eval(&pushed_ctx)?;
                let map = map.clone();
                let valence = self.valence;
                Ok(TensorField::new(
                    self.chart.clone(),
                    valence,
                    SmoothnessClass::Regularized(ctx.eps),
                    move |x| {
                        let y = map.forward(x);
                        let val = rep.eval(&y)?;
                        if valence.rank() == 0 {
                            return Ok(val);
                        }
                        let j = map.jacobian(x);
                        let (jinv, _) = j.inverse(1e-14)?;
                        Ok(transform_components(&val, &jinv, &j.transpose()))
                    },
                ))
            }
            Node::Opaque { eval, .. } => eval(ctx),
        }
    }
}

fn pushforward_transport(op: &TransportOperator, map: &Diffeo) -> TransportOperator {
    let inner = op.clone();
    let m = map.clone();
    TransportOperator::custom(
        op.chart.clone(),
        &format!("pushed[{}]", op.label),
        move |x, y| {
            let xb = m.inverse(x);
            let yb = m.inverse(y);
            let u = inner.eval(&xb, &yb)?;
            let jx = m.jacobian(&xb);
            let jy = m.jacobian(&yb);
            let (jy_inv, _) = jy.inverse(1e-14)?;
            Ok(jx.mul(&u).mul(&jy_inv))
        },
    )
}

fn pushforward_transport_perturbation(
    pert: &TransportPerturbation,
    map: &Diffeo,
) -> TransportPerturbation {
    let inner = pert.clone();
    let m = map.clone();
    TransportPerturbation::custom(
        pert.chart.clone(),
        &format!("pushed[{}]", pert.label),
        move |x, y| {
            let xb = m.inverse(x);
            let yb = m.inverse(y);
            let p = inner.eval(&xb, &yb)?;
            let jx = m.jacobian(&xb);
            let jy = m.jacobian(&yb);
            let (jy_inv, _) = jy.inverse(1e-14)?;
            Ok(jx.mul(&p).mul(&jy_inv))
        },
    )
}

fn pushforward_kernel_perturbation(pert: &KernelPerturbation, map: &Diffeo) -> KernelPerturbation {
    let inner = pert.clone();
    let m = map.clone();
    let m2 = map.clone();
    let factor = pert.support_factor;
    let inner2 = pert.clone();
    KernelPerturbation::custom_with_support(
        pert.chart.clone(),
        factor,
        &format!("pushed[{}]", pert.label),
        move |x, eps, y| {
            let xb = m.inverse(x);
            let yb = m.inverse(y);
            let det = m.jacobian(&yb).det().abs();
            if det == 0.0 {
                return 0.0;
            }
            inner.eval(&xb, eps, &yb) / det
        },
        move |x, eps| {
            let xb = m2.inverse(x);
            let (lo, hi) = inner2.support_box(&xb, eps);
            mapped_bounding_box(&m2, &lo, &hi)
        },
    )
}

/// Transform components by per-slot matrices: `u` on contravariant slots,
/// `l` on covariant slots (contraction over the second index of each).
fn transform_components(t: &Components, u: &SquareMatrix, l: &SquareMatrix) -> Components {
    let dim = u.dim();
    let r = t.valence.up as usize;
    let s = t.valence.down as usize;
    let mut out = Components::zeros(t.valence, dim);
    let count = t.len();
    let mut di = [0usize; 8];
    let mut dj = [0usize; 8];
    for fo in 0..count {
        out.decode(fo, &mut di[..r + s]);
        let mut acc = 0.0;
        for fi in 0..count {
            t.decode(fi, &mut dj[..r + s]);
            let mut w = 1.0;
            for k in 0..r {
                w *= u.get(di[k], dj[k]);
            }
            for k in 0..s {
                w *= l.get(di[r + k], dj[r + k]);
            }
            if w != 0.0 {
                acc += w * t.as_slice()[fi];
            }
        }
        out.as_mut_slice()[fo] = acc;
    }
    out
}

/// Slot-sum transform for the transport differential: one factor replaced by
/// the perturbation in every possible position.
fn transform_components_d1(
    t: &Components,
    u: &SquareMatrix,
    l: &SquareMatrix,
    pu: &SquareMatrix,
    pl: &SquareMatrix,
) -> Components {
    let dim = u.dim();
    let r = t.valence.up as usize;
    let s = t.valence.down as usize;
    let mut out = Components::zeros(t.valence, dim);
    let count = t.len();
    let mut di = [0usize; 8];
    let mut dj = [0usize; 8];
    for slot in 0..r + s {
        for fo in 0..count {
            out.decode(fo, &mut di[..r + s]);
            let mut acc = 0.0;
            for fi in 0..count {
                t.decode(fi, &mut dj[..r + s]);
                let mut w = 1.0;
                for k in 0..r {
                    let m = if k == slot { pu } else { u };
                    w *= m.get(di[k], dj[k]);
                }
                for k in 0..s {
                    let m = if r + k == slot { pl } else { l };
                    w *= m.get(di[r + k], dj[r + k]);
                }
                if w != 0.0 {
                    acc += w * t.as_slice()[fi];
                }
            }
            out.as_mut_slice()[fo] += acc;
        }
    }
    out
}

struct FactorSet {
    skip: bool,
    u: SquareMatrix,
    l: SquareMatrix,
    pu: Option<SquareMatrix>,
    pl: Option<SquareMatrix>,
}

fn factors_at(
    ctx: &EvalCtx,
    d1: Option<&TransportPerturbation>,
    rank: usize,
    x: &Point,
    y: &Point,
) -> Result<FactorSet> {
    let dim = ctx.upsilon.chart.dim();
    if rank == 0 || (ctx.upsilon.is_identity() && d1.is_none()) {
        return Ok(FactorSet {
            skip: true,
            u: SquareMatrix::identity(dim),
            l: SquareMatrix::identity(dim),
            pu: None,
            pl: None,
        });
    }
    let u = ctx.upsilon.eval(x, y)?;
    let l = ctx.upsilon.eval_lower(x, y)?;
    let (pu, pl) = match d1 {
        Some(p) => (Some(p.eval(x, y)?), Some(p.eval_lower(x, y)?)),
        None => (None, None),
    };
    Ok(FactorSet {
        skip: false,
        u,
        l,
        pu,
        pl,
    })
}

fn apply_factors(t: &Components, f: &FactorSet, d1_active: bool) -> Components {
    if d1_active {
        // With the identity operator the factor matrices are exact
        // identities, so the slot sum still needs the perturbation factors.
        transform_components_d1(
            t,
            &f.u,
            &f.l,
            f.pu.as_ref().unwrap(),
            f.pl.as_ref().unwrap(),
        )
    } else if f.skip {
        t.clone()
    } else {
        transform_components(t, &f.u, &f.l)
    }
}

fn kernel_weight(
    ctx: &EvalCtx,
    d2: Option<&KernelPerturbation>,
    x: &Point,
    eps: f64,
    y: &Point,
) -> f64 {
    match d2 {
        Some(k) => k.eval(x, eps, y),
        None => ctx.kernel.eval(x, eps, y),
    }
}

fn integration_support(
    ctx: &EvalCtx,
    d2: Option<&KernelPerturbation>,
    x: &Point,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, f64) {
    match d2 {
        Some(k) => {
            let (lo, hi) = k.support_box(x, eps);
            (lo, hi, k.support_factor * eps)
        }
        None => {
            let (lo, hi) = ctx.kernel.support_box(x, eps);
            (lo, hi, eps)
        }
    }
}

/// Evaluate the smoothing integral at one point.
fn iota_point(
    rough: &RoughTensorField,
    d1: Option<&TransportPerturbation>,
    d2: Option<&KernelPerturbation>,
    ctx: &EvalCtx,
    x: &Point,
) -> Result<Components> {
    let chart = &rough.chart;
    let dim = chart.dim();
    let eps = ctx.eps;
    let d1_active = d1.is_some() && rough.valence.rank() > 0;
    let (lo, hi, support_radius) = integration_support(ctx, d2, x, eps);

    // Support must sit inside the chart, with the diagonal safety margin.
    let margin = support_radius * (dim as f64).sqrt();
    chart.require_margin(x, margin)?;
    for ax in 0..dim {
        if lo[ax] < chart.lo()[ax] || hi[ax] > chart.hi()[ax] {
            return Err(Error::BoundaryProximity {
                point: x.coords().to_vec(),
                margin: chart.boundary_margin(x),
                needed: margin,
            });
        }
    }

    let mut total = Components::zeros(rough.valence, dim);

    // Point masses have a closed form: coefficient times kernel value, with
    // transport factors carrying the indices.
    for term in &rough.deltas {
        let w = kernel_weight(ctx, d2, x, eps, &term.point);
        if w == 0.0 && !d1_active {
            continue;
        }
        let f = factors_at(ctx, d1, rough.valence.rank(), x, &term.point)?;
        let moved = apply_factors(&term.coeff, &f, d1_active);
        total.axpy(w, &moved);
    }

    let loc = match &rough.loc {
        Some(l) => l,
        None => return Ok(total),
    };

    // Engine selection for the locally integrable part.
    let near_singular = loc
        .singular
        .iter()
        .find(|p| p.dist_sup(x) <= ctx.quad.singular_threshold * support_radius)
        .copied();

    if let Some(p) = near_singular {
        if dim != 2 {
            return Err(Error::ContractViolation(
                "singular integrands are only supported on two-dimensional charts".into(),
            ));
        }
        return polar_engine(rough, loc, d1, d2, ctx, x, &p, &lo, &hi, total);
    }

    let fast = d2.is_none() && ctx.kernel.as_family().is_some();

    if fast {
        let fam = ctx.kernel.as_family().unwrap();
        let m = ctx.quad.weight_nodes;
        let mut rules = Vec::with_capacity(dim);
        for ax in 0..dim {
            rules.push(fam.axis_quad_rule(ax, m));
        }
        // Tensor-product weighted sum: kernel mass is inside the weights.
        let total_nodes: usize = rules.iter().map(|r| r.nodes.len()).product();
        let mut coords = vec![0.0; dim];
        for flat in 0..total_nodes {
            let mut rem = flat;
            let mut w = 1.0;
            for ax in (0..dim).rev() {
                let n = rules[ax].nodes.len();
                let i = rem % n;
                rem /= n;
                coords[ax] = x.get(ax) + eps * rules[ax].nodes[i];
                w *= rules[ax].weights[i];
            }
            let y = Point::new(&coords);
            let val = (loc.eval)(&y)?;
            if !val.is_finite() {
                return Err(Error::IntegrationPoisoned {
                    point: y.coords().to_vec(),
                });
            }
            let f = factors_at(ctx, d1, rough.valence.rank(), x, &y)?;
            let moved = apply_factors(&val, &f, d1_active);
            total.axpy(w, &moved);
        }
        return Ok(total);
    }

    // General path: composite Gauss cells over the support box.
    let cells_per_axis = (2 * ctx.quad.cells_per_radius).max(2);
    let cells = vec![cells_per_axis; dim];
    let mut failure: Option<Error> = None;
    quadrature::for_each_box_node(&lo, &hi, &cells, ctx.quad.cell_order, |yc, w| {
        if failure.is_some() {
            return;
        }
        let y = Point::new(yc);
        let kw = kernel_weight(ctx, d2, x, eps, &y);
        if kw == 0.0 {
            return;
        }
        match (loc.eval)(&y) {
            Ok(val) => {
                if !val.is_finite() {
                    failure = Some(Error::IntegrationPoisoned {
                        point: yc.to_vec(),
                    });
                    return;
                }
                match factors_at(ctx, d1, rough.valence.rank(), x, &y) {
                    Ok(f) => {
                        let moved = apply_factors(&val, &f, d1_active);
                        total.axpy(w * kw, &moved);
                    }
                    Err(e) => failure = Some(e),
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(total)
}

/// Graded polar integration around a singular point of the rough field. The
/// integrand is smooth in polar coordinates centered at the singularity, so
/// moderate panel counts reach quadrature accuracy far below the kernel's
/// own scale.
#[allow(clippy::too_many_arguments)]
fn polar_engine(
    rough: &RoughTensorField,
    loc: &LocPart,
    d1: Option<&TransportPerturbation>,
    d2: Option<&KernelPerturbation>,
    ctx: &EvalCtx,
    x: &Point,
    p: &Point,
    lo: &[f64],
    hi: &[f64],
    mut total: Components,
) -> Result<Components> {
    let eps = ctx.eps;
    let d1_active = d1.is_some() && rough.valence.rank() > 0;

    // Distance from the singular point to the support box.
    let mut gap2 = 0.0;
    for ax in 0..2 {
        let d = (lo[ax] - p.get(ax)).max(p.get(ax) - hi[ax]).max(0.0);
        gap2 += d * d;
    }
    let r_min = gap2.sqrt();
    let mut r_max: f64 = 0.0;
    for cx in [lo[0], hi[0]] {
        for cy in [lo[1], hi[1]] {
            let dx = cx - p.get(0);
            let dy = cy - p.get(1);
            r_max = r_max.max((dx * dx + dy * dy).sqrt());
        }
    }

    let panel = (ctx.quad.polar_radial_panel * eps).max(1e-300);
    let order = ctx.quad.polar_order;

    let (t0, t1, theta_panels, radial): (f64, f64, usize, Vec<f64>) = if r_min <= 0.0 {
        // Full circle around a singularity inside the support box.
        let nr = ((r_max / panel).ceil() as usize).clamp(4, 48);
        let mut edges = Vec::with_capacity(nr + 1);
        for k in 0..=nr {
            edges.push(r_max * k as f64 / nr as f64);
        }
        (
            0.0,
            2.0 * std::f64::consts::PI,
            ctx.quad.polar_theta_panels.max(2),
            edges,
        )
    } else {
        // Wedge subtended by the support box as seen from the singularity.
        let cx = 0.5 * (lo[0] + hi[0]) - p.get(0);
        let cy = 0.5 * (lo[1] + hi[1]) - p.get(1);
        let theta_c = cy.atan2(cx);
        let mut half: f64 = 0.0;
        for bx in [lo[0], hi[0]] {
            for by in [lo[1], hi[1]] {
                let a = (by - p.get(1)).atan2(bx - p.get(0));
                let mut d = a - theta_c;
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                while d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                half = half.max(d.abs());
            }
        }
        let half = (half * 1.02 + 1e-9).min(std::f64::consts::PI);
        let nr = (((r_max - r_min) / panel).ceil() as usize).clamp(2, 48);
        let mut edges = Vec::with_capacity(nr + 1);
        for k in 0..=nr {
            edges.push(r_min + (r_max - r_min) * k as f64 / nr as f64);
        }
        (
            theta_c - half,
            theta_c + half,
            (ctx.quad.polar_theta_panels / 2).max(2),
            edges,
        )
    };

    for k in 0..radial.len() - 1 {
        let rule = quadrature::annulus_wedge_rule(
            [p.get(0), p.get(1)],
            radial[k],
            radial[k + 1],
            t0,
            t1,
            1,
            theta_panels,
            order,
        );
        for (node, &w) in rule.nodes.iter().zip(&rule.weights) {
            // Outside the support box the kernel weight vanishes; check the
            // box first to skip the expensive evaluations.
            if node[0] < lo[0] || node[0] > hi[0] || node[1] < lo[1] || node[1] > hi[1] {
                continue;
            }
            let y = Point::new(node);
            let kw = kernel_weight(ctx, d2, x, eps, &y);
            if kw == 0.0 {
                continue;
            }
            let val = (loc.eval)(&y)?;
            if !val.is_finite() {
                return Err(Error::IntegrationPoisoned {
                    point: node.to_vec(),
                });
            }
            let f = factors_at(ctx, d1, rough.valence.rank(), x, &y)?;
            let moved = apply_factors(&val, &f, d1_active);
            total.axpy(w * kw, &moved);
        }
    }
    Ok(total)
}

/// Pairing of a generalized field with a test density at one scale:
/// full index contraction integrated over the density's support. Sums and
/// scalings distribute so each concentrated piece gets its own graded grid.
pub fn pair(field: &GeneralizedField, ctx: &EvalCtx, psi: &TestDensity) -> Result<f64> {
    if psi.coeff.valence != field.valence.dual() {
        return Err(Error::invalid(
            "test density valence must be dual to the field valence",
        ));
    }
    match &*field.node {
        Node::Zero => Ok(0.0),
        Node::Sum(a, b) => Ok(pair(a, ctx, psi)? + pair(b, ctx, psi)?),
        Node::Scale(s, a) => Ok(s * pair(a, ctx, psi)?),
        _ => {
            let rep = field.eval(ctx)?;
            let hints = field.concentration_hints();
            pair_rep(&rep, ctx, psi, &hints)
        }
    }
}

fn pair_rep(
    rep: &TensorField,
    ctx: &EvalCtx,
    psi: &TestDensity,
    hints: &[Point],
) -> Result<f64> {
    let dim = rep.chart.dim();
    let (lo, hi) = psi.support_box();
    let hint = hints.iter().find(|p| {
        (0..dim).all(|ax| p.get(ax) >= lo[ax] - psi.radius && p.get(ax) <= hi[ax] + psi.radius)
    });

    if dim == 2 {
        if let Some(h) = hint {
            return pair_polar(rep, ctx, psi, h, &lo, &hi);
        }
    }

    let cells = vec![ctx.quad.pair_cells; dim];
    let mut acc = 0.0;
    let mut failure: Option<Error> = None;
    quadrature::for_each_box_node(&lo, &hi, &cells, ctx.quad.pair_order, |xc, w| {
        if failure.is_some() {
            return;
        }
        let xp = Point::new(xc);
        if psi.center.dist(&xp) >= psi.radius {
            return;
        }
        match rep.eval(&xp) {
            Ok(v) => {
                let contribution = crate::chart::pair_contract(&v, &psi.eval(&xp));
                if contribution.is_finite() {
                    acc += w * contribution;
                } else {
                    failure = Some(Error::IntegrationPoisoned {
                        point: xc.to_vec(),
                    });
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(acc)
}

/// Graded polar pairing grid: fine equal panels out to a few eps from the
/// concentration point, then geometrically growing panels to the edge of the
/// density support.
fn pair_polar(
    rep: &TensorField,
    ctx: &EvalCtx,
    psi: &TestDensity,
    h: &Point,
    lo: &[f64],
    hi: &[f64],
) -> Result<f64> {
    let eps = ctx.eps;
    let mut r_max: f64 = 0.0;
    for cx in [lo[0], hi[0]] {
        for cy in [lo[1], hi[1]] {
            let dx = cx - h.get(0);
            let dy = cy - h.get(1);
            r_max = r_max.max((dx * dx + dy * dy).sqrt());
        }
    }
    let inner = (ctx.quad.pair_inner_factor * eps).min(r_max);
    let mut edges = vec![0.0];
    let inner_panels = ctx.quad.pair_inner_panels.max(2);
    for k in 1..=inner_panels {
        edges.push(inner * k as f64 / inner_panels as f64);
    }
    let mut r = inner;
    while r < r_max && edges.len() < 48 {
        r = (r * ctx.quad.pair_growth).min(r_max);
        edges.push(r);
    }
    if *edges.last().unwrap() < r_max {
        edges.push(r_max);
    }

    let mut acc = 0.0;
    for k in 0..edges.len() - 1 {
        if edges[k + 1] <= edges[k] {
            continue;
        }
        let rule = quadrature::annulus_wedge_rule(
            [h.get(0), h.get(1)],
            edges[k],
            edges[k + 1],
            0.0,
            2.0 * std::f64::consts::PI,
            1,
            ctx.quad.polar_theta_panels.max(4),
            ctx.quad.pair_order,
        );
        for (node, &w) in rule.nodes.iter().zip(&rule.weights) {
            let xp = Point::new(node);
            if psi.center.dist(&xp) >= psi.radius {
                continue;
            }
            let v = rep.eval(&xp)?;
            let contribution = crate::chart::pair_contract(&v, &psi.eval(&xp));
            if !contribution.is_finite() {
                return Err(Error::IntegrationPoisoned {
                    point: node.to_vec(),
                });
            }
            acc += w * contribution;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::MollifierProfile;
    use crate::quadrature::integrate_box;

    fn chart() -> Arc<Chart> {
        Arc::new(Chart::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap())
    }

    fn ctx_with(q: u32, skew: f64, eps: f64) -> EvalCtx {
        let c = chart();
        let fam = SmoothingKernelFamily::new(c.clone(), MollifierProfile::make(q, skew).unwrap());
        EvalCtx::new(TransportOperator::identity(c), fam, eps)
    }

    #[test]
    fn smoothing_preserves_constants_exactly() {
        let c = chart();
        let one = RoughTensorField::from_smooth(&TensorField::scalar_closed_form(c, |_| 1.0));
        let f = iota(&one);
        // fast path (positive kernel)
        let rep = f.eval(&ctx_with(0, 0.0, 0.1)).unwrap();
        let v = rep.eval(&Point::new(&[0.2, -0.3])).unwrap().scalar_value();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
        // general cell path (sign-changing kernel)
        let rep = f.eval(&ctx_with(2, 0.0, 0.1)).unwrap();
        let v = rep.eval(&Point::new(&[0.2, -0.3])).unwrap().scalar_value();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn embedded_point_mass_is_the_kernel_value() {
        let c = chart();
        let p = Point::new(&[0.1, -0.05]);
        let rough = RoughTensorField::delta(c.clone(), p, Components::scalar(2.5)).unwrap();
        let f = iota(&rough);
        let ctx = ctx_with(0, 0.0, 0.2);
        let rep = f.eval(&ctx).unwrap();
        let x = Point::new(&[0.15, 0.0]);
        let got = rep.eval(&x).unwrap().scalar_value();
        let fam = ctx.kernel.as_family().unwrap();
        let expect = 2.5 * fam.eval(&x, 0.2, &p);
        assert_eq!(got, expect);
    }

    #[test]
    fn smoothing_matches_dense_quadrature_oracle() {
        // Independent oracle: integrate f * kernel with a fine composite
        // Gauss grid (a different rule family than the weighted fast path).
        let c = chart();
        let field = TensorField::scalar_closed_form(c.clone(), |x| {
            (1.7 * x[0]).sin() + 0.3 * x[1] * x[1]
        });
        let oracle_field = field.clone();
        let rough = RoughTensorField::from_smooth(&field);
        let f = iota(&rough);
        let ctx = ctx_with(0, 0.5, 0.15);
        let rep = f.eval(&ctx).unwrap();
        let x = Point::new(&[0.2, 0.1]);
        let got = rep.eval(&x).unwrap().scalar_value();
        let fam = ctx.kernel.as_family().unwrap();
        let (lo, hi) = fam.support_box(&x, 0.15);
        let oracle = integrate_box(&lo, &hi, &[40, 40], 12, |y| {
            let yp = Point::new(y);
            oracle_field.eval(&yp).unwrap().scalar_value() * fam.eval(&x, 0.15, &yp)
        });
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }

    #[test]
    fn transported_smoothing_matches_cell_oracle() {
        // Vector field with a closed-form (non-identity) transport operator;
        // check the weighted fast path against dense cells.
        let c = chart();
        let field = TensorField::new(
            c.clone(),
            Valence::new(1, 0),
            SmoothnessClass::ClosedForm,
            |x| {
                Ok(Components::from_slice(
                    Valence::new(1, 0),
                    2,
                    &[x.get(0) + 0.3, x.get(1) * x.get(0)],
                ))
            },
        );
        let oracle_field = field.clone();
        let op = TransportOperator::custom(c.clone(), "affine", |x, y| {
            let mut u = SquareMatrix::identity(2);
            let cvec = [0.6, -0.4];
            for a in 0..2 {
                for b in 0..2 {
                    u.set(a, b, u.get(a, b) + (x.get(a) - y.get(a)) * cvec[b]);
                }
            }
            Ok(u)
        });
        let fam = SmoothingKernelFamily::new(c.clone(), MollifierProfile::make(0, 0.0).unwrap());
        let oracle_fam = fam.clone();
        let oracle_op = op.clone();
        let ctx = EvalCtx::new(op, fam, 0.2);
        let rough = RoughTensorField::from_smooth(&field);
        let rep = iota(&rough).eval(&ctx).unwrap();
        let x = Point::new(&[0.1, -0.2]);
        let got = rep.eval(&x).unwrap();
        let (lo, hi) = oracle_fam.support_box(&x, 0.2);
        for comp in 0..2 {
            let oracle = integrate_box(&lo, &hi, &[10, 10], 10, |y| {
                let yp = Point::new(y);
                let val = oracle_field.eval(&yp).unwrap();
                let u = oracle_op.eval(&x, &yp).unwrap();
                let moved: f64 = (0..2).map(|b| u.get(comp, b) * val.as_slice()[b]).sum();
                moved * oracle_fam.eval(&x, 0.2, &yp)
            });
            assert!(
                (got.as_slice()[comp] - oracle).abs() < 1e-9,
                "component {comp}: {} vs {oracle}",
                got.as_slice()[comp]
            );
        }
    }

    #[test]
    fn sigma_is_exact_at_every_scale() {
        let c = chart();
        let field = TensorField::scalar_closed_form(c, |x| x[0] * x[0] - x[1]);
        let f = sigma(&field);
        for eps in [0.3, 0.01, 1e-4] {
            let rep = f.eval(&ctx_with(0, 0.0, eps)).unwrap();
            let p = Point::new(&[0.37, -0.11]);
            assert_eq!(
                rep.eval(&p).unwrap().scalar_value(),
                field.eval(&p).unwrap().scalar_value()
            );
        }
    }

    #[test]
    fn embedding_is_linear() {
        let c = chart();
        let fa = TensorField::scalar_closed_form(c.clone(), |x| x[0].cos());
        let fb = TensorField::scalar_closed_form(c.clone(), |x| x[1] * x[1]);
        let combined = TensorField::scalar_closed_form(c.clone(), |x| {
            2.0 * x[0].cos() - 0.5 * x[1] * x[1]
        });
        let ga = iota(&RoughTensorField::from_smooth(&fa));
        let gb = iota(&RoughTensorField::from_smooth(&fb));
        let sum = ga.scale(2.0).add(&gb.scale(-0.5)).unwrap();
        let direct = iota(&RoughTensorField::from_smooth(&combined));
        let ctx = ctx_with(0, 0.0, 0.12);
        let p = Point::new(&[-0.2, 0.3]);
        let a = sum.eval(&ctx).unwrap().eval(&p).unwrap().scalar_value();
        let b = direct.eval(&ctx).unwrap().eval(&p).unwrap().scalar_value();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn dependence_tags_follow_structure() {
        let c = chart();
        let scalar = iota(&RoughTensorField::from_smooth(
            &TensorField::scalar_closed_form(c.clone(), |x| x[0]),
        ));
        assert!(!scalar.upsilon_dependent());
        assert!(scalar.kernel_dependent());
        let vector_field = TensorField::new(
            c.clone(),
            Valence::new(1, 0),
            SmoothnessClass::ClosedForm,
            |x| {
                Ok(Components::from_slice(
                    Valence::new(1, 0),
                    2,
                    &[x.get(0), x.get(1)],
                ))
            },
        );
        let vector = iota(&RoughTensorField::from_smooth(&vector_field));
        assert!(vector.upsilon_dependent());
        let smooth = sigma(&TensorField::scalar_closed_form(c, |x| x[1]));
        assert!(!smooth.upsilon_dependent());
        assert!(!smooth.kernel_dependent());
    }

    #[test]
    fn scalar_transport_differential_is_zero() {
        let c = chart();
        let scalar = iota(&RoughTensorField::from_smooth(
            &TensorField::scalar_closed_form(c.clone(), |x| x[0]),
        ));
        let pert = TransportPerturbation::custom(c, "p", |_x, _y| Ok(SquareMatrix::zero(2)));
        let d = scalar.d1(&pert).unwrap();
        assert!(d.is_zero_node());
    }

    #[test]
    fn kernel_differential_of_constants_vanishes() {
        // d2 replaces the kernel by a zero-mass perturbation, so smoothing a
        // constant must give (numerically) zero.
        let c = chart();
        let one = iota(&RoughTensorField::from_smooth(
            &TensorField::scalar_closed_form(c.clone(), |_| 1.0),
        ));
        let f0 = SmoothingKernelFamily::new(c.clone(), MollifierProfile::make(0, 0.0).unwrap());
        let f1 = SmoothingKernelFamily::new(c.clone(), MollifierProfile::make(0, 0.7).unwrap());
        let pert = KernelPerturbation::difference(&f0, &f1);
        let d = one.d2(&pert).unwrap();
        let rep = d.eval(&ctx_with(0, 0.0, 0.15)).unwrap();
        let v = rep.eval(&Point::new(&[0.1, 0.1])).unwrap().scalar_value();
        assert!(v.abs() < 1e-10, "{v}");
    }

    #[test]
    fn polar_engine_agrees_with_fast_path_on_smooth_fields() {
        // Declare an artificial singular point to force the polar engine on
        // a field that is in fact smooth, and compare against the weighted
        // fast path.
        let c = chart();
        let smooth_closure = |x: &Point| {
            Ok(Components::scalar(
                (x.get(0) * 1.3).cos() + x.get(1) * x.get(0),
            ))
        };
        let plain = RoughTensorField::loc_integrable(
            c.clone(),
            Valence::SCALAR,
            &[],
            smooth_closure,
        );
        let marked = RoughTensorField::loc_integrable(
            c.clone(),
            Valence::SCALAR,
            &[Point::new(&[0.0, 0.0])],
            smooth_closure,
        );
        // Radial panels resolve the kernel profile; the theta count resolves
        // the narrow angular support windows near the box-corner radii.
        let ctx = ctx_with(0, 0.0, 0.05).with_quad(QuadConfig {
            polar_radial_panel: 0.05,
            polar_order: 12,
            polar_theta_panels: 48,
            ..QuadConfig::default()
        });
        for xp in [
            Point::new(&[0.02, 0.01]),   // singularity inside the support
            Point::new(&[0.12, -0.08]),  // wedge geometry
        ] {
            let a = iota(&plain)
                .eval(&ctx)
                .unwrap()
                .eval(&xp)
                .unwrap()
                .scalar_value();
            let b = iota(&marked)
                .eval(&ctx)
                .unwrap()
                .eval(&xp)
                .unwrap()
                .scalar_value();
            assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{a} vs {b} at {xp:?}");
        }
    }

    #[test]
    fn polar_engine_integrates_angular_fields_accurately() {
        // Degree-zero homogeneous integrand: smooth away from the origin,
        // discontinuous there. Oracle: the same integral in closed polar
        // form with dense panels.
        let c = chart();
        let field = RoughTensorField::loc_integrable(
            c.clone(),
            Valence::SCALAR,
            &[Point::new(&[0.0, 0.0])],
            |y| {
                let (a, b) = (y.get(0), y.get(1));
                let r2 = a * a + b * b;
                Ok(Components::scalar((a * a - b * b) / r2))
            },
        );
        let ctx = ctx_with(0, 0.0, 0.08).with_quad(QuadConfig {
            polar_radial_panel: 0.1,
            polar_order: 12,
            polar_theta_panels: 12,
            ..QuadConfig::default()
        });
        let x = Point::new(&[0.03, 0.02]);
        let got = iota(&field)
            .eval(&ctx)
            .unwrap()
            .eval(&x)
            .unwrap()
            .scalar_value();
        // dense oracle on a very fine polar grid around the origin
        let fam = ctx.kernel.as_family().unwrap();
        let (lo, hi) = fam.support_box(&x, 0.08);
        let mut r_max: f64 = 0.0;
        for cx in [lo[0], hi[0]] {
            for cy in [lo[1], hi[1]] {
                r_max = r_max.max((cx * cx + cy * cy).sqrt());
            }
        }
        let rule = quadrature::annulus_wedge_rule(
            [0.0, 0.0],
            0.0,
            r_max,
            0.0,
            2.0 * std::f64::consts::PI,
            96,
            24,
            10,
        );
        let mut oracle = 0.0;
        for (node, &w) in rule.nodes.iter().zip(&rule.weights) {
            if node[0] < lo[0] || node[0] > hi[0] || node[1] < lo[1] || node[1] > hi[1] {
                continue;
            }
            let y = Point::new(node);
            let r2 = node[0] * node[0] + node[1] * node[1];
            let v = (node[0] * node[0] - node[1] * node[1]) / r2;
            oracle += w * v * fam.eval(&x, 0.08, &y);
        }
        assert!((got - oracle).abs() < 1e-7, "{got} vs {oracle}");
    }

    #[test]
    fn translation_equivariance_of_the_embedding() {
        // For translate-scale kernels and identity transport, pulling back
        // along a translation commutes with the embedding exactly.
        let c = chart();
        let field = TensorField::scalar_closed_form(c.clone(), |x| {
            (2.0 * x[0]).sin() * (1.0 + 0.5 * x[1])
        });
        let shifted_field = TensorField::scalar_closed_form(c.clone(), |x| {
            (2.0 * (x[0] + 0.15)).sin() * (1.0 + 0.5 * (x[1] - 0.1))
        });
        let map = Diffeo::translation(c.clone(), &[0.15, -0.1]);
        let emb = iota(&RoughTensorField::from_smooth(&field));
        let pulled = pullback_diffeo(&emb, &map);
        let emb_shifted = iota(&RoughTensorField::from_smooth(&shifted_field));
        // The pulled-back side runs on the mapped kernel (composite cells),
        // so give the cell engine enough resolution to meet the bound.
        let ctx = ctx_with(0, 0.0, 0.1).with_quad(QuadConfig {
            cells_per_radius: 10,
            cell_order: 12,
            ..QuadConfig::default()
        });
        let p = Point::new(&[0.1, 0.2]);
        let a = pulled.eval(&ctx).unwrap().eval(&p).unwrap().scalar_value();
        let b = emb_shifted
            .eval(&ctx)
            .unwrap()
            .eval(&p)
            .unwrap()
            .scalar_value();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn linear_pullback_transforms_vector_components() {
        // sigma-embedded vector field under a linear map: closed-form check
        // of the frame transform (no quadrature involved).
        let c = chart();
        let field = TensorField::new(
            c.clone(),
            Valence::new(1, 0),
            SmoothnessClass::ClosedForm,
            |x| {
                Ok(Components::from_slice(
                    Valence::new(1, 0),
                    2,
                    &[x.get(0), 2.0 * x.get(1)],
                ))
            },
        );
        let mut a = SquareMatrix::identity(2);
        a.set(0, 0, 1.2);
        a.set(0, 1, 0.3);
        a.set(1, 0, -0.2);
        a.set(1, 1, 0.9);
        let map = Diffeo::linear(c.clone(), a).unwrap();
        let pulled = pullback_diffeo(&sigma(&field), &map);
        let ctx = ctx_with(0, 0.0, 0.1);
        let x = Point::new(&[0.2, -0.1]);
        let got = pulled.eval(&ctx).unwrap().eval(&x).unwrap();
        // oracle: (mu* V)(x) = A^{-1} V(A x)
        let ax = apply_matrix(&a, &x, 2);
        let v = [ax.get(0), 2.0 * ax.get(1)];
        let (ainv, _) = a.inverse(1e-14).unwrap();
        for i in 0..2 {
            let oracle: f64 = (0..2).map(|j| ainv.get(i, j) * v[j]).sum();
            assert!(
                (got.as_slice()[i] - oracle).abs() < 1e-12,
                "{} vs {oracle}",
                got.as_slice()[i]
            );
        }
    }

    #[test]
    fn pairing_of_exact_embeddings_matches_direct_integral() {
        let c = chart();
        let field = TensorField::scalar_closed_form(c.clone(), |x| x[0] + 2.0 * x[1] + 1.0);
        let oracle_field = field.clone();
        let psi = TestDensity::scalar_bump(c.clone(), &[0.1, 0.0], 0.5, 1.0, "psi").unwrap();
        let oracle_psi = psi.clone();
        let f = sigma(&field);
        let ctx = ctx_with(0, 0.0, 0.05);
        let got = pair(&f, &ctx, &psi).unwrap();
        let (lo, hi) = psi.support_box();
        let oracle = integrate_box(&lo, &hi, &[14, 14], 8, |x| {
            let xp = Point::new(x);
            oracle_field.eval(&xp).unwrap().scalar_value() * oracle_psi.profile(&xp)
        });
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
    }

    #[test]
    fn pairing_of_embedded_point_mass_approaches_density_value() {
        let c = chart();
        let p = Point::new(&[0.05, -0.1]);
        let rough = RoughTensorField::delta(c.clone(), p, Components::scalar(1.0)).unwrap();
        let f = iota(&rough);
        let psi = TestDensity::scalar_bump(c.clone(), &[0.0, 0.0], 0.55, 0.8, "psi").unwrap();
        let ctx = ctx_with(0, 0.0, 0.02);
        let got = pair(&f, &ctx, &psi).unwrap();
        let expect = psi.profile(&p);
        assert!((got - expect).abs() < 2e-3 * expect.abs(), "{got} vs {expect}");
    }

    #[test]
    fn smoothing_requires_interior_margin() {
        let c = chart();
        let one = iota(&RoughTensorField::from_smooth(
            &TensorField::scalar_closed_form(c, |_| 1.0),
        ));
        let ctx = ctx_with(0, 0.0, 0.2);
        let rep = one.eval(&ctx).unwrap();
        let err = rep.eval(&Point::new(&[0.9, 0.0])).unwrap_err();
        assert!(matches!(err, Error::BoundaryProximity { .. }), "{err:?}");
    }

    #[test]
    fn singular_support_in_three_dims_is_rejected() {
        let c = Arc::new(Chart::new(&[-1.0, -1.0, -1.0], &[1.0, 1.0, 1.0]).unwrap());
        let field = RoughTensorField::loc_integrable(
            c.clone(),
            Valence::SCALAR,
            &[Point::new(&[0.0, 0.0, 0.0])],
            |y| {
                let r2: f64 = y.coords().iter().map(|v| v * v).sum();
                Ok(Components::scalar(y.get(0) * y.get(0) / r2))
            },
        );
        let fam = SmoothingKernelFamily::new(c.clone(), MollifierProfile::make(0, 0.0).unwrap());
        let ctx = EvalCtx::new(TransportOperator::identity(c), fam, 0.1);
        let rep = iota(&field).eval(&ctx).unwrap();
        let err = rep.eval(&Point::new(&[0.05, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)), "{err:?}");
    }
}
