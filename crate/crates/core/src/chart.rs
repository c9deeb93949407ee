//! Chart geometry and tensor component storage.
//!
//! Everything lives on a single chart: an axis-aligned box in dimension 2, 3,
//! or 4 with an optional finite list of excluded points (places where a rough
//! field is singular). Tensor fields are immutable evaluation closures from
//! points to flat component arrays; all state needed to evaluate is captured
//! at construction, so fields are cheap to clone and safe to share.

use crate::error::{Error, Result};
use crate::fd;
use crate::quadrature;
use serde::Serialize;
use smallvec::SmallVec;
use std::fmt;
use std::sync::Arc;

pub const MAX_DIM: usize = 4;

/// A chart point. Fixed-capacity storage keeps evaluation allocation-free.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[f64]) -> Point {
        assert!(coords.len() >= 1 && coords.len() <= MAX_DIM);
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Point {
            coords: c,
            dim: coords.len() as u8,
        }
    }

    pub fn zero(dim: usize) -> Point {
        Point::new(&vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    pub fn get(&self, axis: usize) -> f64 {
        self.coords()[axis]
    }

    pub fn set(&mut self, axis: usize, value: f64) {
        assert!(axis < self.dim());
        self.coords[axis] = value;
    }

    /// Copy with `offset` added along one axis.
    pub fn offset(&self, axis: usize, offset: f64) -> Point {
        let mut p = *self;
        p.coords[axis] += offset;
        p
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dist_sup(&self, other: &Point) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coords().iter()).finish()
    }
}

/// Tensor valence: `up` contravariant and `down` covariant slots.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub struct Valence {
    pub up: u8,
    pub down: u8,
}

impl Valence {
    pub const SCALAR: Valence = Valence { up: 0, down: 0 };

    pub fn new(up: usize, down: usize) -> Valence {
        Valence {
            up: up as u8,
            down: down as u8,
        }
    }

    pub fn rank(&self) -> usize {
        self.up as usize + self.down as usize
    }

    pub fn count(&self, dim: usize) -> usize {
        dim.pow(self.rank() as u32)
    }

    /// Valence of the pairing partner: a test density for `(r, s)` fields
    /// carries `(s, r)` coefficients.
    pub fn dual(&self) -> Valence {
        Valence {
            up: self.down,
            down: self.up,
        }
    }
}

/// Flat component array of a tensor at a point.
///
/// Layout: upper indices first, then lower, row-major with the first index
/// most significant. All arithmetic helpers are componentwise.
#[derive(Clone, PartialEq)]
pub struct Components {
    pub valence: Valence,
    pub dim: u8,
    data: SmallVec<[f64; 16]>,
}

impl Components {
    pub fn zeros(valence: Valence, dim: usize) -> Components {
        Components {
            valence,
            dim: dim as u8,
            data: smallvec::smallvec![0.0; valence.count(dim)],
        }
    }

    pub fn scalar(value: f64) -> Components {
        Components {
            valence: Valence::SCALAR,
            dim: 1,
            data: smallvec::smallvec![value],
        }
    }

    pub fn from_slice(valence: Valence, dim: usize, data: &[f64]) -> Components {
        assert_eq!(data.len(), valence.count(dim));
        Components {
            valence,
            dim: dim as u8,
            data: SmallVec::from_slice(data),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scalar_value(&self) -> f64 {
        assert_eq!(self.valence.rank(), 0, "scalar_value on non-scalar");
        self.data[0]
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.valence.rank());
        let dim = self.dim as usize;
        let mut idx = 0;
        for &i in multi {
            debug_assert!(i < dim);
            idx = idx * dim + i;
        }
        idx
    }

    pub fn get(&self, multi: &[usize]) -> f64 {
        self.data[self.flat_index(multi)]
    }

    pub fn set(&mut self, multi: &[usize], value: f64) {
        let idx = self.flat_index(multi);
        self.data[idx] = value;
    }

    /// Decode a flat index into digits (base `dim`).
    pub fn decode(&self, mut flat: usize, out: &mut [usize]) {
        let dim = self.dim as usize;
        for slot in (0..self.valence.rank()).rev() {
            out[slot] = flat % dim;
            flat /= dim;
        }
    }

    pub fn scale_mut(&mut self, a: f64) {
        for v in self.data.iter_mut() {
            *v *= a;
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Components) {
        debug_assert_eq!(self.len(), other.len());
        for (s, o) in self.data.iter_mut().zip(other.data.iter()) {
            *s += a * o;
        }
    }

    /// Euclidean norm over all components (the flat-frame norm).
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Components {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Components(({},{}), dim {}, {:?})",
            self.valence.up, self.valence.down, self.dim, &self.data[..]
        )
    }
}

/// Full contraction of a `(r, s)` tensor with `(s, r)` pairing coefficients.
pub fn pair_contract(t: &Components, psi: &Components) -> f64 {
    assert_eq!(t.valence.dual(), psi.valence, "pairing valence mismatch");
    let r = t.valence.up as usize;
    let s = t.valence.down as usize;
    if r + s == 0 {
        return t.as_slice()[0] * psi.as_slice()[0];
    }
    assert_eq!(t.dim, psi.dim);
    let mut digits = [0usize; 8];
    let mut swapped = [0usize; 8];
    let mut acc = 0.0;
    for flat in 0..t.len() {
        t.decode(flat, &mut digits[..r + s]);
        swapped[..s].copy_from_slice(&digits[r..r + s]);
        swapped[s..s + r].copy_from_slice(&digits[..r]);
        acc += t.as_slice()[flat] * psi.get(&swapped[..r + s]);
    }
    acc
}

/// Small square matrix sized to the chart dimension.
#[derive(Clone, Copy, Debug)]
pub struct SquareMatrix {
    m: [[f64; MAX_DIM]; MAX_DIM],
    dim: u8,
}

impl SquareMatrix {
    pub fn zero(dim: usize) -> SquareMatrix {
        SquareMatrix {
            m: [[0.0; MAX_DIM]; MAX_DIM],
            dim: dim as u8,
        }
    }

    pub fn identity(dim: usize) -> SquareMatrix {
        let mut s = SquareMatrix::zero(dim);
        for i in 0..dim {
            s.m[i][i] = 1.0;
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[i][j] = v;
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.dim();
        let mut out = SquareMatrix::zero(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.m[i][k] * other.m[k][j];
                }
                out.m[i][j] = acc;
            }
        }
        out
    }

    pub fn transpose(&self) -> SquareMatrix {
        let n = self.dim();
        let mut out = SquareMatrix::zero(n);
        for i in 0..n {
            for j in 0..n {
                out.m[i][j] = self.m[j][i];
            }
        }
        out
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        match self.dim() {
            1 => m[0][0],
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            3 => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
            4 => {
                let mut det = 0.0;
                for j in 0..4 {
                    det += m[0][j] * self.cofactor(0, j);
                }
                det
            }
            _ => unreachable!(),
        }
    }

    fn cofactor(&self, row: usize, col: usize) -> f64 {
        let n = self.dim();
        let mut sub = [[0.0; MAX_DIM]; MAX_DIM];
        let mut r = 0;
        for i in 0..n {
            if i == row {
                continue;
            }
            let mut c = 0;
            for j in 0..n {
                if j == col {
                    continue;
                }
                sub[r][c] = self.m[i][j];
                c += 1;
            }
            r += 1;
        }
        let minor = SquareMatrix {
            m: sub,
            dim: (n - 1) as u8,
        }
        .det();
        if (row + col) % 2 == 0 {
            minor
        } else {
            -minor
        }
    }

    /// Inverse by the adjugate formula; cheap and branch-free for dim <= 4.
    pub fn inverse(&self, det_floor: f64) -> Result<(SquareMatrix, f64)> {
        let n = self.dim();
        let det = self.det();
        if !(det.abs() > det_floor) {
            return Err(Error::DegenerateMetric {
                point: vec![],
                eps: f64::NAN,
                det,
                floor: det_floor,
            });
        }
        let mut inv = SquareMatrix::zero(n);
        for i in 0..n {
            for j in 0..n {
                inv.m[j][i] = self.cofactor(i, j) / det;
            }
        }
        Ok((inv, det))
    }
}

/// The chart: an open box with optional excluded points.
#[derive(Clone, Debug, Serialize)]
pub struct Chart {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    excluded: Vec<Vec<f64>>,
}

impl Chart {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Chart> {
        if lo.len() != hi.len() || lo.len() < 2 || lo.len() > MAX_DIM {
            return Err(Error::invalid(format!(
                "chart dimension must be 2..=4, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (a, b) in lo.iter().zip(hi) {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(Error::invalid("chart box must have finite lo < hi per axis"));
            }
        }
        Ok(Chart {
            dim: lo.len(),
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            excluded: Vec::new(),
        })
    }

    pub fn with_excluded(mut self, points: &[Point]) -> Result<Chart> {
        for p in points {
            if p.dim() != self.dim || !self.contains(p) {
                return Err(Error::invalid("excluded point outside chart box"));
            }
            self.excluded.push(p.coords().to_vec());
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn excluded(&self) -> Vec<Point> {
        self.excluded.iter().map(|p| Point::new(p)).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &Point) -> bool {
        x.dim() == self.dim
            && x.coords()
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| v >= a && v <= b)
    }

    /// Distance from `x` to the box boundary (minimum over axes).
    pub fn boundary_margin(&self, x: &Point) -> f64 {
        x.coords()
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| (v - a).min(b - v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean distance from `x` to the nearest excluded point.
    pub fn excluded_margin(&self, x: &Point) -> f64 {
        self.excluded
            .iter()
            .map(|p| Point::new(p).dist(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Error unless `x` keeps the stated margin from the boundary. Queries
    /// outside the safe interior are rejected, never clipped.
    pub fn require_margin(&self, x: &Point, needed: f64) -> Result<()> {
        let margin = self.boundary_margin(x);
        if margin < needed {
            return Err(Error::BoundaryProximity {
                point: x.coords().to_vec(),
                margin,
                needed,
            });
        }
        Ok(())
    }

    pub fn require_away_from_excluded(&self, x: &Point, needed: f64) -> Result<()> {
        let margin = self.excluded_margin(x);
        if margin < needed {
            return Err(Error::BoundaryProximity {
                point: x.coords().to_vec(),
                margin,
                needed,
            });
        }
        Ok(())
    }
}

/// How a field may be differentiated: closed-form and sampled fields use a
/// step tied to the chart size, regularized fields a step tied to their scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SmoothnessClass {
    ClosedForm,
    Regularized(f64),
    Sampled,
}

impl SmoothnessClass {
    pub fn default_step(&self, chart: &Chart) -> f64 {
        match self {
            SmoothnessClass::Regularized(eps) => eps / 20.0,
            _ => 1e-5 * chart.diameter(),
        }
    }
}

pub type FieldFn = dyn Fn(&Point) -> Result<Components> + Send + Sync;

/// An immutable tensor field: a pure evaluation map plus its metadata.
#[derive(Clone)]
pub struct TensorField {
    pub chart: Arc<Chart>,
    pub valence: Valence,
    pub class: SmoothnessClass,
    eval: Arc<FieldFn>,
}

impl TensorField {
    pub fn new(
        chart: Arc<Chart>,
        valence: Valence,
        class: SmoothnessClass,
        eval: impl Fn(&Point) -> Result<Components> + Send + Sync + 'static,
    ) -> TensorField {
        TensorField {
            chart,
            valence,
            class,
            eval: Arc::new(eval),
        }
    }

    pub fn scalar_closed_form(
        chart: Arc<Chart>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> TensorField {
        TensorField::new(chart, Valence::SCALAR, SmoothnessClass::ClosedForm, move |x| {
            Ok(Components::scalar(f(x.coords())))
        })
    }

    pub fn eval(&self, x: &Point) -> Result<Components> {
        (self.eval)(x)
    }

    /// Pointwise linear combination `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &TensorField, b: f64) -> TensorField {
        assert_eq!(self.valence, other.valence);
        let lhs = self.clone();
        let rhs = other.clone();
        let class = match (self.class, other.class) {
            (SmoothnessClass::Regularized(e), _) | (_, SmoothnessClass::Regularized(e)) => {
                SmoothnessClass::Regularized(e)
            }
            _ => self.class,
        };
        TensorField::new(self.chart.clone(), self.valence, class, move |x| {
            let mut l = lhs.eval(x)?;
            let r = rhs.eval(x)?;
            l.scale_mut(a);
            l.axpy(b, &r);
            Ok(l)
        })
    }
}

/// Coordinate partial derivative of every component along one axis, by
/// centered differences. The returned field rejects queries whose stencil
/// would cross the chart boundary, or come within a step of an excluded
/// point when the integrand is a closed form that is singular there.
pub fn differentiate(field: &TensorField, axis: usize, step: Option<f64>) -> Result<TensorField> {
    if axis >= field.chart.dim() {
        return Err(Error::invalid(format!(
            "axis {axis} out of range for dimension {}",
            field.chart.dim()
        )));
    }
    let h = step.unwrap_or_else(|| field.class.default_step(&field.chart));
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid("finite positive step required"));
    }
    let inner = field.clone();
    let check_excluded = matches!(field.class, SmoothnessClass::ClosedForm)
        && !field.chart.excluded.is_empty();
    Ok(TensorField::new(
        field.chart.clone(),
        field.valence,
        field.class,
        move |x| {
            inner.chart.require_margin(x, h)?;
            if check_excluded {
                inner.chart.require_away_from_excluded(x, h)?;
            }
            fd::central1(|t| inner.eval(&x.offset(axis, t)), h, 2)
        },
    ))
}

/// Integral of a scalar field over a box with composite Gauss cells.
/// Non-finite samples poison the whole integral and name the bad point.
pub fn integrate(
    field: &TensorField,
    lo: &[f64],
    hi: &[f64],
    cells: &[usize],
    order: usize,
) -> Result<f64> {
    if field.valence.rank() != 0 {
        return Err(Error::invalid("integrate expects a scalar field"));
    }
    let mut acc = 0.0;
    let mut failure: Option<Error> = None;
    quadrature::for_each_box_node(lo, hi, cells, order, |x, w| {
        if failure.is_some() {
            return;
        }
        let p = Point::new(x);
        match field.eval(&p) {
            Ok(v) => {
                let v = v.scalar_value();
                if v.is_finite() {
                    acc += w * v;
                } else {
                    failure = Some(Error::IntegrationPoisoned {
                        point: x.to_vec(),
                    });
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(acc),
    }
}

/// A smooth vector field with a closed-form Jacobian, used as a derivation
/// direction everywhere in the crate.
#[derive(Clone)]
pub struct SmoothVectorField {
    pub chart: Arc<Chart>,
    value: Arc<dyn Fn(&Point) -> [f64; MAX_DIM] + Send + Sync>,
    jacobian: Arc<dyn Fn(&Point) -> [[f64; MAX_DIM]; MAX_DIM] + Send + Sync>,
    pub label: String,
}

impl SmoothVectorField {
    pub fn custom(
        chart: Arc<Chart>,
        label: &str,
        value: impl Fn(&Point) -> [f64; MAX_DIM] + Send + Sync + 'static,
        jacobian: impl Fn(&Point) -> [[f64; MAX_DIM]; MAX_DIM] + Send + Sync + 'static,
    ) -> SmoothVectorField {
        SmoothVectorField {
            chart,
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
            label: label.to_string(),
        }
    }

    pub fn constant(chart: Arc<Chart>, v: &[f64]) -> SmoothVectorField {
        let mut a = [0.0; MAX_DIM];
        a[..v.len()].copy_from_slice(v);
        SmoothVectorField::custom(
            chart,
            "constant",
            move |_| a,
            |_| [[0.0; MAX_DIM]; MAX_DIM],
        )
    }

    /// `X(x) = A x + b` with constant Jacobian `A`; `jac[a][c]` is dX^a/dx^c.
    pub fn linear(chart: Arc<Chart>, a: [[f64; MAX_DIM]; MAX_DIM], b: [f64; MAX_DIM]) -> SmoothVectorField {
        let dim = chart.dim();
        SmoothVectorField::custom(
            chart,
            "linear",
            move |x| {
                let mut v = b;
                for i in 0..dim {
                    for j in 0..dim {
                        v[i] += a[i][j] * x.get(j);
                    }
                }
                v
            },
            move |_| a,
        )
    }

    pub fn value(&self, x: &Point) -> [f64; MAX_DIM] {
        (self.value)(x)
    }

    /// `jacobian(x)[a][c]` = dX^a/dx^c.
    pub fn jacobian(&self, x: &Point) -> [[f64; MAX_DIM]; MAX_DIM] {
        (self.jacobian)(x)
    }

    pub fn divergence(&self, x: &Point) -> f64 {
        let j = self.jacobian(x);
        (0..self.chart.dim()).map(|i| j[i][i]).sum()
    }
}

/// Smooth compactly supported pairing density with constant coefficients:
/// a radial bump profile (optionally with a flat plateau) times a fixed
/// coefficient tensor of the dual valence.
#[derive(Clone)]
pub struct TestDensity {
    pub chart: Arc<Chart>,
    pub coeff: Components,
    pub center: Point,
    pub radius: f64,
    /// Radius of the inner region where the profile is identically the
    /// amplitude; zero gives a plain bump.
    pub plateau: f64,
    pub amplitude: f64,
    pub label: String,
}

impl TestDensity {
    pub fn new(
        chart: Arc<Chart>,
        coeff: Components,
        center: Point,
        radius: f64,
        plateau: f64,
        amplitude: f64,
        label: &str,
    ) -> Result<TestDensity> {
        if !(radius > 0.0) || plateau < 0.0 || plateau >= radius {
            return Err(Error::invalid("test density needs 0 <= plateau < radius"));
        }
        for i in 0..chart.dim() {
            if center.get(i) - radius < chart.lo()[i] || center.get(i) + radius > chart.hi()[i] {
                return Err(Error::invalid("test density support leaves the chart"));
            }
        }
        Ok(TestDensity {
            chart,
            coeff,
            center,
            radius,
            plateau,
            amplitude,
            label: label.to_string(),
        })
    }

    pub fn scalar_bump(
        chart: Arc<Chart>,
        center: &[f64],
        radius: f64,
        amplitude: f64,
        label: &str,
    ) -> Result<TestDensity> {
        TestDensity::new(
            chart,
            Components::scalar(1.0),
            Point::new(center),
            radius,
            0.0,
            amplitude,
            label,
        )
    }

    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.chart.dim();
        let lo = (0..d).map(|i| self.center.get(i) - self.radius).collect();
        let hi = (0..d).map(|i| self.center.get(i) + self.radius).collect();
        (lo, hi)
    }

    /// Scalar profile value; `amplitude` at the center, identically zero
    /// outside `radius`, smooth everywhere.
    pub fn profile(&self, x: &Point) -> f64 {
        let r = self.center.dist(x);
        if r >= self.radius {
            return 0.0;
        }
        if r <= self.plateau {
            return self.amplitude;
        }
        if self.plateau == 0.0 {
            // exp(1 - 1/(1 - u^2)) with u = r / radius: peak value 1.
            let u2 = (r / self.radius) * (r / self.radius);
            return self.amplitude * (1.0 - 1.0 / (1.0 - u2)).exp();
        }
        let u = (r - self.plateau) / (self.radius - self.plateau);
        self.amplitude * smooth_step_down(u)
    }

    /// Closed-form gradient of the scalar profile.
    pub fn profile_grad(&self, x: &Point) -> Vec<f64> {
        let d = self.chart.dim();
        let r = self.center.dist(x);
        let mut g = vec![0.0; d];
        if r >= self.radius || r <= self.plateau || r == 0.0 {
            return g;
        }
        let dfdr = if self.plateau == 0.0 {
            let rr = self.radius;
            let u2 = (r / rr) * (r / rr);
            let e = (1.0 - 1.0 / (1.0 - u2)).exp();
            // d/dr exp(1 - 1/(1 - u^2)) = e * -(2u/rr) / (1-u^2)^2
            -self.amplitude * e * 2.0 * (r / (rr * rr)) / ((1.0 - u2) * (1.0 - u2))
        } else {
            let u = (r - self.plateau) / (self.radius - self.plateau);
            self.amplitude * smooth_step_down_derivative(u) / (self.radius - self.plateau)
        };
        for i in 0..d {
            g[i] = dfdr * (x.get(i) - self.center.get(i)) / r;
        }
        g
    }

    pub fn eval(&self, x: &Point) -> Components {
        let mut c = self.coeff.clone();
        c.scale_mut(self.profile(x));
        c
    }

    pub fn as_field(&self) -> TensorField {
        let me = self.clone();
        TensorField::new(
            self.chart.clone(),
            self.coeff.valence,
            SmoothnessClass::ClosedForm,
            move |x| Ok(me.eval(x)),
        )
    }
}

/// C-infinity step that is 1 at u = 0 and 0 at u = 1.
fn smooth_step_down(u: f64) -> f64 {
    let f = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    f(1.0 - u) / (f(u) + f(1.0 - u))
}

fn smooth_step_down_derivative(u: f64) -> f64 {
    let f = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let fp = |t: f64| {
        if t > 0.0 {
            (-1.0 / t).exp() / (t * t)
        } else {
            0.0
        }
    };
    let a = f(1.0 - u);
    let b = f(u);
    let da = -fp(1.0 - u);
    let db = fp(u);
    (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
}

/// Inclusive uniform grid over a box.
pub fn grid_points(lo: &[f64], hi: &[f64], counts: &[usize]) -> Vec<Point> {
    let dim = lo.len();
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for flat in 0..total {
        let mut rem = flat;
        let mut coords = vec![0.0; dim];
        for ax in (0..dim).rev() {
            let i = rem % counts[ax];
            rem /= counts[ax];
            idx[ax] = i;
            coords[ax] = if counts[ax] == 1 {
                0.5 * (lo[ax] + hi[ax])
            } else {
                lo[ax] + (hi[ax] - lo[ax]) * i as f64 / (counts[ax] - 1) as f64
            };
        }
        out.push(Point::new(&coords));
    }
    out
}
