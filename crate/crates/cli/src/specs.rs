//! Builders turning config sections into core objects: charts, nets,
//! pairing choices, probe corpora, test densities, named fields and metrics.
//!
//! Everything canned here (background connections, perturbation directions,
//! probe fields) is part of the documented finite corpus the experiments run
//! against; the exact closures are fixed so reruns are bit-reproducible.

use anyhow::{anyhow, bail, Context, Result};
use std::sync::Arc;

use distgeo_core::chart::MAX_DIM;
use distgeo_core::{
    iota, parallel_transport, sigma, BackgroundConnection, Chart, Components, EpsNet,
    GeneralizedField, KernelPerturbation, MollifierProfile, PairingChoice, Point, ProbeCorpus,
    Region, RoughTensorField, SmoothingKernelFamily, SmoothVectorField, SquareMatrix,
    TensorField, TestDensity, TransportOperator, TransportPerturbation, Valence,
};
use distgeo_core::chart::SmoothnessClass;
use distgeo_core::embed::DeltaTerm;

use crate::config::{
    ChartSection, ChoiceSection, CorpusSection, DensitySection, FieldSection, MetricSection,
    NetSection, RegionSection,
};

pub fn build_chart(section: &ChartSection) -> Result<Arc<Chart>> {
    Ok(Arc::new(
        Chart::new(&section.lo, &section.hi).context("building chart")?,
    ))
}

pub fn build_net(section: &NetSection) -> Result<EpsNet> {
    EpsNet::new(section.eps0, section.ratio, section.levels).context("building eps net")
}

pub fn build_region(section: &RegionSection) -> Result<Region> {
    Region::new(&section.lo, &section.hi, section.points_per_axis).context("building region")
}

pub fn build_kernel(chart: Arc<Chart>, q: u32, skew: f64) -> Result<SmoothingKernelFamily> {
    let profile = MollifierProfile::make(q, skew).context("building mollifier profile")?;
    Ok(SmoothingKernelFamily::new(chart, profile))
}

/// Constant-coefficient background connection used whenever a config asks
/// for parallel transport. Coefficients are small enough that geodesics
/// across a kernel support stay well inside the chart.
pub fn canned_background(chart: Arc<Chart>, strength: f64) -> BackgroundConnection {
    let dim = chart.dim();
    let mut coeffs = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
    coeffs[0][0][1] = strength;
    coeffs[0][1][0] = strength;
    coeffs[1][0][0] = -strength;
    if dim >= 2 {
        coeffs[1][1][1] = 0.5 * strength;
    }
    if dim >= 3 {
        coeffs[2][0][2] = 0.4 * strength;
        coeffs[2][2][0] = 0.4 * strength;
        coeffs[0][2][2] = -0.3 * strength;
    }
    BackgroundConnection::constant(chart, coeffs)
}

pub fn build_choice(chart: Arc<Chart>, section: &ChoiceSection) -> Result<PairingChoice> {
    let kernel = build_kernel(chart.clone(), section.q, section.skew)?;
    let upsilon = match section.transport.as_str() {
        "identity" => TransportOperator::identity(chart),
        "parallel" => {
            let bg = canned_background(chart, section.transport_strength);
            parallel_transport(&bg)
        }
        other => bail!("unknown transport `{other}`"),
    };
    Ok(PairingChoice {
        label: section.label.clone(),
        upsilon,
        kernel,
    })
}

pub fn build_choices(chart: &Arc<Chart>, sections: &[ChoiceSection]) -> Result<Vec<PairingChoice>> {
    sections
        .iter()
        .map(|s| build_choice(chart.clone(), s))
        .collect()
}

/// Canned probe corpus: kernel differences, transport directions vanishing
/// on the diagonal, and low-order polynomial Lie directions.
pub fn build_corpus(chart: &Arc<Chart>, section: &CorpusSection) -> Result<ProbeCorpus> {
    let mut corpus = ProbeCorpus::bare();
    if section.kernel_perturbations >= 1 {
        let plus = build_kernel(chart.clone(), 0, 0.4)?;
        let minus = build_kernel(chart.clone(), 0, 0.0)?;
        corpus
            .kernel_perturbations
            .push(KernelPerturbation::difference(&plus, &minus));
    }
    if section.kernel_perturbations >= 2 {
        let plus = build_kernel(chart.clone(), 2, 0.0)?;
        let minus = build_kernel(chart.clone(), 0, 0.0)?;
        corpus
            .kernel_perturbations
            .push(KernelPerturbation::difference(&plus, &minus));
    }
    let dim = chart.dim();
    if section.transport_perturbations >= 1 {
        corpus.transport_perturbations.push(TransportPerturbation::custom(
            chart.clone(),
            "shear",
            move |x, y| {
                let mut m = SquareMatrix::zero(dim);
                for a in 0..dim {
                    let b = (a + 1) % dim;
                    m.set(a, b, 0.2 * (x.get(b) - y.get(b)));
                }
                Ok(m)
            },
        ));
    }
    if section.transport_perturbations >= 2 {
        corpus.transport_perturbations.push(TransportPerturbation::custom(
            chart.clone(),
            "dilation",
            move |x, y| {
                let mut m = SquareMatrix::zero(dim);
                let s: f64 = (0..dim).map(|a| x.get(a) - y.get(a)).sum();
                for a in 0..dim {
                    m.set(a, a, 0.15 * s);
                }
                Ok(m)
            },
        ));
    }
    if section.lie_directions >= 1 {
        corpus
            .lie_directions
            .push(SmoothVectorField::constant(chart.clone(), &[1.0, 0.3, 0.1, 0.0]));
    }
    if section.lie_directions >= 2 {
        corpus.lie_directions.push(SmoothVectorField::custom(
            chart.clone(),
            "rotation",
            |x| {
                let mut v = [0.0; MAX_DIM];
                v[0] = x.get(1);
                v[1] = -x.get(0);
                v
            },
            |_| {
                let mut j = [[0.0; MAX_DIM]; MAX_DIM];
                j[0][1] = 1.0;
                j[1][0] = -1.0;
                j
            },
        ));
    }
    corpus.max_lie_order = section.max_lie_order;
    Ok(corpus)
}

/// Build a test density; `coeff_valence` is the dual valence of the field
/// it will pair against. The config coefficient must match that valence's
/// component count (scalar densities may omit it).
pub fn build_density(
    chart: Arc<Chart>,
    section: &DensitySection,
    coeff_valence: Valence,
    fallback_label: &str,
) -> Result<TestDensity> {
    let dim = chart.dim();
    let coeff = match &section.coeff {
        None => {
            if coeff_valence.rank() != 0 {
                bail!(
                    "density `{}` needs an explicit coeff of rank {}",
                    fallback_label,
                    coeff_valence.rank()
                );
            }
            Components::scalar(1.0)
        }
        Some(values) => {
            if coeff_valence.rank() == 0 {
                if values.len() != 1 {
                    bail!("scalar density coeff must have one entry");
                }
                Components::scalar(values[0])
            } else {
                if values.len() != coeff_valence.count(dim) {
                    bail!(
                        "density `{}` coeff needs {} entries, got {}",
                        fallback_label,
                        coeff_valence.count(dim),
                        values.len()
                    );
                }
                Components::from_slice(coeff_valence, dim, values)
            }
        }
    };
    let label = section.label.clone().unwrap_or_else(|| fallback_label.to_string());
    TestDensity::new(
        chart,
        coeff,
        Point::new(&section.center),
        section.radius,
        section.plateau,
        section.amplitude,
        &label,
    )
    .with_context(|| format!("building density `{label}`"))
}

/// Swap a density's coefficient, keeping its bump geometry.
pub fn with_coeff(psi: &TestDensity, coeff: Components, label: &str) -> Result<TestDensity> {
    TestDensity::new(
        psi.chart.clone(),
        coeff,
        psi.center,
        psi.radius,
        psi.plateau,
        psi.amplitude,
        label,
    )
    .context("rebuilding density coefficient")
}

// ---------------------------------------------------------------------------
// named fields

/// What a rough field is, in closed form, so oracles can compute exact
/// pairings against it.
pub enum FieldOracle {
    Smooth(TensorField),
    RadialKink {
        center: Point,
        direction: Vec<f64>,
        amplitude: f64,
    },
    AbsVector {
        amplitude: f64,
    },
    Deltas {
        points: Vec<Point>,
        weights: Vec<f64>,
    },
}

pub struct BuiltField {
    pub field: GeneralizedField,
    pub valence: Valence,
    pub oracle: FieldOracle,
}

/// Smooth scalar probe with nonvanishing derivatives of every order on the
/// chart; trigonometric so embedding-error slopes are clean power laws.
pub fn smooth_scalar_probe(chart: Arc<Chart>, amplitude: f64) -> TensorField {
    let dim = chart.dim();
    TensorField::new(chart, Valence::SCALAR, SmoothnessClass::ClosedForm, move |x| {
        let mut v = (1.3 * x.get(0)).cos() * (0.9 * x.get(1)).cos();
        if dim >= 3 {
            v *= (0.7 * x.get(2)).cos();
        }
        Ok(Components::scalar(amplitude * (v + 0.2 * x.get(0))))
    })
}

/// Smooth vector probe, polynomial components.
pub fn smooth_vector_probe(chart: Arc<Chart>, amplitude: f64) -> TensorField {
    let dim = chart.dim();
    TensorField::new(
        chart,
        Valence::new(1, 0),
        SmoothnessClass::ClosedForm,
        move |x| {
            let mut data = vec![0.0; dim];
            data[0] = amplitude * (0.3 + x.get(1) * x.get(1));
            data[1] = amplitude * x.get(0) * x.get(1);
            if dim >= 3 {
                data[2] = amplitude * 0.4 * x.get(0);
            }
            Ok(Components::from_slice(Valence::new(1, 0), dim, &data))
        },
    )
}

/// Continuous vector field `amp * |x - c| * d^a`: one kink point, else smooth.
pub fn radial_kink_vector(
    chart: Arc<Chart>,
    center: Point,
    direction: Vec<f64>,
    amplitude: f64,
) -> RoughTensorField {
    let dim = chart.dim();
    let c = center;
    let d = direction.clone();
    RoughTensorField::loc_integrable(chart, Valence::new(1, 0), &[center], move |x| {
        let r = c.dist(x);
        let data: Vec<f64> = (0..dim).map(|a| amplitude * r * d[a]).collect();
        Ok(Components::from_slice(Valence::new(1, 0), dim, &data))
    })
}

/// Continuous vector field `(amp*|x1|, 0, ...)`: kink along the x1 = 0 line.
/// The hint point anchors the graded pairing grid on that line.
pub fn abs_vector(chart: Arc<Chart>, amplitude: f64, hint: Point) -> RoughTensorField {
    let dim = chart.dim();
    RoughTensorField::loc_integrable(chart, Valence::new(1, 0), &[hint], move |x| {
        let mut data = vec![0.0; dim];
        data[0] = amplitude * x.get(0).abs();
        Ok(Components::from_slice(Valence::new(1, 0), dim, &data))
    })
}

/// Its distributional x1-derivative: `(amp*sign(x1), 0, ...)`, in L-infinity.
pub fn sign_vector(chart: Arc<Chart>, amplitude: f64, hint: Point) -> RoughTensorField {
    let dim = chart.dim();
    RoughTensorField::loc_integrable(chart, Valence::new(1, 0), &[hint], move |x| {
        let mut data = vec![0.0; dim];
        data[0] = amplitude * x.get(0).signum();
        Ok(Components::from_slice(Valence::new(1, 0), dim, &data))
    })
}

/// Classical x1-derivative of the radial kink: `amp * ((x1-c1)/|x-c|) * d^a`.
/// Bounded, discontinuous only at the tip, so locally integrable.
pub fn kink_grad1_vector(
    chart: Arc<Chart>,
    center: Point,
    direction: Vec<f64>,
    amplitude: f64,
) -> RoughTensorField {
    let dim = chart.dim();
    let c = center;
    let d = direction;
    RoughTensorField::loc_integrable(chart, Valence::new(1, 0), &[center], move |x| {
        let r = c.dist(x);
        let cosw = if r > 0.0 {
            (x.get(0) - c.get(0)) / r
        } else {
            0.0
        };
        let data: Vec<f64> = (0..dim).map(|a| amplitude * cosw * d[a]).collect();
        Ok(Components::from_slice(Valence::new(1, 0), dim, &data))
    })
}

/// Scalar radial kink `amp * |x - c|`.
pub fn radial_kink_scalar(chart: Arc<Chart>, center: Point, amplitude: f64) -> RoughTensorField {
    let c = center;
    RoughTensorField::loc_integrable(chart, Valence::SCALAR, &[center], move |x| {
        Ok(Components::scalar(amplitude * c.dist(x)))
    })
}

/// Directional derivative of the scalar kink along a smooth vector field:
/// `amp * X(x) . (x - c)/|x - c|`; bounded with one bad point.
pub fn kink_directional_scalar(
    chart: Arc<Chart>,
    center: Point,
    amplitude: f64,
    direction: SmoothVectorField,
) -> RoughTensorField {
    let dim = chart.dim();
    let c = center;
    RoughTensorField::loc_integrable(chart, Valence::SCALAR, &[center], move |x| {
        let r = c.dist(x);
        let v = if r > 0.0 {
            let xv = direction.value(x);
            (0..dim).map(|a| xv[a] * (x.get(a) - c.get(a)) / r).sum()
        } else {
            0.0
        };
        Ok(Components::scalar(amplitude * v))
    })
}

pub fn delta_sum_scalar(
    chart: Arc<Chart>,
    points: &[Point],
    weights: &[f64],
) -> Result<RoughTensorField> {
    let terms: Vec<DeltaTerm> = points
        .iter()
        .zip(weights)
        .map(|(p, w)| DeltaTerm {
            point: *p,
            coeff: Components::scalar(*w),
        })
        .collect();
    if terms.is_empty() {
        bail!("delta sum needs at least one point");
    }
    RoughTensorField::delta_sum(chart, Valence::SCALAR, terms).context("building point masses")
}

pub fn build_field(chart: &Arc<Chart>, section: &FieldSection) -> Result<BuiltField> {
    let dim = chart.dim();
    let center = || -> Result<Point> {
        let c = section
            .center
            .clone()
            .unwrap_or_else(|| vec![0.0; dim]);
        if c.len() != dim {
            bail!("field.center dimension mismatch");
        }
        Ok(Point::new(&c))
    };
    match section.kind.as_str() {
        "smooth_scalar" => {
            let tensor = smooth_scalar_probe(chart.clone(), section.amplitude);
            Ok(BuiltField {
                field: iota(&RoughTensorField::from_smooth(&tensor)),
                valence: Valence::SCALAR,
                oracle: FieldOracle::Smooth(tensor),
            })
        }
        "smooth_vector" => {
            let tensor = smooth_vector_probe(chart.clone(), section.amplitude);
            Ok(BuiltField {
                field: iota(&RoughTensorField::from_smooth(&tensor)),
                valence: Valence::new(1, 0),
                oracle: FieldOracle::Smooth(tensor),
            })
        }
        "radial_kink_vector" => {
            let c = center()?;
            let d = section
                .direction
                .clone()
                .unwrap_or_else(|| {
                    let mut v = vec![0.0; dim];
                    v[0] = 1.0;
                    v
                });
            if d.len() != dim {
                bail!("field.direction dimension mismatch");
            }
            let rough = radial_kink_vector(chart.clone(), c, d.clone(), section.amplitude);
            Ok(BuiltField {
                field: iota(&rough),
                valence: Valence::new(1, 0),
                oracle: FieldOracle::RadialKink {
                    center: c,
                    direction: d,
                    amplitude: section.amplitude,
                },
            })
        }
        "abs_vector" => {
            let c = center()?;
            let rough = abs_vector(chart.clone(), section.amplitude, c);
            Ok(BuiltField {
                field: iota(&rough),
                valence: Valence::new(1, 0),
                oracle: FieldOracle::AbsVector {
                    amplitude: section.amplitude,
                },
            })
        }
        "delta" => {
            let c = center()?;
            let rough =
                RoughTensorField::delta(chart.clone(), c, Components::scalar(section.amplitude))
                    .context("building point mass")?;
            Ok(BuiltField {
                field: iota(&rough),
                valence: Valence::SCALAR,
                oracle: FieldOracle::Deltas {
                    points: vec![c],
                    weights: vec![section.amplitude],
                },
            })
        }
        "delta_pair" => {
            if section.points.len() < 2 || section.weights.len() != section.points.len() {
                bail!("field.points needs >= 2 points with matching field.weights");
            }
            let points: Vec<Point> = section.points.iter().map(|p| Point::new(p)).collect();
            let rough = delta_sum_scalar(chart.clone(), &points, &section.weights)?;
            Ok(BuiltField {
                field: iota(&rough),
                valence: Valence::SCALAR,
                oracle: FieldOracle::Deltas {
                    points,
                    weights: section.weights.clone(),
                },
            })
        }
        other => bail!("unknown field.kind `{other}`"),
    }
}

// ---------------------------------------------------------------------------
// named metrics

pub struct BuiltMetric {
    pub label: String,
    pub field: GeneralizedField,
    /// Exact scalar curvature of the unregularized metric, when closed-form.
    pub scalar_oracle: Option<Arc<dyn Fn(&Point) -> f64 + Send + Sync>>,
    /// Exact Ricci tensor, when closed-form.
    pub ricci_oracle: Option<Arc<dyn Fn(&Point) -> Components + Send + Sync>>,
    /// Flat-space metric in disguise: all curvature pairings must vanish.
    pub vacuum: bool,
}

fn constant_metric(chart: Arc<Chart>, g: Vec<f64>) -> TensorField {
    let dim = chart.dim();
    TensorField::new(
        chart,
        Valence::new(0, 2),
        SmoothnessClass::ClosedForm,
        move |_| Ok(Components::from_slice(Valence::new(0, 2), dim, &g)),
    )
}

pub fn build_metric(chart: &Arc<Chart>, section: &MetricSection) -> Result<BuiltMetric> {
    let dim = chart.dim();
    match section.kind.as_str() {
        "flat" => {
            if dim != 2 {
                bail!("flat skewed metric is two-dimensional");
            }
            // constant metric L^T L for the linear skew L = [[1, 0.4], [0, 0.9]]
            let g = vec![1.0, 0.4, 0.4, 0.97];
            let tensor = constant_metric(chart.clone(), g);
            Ok(BuiltMetric {
                label: "flat-skew".into(),
                field: iota(&RoughTensorField::from_smooth(&tensor)),
                scalar_oracle: Some(Arc::new(|_| 0.0)),
                ricci_oracle: Some(Arc::new(move |_| {
                    Components::zeros(Valence::new(0, 2), 2)
                })),
                vacuum: true,
            })
        }
        "conformal" => {
            if dim != 2 {
                bail!("conformal metric is two-dimensional");
            }
            let (cxy, cxx, cyy) = (section.phi_xy, section.phi_xx, section.phi_yy);
            let phi = move |x: &Point| {
                cxy * x.get(0) * x.get(1)
                    + cxx * x.get(0) * x.get(0)
                    + cyy * x.get(1) * x.get(1)
            };
            let lap = 2.0 * (cxx + cyy);
            let tensor = TensorField::new(
                chart.clone(),
                Valence::new(0, 2),
                SmoothnessClass::ClosedForm,
                move |x| {
                    let e = (2.0 * phi(x)).exp();
                    Ok(Components::from_slice(
                        Valence::new(0, 2),
                        2,
                        &[e, 0.0, 0.0, e],
                    ))
                },
            );
            let phi2 = phi;
            Ok(BuiltMetric {
                label: "conformal".into(),
                field: iota(&RoughTensorField::from_smooth(&tensor)),
                scalar_oracle: Some(Arc::new(move |x| -2.0 * (-2.0 * phi2(x)).exp() * lap)),
                // two dimensions: Ric_ab = (R/2) g_ab = -(lap phi) delta_ab
                ricci_oracle: Some(Arc::new(move |_| {
                    Components::from_slice(Valence::new(0, 2), 2, &[-lap, 0.0, 0.0, -lap])
                })),
                vacuum: lap == 0.0,
            })
        }
        "sphere" => {
            if dim != 2 {
                bail!("sphere-chart metric is two-dimensional");
            }
            let a = section.radius;
            if !(a > 0.0) {
                bail!("metric.radius must be positive");
            }
            let tensor = TensorField::new(
                chart.clone(),
                Valence::new(0, 2),
                SmoothnessClass::ClosedForm,
                move |x| {
                    let r2 = x.get(0) * x.get(0) + x.get(1) * x.get(1);
                    let f = 4.0 * a * a / ((1.0 + r2) * (1.0 + r2));
                    Ok(Components::from_slice(
                        Valence::new(0, 2),
                        2,
                        &[f, 0.0, 0.0, f],
                    ))
                },
            );
            let scal = 2.0 / (a * a);
            Ok(BuiltMetric {
                label: "sphere".into(),
                field: iota(&RoughTensorField::from_smooth(&tensor)),
                scalar_oracle: Some(Arc::new(move |_| scal)),
                ricci_oracle: Some(Arc::new(move |x| {
                    let r2 = x.get(0) * x.get(0) + x.get(1) * x.get(1);
                    let f = 4.0 / ((1.0 + r2) * (1.0 + r2));
                    Components::from_slice(Valence::new(0, 2), 2, &[f, 0.0, 0.0, f])
                })),
                vacuum: false,
            })
        }
        "skew3d" => {
            if dim != 3 {
                bail!("skew3d metric is three-dimensional");
            }
            let al = section.skew;
            // pullback of the flat metric under y = x + al*(x2^2, x3^2, x1*x2):
            // g = J^T J with J = I + al*dS, curvature identically zero.
            let tensor = TensorField::new(
                chart.clone(),
                Valence::new(0, 2),
                SmoothnessClass::ClosedForm,
                move |x| {
                    let j = skew3d_jacobian(x, al);
                    let mut g = vec![0.0; 9];
                    for a in 0..3 {
                        for b in 0..3 {
                            let mut s = 0.0;
                            for k in 0..3 {
                                s += j[k][a] * j[k][b];
                            }
                            g[3 * a + b] = s;
                        }
                    }
                    Ok(Components::from_slice(Valence::new(0, 2), 3, &g))
                },
            );
            Ok(BuiltMetric {
                label: "skew3d".into(),
                field: iota(&RoughTensorField::from_smooth(&tensor)),
                scalar_oracle: Some(Arc::new(|_| 0.0)),
                ricci_oracle: Some(Arc::new(move |_| {
                    Components::zeros(Valence::new(0, 2), 3)
                })),
                vacuum: true,
            })
        }
        "cone" => {
            let a = section
                .a
                .ok_or_else(|| anyhow!("metric.a required for the cone metric"))?;
            let (field, _) = cone_metric_field(chart.clone(), a)?;
            Ok(BuiltMetric {
                label: "cone".into(),
                field,
                scalar_oracle: None,
                ricci_oracle: None,
                vacuum: false,
            })
        }
        other => bail!("unknown metric.kind `{other}`"),
    }
}

fn skew3d_jacobian(x: &Point, al: f64) -> [[f64; 3]; 3] {
    let mut j = [[0.0; 3]; 3];
    for k in 0..3 {
        j[k][k] = 1.0;
    }
    j[0][1] += 2.0 * al * x.get(1);
    j[1][2] += 2.0 * al * x.get(2);
    j[2][0] += al * x.get(1);
    j[2][1] += al * x.get(0);
    j
}

/// The cone metric `g = (1+A^2)/2 delta + (1-A^2)/2 m` with the bounded
/// discontinuous part `m = [[cos 2t, sin 2t], [sin 2t, -cos 2t]]` in polar
/// angle t around the apex. Only `m` is smoothed; the constant part embeds
/// exactly. Returns the metric field and the apex point.
pub fn cone_metric_field(chart: Arc<Chart>, a: f64) -> Result<(GeneralizedField, Point)> {
    if chart.dim() != 2 {
        bail!("cone metric is two-dimensional");
    }
    let apex = Point::new(&[0.0, 0.0]);
    let c_flat = 0.5 * (1.0 + a * a);
    let c_m = 0.5 * (1.0 - a * a);
    let flat = constant_metric(chart.clone(), vec![c_flat, 0.0, 0.0, c_flat]);
    if c_m == 0.0 {
        return Ok((sigma(&flat), apex));
    }
    let m_rough = RoughTensorField::loc_integrable(
        chart.clone(),
        Valence::new(0, 2),
        &[apex],
        move |x| {
            let (x1, x2) = (x.get(0), x.get(1));
            let r2 = x1 * x1 + x2 * x2;
            if r2 == 0.0 {
                // measure-zero apex value; any bounded choice works
                return Ok(Components::zeros(Valence::new(0, 2), 2));
            }
            let c2t = (x1 * x1 - x2 * x2) / r2;
            let s2t = 2.0 * x1 * x2 / r2;
            Ok(Components::from_slice(
                Valence::new(0, 2),
                2,
                &[c2t, s2t, s2t, -c2t],
            ))
        },
    );
    let field = sigma(&flat)
        .add(&iota(&m_rough).scale(c_m))
        .context("assembling cone metric")?;
    Ok((field, apex))
}
