//! Numerical tensor calculus for distributional metrics on a single chart.
//!
//! Rough (locally integrable or distributional) tensor fields are turned into
//! one-parameter families of smooth fields by pairing them with a smoothing
//! kernel and a transport operator. Ordinary tensor calculus runs on each
//! member of the family, and asymptotic probes decide whether the family is
//! moderate, negligible, or associated to a classical limit as the smoothing
//! scale goes to zero.
//!
//! Crate layout:
//!
//! * [`chart`]: chart geometry, component storage, smooth/rough field types.
//! * [`quadrature`]: Gauss-Legendre cells, profile-weighted rules, polar rules.
//! * [`fd`]: centered finite-difference stencils.
//! * [`kernels`]: mollifier profiles, tensor-product kernel families, eps nets.
//! * [`transport`]: background connections, parallel transport, admissibility.
//! * [`embed`]: embeddings of rough fields and the generalized-field algebra.
//! * [`calculus`]: Lie/covariant derivatives, metric, connection, curvature.
//! * [`asymptotics`]: scaling exponents, association, decay profiles.

pub mod asymptotics;
pub mod calculus;
pub mod chart;
pub mod embed;
pub mod error;
pub mod fd;
pub mod kernels;
pub mod quadrature;
pub mod transport;

pub use asymptotics::{
    associate, decay_profile, extrapolate_geometric, fit_log_slope, scaling_exponent,
    AssocTolerance, AssociationReport, AssociationSummary, AssociationVerdict, DecayOptions,
    DecayProfileReport, EpsSample, Extrapolation, PairingChoice, ProbeCorpus, Region,
    ScalingOptions, ScalingReport, ScalingVerdict, SlopeFit,
};
pub use calculus::{
    contract, covariant_derivative, curvature, gen_lie_derivative, levi_civita,
    lie_derivative_rep, metric_compatibility, tensor_product, ConnectionCorrection,
    CurvatureBundle, CurvaturePoint, CurvatureRep, CurvatureScheme, GeneralizedMetric,
    StepRule,
};
pub use chart::{
    grid_points, Chart, Components, Point, SmoothVectorField, SmoothnessClass, SquareMatrix,
    TensorField, TestDensity, Valence,
};
pub use embed::{
    iota, pair, pullback_diffeo, sigma, Diffeo, EvalCtx, GeneralizedField, KernelHandle,
    QuadConfig, RoughTensorField,
};
pub use error::{Error, Result};
pub use kernels::{
    kernel_lie_derivative, EpsNet, KernelPerturbation, MollifierProfile, SmoothingKernelFamily,
};
pub use transport::{
    check_admissibility, parallel_transport, transport_lie_derivative, AdmissibilityReport,
    BackgroundConnection, TransportOperator, TransportPerturbation,
};
