//! Kernel expectile regression.
//!
//! An SVM-type estimator that minimizes the regularized empirical asymmetric
//! least squares (ALS) risk over a Gaussian RBF reproducing kernel Hilbert
//! space, together with training/validation model selection, synthetic
//! problems with known conditional expectiles, numerical checks of the
//! estimator's risk inequalities, and a learning-rate harness.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`als`] | loss, clipping, expectiles and inner risks of discrete distributions |
//! | [`kernel`] | Gaussian kernel, Gram matrices, eigen-decay, entropy/covering bounds |
//! | [`solver`] | asymmetric IRLS solver, fitted models, JSON persistence |
//! | [`selection`] | hyperparameter grids and training/validation selection |
//! | [`problems`] | named synthetic problems with known targets |
//! | [`theory`] | numerical checks of calibration, variance and inner-risk bounds |
//! | [`bench`] | learning-rate experiments and the unbounded-noise clipping schedule |

pub mod als;
pub mod bench;
pub mod data;
pub mod error;
pub mod kernel;
pub mod problems;
pub mod quadrature;
pub mod rng;
pub mod selection;
pub mod solver;
pub mod stats;
pub mod theory;

pub use als::{AlsConfig, ClipLevel, DiscreteDistribution};
pub use bench::{clip_schedule, measure_rate, unbounded_rate_run, RateExperiment, TailSchedule};
pub use data::{Dataset, Points};
pub use error::{Error, Result};
pub use kernel::{GaussianKernel, GramMatrix};
pub use problems::{ProblemRegistry, ProblemSpec, SyntheticProblem};
pub use selection::{tv_svm, GridMode, GridSpec, TvSvmResult};
pub use solver::{fit, ExpectileModel, FitConfig};
pub use theory::{BoundReport, CheckRegistry};
