//! Maximum-likelihood estimation.

pub mod fit;
pub mod lbfgs;
pub mod numdiff;

pub use fit::{canonicalize, fit_mle, initial_parameters, FitOptions, FitResult, GradientMode};
pub use lbfgs::{minimize, LbfgsOptions, LbfgsResult, Termination};
pub use numdiff::{
    delta_method, hessian_from_gradient, hessian_from_values, numerical_gradient,
    standard_errors_from_hessian, Curvature,
};
