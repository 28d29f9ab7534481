//! Fitting: the convex dictionary problem, support pruning, and the
//! nonconvex trainer over Stiefel-constrained weights.
//!
//! Every objective here is `Σ_m (y_m - f(x_m))² + λ Σ_n |v_n|`, with no `1/M`
//! factor.

mod lasso;
mod prune;
mod train;

pub use lasso::{kkt_residual, lambda_max, lasso, LassoConfig, LassoResult};
pub use prune::prune_support;
pub use train::{objective, train, FitConfig, InitScheme, Loss, Trace, TraceRow, TrainFailure};

pub use crate::stiefel::{stiefel_project, stiefel_violation};

pub(crate) use lasso::PolyBlock;

/// `sign(x) · max(|x| - τ, 0)`, the proximal map of `τ|·|`.
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}
