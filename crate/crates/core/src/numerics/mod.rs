//! Dense linear algebra and F-distribution quantiles used by every criterion.

mod fdist;
mod matrix;

pub use fdist::{f_cdf, f_quantile, f_upper_quantile, reg_inc_beta, FQuantileQuery};
pub use matrix::{Cholesky, Matrix, RANK_TOL, SPD_PIVOT_TOL};
