//! Special functions, small symmetric linear algebra and random streams.

mod linalg;
mod sampling;
mod special;

pub use linalg::{
    correlation_normalize, schur_conditional, Cholesky, IndexPartition, SymMatrix, PIVOT_TOL,
    SYMMETRY_TOL,
};
pub use sampling::{derive_seed, mvn_sample, stream, Stream};
pub use special::{mills_ratio, std_normal_cdf, std_normal_pdf, std_normal_quantile, INV_SQRT_2PI};
