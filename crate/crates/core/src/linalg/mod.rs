//! Dense real linear algebra: the matrix carrier, SVD, norms and subspace
//! geometry (principal angles, coherence).

mod matrix;
mod subspace;
mod svd;

pub use matrix::DenseMatrix;
pub(crate) use matrix::from_columns as from_column_vecs;
pub use subspace::{
    coherence_profile, principal_angles, weighted_inf2_norm, weighted_inf_norm, CoherenceProfile,
    SubspaceBasis,
};
pub use svd::{svd, svd_with, truncated_svd, SvdOptions, SvdResult};

use crate::error::Result;

/// Sum of singular values.
pub fn nuclear_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(svd(m)?.sigma.iter().sum())
}

/// Largest singular value.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    Ok(svd(m)?.sigma.first().copied().unwrap_or(0.0))
}

pub fn frobenius_norm(m: &DenseMatrix) -> f64 {
    m.frobenius_norm()
}
