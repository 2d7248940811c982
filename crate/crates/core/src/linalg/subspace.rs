use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::svd::svd;
use crate::error::{Error, Result};

/// An `n x k` matrix with orthonormal columns, standing for its span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseMatrix", into = "DenseMatrix")]
pub struct SubspaceBasis {
    basis: DenseMatrix,
}

impl SubspaceBasis {
    /// Orthonormality tolerance on `‖BᵀB − I‖_max`.
    pub const TOL: f64 = 1e-10;

    /// Wraps a matrix that already has orthonormal columns.
    pub fn new(basis: DenseMatrix) -> Result<Self> {
        if basis.cols() > basis.rows() {
            return Err(Error::Dimension(format!(
                "{} basis vectors in dimension {}",
                basis.cols(),
                basis.rows()
            )));
        }
        let defect = (&basis.t_matmul(&basis)? - &DenseMatrix::identity(basis.cols())).max_abs();
        if defect > Self::TOL {
            return Err(Error::Numerical(format!(
                "columns are not orthonormal (defect {defect:.3e})"
            )));
        }
        Ok(Self { basis })
    }

    /// Orthonormal basis for the column span of an arbitrary full-rank matrix.
    pub fn from_span(m: &DenseMatrix) -> Result<Self> {
        if m.cols() > m.rows() {
            return Err(Error::Dimension("more columns than rows".into()));
        }
        Self::new(m.orthonormalize_columns()?)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.basis
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.rows()
    }

    /// Orthogonal projector `B Bᵀ`.
    pub fn projector(&self) -> DenseMatrix {
        self.basis.matmul(&self.basis.transpose()).expect("square product")
    }

    /// Basis of the orthogonal complement, `None` if the span is everything.
    pub fn complement(&self) -> Option<SubspaceBasis> {
        self.basis
            .orthonormal_complement()
            .map(|basis| SubspaceBasis { basis })
    }

    /// Same subspace, different basis: `B · R` for orthogonal `R`.
    pub fn rotated(&self, r: &DenseMatrix) -> Result<Self> {
        Self::new(self.basis.matmul(r)?)
    }
}

impl TryFrom<DenseMatrix> for SubspaceBasis {
    type Error = Error;

    fn try_from(m: DenseMatrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<SubspaceBasis> for DenseMatrix {
    fn from(b: SubspaceBasis) -> DenseMatrix {
        b.basis
    }
}

/// Principal angles in radians, sorted non-increasing, `min(dim)` of them.
///
/// Small angles come from the sines (singular values of the residual of the
/// smaller basis after projecting on the larger), large ones from the
/// cosines, which keeps full relative accuracy at both ends.
pub fn principal_angles(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<Vec<f64>> {
    if a.ambient() != b.ambient() {
        return Err(Error::Dimension(format!(
            "ambient dimensions {} and {}",
            a.ambient(),
            b.ambient()
        )));
    }
    let (small, large) = if a.dim() <= b.dim() { (a, b) } else { (b, a) };
    let k = small.dim();

    // cos: σ(smallᵀ large), non-increasing.
    let cross = small.matrix().t_matmul(large.matrix())?;
    let cos = svd(&cross)?.sigma;

    // sin: σ((I − P_large) small), reversed to non-decreasing.
    let coeff = large.matrix().t_matmul(small.matrix())?;
    let resid = small.matrix() - &large.matrix().matmul(&coeff)?;
    let mut sin = svd(&resid)?.sigma;
    sin.reverse();

    let mut theta: Vec<f64> = (0..k)
        .map(|i| {
            let c = cos[i].clamp(0.0, 1.0);
            if c * c >= 0.5 {
                sin[i].clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect();
    theta.sort_by(|x, y| y.total_cmp(x));
    Ok(theta)
}

/// Row coherences of the column and row spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceProfile {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub eta: f64,
}

/// `μ_i = (n/r)‖e_iᵀU‖²` and likewise `ν_l` for `V`; `η` is the largest.
pub fn coherence_profile(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<CoherenceProfile> {
    if u.ambient() != v.ambient() {
        return Err(Error::Dimension(format!(
            "ambient dimensions {} and {}",
            u.ambient(),
            v.ambient()
        )));
    }
    let row_coherence = |b: &SubspaceBasis| -> Vec<f64> {
        let scale = b.ambient() as f64 / b.dim() as f64;
        (0..b.ambient())
            .map(|i| scale * b.matrix().row(i).iter().map(|x| x * x).sum::<f64>())
            .collect()
    };
    let mu = row_coherence(u);
    let nu = row_coherence(v);
    let eta = mu.iter().chain(&nu).fold(0.0_f64, |m, &x| m.max(x));
    Ok(CoherenceProfile { mu, nu, eta })
}

fn coherence_weights(profile: &[f64], n: usize, r: usize) -> Vec<f64> {
    profile
        .iter()
        .map(|&m| if m > 0.0 { (n as f64 / (m * r as f64)).sqrt() } else { f64::INFINITY })
        .collect()
}

fn check_profile(z: &DenseMatrix, profile: &CoherenceProfile, r: usize) -> Result<()> {
    if profile.mu.len() != z.rows() || profile.nu.len() != z.cols() {
        return Err(Error::Dimension(format!(
            "profile of length {}/{} for a {}x{} matrix",
            profile.mu.len(),
            profile.nu.len(),
            z.rows(),
            z.cols()
        )));
    }
    if r == 0 {
        return Err(Error::OutOfRange("rank must be positive".into()));
    }
    Ok(())
}

fn weighted_entry(w_row: f64, z: f64, w_col: f64, i: usize, l: usize) -> Result<f64> {
    if z == 0.0 {
        return Ok(0.0);
    }
    if !(w_row.is_finite() && w_col.is_finite()) {
        return Err(Error::DegenerateWeight(format!(
            "zero coherence referenced by nonzero entry ({i}, {l})"
        )));
    }
    Ok(w_row * z.abs() * w_col)
}

/// `max_{i,l} √(n/(μ_i r)) |Z_il| √(n/(ν_l r))`.
pub fn weighted_inf_norm(z: &DenseMatrix, profile: &CoherenceProfile, r: usize) -> Result<f64> {
    check_profile(z, profile, r)?;
    let wr = coherence_weights(&profile.mu, z.rows(), r);
    let wc = coherence_weights(&profile.nu, z.cols(), r);
    let mut best = 0.0_f64;
    for i in 0..z.rows() {
        for l in 0..z.cols() {
            best = best.max(weighted_entry(wr[i], z[(i, l)], wc[l], i, l)?);
        }
    }
    Ok(best)
}

/// Largest of `√(n/(μ_i r))‖e_iᵀZ‖` and `√(n/(ν_l r))‖Z e_l‖`.
pub fn weighted_inf2_norm(z: &DenseMatrix, profile: &CoherenceProfile, r: usize) -> Result<f64> {
    check_profile(z, profile, r)?;
    let wr = coherence_weights(&profile.mu, z.rows(), r);
    let wc = coherence_weights(&profile.nu, z.cols(), r);
    let mut best = 0.0_f64;
    for (i, &w) in wr.iter().enumerate() {
        let row_norm = z.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        best = best.max(weighted_entry(w, row_norm, 1.0, i, 0)?);
    }
    for (l, &w) in wc.iter().enumerate() {
        let col_norm = (0..z.rows()).map(|i| z[(i, l)].powi(2)).sum::<f64>().sqrt();
        best = best.max(weighted_entry(1.0, col_norm, w, 0, l)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn canonical(n: usize, idx: &[usize]) -> SubspaceBasis {
        SubspaceBasis::new(DenseMatrix::from_fn(n, idx.len(), |i, j| {
            if i == idx[j] {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap()
    }

    fn random_basis(n: usize, k: usize, seed: u64) -> SubspaceBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SubspaceBasis::new(DenseMatrix::random_orthogonal(n, &mut rng).columns(0, k)).unwrap()
    }

    #[test]
    fn rejects_non_orthonormal() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(SubspaceBasis::new(m.clone()).is_err());
        assert_eq!(SubspaceBasis::from_span(&m).unwrap().dim(), 2);
        assert!(SubspaceBasis::new(DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn angles_trivial_cases() {
        let a = random_basis(7, 3, 1);
        assert!(principal_angles(&a, &a).unwrap().iter().all(|&t| t < 1e-12));

        let t = principal_angles(&canonical(2, &[0]), &canonical(2, &[1])).unwrap();
        assert!((t[0] - FRAC_PI_2).abs() < 1e-15);

        assert!(principal_angles(&canonical(2, &[0]), &canonical(3, &[0])).is_err());
    }

    #[test]
    fn angles_of_a_plane_rotation() {
        let th = 0.3_f64;
        let a = canonical(3, &[0]);
        let b = SubspaceBasis::new(DenseMatrix::from_rows(&[vec![th.cos()], vec![th.sin()], vec![0.0]]).unwrap())
            .unwrap();
        let got = principal_angles(&a, &b).unwrap();
        assert!((got[0] - th).abs() < 1e-15);
        // Order of arguments does not matter, and larger spaces give min(dim) angles.
        let c = canonical(3, &[1, 2]);
        assert_eq!(principal_angles(&c, &a).unwrap().len(), 1);
        assert!((principal_angles(&c, &a).unwrap()[0] - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn coherence_examples() {
        let p = coherence_profile(&canonical(5, &[0, 1]), &canonical(5, &[0, 1])).unwrap();
        assert_eq!(p.mu, vec![2.5, 2.5, 0.0, 0.0, 0.0]);
        assert_eq!(p.eta, 2.5);

        let h = SubspaceBasis::new(
            DenseMatrix::from_rows(&[
                vec![0.5, 0.5],
                vec![0.5, -0.5],
                vec![0.5, 0.5],
                vec![0.5, -0.5],
            ])
            .unwrap(),
        )
        .unwrap();
        let p = coherence_profile(&h, &h).unwrap();
        assert!(p.mu.iter().all(|&m| (m - 1.0).abs() < 1e-15));
    }

    #[test]
    fn weighted_norms() {
        let u = canonical(3, &[0, 1, 2]);
        let prof = coherence_profile(&u, &u).unwrap();
        let z = DenseMatrix::from_rows(&[vec![1.0, -4.0, 0.0], vec![0.0, 2.0, 0.0], vec![3.0, 0.0, 0.0]]).unwrap();
        assert_eq!(weighted_inf_norm(&z, &prof, 3).unwrap(), 4.0);
        assert!((weighted_inf2_norm(&z, &prof, 3).unwrap() - 20f64.sqrt()).abs() < 1e-14);
        assert_eq!(weighted_inf_norm(&DenseMatrix::zeros(3, 3), &prof, 3).unwrap(), 0.0);

        let thin = coherence_profile(&canonical(3, &[0]), &canonical(3, &[0])).unwrap();
        let corner = DenseMatrix::from_fn(3, 3, |i, j| if i + j == 0 { 1.0 } else { 0.0 });
        assert!(weighted_inf_norm(&corner, &thin, 1).is_ok());
        assert!(matches!(
            weighted_inf_norm(&z, &thin, 1),
            Err(Error::DegenerateWeight(_))
        ));
        assert!(matches!(
            weighted_inf2_norm(&z, &thin, 1),
            Err(Error::DegenerateWeight(_))
        ));
    }

    proptest! {
        #[test]
        fn angles_are_basis_invariant(seed in any::<u64>(), k in 1usize..5, extra in 0usize..3) {
            let n = 12;
            let a = random_basis(n, k, seed);
            let b = random_basis(n, k + extra, seed ^ 0x9e37);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            let ra = a.rotated(&DenseMatrix::random_orthogonal(k, &mut rng)).unwrap();
            let rb = b.rotated(&DenseMatrix::random_orthogonal(k + extra, &mut rng)).unwrap();
            let t0 = principal_angles(&a, &b).unwrap();
            let t1 = principal_angles(&ra, &rb).unwrap();
            prop_assert!(t0.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(t0.iter().all(|&t| (0.0..=FRAC_PI_2).contains(&t)));
            for (x, y) in t0.iter().zip(&t1) {
                prop_assert!((x - y).abs() <= 1e-8);
            }
        }

        #[test]
        fn coherence_is_basis_invariant_and_sums_to_rank(seed in any::<u64>(), r in 1usize..6) {
            let n = 10;
            let u = random_basis(n, r, seed);
            let v = random_basis(n, r, !seed);
            let p = coherence_profile(&u, &v).unwrap();
            let total: f64 = p.mu.iter().map(|m| m * r as f64 / n as f64).sum();
            prop_assert!((total - r as f64).abs() <= 1e-10);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(3));
            let q = coherence_profile(&u.rotated(&DenseMatrix::random_orthogonal(r, &mut rng)).unwrap(), &v).unwrap();
            for (x, y) in p.mu.iter().zip(&q.mu) {
                prop_assert!((x - y).abs() <= 1e-8);
            }
            // Projector form.
            let proj = u.projector();
            for i in 0..n {
                prop_assert!((p.mu[i] - n as f64 / r as f64 * proj[(i, i)]).abs() <= 1e-10);
            }
        }

        #[test]
        fn weighted_norms_are_homogeneous(seed in any::<u64>(), scale in -5.0f64..5.0) {
            let n = 8;
            let u = random_basis(n, 3, seed);
            let prof = coherence_profile(&u, &u).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = DenseMatrix::gaussian(n, n, &mut rng);
            let a = weighted_inf_norm(&z, &prof, 3).unwrap();
            let b = weighted_inf_norm(&z.scale(scale), &prof, 3).unwrap();
            prop_assert!(a >= 0.0 && (b - scale.abs() * a).abs() <= 1e-10 * a.max(1.0));
            let c = weighted_inf2_norm(&z, &prof, 3).unwrap();
            let d = weighted_inf2_norm(&z.scale(scale), &prof, 3).unwrap();
            prop_assert!(c >= 0.0 && (d - scale.abs() * c).abs() <= 1e-10 * c.max(1.0));
        }
    }
}
