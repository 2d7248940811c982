use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, DenseMatrix};
use crate::error::{Error, Result};

/// Thin SVD `m = U · diag(sigma) · Vᵀ` with `k = min(rows, cols)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdResult {
    /// `U · diag(sigma) · Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.v.transpose())
            .expect("SVD factors have matching inner dimension")
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }
}

/// Controls for the one-sided Jacobi iteration.
#[derive(Debug, Clone, Copy)]
pub struct SvdOptions {
    /// Sweep cap; `None` means `100 · n`.
    pub max_sweeps: Option<usize>,
    /// Relative orthogonality threshold for a column pair.
    pub tol: f64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            max_sweeps: None,
            tol: 1e-12,
        }
    }
}

pub fn svd(m: &DenseMatrix) -> Result<SvdResult> {
    svd_with(m, SvdOptions::default(), None)
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// `warm_v`, if given, is an orthogonal `cols x cols` matrix used as the
/// starting right rotation; a good guess (e.g. the previous iterate's `V`)
/// cuts the sweep count sharply. It is ignored when `rows < cols`.
pub fn svd_with(m: &DenseMatrix, opts: SvdOptions, warm_v: Option<&DenseMatrix>) -> Result<SvdResult> {
    if m.rows() < m.cols() {
        let t = jacobi(&m.transpose(), opts, None)?;
        return Ok(canonical_signs(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }));
    }
    if let Some(v0) = warm_v {
        if v0.shape() != (m.cols(), m.cols()) {
            return Err(Error::Dimension(format!(
                "warm start is {}x{}, expected {n}x{n}",
                v0.rows(),
                v0.cols(),
                n = m.cols()
            )));
        }
    }
    Ok(canonical_signs(jacobi(m, opts, warm_v)?))
}

/// Rank-`r` truncation and the residual `m − m_r`.
pub fn truncated_svd(m: &DenseMatrix, r: usize) -> Result<(SvdResult, DenseMatrix)> {
    let full = svd(m)?;
    if r == 0 || r > full.rank() {
        return Err(Error::OutOfRange(format!(
            "truncation rank {r} outside 1..={}",
            full.rank()
        )));
    }
    let top = SvdResult {
        u: full.u.columns(0, r),
        sigma: full.sigma[..r].to_vec(),
        v: full.v.columns(0, r),
    };
    let residual = m - &top.reconstruct();
    Ok((top, residual))
}

/// Core iteration for `rows >= cols`, on column-major working copies.
fn jacobi(m: &DenseMatrix, opts: SvdOptions, warm_v: Option<&DenseMatrix>) -> Result<SvdResult> {
    let (rows, n) = m.shape();
    let a_in = match warm_v {
        Some(v0) => m.matmul(v0)?,
        None => m.clone(),
    };
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| a_in.col(j)).collect();
    let mut v: Vec<Vec<f64>> = match warm_v {
        Some(v0) => (0..n).map(|j| v0.col(j)).collect(),
        None => (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                e
            })
            .collect(),
    };

    // Columns at roundoff level relative to the whole matrix carry no
    // direction information; rotating them against large columns cycles.
    let frob_sq: f64 = a.iter().map(|c| dot(c, c)).sum();
    let noise_sq = (f64::EPSILON * f64::EPSILON) * frob_sq * (rows as f64);
    let max_sweeps = opts.max_sweeps.unwrap_or(100 * n.max(1));
    let mut converged = n == 1;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        // Squared column norms, refreshed after every rotation.
        let mut sq: Vec<f64> = a.iter().map(|c| dot(c, c)).collect();
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let (alpha, beta) = (sq[i], sq[j]);
                if alpha <= noise_sq || beta <= noise_sq {
                    continue;
                }
                let gamma = dot(&a[i], &a[j]);
                if gamma == 0.0 || gamma.abs() <= opts.tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = a.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(j);
                rotate(&mut lo[i], &mut hi[0], c, s);
                sq[i] = dot(&a[i], &a[i]);
                sq[j] = dot(&a[j], &a[j]);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi SVD did not converge in {max_sweeps} sweeps"
        )));
    }

    let sig: Vec<f64> = a
        .iter()
        .map(|c| {
            let s = norm(c);
            if s * s <= noise_sq {
                0.0
            } else {
                s
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sig[y].total_cmp(&sig[x]).then(x.cmp(&y)));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if sig[j] > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / sig[j]).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            missing.push(slot);
        }
    }
    for slot in missing {
        u_cols[slot] = completion_vector(&u_cols, slot, rows);
    }

    let mut u = DenseMatrix::zeros(rows, n);
    let mut vm = DenseMatrix::zeros(n, n);
    for (slot, &j) in order.iter().enumerate() {
        u.set_col(slot, &u_cols[slot]);
        vm.set_col(slot, &v[j]);
    }
    Ok(SvdResult {
        u,
        sigma: order.iter().map(|&j| sig[j]).collect(),
        v: vm,
    })
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (p, q) = (*xi, *yi);
        *xi = c * p - s * q;
        *yi = s * p + c * q;
    }
}

/// Unit vector orthogonal to every nonzero column of `cols` except `skip`.
fn completion_vector(cols: &[Vec<f64>], skip: usize, rows: usize) -> Vec<f64> {
    let others: Vec<&Vec<f64>> = cols
        .iter()
        .enumerate()
        .filter(|(k, c)| *k != skip && c.iter().any(|&x| x != 0.0))
        .map(|(_, c)| c)
        .collect();
    let mut best = (0.0, vec![0.0; rows]);
    for e in 0..rows {
        let mut w = vec![0.0; rows];
        w[e] = 1.0;
        for _ in 0..2 {
            for q in &others {
                let d = dot(q, &w);
                w.iter_mut().zip(q.iter()).for_each(|(x, qx)| *x -= d * qx);
            }
        }
        let nw = norm(&w);
        if nw > best.0 + 1e-12 {
            best = (nw, w);
        }
    }
    let (nw, mut w) = best;
    w.iter_mut().for_each(|x| *x /= nw);
    w
}

/// Flip column pairs so the first non-negligible entry of each `U` column is
/// non-negative.
fn canonical_signs(mut r: SvdResult) -> SvdResult {
    for j in 0..r.sigma.len() {
        let col = r.u.col(j);
        let scale = col.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let first = col.iter().find(|x| x.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE));
        if first.is_some_and(|&x| x < 0.0) {
            for i in 0..r.u.rows() {
                r.u[(i, j)] = -r.u[(i, j)];
            }
            for i in 0..r.v.rows() {
                r.v[(i, j)] = -r.v[(i, j)];
            }
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_norm, nuclear_norm, spectral_norm};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orthonormality_defect(q: &DenseMatrix) -> f64 {
        (&q.t_matmul(q).unwrap() - &DenseMatrix::identity(q.cols())).max_abs()
    }

    #[test]
    fn identity_and_diagonal() {
        let s = svd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);

        let d = svd(&DenseMatrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(d.sigma, vec![3.0, 1.0]);
        assert!((&d.u - &DenseMatrix::identity(2)).max_abs() < 1e-15);
        assert!((&d.v - &DenseMatrix::identity(2)).max_abs() < 1e-15);

        let unsorted = svd(&DenseMatrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(unsorted.sigma, vec![3.0, 1.0]);
    }

    #[test]
    fn norms_of_diag_and_zero() {
        let d = DenseMatrix::from_diag(&[3.0, 1.0]);
        assert!((nuclear_norm(&d).unwrap() - 4.0).abs() < 1e-14);
        assert!((spectral_norm(&d).unwrap() - 3.0).abs() < 1e-14);
        assert!((frobenius_norm(&d) - 10f64.sqrt()).abs() < 1e-14);

        let z = DenseMatrix::zeros(3, 2);
        let s = svd(&z).unwrap();
        assert_eq!(s.sigma, vec![0.0, 0.0]);
        assert!(orthonormality_defect(&s.u) < 1e-14);
        assert_eq!(nuclear_norm(&z).unwrap(), 0.0);
    }

    #[test]
    fn truncation() {
        let d = DenseMatrix::from_diag(&[3.0, 2.0, 1.0]);
        let (top, res) = truncated_svd(&d, 1).unwrap();
        assert!((&top.reconstruct() - &DenseMatrix::from_diag(&[3.0, 0.0, 0.0])).max_abs() < 1e-14);
        assert!((nuclear_norm(&res).unwrap() - 3.0).abs() < 1e-12);
        assert!(truncated_svd(&d, 0).is_err());
        assert!(truncated_svd(&d, 4).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DenseMatrix::gaussian(20, 4, &mut rng);
        let b = DenseMatrix::gaussian(20, 4, &mut rng);
        let x = a.matmul(&b.transpose()).unwrap();
        let (_, res) = truncated_svd(&x, 4).unwrap();
        assert!(res.frobenius_norm() <= 1e-8);
    }

    #[test]
    fn rank_deficient_u_is_completed() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let s = svd(&a).unwrap();
        assert!((s.sigma[0] - 2.0).abs() < 1e-14);
        assert!(s.sigma[1].abs() < 1e-14);
        assert!(orthonormality_defect(&s.u) < 1e-12);
        assert!((&s.reconstruct() - &a).max_abs() < 1e-14);
    }

    #[test]
    fn sweep_cap_reports_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DenseMatrix::gaussian(6, 6, &mut rng);
        let opts = SvdOptions {
            max_sweeps: Some(1),
            tol: 1e-12,
        };
        assert!(matches!(svd_with(&m, opts, None), Err(Error::Numerical(_))));
    }

    #[test]
    fn warm_start_matches_cold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = DenseMatrix::gaussian(8, 8, &mut rng);
        let cold = svd(&m).unwrap();
        let perturbed = &m + &DenseMatrix::gaussian(8, 8, &mut rng).scale(1e-3);
        let warm = svd_with(&perturbed, SvdOptions::default(), Some(&cold.v)).unwrap();
        assert!((&warm.reconstruct() - &perturbed).frobenius_norm() < 1e-12);
        assert!(orthonormality_defect(&warm.v) < 1e-12);
    }

    fn matrix_strategy() -> impl Strategy<Value = DenseMatrix> {
        (1usize..=12, 1usize..=12, any::<u64>()).prop_map(|(r, c, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            DenseMatrix::gaussian(r, c, &mut rng)
        })
    }

    proptest! {
        #[test]
        fn svd_invariants(m in matrix_strategy()) {
            let s = svd(&m).unwrap();
            prop_assert!(orthonormality_defect(&s.u) <= 1e-10);
            prop_assert!(orthonormality_defect(&s.v) <= 1e-10);
            prop_assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(s.sigma.iter().all(|&x| x >= 0.0));
            let err = (&s.reconstruct() - &m).frobenius_norm();
            prop_assert!(err <= 1e-8 * m.frobenius_norm());
            for j in 0..s.rank() {
                let first = s.u.col(j).into_iter().find(|x| x.abs() > 1e-12).unwrap();
                prop_assert!(first > 0.0);
            }
        }

        #[test]
        fn norm_ordering(m in matrix_strategy()) {
            let spec = spectral_norm(&m).unwrap();
            let fro = frobenius_norm(&m);
            let nuc = nuclear_norm(&m).unwrap();
            prop_assert!(spec <= fro * (1.0 + 1e-12));
            prop_assert!(fro <= nuc * (1.0 + 1e-12));
        }
    }

    #[test]
    fn large_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let m = DenseMatrix::gaussian(64, 64, &mut rng);
        let s = svd(&m).unwrap();
        assert!((&s.reconstruct() - &m).frobenius_norm() <= 1e-8 * m.frobenius_norm());
    }
}
