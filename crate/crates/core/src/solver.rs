//! Weighted nuclear-norm completion by ADMM.
//!
//! The problem `min ‖Q_U Z Q_V‖_*  s.t.  ‖Y − R_Ω(Z)‖_F ≤ e` is split as
//! `W = Q_U Z Q_V`, `V = Z` with `W` carrying the nuclear norm and `V` the
//! data constraint. The `W` step is singular value thresholding, the `V`
//! step a projection onto the data set, and the `Z` step a diagonal solve in
//! the eigenbases of `Q_U` and `Q_V`. The returned estimate is `V`, which
//! satisfies the data constraint exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nuclear_norm, svd_with, DenseMatrix, SubspaceBasis, SvdOptions};
use crate::sampling::SampleMask;
use crate::subspaces::{build_q, QMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative primal and dual residual target.
    pub tol_rel: f64,
    /// ADMM penalty, applied after the data are scaled to unit RMS.
    pub rho: f64,
    /// Data-fit radius `e`; zero means the equality-constrained problem.
    pub noise_bound: f64,
    /// Keep the per-iteration merit sequence in the report.
    pub record_merit: bool,
    /// Rebalance `ρ` from the residual ratio during the first
    /// `adapt_until` iterations; `ρ` is fixed afterwards.
    pub adapt_until: usize,
    /// Over-relaxation factor in (0, 2); 1 is plain ADMM.
    pub relaxation: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol_rel: 1e-7,
            rho: 1.0,
            noise_bound: 0.0,
            record_merit: false,
            adapt_until: 1000,
            relaxation: 1.6,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::Config(format!("relaxation {} outside (0, 2)", self.relaxation)));
        }
        if !(self.tol_rel > 0.0) || !(self.rho > 0.0) || !(self.noise_bound >= 0.0) {
            return Err(Error::Config(format!(
                "need tol_rel > 0, rho > 0, noise_bound ≥ 0 (got {}, {}, {})",
                self.tol_rel, self.rho, self.noise_bound
            )));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_bound == 0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub x_hat: DenseMatrix,
    pub iters: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `‖Q_U X̂ Q_V‖_*`.
    pub objective: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merit: Vec<f64>,
}

/// Singular value thresholding, the proximal map of `τ‖·‖_*`.
pub fn svt(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    Ok(svt_warm(m, tau, None)?.0)
}

/// SVT that also returns the right singular vectors for warm starts.
fn svt_warm(m: &DenseMatrix, tau: f64, warm: Option<&DenseMatrix>) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(tau >= 0.0) {
        return Err(Error::OutOfRange(format!("threshold {tau} is negative")));
    }
    let s = svd_with(m, SvdOptions::default(), warm)?;
    let (rows, cols) = m.shape();
    let mut out = DenseMatrix::zeros(rows, cols);
    for (k, &sigma) in s.sigma.iter().enumerate() {
        let shrunk = sigma - tau;
        if shrunk <= 0.0 {
            break;
        }
        let data = out.as_mut_slice();
        for i in 0..rows {
            let a = s.u[(i, k)] * shrunk;
            if a == 0.0 {
                continue;
            }
            let row = &mut data[i * cols..(i + 1) * cols];
            for (j, o) in row.iter_mut().enumerate() {
                *o += a * s.v[(j, k)];
            }
        }
    }
    Ok((out, s.v))
}

/// `‖X̂ − X‖_F / ‖X‖_F`.
pub fn nre(x_hat: &DenseMatrix, x_true: &DenseMatrix) -> Result<f64> {
    let denom = x_true.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::OutOfRange("ground truth is the zero matrix".into()));
    }
    Ok((x_hat - x_true).frobenius_norm() / denom)
}

/// Unweighted nuclear-norm completion.
pub fn solve_standard(y: &DenseMatrix, mask: &SampleMask, opts: &SolveOptions) -> Result<SolveReport> {
    let n = y.rows();
    let m = y.cols();
    solve_weighted(y, mask, &QMatrix::identity(n), &QMatrix::identity(m), opts)
}

/// `Λ = λI`, `Γ = γI` on the whole of the given prior bases.
pub fn solve_single_weight(
    y: &DenseMatrix,
    mask: &SampleMask,
    u_prior: &SubspaceBasis,
    v_prior: &SubspaceBasis,
    lambda: f64,
    gamma: f64,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let qu = build_q(u_prior, &vec![lambda; u_prior.dim()])?;
    let qv = build_q(v_prior, &vec![gamma; v_prior.dim()])?;
    solve_weighted(y, mask, &qu, &qv, opts)
}

/// Orthogonal change of basis `Eᵤᵀ M E_v`, skipped for identity weights.
struct Frame<'a> {
    eu: Option<&'a DenseMatrix>,
    ev: Option<&'a DenseMatrix>,
}

impl Frame<'_> {
    fn rotate_in(&self, m: &DenseMatrix) -> DenseMatrix {
        let left = match self.eu {
            Some(e) => e.t_matmul(m).expect("shape checked"),
            None => m.clone(),
        };
        match self.ev {
            Some(e) => left.matmul(e).expect("shape checked"),
            None => left,
        }
    }

    fn rotate_out(&self, m: &DenseMatrix) -> DenseMatrix {
        let left = match self.eu {
            Some(e) => e.matmul(m).expect("shape checked"),
            None => m.clone(),
        };
        match self.ev {
            Some(e) => left.matmul(&e.transpose()).expect("shape checked"),
            None => left,
        }
    }
}

/// Projection of `m` onto `{V : ‖Y − R_Ω(V)‖_F ≤ e}` (scaled data).
struct DataSet<'a> {
    mask: &'a SampleMask,
    /// Observed targets `p·Y` for the equality case, `Y` otherwise.
    y: &'a DenseMatrix,
    e: f64,
}

impl DataSet<'_> {
    fn project(&self, m: &DenseMatrix) -> DenseMatrix {
        let (rows, cols) = m.shape();
        let mut v = m.clone();
        if self.e == 0.0 {
            for i in 0..rows {
                for l in 0..cols {
                    if self.mask.is_observed(i, l) {
                        v[(i, l)] = self.mask.prob(i, l) * self.y[(i, l)];
                    }
                }
            }
            return v;
        }
        let misfit = |mu: f64| -> f64 {
            let mut acc = 0.0;
            for i in 0..rows {
                for l in 0..cols {
                    if self.mask.is_observed(i, l) {
                        let a = 1.0 / self.mask.prob(i, l);
                        let vi = (m[(i, l)] + mu * a * self.y[(i, l)]) / (1.0 + mu * a * a);
                        acc += (a * vi - self.y[(i, l)]).powi(2);
                    }
                }
            }
            acc
        };
        let e2 = self.e * self.e;
        if misfit(0.0) <= e2 {
            return v;
        }
        let mu = match self.mask.uniform_p() {
            // Ball of radius e·p around p·Y: closed form.
            Some(p) => {
                let a = 1.0 / p;
                let dist = misfit(0.0).sqrt() / a;
                let t = (self.e / a) / dist;
                // V = c + t (M − c) ⇔ μ a² = (1 − t)/t.
                (1.0 - t) / (t * a * a)
            }
            None => {
                let mut hi = 1.0;
                while misfit(hi) > e2 {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if misfit(mid) > e2 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                hi
            }
        };
        for i in 0..rows {
            for l in 0..cols {
                if self.mask.is_observed(i, l) {
                    let a = 1.0 / self.mask.prob(i, l);
                    v[(i, l)] = (m[(i, l)] + mu * a * self.y[(i, l)]) / (1.0 + mu * a * a);
                }
            }
        }
        v
    }
}

fn sum_sq(m: &DenseMatrix) -> f64 {
    m.as_slice().iter().map(|x| x * x).sum()
}

/// Minimizes `‖Q_U Z Q_V‖_*` subject to the data constraint.
///
/// Non-convergence within `max_iters` is reported through
/// `converged = false`, never as an error.
pub fn solve_weighted(
    y: &DenseMatrix,
    mask: &SampleMask,
    qu: &QMatrix,
    qv: &QMatrix,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    let (rows, cols) = y.shape();
    if mask.shape() != (rows, cols) || qu.n() != rows || qv.n() != cols {
        return Err(Error::Dimension(format!(
            "data {rows}x{cols}, mask {:?}, Q_U {}, Q_V {}",
            mask.shape(),
            qu.n(),
            qv.n()
        )));
    }
    if let Some(w) = qu.eigvals.iter().chain(&qv.eigvals).find(|w| !(**w > 0.0)) {
        return Err(Error::DegenerateWeight(format!("Q has eigenvalue {w}")));
    }

    // Scale so observed targets have unit RMS; ρ is meant for that scale.
    let observed = mask.observed_count();
    let target_ss: f64 = (0..rows)
        .flat_map(|i| (0..cols).map(move |l| (i, l)))
        .filter(|&(i, l)| mask.is_observed(i, l))
        .map(|(i, l)| (mask.prob(i, l) * y[(i, l)]).powi(2))
        .sum();
    let scale = if observed > 0 && target_ss > 0.0 {
        (target_ss / observed as f64).sqrt()
    } else {
        1.0
    };
    let ys = y.scale(1.0 / scale);
    let data = DataSet {
        mask,
        y: &ys,
        e: opts.noise_bound / scale,
    };

    let frame = Frame {
        eu: (!qu.is_identity()).then_some(&qu.eigvecs),
        ev: (!qv.is_identity()).then_some(&qv.eigvecs),
    };
    let d = DenseMatrix::from_fn(rows, cols, |i, j| qu.eigvals[i] * qv.eigvals[j]);
    let denom = d.map(|x| x * x + 1.0);
    let mut rho = opts.rho;
    let alpha = opts.relaxation;

    let mut z_hat = DenseMatrix::zeros(rows, cols);
    let mut z = DenseMatrix::zeros(rows, cols);
    let mut u1 = DenseMatrix::zeros(rows, cols);
    let mut u2 = DenseMatrix::zeros(rows, cols);
    let mut v = data.project(&z);
    let mut w_hat;
    let mut warm: Option<DenseMatrix> = None;
    let mut merit = Vec::new();
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mut iters = 0;

    while iters < opts.max_iters {
        iters += 1;
        // W step (in eigen coordinates; SVT is orthogonally invariant).
        let az = d.zip_map(&z_hat, |a, b| a * b)?;
        let (w_new, vw) = svt_warm(&(&az - &u1), 1.0 / rho, warm.as_ref())?;
        w_hat = w_new;
        warm = Some(vw);
        // V step.
        v = data.project(&(&z - &u2));
        // Over-relaxed copies of (W, V) feed the Z and dual steps.
        let (h1, h2) = if alpha == 1.0 {
            (w_hat.clone(), v.clone())
        } else {
            (
                w_hat.zip_map(&az, |w, b| alpha * w + (1.0 - alpha) * b)?,
                v.zip_map(&z, |w, b| alpha * w + (1.0 - alpha) * b)?,
            )
        };
        // Z step.
        let rhs_a = d.zip_map(&(&h1 + &u1), |a, b| a * b)?;
        let rhs_b = frame.rotate_in(&(&h2 + &u2));
        let z_hat_new = (&rhs_a + &rhs_b).zip_map(&denom, |a, b| a / b)?;
        let z_new = frame.rotate_out(&z_hat_new);
        let az_new = d.zip_map(&z_hat_new, |a, b| a * b)?;
        // Dual step.
        let du1 = &h1 - &az_new;
        let du2 = &h2 - &z_new;
        u1 = &u1 + &du1;
        u2 = &u2 + &du2;
        let r1 = &w_hat - &az_new;
        let r2 = &v - &z_new;

        let dz_a = &az_new - &az;
        let dz = &z_hat_new - &z_hat;
        let bdz_sq = sum_sq(&dz_a) + sum_sq(&dz);
        let res_sq = sum_sq(&r1) + sum_sq(&r2);
        if opts.record_merit {
            // ‖v_k − v_{k+1}‖²_H with v = (BZ, u): ρ‖BΔZ‖² + ρ‖Δu‖².
            merit.push(rho * bdz_sq + rho * (sum_sq(&du1) + sum_sq(&du2)));
        }
        let x_norm = (sum_sq(&w_hat) + sum_sq(&v)).sqrt();
        let z_norm = (sum_sq(&az_new) + sum_sq(&z_new)).sqrt();
        let u_norm = (sum_sq(&u1) + sum_sq(&u2)).sqrt();
        primal = res_sq.sqrt() / x_norm.max(z_norm).max(f64::MIN_POSITIVE);
        dual = bdz_sq.sqrt() / u_norm.max(f64::MIN_POSITIVE);
        z_hat = z_hat_new;
        z = z_new;
        if primal <= opts.tol_rel && dual <= opts.tol_rel {
            converged = true;
            break;
        }
        if iters < opts.adapt_until && iters % 10 == 0 {
            // Scaled duals are u = y/ρ, so they rescale with ρ.
            let factor = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                u1 = u1.scale(1.0 / factor);
                u2 = u2.scale(1.0 / factor);
            }
        }
    }

    let x_hat = v.scale(scale);
    let weighted = qu.q.matmul(&x_hat)?.matmul(&qv.q)?;
    Ok(SolveReport {
        objective: nuclear_norm(&weighted)?,
        x_hat,
        iters,
        primal_residual: primal,
        dual_residual: dual,
        converged,
        merit,
    })
}
