//! Prior subspaces and the algebra built on them: aligned bases with
//! prescribed principal angles, the joint bases `B_L`, the weight matrices
//! `Q`, the block factorization `Q = B_L O_L L B_Lᵀ`, and the tangent-space
//! projectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::linalg::{from_column_vecs, principal_angles, svd, DenseMatrix, SubspaceBasis};
use crate::weights::f2;

/// Angles below this are treated as exact alignment when building `B_L`.
pub const ANGLE_FLOOR: f64 = 1e-9;

/// True subspaces, prior subspaces and the principal angles between them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorModel {
    pub u_true: SubspaceBasis,
    pub v_true: SubspaceBasis,
    pub u_prior: SubspaceBasis,
    pub v_prior: SubspaceBasis,
    pub theta_u: Vec<f64>,
    pub theta_v: Vec<f64>,
}

impl PriorModel {
    /// Validates shapes and measures the angles.
    pub fn new(
        u_true: SubspaceBasis,
        v_true: SubspaceBasis,
        u_prior: SubspaceBasis,
        v_prior: SubspaceBasis,
    ) -> Result<Self> {
        let n = u_true.ambient();
        let r = u_true.dim();
        let rp = u_prior.dim();
        if [v_true.ambient(), u_prior.ambient(), v_prior.ambient()] != [n; 3] {
            return Err(Error::Dimension("bases live in different ambient spaces".into()));
        }
        if v_true.dim() != r || v_prior.dim() != rp {
            return Err(Error::Dimension("row and column sides disagree in rank".into()));
        }
        check_dims(r, rp, n)?;
        let theta_u = principal_angles(&u_true, &u_prior)?;
        let theta_v = principal_angles(&v_true, &v_prior)?;
        Ok(Self {
            u_true,
            v_true,
            u_prior,
            v_prior,
            theta_u,
            theta_v,
        })
    }

    pub fn n(&self) -> usize {
        self.u_true.ambient()
    }

    pub fn rank(&self) -> usize {
        self.u_true.dim()
    }

    pub fn prior_rank(&self) -> usize {
        self.u_prior.dim()
    }
}

fn check_dims(r: usize, r_prime: usize, n: usize) -> Result<()> {
    if r == 0 || r > r_prime || r + r_prime > n {
        return Err(Error::Dimension(format!(
            "need 1 ≤ r ≤ r′ ≤ n − r, got r={r}, r′={r_prime}, n={n}"
        )));
    }
    Ok(())
}

fn check_angles(theta: &[f64]) -> Result<()> {
    if let Some(t) = theta.iter().find(|t| !(0.0..=FRAC_PI_2).contains(*t)) {
        return Err(Error::OutOfRange(format!("angle {t} outside [0, π/2]")));
    }
    Ok(())
}

/// Diagonal weights on the prior directions: `Λ = blkdiag(Λ₁, Λ₂)` for the
/// column side and `Γ = blkdiag(Γ₁, Γ₂)` for the row side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
}

impl WeightSpec {
    pub fn new(lambda1: Vec<f64>, lambda2: Vec<f64>, gamma1: Vec<f64>, gamma2: Vec<f64>) -> Result<Self> {
        let spec = Self {
            lambda1,
            lambda2,
            gamma1,
            gamma2,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// All weights one: the unweighted problem.
    pub fn ones(r: usize, r_prime: usize) -> Self {
        Self::uniform(r, r_prime, 1.0, 1.0)
    }

    /// `Λ₁ = λI`, `Γ₁ = γI`, the extra prior directions left unweighted.
    pub fn uniform(r: usize, r_prime: usize, lambda: f64, gamma: f64) -> Self {
        Self {
            lambda1: vec![lambda; r],
            lambda2: vec![1.0; r_prime - r],
            gamma1: vec![gamma; r],
            gamma2: vec![1.0; r_prime - r],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1.len() != self.gamma1.len() || self.lambda2.len() != self.gamma2.len() {
            return Err(Error::Dimension("column and row weights differ in length".into()));
        }
        let all = self.lambda1.iter().chain(&self.lambda2).chain(&self.gamma1).chain(&self.gamma2);
        for &w in all {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::OutOfRange(format!("weight {w} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn r(&self) -> usize {
        self.lambda1.len()
    }

    pub fn r_prime(&self) -> usize {
        self.lambda1.len() + self.lambda2.len()
    }

    /// Diagonal of `Λ`.
    pub fn lambda(&self) -> Vec<f64> {
        [self.lambda1.as_slice(), &self.lambda2].concat()
    }

    /// Diagonal of `Γ`.
    pub fn gamma(&self) -> Vec<f64> {
        [self.gamma1.as_slice(), &self.gamma2].concat()
    }

    pub fn is_unweighted(&self) -> bool {
        self.lambda().iter().chain(&self.gamma()).all(|&w| w == 1.0)
    }
}

/// One side of a synthetic prior: `U_r`, `Ũ_{r′}` and their angles.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub truth: SubspaceBasis,
    pub prior: SubspaceBasis,
    pub theta: Vec<f64>,
}

/// Places `U_r` and `Ũ_{r′}` in a seeded random orthonormal frame so that
/// `U_rᵀ Ũ_{r′} = [diag(cos θ) 0]` exactly.
pub fn build_aligned_bases(theta: &[f64], r_prime: usize, n: usize, seed: u64) -> Result<AlignedPair> {
    let r = theta.len();
    check_dims(r, r_prime, n)?;
    check_angles(theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = DenseMatrix::random_orthogonal(n, &mut rng);
    let truth = frame.columns(0, r);
    let mut prior = DenseMatrix::zeros(n, r_prime);
    for (i, &t) in theta.iter().enumerate() {
        let (s, c) = t.sin_cos();
        for row in 0..n {
            prior[(row, i)] = c * frame[(row, i)] - s * frame[(row, r + i)];
        }
    }
    for j in r..r_prime {
        for row in 0..n {
            prior[(row, j)] = -frame[(row, r + j)];
        }
    }
    Ok(AlignedPair {
        truth: SubspaceBasis::new(truth)?,
        prior: SubspaceBasis::new(prior)?,
        theta: theta.to_vec(),
    })
}

/// Both sides of a synthetic prior model with prescribed angles.
pub fn build_prior_model(theta_u: &[f64], theta_v: &[f64], r_prime: usize, n: usize, seed: u64) -> Result<PriorModel> {
    if theta_u.len() != theta_v.len() {
        return Err(Error::Dimension("θ_u and θ_v differ in length".into()));
    }
    let left = build_aligned_bases(theta_u, r_prime, n, seed)?;
    let right = build_aligned_bases(theta_v, r_prime, n, seed ^ 0x5bd1_e995_u64)?;
    Ok(PriorModel {
        u_true: left.truth,
        v_true: right.truth,
        u_prior: left.prior,
        v_prior: right.prior,
        theta_u: left.theta,
        theta_v: right.theta,
    })
}

/// Canonically aligned bases: column `i` of `truth` and of the first `r`
/// prior columns span the `i`-th principal plane, angles non-increasing.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub truth: DenseMatrix,
    pub prior: DenseMatrix,
    pub theta: Vec<f64>,
}

/// Rotates `U_r` and `Ũ_{r′}` within their spans so that
/// `U_rᵀ Ũ_{r′} = [diag(cos θ) 0]` with `θ` non-increasing.
pub fn align_prior(truth: &SubspaceBasis, prior: &SubspaceBasis) -> Result<Alignment> {
    let n = truth.ambient();
    let r = truth.dim();
    let rp = prior.dim();
    if prior.ambient() != n {
        return Err(Error::Dimension("ambient dimensions differ".into()));
    }
    check_dims(r, rp, n)?;
    let cross = truth.matrix().t_matmul(prior.matrix())?;
    let s = svd(&cross)?;
    // Singular values come non-increasing in cos, i.e. angles non-decreasing;
    // reverse to put the largest angle first.
    let order: Vec<usize> = (0..r).rev().collect();
    let p = DenseMatrix::from_fn(r, r, |i, j| s.u[(i, order[j])]);
    let rr = DenseMatrix::from_fn(rp, r, |i, j| s.v[(i, order[j])]);
    let u_al = truth.matrix().matmul(&p)?;
    let mut right = rr.clone();
    if let Some(perp) = rr.orthonormal_complement() {
        right = DenseMatrix::hstack(&[&rr, &perp])?;
    }
    let prior_al = prior.matrix().matmul(&right)?;

    let u_t = u_al.transpose();
    let theta = (0..r)
        .map(|i| {
            let col = prior_al.col(i);
            let coeff: Vec<f64> = (0..r).map(|k| dot(u_t.row(k), &col)).collect();
            let resid: f64 = (0..n)
                .map(|row| {
                    let proj: f64 = (0..r).map(|k| u_al[(row, k)] * coeff[k]).sum();
                    (col[row] - proj).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            resid.atan2(coeff[i].abs())
        })
        .collect::<Vec<f64>>();
    // Fix signs so that cos θ_i ≥ 0 on the diagonal.
    let mut prior_al = prior_al;
    for i in 0..r {
        let c: f64 = dot(&u_al.col(i), &prior_al.col(i));
        if c < 0.0 {
            for row in 0..n {
                prior_al[(row, i)] = -prior_al[(row, i)];
            }
        }
    }
    Ok(Alignment {
        truth: u_al,
        prior: prior_al,
        theta,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The orthogonal basis `B_L = [U_r, U′₁, U′₂, U″]` together with the
/// aligned bases it was built from.
#[derive(Debug, Clone)]
pub struct JointBases {
    pub b: DenseMatrix,
    pub alignment: Alignment,
}

/// Builds `B_L` with `U′₁ = −P_{U⊥}Ũ₁ / sin θ` and `U′₂ = −Ũ₂`. Angles under
/// [`ANGLE_FLOOR`] get an arbitrary orthonormal completion column instead.
pub fn build_joint_bases(truth: &SubspaceBasis, prior: &SubspaceBasis) -> Result<JointBases> {
    let al = align_prior(truth, prior)?;
    let n = truth.ambient();
    let r = truth.dim();
    let rp = prior.dim();
    let p_perp = &DenseMatrix::identity(n) - &truth.projector();

    let mut cols: Vec<Vec<f64>> = (0..r).map(|j| al.truth.col(j)).collect();
    let mut u1: Vec<Option<Vec<f64>>> = vec![None; r];
    for (i, slot) in u1.iter_mut().enumerate() {
        let s = al.theta[i].sin();
        if al.theta[i] >= ANGLE_FLOOR {
            let proj = p_perp.matmul(&al.prior.columns(i, i + 1))?;
            *slot = Some(proj.as_slice().iter().map(|x| -x / s).collect());
        }
    }
    let u2: Vec<Vec<f64>> = (r..rp).map(|j| al.prior.col(j).iter().map(|x| -x).collect()).collect();

    // Completion vectors must avoid every other known column.
    let mut known: Vec<Vec<f64>> = cols.clone();
    known.extend(u1.iter().flatten().cloned());
    known.extend(u2.iter().cloned());
    for slot in u1.iter_mut().filter(|s| s.is_none()) {
        let extra = from_column_vecs(n, &known)
            .orthonormal_complement()
            .ok_or_else(|| Error::DegenerateAngle("no room for a completion vector".into()))?;
        let v = extra.col(0);
        known.push(v.clone());
        *slot = Some(v);
    }
    cols.extend(u1.into_iter().flatten());
    cols.extend(u2);
    let head = from_column_vecs(n, &cols);
    let b = match head.orthonormal_complement() {
        Some(rest) => DenseMatrix::hstack(&[&head, &rest])?,
        None => head,
    };
    Ok(JointBases { b, alignment: al })
}

/// `Q = Ũ Λ Ũᵀ + P_{Ũ⊥}` with its inverse and eigendecomposition.
#[derive(Debug, Clone)]
pub struct QMatrix {
    pub q: DenseMatrix,
    pub q_inv: DenseMatrix,
    /// Orthogonal eigenbasis `[Ũ, Ũ⊥]`.
    pub eigvecs: DenseMatrix,
    /// Eigenvalues `(Λ, 1, …, 1)` matching `eigvecs`.
    pub eigvals: Vec<f64>,
}

impl QMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            q: DenseMatrix::identity(n),
            q_inv: DenseMatrix::identity(n),
            eigvecs: DenseMatrix::identity(n),
            eigvals: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn is_identity(&self) -> bool {
        self.eigvals.iter().all(|&w| w == 1.0)
    }
}

/// Builds `Q = I + Ũ(Λ − I)Ũᵀ`, so `Λ = I` yields the identity exactly.
pub fn build_q(prior: &SubspaceBasis, lambda: &[f64]) -> Result<QMatrix> {
    let n = prior.ambient();
    let k = prior.dim();
    if lambda.len() != k {
        return Err(Error::Dimension(format!("{} weights for a {k}-dimensional prior", lambda.len())));
    }
    if let Some(w) = lambda.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
        return Err(Error::OutOfRange(format!("weight {w} outside (0, 1]")));
    }
    let u = prior.matrix();
    let shifted = |f: &dyn Fn(f64) -> f64| -> DenseMatrix {
        let mut scaled = u.clone();
        for i in 0..n {
            for (j, &w) in lambda.iter().enumerate() {
                scaled[(i, j)] *= f(w);
            }
        }
        let mut m = scaled.matmul(&u.transpose()).expect("square product");
        for i in 0..n {
            m[(i, i)] += 1.0;
        }
        m
    };
    let q = shifted(&|w| w - 1.0);
    let q_inv = shifted(&|w| 1.0 / w - 1.0);
    let eigvecs = match u.orthonormal_complement() {
        Some(c) => DenseMatrix::hstack(&[u, &c])?,
        None => u.clone(),
    };
    let mut eigvals = lambda.to_vec();
    eigvals.resize(n, 1.0);
    Ok(QMatrix {
        q,
        q_inv,
        eigvecs,
        eigvals,
    })
}

/// Diagonals of the upper-triangular factor
/// `L = [[Δ, (I−Λ₁²)sinθcosθ·Δ⁻¹], [0, Λ₁Δ⁻¹]] ⊕ Λ₂ ⊕ I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFactor {
    pub theta: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub delta: Vec<f64>,
    pub l12_diag: Vec<f64>,
    pub l22_diag: Vec<f64>,
    pub lambda2: Vec<f64>,
}

pub fn build_block_factor(theta: &[f64], lambda1: &[f64], lambda2: &[f64]) -> Result<BlockFactor> {
    if theta.len() != lambda1.len() {
        return Err(Error::Dimension("θ and λ₁ differ in length".into()));
    }
    check_angles(theta)?;
    if let Some(w) = lambda1.iter().chain(lambda2).find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::OutOfRange(format!("weight {w} outside [0, 1]")));
    }
    let mut delta = Vec::with_capacity(theta.len());
    let mut l12 = Vec::with_capacity(theta.len());
    let mut l22 = Vec::with_capacity(theta.len());
    for (i, (&t, &l)) in theta.iter().zip(lambda1).enumerate() {
        let d = f2(l, t);
        if d == 0.0 {
            return Err(Error::DegenerateWeight(format!(
                "λ₁({i}) = 0 at θ = 0 makes Δ singular"
            )));
        }
        let (s, c) = t.sin_cos();
        delta.push(d);
        l12.push((1.0 - l * l) * s * c / d);
        l22.push(l / d);
    }
    Ok(BlockFactor {
        theta: theta.to_vec(),
        lambda1: lambda1.to_vec(),
        delta,
        l12_diag: l12,
        l22_diag: l22,
        lambda2: lambda2.to_vec(),
    })
}

impl BlockFactor {
    pub fn r(&self) -> usize {
        self.delta.len()
    }

    pub fn r_prime(&self) -> usize {
        self.delta.len() + self.lambda2.len()
    }

    /// Dense `n x n` factor `L` in `B_L` coordinates.
    pub fn assemble_l(&self, n: usize) -> Result<DenseMatrix> {
        let r = self.r();
        check_dims(r, self.r_prime(), n)?;
        let mut l = DenseMatrix::identity(n);
        for i in 0..r {
            l[(i, i)] = self.delta[i];
            l[(i, r + i)] = self.l12_diag[i];
            l[(r + i, r + i)] = self.l22_diag[i];
        }
        for (j, &w) in self.lambda2.iter().enumerate() {
            l[(2 * r + j, 2 * r + j)] = w;
        }
        Ok(l)
    }

    /// Orthogonal factor `O_L` with `B_Lᵀ Q B_L = O_L L`.
    pub fn assemble_o(&self, n: usize) -> Result<DenseMatrix> {
        let r = self.r();
        check_dims(r, self.r_prime(), n)?;
        let mut o = DenseMatrix::identity(n);
        for i in 0..r {
            let (s, c) = self.theta[i].sin_cos();
            let l = self.lambda1[i];
            let a = (l * c * c + s * s) / self.delta[i];
            let b = (1.0 - l) * s * c / self.delta[i];
            o[(i, i)] = a;
            o[(i, r + i)] = -b;
            o[(r + i, i)] = b;
            o[(r + i, r + i)] = a;
        }
        Ok(o)
    }
}

/// Closed-form operator norms of the sub-blocks of `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockNorms {
    /// `‖L₁₁‖ = max f₂(λ₁, θ)`.
    pub l11: f64,
    /// `‖L₁₂‖ = max (1−λ₁²) sinθ cosθ / f₂(λ₁, θ)`.
    pub l12: f64,
    /// `√max f₂²(1−λ₁², θ)/f₂²(λ₁, θ)`, an upper bound on `‖L₁₂‖`.
    pub l12_bound: f64,
    /// `‖I − L₂₂‖ = max (1 − λ₁/f₂)`.
    pub i_minus_l22: f64,
    /// `‖[L₁₁ L₁₂]‖ = max f₁/f₂`.
    pub l11_l12: f64,
    /// `‖L′‖² = max(d₁, d₂)`, `L′` being the columns of `L − I` past the first `r`.
    pub l_prime_sq: f64,
    /// `‖blkdiag(I − L₂₂, I − Λ₂)‖`.
    pub complement_diag: f64,
}

pub fn block_norms(bf: &BlockFactor) -> BlockNorms {
    let maxed = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0_f64, f64::max);
    let idx = 0..bf.r();
    let l11 = maxed(&mut bf.delta.iter().copied());
    let l12 = maxed(&mut bf.l12_diag.iter().map(|x| x.abs()));
    let l12_bound = maxed(&mut idx.clone().map(|i| {
        let l = bf.lambda1[i];
        f2(1.0 - l * l, bf.theta[i]) / bf.delta[i]
    }));
    let i_minus_l22 = maxed(&mut bf.l22_diag.iter().map(|x| 1.0 - x));
    let l11_l12 = maxed(&mut idx.clone().map(|i| {
        let l = bf.lambda1[i];
        crate::weights::f1(l, bf.theta[i]) / bf.delta[i]
    }));
    let d1 = maxed(&mut idx.map(|i| (bf.l22_diag[i] - 1.0).powi(2) + bf.l12_diag[i].powi(2)));
    let d2 = maxed(&mut bf.lambda2.iter().map(|w| (w - 1.0).powi(2)));
    let c2 = maxed(&mut bf.lambda2.iter().map(|w| 1.0 - w));
    BlockNorms {
        l11,
        l12,
        l12_bound,
        i_minus_l22,
        l11_l12,
        l_prime_sq: d1.max(d2),
        complement_diag: i_minus_l22.max(c2),
    }
}

fn check_tangent_shapes(z: &DenseMatrix, u: &SubspaceBasis, v: &SubspaceBasis) -> Result<()> {
    if z.rows() != u.ambient() || z.cols() != v.ambient() {
        return Err(Error::Dimension(format!(
            "{}x{} matrix against bases in dimensions {} and {}",
            z.rows(),
            z.cols(),
            u.ambient(),
            v.ambient()
        )));
    }
    Ok(())
}

/// `P_T(Z) = P_U Z + Z P_V − P_U Z P_V`.
pub fn proj_tangent(z: &DenseMatrix, u: &SubspaceBasis, v: &SubspaceBasis) -> Result<DenseMatrix> {
    Ok(z - &proj_tangent_perp(z, u, v)?)
}

/// `P_{T⊥}(Z) = (I − P_U) Z (I − P_V)`.
pub fn proj_tangent_perp(z: &DenseMatrix, u: &SubspaceBasis, v: &SubspaceBasis) -> Result<DenseMatrix> {
    check_tangent_shapes(z, u, v)?;
    let (ub, vb) = (u.matrix(), v.matrix());
    let left = z - &ub.matmul(&ub.t_matmul(z)?)?;
    let zv = left.matmul(vb)?;
    Ok(&left - &zv.matmul(&vb.transpose())?)
}
