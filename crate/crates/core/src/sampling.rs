//! Bernoulli observation masks and the sampling operators `R_Ω` and `P_Ω`.
//!
//! Entry `(i, l)` of a mask is decided by the ChaCha word pair at position
//! `2·(i·cols + l)` of the stream keyed by the seed, so any entry can be
//! regenerated independently of the others.

use std::fs::File;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Observation probabilities: one value for every entry, or one per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Probability {
    Uniform(f64),
    PerEntry(DenseMatrix),
}

impl Probability {
    fn at(&self, i: usize, l: usize) -> f64 {
        match self {
            Probability::Uniform(p) => *p,
            Probability::PerEntry(m) => m[(i, l)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMask {
    rows: usize,
    cols: usize,
    eps: Vec<bool>,
    prob: Probability,
    seed: Option<u64>,
}

fn check_probability(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::OutOfRange(format!("probability {p} outside (0, 1]")));
    }
    Ok(())
}

/// Draws `ε_il ~ Bernoulli(p_il)` independently for an `n x n` mask.
pub fn draw_mask(n: usize, prob: &Probability, seed: u64) -> Result<SampleMask> {
    match prob {
        Probability::Uniform(p) => check_probability(*p)?,
        Probability::PerEntry(m) => {
            if m.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "{}x{} probability matrix for n = {n}",
                    m.rows(),
                    m.cols()
                )));
            }
            m.as_slice().iter().try_for_each(|&p| check_probability(p))?;
        }
    }
    if n == 0 {
        return Err(Error::Dimension("empty mask".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = Vec::with_capacity(n * n);
    for i in 0..n {
        for l in 0..n {
            let u: f64 = rng.random();
            eps.push(u < prob.at(i, l));
        }
    }
    Ok(SampleMask {
        rows: n,
        cols: n,
        eps,
        prob: prob.clone(),
        seed: Some(seed),
    })
}

impl SampleMask {
    /// Fully observed mask with `p = 1`.
    pub fn full(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            eps: vec![true; n * n],
            prob: Probability::Uniform(1.0),
            seed: None,
        }
    }

    /// Mask from explicit indicators and probabilities.
    pub fn from_parts(eps: Vec<bool>, prob: Probability, rows: usize, cols: usize) -> Result<Self> {
        if eps.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("{} indicators for {rows}x{cols}", eps.len())));
        }
        match &prob {
            Probability::Uniform(p) => check_probability(*p)?,
            Probability::PerEntry(m) => {
                if m.shape() != (rows, cols) {
                    return Err(Error::Dimension("probability matrix shape".into()));
                }
                m.as_slice().iter().try_for_each(|&p| check_probability(p))?;
            }
        }
        Ok(Self {
            rows,
            cols,
            eps,
            prob,
            seed: None,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn is_observed(&self, i: usize, l: usize) -> bool {
        self.eps[i * self.cols + l]
    }

    pub fn indicators(&self) -> &[bool] {
        &self.eps
    }

    pub fn prob(&self, i: usize, l: usize) -> f64 {
        self.prob.at(i, l)
    }

    pub fn probability(&self) -> &Probability {
        &self.prob
    }

    /// The common probability when sampling is uniform.
    pub fn uniform_p(&self) -> Option<f64> {
        match self.prob {
            Probability::Uniform(p) => Some(p),
            Probability::PerEntry(_) => None,
        }
    }

    /// `|Ω|`.
    pub fn observed_count(&self) -> usize {
        self.eps.iter().filter(|&&e| e).count()
    }

    fn check(&self, z: &DenseMatrix) -> Result<()> {
        if z.shape() != self.shape() {
            return Err(Error::Dimension(format!(
                "{}x{} matrix against a {}x{} mask",
                z.rows(),
                z.cols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }

    /// Writes observed entries as `i,l,p` triplets.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["i", "l", "p"]).map_err(|e| Error::format(path, e))?;
        for i in 0..self.rows {
            for l in 0..self.cols {
                if self.is_observed(i, l) {
                    w.write_record(&[i.to_string(), l.to_string(), self.prob(i, l).to_string()])
                        .map_err(|e| Error::format(path, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads an `i,l,p` triplet file. Unobserved entries get `default_p`.
    pub fn read_csv(path: &Path, n: usize, default_p: f64) -> Result<Self> {
        check_probability(default_p)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let mut eps = vec![false; n * n];
        let mut prob = DenseMatrix::from_fn(n, n, |_, _| default_p);
        for rec in reader.deserialize::<(usize, usize, f64)>() {
            let (i, l, p) = rec.map_err(|e| Error::format(path, e))?;
            if i >= n || l >= n {
                return Err(Error::format(path, format!("index ({i}, {l}) outside {n}x{n}")));
            }
            check_probability(p).map_err(|e| Error::format(path, e))?;
            eps[i * n + l] = true;
            prob[(i, l)] = p;
        }
        let uniform = prob.as_slice().iter().all(|&p| p == default_p);
        let prob = if uniform {
            Probability::Uniform(default_p)
        } else {
            Probability::PerEntry(prob)
        };
        Self::from_parts(eps, prob, n, n)
    }
}

/// `R_Ω(Z)_il = (ε_il / p_il) Z_il`.
pub fn apply_r_omega(z: &DenseMatrix, mask: &SampleMask) -> Result<DenseMatrix> {
    mask.check(z)?;
    let mut out = z.clone();
    for i in 0..mask.rows {
        for l in 0..mask.cols {
            out[(i, l)] = if mask.is_observed(i, l) {
                z[(i, l)] / mask.prob(i, l)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

/// `P_Ω(Z)_il = ε_il Z_il`.
pub fn apply_p_omega(z: &DenseMatrix, mask: &SampleMask) -> Result<DenseMatrix> {
    mask.check(z)?;
    let mut out = z.clone();
    for (x, &e) in out.as_mut_slice().iter_mut().zip(&mask.eps) {
        if !e {
            *x = 0.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointReport {
    pub pairs: usize,
    /// Largest `|⟨A, R_Ω B⟩ − ⟨R_Ω A, B⟩|` relative to `‖A‖‖B‖/min p`.
    pub max_rel_gap: f64,
    pub passed: bool,
}

/// Checks `⟨A, R_Ω(B)⟩ = ⟨R_Ω(A), B⟩` on random Gaussian pairs.
pub fn self_adjointness_check(mask: &SampleMask, pairs: usize, seed: u64) -> Result<AdjointReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = mask.shape();
    let mut gap = 0.0_f64;
    for _ in 0..pairs {
        let a = DenseMatrix::gaussian(rows, cols, &mut rng);
        let b = DenseMatrix::gaussian(rows, cols, &mut rng);
        let lhs = a.inner(&apply_r_omega(&b, mask)?)?;
        let rhs = apply_r_omega(&a, mask)?.inner(&b)?;
        let scale = a.frobenius_norm() * b.frobenius_norm() / min_prob(mask);
        gap = gap.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
    }
    Ok(AdjointReport {
        pairs,
        max_rel_gap: gap,
        passed: gap <= 1e-10,
    })
}

fn min_prob(mask: &SampleMask) -> f64 {
    match &mask.prob {
        Probability::Uniform(p) => *p,
        Probability::PerEntry(m) => m.as_slice().iter().copied().fold(1.0, f64::min),
    }
}

/// Power-iteration estimate of `‖R_Ω‖_{F→F}`.
pub fn r_omega_operator_norm(mask: &SampleMask, iters: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = mask.shape();
    let mut x = DenseMatrix::gaussian(rows, cols, &mut rng);
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let nx = x.frobenius_norm();
        if nx == 0.0 {
            return Ok(0.0);
        }
        x = x.scale(1.0 / nx);
        let y = apply_r_omega(&x, mask)?;
        estimate = y.frobenius_norm();
        x = y;
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn certain_observation() {
        let m = draw_mask(6, &Probability::Uniform(1.0), 3).unwrap();
        assert_eq!(m.observed_count(), 36);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = DenseMatrix::gaussian(6, 6, &mut rng);
        assert_eq!(apply_r_omega(&z, &m).unwrap(), z);
        assert_eq!(apply_p_omega(&z, &m).unwrap(), z);
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(draw_mask(4, &Probability::Uniform(0.0), 1).is_err());
        assert!(draw_mask(4, &Probability::Uniform(1.5), 1).is_err());
        assert!(draw_mask(4, &Probability::PerEntry(DenseMatrix::zeros(3, 3)), 1).is_err());
        assert!(draw_mask(2, &Probability::PerEntry(DenseMatrix::zeros(2, 2)), 1).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = draw_mask(20, &Probability::Uniform(0.4), 99).unwrap();
        let b = draw_mask(20, &Probability::Uniform(0.4), 99).unwrap();
        let c = draw_mask(20, &Probability::Uniform(0.4), 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.indicators(), c.indicators());
        assert_eq!(a.seed(), Some(99));
    }

    #[test]
    fn entries_follow_the_counter_layout() {
        let m = draw_mask(5, &Probability::Uniform(0.5), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for idx in [0usize, 3, 12, 24] {
            rng.set_word_pos(2 * idx as u128);
            let u: f64 = rng.random();
            assert_eq!(u < 0.5, m.indicators()[idx]);
        }
    }

    #[test]
    fn observed_count_is_binomial() {
        let draws = 10_000;
        let total: usize = (0..draws)
            .map(|s| draw_mask(20, &Probability::Uniform(0.5), s).unwrap().observed_count())
            .sum();
        let mean = total as f64 / draws as f64;
        let se = (400.0f64 * 0.25).sqrt() / (draws as f64).sqrt();
        assert!((mean - 200.0).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn empty_and_zero_cases() {
        let m = SampleMask::from_parts(vec![false; 9], Probability::Uniform(0.5), 3, 3).unwrap();
        let z = DenseMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(apply_p_omega(&z, &m).unwrap().max_abs(), 0.0);
        let full = SampleMask::full(3);
        assert_eq!(apply_r_omega(&DenseMatrix::zeros(3, 3), &full).unwrap().max_abs(), 0.0);
        assert!(apply_r_omega(&DenseMatrix::zeros(2, 3), &full).is_err());
    }

    #[test]
    fn adjoint_check_on_several_probabilities() {
        for (k, p) in [0.3, 0.7, 1.0].into_iter().enumerate() {
            let m = draw_mask(10, &Probability::Uniform(p), k as u64).unwrap();
            let rep = self_adjointness_check(&m, 3, 17).unwrap();
            assert!(rep.passed, "{rep:?}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.csv");
        let m = draw_mask(8, &Probability::Uniform(0.3), 5).unwrap();
        m.write_csv(&path).unwrap();
        let back = SampleMask::read_csv(&path, 8, 0.3).unwrap();
        assert_eq!(back.indicators(), m.indicators());
        assert_eq!(back.uniform_p(), Some(0.3));
        assert!(matches!(
            SampleMask::read_csv(&dir.path().join("missing.csv"), 8, 0.3),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn operator_properties(seed in any::<u64>(), p in 0.05f64..=1.0) {
            let m = draw_mask(9, &Probability::Uniform(p), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let z = DenseMatrix::gaussian(9, 9, &mut rng);
            let pz = apply_p_omega(&z, &m).unwrap();
            prop_assert_eq!(apply_p_omega(&pz, &m).unwrap(), pz);
            let rz = apply_r_omega(&z, &m).unwrap();
            let rrz = apply_r_omega(&rz, &m).unwrap();
            prop_assert!(z.inner(&rrz).unwrap() >= z.inner(&rz).unwrap() - 1e-12);
            let norm = r_omega_operator_norm(&m, 50, seed).unwrap();
            prop_assert!(norm <= 1.0 / p * (1.0 + 1e-12));
        }
    }
}
