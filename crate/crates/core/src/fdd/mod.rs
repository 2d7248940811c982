//! FDD massive-MIMO channel model and velocity-driven subspace priors.
//!
//! The base station carries an `N`-antenna ULA and serves `K` moving
//! users. Channels at a past time `t₂` and the current time `t₁` decorrelate
//! through Doppler; the expected cross-grams of the two snapshots give the
//! principal angles between the current channel subspaces and the prior
//! ones.

mod bessel;
mod channel;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, DenseMatrix};

pub use bessel::bessel_j0;
pub use channel::{
    array_response, draw_channel, draw_channel_pair, monte_carlo_correlation, monte_carlo_grams, ChannelSnapshot,
    ComplexMatrix, McEstimate, ScatterDraw,
};

/// How cosines are read off the expected grams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleExtraction {
    /// Canonical correlations: the cross-gram whitened by the two
    /// auto-grams, so a static channel yields zero angles.
    #[default]
    Whitened,
    /// Singular values of the cross-gram as they stand.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_antennas: usize,
    pub n_users: usize,
    /// m/s, one per user.
    pub velocities: Vec<f64>,
    /// Carrier wavelength λ_c in metres.
    pub wavelength: f64,
    /// Antenna spacing d in metres.
    pub spacing: f64,
    /// Array orientation η in radians.
    pub orientation: f64,
    /// Current time.
    pub t1: f64,
    /// Prior (earlier) time, `t2 ≤ t1`.
    pub t2: f64,
    /// Scatterer counts `[s(t1), s(t2)]`.
    pub scatterers: [usize; 2],
    pub seed: u64,
    pub extraction: AngleExtraction,
    /// Number of angles kept per side; defaults to `n_users`.
    pub rank: Option<usize>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            n_antennas: 20,
            n_users: 4,
            velocities: vec![1.0, 2.0, 4.0, 8.0],
            wavelength: 0.1,
            spacing: 0.05,
            orientation: 0.0,
            t1: 0.002,
            t2: 0.001,
            scatterers: [10, 10],
            seed: 0,
            extraction: AngleExtraction::Whitened,
            rank: None,
        }
    }
}

impl ChannelConfig {
    /// Same config with every user moving at `v`.
    pub fn with_uniform_velocity(&self, v: f64) -> Self {
        Self {
            velocities: vec![v; self.n_users],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_antennas == 0 || self.n_users == 0 {
            return bad("need at least one antenna and one user".into());
        }
        if self.velocities.len() != self.n_users {
            return bad(format!(
                "{} velocities for {} users",
                self.velocities.len(),
                self.n_users
            ));
        }
        if let Some(v) = self.velocities.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return bad(format!("velocity {v} must be finite and ≥ 0"));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) || !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad("wavelength and spacing must be positive".into());
        }
        if !self.orientation.is_finite() || !self.t1.is_finite() || !self.t2.is_finite() {
            return bad("orientation and times must be finite".into());
        }
        if self.t2 > self.t1 {
            return bad(format!("t2 = {} is later than t1 = {}", self.t2, self.t1));
        }
        if self.scatterers.contains(&0) {
            return bad("scatterer counts must be ≥ 1".into());
        }
        if let Some(r) = self.rank {
            if r == 0 || r > self.n_users {
                return bad(format!("rank {r} outside 1..={}", self.n_users));
            }
        }
        Ok(())
    }

    /// `s(t)`: `scatterers[1]` at `t2` (when distinct from `t1`),
    /// `scatterers[0]` otherwise.
    pub fn scatterers_at(&self, t: f64) -> usize {
        if t == self.t2 && t != self.t1 {
            self.scatterers[1]
        } else {
            self.scatterers[0]
        }
    }

    fn check_indices(&self, k: usize, l: usize, p: usize, q: usize) -> Result<()> {
        if k >= self.n_users || l >= self.n_users || p >= self.n_antennas || q >= self.n_antennas {
            return Err(Error::OutOfRange(format!(
                "(k, l, p, q) = ({k}, {l}, {p}, {q}) for K = {}, N = {}",
                self.n_users, self.n_antennas
            )));
        }
        Ok(())
    }

    fn j0_scaled(&self, x: f64) -> f64 {
        bessel_j0(2.0 * PI * x / self.wavelength)
    }
}

/// Closed-form cross-correlation between antenna `p` of user `k` at `t1`
/// and antenna `q` of user `l` at `t2`, with 0-based antenna offsets.
///
/// ```text
/// k ≠ l:  α′ J₀(2πν_k t₁/λ) J₀(2πν_l t₂/λ) J₀(2πdp/λ) J₀(2πdq/λ)
/// k = l:  α′ J₀(2πν_k (t₁−t₂)/λ) J₀(2πd(p−q)/λ)
/// ```
///
/// with `α′ = min(s(t₁), s(t₂)) / √(s(t₁) s(t₂))`. Under the channel
/// normalization this equals `N · E[h_k(t₁)_p conj(h_l(t₂)_q)]`.
pub fn correlation_entry(
    cfg: &ChannelConfig,
    (k, l): (usize, usize),
    (p, q): (usize, usize),
    t1: f64,
    t2: f64,
) -> Result<Complex64> {
    cfg.validate()?;
    cfg.check_indices(k, l, p, q)?;
    let (sa, sb) = (cfg.scatterers_at(t1) as f64, cfg.scatterers_at(t2) as f64);
    let alpha = sa.min(sb) / (sa * sb).sqrt();
    let d = cfg.spacing;
    let value = if k != l {
        alpha
            * cfg.j0_scaled(cfg.velocities[k] * t1)
            * cfg.j0_scaled(cfg.velocities[l] * t2)
            * cfg.j0_scaled(d * p as f64)
            * cfg.j0_scaled(d * q as f64)
    } else {
        alpha * cfg.j0_scaled(cfg.velocities[k] * (t1 - t2)) * cfg.j0_scaled(d * (p as f64 - q as f64))
    };
    Ok(Complex64::new(value, 0.0))
}

/// Expected cross-grams between the channels at two times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedGrams {
    /// `E[Hᴴ H̃]`, `K x K`.
    pub col: ComplexMatrix,
    /// `E[H H̃ᴴ] = Σ_k E[h_k(t₁) h_k(t₂)ᴴ]`, `N x N`.
    pub row: ComplexMatrix,
}

fn grams_between(cfg: &ChannelConfig, ta: f64, tb: f64) -> Result<ExpectedGrams> {
    let (nk, nn) = (cfg.n_users, cfg.n_antennas);
    let scale = 1.0 / nn as f64;
    let mut col = ComplexMatrix::zeros(nk, nk);
    for k in 0..nk {
        for l in 0..nk {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in 0..nn {
                acc += correlation_entry(cfg, (k, l), (p, p), ta, tb)?.conj();
            }
            col[(k, l)] = acc * scale;
        }
    }
    let mut row = ComplexMatrix::zeros(nn, nn);
    for p in 0..nn {
        for q in 0..nn {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..nk {
                acc += correlation_entry(cfg, (k, k), (p, q), ta, tb)?;
            }
            row[(p, q)] = acc * scale;
        }
    }
    Ok(ExpectedGrams { col, row })
}

/// `E[Hᴴ H̃]` and `E[H H̃ᴴ]` for `H = H(t₁)`, `H̃ = H(t₂)`.
pub fn expected_grams(cfg: &ChannelConfig) -> Result<ExpectedGrams> {
    grams_between(cfg, cfg.t1, cfg.t2)
}

/// Principal-angle priors in radians, each non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorAngles {
    pub theta_u: Vec<f64>,
    pub theta_v: Vec<f64>,
}

impl PriorAngles {
    pub fn theta_u_deg(&self) -> Vec<f64> {
        self.theta_u.iter().map(|t| t.to_degrees()).collect()
    }

    pub fn theta_v_deg(&self) -> Vec<f64> {
        self.theta_v.iter().map(|t| t.to_degrees()).collect()
    }

    pub fn max_angle(&self) -> f64 {
        self.theta_u.iter().chain(&self.theta_v).fold(0.0, |m, t| m.max(*t))
    }
}

/// `G^{-1/2}` of a symmetric positive semidefinite matrix, pseudo-inverse
/// on its numerical null space.
fn inv_sqrt(g: &DenseMatrix) -> Result<DenseMatrix> {
    let s = svd(g)?;
    let top = s.sigma.first().copied().unwrap_or(0.0);
    let n = g.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for (k, &sig) in s.sigma.iter().enumerate() {
        if sig <= 1e-12 * top {
            continue;
        }
        let w = 1.0 / sig.sqrt();
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += w * s.u[(i, k)] * s.u[(j, k)];
            }
        }
    }
    Ok(out)
}

fn cosines(cross: &ComplexMatrix, auto_a: &ComplexMatrix, auto_b: &ComplexMatrix, mode: AngleExtraction) -> Result<Vec<f64>> {
    // The closed-form correlations are real.
    debug_assert!(cross.max_abs_imag() == 0.0);
    let m = match mode {
        AngleExtraction::Raw => cross.real_part(),
        AngleExtraction::Whitened => inv_sqrt(&auto_a.real_part())?
            .matmul(&cross.real_part())?
            .matmul(&inv_sqrt(&auto_b.real_part())?)?,
    };
    Ok(svd(&m)?.sigma)
}

/// Keeps the `r` largest cosines and returns their angles, non-increasing.
fn to_angles(mut cos: Vec<f64>, r: usize) -> Result<Vec<f64>> {
    if r > cos.len() {
        return Err(Error::Config(format!("rank {r} exceeds {} available angles", cos.len())));
    }
    cos.truncate(r);
    let mut theta: Vec<f64> = cos.iter().map(|c| c.clamp(0.0, 1.0).acos()).collect();
    theta.sort_by(|a, b| b.total_cmp(a));
    Ok(theta)
}

/// Principal angles between the channel subspaces at `t₁` and `t₂`:
/// `theta_u` from `E[Hᴴ H̃]`, `theta_v` from `E[H H̃ᴴ]`.
pub fn prior_angles_from_velocity(cfg: &ChannelConfig) -> Result<PriorAngles> {
    cfg.validate()?;
    let cross = expected_grams(cfg)?;
    let auto1 = grams_between(cfg, cfg.t1, cfg.t1)?;
    let auto2 = grams_between(cfg, cfg.t2, cfg.t2)?;
    let r = cfg.rank.unwrap_or(cfg.n_users);
    let cu = cosines(&cross.col, &auto1.col, &auto2.col, cfg.extraction)?;
    let cv = cosines(&cross.row, &auto1.row, &auto2.row, cfg.extraction)?;
    Ok(PriorAngles {
        theta_u: to_angles(cu, r)?,
        theta_v: to_angles(cv, r)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ChannelConfig {
        ChannelConfig::default()
    }

    #[test]
    fn array_response_examples() {
        let mut c = cfg();
        c.n_antennas = 1;
        assert_eq!(array_response(0.3, &c), vec![Complex64::new(1.0, 0.0)]);
        let c = cfg();
        let broadside = array_response(c.orientation + PI / 2.0, &c);
        assert!(broadside.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-12));
        for th in [-3.0, -1.0, 0.0, 0.5, 2.9] {
            let a = array_response(th, &c);
            assert_eq!(a[0], Complex64::new(1.0, 0.0));
            assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn correlation_examples() {
        let c = cfg();
        let z = correlation_entry(&c, (1, 1), (3, 3), c.t1, c.t1).unwrap();
        assert_eq!(z, Complex64::new(1.0, 0.0));
        let mut s = cfg();
        s.velocities = vec![0.0; 4];
        s.scatterers = [8, 2];
        // α′ = 2/√16.
        let z = correlation_entry(&s, (2, 2), (0, 0), s.t1, s.t2).unwrap();
        assert!((z.re - 0.5).abs() < 1e-15);
        assert!(correlation_entry(&c, (4, 0), (0, 0), c.t1, c.t2).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut c = cfg();
        c.t2 = 0.01;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = cfg();
        c.velocities.pop();
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.scatterers = [0, 3];
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.velocities[0] = -1.0;
        assert!(c.validate().is_err());
        let json = serde_json::to_string(&cfg()).unwrap();
        assert_eq!(serde_json::from_str::<ChannelConfig>(&json).unwrap(), cfg());
        let partial: ChannelConfig = serde_json::from_str(r#"{"n_antennas": 8}"#).unwrap();
        assert_eq!(partial.n_antennas, 8);
        assert!(serde_json::from_str::<ChannelConfig>(r#"{"antennas": 8}"#).is_err());
    }

    #[test]
    fn static_channel_gives_zero_angles() {
        let mut c = cfg().with_uniform_velocity(0.0);
        c.t2 = c.t1;
        let a = prior_angles_from_velocity(&c).unwrap();
        assert_eq!(a.theta_u.len(), 4);
        assert!(a.max_angle() < 1e-6, "{a:?}");
        let g = expected_grams(&c).unwrap();
        for i in 0..4 {
            assert!((g.col[(i, i)].re - 1.0).abs() < 1e-14);
        }
        for p in 0..20 {
            for q in 0..20 {
                assert_eq!(g.row[(p, q)], g.row[(q, p)].conj());
            }
        }
    }

    #[test]
    fn angles_grow_with_velocity() {
        let mut last = -1.0;
        for v in [0.0, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let a = prior_angles_from_velocity(&cfg().with_uniform_velocity(v)).unwrap();
            for side in [&a.theta_u, &a.theta_v] {
                assert!(side.windows(2).all(|w| w[0] >= w[1]));
                assert!(side.iter().all(|t| (0.0..=PI / 2.0).contains(t)));
            }
            assert!(a.max_angle() >= last);
            last = a.max_angle();
        }
        assert!(last > 0.1);
    }

    #[test]
    fn raw_mode_and_rank_override() {
        let mut c = cfg();
        c.extraction = AngleExtraction::Raw;
        c.rank = Some(2);
        let a = prior_angles_from_velocity(&c).unwrap();
        assert_eq!((a.theta_u.len(), a.theta_v.len()), (2, 2));
        c.rank = Some(5);
        assert!(prior_angles_from_velocity(&c).is_err());
    }

    #[test]
    fn zero_velocity_freezes_the_channel() {
        let c = cfg().with_uniform_velocity(0.0);
        let (a, b) = draw_channel_pair(&c).unwrap();
        assert_eq!(a.h, b.h);
        let again = draw_channel(&c, c.t1).unwrap();
        assert_eq!(again.h, a.h);
        let moving = draw_channel_pair(&cfg()).unwrap();
        assert_ne!(moving.0.h, moving.1.h);
    }

    #[test]
    fn unit_average_power() {
        let c = cfg();
        let draws = 10_000;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let mut total = 0.0;
        for _ in 0..draws {
            let h = ScatterDraw::sample(&c, &mut rng).channel(&c, c.t1, c.scatterers[0]);
            total += (0..c.n_antennas).map(|m| h[(m, 0)].norm_sqr()).sum::<f64>();
        }
        let mean = total / draws as f64;
        assert!((mean - 1.0).abs() < 0.02, "E‖h‖² = {mean}");
    }

    #[test]
    fn grams_match_simulation() {
        let c = cfg();
        let g = expected_grams(&c).unwrap();
        let (col, row) = monte_carlo_grams(&c, 10_000, 17).unwrap();
        let mut outside = 0;
        let total = col.len() + row.len();
        for (k, e) in col.iter().enumerate() {
            if !e.agrees_with(g.col[(k / 4, k % 4)], 3.0) {
                outside += 1;
            }
        }
        for (k, e) in row.iter().enumerate() {
            if !e.agrees_with(g.row[(k / 20, k % 20)], 3.0) {
                outside += 1;
            }
        }
        // 416 entries at 3 SE on two components: a handful may land outside.
        assert!(outside * 100 <= 2 * total, "{outside} of {total} entries outside 3 SE");
    }
}
