//! Time-varying multipath channel of a ULA base station and its
//! Monte-Carlo statistics.

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ChannelConfig;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn col(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn real_part(&self) -> crate::linalg::DenseMatrix {
        crate::linalg::DenseMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].re)
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.im.abs()))
    }

    pub fn conj_transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

/// Random path parameters for one realization.
///
/// Angles are per user and path (`K x S`, row-major by user); the phase
/// `β_i` of path `i` is common to all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterDraw {
    pub paths: usize,
    pub aoa: Vec<f64>,
    pub aod: Vec<f64>,
    pub phase: Vec<f64>,
}

impl ScatterDraw {
    /// Draws `max(s(t₁), s(t₂))` paths, all angles uniform on `[−π, π]`.
    pub fn sample<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Self {
        let paths = cfg.scatterers[0].max(cfg.scatterers[1]);
        let phase = (0..paths).map(|_| rng.random_range(-PI..PI)).collect();
        let mut aoa = Vec::with_capacity(cfg.n_users * paths);
        let mut aod = Vec::with_capacity(cfg.n_users * paths);
        for _ in 0..cfg.n_users * paths {
            aoa.push(rng.random_range(-PI..PI));
            aod.push(rng.random_range(-PI..PI));
        }
        Self { paths, aoa, aod, phase }
    }

    /// Entry `m` of `h_k(t)` using the first `s` paths.
    fn entry(&self, cfg: &ChannelConfig, k: usize, t: f64, s: usize, m: usize) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..s {
            let idx = k * self.paths + i;
            let doppler = cfg.velocities[k] * self.aoa[idx].cos() / cfg.wavelength;
            let spatial = 2.0 * PI * cfg.spacing * (cfg.orientation - self.aod[idx]).cos() * m as f64 / cfg.wavelength;
            acc += Complex64::from_polar(1.0, 2.0 * PI * doppler * t + self.phase[i] + spatial);
        }
        acc / ((cfg.n_antennas * s) as f64).sqrt()
    }

    /// `H(t) = [h_1(t), …, h_K(t)]` with the first `s` paths.
    pub fn channel(&self, cfg: &ChannelConfig, t: f64, s: usize) -> ComplexMatrix {
        let mut h = ComplexMatrix::zeros(cfg.n_antennas, cfg.n_users);
        for k in 0..cfg.n_users {
            for m in 0..cfg.n_antennas {
                h[(m, k)] = self.entry(cfg, k, t, s, m);
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSnapshot {
    /// `N x K`, column `k` is `h_k(t)`.
    pub h: ComplexMatrix,
    pub t: f64,
    pub scatterers: usize,
    pub draw: ScatterDraw,
}

/// `a(θ)_m = exp(j 2π d cos(η − θ) m / λ_c)` for `m = 0..N`.
pub fn array_response(theta: f64, cfg: &ChannelConfig) -> Vec<Complex64> {
    let step = 2.0 * PI * cfg.spacing * (cfg.orientation - theta).cos() / cfg.wavelength;
    (0..cfg.n_antennas)
        .map(|m| Complex64::from_polar(1.0, step * m as f64))
        .collect()
}

/// One realization at time `t`, seeded by `cfg.seed`.
pub fn draw_channel(cfg: &ChannelConfig, t: f64) -> Result<ChannelSnapshot> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = ScatterDraw::sample(cfg, &mut rng);
    let s = cfg.scatterers_at(t);
    Ok(ChannelSnapshot {
        h: draw.channel(cfg, t, s),
        t,
        scatterers: s,
        draw,
    })
}

/// `(H, H̃)` at `t₁` and `t₂` from the same scatterer draw.
pub fn draw_channel_pair(cfg: &ChannelConfig) -> Result<(ChannelSnapshot, ChannelSnapshot)> {
    let a = draw_channel(cfg, cfg.t1)?;
    let s2 = cfg.scatterers[1];
    let b = ChannelSnapshot {
        h: a.draw.channel(cfg, cfg.t2, s2),
        t: cfg.t2,
        scatterers: s2,
        draw: a.draw.clone(),
    };
    Ok((a, b))
}

/// Sample mean of a complex statistic with per-component standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: Complex64,
    pub se_re: f64,
    pub se_im: f64,
    pub draws: usize,
}

impl McEstimate {
    /// Both components within `k` standard errors of `target`.
    pub fn agrees_with(&self, target: Complex64, k: f64) -> bool {
        (self.mean.re - target.re).abs() <= k * self.se_re && (self.mean.im - target.im).abs() <= k * self.se_im
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: usize,
    sum: Complex64,
    sq_re: f64,
    sq_im: f64,
}

impl Moments {
    fn push(&mut self, z: Complex64) {
        self.n += 1;
        self.sum += z;
        self.sq_re += z.re * z.re;
        self.sq_im += z.im * z.im;
    }

    fn merge(mut self, o: &Moments) -> Self {
        self.n += o.n;
        self.sum += o.sum;
        self.sq_re += o.sq_re;
        self.sq_im += o.sq_im;
        self
    }

    fn estimate(&self) -> McEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var_re = ((self.sq_re - n * mean.re * mean.re) / (n - 1.0)).max(0.0);
        let var_im = ((self.sq_im - n * mean.im * mean.im) / (n - 1.0)).max(0.0);
        McEstimate {
            mean,
            se_re: (var_re / n).sqrt(),
            se_im: (var_im / n).sqrt(),
            draws: self.n,
        }
    }
}

const CHUNK: usize = 1024;

/// Runs `f` on `draws` independent scatterer draws in fixed-size chunks.
/// Chunk `c` uses seed `derive_seed([seed, c])`, so results do not depend
/// on the thread count.
fn per_draw<F>(cfg: &ChannelConfig, draws: usize, seed: u64, width: usize, f: F) -> Result<Vec<Moments>>
where
    F: Fn(&ScatterDraw, &mut [Complex64]) + Sync,
{
    cfg.validate()?;
    if draws < 2 {
        return Err(Error::Config("Monte-Carlo needs at least 2 draws".into()));
    }
    let chunks = draws.div_ceil(CHUNK);
    let partial: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, c as u64]));
            let count = CHUNK.min(draws - c * CHUNK);
            let mut acc = vec![Moments::default(); width];
            let mut buf = vec![Complex64::new(0.0, 0.0); width];
            for _ in 0..count {
                let draw = ScatterDraw::sample(cfg, &mut rng);
                f(&draw, &mut buf);
                for (m, z) in acc.iter_mut().zip(&buf) {
                    m.push(*z);
                }
            }
            acc
        })
        .collect();
    Ok(partial.iter().fold(vec![Moments::default(); width], |acc, part| {
        acc.iter().zip(part).map(|(a, b)| a.merge(b)).collect()
    }))
}

/// Monte-Carlo estimate of `N · E[h_k(t₁)_p · conj(h_l(t₂)_q)]`, the
/// quantity the closed-form correlation describes.
pub fn monte_carlo_correlation(
    cfg: &ChannelConfig,
    (k, l): (usize, usize),
    (p, q): (usize, usize),
    draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    cfg.check_indices(k, l, p, q)?;
    let (s1, s2) = (cfg.scatterers[0], cfg.scatterers[1]);
    let n = cfg.n_antennas as f64;
    let m = per_draw(cfg, draws, seed, 1, |d, out| {
        out[0] = d.entry(cfg, k, cfg.t1, s1, p) * d.entry(cfg, l, cfg.t2, s2, q).conj() * n;
    })?;
    Ok(m[0].estimate())
}

/// Entrywise Monte-Carlo estimates of `E[Hᴴ H̃]` (`K x K`) and
/// `E[H H̃ᴴ]` (`N x N`).
pub fn monte_carlo_grams(cfg: &ChannelConfig, draws: usize, seed: u64) -> Result<(Vec<McEstimate>, Vec<McEstimate>)> {
    let (nk, nn) = (cfg.n_users, cfg.n_antennas);
    let (s1, s2) = (cfg.scatterers[0], cfg.scatterers[1]);
    let m = per_draw(cfg, draws, seed, nk * nk + nn * nn, |d, out| {
        let h1 = d.channel(cfg, cfg.t1, s1);
        let h2 = d.channel(cfg, cfg.t2, s2);
        for a in 0..nk {
            for b in 0..nk {
                out[a * nk + b] = (0..nn).map(|i| h1[(i, a)].conj() * h2[(i, b)]).sum();
            }
        }
        for p in 0..nn {
            for q in 0..nn {
                out[nk * nk + p * nn + q] = (0..nk).map(|k| h1[(p, k)] * h2[(q, k)].conj()).sum();
            }
        }
    })?;
    let est: Vec<McEstimate> = m.iter().map(Moments::estimate).collect();
    let (col, row) = est.split_at(nk * nk);
    Ok((col.to_vec(), row.to_vec()))
}
