//! Sample-complexity bound quantities and the bound-minimizing weight search.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::linalg::{coherence_profile, svd, DenseMatrix, SubspaceBasis};
use crate::subspaces::{PriorModel, WeightSpec};

/// Multi-weight feasibility threshold on `α₃`.
pub const ALPHA3_MAX: f64 = 0.25;
/// Single-weight feasibility threshold on `α₆`.
pub const ALPHA6_MAX: f64 = 0.125;

/// `f₁(w, θ) = √(w⁴cos²θ + sin²θ)`; exactly one at `w = 1`.
pub fn f1(w: f64, theta: f64) -> f64 {
    if w == 1.0 {
        return 1.0;
    }
    let (s, c) = theta.sin_cos();
    (w.powi(4) * c * c + s * s).sqrt()
}

/// `f₂(w, θ) = √(w²cos²θ + sin²θ)`; exactly one at `w = 1`.
pub fn f2(w: f64, theta: f64) -> f64 {
    if w == 1.0 {
        return 1.0;
    }
    let (s, c) = theta.sin_cos();
    (w * w * c * c + s * s).sqrt()
}

/// Coherence quantities entering the bound. Both default to one, which is
/// the angle-only design used before any data is seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTerms {
    /// `η(U_r V_rᵀ)`.
    pub eta_x: f64,
    /// `η(Ŭ V̆ᵀ)` for bases of `span[U_r, Ũ]` and `span[V_r, Ṽ]`.
    pub eta_breve: f64,
}

impl Default for CoherenceTerms {
    fn default() -> Self {
        Self {
            eta_x: 1.0,
            eta_breve: 1.0,
        }
    }
}

impl CoherenceTerms {
    /// Measures both coherences on an actual prior model.
    pub fn from_model(model: &PriorModel) -> Result<Self> {
        let eta_x = coherence_profile(&model.u_true, &model.v_true)?.eta;
        let ub = joint_span(&model.u_true, &model.u_prior)?;
        let vb = joint_span(&model.v_true, &model.v_prior)?;
        let eta_breve = if ub.dim() == vb.dim() {
            coherence_profile(&ub, &vb)?.eta
        } else {
            // Coherence needs a common rank; use each side at its own rank.
            let left = coherence_profile(&ub, &ub)?.eta;
            let right = coherence_profile(&vb, &vb)?.eta;
            left.max(right)
        };
        Ok(Self { eta_x, eta_breve })
    }

    fn ratio(&self) -> f64 {
        self.eta_breve / self.eta_x
    }
}

fn joint_span(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<SubspaceBasis> {
    let stacked = DenseMatrix::hstack(&[a.matrix(), b.matrix()])?;
    let s = svd(&stacked)?;
    let keep = s.sigma.iter().take_while(|&&x| x > 1e-10 * s.sigma[0]).count();
    SubspaceBasis::new(s.u.columns(0, keep.min(a.ambient())))
}

/// Everything Theorem-2-style bounds need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub theta_u: Vec<f64>,
    pub theta_v: Vec<f64>,
    pub weights: WeightSpec,
    pub coherence: CoherenceTerms,
    pub n: usize,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let r = self.weights.r();
        if self.theta_u.len() != r || self.theta_v.len() != r {
            return Err(Error::Dimension(format!(
                "{} and {} angles for {r} weights",
                self.theta_u.len(),
                self.theta_v.len()
            )));
        }
        check_angles(&self.theta_u)?;
        check_angles(&self.theta_v)?;
        self.weights.validate()?;
        if self.n < 2 {
            return Err(Error::OutOfRange(format!("n = {} is too small", self.n)));
        }
        if !(self.coherence.eta_x > 0.0 && self.coherence.eta_breve >= 0.0) {
            return Err(Error::OutOfRange("coherence terms must be positive".into()));
        }
        Ok(())
    }
}

fn check_angles(theta: &[f64]) -> Result<()> {
    match theta.iter().find(|t| !(0.0..=FRAC_PI_2).contains(*t)) {
        Some(t) => Err(Error::OutOfRange(format!("angle {t} outside [0, π/2]"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub p_lower: f64,
    pub feasible: bool,
}

fn max_over(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::NEG_INFINITY, f64::max)
}

/// `α₁, α₂, α₃` and the observation-probability bound of the multi-weight
/// theorem, up to its unspecified absolute constant.
pub fn alpha123(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let w = &inputs.weights;
    let (tu, tv) = (&inputs.theta_u, &inputs.theta_v);
    let r = w.r();
    for i in 0..r {
        if f2(w.lambda1[i], tu[i]) == 0.0 || f2(w.gamma1[i], tv[i]) == 0.0 {
            return Err(Error::DegenerateWeight(format!("f₂ vanishes at index {i}")));
        }
    }
    let ratio_sq = |ws: &[f64], th: &[f64]| max_over((0..r).map(|i| (f1(ws[i], th[i]) / f2(ws[i], th[i])).powi(2)));
    let f2_sq = |ws: &[f64], th: &[f64]| max_over((0..r).map(|i| f2(ws[i], th[i]).powi(2)));
    let cross_sq = |ws: &[f64], th: &[f64]| {
        max_over((0..r).map(|i| (f2(1.0 - ws[i] * ws[i], th[i]) / f2(ws[i], th[i])).powi(2)))
    };
    let shrink = |ws1: &[f64], ws2: &[f64], th: &[f64]| {
        let a = max_over(ws2.iter().map(|x| x - 1.0));
        let b = max_over((0..r).map(|i| ws1[i] / f2(ws1[i], th[i]) - 1.0));
        a.max(b)
    };

    let ru = ratio_sq(&w.lambda1, tu);
    let rv = ratio_sq(&w.gamma1, tv);
    let alpha1 = (ru * rv).sqrt();
    let alpha2 = (f2_sq(&w.lambda1, tu) * rv).sqrt() + (f2_sq(&w.gamma1, tv) * ru).sqrt();
    let alpha3 = cross_sq(&w.lambda1, tu).sqrt() * cross_sq(&w.gamma1, tv).sqrt()
        - shrink(&w.lambda1, &w.lambda2, tu)
        - shrink(&w.gamma1, &w.gamma2, tv);

    let n = inputs.n as f64;
    let c = &inputs.coherence;
    let p_lower = (alpha1 * n).ln().max(1.0)
        * (c.eta_x * r as f64 * n.ln() / n)
        * (alpha2 * alpha2 * (1.0 + c.ratio())).max(1.0);
    Ok(BoundReport {
        alpha1,
        alpha2,
        alpha3,
        p_lower,
        feasible: alpha3 <= ALPHA3_MAX,
    })
}

/// The single-weight quantities `α₄, α₅, α₆`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alpha456 {
    pub alpha4: f64,
    pub alpha5: f64,
    pub alpha6: f64,
}

impl Alpha456 {
    pub fn feasible(&self) -> bool {
        self.alpha6 <= ALPHA6_MAX
    }

    /// Observation-probability bound of the single-weight theorem.
    pub fn p_lower(&self, n: usize, r: usize, coherence: CoherenceTerms) -> f64 {
        let n = n as f64;
        (self.alpha4 * n).ln().max(1.0)
            * (coherence.eta_x * r as f64 * n.ln() / n)
            * (self.alpha5 * self.alpha5 * (1.0 + coherence.ratio())).max(1.0)
    }
}

/// `θ_u1`, `θ_v1` are the largest principal angles.
pub fn alpha456(theta_u1: f64, theta_v1: f64, lambda: f64, gamma: f64) -> Result<Alpha456> {
    check_angles(&[theta_u1, theta_v1])?;
    for w in [lambda, gamma] {
        if !(w > 0.0 && w <= 1.0) {
            return Err(Error::OutOfRange(format!("weight {w} outside (0, 1]")));
        }
    }
    let f2u = f2(lambda, theta_u1);
    let f2v = f2(gamma, theta_v1);
    if f2u == 0.0 || f2v == 0.0 {
        return Err(Error::DegenerateWeight("f₂ vanishes".into()));
    }
    let alpha4 = f1(gamma, theta_u1) * f1(lambda, theta_v1) / (f2u * f2v);
    let alpha5 = (f2u / f2v + f2v / f2u) * (f1(lambda, theta_u1) + f1(gamma, theta_v1));
    let alpha6 = 1.5
        * ((1.0 - lambda * lambda).sqrt() * theta_u1.sin() / f2u
            + (1.0 - gamma * gamma).sqrt() * theta_v1.sin() / f2v);
    Ok(Alpha456 {
        alpha4,
        alpha5,
        alpha6,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Multi,
    Single,
    None,
}

impl std::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(Self::Multi),
            "single" => Ok(Self::Single),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown weight mode `{other}`"))),
        }
    }
}

/// Search grid: `points` values evenly spaced on `[lo, 1]`, refined once at
/// `refine`× resolution around the incumbent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightGrid {
    pub points: usize,
    pub lo: f64,
    pub refine: usize,
}

impl Default for WeightGrid {
    fn default() -> Self {
        Self {
            points: 21,
            lo: 0.01,
            refine: 10,
        }
    }
}

impl WeightGrid {
    fn validate(&self) -> Result<()> {
        if self.points < 2 || !(self.lo > 0.0 && self.lo < 1.0) || self.refine == 0 {
            return Err(Error::Config(format!("invalid weight grid {self:?}")));
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        (1.0 - self.lo) / (self.points - 1) as f64
    }

    pub fn coarse(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.points)
            .map(|k| if k + 1 == self.points { 1.0 } else { self.lo + k as f64 * h })
            .collect()
    }

    /// `±` one coarse step around `center`, at the finer spacing.
    pub fn fine(&self, center: f64) -> Vec<f64> {
        let h = self.step() / self.refine as f64;
        let k = self.refine as i64;
        let mut v: Vec<f64> = (-k..=k)
            .map(|j| (center + j as f64 * h).clamp(self.lo, 1.0))
            .collect();
        v.dedup();
        v
    }
}

/// Result of a weight search, in the JSON shape the CLI emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub mode: SearchMode,
    pub theta_u: Vec<f64>,
    pub theta_v: Vec<f64>,
    pub weights: WeightSpec,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Only defined for uniform weights.
    pub alpha4: Option<f64>,
    pub alpha5: Option<f64>,
    pub alpha6: Option<f64>,
    pub p_lower: f64,
    pub feasible: bool,
}

struct Candidate {
    weights: WeightSpec,
    bound: BoundReport,
    feasible: bool,
}

impl Candidate {
    fn tie_key(&self) -> f64 {
        let w = &self.weights;
        w.lambda1.iter().sum::<f64>() + w.gamma1.iter().sum::<f64>()
            - w.lambda2.iter().sum::<f64>()
            - w.gamma2.iter().sum::<f64>()
    }

    fn flat(&self) -> Vec<f64> {
        [self.weights.lambda(), self.weights.gamma()].concat()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Total order used by the search: feasible first, then smaller bound, then
/// weaker weighting of prior directions that are not matched to the truth,
/// then the lexicographically smaller weight vector.
fn better(a: &Candidate, b: &Candidate) -> Ordering {
    if a.feasible != b.feasible {
        return if a.feasible { Ordering::Less } else { Ordering::Greater };
    }
    if !close(a.bound.p_lower, b.bound.p_lower) {
        return a.bound.p_lower.total_cmp(&b.bound.p_lower);
    }
    let (ta, tb) = (a.tie_key(), b.tie_key());
    if !close(ta, tb) {
        return ta.total_cmp(&tb);
    }
    for (x, y) in a.flat().iter().zip(b.flat()) {
        match x.total_cmp(&y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

struct Problem<'a> {
    theta_u: &'a [f64],
    theta_v: &'a [f64],
    r_prime: usize,
    coherence: CoherenceTerms,
    n: usize,
}

impl Problem<'_> {
    fn evaluate(&self, weights: WeightSpec, single: bool) -> Candidate {
        let inputs = BoundInputs {
            theta_u: self.theta_u.to_vec(),
            theta_v: self.theta_v.to_vec(),
            weights,
            coherence: self.coherence,
            n: self.n,
        };
        let bound = alpha123(&inputs).expect("search only visits valid weights");
        let mut feasible = bound.feasible;
        if single {
            let a = alpha456(
                max_over(self.theta_u.iter().copied()),
                max_over(self.theta_v.iter().copied()),
                inputs.weights.lambda1[0],
                inputs.weights.gamma1[0],
            )
            .expect("search only visits valid weights");
            feasible &= a.feasible();
        }
        Candidate {
            weights: inputs.weights,
            bound,
            feasible,
        }
    }

    fn r(&self) -> usize {
        self.theta_u.len()
    }

    fn single_search(&self, grid: &WeightGrid) -> Candidate {
        let (r, rp) = (self.r(), self.r_prime);
        let scan = |lams: &[f64], gams: &[f64], best: &mut Candidate| {
            for &l in lams {
                for &g in gams {
                    let c = self.evaluate(WeightSpec::uniform(r, rp, l, g), true);
                    if better(&c, best) == Ordering::Less {
                        *best = c;
                    }
                }
            }
        };
        let mut best = self.evaluate(WeightSpec::ones(r, rp), true);
        let coarse = grid.coarse();
        scan(&coarse, &coarse, &mut best);
        let (l0, g0) = (best.weights.lambda1[0], best.weights.gamma1[0]);
        scan(&grid.fine(l0), &grid.fine(g0), &mut best);
        best
    }

    fn coordinate_descent(&self, start: Candidate, grid: &WeightGrid) -> Candidate {
        let mut best = start;
        let coords = 2 * self.r_prime;
        let coarse = grid.coarse();
        let run = |best: &mut Candidate, values: &dyn Fn(usize, &WeightSpec) -> Vec<f64>| {
            for _pass in 0..100 {
                let mut improved = false;
                for c in 0..coords {
                    for v in values(c, &best.weights) {
                        let mut w = best.weights.clone();
                        *coord_mut(&mut w, c) = v;
                        let cand = self.evaluate(w, false);
                        if better(&cand, best) == Ordering::Less {
                            *best = cand;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
        };
        run(&mut best, &|_, _| coarse.clone());
        let anchor = best.weights.clone();
        run(&mut best, &|c, _| grid.fine(coord(&anchor, c)));
        best
    }
}

fn coord(w: &WeightSpec, c: usize) -> f64 {
    let r = w.r();
    let extra = w.lambda2.len();
    if c < r {
        w.lambda1[c]
    } else if c < r + extra {
        w.lambda2[c - r]
    } else if c < 2 * r + extra {
        w.gamma1[c - r - extra]
    } else {
        w.gamma2[c - 2 * r - extra]
    }
}

fn coord_mut(w: &mut WeightSpec, c: usize) -> &mut f64 {
    let r = w.r();
    let extra = w.lambda2.len();
    if c < r {
        &mut w.lambda1[c]
    } else if c < r + extra {
        &mut w.lambda2[c - r]
    } else if c < 2 * r + extra {
        &mut w.gamma1[c - r - extra]
    } else {
        &mut w.gamma2[c - 2 * r - extra]
    }
}

/// Searches for the weights minimizing the bound among feasible points.
///
/// `single` restricts to `Λ₁ = λI`, `Γ₁ = γI` (feasibility additionally
/// requires `α₆ ≤ 1/8`); `multi` runs coordinate descent from the single
/// optimum, so its bound never exceeds it. If no feasible point is found the
/// all-ones weights are returned with `feasible = false`.
pub fn optimize_weights(
    theta_u: &[f64],
    theta_v: &[f64],
    r_prime: usize,
    n: usize,
    coherence: CoherenceTerms,
    grid: &WeightGrid,
    mode: SearchMode,
) -> Result<WeightReport> {
    grid.validate()?;
    let r = theta_u.len();
    if r == 0 || r_prime < r {
        return Err(Error::Dimension(format!("r = {r}, r′ = {r_prime}")));
    }
    let ones = BoundInputs {
        theta_u: theta_u.to_vec(),
        theta_v: theta_v.to_vec(),
        weights: WeightSpec::ones(r, r_prime),
        coherence,
        n,
    };
    ones.validate()?;
    let problem = Problem {
        theta_u,
        theta_v,
        r_prime,
        coherence,
        n,
    };
    let best = match mode {
        SearchMode::None => problem.evaluate(WeightSpec::ones(r, r_prime), false),
        SearchMode::Single => problem.single_search(grid),
        SearchMode::Multi => {
            let seed = problem.single_search(grid);
            let seed = if seed.feasible {
                seed
            } else {
                problem.evaluate(WeightSpec::ones(r, r_prime), false)
            };
            problem.coordinate_descent(seed, grid)
        }
    };
    let best = if best.feasible {
        best
    } else {
        let mut fallback = problem.evaluate(WeightSpec::ones(r, r_prime), mode == SearchMode::Single);
        fallback.feasible = false;
        fallback
    };
    report(mode, theta_u, theta_v, best)
}

fn report(mode: SearchMode, theta_u: &[f64], theta_v: &[f64], best: Candidate) -> Result<WeightReport> {
    let w = &best.weights;
    let uniform = w.lambda1.windows(2).all(|p| p[0] == p[1])
        && w.gamma1.windows(2).all(|p| p[0] == p[1])
        && w.lambda2.iter().chain(&w.gamma2).all(|&x| x == 1.0);
    let a456 = if uniform {
        Some(alpha456(
            max_over(theta_u.iter().copied()),
            max_over(theta_v.iter().copied()),
            w.lambda1[0],
            w.gamma1[0],
        )?)
    } else {
        None
    };
    Ok(WeightReport {
        mode,
        theta_u: theta_u.to_vec(),
        theta_v: theta_v.to_vec(),
        weights: best.weights.clone(),
        alpha1: best.bound.alpha1,
        alpha2: best.bound.alpha2,
        alpha3: best.bound.alpha3,
        alpha4: a456.map(|a| a.alpha4),
        alpha5: a456.map(|a| a.alpha5),
        alpha6: a456.map(|a| a.alpha6),
        p_lower: best.bound.p_lower,
        feasible: best.feasible,
    })
}
