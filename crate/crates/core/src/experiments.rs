//! Phase-transition experiments: success rate of standard, single-weight
//! and multi-weight completion as the sampling probability grows.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdd::{prior_angles_from_velocity, ChannelConfig};
use crate::linalg::{truncated_svd, DenseMatrix, SubspaceBasis};
use crate::sampling::{apply_r_omega, draw_mask, Probability};
use crate::seed::derive_seed;
use crate::solver::{nre, solve_weighted, SolveOptions};
use crate::subspaces::{align_prior, build_prior_model, build_q, PriorModel, QMatrix, WeightSpec};
use crate::weights::{optimize_weights, CoherenceTerms, SearchMode, WeightGrid, WeightReport};

/// NRE below this counts as exact recovery.
pub const SUCCESS_NRE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Standard,
    Single,
    Multi,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Standard, Method::Single, Method::Multi];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Single => "single",
            Method::Multi => "multi",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Method::Standard),
            "single" => Ok(Method::Single),
            "multi" => Ok(Method::Multi),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Angle sets of the three figures. `fig1`–`fig3` are the good, mixed and
/// poor priors described for each figure; the `-caption` variants are the
/// sets printed under the figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnglePreset {
    #[serde(rename = "fig1")]
    Fig1,
    #[serde(rename = "fig2")]
    Fig2,
    #[serde(rename = "fig3")]
    Fig3,
    #[serde(rename = "fig1-caption")]
    Fig1Caption,
    #[serde(rename = "fig2-caption")]
    Fig2Caption,
    #[serde(rename = "fig3-caption")]
    Fig3Caption,
}

const GOOD: ([f64; 4], [f64; 4]) = ([1.32, 1.72, 2.11, 3.07], [1.08, 1.70, 2.37, 2.73]);
const MIXED: ([f64; 4], [f64; 4]) = ([2.01, 8.28, 15.55, 20.26], [2.09, 10.5, 19.45, 22.00]);
const POOR: ([f64; 4], [f64; 4]) = ([40.87, 49.63, 50.55, 69.39], [28.76, 37.83, 40.52, 63.65]);

impl AnglePreset {
    pub const ALL: [AnglePreset; 6] = [
        AnglePreset::Fig1,
        AnglePreset::Fig2,
        AnglePreset::Fig3,
        AnglePreset::Fig1Caption,
        AnglePreset::Fig2Caption,
        AnglePreset::Fig3Caption,
    ];

    /// `(θ_u, θ_v)` in degrees.
    pub fn degrees(self) -> (Vec<f64>, Vec<f64>) {
        let (u, v) = match self {
            AnglePreset::Fig1 | AnglePreset::Fig2Caption | AnglePreset::Fig3Caption => GOOD,
            AnglePreset::Fig2 | AnglePreset::Fig1Caption => MIXED,
            AnglePreset::Fig3 => POOR,
        };
        (u.to_vec(), v.to_vec())
    }

    pub fn name(self) -> &'static str {
        match self {
            AnglePreset::Fig1 => "fig1",
            AnglePreset::Fig2 => "fig2",
            AnglePreset::Fig3 => "fig3",
            AnglePreset::Fig1Caption => "fig1-caption",
            AnglePreset::Fig2Caption => "fig2-caption",
            AnglePreset::Fig3Caption => "fig3-caption",
        }
    }
}

/// `0.10, 0.15, …, 0.90`.
pub fn default_p_sweep() -> Vec<f64> {
    (0..17).map(|k| (10 + 5 * k) as f64 / 100.0).collect()
}

/// Solver settings for sweeps: residuals at 1e-6 put exact recoveries near
/// NRE 1e-6, well inside the success threshold.
pub fn sweep_solver_options() -> SolveOptions {
    SolveOptions {
        tol_rel: 1e-6,
        ..SolveOptions::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub n: usize,
    pub r: usize,
    pub r_prime: usize,
    /// Named angle set; wins over `theta_u_deg`/`theta_v_deg`.
    pub preset: Option<AnglePreset>,
    pub theta_u_deg: Option<Vec<f64>>,
    pub theta_v_deg: Option<Vec<f64>>,
    /// Entry variance of the perturbation `N` when priors come from
    /// `X + N` (no angles given).
    pub perturbation_variance: f64,
    pub p_values: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    /// Standard deviation of additive Gaussian noise on every entry; the
    /// solver's data-fit radius is the realized noise norm on `Ω`.
    pub noise_std: f64,
    pub seed: u64,
    pub solver: SolveOptions,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    /// Store per-trial wall time (makes JSON output run-dependent).
    pub record_timing: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            n: 20,
            r: 4,
            r_prime: 8,
            preset: None,
            theta_u_deg: None,
            theta_v_deg: None,
            perturbation_variance: 1e-4,
            p_values: default_p_sweep(),
            trials: 50,
            methods: Method::ALL.to_vec(),
            noise_std: 0.0,
            seed: 0,
            solver: sweep_solver_options(),
            workers: None,
            output: None,
            record_timing: false,
        }
    }
}

impl ExperimentPlan {
    pub fn from_preset(preset: AnglePreset) -> Self {
        Self {
            preset: Some(preset),
            ..Self::default()
        }
    }

    /// Prescribed angles in degrees, if the plan fixes them.
    pub fn angles_deg(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match (self.preset, &self.theta_u_deg, &self.theta_v_deg) {
            (Some(p), _, _) => Some(p.degrees()),
            (None, Some(u), Some(v)) => Some((u.clone(), v.clone())),
            _ => None,
        }
    }

    pub fn angles_rad(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.angles_deg().map(|(u, v)| {
            (
                u.iter().map(|d| d.to_radians()).collect(),
                v.iter().map(|d| d.to_radians()).collect(),
            )
        })
    }

    /// Base name for output files: the preset name, else `phase`.
    pub fn output_stem(&self) -> &'static str {
        self.preset.map_or("phase", AnglePreset::name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.r == 0 || self.r > self.r_prime || self.r + self.r_prime > self.n {
            return bad(format!("need 1 ≤ r ≤ r′ and r + r′ ≤ n (r = {}, r′ = {}, n = {})", self.r, self.r_prime, self.n));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if let Some(p) = self.p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return bad(format!("sampling probability {p} outside (0, 1]"));
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.theta_u_deg.is_some() != self.theta_v_deg.is_some() {
            return bad("theta_u_deg and theta_v_deg must be given together".into());
        }
        if let Some((u, v)) = self.angles_deg() {
            if u.len() != self.r || v.len() != self.r {
                return bad(format!("{} / {} angles for r = {}", u.len(), v.len(), self.r));
            }
            if let Some(t) = u.iter().chain(&v).find(|t| !(0.0..=90.0).contains(*t)) {
                return bad(format!("angle {t}° outside [0, 90]"));
            }
        }
        if !(self.perturbation_variance >= 0.0 && self.perturbation_variance.is_finite()) {
            return bad("perturbation variance must be finite and ≥ 0".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and ≥ 0".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        self.solver.validate()
    }
}

/// Ground truth and prior for one trial.
///
/// With prescribed angles the bases come from [`build_prior_model`] and
/// `X = U_r G V_rᵀ` with a Gaussian `r x r` core `G`. Otherwise `X` is a
/// product of two `n x r` Gaussian factors and the priors are the leading
/// `r′` singular subspaces of `X + N`.
pub fn generate_instance(plan: &ExperimentPlan, trial_seed: u64) -> Result<(DenseMatrix, PriorModel)> {
    plan.validate()?;
    let (n, r, rp) = (plan.n, plan.r, plan.r_prime);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    match plan.angles_rad() {
        Some((tu, tv)) => {
            let model = build_prior_model(&tu, &tv, rp, n, derive_seed(&[trial_seed, 1]))?;
            let core = DenseMatrix::gaussian(r, r, &mut rng);
            let x = model.u_true.matrix().matmul(&core)?.matmul(&model.v_true.matrix().transpose())?;
            Ok((x, model))
        }
        None => {
            let a = DenseMatrix::gaussian(n, r, &mut rng);
            let b = DenseMatrix::gaussian(n, r, &mut rng);
            let x = a.matmul(&b.transpose())?;
            let noise = DenseMatrix::gaussian(n, n, &mut rng).scale(plan.perturbation_variance.sqrt());
            let (truth, _) = truncated_svd(&x, r)?;
            let (prior, _) = truncated_svd(&(&x + &noise), rp)?;
            let model = PriorModel::new(
                SubspaceBasis::new(truth.u)?,
                SubspaceBasis::new(truth.v)?,
                SubspaceBasis::new(prior.u)?,
                SubspaceBasis::new(prior.v)?,
            )?;
            Ok((x, model))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub p: f64,
    pub trial: usize,
    pub nre: f64,
    pub success: bool,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub p: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_nre: f64,
    pub mean_iters: f64,
}

/// Weights used by the weighted methods when they are shared by all
/// trials (prescribed angles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodWeights {
    pub single: WeightReport,
    pub multi: WeightReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub plan: ExperimentPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<MethodWeights>,
    pub aggregates: Vec<Aggregate>,
    pub records: Vec<TrialRecord>,
}

impl ResultTable {
    pub fn aggregate(&self, method: Method, p: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.p == p)
    }

    /// Success rates of `method` in plan order of `p`.
    pub fn curve(&self, method: Method) -> Vec<(f64, f64)> {
        self.aggregates
            .iter()
            .filter(|a| a.method == method)
            .map(|a| (a.p, a.success_rate))
            .collect()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Groups records by `(method, p)` in the plan's order.
pub fn aggregate(plan: &ExperimentPlan, records: &[TrialRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(usize, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for rec in records {
        let mi = plan.methods.iter().position(|m| *m == rec.method);
        let pi = plan.p_values.iter().position(|p| *p == rec.p);
        if let (Some(mi), Some(pi)) = (mi, pi) {
            groups.entry((mi, pi)).or_default().push(rec);
        }
    }
    groups
        .into_iter()
        .map(|((mi, pi), recs)| {
            let trials = recs.len();
            let successes = recs.iter().filter(|r| r.success).count();
            Aggregate {
                method: plan.methods[mi],
                p: plan.p_values[pi],
                trials,
                successes,
                success_rate: successes as f64 / trials as f64,
                median_nre: median(recs.iter().map(|r| r.nre).collect()),
                mean_iters: recs.iter().map(|r| r.iterations as f64).sum::<f64>() / trials as f64,
            }
        })
        .collect()
}

/// Per-trial problem data shared by every method and `p`.
struct Prepared {
    x: DenseMatrix,
    single: (QMatrix, QMatrix),
    multi: (QMatrix, QMatrix),
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn weight_reports(theta_u: &[f64], theta_v: &[f64], plan: &ExperimentPlan) -> Result<MethodWeights> {
    let grid = WeightGrid::default();
    let coh = CoherenceTerms::default();
    Ok(MethodWeights {
        single: optimize_weights(theta_u, theta_v, plan.r_prime, plan.n, coh, &grid, SearchMode::Single)?,
        multi: optimize_weights(theta_u, theta_v, plan.r_prime, plan.n, coh, &grid, SearchMode::Multi)?,
    })
}

fn weight_qs(model: &PriorModel, w: &WeightSpec) -> Result<(QMatrix, QMatrix)> {
    let u = SubspaceBasis::new(align_prior(&model.u_true, &model.u_prior)?.prior)?;
    let v = SubspaceBasis::new(align_prior(&model.v_true, &model.v_prior)?.prior)?;
    Ok((build_q(&u, &w.lambda())?, build_q(&v, &w.gamma())?))
}

fn prepare(plan: &ExperimentPlan, trial: usize, shared: Option<&MethodWeights>) -> Result<Prepared> {
    let (x, model) = generate_instance(plan, derive_seed(&[plan.seed, trial as u64]))?;
    let owned;
    let weights = match shared {
        Some(w) => w,
        None => {
            owned = weight_reports(&model.theta_u, &model.theta_v, plan)?;
            &owned
        }
    };
    Ok(Prepared {
        single: weight_qs(&model, &weights.single.weights)?,
        multi: weight_qs(&model, &weights.multi.weights)?,
        x,
    })
}

fn run_trial(plan: &ExperimentPlan, prep: &Prepared, method: Method, p: f64, trial: usize) -> Result<TrialRecord> {
    let start = Instant::now();
    let n = plan.n;
    let p_key = p.to_bits();
    let mask = draw_mask(n, &Probability::Uniform(p), derive_seed(&[plan.seed, p_key, trial as u64]))?;
    let mut opts = plan.solver;
    let y = if plan.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[plan.seed, p_key, trial as u64, 1]));
        let noise = DenseMatrix::gaussian(n, n, &mut rng).scale(plan.noise_std);
        let y = apply_r_omega(&(&prep.x + &noise), &mask)?;
        opts.noise_bound = (&y - &apply_r_omega(&prep.x, &mask)?).frobenius_norm();
        y
    } else {
        apply_r_omega(&prep.x, &mask)?
    };
    let identity = QMatrix::identity(n);
    let (qu, qv) = match method {
        Method::Standard => (&identity, &identity),
        Method::Single => (&prep.single.0, &prep.single.1),
        Method::Multi => (&prep.multi.0, &prep.multi.1),
    };
    let rep = solve_weighted(&y, &mask, qu, qv, &opts)?;
    let err = nre(&rep.x_hat, &prep.x)?;
    Ok(TrialRecord {
        method,
        p,
        trial,
        nre: err,
        success: err < SUCCESS_NRE,
        iterations: rep.iters,
        converged: rep.converged,
        wall_time_s: plan.record_timing.then(|| start.elapsed().as_secs_f64()),
    })
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {k} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs every `(method, p, trial)` of the plan.
///
/// Masks depend on `(seed, p, trial)` and instances on `(seed, trial)`, so
/// all methods see the same data and the output does not depend on the
/// worker count. Solver non-convergence is recorded, not raised.
pub fn run_phase_transition(plan: &ExperimentPlan) -> Result<ResultTable> {
    plan.validate()?;
    // Aligned priors list angles largest first; weights follow that order.
    let shared = match plan.angles_rad() {
        Some((tu, tv)) => Some(weight_reports(&sorted_desc(tu), &sorted_desc(tv), plan)?),
        None => None,
    };
    let needs_weights = plan.methods.iter().any(|m| *m != Method::Standard);
    let records = with_workers(plan.workers, || -> Result<Vec<TrialRecord>> {
        let prepared: Vec<Prepared> = (0..plan.trials)
            .into_par_iter()
            .map(|t| {
                if needs_weights {
                    prepare(plan, t, shared.as_ref())
                } else {
                    let (x, _) = generate_instance(plan, derive_seed(&[plan.seed, t as u64]))?;
                    let id = QMatrix::identity(plan.n);
                    Ok(Prepared {
                        x,
                        single: (id.clone(), id.clone()),
                        multi: (id.clone(), id),
                    })
                }
            })
            .collect::<Result<_>>()?;
        let tasks: Vec<(Method, f64, usize)> = plan
            .methods
            .iter()
            .flat_map(|&m| plan.p_values.iter().flat_map(move |&p| (0..plan.trials).map(move |t| (m, p, t))))
            .collect();
        tasks
            .par_iter()
            .map(|&(m, p, t)| run_trial(plan, &prepared[t], m, p, t))
            .collect()
    })??;
    Ok(ResultTable {
        aggregates: aggregate(plan, &records),
        plan: plan.clone(),
        weights: shared,
        records,
    })
}

/// Velocity → angle → weight → success-rate chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FddResult {
    pub channel: ChannelConfig,
    pub theta_u_deg: Vec<f64>,
    pub theta_v_deg: Vec<f64>,
    pub table: ResultTable,
}

/// Extracts angles from the channel model and runs the plan on synthetic
/// instances with exactly those angles.
pub fn run_fdd_pipeline(channel: &ChannelConfig, plan: &ExperimentPlan) -> Result<FddResult> {
    let angles = prior_angles_from_velocity(channel)?;
    let mut plan = plan.clone();
    if angles.theta_u.len() != plan.r {
        return Err(Error::Config(format!(
            "channel yields {} angles but the plan has r = {}",
            angles.theta_u.len(),
            plan.r
        )));
    }
    plan.preset = None;
    plan.theta_u_deg = Some(angles.theta_u_deg());
    plan.theta_v_deg = Some(angles.theta_v_deg());
    let table = run_phase_transition(&plan)?;
    Ok(FddResult {
        channel: channel.clone(),
        theta_u_deg: angles.theta_u_deg(),
        theta_v_deg: angles.theta_v_deg(),
        table,
    })
}

pub fn write_csv(aggregates: &[Aggregate], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let map_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["method", "p", "trials", "successes", "success_rate", "median_nre", "mean_iters"])
        .map_err(map_err)?;
    for a in aggregates {
        w.serialize(a).map_err(map_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<Aggregate>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<Aggregate>, _>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir` and returns both paths.
pub fn emit(table: &ResultTable, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = table.plan.output_stem();
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_csv(&table.aggregates, &csv_path)?;
    write_json(table, &json_path)?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::principal_angles;

    fn small(preset: Option<AnglePreset>) -> ExperimentPlan {
        ExperimentPlan {
            n: 10,
            r: 2,
            r_prime: 4,
            preset: None,
            theta_u_deg: preset.map(|_| vec![3.0, 1.0]),
            theta_v_deg: preset.map(|_| vec![2.0, 1.5]),
            p_values: vec![0.05, 1.0],
            trials: 3,
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn presets_resolve() {
        assert_eq!(AnglePreset::Fig3.degrees().0, vec![40.87, 49.63, 50.55, 69.39]);
        assert_eq!(AnglePreset::Fig1.degrees(), AnglePreset::Fig2Caption.degrees());
        assert_eq!(AnglePreset::Fig2.degrees(), AnglePreset::Fig1Caption.degrees());
        let plan: ExperimentPlan = serde_json::from_str(r#"{"preset": "fig2-caption"}"#).unwrap();
        assert_eq!(plan.preset, Some(AnglePreset::Fig2Caption));
        assert_eq!(plan.output_stem(), "fig2-caption");
        let names: Vec<&str> = [AnglePreset::Fig1, AnglePreset::Fig2, AnglePreset::Fig3]
            .iter()
            .map(|p| ExperimentPlan::from_preset(*p).output_stem())
            .collect();
        assert_eq!(names, ["fig1", "fig2", "fig3"]);
    }

    #[test]
    fn default_sweep() {
        let p = default_p_sweep();
        assert_eq!(p.len(), 17);
        assert_eq!((p[0], p[16]), (0.1, 0.9));
        assert_eq!(p[3], 0.25);
    }

    #[test]
    fn plan_validation() {
        assert!(ExperimentPlan::default().validate().is_ok());
        for bad in [
            ExperimentPlan { trials: 0, ..Default::default() },
            ExperimentPlan { p_values: vec![0.0], ..Default::default() },
            ExperimentPlan { r: 9, ..Default::default() },
            ExperimentPlan { methods: vec![], ..Default::default() },
            ExperimentPlan { theta_u_deg: Some(vec![1.0; 4]), ..Default::default() },
            ExperimentPlan {
                theta_u_deg: Some(vec![1.0; 3]),
                theta_v_deg: Some(vec![1.0; 3]),
                ..Default::default()
            },
            ExperimentPlan { workers: Some(0), ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        assert!(serde_json::from_str::<ExperimentPlan>(r#"{"trails": 3}"#).is_err());
        assert!(serde_json::from_str::<ExperimentPlan>(r#"{"methods": ["fancy"]}"#).is_err());
        assert_eq!("multi".parse::<Method>().unwrap(), Method::Multi);
    }

    #[test]
    fn prescribed_angles_are_reproduced() {
        let plan = ExperimentPlan::from_preset(AnglePreset::Fig3);
        let (x, model) = generate_instance(&plan, 11).unwrap();
        let (u, v) = plan.angles_rad().unwrap();
        let mu = principal_angles(&model.u_true, &model.u_prior).unwrap();
        let mv = principal_angles(&model.v_true, &model.v_prior).unwrap();
        for (a, b) in mu.iter().zip(&sorted_desc(u)).chain(mv.iter().zip(&sorted_desc(v))) {
            assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
        let s = crate::linalg::svd(&x).unwrap();
        assert!(s.sigma[3] > 1e-8 && s.sigma[4] < 1e-10);
    }

    #[test]
    fn perturbation_path_angles() {
        let mut plan = ExperimentPlan {
            perturbation_variance: 0.0,
            ..ExperimentPlan::default()
        };
        let (_, model) = generate_instance(&plan, 3).unwrap();
        assert!(model.theta_u.iter().chain(&model.theta_v).all(|t| *t < 1e-6));
        plan.perturbation_variance = 1e-4;
        for seed in 0..50 {
            let (_, model) = generate_instance(&plan, seed).unwrap();
            let max = model.theta_u.iter().chain(&model.theta_v).fold(0.0f64, |m, t| m.max(*t));
            assert!(max > 0.0 && max < 15f64.to_radians(), "seed {seed}: {max}");
        }
    }

    #[test]
    fn full_and_starved_sampling() {
        for preset in [None, Some(AnglePreset::Fig1)] {
            let table = run_phase_transition(&small(preset)).unwrap();
            assert_eq!(table.records.len(), 3 * 2 * 3);
            for m in Method::ALL {
                assert_eq!(table.aggregate(m, 1.0).unwrap().success_rate, 1.0);
                assert_eq!(table.aggregate(m, 0.05).unwrap().success_rate, 0.0);
            }
        }
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let mut plan = small(Some(AnglePreset::Fig1));
        plan.p_values = vec![0.6];
        plan.workers = Some(1);
        let a = run_phase_transition(&plan).unwrap();
        plan.workers = Some(3);
        let b = run_phase_transition(&plan).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(serde_json::to_string(&a.aggregates).unwrap(), serde_json::to_string(&b.aggregates).unwrap());
    }

    #[test]
    fn aggregate_statistics() {
        let plan = ExperimentPlan {
            methods: vec![Method::Multi, Method::Standard],
            p_values: vec![0.5],
            ..Default::default()
        };
        let rec = |method, trial, nre: f64, it| TrialRecord {
            method,
            p: 0.5,
            trial,
            nre,
            success: nre < SUCCESS_NRE,
            iterations: it,
            converged: true,
            wall_time_s: None,
        };
        let recs = vec![
            rec(Method::Standard, 0, 1e-2, 10),
            rec(Method::Multi, 0, 1e-7, 4),
            rec(Method::Multi, 1, 1e-3, 6),
            rec(Method::Multi, 2, 1e-6, 8),
        ];
        let agg = aggregate(&plan, &recs);
        assert_eq!(agg[0].method, Method::Multi);
        assert_eq!((agg[0].trials, agg[0].successes), (3, 2));
        assert_eq!(agg[0].median_nre, 1e-6);
        assert_eq!(agg[0].mean_iters, 6.0);
        assert_eq!(agg[1].success_rate, 0.0);
    }

    #[test]
    fn noisy_runs_record_errors() {
        let mut plan = small(Some(AnglePreset::Fig1));
        plan.noise_std = 1e-3;
        plan.p_values = vec![1.0];
        let table = run_phase_transition(&plan).unwrap();
        for r in &table.records {
            assert!(r.nre > 0.0 && r.nre < 0.1);
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let table = run_phase_transition(&small(Some(AnglePreset::Fig1))).unwrap();
        let (csv_path, json_path) = emit(&table, dir.path()).unwrap();
        assert_eq!(csv_path.file_name().unwrap(), "phase.csv");
        assert_eq!(read_csv(&csv_path).unwrap(), table.aggregates);
        let back: ResultTable = read_json(&json_path).unwrap();
        assert_eq!(back, table);

        let empty = dir.path().join("empty.csv");
        write_csv(&[], &empty).unwrap();
        assert_eq!(
            fs::read_to_string(&empty).unwrap(),
            "method,p,trials,successes,success_rate,median_nre,mean_iters\n"
        );
        assert!(read_csv(&empty).unwrap().is_empty());
        assert!(matches!(read_csv(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }
}
