//! Command-line front end for the completion experiments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use prior_completion::experiments::{
    emit, read_json, run_fdd_pipeline, run_phase_transition, write_csv, write_json, ExperimentPlan,
};
use prior_completion::fdd::ChannelConfig;
use prior_completion::weights::{
    optimize_weights, CoherenceTerms, SearchMode, WeightGrid, WeightReport,
};
use prior_completion::{Error, Result};

#[derive(Parser)]
#[command(name = "prior-completion", version, about = "Matrix completion with subspace priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Success rate against sampling probability for each method.
    Phase {
        #[arg(long)]
        plan: PathBuf,
        /// Output directory; defaults to the plan's `output` or `.`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Channel velocities to prior angles, weights and success rates.
    Fdd {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of angles kept per side.
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Optimal weights for given principal angles (degrees).
    Weights {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        theta_u: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        theta_v: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Mode::Multi)]
        mode: Mode,
        #[arg(long, default_value_t = 8)]
        r_prime: usize,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bound quantities for the plan's angles under each weighting.
    Bounds {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Multi,
    Single,
}

impl From<Mode> for SearchMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Multi => SearchMode::Multi,
            Mode::Single => SearchMode::Single,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Numerical(_) => 1,
        _ => 2,
    }
}

fn out_dir(flag: Option<PathBuf>, plan: Option<&ExperimentPlan>) -> PathBuf {
    flag.or_else(|| plan.and_then(|p| p.output.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_plan(path: &Path) -> Result<ExperimentPlan> {
    let plan: ExperimentPlan = read_json(path)?;
    plan.validate()?;
    Ok(plan)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(err) => io(err),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    })?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(io)
}

fn curve_summary(table: &prior_completion::experiments::ResultTable) -> String {
    let mut s = String::new();
    for m in &table.plan.methods {
        let rates: Vec<String> = table.curve(*m).iter().map(|(p, r)| format!("{p}:{r:.2}")).collect();
        let _ = writeln!(s, "{:8} {}", m.as_str(), rates.join(" "));
    }
    s
}

#[derive(Serialize)]
struct WeightRow {
    side: &'static str,
    index: usize,
    theta_deg: Option<f64>,
    weight: f64,
}

fn weight_rows(rep: &WeightReport) -> Vec<WeightRow> {
    let mut rows = Vec::new();
    let w = &rep.weights;
    for (side, theta, aligned, extra) in [
        ("u", &rep.theta_u, &w.lambda1, &w.lambda2),
        ("v", &rep.theta_v, &w.gamma1, &w.gamma2),
    ] {
        for (i, x) in aligned.iter().enumerate() {
            rows.push(WeightRow {
                side,
                index: i,
                theta_deg: Some(theta[i].to_degrees()),
                weight: *x,
            });
        }
        for (i, x) in extra.iter().enumerate() {
            rows.push(WeightRow {
                side,
                index: aligned.len() + i,
                theta_deg: None,
                weight: *x,
            });
        }
    }
    rows
}

#[derive(Serialize)]
struct BoundRow {
    mode: SearchMode,
    lambda: Vec<f64>,
    gamma: Vec<f64>,
    alpha1: f64,
    alpha2: f64,
    alpha3: f64,
    alpha4: Option<f64>,
    alpha5: Option<f64>,
    alpha6: Option<f64>,
    p_lower: f64,
    feasible: bool,
}

#[derive(Serialize)]
struct BoundCsvRow {
    mode: SearchMode,
    alpha1: f64,
    alpha2: f64,
    alpha3: f64,
    alpha4: Option<f64>,
    alpha5: Option<f64>,
    alpha6: Option<f64>,
    p_lower: f64,
    feasible: bool,
}

fn bound_rows(plan: &ExperimentPlan) -> Result<Vec<BoundRow>> {
    let (tu, tv) = plan
        .angles_rad()
        .ok_or_else(|| Error::Config("bounds need prescribed angles (preset or theta_u_deg/theta_v_deg)".into()))?;
    let coh = CoherenceTerms::default();
    let grid = WeightGrid::default();
    let mut rows = Vec::new();
    for mode in [SearchMode::None, SearchMode::Single, SearchMode::Multi] {
        let rep = optimize_weights(&tu, &tv, plan.r_prime, plan.n, coh, &grid, mode)?;
        rows.push(BoundRow {
            mode,
            lambda: rep.weights.lambda(),
            gamma: rep.weights.gamma(),
            alpha1: rep.alpha1,
            alpha2: rep.alpha2,
            alpha3: rep.alpha3,
            alpha4: rep.alpha4,
            alpha5: rep.alpha5,
            alpha6: rep.alpha6,
            p_lower: rep.p_lower,
            feasible: rep.feasible,
        });
    }
    Ok(rows)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phase { plan, out, workers } => {
            let mut plan = load_plan(&plan)?;
            if workers.is_some() {
                plan.workers = workers;
            }
            plan.validate()?;
            let dir = out_dir(out, Some(&plan));
            let table = run_phase_transition(&plan)?;
            let (csv, json) = emit(&table, &dir)?;
            print!("{}", curve_summary(&table));
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Fdd {
            config,
            plan,
            out,
            rank,
            workers,
        } => {
            let mut channel: ChannelConfig = read_json(&config)?;
            if rank.is_some() {
                channel.rank = rank;
            }
            channel.validate()?;
            let mut plan = load_plan(&plan)?;
            if workers.is_some() {
                plan.workers = workers;
            }
            plan.validate()?;
            let dir = out_dir(out, Some(&plan));
            ensure_dir(&dir)?;
            let result = run_fdd_pipeline(&channel, &plan)?;
            let csv = dir.join("fdd.csv");
            let json = dir.join("fdd.json");
            write_csv(&result.table.aggregates, &csv)?;
            write_json(&result, &json)?;
            println!("theta_u (deg) {:?}", result.theta_u_deg);
            println!("theta_v (deg) {:?}", result.theta_v_deg);
            print!("{}", curve_summary(&result.table));
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Weights {
            theta_u,
            theta_v,
            mode,
            r_prime,
            n,
            out,
        } => {
            if let Some(t) = theta_u.iter().chain(&theta_v).find(|t| !(0.0..=90.0).contains(*t)) {
                return Err(Error::Config(format!("angle {t}° outside [0, 90]")));
            }
            let tu: Vec<f64> = theta_u.iter().map(|d| d.to_radians()).collect();
            let tv: Vec<f64> = theta_v.iter().map(|d| d.to_radians()).collect();
            let rep = optimize_weights(
                &tu,
                &tv,
                r_prime,
                n,
                CoherenceTerms::default(),
                &WeightGrid::default(),
                mode.into(),
            )?;
            let dir = out_dir(out, None);
            ensure_dir(&dir)?;
            write_rows(&dir.join("weights.csv"), &weight_rows(&rep))?;
            write_json(&rep, &dir.join("weights.json"))?;
            println!("lambda {:?}", rep.weights.lambda());
            println!("gamma  {:?}", rep.weights.gamma());
            println!(
                "alpha1 {:.6} alpha2 {:.6} alpha3 {:.6} p_lower {:.6} feasible {}",
                rep.alpha1, rep.alpha2, rep.alpha3, rep.p_lower, rep.feasible
            );
        }
        Command::Bounds { plan, out } => {
            let plan = load_plan(&plan)?;
            let rows = bound_rows(&plan)?;
            let dir = out_dir(out, Some(&plan));
            ensure_dir(&dir)?;
            let csv_rows: Vec<BoundCsvRow> = rows
                .iter()
                .map(|r| BoundCsvRow {
                    mode: r.mode,
                    alpha1: r.alpha1,
                    alpha2: r.alpha2,
                    alpha3: r.alpha3,
                    alpha4: r.alpha4,
                    alpha5: r.alpha5,
                    alpha6: r.alpha6,
                    p_lower: r.p_lower,
                    feasible: r.feasible,
                })
                .collect();
            write_rows(&dir.join("bounds.csv"), &csv_rows)?;
            write_json(&rows, &dir.join("bounds.json"))?;
            println!("{:6} {:>10} {:>10} {:>10} {:>10} {:>9}", "mode", "alpha1", "alpha2", "alpha3", "p_lower", "feasible");
            for r in &rows {
                let mode = serde_json::to_value(r.mode).map(|v| v.as_str().unwrap_or("").to_string()).unwrap_or_default();
                println!(
                    "{:6} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>9}",
                    mode, r.alpha1, r.alpha2, r.alpha3, r.p_lower, r.feasible
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
