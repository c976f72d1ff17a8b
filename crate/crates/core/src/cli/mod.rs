//! Command-line front end: config loading, training runs with CSV progress
//! and checkpoints, evaluation, and the analysis reports.

mod checkpoint;
mod progress;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    boundary_brackets, prop2_check, quadratic_flow_run, stability_grid, GridPoint,
    LinearPolicyScenario, QuadraticProblem, BOUNDARY_BAND,
};
use crate::ensemble::{evaluate, threads_from_env, TrainConfig, Trainer};
use crate::error::{HedError, Result};
use crate::multistep::check_absolute_stability;

pub use checkpoint::{
    checkpoint_files, load_checkpoint, load_manifest, save_checkpoint, RunManifest, MANIFEST_FILE,
    PARAMS_FILE, REPLAY_FILE, REPLAY_MAGIC,
};
pub use progress::ProgressWriter;

pub const PROGRESS_FILE: &str = "progress.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Reads a JSON config; absent fields take their defaults.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: TrainConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &TrainConfig, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(
    name = "hed",
    version,
    about = "Ensemble deterministic policy gradients with multi-step high-level training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an ensemble and write progress.csv plus a checkpoint.
    Train(TrainArgs),
    /// Evaluate the ensemble policy stored in a checkpoint.
    Eval(EvalArgs),
    /// Compare Routh-Hurwitz, root and simulated stability on a grid.
    AnalyzeStability(StabilityArgs),
    /// Check the ensemble-mean identity and variance contraction on linear policies.
    VerifyProp2(Prop2Args),
    /// Integrate a scalar quadratic gradient flow with the three-step rule.
    QuadraticFlow(FlowArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config; missing fields take defaults.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "runs/hed")]
    pub out_dir: PathBuf,
    /// Single-threaded regardless of HED_THREADS.
    #[arg(long)]
    pub deterministic: bool,
    /// Overrides max_episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Stop (and checkpoint) once this many episodes are done in total.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Continue from a checkpoint directory, appending to the progress file.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// Writes the grid as CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub rho0_step: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lambda_h_step: f64,
}

#[derive(Debug, Args)]
pub struct Prop2Args {
    #[arg(long, default_value_t = 100)]
    pub scenarios: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[arg(long)]
    pub rho0: f64,
    #[arg(long)]
    pub lambda_h: f64,
    #[arg(long, default_value_t = 3.0)]
    pub theta_star: f64,
    #[arg(long, default_value_t = 0.0)]
    pub start: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

/// Runs one subcommand, writing its report to `out`. `Ok(false)` means the
/// command ran but a check it performs failed.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<bool> {
    match cli.command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::AnalyzeStability(a) => analyze_stability(a, out),
        Command::VerifyProp2(a) => verify_prop2(a, out),
        Command::QuadraticFlow(a) => quadratic_flow(a, out),
    }
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<bool> {
    fs::create_dir_all(&a.out_dir)?;
    let progress_path = a.out_dir.join(PROGRESS_FILE);
    let (trainer, mut writer) = match &a.resume {
        Some(dir) => {
            if a.seed.is_some() || a.episodes.is_some() {
                return Err(HedError::InvalidConfig {
                    field: "resume",
                    message: "--seed and --episodes cannot change a resumed run".into(),
                });
            }
            (
                load_checkpoint(dir)?,
                ProgressWriter::append(&progress_path)?,
            )
        }
        None => {
            let mut cfg = match &a.config {
                Some(p) => load_config(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(n) = a.episodes {
                cfg.max_episodes = n;
            }
            cfg.validate()?;
            save_config(&cfg, &a.out_dir.join(CONFIG_FILE))?;
            (Trainer::new(cfg)?, ProgressWriter::create(&progress_path)?)
        }
    };
    let threads = if a.deterministic {
        1
    } else {
        threads_from_env()
    };
    let mut trainer = trainer.with_threads(threads);
    let stop = a.stop_after.unwrap_or(u64::MAX);
    let report = trainer.run_until(stop, |row| {
        writer.write_row(row)?;
        Ok(())
    })?;
    let ckpt = a.out_dir.join(CHECKPOINT_DIR);
    save_checkpoint(&trainer, &ckpt)?;
    let c = trainer.counters();
    writeln!(
        out,
        "episodes {} env_steps {} critic_iterations {} high_level_iterations {}",
        c.episodes, c.env_steps, c.critic_iterations, c.high_level_iterations
    )?;
    if let Some((m, s)) = report.final_eval() {
        writeln!(out, "last eval {m:.3} +- {s:.3}")?;
    }
    writeln!(out, "checkpoint {}", ckpt.display())?;
    Ok(true)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<bool> {
    let t = load_checkpoint(&a.checkpoint)?;
    let (m, s) = evaluate(t.ensemble(), t.env(), a.episodes, a.seed)?;
    writeln!(out, "episodes {} mean {m} std {s}", a.episodes)?;
    Ok(true)
}

/// Grid of `k * step` for `k >= 1` strictly below `limit`.
fn grid(step: f64, limit: f64) -> Vec<f64> {
    (1..)
        .map(|k| k as f64 * step)
        .take_while(|x| *x < limit - 1e-12)
        .map(|x| (x * 1e9).round() / 1e9)
        .collect()
}

fn analyze_stability(a: StabilityArgs, out: &mut dyn Write) -> Result<bool> {
    let rho0s = grid(a.rho0_step, 0.5);
    let lambda_hs = grid(a.lambda_h_step, 4.0);
    let points = stability_grid(&rho0s, &lambda_hs)?;
    let mut csv =
        String::from("rho0,lambda_h,A0,A1,A2,A3,routh_ok,pi_root_max,empirical_converged\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.rho0,
            p.lambda_h,
            p.a[0],
            p.a[1],
            p.a[2],
            p.a[3],
            p.routh_ok,
            p.pi_root_max,
            p.empirical_converged
        ));
    }
    match &a.out {
        Some(path) => fs::write(path, &csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    let off_band: Vec<&GridPoint> = points.iter().filter(|p| !p.in_band).collect();
    let disagree = off_band.iter().filter(|p| !p.verdicts_agree()).count();
    let tol = a.lambda_h_step.max(BOUNDARY_BAND);
    let mut bracket_ok = true;
    for b in boundary_brackets(&points) {
        bracket_ok &= b.brackets_edge(tol);
    }
    writeln!(
        out,
        "# {} points, {} off the boundary band, {} disagreements, boundary recovered: {}",
        points.len(),
        off_band.len(),
        disagree,
        bracket_ok
    )?;
    Ok(disagree == 0 && bracket_ok)
}

fn verify_prop2(a: Prop2Args, out: &mut dyn Write) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut all = true;
    writeln!(
        out,
        "n,d,rho0,identity_residual,variance_ratio,predicted_ratio,passed"
    )?;
    let emit = |sc: &LinearPolicyScenario, out: &mut dyn Write| -> Result<bool> {
        let r = prop2_check(sc)?;
        writeln!(
            out,
            "{},{},{},{:e},{},{},{}",
            sc.n(),
            sc.phi.len(),
            sc.rho0,
            r.identity_residual,
            r.variance_ratio,
            r.predicted_ratio,
            r.passed
        )?;
        Ok(r.passed)
    };
    for _ in 0..a.scenarios {
        let n = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=10);
        let rho0 = rng.gen_range(1e-6..1.0 / 3.0);
        let sc = LinearPolicyScenario::random(n, d, rho0, &mut rng);
        all &= emit(&sc, out)?;
    }
    for rho0 in [0.30, 1.0 / 3.0, 0.36] {
        let sc = LinearPolicyScenario::random(5, 4, rho0, &mut rng);
        all &= emit(&sc, out)?;
    }
    writeln!(out, "# all passed: {all}")?;
    Ok(all)
}

fn quadratic_flow(a: FlowArgs, out: &mut dyn Write) -> Result<bool> {
    let p = QuadraticProblem {
        lambda: 1.0,
        theta_star: a.theta_star,
        x0: a.start,
        x1: a.start,
        x2: a.start,
        h: a.lambda_h,
        rho0: a.rho0,
        max_iters: a.max_iters,
        tol: a.tol,
    };
    let run = quadratic_flow_run(&p)?;
    let predicted = check_absolute_stability(a.rho0, a.lambda_h);
    writeln!(
        out,
        "converged {} diverged {} iterations {} final_error {:e} routh_ok {} pi_root_max {}",
        run.converged,
        run.diverged,
        run.iterations,
        run.final_error,
        predicted.routh_ok,
        predicted.pi_root_max
    )?;
    let in_band = (a.lambda_h - (2.0 - 4.0 * a.rho0)).abs() < BOUNDARY_BAND;
    Ok(in_band || run.converged == predicted.routh_ok)
}
