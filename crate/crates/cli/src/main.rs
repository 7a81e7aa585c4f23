use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fcrl::analysis::{
    ablation_sweep, gradient_suite, noise_sweep, run_oracle_check, DiscreteFamily, OracleCheckConfig, SweepOutcome,
    GRAD_CHECK_TOLERANCE, ORACLE_TV_THRESHOLD,
};
use fcrl::config::ExperimentConfig;
use fcrl::downstream::Task;
use fcrl::experiment::{reproduce, run, Job, RunManifest, RunOptions, SUMMARY_FILE};
use fcrl::{Error, Result};

/// Function-contrastive representation learning experiments.
#[derive(Parser)]
#[command(name = "fcrl", version)]
struct Cli {
    /// Worker threads for evaluation and sweeps (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding the MNIST IDX files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output root; each run gets its own subdirectory.
    #[arg(long, env = "FCRL_LAB_OUT", default_value = "runs")]
    out: PathBuf,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
    /// Return an existing completed run with the same id instead of failing.
    #[arg(long, conflicts_with = "force")]
    reuse: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the contrastive set encoder.
    TrainEncoder(RunArgs),
    /// Train the conditional neural process baseline.
    TrainCnp(RunArgs),
    /// Train a downstream head on a frozen encoder or CNP.
    TrainDecoder {
        #[arg(long)]
        encoder_run: PathBuf,
        #[arg(long)]
        task: Task,
        /// Context count of a classification probe.
        #[arg(long)]
        shots: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a head, encoder or CNP run on the test split.
    Evaluate {
        #[arg(long)]
        model_run: PathBuf,
        #[arg(long)]
        task: Option<Task>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rerun a recorded run and compare its artifacts byte for byte.
    Reproduce {
        run_dir: PathBuf,
    },
    /// Ablation over J, temperature and critic.
    Sweep(RunArgs),
    /// FCRL against CNP across training noise levels.
    NoiseSweep(RunArgs),
    /// Compare the trained critic's softmax with the exact posterior on constant functions.
    OracleCheck {
        /// Function values of the family members.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0,1")]
        levels: Vec<f64>,
        /// Observation noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Candidates per episode (default: one per level).
        #[arg(long)]
        candidates: Option<usize>,
        /// Points per observation set.
        #[arg(long, default_value_t = 4)]
        points: usize,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        #[arg(long, default_value_t = ORACLE_TV_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Finite-difference gradient checks of every objective.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = GRAD_CHECK_TOLERANCE)]
        tolerance: f64,
    },
}

fn load_config(args: &RunArgs, upstream: Option<&Path>) -> Result<ExperimentConfig> {
    let mut config = match (&args.config, upstream) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(run_dir)) => RunManifest::load(run_dir)?.config,
        (None, None) => return Err(Error::config("--config is required")),
    };
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    config.require_seed()?;
    Ok(config)
}

fn options(args: &RunArgs) -> RunOptions {
    RunOptions {
        out_root: args.out.clone(),
        data_dir: args.data_dir.clone(),
        force: args.force,
        reuse: args.reuse,
    }
}

fn run_job(job: Job, args: &RunArgs, upstream: Option<&Path>) -> Result<bool> {
    let config = load_config(args, upstream)?;
    let (dir, manifest) = run(&job, &config, &options(args))?;
    let summary = match std::fs::read(dir.join(SUMMARY_FILE)) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::Internal(e.to_string()))?,
        Err(_) => serde_json::Value::Null,
    };
    print_json(&json!({
        "run_id": manifest.run_id,
        "run_dir": dir,
        "command": job.command(),
        "model": manifest.model,
        "files": manifest.files,
        "summary": summary,
    }));
    Ok(true)
}

fn sweep_dir(args: &RunArgs, name: &str) -> PathBuf {
    args.out.join(name)
}

fn report_sweep(dir: &Path, outcome: &SweepOutcome) {
    print_json(&json!({
        "sweep_dir": dir,
        "rows": outcome.records.len(),
        "computed": outcome.computed,
        "reused": outcome.reused,
        "skipped": outcome.skipped,
    }));
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json serializes"));
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::TrainEncoder(args) => run_job(Job::TrainEncoder, &args, None),
        Command::TrainCnp(args) => run_job(Job::TrainCnp, &args, None),
        Command::TrainDecoder {
            encoder_run,
            task,
            shots,
            run,
        } => {
            let job = Job::TrainDecoder {
                encoder_run: encoder_run.clone(),
                task,
                shots,
            };
            run_job(job, &run, Some(&encoder_run))
        }
        Command::Evaluate { model_run, task, run } => {
            let job = Job::Evaluate {
                model_run: model_run.clone(),
                task,
            };
            run_job(job, &run, Some(&model_run))
        }
        Command::Reproduce { run_dir } => {
            let report = reproduce(&run_dir)?;
            print_json(&json!({
                "run_id": report.run_id,
                "checkpoint_identical": report.checkpoint_identical,
                "curve_identical": report.curve_identical,
                "metrics_identical": report.metrics_identical,
                "metrics_compared": report.metrics_compared,
                "identical": report.identical(),
            }));
            Ok(report.identical())
        }
        Command::Sweep(args) => {
            let config = load_config(&args, None)?;
            let dir = sweep_dir(&args, "ablation");
            let outcome = ablation_sweep(&config, args.data_dir.as_deref(), &dir)?;
            report_sweep(&dir, &outcome);
            Ok(true)
        }
        Command::NoiseSweep(args) => {
            let config = load_config(&args, None)?;
            let dir = sweep_dir(&args, "noise");
            let outcome = noise_sweep(&config, args.data_dir.as_deref(), &dir)?;
            report_sweep(&dir, &outcome);
            Ok(true)
        }
        Command::OracleCheck {
            levels,
            sigma,
            candidates,
            points,
            episodes,
            threshold,
            seed,
        } => {
            let family = DiscreteFamily::constants(&levels, 5, sigma)?;
            let mut check = OracleCheckConfig::new(candidates.unwrap_or(levels.len()), points, sigma);
            check.episodes = episodes;
            let (_, report) = run_oracle_check(&family, &check, seed)?;
            let pass = report.mean_tv_below(threshold);
            print_json(&json!({
                "levels": levels,
                "sigma": sigma,
                "report": report,
                "one_hot_match": report.matches_one_hot(),
                "threshold": threshold,
                "pass": pass,
            }));
            println!("{} mean TV {:.4} (threshold {threshold})", verdict(pass), report.mean_tv);
            Ok(pass)
        }
        Command::GradCheck { seed, tolerance } => {
            let checks = gradient_suite(seed)?;
            let mut all = true;
            for c in &checks {
                let pass = c.passes(tolerance);
                all &= pass;
                println!("{} {} max relative error {:.3e} over {} parameters", verdict(pass), c.name, c.max_relative_error, c.checked);
            }
            Ok(all)
        }
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        fcrl::parallel::set_threads(n);
    }
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let body = json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
