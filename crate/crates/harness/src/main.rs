use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mavic_core::envs::build_env;
use mavic_core::model::EnvModel;
use mavic_core::{engine, trace, with_env};
use mavic_harness::experiment::{aggregate_rows, evaluate, EvalOptions, ExperimentResult, SeedResult};
use mavic_harness::{report, run_experiment, run_verify, HarnessError, RunConfig};
use mavic_learner::{train, Checkpoint, Mode};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "mavic", version, about = "Instruction-interruptible multi-agent training and evaluation")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed and the experiment seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the training mode and the experiment mode list.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the corrected operator against per-class value iteration.
    Verify,
    /// Exact contamination sweep over arrival probability and penalty.
    Sweep,
    /// Train one policy.
    Train,
    /// Evaluate a checkpoint, or run the full multi-seed experiment.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check a recorded trace and summarize it.
    Replay { trace: PathBuf },
    /// Host live sessions.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        tick_rate: Option<f64>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("expected one of mavic, naive, switch, vanilla; got `{s}`"))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Sweep => "sweep",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Replay { .. } => "replay",
            Command::Serve { .. } => "serve",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut run = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        run.train.seed = seed;
        run.experiment.seeds = vec![seed];
    }
    if let Some(mode) = cli.mode {
        run.train.mode = mode;
        run.experiment.modes = vec![mode];
    }
    Ok(run)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn verify(cli: &Cli, run: &RunConfig) -> anyhow::Result<Value> {
    let summary = run_verify(run)?;
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("verify.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    if !summary.passed {
        anyhow::bail!(
            "decoupling check failed: max deviation {:e}, optimality check {}",
            summary.lemma1_max_dev,
            summary.theorem1_pass
        );
    }
    Ok(json!({
        "instances": summary.instances,
        "lemma1_max_dev": summary.lemma1_max_dev,
        "theorem1_pass": summary.theorem1_pass,
        "max_optimality_gap": summary.max_optimality_gap,
        "seconds": summary.seconds,
    }))
}

fn sweep(cli: &Cli, run: &RunConfig) -> anyhow::Result<Value> {
    let rows = mavic_solver::contamination_sweep(&run.sweep).map_err(HarnessError::from)?;
    let out = out_dir(cli);
    std::fs::create_dir_all(&out)?;
    let path = out.join("sweep.csv");
    mavic_solver::write_csv(&rows, std::fs::File::create(&path)?).map_err(HarnessError::from)?;
    Ok(json!({
        "points": rows.len(),
        "contaminated": rows.iter().filter(|r| r.contaminated()).count(),
        "corrected_attains_both_everywhere": rows.iter().all(|r| r.corrected_attains_both),
        "csv": path,
    }))
}

fn train_cmd(cli: &Cli, run: &RunConfig) -> anyhow::Result<Value> {
    let out = out_dir(cli);
    let trained = train(&run.train, Some(&out)).map_err(HarnessError::from)?;
    let last = trained.metrics.last();
    Ok(json!({
        "mode": run.train.mode,
        "seed": run.train.seed,
        "epochs": trained.checkpoint.epoch,
        "config_hash": trained.checkpoint.config_hash,
        "base_return": last.map(|m| m.base_return),
        "compliance": last.and_then(|m| m.compliance),
        "checkpoint": out.join("checkpoint.json"),
    }))
}

fn eval_checkpoint(cli: &Cli, run: &RunConfig, path: &Path) -> anyhow::Result<Value> {
    let checkpoint = Checkpoint::load(path)
        .map_err(HarnessError::from)
        .with_context(|| format!("loading {}", path.display()))?;
    let built = build_env(&run.train.env, &run.train.env_config).map_err(HarnessError::from)?;
    if checkpoint.shape.env != built.name() {
        return Err(HarnessError::Config(format!(
            "checkpoint was trained on `{}`, configuration is for `{}`",
            checkpoint.shape.env,
            built.name()
        ))
        .into());
    }
    let policy = checkpoint.policy(&built.registry).map_err(HarnessError::from)?;
    let options = EvalOptions::from_run(run);
    let evaluation = with_env!(&built.env, env => evaluate(env, &built.registry, &policy, &options))?;
    let seeds = vec![SeedResult {
        env: built.name().to_string(),
        mode: checkpoint.mode,
        seed: checkpoint.seed,
        train_seconds: 0.0,
        evaluation,
    }];
    let rows = aggregate_rows(&seeds, run.experiment.bootstrap_resamples, run.experiment.bootstrap_seed);
    let result = ExperimentResult {
        env: built.name().to_string(),
        seeds,
        rows,
    };
    let out = out_dir(cli);
    report::write_all(&result, &built.registry, &out)?;
    let e = &result.seeds[0].evaluation;
    Ok(json!({
        "mode": checkpoint.mode,
        "seed": checkpoint.seed,
        "base_mean": e.base.mean,
        "base_std": e.base.std,
        "compliance": e.compliance.compliance,
        "out": out,
    }))
}

fn eval_experiment(cli: &Cli, run: &RunConfig) -> anyhow::Result<Value> {
    let out = out_dir(cli);
    let result = run_experiment(run, Some(&out))?;
    let rows: Vec<Value> = result
        .rows
        .iter()
        .map(|r| {
            json!({
                "mode": r.mode,
                "base_mean": r.base.mean,
                "compliance": r.compliance.map(|c| c.mean),
                "n_seeds": r.n_seeds,
            })
        })
        .collect();
    Ok(json!({ "env": result.env, "rows": rows, "out": out }))
}

fn replay(run: &RunConfig, path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::ConfigFile {
        path: path.display().to_string(),
        source,
    })?;
    let records = trace::read_jsonl(text.as_bytes()).map_err(HarnessError::from)?;
    let mut rewritten = Vec::new();
    trace::write_jsonl(&records, &mut rewritten).map_err(HarnessError::from)?;
    let rewards = trace::rewards(&records);
    let built = build_env(&run.train.env, &run.train.env_config).map_err(HarnessError::from)?;
    let gamma = with_env!(&built.env, env => env.discount());
    let switches = records
        .windows(2)
        .filter(|w| w[0].active_instruction != w[1].active_instruction)
        .count();
    Ok(json!({
        "steps": records.len(),
        "return": rewards.iter().sum::<f64>(),
        "discounted_return": engine::joint_return(&rewards, gamma),
        "base_return": records.iter().map(|r| r.base_reward).sum::<f64>(),
        "instruction_switches": switches,
        "roundtrip_exact": rewritten == text.as_bytes(),
    }))
}

fn serve(run: &RunConfig, addr: &str, tick_rate: Option<f64>) -> anyhow::Result<Value> {
    let mut config = mavic_bridge::ServerConfig {
        tick_rate,
        ..Default::default()
    };
    config.env_configs.insert(run.train.env.clone(), run.train.env_config.clone());
    let listener = std::net::TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    println!("{}", json!({ "command": "serve", "status": "listening", "addr": listener.local_addr()?.to_string() }));
    mavic_bridge::serve_listener(listener, config)?;
    Ok(json!({ "addr": addr }))
}

fn run(cli: &Cli) -> anyhow::Result<Value> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Verify => verify(cli, &config),
        Command::Sweep => sweep(cli, &config),
        Command::Train => train_cmd(cli, &config),
        Command::Eval { checkpoint: Some(path) } => eval_checkpoint(cli, &config, path),
        Command::Eval { checkpoint: None } => eval_experiment(cli, &config),
        Command::Replay { trace } => replay(&config, trace),
        Command::Serve { addr, tick_rate } => serve(&config, addr, *tick_rate),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        e.downcast_ref::<HarnessError>().is_some_and(HarnessError::is_validation)
            || e.downcast_ref::<mavic_learner::LearnerError>()
                .is_some_and(|l| matches!(l, mavic_learner::LearnerError::Config(_) | mavic_learner::LearnerError::Checkpoint(_)))
    });
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let command = cli.command.name();
    match run(&cli) {
        Ok(mut summary) => {
            summary["command"] = json!(command);
            summary["status"] = json!("ok");
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let code = exit_code(&err);
            eprintln!("error: {err:#}");
            println!("{}", json!({ "command": command, "status": "error", "exit_code": code, "error": format!("{err:#}") }));
            ExitCode::from(code)
        }
    }
}
