//! `uavcr` — scenario generation, curriculum training, evaluation, and the
//! unmitigated baseline from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uavcr_core::dgn::checkpoint::load_params_for;
use uavcr_core::harness::{derive_seed, run_baseline, run_evaluation, run_training, RunConfig};
use uavcr_core::harness::{write_metrics_csv, write_trajectory_csv};
use uavcr_core::scenario::{generate, validate, ScenarioConfig};
use uavcr_core::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "uavcr", version, about = "Multi-UAV conflict resolution trainer and evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of episodes (overrides the config).
    #[arg(long)]
    episodes: Option<usize>,
    /// Number of agents (overrides the config).
    #[arg(long)]
    agents: Option<usize>,
    /// Dotted-path config override, e.g. --set dgn.learning_rate=0.0005
    /// or --set scenario.conflict_angles='[0,90,180]'. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate compound-conflict scenario files and validate them.
    Generate {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of scenario files to write.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train (optionally resuming from a checkpoint for the curriculum).
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Initial weights to fine-tune.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint greedily on freshly generated scenarios.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Trained weights.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also dump per-step trajectories to trajectories.csv.
        #[arg(long)]
        trajectories: bool,
    },
    /// Roll out the unmitigated (hold-heading) baseline.
    Baseline {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common, count } => cmd_generate(&common, count),
        Command::Train { common, checkpoint } => cmd_train(&common, checkpoint.as_deref()),
        Command::Evaluate {
            common,
            checkpoint,
            trajectories,
        } => cmd_evaluate(&common, &checkpoint, trajectories),
        Command::Baseline { common } => cmd_baseline(&common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidCoordinate(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Load the config file (if any) and apply overrides, strictest first: the
/// dotted-path --set flags, then the dedicated flags.
fn load_config(common: &CommonOpts) -> Result<RunConfig, Error> {
    let mut value = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<serde_json::Value>(&text)?
        }
        None => serde_json::to_value(RunConfig::default())?,
    };
    for spec in &common.overrides {
        apply_override(&mut value, spec)?;
    }
    // Unknown keys are rejected here by the config schema.
    let mut cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(episodes) = common.episodes {
        cfg.episodes = episodes;
    }
    if let Some(agents) = common.agents {
        cfg.agents = agents;
    }
    Ok(cfg)
}

/// `path.to.field=value`; the value is parsed as JSON, falling back to a
/// plain string so `--set dgn.optimizer=adam` works unquoted.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<(), Error> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override '{spec}' is not PATH=VALUE")))?;
    let value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("'{path}' does not address an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split produces at least one part")
}

fn require_trainable_agents(cfg: &RunConfig) -> Result<(), Error> {
    if cfg.agents < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 agents, got {}",
            cfg.agents
        )));
    }
    Ok(())
}

fn cmd_generate(common: &CommonOpts, count: usize) -> Result<(), Error> {
    let cfg = load_config(common)?;
    require_trainable_agents(&cfg)?;
    cfg.validate(false)?;
    std::fs::create_dir_all(&common.out)?;

    let mut ok = 0usize;
    for k in 0..count {
        let scen_cfg = ScenarioConfig {
            target: cfg.agents,
            seed: derive_seed(cfg.seed, 5, k as u64),
            ..cfg.scenario.clone()
        };
        let scenario = generate(&scen_cfg, &cfg.separation)?;
        let report = validate(&scenario, &cfg.separation);
        let contract_ok = report.early_loss_pairs.is_empty()
            && scenario.designed_pairs.iter().zip(&report.designed).all(|(p, o)| {
                o.first_loss_time
                    .is_some_and(|t| (t - p.t_loss_designed).abs() <= 0.05)
                    && (o.min_distance - p.d_cpa_designed).abs() <= 0.5
            });
        if contract_ok {
            ok += 1;
        }
        let path = common.out.join(format!("scenario_{k:03}.json"));
        let text = serde_json::to_string_pretty(&scenario.to_file(&scen_cfg))?;
        std::fs::write(&path, text)?;
        println!(
            "scenario_{k:03}.json  seed={}  pairs={}  contract={}",
            scen_cfg.seed,
            scenario.designed_pairs.len(),
            if contract_ok { "ok" } else { "VIOLATED" }
        );
    }
    println!("{ok}/{count} scenarios pass validation");
    Ok(())
}

fn cmd_train(common: &CommonOpts, checkpoint: Option<&Path>) -> Result<(), Error> {
    let cfg = load_config(common)?;
    require_trainable_agents(&cfg)?;
    let initial = checkpoint
        .map(|p| load_params_for(p, &cfg.dgn))
        .transpose()?;
    let outcome = run_training(&cfg, initial, &common.out)?;
    let last = outcome.metrics.last().expect("at least one episode");
    println!(
        "trained {} episodes; final episode reward {:.3}, losses {}; checkpoint at {}",
        outcome.metrics.len(),
        last.cumulative_reward,
        last.loss_count,
        outcome.final_checkpoint.display()
    );
    Ok(())
}

fn write_report(
    out: &Path,
    cfg: &RunConfig,
    report: &uavcr_core::EvalReport,
) -> Result<(), Error> {
    let doc = serde_json::json!({
        "report": report,
        "config": cfg,
    });
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn cmd_evaluate(common: &CommonOpts, checkpoint: &Path, trajectories: bool) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let params = load_params_for(checkpoint, &cfg.dgn)?;
    std::fs::create_dir_all(&common.out)?;
    let mut rows = Vec::new();
    let traj = trajectories.then_some(&mut rows);
    let (metrics, report) = run_evaluation(&cfg, &params, traj)?;
    write_metrics_csv(&common.out.join("episodes.csv"), &metrics)?;
    if trajectories {
        write_trajectory_csv(&common.out.join("trajectories.csv"), &rows)?;
    }
    write_report(&common.out, &cfg, &report)?;
    println!(
        "evaluated {} episodes: mean reward {:.3}, mean LOSS {:.3}, solved {}/{}, NMAC {}",
        report.episodes,
        report.mean_cumulative_reward,
        report.mean_loss_count,
        report.solved_count,
        report.episodes,
        report.total_nmac
    );
    Ok(())
}

fn cmd_baseline(common: &CommonOpts) -> Result<(), Error> {
    let cfg = load_config(common)?;
    std::fs::create_dir_all(&common.out)?;
    let (metrics, report) = run_baseline(&cfg)?;
    write_metrics_csv(&common.out.join("episodes.csv"), &metrics)?;
    write_report(&common.out, &cfg, &report)?;
    println!(
        "baseline over {} episodes: mean reward {:.3}, mean LOSS {:.3}, solved {}/{}",
        report.episodes,
        report.mean_cumulative_reward,
        report.mean_loss_count,
        report.solved_count,
        report.episodes
    );
    Ok(())
}
