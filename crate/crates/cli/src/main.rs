//! Command-line harness: train, evaluate, replay, and list experiments.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use microswarm::harness::checkpoint::Checkpoint;
use microswarm::harness::config::{ExperimentConfig, ExperimentId};
use microswarm::harness::inference::{
    dump_episode_ids, read_dump, render_episode_svg, replay_dump, InferenceSession,
};
use microswarm::harness::train::{run_training, Trainer};
use microswarm::ppo::Algo;

/// Environment variable selecting the root directory for run outputs.
const OUT_ROOT_VAR: &str = "MICROSWARM_RUNS";

#[derive(Parser)]
#[command(name = "microswarm", version, about = "Micro-swimmer swarm RL harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from a config file.
    Train {
        /// Flat key=value config file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Additional key=value overrides (repeatable).
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory (default: $MICROSWARM_RUNS/<run-name>).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Resume from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Roll out a trained policy and write a trajectory dump.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of evaluation episodes.
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        /// Use the Gaussian mean instead of sampling.
        #[arg(long)]
        deterministic: bool,
        /// Environment overrides, e.g. seed=7 or target_half_extent=50.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Trajectory dump path (default: <checkpoint dir>/eval.jsonl).
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Also render one SVG trajectory plot per episode.
        #[arg(long)]
        svg: bool,
    },
    /// Verify a trajectory dump against the dynamics and optionally plot it.
    Replay {
        #[arg(long)]
        dump: PathBuf,
        /// Render one SVG per episode next to the dump.
        #[arg(long)]
        svg: bool,
    },
    /// Print the experiment presets and their shipped config files.
    ListExperiments,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, overrides, out_dir, resume } => {
            cmd_train(&config, seed, &overrides, out_dir, resume)
        }
        Command::Eval { checkpoint, episodes, deterministic, overrides, dump, svg } => {
            cmd_eval(&checkpoint, episodes, deterministic, &overrides, dump, svg)
        }
        Command::Replay { dump, svg } => cmd_replay(&dump, svg),
        Command::ListExperiments => cmd_list(),
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn cmd_train(
    config: &Path,
    seed: Option<u64>,
    overrides: &[String],
    out_dir: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let mut trainer = if let Some(ckpt_path) = resume {
        let ck = Checkpoint::load(&ckpt_path)
            .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
        if !overrides.is_empty() || seed.is_some() {
            bail!("--seed/--override cannot be combined with --resume; the checkpoint pins the config");
        }
        Trainer::from_checkpoint(&ck)?
    } else {
        let text = fs::read_to_string(config)
            .with_context(|| format!("reading config {}", config.display()))?;
        let mut cfg = ExperimentConfig::parse(&text)?;
        if let Some(seed) = seed {
            cfg.apply_override(&format!("seed={seed}"))?;
        }
        for pair in overrides {
            cfg.apply_override(pair)?;
        }
        cfg.validate()?;
        Trainer::new(cfg)?
    };

    let run_dir = out_dir.unwrap_or_else(|| out_root().join(trainer.cfg.run_name()));
    println!(
        "training {} for {} updates ({} steps) -> {}",
        trainer.cfg.run_name(),
        trainer.num_updates(),
        trainer.cfg.train.total_timesteps,
        run_dir.display()
    );
    let started = std::time::Instant::now();
    let outcome = run_training(&mut trainer, &run_dir)?;
    println!(
        "done in {:.1}s: {} episodes, smoothed return {:.3}, checkpoint {}",
        started.elapsed().as_secs_f64(),
        outcome.episodes,
        outcome.final_smoothed_return,
        outcome.checkpoint.display()
    );
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    episodes: u64,
    deterministic: bool,
    overrides: &[String],
    dump: Option<PathBuf>,
    svg: bool,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let session = InferenceSession::from_checkpoint(&ck, &overrides.to_vec())?;
    let dump_path = dump.unwrap_or_else(|| {
        checkpoint.parent().unwrap_or(Path::new(".")).join("eval.jsonl")
    });
    let summary = session.dump_episodes(episodes, deterministic, &dump_path)?;
    println!(
        "evaluated {} episodes: mean return {:.3}, mean length {:.1}",
        summary.episodes.len(),
        summary.mean_return(),
        summary.mean_length()
    );
    println!("trajectory dump: {}", dump_path.display());
    if svg {
        render_all_episodes(&dump_path)?;
    }
    Ok(())
}

fn cmd_replay(dump: &Path, svg: bool) -> Result<()> {
    let records = read_dump(dump)?;
    let report = replay_dump(&records)?;
    println!(
        "replay consistent: {} episodes, {} steps reproduced exactly",
        report.episodes, report.steps
    );
    if svg {
        render_all_episodes(dump)?;
    }
    Ok(())
}

fn render_all_episodes(dump_path: &Path) -> Result<()> {
    let records = read_dump(dump_path)?;
    let stem = dump_path.file_stem().and_then(|s| s.to_str()).unwrap_or("episode");
    let dir = dump_path.parent().unwrap_or(Path::new("."));
    for episode in dump_episode_ids(&records) {
        let svg = render_episode_svg(&records, episode)?;
        let path = dir.join(format!("{stem}_ep{episode:04}.svg"));
        fs::write(&path, svg)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_list() -> Result<()> {
    println!("{:<10} {:>4} {:<5} {:>8} {:>9}  config", "variant", "n", "algo", "obs_dim", "num_envs");
    for id in ExperimentId::ALL {
        let (ns, algos): (&[usize], &[Algo]) = match id {
            ExperimentId::Env2Om => (&[16], &[Algo::Rpo]),
            ExperimentId::Env2Omc => (&[16, 25], &[Algo::Rpo]),
            _ => (&[4, 9, 16], &[Algo::Ppo, Algo::Rpo]),
        };
        for &n in ns {
            for &algo in algos {
                let cfg = ExperimentConfig::preset(id, algo, n, 1);
                println!(
                    "{:<10} {:>4} {:<5} {:>8} {:>9}  configs/{}_{}_n{:02}.cfg",
                    id.as_str(),
                    n,
                    algo.as_str(),
                    cfg.obs_dim(),
                    cfg.train.num_envs,
                    id.as_str(),
                    algo.as_str(),
                    n
                );
            }
        }
        println!("           ({})", id.description());
    }
    Ok(())
}
