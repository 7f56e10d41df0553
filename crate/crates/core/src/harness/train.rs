//! The training driver: owns the policy, optimizer, normalizer, RNG
//! streams, and environments; steps them one update at a time; and handles
//! run artifacts and checkpoint resume.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curriculum::CurriculumSchedule;
use crate::env::{RewardNormalizer, SwarmEnv, VecEnv};
use crate::error::CoreError;
use crate::harness::checkpoint::{Checkpoint, EnvSnapshot, RewardNormSnapshot, RngSnapshot};
use crate::harness::config::ExperimentConfig;
use crate::harness::records::{
    smoothed_return, CsvFile, EpisodeRecord, UpdateRecord, EPISODE_CSV_HEADER, UPDATE_CSV_HEADER,
};
use crate::nn::{AdamState, PolicyParams};
use crate::obs::Normalizer;
use crate::ppo::{collect_rollout, ppo_update, RolloutBuffer};
use crate::Result;

/// Stream ids carved out of the master seed; every consumer of randomness
/// gets its own ChaCha stream so adding draws in one place never perturbs
/// another.
const STREAM_POLICY_INIT: u64 = 0;
const STREAM_ACTIONS: u64 = 1;
const STREAM_UPDATE: u64 = 2;
const STREAM_RPO: u64 = 3;
const STREAM_ENV_BASE: u64 = 10;

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One full training job.
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub policy: PolicyParams,
    pub adam: AdamState,
    pub normalizer: Normalizer,
    pub vec_env: VecEnv,
    pub curriculum: Option<CurriculumSchedule>,
    pub action_rng: ChaCha8Rng,
    pub update_rng: ChaCha8Rng,
    pub rpo_rng: ChaCha8Rng,
    pub global_step: u64,
    /// Completed updates.
    pub update_index: u64,
    pub episodes_completed: u64,
    /// Undiscounted return of every completed episode, for smoothing.
    pub episode_returns: Vec<u32>,
    buffer: RolloutBuffer,
}

fn build_envs(
    cfg: &ExperimentConfig,
    schedule: Option<&CurriculumSchedule>,
) -> Result<Vec<SwarmEnv>> {
    let init = cfg.swimmer_init()?;
    let physics = cfg.physics_config();
    let encoder = cfg.encoder();
    (0..cfg.train.num_envs)
        .map(|i| {
            let sampler = cfg.target_sampler(schedule.cloned())?;
            SwarmEnv::new(
                init.clone(),
                physics.clone(),
                sampler,
                encoder,
                seeded_stream(cfg.seed, STREAM_ENV_BASE + i as u64),
            )
        })
        .collect()
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let obs_dim = cfg.obs_dim();
        let curriculum = cfg.curriculum_schedule()?;
        let envs = build_envs(&cfg, curriculum.as_ref())?;

        let mut init_rng = seeded_stream(cfg.seed, STREAM_POLICY_INIT);
        let policy = PolicyParams::new(obs_dim, &cfg.train.hidden_dims, &mut init_rng)?;
        let mut adam = AdamState::new(policy.param_count(), cfg.train.learning_rate);
        adam.eps = cfg.train.adam_eps;

        let mut normalizer = Normalizer::new(obs_dim);
        let mut vec_env = VecEnv::new(envs, &mut normalizer, true)?;
        if cfg.train.normalize_rewards {
            vec_env.reward_norm =
                Some(RewardNormalizer::new(cfg.train.num_envs, cfg.train.gamma));
        }
        let buffer = RolloutBuffer::new(cfg.train.num_envs, cfg.train.rollout_horizon, obs_dim);

        Ok(Trainer {
            action_rng: seeded_stream(cfg.seed, STREAM_ACTIONS),
            update_rng: seeded_stream(cfg.seed, STREAM_UPDATE),
            rpo_rng: seeded_stream(cfg.seed, STREAM_RPO),
            policy,
            adam,
            normalizer,
            vec_env,
            curriculum,
            global_step: 0,
            update_index: 0,
            episodes_completed: 0,
            episode_returns: Vec::new(),
            buffer,
            cfg,
        })
    }

    pub fn num_updates(&self) -> u64 {
        self.cfg.train.num_updates()
    }

    pub fn finished(&self) -> bool {
        self.update_index >= self.num_updates()
    }

    pub fn smoothed_return(&self) -> f64 {
        smoothed_return(&self.episode_returns, self.cfg.smoothing_window)
    }

    /// Collects one rollout and applies one PPO/RPO update. Returns the
    /// episodes completed during the rollout and the update diagnostics.
    pub fn train_one_update(&mut self) -> Result<(Vec<EpisodeRecord>, UpdateRecord)> {
        if self.finished() {
            return Err(CoreError::contract("training already finished"));
        }
        let t = self.cfg.train.clone();
        let update = self.update_index + 1;
        self.adam.lr = if t.anneal_lr {
            t.learning_rate * (1.0 - (update - 1) as f64 / self.num_updates() as f64)
        } else {
            t.learning_rate
        };

        let completed = collect_rollout(
            &mut self.vec_env,
            &self.policy,
            &mut self.normalizer,
            &t,
            &mut self.action_rng,
            true,
            &mut self.buffer,
        )?;
        let num_envs = t.num_envs as u64;
        let mut episode_records = Vec::with_capacity(completed.len());
        for ce in completed {
            let record = EpisodeRecord {
                global_step: self.global_step + (ce.step as u64 + 1) * num_envs,
                episode: self.episodes_completed,
                ret: ce.stats.undiscounted_return,
                length: ce.stats.length,
                reason: ce.stats.reason,
                curriculum_d: ce.stats.curriculum_distance,
            };
            self.episodes_completed += 1;
            self.episode_returns.push(ce.stats.undiscounted_return);
            episode_records.push(record);
        }
        self.global_step += (t.rollout_horizon as u64) * num_envs;

        self.buffer.compute_advantages(t.gamma, t.gae_lambda);
        let diag = ppo_update(
            &self.buffer,
            &mut self.policy,
            &mut self.adam,
            &t,
            &mut self.update_rng,
            &mut self.rpo_rng,
        )?;
        self.update_index = update;

        let update_record = UpdateRecord {
            update,
            global_step: self.global_step,
            diag,
            smoothed_return: self.smoothed_return(),
        };
        Ok((episode_records, update_record))
    }

    /// Freezes the complete trainer state.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let envs = self
            .vec_env
            .envs
            .iter()
            .zip(&self.vec_env.norm_obs)
            .map(|(env, norm_obs)| EnvSnapshot {
                rng: RngSnapshot::capture(&env.rng),
                episodes_started: env.episodes_started(),
                episode_return: env.episode_return(),
                draw: env.current_draw(),
                state: env.state.clone(),
                target: env.target,
                norm_obs: norm_obs.clone(),
            })
            .collect();
        let (m, v) = self.adam.moments();
        let window = self.cfg.smoothing_window.min(self.episode_returns.len());
        Checkpoint {
            config_text: self.cfg.to_text(),
            global_step: self.global_step,
            update_index: self.update_index,
            episodes_completed: self.episodes_completed,
            recent_returns: self.episode_returns[self.episode_returns.len() - window..].to_vec(),
            policy: self.policy.clone(),
            adam_t: self.adam.t,
            adam_lr: self.adam.lr,
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
            normalizer_mean: self.normalizer.mean().to_vec(),
            normalizer_m2: self.normalizer.m2().to_vec(),
            normalizer_count: self.normalizer.count(),
            action_rng: RngSnapshot::capture(&self.action_rng),
            update_rng: RngSnapshot::capture(&self.update_rng),
            rpo_rng: RngSnapshot::capture(&self.rpo_rng),
            curriculum_episodes: self.curriculum.as_ref().map(|c| c.episodes_started()),
            reward_norm: self.vec_env.reward_norm.as_ref().map(|rn| {
                let (returns, count, mean, m2) = rn.parts();
                RewardNormSnapshot { count, mean, m2, returns: returns.to_vec() }
            }),
            envs,
        }
    }

    /// Rebuilds a trainer mid-run; continuing from here reproduces the
    /// uninterrupted run step for step.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = ck.config()?;
        if ck.envs.len() != cfg.train.num_envs {
            return Err(CoreError::checkpoint(format!(
                "checkpoint has {} envs but config wants {}",
                ck.envs.len(),
                cfg.train.num_envs
            )));
        }
        if ck.policy.obs_dim() != cfg.obs_dim() || ck.normalizer_mean.len() != cfg.obs_dim() {
            return Err(CoreError::checkpoint(format!(
                "observation dimension mismatch: checkpoint {} vs config {}",
                ck.policy.obs_dim(),
                cfg.obs_dim()
            )));
        }

        let mut trainer = Trainer::new(cfg)?;
        trainer.policy = ck.policy.clone();
        trainer.adam = AdamState::new(ck.policy.param_count(), ck.adam_lr);
        trainer.adam.eps = trainer.cfg.train.adam_eps;
        trainer.adam.restore_moments(ck.adam_t, ck.adam_m.clone(), ck.adam_v.clone());
        trainer.normalizer = ck.normalizer();
        trainer.action_rng = ck.action_rng.restore();
        trainer.update_rng = ck.update_rng.restore();
        trainer.rpo_rng = ck.rpo_rng.restore();
        trainer.global_step = ck.global_step;
        trainer.update_index = ck.update_index;
        trainer.episodes_completed = ck.episodes_completed;
        trainer.episode_returns = ck.recent_returns.clone();

        if let (Some(schedule), Some(count)) = (&trainer.curriculum, ck.curriculum_episodes) {
            schedule.set_episodes_started(count);
        }
        for (env, snap) in trainer.vec_env.envs.iter_mut().zip(&ck.envs) {
            env.restore(
                snap.state.clone(),
                snap.target,
                snap.episodes_started,
                snap.draw,
                snap.episode_return,
                snap.rng.restore(),
            );
        }
        trainer.vec_env.norm_obs = ck.envs.iter().map(|s| s.norm_obs.clone()).collect();
        match (&mut trainer.vec_env.reward_norm, &ck.reward_norm) {
            (Some(rn), Some(snap)) => {
                rn.restore(snap.returns.clone(), snap.count, snap.mean, snap.m2)
            }
            (None, None) => {}
            _ => {
                return Err(CoreError::checkpoint(
                    "reward normalization flag disagrees with checkpoint",
                ))
            }
        }
        Ok(trainer)
    }
}

/// Result of a full (or aborted) training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub global_step: u64,
    pub episodes: u64,
    pub final_smoothed_return: f64,
}

/// Runs the trainer to completion, writing `episodes.csv`, `updates.csv`,
/// `config.cfg`, and checkpoints under `run_dir`. On a non-finite loss the
/// current state is saved to `aborted.ckpt` before the error surfaces.
pub fn run_training(trainer: &mut Trainer, run_dir: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(run_dir)?;
    fs::write(run_dir.join("config.cfg"), trainer.cfg.to_text())?;

    let episodes_path = run_dir.join("episodes.csv");
    let updates_path = run_dir.join("updates.csv");
    let resuming = trainer.update_index > 0;
    let (mut episodes_csv, mut updates_csv) = if resuming && episodes_path.exists() {
        (CsvFile::append(&episodes_path)?, CsvFile::append(&updates_path)?)
    } else {
        (
            CsvFile::create(&episodes_path, EPISODE_CSV_HEADER)?,
            CsvFile::create(&updates_path, UPDATE_CSV_HEADER)?,
        )
    };

    let final_path = run_dir.join("final.ckpt");
    while !trainer.finished() {
        match trainer.train_one_update() {
            Ok((episodes, update)) => {
                for record in &episodes {
                    episodes_csv.write_line(&record.to_csv_line())?;
                }
                updates_csv.write_line(&update.to_csv_line())?;
                if trainer.cfg.checkpoint_interval > 0
                    && trainer.update_index % trainer.cfg.checkpoint_interval == 0
                {
                    trainer.to_checkpoint().save(&run_dir.join("latest.ckpt"))?;
                }
            }
            Err(err @ CoreError::Diverged(_)) => {
                episodes_csv.flush()?;
                updates_csv.flush()?;
                trainer.to_checkpoint().save(&run_dir.join("aborted.ckpt"))?;
                return Err(err);
            }
            Err(err) => return Err(err),
        }
    }
    episodes_csv.flush()?;
    updates_csv.flush()?;
    trainer.to_checkpoint().save(&final_path)?;

    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        checkpoint: final_path,
        global_step: trainer.global_step,
        episodes: trainer.episodes_completed,
        final_smoothed_return: trainer.smoothed_return(),
    })
}
