//! Experiment configuration: presets for every experiment variant, a flat
//! `key = value` file format, and CLI-style overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::curriculum::CurriculumSchedule;
use crate::error::CoreError;
use crate::obs::{Encoder, EncodingMode};
use crate::physics::{PhysicsConfig, SwimmerInit, TargetSampler, TargetSpec};
use crate::ppo::{Algo, TrainConfig};
use crate::Result;

/// Experiment variants. The id pins the observation encoding and the target
/// sampling mode; swimmer count and algorithm stay free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    /// Fixed target, full state.
    Env0,
    /// Fixed target, positions only.
    Env1a,
    /// Fixed target, swarm mean pose.
    Env1b,
    /// Fixed target, mean pose over unabsorbed swimmers.
    Env1c,
    /// Random target, full state.
    Env2,
    /// Random target, full state plus target bearing, parallel envs.
    Env2Om,
    /// env-2-om plus the curriculum target schedule.
    Env2Omc,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::Env0,
        ExperimentId::Env1a,
        ExperimentId::Env1b,
        ExperimentId::Env1c,
        ExperimentId::Env2,
        ExperimentId::Env2Om,
        ExperimentId::Env2Omc,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::Env0 => "env-0",
            ExperimentId::Env1a => "env-1a",
            ExperimentId::Env1b => "env-1b",
            ExperimentId::Env1c => "env-1c",
            ExperimentId::Env2 => "env-2",
            ExperimentId::Env2Om => "env-2-om",
            ExperimentId::Env2Omc => "env-2-omc",
        }
    }

    pub fn encoding_mode(&self) -> EncodingMode {
        match self {
            ExperimentId::Env0 | ExperimentId::Env2 => EncodingMode::FullState,
            ExperimentId::Env1a => EncodingMode::PositionsOnly,
            ExperimentId::Env1b => EncodingMode::MeanPose,
            ExperimentId::Env1c => EncodingMode::MeanPoseUnabsorbed,
            ExperimentId::Env2Om | ExperimentId::Env2Omc => EncodingMode::FullStateTargetBearing,
        }
    }

    pub fn fixed_target(&self) -> bool {
        matches!(
            self,
            ExperimentId::Env0 | ExperimentId::Env1a | ExperimentId::Env1b | ExperimentId::Env1c
        )
    }

    pub fn curriculum(&self) -> bool {
        matches!(self, ExperimentId::Env2Omc)
    }

    pub fn default_num_envs(&self) -> usize {
        match self {
            ExperimentId::Env2Om => 4,
            ExperimentId::Env2Omc => 2,
            _ => 1,
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            ExperimentId::Env0 => "constant target location and size, full state",
            ExperimentId::Env1a => "positional state information only",
            ExperimentId::Env1b => "swarm mean position and orientation",
            ExperimentId::Env1c => "mean pose of swimmers outside the target",
            ExperimentId::Env2 => "random target location and size, full state",
            ExperimentId::Env2Om => "random target, bearing feature, 4 parallel envs",
            ExperimentId::Env2Omc => "curriculum target distances, 2 parallel envs",
        }
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| CoreError::config(format!("unknown experiment '{s}'")))
    }
}

/// Everything needed to run one training or evaluation job.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub n_swimmers: usize,
    pub seed: u64,

    // Physics.
    pub spacing: f64,
    pub velocity: f64,
    pub dt: f64,
    pub max_steps: u32,
    pub abort_distance: f64,
    pub hydro_coupling: f64,

    // Observation encoding.
    pub circular_mean: bool,

    // Fixed-target modes.
    pub target_x: f64,
    pub target_y: f64,
    pub target_radius: f64,

    // Random-target modes.
    pub target_half_extent: f64,
    pub disc_target_sampling: bool,
    pub target_radius_min: f64,
    pub target_radius_max: f64,

    // Curriculum schedule.
    pub curriculum_start_distance: f64,
    pub curriculum_final_distance: f64,
    pub curriculum_decay: f64,

    pub train: TrainConfig,

    /// Updates between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: u64,
    /// Trailing window (episodes) for the smoothed return.
    pub smoothing_window: usize,
}

impl ExperimentConfig {
    /// Fixed target used by the constant-target experiments.
    pub const DEFAULT_FIXED_TARGET: (f64, f64, f64) = (10.56, 41.63, 9.36);

    /// Preset for one Table-style cell: experiment id, algorithm, swarm size.
    pub fn preset(experiment: ExperimentId, algo: Algo, n_swimmers: usize, seed: u64) -> Self {
        let (tx, ty, tr) = Self::DEFAULT_FIXED_TARGET;
        ExperimentConfig {
            experiment,
            n_swimmers,
            seed,
            spacing: SwimmerInit::DEFAULT_SPACING,
            velocity: 10.0,
            dt: 0.1,
            max_steps: 500,
            abort_distance: 200.0,
            hydro_coupling: 2.0,
            circular_mean: false,
            target_x: tx,
            target_y: ty,
            target_radius: tr,
            target_half_extent: 100.0,
            disc_target_sampling: false,
            target_radius_min: 5.0,
            target_radius_max: 20.0,
            curriculum_start_distance: 20.0,
            curriculum_final_distance: 100.0,
            curriculum_decay: if n_swimmers >= 25 { 2000.0 } else { 1000.0 },
            train: TrainConfig {
                algo,
                num_envs: experiment.default_num_envs(),
                ..TrainConfig::default()
            },
            checkpoint_interval: 0,
            smoothing_window: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        SwimmerInit::from_count(self.n_swimmers, self.spacing)?;
        self.physics_config().validate()?;
        self.train.validate()?;
        if !(self.target_radius_min > 0.0 && self.target_radius_min <= self.target_radius_max) {
            return Err(CoreError::config("target radius range must satisfy 0 < min <= max"));
        }
        if self.experiment.fixed_target() {
            let dist = (self.target_x * self.target_x + self.target_y * self.target_y).sqrt();
            if dist > self.abort_distance {
                return Err(CoreError::config(format!(
                    "fixed target at distance {dist:.1} um starts beyond the abort distance"
                )));
            }
        }
        if self.experiment.curriculum() {
            CurriculumSchedule::new(
                self.curriculum_start_distance,
                self.curriculum_final_distance,
                self.curriculum_decay,
            )?;
        }
        if self.smoothing_window == 0 {
            return Err(CoreError::config("smoothing_window must be >= 1"));
        }
        Ok(())
    }

    pub fn physics_config(&self) -> PhysicsConfig {
        PhysicsConfig {
            velocity: self.velocity,
            dt: self.dt,
            hydro_coupling: self.hydro_coupling,
            max_steps: self.max_steps,
            abort_distance: self.abort_distance,
            ..PhysicsConfig::default()
        }
    }

    pub fn swimmer_init(&self) -> Result<SwimmerInit> {
        SwimmerInit::from_count(self.n_swimmers, self.spacing)
    }

    pub fn encoder(&self) -> Encoder {
        Encoder {
            mode: self.experiment.encoding_mode(),
            circular_mean: self.circular_mean,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.experiment.encoding_mode().obs_dim(self.n_swimmers)
    }

    /// Builds the curriculum schedule when this experiment uses one. The
    /// schedule carries the shared episode counter, so build it once and
    /// clone it into every environment's sampler.
    pub fn curriculum_schedule(&self) -> Result<Option<CurriculumSchedule>> {
        if self.experiment.curriculum() {
            Ok(Some(CurriculumSchedule::new(
                self.curriculum_start_distance,
                self.curriculum_final_distance,
                self.curriculum_decay,
            )?))
        } else {
            Ok(None)
        }
    }

    pub fn target_sampler(&self, schedule: Option<CurriculumSchedule>) -> Result<TargetSampler> {
        let radius_range = (self.target_radius_min, self.target_radius_max);
        Ok(match self.experiment {
            ExperimentId::Env0 | ExperimentId::Env1a | ExperimentId::Env1b | ExperimentId::Env1c => {
                TargetSampler::Fixed(TargetSpec::new(self.target_x, self.target_y, self.target_radius))
            }
            ExperimentId::Env2 | ExperimentId::Env2Om => {
                if self.disc_target_sampling {
                    TargetSampler::UniformDisc {
                        max_distance: self.target_half_extent,
                        radius_range,
                    }
                } else {
                    TargetSampler::UniformSquare {
                        half_extent: self.target_half_extent,
                        radius_range,
                    }
                }
            }
            ExperimentId::Env2Omc => TargetSampler::Curriculum {
                schedule: schedule.ok_or_else(|| {
                    CoreError::config("curriculum experiment requires a schedule")
                })?,
                radius_range,
            },
        })
    }

    /// Serializes as the flat key-value format, keys in a stable order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let hidden = t
            .hidden_dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("experiment", self.experiment.as_str().to_string()),
            ("algo", t.algo.as_str().to_string()),
            ("n_swimmers", self.n_swimmers.to_string()),
            ("seed", self.seed.to_string()),
            ("spacing", self.spacing.to_string()),
            ("velocity", self.velocity.to_string()),
            ("dt", self.dt.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("abort_distance", self.abort_distance.to_string()),
            ("hydro_coupling", self.hydro_coupling.to_string()),
            ("circular_mean", self.circular_mean.to_string()),
            ("target_x", self.target_x.to_string()),
            ("target_y", self.target_y.to_string()),
            ("target_radius", self.target_radius.to_string()),
            ("target_half_extent", self.target_half_extent.to_string()),
            ("disc_target_sampling", self.disc_target_sampling.to_string()),
            ("target_radius_min", self.target_radius_min.to_string()),
            ("target_radius_max", self.target_radius_max.to_string()),
            ("curriculum_start_distance", self.curriculum_start_distance.to_string()),
            ("curriculum_final_distance", self.curriculum_final_distance.to_string()),
            ("curriculum_decay", self.curriculum_decay.to_string()),
            ("gamma", t.gamma.to_string()),
            ("gae_lambda", t.gae_lambda.to_string()),
            ("clip_coef", t.clip_coef.to_string()),
            ("num_envs", t.num_envs.to_string()),
            ("rollout_horizon", t.rollout_horizon.to_string()),
            ("minibatches", t.minibatches.to_string()),
            ("update_epochs", t.update_epochs.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("anneal_lr", t.anneal_lr.to_string()),
            ("entropy_coef", t.entropy_coef.to_string()),
            ("value_coef", t.value_coef.to_string()),
            ("max_grad_norm", t.max_grad_norm.to_string()),
            ("total_timesteps", t.total_timesteps.to_string()),
            ("rpo_alpha", t.rpo_alpha.to_string()),
            ("action_low", t.action_low.to_string()),
            ("action_high", t.action_high.to_string()),
            ("hidden_dims", hidden),
            ("adam_eps", t.adam_eps.to_string()),
            ("clip_value_loss", t.clip_value_loss.to_string()),
            ("normalize_advantages", t.normalize_advantages.to_string()),
            ("normalize_rewards", t.normalize_rewards.to_string()),
            ("bootstrap_on_truncation", t.bootstrap_on_truncation.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("smoothing_window", self.smoothing_window.to_string()),
        ]
    }

    /// Parses the flat `key = value` format. Lines starting with `#` and
    /// blank lines are ignored; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CoreError::config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let experiment: ExperimentId = map
            .get("experiment")
            .ok_or_else(|| CoreError::config("missing required key 'experiment'"))?
            .parse()?;
        let algo: Algo = map.get("algo").map(|s| s.parse()).transpose()?.unwrap_or(Algo::Ppo);
        let n_swimmers = map
            .get("n_swimmers")
            .map(|s| parse_num::<usize>("n_swimmers", s))
            .transpose()?
            .unwrap_or(4);
        let seed =
            map.get("seed").map(|s| parse_num::<u64>("seed", s)).transpose()?.unwrap_or(1);

        let mut cfg = ExperimentConfig::preset(experiment, algo, n_swimmers, seed);
        for (key, value) in &map {
            cfg.set_key(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CoreError::config(format!("override '{pair}' is not key=value")))?;
        self.set_key(key.trim(), value.trim())
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "experiment" => {
                self.experiment = value.parse()?;
                // Keep the env-count convention unless explicitly overridden later.
                t.num_envs = self.experiment.default_num_envs();
            }
            "algo" => t.algo = value.parse()?,
            "n_swimmers" => self.n_swimmers = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "spacing" => self.spacing = parse_num(key, value)?,
            "velocity" => self.velocity = parse_num(key, value)?,
            "dt" => self.dt = parse_num(key, value)?,
            "max_steps" => self.max_steps = parse_num(key, value)?,
            "abort_distance" => self.abort_distance = parse_num(key, value)?,
            "hydro_coupling" => self.hydro_coupling = parse_num(key, value)?,
            "circular_mean" => self.circular_mean = parse_bool(key, value)?,
            "target_x" => self.target_x = parse_num(key, value)?,
            "target_y" => self.target_y = parse_num(key, value)?,
            "target_radius" => self.target_radius = parse_num(key, value)?,
            "target_half_extent" => self.target_half_extent = parse_num(key, value)?,
            "disc_target_sampling" => self.disc_target_sampling = parse_bool(key, value)?,
            "target_radius_min" => self.target_radius_min = parse_num(key, value)?,
            "target_radius_max" => self.target_radius_max = parse_num(key, value)?,
            "curriculum_start_distance" => self.curriculum_start_distance = parse_num(key, value)?,
            "curriculum_final_distance" => self.curriculum_final_distance = parse_num(key, value)?,
            "curriculum_decay" => self.curriculum_decay = parse_num(key, value)?,
            "gamma" => t.gamma = parse_num(key, value)?,
            "gae_lambda" => t.gae_lambda = parse_num(key, value)?,
            "clip_coef" => t.clip_coef = parse_num(key, value)?,
            "num_envs" => t.num_envs = parse_num(key, value)?,
            "rollout_horizon" => t.rollout_horizon = parse_num(key, value)?,
            "minibatches" => t.minibatches = parse_num(key, value)?,
            "update_epochs" => t.update_epochs = parse_num(key, value)?,
            "learning_rate" => t.learning_rate = parse_num(key, value)?,
            "anneal_lr" => t.anneal_lr = parse_bool(key, value)?,
            "entropy_coef" => t.entropy_coef = parse_num(key, value)?,
            "value_coef" => t.value_coef = parse_num(key, value)?,
            "max_grad_norm" => t.max_grad_norm = parse_num(key, value)?,
            "total_timesteps" => t.total_timesteps = parse_num(key, value)?,
            "rpo_alpha" => t.rpo_alpha = parse_num(key, value)?,
            "action_low" => t.action_low = parse_num(key, value)?,
            "action_high" => t.action_high = parse_num(key, value)?,
            "hidden_dims" => {
                let dims: Result<Vec<usize>> = value
                    .split(',')
                    .map(|d| parse_num::<usize>("hidden_dims", d.trim()))
                    .collect();
                t.hidden_dims = dims?;
            }
            "adam_eps" => t.adam_eps = parse_num(key, value)?,
            "clip_value_loss" => t.clip_value_loss = parse_bool(key, value)?,
            "normalize_advantages" => t.normalize_advantages = parse_bool(key, value)?,
            "normalize_rewards" => t.normalize_rewards = parse_bool(key, value)?,
            "bootstrap_on_truncation" => t.bootstrap_on_truncation = parse_bool(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse_num(key, value)?,
            "smoothing_window" => self.smoothing_window = parse_num(key, value)?,
            other => return Err(CoreError::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Short name for run directories and file stems.
    pub fn run_name(&self) -> String {
        format!(
            "{}_{}_n{:02}_seed{}",
            self.experiment.as_str(),
            self.train.algo.as_str(),
            self.n_swimmers,
            self.seed
        )
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| CoreError::config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(CoreError::config(format!("key '{key}': expected bool, got '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips_through_text() {
        for id in ExperimentId::ALL {
            let cfg = ExperimentConfig::preset(id, Algo::Rpo, 16, 7);
            let text = cfg.to_text();
            let parsed = ExperimentConfig::parse(&text).unwrap();
            assert_eq!(parsed, cfg);
        }
    }

    #[test]
    fn experiment_pins_encoding_and_envs() {
        let cfg = ExperimentConfig::preset(ExperimentId::Env2Om, Algo::Rpo, 16, 1);
        assert_eq!(cfg.obs_dim(), 52);
        assert_eq!(cfg.train.num_envs, 4);
        let cfg = ExperimentConfig::preset(ExperimentId::Env2Omc, Algo::Rpo, 16, 1);
        assert_eq!(cfg.train.num_envs, 2);
        assert_eq!(cfg.curriculum_decay, 1000.0);
        let cfg = ExperimentConfig::preset(ExperimentId::Env2Omc, Algo::Rpo, 25, 1);
        assert_eq!(cfg.curriculum_decay, 2000.0);
    }

    #[test]
    fn unknown_key_is_error() {
        let text = "experiment = env-0\nbogus_key = 3\n";
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = ExperimentConfig::preset(ExperimentId::Env0, Algo::Ppo, 4, 1);
        cfg.apply_override("total_timesteps=50000").unwrap();
        cfg.apply_override("hidden_dims=64,64").unwrap();
        assert_eq!(cfg.train.total_timesteps, 50_000);
        assert_eq!(cfg.train.hidden_dims, vec![64, 64]);
        assert!(cfg.apply_override("nope=1").is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# a comment\n\nexperiment = env-1b\nalgo = rpo\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.experiment, ExperimentId::Env1b);
        assert_eq!(cfg.train.algo, Algo::Rpo);
        assert_eq!(cfg.obs_dim(), 6);
    }
}
