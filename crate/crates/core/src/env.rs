//! Gym-style episode wrapper around the physics plus synchronous
//! vectorization with auto-reset.
//!
//! Each environment owns its RNG, so a set of environments stepped in a
//! fixed order is fully deterministic. Observation normalization is shared
//! across environments and lives in the trainer; the vector wrapper caches
//! each environment's current (already normalized) observation so an
//! observation is folded into the running statistics exactly once.

use rand_chacha::ChaCha8Rng;

use crate::obs::{Encoder, Normalizer};
use crate::physics::{
    self, EpisodeDraw, PhysicsConfig, StepOutcome, SwarmState, SwimmerInit, TargetSampler,
    TargetSpec, TerminationReason,
};
use crate::Result;

/// Summary of a finished episode, emitted when an environment auto-resets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    /// Undiscounted return: total swimmers absorbed.
    pub undiscounted_return: u32,
    /// Steps taken in the episode.
    pub length: u32,
    pub reason: TerminationReason,
    /// Distance bound the curriculum used for this episode's target, if any.
    pub curriculum_distance: Option<f64>,
}

/// One micro-swimmer episode stream.
#[derive(Debug, Clone)]
pub struct SwarmEnv {
    pub init: SwimmerInit,
    pub physics: PhysicsConfig,
    pub sampler: TargetSampler,
    pub encoder: Encoder,
    pub rng: ChaCha8Rng,
    pub state: SwarmState,
    pub target: TargetSpec,
    episodes_started: u64,
    current_draw: EpisodeDraw,
    ep_return: u32,
}

impl SwarmEnv {
    pub fn new(
        init: SwimmerInit,
        physics: PhysicsConfig,
        sampler: TargetSampler,
        encoder: Encoder,
        mut rng: ChaCha8Rng,
    ) -> Result<Self> {
        physics.validate()?;
        let (state, target, current_draw) = physics::reset(&init, &sampler, &mut rng, 0)?;
        Ok(SwarmEnv {
            init,
            physics,
            sampler,
            encoder,
            rng,
            state,
            target,
            episodes_started: 1,
            current_draw,
            ep_return: 0,
        })
    }

    pub fn swimmer_count(&self) -> usize {
        self.init.swimmer_count()
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.obs_dim(self.swimmer_count())
    }

    /// Un-normalized observation of the current state.
    pub fn raw_obs(&self) -> Vec<f64> {
        self.encoder.encode(&self.state, &self.target)
    }

    pub fn episodes_started(&self) -> u64 {
        self.episodes_started
    }

    pub fn current_draw(&self) -> EpisodeDraw {
        self.current_draw
    }

    pub fn episode_return(&self) -> u32 {
        self.ep_return
    }

    /// Starts the next episode.
    pub fn reset(&mut self) -> Result<()> {
        let (state, target, draw) =
            physics::reset(&self.init, &self.sampler, &mut self.rng, self.episodes_started)?;
        self.state = state;
        self.target = target;
        self.current_draw = draw;
        self.episodes_started += 1;
        self.ep_return = 0;
        Ok(())
    }

    /// Steps without auto-reset; the caller inspects the outcome and resets.
    pub fn step_raw(&mut self, theta_m: f64) -> Result<StepOutcome> {
        let out = physics::step(&mut self.state, &self.target, theta_m, &self.physics)?;
        self.ep_return += out.reward;
        Ok(out)
    }

    /// Steps and auto-resets at termination, so the environment always holds
    /// a live state afterwards. Returns the step reward, the done flag, and
    /// the completed episode's summary when one just finished.
    pub fn step_auto_reset(&mut self, theta_m: f64) -> Result<(u32, bool, Option<EpisodeStats>)> {
        let out = self.step_raw(theta_m)?;
        if out.terminated {
            let stats = EpisodeStats {
                undiscounted_return: self.ep_return,
                length: self.state.step_count,
                reason: out.reason,
                curriculum_distance: self.current_draw.max_distance,
            };
            self.reset()?;
            Ok((out.reward, true, Some(stats)))
        } else {
            Ok((out.reward, false, None))
        }
    }

    pub(crate) fn restore(
        &mut self,
        state: SwarmState,
        target: TargetSpec,
        episodes_started: u64,
        current_draw: EpisodeDraw,
        ep_return: u32,
        rng: ChaCha8Rng,
    ) {
        self.state = state;
        self.target = target;
        self.episodes_started = episodes_started;
        self.current_draw = current_draw;
        self.ep_return = ep_return;
        self.rng = rng;
    }
}

/// Return-based reward scaling (optional ablation): rewards are divided by
/// the standard deviation of the running discounted return.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNormalizer {
    pub gamma: f64,
    returns: Vec<f64>,
    count: f64,
    mean: f64,
    m2: f64,
}

impl RewardNormalizer {
    pub fn new(num_envs: usize, gamma: f64) -> Self {
        RewardNormalizer {
            gamma,
            returns: vec![0.0; num_envs],
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn scale(&mut self, env_idx: usize, reward: f64, done: bool) -> f64 {
        let ret = self.returns[env_idx] * self.gamma + reward;
        self.returns[env_idx] = if done { 0.0 } else { ret };
        self.count += 1.0;
        let delta = ret - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (ret - self.mean);
        let var = if self.count > 0.0 { self.m2 / self.count } else { 1.0 };
        reward / (var + 1e-8).sqrt()
    }

    pub fn parts(&self) -> (&[f64], f64, f64, f64) {
        (&self.returns, self.count, self.mean, self.m2)
    }

    pub fn restore(&mut self, returns: Vec<f64>, count: f64, mean: f64, m2: f64) {
        assert_eq!(returns.len(), self.returns.len());
        self.returns = returns;
        self.count = count;
        self.mean = mean;
        self.m2 = m2;
    }
}

/// Synchronously stepped set of environments with cached normalized
/// observations.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub envs: Vec<SwarmEnv>,
    /// Current normalized observation per environment.
    pub norm_obs: Vec<Vec<f64>>,
    pub reward_norm: Option<RewardNormalizer>,
}

impl VecEnv {
    /// Wraps the environments and primes the normalized-observation cache,
    /// folding each initial observation into `normalizer` when `update`.
    pub fn new(envs: Vec<SwarmEnv>, normalizer: &mut Normalizer, update: bool) -> Result<Self> {
        assert!(!envs.is_empty());
        let dim = envs[0].obs_dim();
        for env in &envs {
            if env.obs_dim() != dim {
                return Err(crate::CoreError::config("environments disagree on observation size"));
            }
        }
        let norm_obs = envs
            .iter()
            .map(|e| normalizer.normalize_mut(&e.raw_obs(), update))
            .collect();
        Ok(VecEnv {
            envs,
            norm_obs,
            reward_norm: None,
        })
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.envs[0].obs_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obs::EncodingMode;
    use rand::SeedableRng;

    fn test_env(seed: u64) -> SwarmEnv {
        SwarmEnv::new(
            SwimmerInit::new(2, 6.0).unwrap(),
            PhysicsConfig::default(),
            TargetSampler::Fixed(TargetSpec::new(10.56, 41.63, 9.36)),
            Encoder::new(EncodingMode::FullState),
            ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn env_obs_matches_dim() {
        let env = test_env(1);
        assert_eq!(env.obs_dim(), 15);
        assert_eq!(env.raw_obs().len(), 15);
    }

    #[test]
    fn auto_reset_reports_episode_stats() {
        let mut env = test_env(2);
        let mut completed = None;
        for _ in 0..2000 {
            // Steer straight at the target center.
            let m = env.state.mean_position();
            let theta = (env.target.center.y - m.y).atan2(env.target.center.x - m.x);
            let (_, done, stats) = env.step_auto_reset(theta).unwrap();
            if done {
                completed = stats;
                break;
            }
        }
        let stats = completed.expect("an episode should finish");
        assert!(stats.length <= 500);
        assert!(stats.undiscounted_return <= 4);
        // After auto-reset the env is live again.
        assert_eq!(env.state.step_count, 0);
        assert!(env.episodes_started() >= 2);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = test_env(7);
        let mut b = test_env(7);
        for k in 0..600 {
            let theta = (k as f64) * 0.13;
            let ra = a.step_auto_reset(theta).unwrap();
            let rb = b.step_auto_reset(theta).unwrap();
            assert_eq!(ra.0, rb.0);
            assert_eq!(ra.1, rb.1);
        }
        assert_eq!(a.state, b.state);
        assert_eq!(a.raw_obs(), b.raw_obs());
    }

    #[test]
    fn reward_normalizer_scales_by_return_std() {
        let mut rn = RewardNormalizer::new(1, 0.99);
        let mut outputs = Vec::new();
        for _ in 0..50 {
            outputs.push(rn.scale(0, 1.0, false));
        }
        // Scaled rewards shrink as the running-return variance grows.
        assert!(outputs[0] > outputs[49]);
        assert!(outputs.iter().all(|v| v.is_finite() && *v > 0.0));
    }
}
