//! On-policy training: vectorized rollouts, generalized advantage
//! estimation, the clipped-surrogate update, and the RPO mean-perturbation
//! variant.
//!
//! The update path follows the usual recipe: fixed-horizon rollouts across
//! synchronized environments, advantage normalization per minibatch, ratio
//! and value clipping, several epochs of shuffled minibatches, global
//! gradient-norm clipping, Adam.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{EpisodeStats, VecEnv};
use crate::error::CoreError;
use crate::nn::{
    clip_grad_norm, gaussian_logprob_entropy, standard_normal, AdamState, PolicyGrads,
    PolicyParams,
};
use crate::obs::Normalizer;
use crate::Result;

/// Which update rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Ppo,
    Rpo,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Ppo => "ppo",
            Algo::Rpo => "rpo",
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppo" => Ok(Algo::Ppo),
            "rpo" => Ok(Algo::Rpo),
            other => Err(CoreError::config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Trainer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algo: Algo,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_coef: f64,
    pub num_envs: usize,
    pub rollout_horizon: usize,
    pub minibatches: usize,
    pub update_epochs: usize,
    pub learning_rate: f64,
    pub anneal_lr: bool,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub total_timesteps: u64,
    pub rpo_alpha: f64,
    pub action_low: f64,
    pub action_high: f64,
    pub hidden_dims: Vec<usize>,
    pub adam_eps: f64,
    pub clip_value_loss: bool,
    pub normalize_advantages: bool,
    pub normalize_rewards: bool,
    pub bootstrap_on_truncation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algo: Algo::Ppo,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_coef: 0.2,
            num_envs: 1,
            rollout_horizon: 2048,
            minibatches: 32,
            update_epochs: 10,
            learning_rate: 3e-4,
            anneal_lr: true,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            total_timesteps: 1_000_000,
            rpo_alpha: 0.5,
            action_low: -PI,
            action_high: PI,
            hidden_dims: vec![64],
            adam_eps: 1e-8,
            clip_value_loss: true,
            normalize_advantages: true,
            normalize_rewards: false,
            bootstrap_on_truncation: false,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.num_envs * self.rollout_horizon
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.minibatches
    }

    pub fn num_updates(&self) -> u64 {
        self.total_timesteps / self.batch_size() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(CoreError::config("gamma must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(CoreError::config("gae_lambda must be in [0, 1]"));
        }
        if !(self.clip_coef > 0.0) {
            return Err(CoreError::config("clip_coef must be > 0"));
        }
        if self.num_envs == 0 || self.rollout_horizon == 0 || self.minibatches == 0 {
            return Err(CoreError::config("num_envs, rollout_horizon, minibatches must be >= 1"));
        }
        if self.rollout_horizon % self.minibatches != 0 {
            return Err(CoreError::config(format!(
                "rollout_horizon {} must be divisible by minibatches {}",
                self.rollout_horizon, self.minibatches
            )));
        }
        if self.rpo_alpha < 0.0 {
            return Err(CoreError::config("rpo_alpha must be >= 0"));
        }
        if !(self.action_low < self.action_high) {
            return Err(CoreError::config("action_low must be < action_high"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(CoreError::config("hidden_dims must be non-empty positive sizes"));
        }
        if self.num_updates() == 0 {
            return Err(CoreError::config(
                "total_timesteps smaller than one rollout batch",
            ));
        }
        Ok(())
    }
}

/// Fixed-capacity trajectory storage for one update, laid out `[t][env]`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub horizon: usize,
    pub obs_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    logps: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<f64>,
    values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub bootstrap_values: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(num_envs: usize, horizon: usize, obs_dim: usize) -> Self {
        let cap = num_envs * horizon;
        RolloutBuffer {
            num_envs,
            horizon,
            obs_dim,
            obs: vec![0.0; cap * obs_dim],
            actions: vec![0.0; cap],
            logps: vec![0.0; cap],
            rewards: vec![0.0; cap],
            dones: vec![0.0; cap],
            values: vec![0.0; cap],
            advantages: vec![0.0; cap],
            returns: vec![0.0; cap],
            bootstrap_values: vec![0.0; num_envs],
        }
    }

    pub fn capacity(&self) -> usize {
        self.num_envs * self.horizon
    }

    #[inline]
    pub fn flat_index(&self, t: usize, env: usize) -> usize {
        debug_assert!(t < self.horizon && env < self.num_envs);
        t * self.num_envs + env
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        t: usize,
        env: usize,
        obs: &[f64],
        action: f64,
        logp: f64,
        reward: f64,
        done: bool,
        value: f64,
    ) {
        let i = self.flat_index(t, env);
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(obs);
        self.actions[i] = action;
        self.logps[i] = logp;
        self.rewards[i] = reward;
        self.dones[i] = if done { 1.0 } else { 0.0 };
        self.values[i] = value;
    }

    pub fn obs_at(&self, flat: usize) -> &[f64] {
        &self.obs[flat * self.obs_dim..(flat + 1) * self.obs_dim]
    }

    pub fn action_at(&self, flat: usize) -> f64 {
        self.actions[flat]
    }

    pub fn logp_at(&self, flat: usize) -> f64 {
        self.logps[flat]
    }

    pub fn value_at(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn reward_at(&self, flat: usize) -> f64 {
        self.rewards[flat]
    }

    pub fn done_at(&self, flat: usize) -> f64 {
        self.dones[flat]
    }

    /// Runs GAE per environment and fills `advantages`/`returns`.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        for env in 0..self.num_envs {
            let rewards: Vec<f64> = (0..self.horizon)
                .map(|t| self.rewards[self.flat_index(t, env)])
                .collect();
            let values: Vec<f64> = (0..self.horizon)
                .map(|t| self.values[self.flat_index(t, env)])
                .collect();
            let dones: Vec<f64> = (0..self.horizon)
                .map(|t| self.dones[self.flat_index(t, env)])
                .collect();
            let (adv, ret) =
                compute_gae(&rewards, &values, &dones, self.bootstrap_values[env], gamma, lambda);
            for t in 0..self.horizon {
                let i = self.flat_index(t, env);
                self.advantages[i] = adv[t];
                self.returns[i] = ret[t];
            }
        }
    }
}

/// Generalized advantage estimation over one environment's sequence.
///
/// `dones[t] = 1` marks a transition that ended an episode: no value
/// bootstraps across it and the recursion restarts behind it.
/// `bootstrap_value` is the critic's estimate for the state following the
/// last transition, used only when that transition is not terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[f64],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_max = rewards.len();
    assert_eq!(values.len(), t_max);
    assert_eq!(dones.len(), t_max);
    let mut advantages = vec![0.0; t_max];
    let mut returns = vec![0.0; t_max];
    let mut last_gae = 0.0;
    for t in (0..t_max).rev() {
        let nonterminal = 1.0 - dones[t];
        let next_value = if t + 1 == t_max { bootstrap_value } else { values[t + 1] };
        let delta = rewards[t] + gamma * next_value * nonterminal - values[t];
        last_gae = delta + gamma * lambda * nonterminal * last_gae;
        advantages[t] = last_gae;
        returns[t] = advantages[t] + values[t];
    }
    (advantages, returns)
}

/// A completed episode observed during a rollout, with its position in the
/// rollout for global-step bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct CompletedEpisode {
    /// Vector step within the rollout (0-based) at which the episode ended.
    pub step: usize,
    /// Environment that finished.
    pub env: usize,
    pub stats: EpisodeStats,
}

/// Collects one fixed-horizon rollout from every environment.
///
/// Per step and environment: the cached normalized observation feeds the
/// policy, an action is sampled from the Gaussian head, a copy clipped to
/// the action interval goes to the environment, and the transition is
/// recorded with the raw sampled action. Environments auto-reset; the
/// post-reset observation starts the next transition. With `update_stats`
/// every fresh observation is folded into the shared normalizer.
pub fn collect_rollout(
    vec_env: &mut VecEnv,
    policy: &PolicyParams,
    normalizer: &mut Normalizer,
    cfg: &TrainConfig,
    action_rng: &mut ChaCha8Rng,
    update_stats: bool,
    buffer: &mut RolloutBuffer,
) -> Result<Vec<CompletedEpisode>> {
    assert_eq!(buffer.num_envs, vec_env.num_envs());
    assert_eq!(buffer.horizon, cfg.rollout_horizon);
    let sigma = policy.log_std.exp();
    let mut completed = Vec::new();

    for t in 0..cfg.rollout_horizon {
        for e in 0..vec_env.num_envs() {
            let norm_obs = std::mem::take(&mut vec_env.norm_obs[e]);
            let mean = policy.actor_mean(&norm_obs);
            let value = policy.value(&norm_obs);
            let action = mean + sigma * standard_normal(action_rng);
            let (logp, _) = gaussian_logprob_entropy(mean, policy.log_std, action);
            let clipped = action.clamp(cfg.action_low, cfg.action_high);

            let (reward_raw, done, stats) = vec_env.envs[e].step_auto_reset(clipped)?;
            let mut reward = reward_raw as f64;
            if let Some(rn) = vec_env.reward_norm.as_mut() {
                reward = rn.scale(e, reward, done);
            }
            if done && cfg.bootstrap_on_truncation {
                if let Some(st) = &stats {
                    // Value-bootstrap truncated (not absorbed) endings.
                    if st.reason != crate::physics::TerminationReason::AllAbsorbed {
                        // The pre-reset final state is gone after auto-reset;
                        // approximate with the critic on the post-reset
                        // observation, which shares the frozen statistics.
                        let next_raw = vec_env.envs[e].raw_obs();
                        let next_norm = normalizer.normalize(&next_raw);
                        reward += cfg.gamma * policy.value(&next_norm);
                    }
                }
            }
            buffer.record(t, e, &norm_obs, action, logp, reward, done, value);
            if let Some(stats) = stats {
                completed.push(CompletedEpisode { step: t, env: e, stats });
            }
            let raw = vec_env.envs[e].raw_obs();
            vec_env.norm_obs[e] = normalizer.normalize_mut(&raw, update_stats);
        }
    }
    for e in 0..vec_env.num_envs() {
        buffer.bootstrap_values[e] = policy.value(&vec_env.norm_obs[e]);
    }
    Ok(completed)
}

/// Scalar terms of one minibatch loss evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub total_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub old_approx_kl: f64,
    pub clip_fraction: f64,
}

/// Normalizes `advantages` in place to mean 0 / std 1 (sample std), the
/// per-minibatch convention.
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len() as f64;
    if advantages.len() < 2 {
        return;
    }
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    for a in advantages.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// Draws the RPO mean perturbation: uniform on `[-alpha, alpha]`, or exactly
/// zero when `alpha` is zero so the PPO path is untouched bit for bit.
pub fn rpo_perturb(alpha: f64, rng: &mut ChaCha8Rng) -> f64 {
    if alpha > 0.0 {
        rng.gen_range(-alpha..=alpha)
    } else {
        0.0
    }
}

/// Evaluates the clipped-surrogate loss and its exact gradients over one
/// minibatch.
///
/// `indices` select transitions in the buffer; `advantages` are the already
/// normalized advantages aligned with `indices`; `rpo_noise`, when present,
/// is a per-sample perturbation added to the Gaussian mean before the
/// log-prob re-evaluation (the RPO modification).
pub fn minibatch_loss_grads(
    policy: &PolicyParams,
    buffer: &RolloutBuffer,
    indices: &[usize],
    advantages: &[f64],
    rpo_noise: Option<&[f64]>,
    cfg: &TrainConfig,
    grads: &mut PolicyGrads,
) -> LossTerms {
    assert_eq!(indices.len(), advantages.len());
    if let Some(noise) = rpo_noise {
        assert_eq!(noise.len(), indices.len());
    }
    grads.reset();
    let mb = indices.len() as f64;
    let inv_mb = 1.0 / mb;
    let sigma = policy.log_std.exp();
    let clip = cfg.clip_coef;

    let mut terms = LossTerms::default();
    let mut actor_out_grad = [0.0f64];
    let mut critic_out_grad = [0.0f64];

    for (k, &i) in indices.iter().enumerate() {
        let obs = buffer.obs_at(i);
        let action = buffer.action_at(i);
        let old_logp = buffer.logp_at(i);
        let old_value = buffer.value_at(i);
        let ret = buffer.returns[i];
        let adv = advantages[k];

        // Policy term.
        let (mean, actor_tape) = policy.actor.forward_tape(obs);
        let noise = rpo_noise.map(|n| n[k]).unwrap_or(0.0);
        let mean_r = mean[0] + noise;
        let (logp, entropy) = gaussian_logprob_entropy(mean_r, policy.log_std, action);
        let logratio = logp - old_logp;
        let ratio = logratio.exp();
        let pg1 = -adv * ratio;
        let pg2 = -adv * ratio.clamp(1.0 - clip, 1.0 + clip);
        let (pg, dpg_dratio) = if pg1 >= pg2 {
            (pg1, -adv)
        } else {
            let inside = ratio > 1.0 - clip && ratio < 1.0 + clip;
            (pg2, if inside { -adv } else { 0.0 })
        };
        let dpg_dlogp = dpg_dratio * ratio;
        let z = (action - mean_r) / sigma;
        // d logp / d mean_r = z / sigma ; d logp / d log_std = z^2 - 1.
        let d_mean = dpg_dlogp * z / sigma;
        let d_log_std = dpg_dlogp * (z * z - 1.0) - cfg.entropy_coef;

        actor_out_grad[0] = d_mean * inv_mb;
        policy.actor.backward(&actor_tape, &actor_out_grad, &mut grads.actor);
        grads.log_std += d_log_std * inv_mb;

        // Value term.
        let (value_out, critic_tape) = policy.critic.forward_tape(obs);
        let value = value_out[0];
        let (v_loss, dv) = if cfg.clip_value_loss {
            let unclipped = (value - ret) * (value - ret);
            let v_clipped = old_value + (value - old_value).clamp(-clip, clip);
            let clipped = (v_clipped - ret) * (v_clipped - ret);
            if unclipped >= clipped {
                (0.5 * unclipped, value - ret)
            } else {
                let inside = (value - old_value).abs() < clip;
                (0.5 * clipped, if inside { v_clipped - ret } else { 0.0 })
            }
        } else {
            (0.5 * (value - ret) * (value - ret), value - ret)
        };
        critic_out_grad[0] = cfg.value_coef * dv * inv_mb;
        policy.critic.backward(&critic_tape, &critic_out_grad, &mut grads.critic);

        terms.policy_loss += pg * inv_mb;
        terms.value_loss += v_loss * inv_mb;
        terms.entropy += entropy * inv_mb;
        terms.approx_kl += ((ratio - 1.0) - logratio) * inv_mb;
        terms.old_approx_kl += -logratio * inv_mb;
        if (ratio - 1.0).abs() > clip {
            terms.clip_fraction += inv_mb;
        }
    }
    terms.total_loss =
        terms.policy_loss + cfg.value_coef * terms.value_loss - cfg.entropy_coef * terms.entropy;
    terms
}

/// Aggregate diagnostics from one PPO/RPO update.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateDiagnostics {
    pub learning_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub old_approx_kl: f64,
    pub clip_fraction: f64,
    pub explained_variance: f64,
    pub grad_norm: f64,
    /// Minibatches skipped because their gradient was non-finite.
    pub skipped_minibatches: u64,
}

/// Runs the epochs-over-minibatches update on a full buffer.
///
/// Advantages must already be computed. The RPO variant draws one uniform
/// mean perturbation per sample per evaluation from `rpo_rng`; with
/// `rpo_alpha = 0` (or under PPO) the perturbation path contributes exactly
/// zero. Returns diagnostics averaged over the final epoch.
pub fn ppo_update(
    buffer: &RolloutBuffer,
    policy: &mut PolicyParams,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    update_rng: &mut ChaCha8Rng,
    rpo_rng: &mut ChaCha8Rng,
) -> Result<UpdateDiagnostics> {
    let batch = buffer.capacity();
    let mb_size = batch / cfg.minibatches;
    let mut indices: Vec<usize> = (0..batch).collect();
    let mut grads = PolicyGrads::zeros_like(policy);
    let mut flat_grads = Vec::with_capacity(policy.param_count());
    let mut flat_params = policy.flatten();

    let mut diag = UpdateDiagnostics {
        learning_rate: adam.lr,
        ..Default::default()
    };
    let mut mb_adv = vec![0.0; mb_size];
    let mut noise = vec![0.0; mb_size];

    for epoch in 0..cfg.update_epochs {
        indices.shuffle(update_rng);
        let last_epoch = epoch + 1 == cfg.update_epochs;
        if last_epoch {
            diag.policy_loss = 0.0;
            diag.value_loss = 0.0;
            diag.entropy = 0.0;
            diag.approx_kl = 0.0;
            diag.old_approx_kl = 0.0;
            diag.clip_fraction = 0.0;
            diag.grad_norm = 0.0;
        }
        for mb in indices.chunks_exact(mb_size) {
            for (slot, &i) in mb_adv.iter_mut().zip(mb) {
                *slot = buffer.advantages[i];
            }
            if cfg.normalize_advantages {
                normalize_advantages(&mut mb_adv);
            }
            let rpo_noise = if cfg.algo == Algo::Rpo {
                for slot in noise.iter_mut() {
                    *slot = rpo_perturb(cfg.rpo_alpha, rpo_rng);
                }
                Some(noise.as_slice())
            } else {
                None
            };
            let terms =
                minibatch_loss_grads(policy, buffer, mb, &mb_adv, rpo_noise, cfg, &mut grads);
            if !terms.total_loss.is_finite() {
                return Err(CoreError::Diverged(format!(
                    "non-finite loss in update (policy {}, value {})",
                    terms.policy_loss, terms.value_loss
                )));
            }
            grads.flatten_into(&mut flat_grads);
            let norm = clip_grad_norm(&mut flat_grads, cfg.max_grad_norm);
            if adam.step(&mut flat_params, &flat_grads) {
                policy.set_from_flat(&flat_params);
            } else {
                diag.skipped_minibatches += 1;
            }
            if last_epoch {
                let scale = 1.0 / cfg.minibatches as f64;
                diag.policy_loss += terms.policy_loss * scale;
                diag.value_loss += terms.value_loss * scale;
                diag.entropy += terms.entropy * scale;
                diag.approx_kl += terms.approx_kl * scale;
                diag.old_approx_kl += terms.old_approx_kl * scale;
                diag.clip_fraction += terms.clip_fraction * scale;
                diag.grad_norm += norm * scale;
            }
        }
    }
    debug_assert!(policy.log_std.is_finite(), "log_std must stay finite");

    // Explained variance over the whole batch.
    let n = batch as f64;
    let ret_mean = buffer.returns.iter().sum::<f64>() / n;
    let ret_var = buffer.returns.iter().map(|r| (r - ret_mean) * (r - ret_mean)).sum::<f64>() / n;
    let resid: Vec<f64> = (0..batch).map(|i| buffer.returns[i] - buffer.value_at(i)).collect();
    let resid_mean = resid.iter().sum::<f64>() / n;
    let resid_var = resid.iter().map(|r| (r - resid_mean) * (r - resid_mean)).sum::<f64>() / n;
    diag.explained_variance = if ret_var > 0.0 { 1.0 - resid_var / ret_var } else { f64::NAN };

    Ok(diag)
}
