//! Observation encodings and running normalization.
//!
//! Each experiment variant exposes a different view of the swarm. Layout is
//! always `[per-swimmer block(s)..., target block]`, with the optional
//! target-bearing scalar appended last.

use serde::{Deserialize, Serialize};

use crate::physics::{wrap_angle, SwarmState, TargetSpec, Vec2};

/// Divisor guard added to the variance before taking the square root.
pub const NORM_EPS: f64 = 1e-8;
/// Normalized observations are clipped to `[-OBS_CLIP, OBS_CLIP]`.
pub const OBS_CLIP: f64 = 10.0;

/// Which view of the swarm the agent observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncodingMode {
    /// `(x_i, y_i, theta_i)` per swimmer plus `(x_t, y_t, r_t)`.
    FullState,
    /// `(x_i, y_i)` per swimmer plus the target block.
    PositionsOnly,
    /// Swarm mean `(x, y, theta)` plus the target block.
    MeanPose,
    /// Mean over unabsorbed swimmers only; falls back to the all-swimmer
    /// mean once everyone is absorbed.
    MeanPoseUnabsorbed,
    /// Full state plus the bearing from the swarm mean to the target center.
    FullStateTargetBearing,
}

impl EncodingMode {
    /// Observation length for a swarm of `n` swimmers.
    pub fn obs_dim(&self, n: usize) -> usize {
        match self {
            EncodingMode::FullState => 3 * n + 3,
            EncodingMode::PositionsOnly => 2 * n + 3,
            EncodingMode::MeanPose | EncodingMode::MeanPoseUnabsorbed => 6,
            EncodingMode::FullStateTargetBearing => 3 * n + 4,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EncodingMode::FullState => "full_state",
            EncodingMode::PositionsOnly => "positions_only",
            EncodingMode::MeanPose => "mean_pose",
            EncodingMode::MeanPoseUnabsorbed => "mean_pose_unabsorbed",
            EncodingMode::FullStateTargetBearing => "full_state_target_bearing",
        }
    }
}

/// Observation encoder: the mode plus the angle-averaging convention.
#[derive(Debug, Clone, Copy)]
pub struct Encoder {
    pub mode: EncodingMode,
    /// When set, mean orientation uses the circular mean instead of the
    /// arithmetic mean of canonicalized angles.
    pub circular_mean: bool,
}

impl Encoder {
    pub fn new(mode: EncodingMode) -> Self {
        Encoder {
            mode,
            circular_mean: false,
        }
    }

    pub fn obs_dim(&self, n: usize) -> usize {
        self.mode.obs_dim(n)
    }

    fn mean_orientation(&self, angles: impl Iterator<Item = f64> + Clone) -> f64 {
        if self.circular_mean {
            let (mut s, mut c, mut n) = (0.0, 0.0, 0usize);
            for a in angles {
                s += a.sin();
                c += a.cos();
                n += 1;
            }
            debug_assert!(n > 0);
            wrap_angle(s.atan2(c))
        } else {
            let (mut sum, mut n) = (0.0, 0usize);
            for a in angles {
                sum += wrap_angle(a);
                n += 1;
            }
            debug_assert!(n > 0);
            sum / n as f64
        }
    }

    /// Encodes the state into a flat observation vector.
    pub fn encode(&self, state: &SwarmState, target: &TargetSpec) -> Vec<f64> {
        let n = state.swimmer_count();
        let mut out = Vec::with_capacity(self.obs_dim(n));
        match self.mode {
            EncodingMode::FullState | EncodingMode::FullStateTargetBearing => {
                for i in 0..n {
                    out.push(state.positions[i].x);
                    out.push(state.positions[i].y);
                    out.push(state.orientations[i]);
                }
            }
            EncodingMode::PositionsOnly => {
                for p in &state.positions {
                    out.push(p.x);
                    out.push(p.y);
                }
            }
            EncodingMode::MeanPose => {
                let m = state.mean_position();
                out.push(m.x);
                out.push(m.y);
                out.push(self.mean_orientation(state.orientations.iter().copied()));
            }
            EncodingMode::MeanPoseUnabsorbed => {
                let active: Vec<usize> =
                    (0..n).filter(|&i| !state.absorbed[i]).collect();
                if active.is_empty() {
                    let m = state.mean_position();
                    out.push(m.x);
                    out.push(m.y);
                    out.push(self.mean_orientation(state.orientations.iter().copied()));
                } else {
                    let k = active.len() as f64;
                    let mut mean = Vec2::ZERO;
                    for &i in &active {
                        mean = mean + state.positions[i];
                    }
                    out.push(mean.x / k);
                    out.push(mean.y / k);
                    out.push(
                        self.mean_orientation(active.iter().map(|&i| state.orientations[i])),
                    );
                }
            }
        }
        out.push(target.center.x);
        out.push(target.center.y);
        out.push(target.radius);
        if self.mode == EncodingMode::FullStateTargetBearing {
            let m = state.mean_position();
            out.push((target.center.y - m.y).atan2(target.center.x - m.x));
        }
        debug_assert_eq!(out.len(), self.obs_dim(n));
        out
    }
}

/// Streaming per-component mean/variance with clipped standardization.
///
/// Statistics accumulate with Welford's update; variance is the population
/// variance of everything seen so far. Before any update the normalizer
/// behaves as mean 0, variance 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: f64,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            count: 0.0,
        }
    }

    pub fn from_parts(mean: Vec<f64>, m2: Vec<f64>, count: f64) -> Self {
        assert_eq!(mean.len(), m2.len());
        Normalizer { mean, m2, count }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Sum of squared deviations (the raw Welford accumulator).
    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn variance(&self, k: usize) -> f64 {
        if self.count > 0.0 {
            self.m2[k] / self.count
        } else {
            1.0
        }
    }

    /// Folds one observation into the running statistics.
    pub fn update(&mut self, obs: &[f64]) {
        assert_eq!(obs.len(), self.dim(), "observation dimension mismatch");
        self.count += 1.0;
        for k in 0..obs.len() {
            let delta = obs[k] - self.mean[k];
            self.mean[k] += delta / self.count;
            self.m2[k] += delta * (obs[k] - self.mean[k]);
        }
    }

    /// Standardizes and clips without touching the statistics.
    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        assert_eq!(obs.len(), self.dim(), "observation dimension mismatch");
        obs.iter()
            .enumerate()
            .map(|(k, &v)| {
                let z = (v - self.mean[k]) / (self.variance(k) + NORM_EPS).sqrt();
                z.clamp(-OBS_CLIP, OBS_CLIP)
            })
            .collect()
    }

    /// Training-mode entry point: optionally update, then standardize.
    pub fn normalize_mut(&mut self, obs: &[f64], update: bool) -> Vec<f64> {
        if update {
            self.update(obs);
        }
        self.normalize(obs)
    }
}
