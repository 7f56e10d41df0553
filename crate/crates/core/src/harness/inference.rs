//! Frozen-policy rollouts, line-delimited trajectory dumps, replay
//! verification, and SVG trajectory plots.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::SwarmEnv;
use crate::error::CoreError;
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::ExperimentConfig;
use crate::harness::train::seeded_stream;
use crate::nn::{standard_normal, PolicyParams};
use crate::obs::Normalizer;
use crate::physics::{self, SwarmState, TargetSpec, TerminationReason, Vec2};
use crate::Result;
use rand_chacha::ChaCha8Rng;

/// Stream id for evaluation action noise (distinct from training streams).
const STREAM_EVAL: u64 = 1_000;
/// Environment stream base for evaluation episodes.
const STREAM_EVAL_ENV: u64 = 1_010;

/// One line of a trajectory dump.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DumpRecord {
    /// First line: the experiment configuration in its flat text form, so a
    /// dump is self-contained for replay.
    Header { config: String },
    EpisodeStart {
        episode: u64,
        target: TargetSpec,
        positions: Vec<Vec2>,
        orientations: Vec<f64>,
    },
    Step {
        episode: u64,
        step: u32,
        /// Raw policy output before clipping.
        action: f64,
        /// Action delivered to the environment (after interval clipping).
        applied: f64,
        reward: u32,
        terminated: bool,
        reason: String,
        positions: Vec<Vec2>,
        orientations: Vec<f64>,
        absorbed: Vec<bool>,
    },
}

/// Per-episode evaluation result.
#[derive(Debug, Clone, Copy)]
pub struct EvalEpisode {
    pub episode: u64,
    pub undiscounted_return: u32,
    pub length: u32,
    pub reason: TerminationReason,
}

/// Aggregate over an evaluation run.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub episodes: Vec<EvalEpisode>,
}

impl EvalSummary {
    pub fn mean_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.undiscounted_return as f64).sum::<f64>()
            / self.episodes.len() as f64
    }

    pub fn mean_length(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.length as f64).sum::<f64>() / self.episodes.len() as f64
    }
}

/// A loaded policy with frozen normalization, ready to act.
#[derive(Debug, Clone)]
pub struct InferenceSession {
    pub cfg: ExperimentConfig,
    pub policy: PolicyParams,
    pub normalizer: Normalizer,
}

impl InferenceSession {
    /// Builds a session from a checkpoint, applying `key=value` environment
    /// overrides (e.g. a different seed, target box, or episode cap).
    pub fn from_checkpoint(ck: &Checkpoint, overrides: &[String]) -> Result<Self> {
        let mut cfg = ck.config()?;
        for pair in overrides {
            cfg.apply_override(pair)?;
        }
        cfg.validate()?;
        if cfg.obs_dim() != ck.policy.obs_dim() {
            return Err(CoreError::checkpoint(format!(
                "observation dimension mismatch: checkpoint policy expects {}, environment produces {}",
                ck.policy.obs_dim(),
                cfg.obs_dim()
            )));
        }
        if ck.normalizer_mean.len() != ck.policy.obs_dim() {
            return Err(CoreError::checkpoint("normalizer does not match policy input"));
        }
        Ok(InferenceSession {
            cfg,
            policy: ck.policy.clone(),
            normalizer: ck.normalizer(),
        })
    }

    /// Picks the next command: the Gaussian mean when `deterministic`, a
    /// sample otherwise. Returns `(raw, clipped)`.
    pub fn act(&self, raw_obs: &[f64], deterministic: bool, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let norm_obs = self.normalizer.normalize(raw_obs);
        let mean = self.policy.actor_mean(&norm_obs);
        let action = if deterministic {
            mean
        } else {
            mean + self.policy.log_std.exp() * standard_normal(rng)
        };
        let clipped = action.clamp(self.cfg.train.action_low, self.cfg.train.action_high);
        (action, clipped)
    }

    /// Rolls out `episodes` episodes with the frozen normalizer, streaming
    /// every record to `sink`.
    pub fn run_episodes(
        &self,
        episodes: u64,
        deterministic: bool,
        mut sink: impl FnMut(&DumpRecord) -> Result<()>,
    ) -> Result<EvalSummary> {
        let schedule = self.cfg.curriculum_schedule()?;
        let sampler = self.cfg.target_sampler(schedule)?;
        let mut env = SwarmEnv::new(
            self.cfg.swimmer_init()?,
            self.cfg.physics_config(),
            sampler,
            self.cfg.encoder(),
            seeded_stream(self.cfg.seed, STREAM_EVAL_ENV),
        )?;
        let mut action_rng = seeded_stream(self.cfg.seed, STREAM_EVAL);

        sink(&DumpRecord::Header { config: self.cfg.to_text() })?;
        let mut summary = EvalSummary { episodes: Vec::new() };
        for episode in 0..episodes {
            if episode > 0 {
                env.reset()?;
            }
            sink(&DumpRecord::EpisodeStart {
                episode,
                target: env.target,
                positions: env.state.positions.clone(),
                orientations: env.state.orientations.clone(),
            })?;
            loop {
                let (action, applied) = self.act(&env.raw_obs(), deterministic, &mut action_rng);
                let out = env.step_raw(applied)?;
                sink(&DumpRecord::Step {
                    episode,
                    step: env.state.step_count,
                    action,
                    applied,
                    reward: out.reward,
                    terminated: out.terminated,
                    reason: out.reason.as_str().to_string(),
                    positions: env.state.positions.clone(),
                    orientations: env.state.orientations.clone(),
                    absorbed: env.state.absorbed.clone(),
                })?;
                if out.terminated {
                    summary.episodes.push(EvalEpisode {
                        episode,
                        undiscounted_return: env.episode_return(),
                        length: env.state.step_count,
                        reason: out.reason,
                    });
                    break;
                }
            }
        }
        Ok(summary)
    }

    /// Rolls out episodes and writes a line-delimited dump file.
    pub fn dump_episodes(
        &self,
        episodes: u64,
        deterministic: bool,
        path: &Path,
    ) -> Result<EvalSummary> {
        let file = File::create(path)?;
        let mut writer = BufWriter::new(file);
        let summary = self.run_episodes(episodes, deterministic, |record| {
            serde_json::to_writer(&mut writer, record)?;
            writer.write_all(b"\n")?;
            Ok(())
        })?;
        writer.flush()?;
        Ok(summary)
    }
}

/// Parses a dump file back into records.
pub fn read_dump(path: &Path) -> Result<Vec<DumpRecord>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Replay summary: episodes verified against the dynamics.
#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub episodes: u64,
    pub steps: u64,
}

/// Re-simulates a dump with its recorded actions and verifies that every
/// recorded position, orientation, and absorption flag is reproduced
/// exactly. Returns an error on the first divergence.
pub fn replay_dump(records: &[DumpRecord]) -> Result<ReplayReport> {
    let mut iter = records.iter();
    let config = match iter.next() {
        Some(DumpRecord::Header { config }) => ExperimentConfig::parse(config)?,
        _ => return Err(CoreError::Replay("dump must start with a header record".into())),
    };
    let physics_cfg = config.physics_config();

    let mut report = ReplayReport { episodes: 0, steps: 0 };
    let mut state: Option<(SwarmState, TargetSpec)> = None;
    for record in iter {
        match record {
            DumpRecord::Header { .. } => {
                return Err(CoreError::Replay("unexpected second header".into()))
            }
            DumpRecord::EpisodeStart { episode, target, positions, orientations } => {
                let n = positions.len();
                state = Some((
                    SwarmState {
                        positions: positions.clone(),
                        orientations: orientations.clone(),
                        absorbed: vec![false; n],
                        step_count: 0,
                        episode_index: *episode,
                    },
                    *target,
                ));
                report.episodes += 1;
            }
            DumpRecord::Step {
                step,
                applied,
                reward,
                terminated,
                positions,
                orientations,
                absorbed,
                ..
            } => {
                let (sim_state, target) = state
                    .as_mut()
                    .ok_or_else(|| CoreError::Replay("step record before episode start".into()))?;
                let out = physics::step(sim_state, target, *applied, &physics_cfg)?;
                report.steps += 1;
                if sim_state.step_count != *step {
                    return Err(CoreError::Replay(format!(
                        "step counter diverged at step {step}"
                    )));
                }
                if out.reward != *reward || out.terminated != *terminated {
                    return Err(CoreError::Replay(format!(
                        "outcome diverged at step {step}: reward {} vs {}, terminated {} vs {}",
                        out.reward, reward, out.terminated, terminated
                    )));
                }
                if &sim_state.positions != positions
                    || &sim_state.orientations != orientations
                    || &sim_state.absorbed != absorbed
                {
                    return Err(CoreError::Replay(format!(
                        "state diverged from recording at step {step}"
                    )));
                }
            }
        }
    }
    Ok(report)
}

/// Renders one episode's trajectories as a standalone SVG document.
pub fn render_episode_svg(records: &[DumpRecord], episode: u64) -> Result<String> {
    let mut start: Option<(&Vec<Vec2>, TargetSpec)> = None;
    let mut tracks: Vec<Vec<Vec2>> = Vec::new();
    let mut absorbed_final: Vec<bool> = Vec::new();
    for record in records {
        match record {
            DumpRecord::EpisodeStart { episode: e, target, positions, .. } if *e == episode => {
                start = Some((positions, *target));
                tracks = positions.iter().map(|p| vec![*p]).collect();
                absorbed_final = vec![false; positions.len()];
            }
            DumpRecord::Step { episode: e, positions, absorbed, .. } if *e == episode => {
                for (track, p) in tracks.iter_mut().zip(positions) {
                    track.push(*p);
                }
                absorbed_final = absorbed.clone();
            }
            _ => {}
        }
    }
    let (_, target) = start
        .ok_or_else(|| CoreError::Replay(format!("episode {episode} not present in dump")))?;

    // Data extent with margins.
    let mut min = Vec2::new(target.center.x - target.radius, target.center.y - target.radius);
    let mut max = Vec2::new(target.center.x + target.radius, target.center.y + target.radius);
    for track in &tracks {
        for p in track {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
    }
    let pad = 8.0;
    let width = (max.x - min.x) + 2.0 * pad;
    let height = (max.y - min.y) + 2.0 * pad;
    // SVG y grows downward; flip the y axis.
    let sx = |x: f64| x - min.x + pad;
    let sy = |y: f64| (max.y - y) + pad;

    let palette = [
        "#1b6ca8", "#d1495b", "#66a182", "#edae49", "#574ae2", "#8d5a97", "#35a7ff", "#ff6b35",
    ];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.1} {height:.1}\" width=\"640\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"#fbfbf8\"/>");
    let _ = writeln!(
        svg,
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"#bde0fe\" stroke=\"#5390d9\" stroke-width=\"0.8\"/>",
        sx(target.center.x),
        sy(target.center.y),
        target.radius
    );
    for (i, track) in tracks.iter().enumerate() {
        let color = palette[i % palette.len()];
        let mut points = String::new();
        for p in track {
            let _ = write!(points, "{:.2},{:.2} ", sx(p.x), sy(p.y));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"0.7\" stroke-opacity=\"0.85\"/>",
            points.trim_end()
        );
        if let Some(first) = track.first() {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.2\" fill=\"{color}\"/>",
                sx(first.x),
                sy(first.y)
            );
        }
        if let Some(last) = track.last() {
            let marker = if absorbed_final.get(i).copied().unwrap_or(false) {
                format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.6\" fill=\"none\" stroke=\"{color}\" stroke-width=\"0.6\"/>",
                    sx(last.x),
                    sy(last.y)
                )
            } else {
                format!(
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"2.4\" height=\"2.4\" fill=\"{color}\"/>",
                    sx(last.x) - 1.2,
                    sy(last.y) - 1.2
                )
            };
            let _ = writeln!(svg, "{marker}");
        }
    }
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

/// Episode ids present in a dump, in order of appearance.
pub fn dump_episode_ids(records: &[DumpRecord]) -> Vec<u64> {
    records
        .iter()
        .filter_map(|r| match r {
            DumpRecord::EpisodeStart { episode, .. } => Some(*episode),
            _ => None,
        })
        .collect()
}
