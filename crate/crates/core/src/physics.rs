//! 2D dynamics of magnetically driven helical micro-swimmers.
//!
//! All swimmers share one commanded orientation per step. Each swimmer's
//! realized heading is a blend between the command and the command rotated by
//! a transverse offset, weighted by how strongly its neighbours' flow fields
//! couple to it. A circular absorbing target freezes swimmers that enter it.
//!
//! Units: lengths in micrometers, time in seconds, angles in radians.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumSchedule;
use crate::error::CoreError;
use crate::Result;

/// 2D point / displacement in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn distance_sq(self, other: Vec2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(self, other: Vec2) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Wraps an angle into `[0, 2*pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Square-lattice initial placement of the swarm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwimmerInit {
    /// Swimmers per lattice row; the swarm has `grid_side^2` swimmers.
    pub grid_side: usize,
    /// Lattice spacing in micrometers.
    pub spacing: f64,
    /// Initial orientations are drawn uniformly from this half-open interval.
    pub orientation_range: (f64, f64),
}

impl SwimmerInit {
    pub const DEFAULT_SPACING: f64 = 6.0;

    /// Supported swarm sizes.
    pub const SUPPORTED_COUNTS: [usize; 4] = [4, 9, 16, 25];

    pub fn new(grid_side: usize, spacing: f64) -> Result<Self> {
        let n = grid_side * grid_side;
        if !Self::SUPPORTED_COUNTS.contains(&n) {
            return Err(CoreError::config(format!(
                "swarm size {n} not supported; expected one of {:?}",
                Self::SUPPORTED_COUNTS
            )));
        }
        if !(spacing > 0.0) {
            return Err(CoreError::config(format!("spacing must be > 0, got {spacing}")));
        }
        Ok(SwimmerInit {
            grid_side,
            spacing,
            orientation_range: (0.0, TAU),
        })
    }

    /// Builds the init from a swimmer count (must be a supported square).
    pub fn from_count(n: usize, spacing: f64) -> Result<Self> {
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(CoreError::config(format!("swarm size {n} is not a perfect square")));
        }
        Self::new(side, spacing)
    }

    pub fn swimmer_count(&self) -> usize {
        self.grid_side * self.grid_side
    }

    /// Lattice positions translated so the swarm mean is exactly the origin.
    pub fn lattice_positions(&self) -> Vec<Vec2> {
        let g = self.grid_side;
        let half = (g as f64 - 1.0) * self.spacing / 2.0;
        let mut out = Vec::with_capacity(g * g);
        for row in 0..g {
            for col in 0..g {
                out.push(Vec2::new(
                    col as f64 * self.spacing - half,
                    row as f64 * self.spacing - half,
                ));
            }
        }
        out
    }
}

/// Circular absorbing target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub center: Vec2,
    pub radius: f64,
}

impl TargetSpec {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        TargetSpec {
            center: Vec2::new(x, y),
            radius,
        }
    }

    /// Absorption boundary is inclusive.
    pub fn contains(&self, p: Vec2) -> bool {
        p.distance(self.center) <= self.radius
    }
}

/// Physical and episode-limit constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysicsConfig {
    /// Linear swimmer speed set by the rotating field, um/s.
    pub velocity: f64,
    /// Simulation step duration, s.
    pub dt: f64,
    /// Numerator of the pairwise coupling term, um^2.
    pub hydro_coupling: f64,
    /// Upper bound on the hydrodynamic weight.
    pub hydro_cap: f64,
    /// Heading offset under full hydrodynamic influence, radians.
    pub hydro_phase_offset: f64,
    /// Episode length limit in steps.
    pub max_steps: u32,
    /// Episode aborts when the swarm mean drifts farther than this from the
    /// target center, um.
    pub abort_distance: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            velocity: 10.0,
            dt: 0.1,
            hydro_coupling: 2.0,
            hydro_cap: 1.0,
            hydro_phase_offset: -FRAC_PI_2,
            max_steps: 500,
            abort_distance: 200.0,
        }
    }
}

impl PhysicsConfig {
    /// Displacement magnitude of an active swimmer in one step, um.
    pub fn step_length(&self) -> f64 {
        self.velocity * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.velocity * self.dt > 0.0) {
            return Err(CoreError::config("velocity * dt must be > 0"));
        }
        if !(self.hydro_coupling > 0.0 && self.abort_distance > 0.0) {
            return Err(CoreError::config("lengths must be positive"));
        }
        if self.hydro_cap != 1.0 {
            return Err(CoreError::config("hydro_cap must be 1.0"));
        }
        if self.max_steps == 0 {
            return Err(CoreError::config("max_steps must be >= 1"));
        }
        Ok(())
    }
}

/// Why an episode ended (or `None` while it is still running).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    None,
    AllAbsorbed,
    MaxSteps,
    DriftedAway,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::None => "none",
            TerminationReason::AllAbsorbed => "all_absorbed",
            TerminationReason::MaxSteps => "max_steps",
            TerminationReason::DriftedAway => "drifted_away",
        }
    }
}

impl std::str::FromStr for TerminationReason {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TerminationReason::None),
            "all_absorbed" => Ok(TerminationReason::AllAbsorbed),
            "max_steps" => Ok(TerminationReason::MaxSteps),
            "drifted_away" => Ok(TerminationReason::DriftedAway),
            other => Err(CoreError::config(format!("unknown termination reason '{other}'"))),
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    /// Number of swimmers newly absorbed this step.
    pub reward: u32,
    pub terminated: bool,
    pub reason: TerminationReason,
}

/// Full simulation state of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub positions: Vec<Vec2>,
    /// Realized headings from the latest step, wrapped into `[0, 2*pi)`.
    /// Absorbed swimmers keep the heading they had when absorbed.
    pub orientations: Vec<f64>,
    pub absorbed: Vec<bool>,
    pub step_count: u32,
    pub episode_index: u64,
}

impl SwarmState {
    pub fn swimmer_count(&self) -> usize {
        self.positions.len()
    }

    pub fn absorbed_count(&self) -> usize {
        self.absorbed.iter().filter(|a| **a).count()
    }

    pub fn all_absorbed(&self) -> bool {
        self.absorbed.iter().all(|a| *a)
    }

    /// Mean position over all swimmers, absorbed included.
    pub fn mean_position(&self) -> Vec2 {
        let n = self.positions.len() as f64;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for p in &self.positions {
            sx += p.x;
            sy += p.y;
        }
        Vec2::new(sx / n, sy / n)
    }
}

/// Hydrodynamic weight of swimmer `i`: the capped sum of inverse-square
/// couplings to every other active swimmer. Absorbed swimmers are stuck and
/// contribute no flow. Coincident active swimmers saturate the weight at the
/// cap instead of dividing by zero.
pub fn hydro_weight(positions: &[Vec2], absorbed: &[bool], i: usize, cfg: &PhysicsConfig) -> f64 {
    debug_assert!(!absorbed[i], "hydro_weight called for an absorbed swimmer");
    let mut sum = 0.0;
    let pi = positions[i];
    for (j, pj) in positions.iter().enumerate() {
        if j == i || absorbed[j] {
            continue;
        }
        let d2 = pi.distance_sq(*pj);
        if d2 == 0.0 {
            return cfg.hydro_cap;
        }
        sum += cfg.hydro_coupling / d2;
    }
    sum.min(cfg.hydro_cap)
}

/// Realized heading: blend of the commanded orientation and the command
/// shifted by the transverse offset, weighted by `rho`.
pub fn effective_angle(theta_m: f64, rho: f64, cfg: &PhysicsConfig) -> f64 {
    theta_m + rho * cfg.hydro_phase_offset
}

fn termination_reason(state: &SwarmState, target: &TargetSpec, cfg: &PhysicsConfig) -> TerminationReason {
    if state.all_absorbed() {
        TerminationReason::AllAbsorbed
    } else if state.step_count >= cfg.max_steps {
        TerminationReason::MaxSteps
    } else if state.mean_position().distance(target.center) > cfg.abort_distance {
        TerminationReason::DriftedAway
    } else {
        TerminationReason::None
    }
}

/// Advances the swarm one step under the commanded orientation `theta_m`.
///
/// Hydrodynamic weights are computed from the pre-move configuration and all
/// swimmers move simultaneously. A swimmer is absorbed when its post-move
/// distance to the target center is within the target radius; absorbed
/// swimmers never move again. The commanded angle is wrapped into
/// `[0, 2*pi)` before use.
pub fn step(
    state: &mut SwarmState,
    target: &TargetSpec,
    theta_m: f64,
    cfg: &PhysicsConfig,
) -> Result<StepOutcome> {
    if !theta_m.is_finite() {
        return Err(CoreError::contract(format!("non-finite action {theta_m}")));
    }
    let pre = termination_reason(state, target, cfg);
    if pre != TerminationReason::None {
        return Err(CoreError::contract(format!(
            "step on terminated episode (reason {})",
            pre.as_str()
        )));
    }

    let theta_m = wrap_angle(theta_m);
    let step_len = cfg.step_length();
    let n = state.swimmer_count();

    // Pre-move weights for every active swimmer.
    let mut rho = vec![0.0; n];
    for i in 0..n {
        if !state.absorbed[i] {
            rho[i] = hydro_weight(&state.positions, &state.absorbed, i, cfg);
        }
    }

    let mut newly_absorbed = 0u32;
    for i in 0..n {
        if state.absorbed[i] {
            continue;
        }
        let theta_i = wrap_angle(effective_angle(theta_m, rho[i], cfg));
        state.orientations[i] = theta_i;
        state.positions[i].x += step_len * theta_i.cos();
        state.positions[i].y += step_len * theta_i.sin();
        if target.contains(state.positions[i]) {
            state.absorbed[i] = true;
            newly_absorbed += 1;
        }
    }
    state.step_count += 1;

    let reason = termination_reason(state, target, cfg);
    Ok(StepOutcome {
        reward: newly_absorbed,
        terminated: reason != TerminationReason::None,
        reason,
    })
}

/// Target distribution used at episode resets.
#[derive(Debug, Clone)]
pub enum TargetSampler {
    /// Same target every episode.
    Fixed(TargetSpec),
    /// Center uniform over the axis-aligned square `[-half_extent, half_extent]^2`
    /// around the initial swarm mean; radius uniform in `radius_range`.
    UniformSquare {
        half_extent: f64,
        radius_range: (f64, f64),
    },
    /// Center uniform in area over the disc of radius `max_distance`.
    UniformDisc {
        max_distance: f64,
        radius_range: (f64, f64),
    },
    /// Disc sampling whose radius bound grows with the episode schedule.
    Curriculum {
        schedule: CurriculumSchedule,
        radius_range: (f64, f64),
    },
}

/// Per-episode bookkeeping produced when a sampler starts an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpisodeDraw {
    /// Global episode number consumed from the curriculum counter.
    pub episode: Option<u64>,
    /// Distance bound used for this episode's target, when on curriculum.
    pub max_distance: Option<f64>,
}

impl TargetSampler {
    pub const DEFAULT_RADIUS_RANGE: (f64, f64) = (5.0, 20.0);

    /// Marks the start of an episode. The curriculum sampler consumes one
    /// tick of the shared episode counter here, exactly once per episode,
    /// regardless of how many rejection re-draws follow.
    pub fn begin_episode(&self) -> EpisodeDraw {
        match self {
            TargetSampler::Curriculum { schedule, .. } => {
                let episode = schedule.next_episode();
                EpisodeDraw {
                    episode: Some(episode),
                    max_distance: Some(schedule.max_distance(episode)),
                }
            }
            _ => EpisodeDraw::default(),
        }
    }

    /// Draws one candidate target.
    pub fn draw(&self, rng: &mut impl Rng, episode: &EpisodeDraw) -> TargetSpec {
        match self {
            TargetSampler::Fixed(spec) => *spec,
            TargetSampler::UniformSquare {
                half_extent,
                radius_range,
            } => {
                let x = rng.gen_range(-half_extent..=*half_extent);
                let y = rng.gen_range(-half_extent..=*half_extent);
                let radius = rng.gen_range(radius_range.0..=radius_range.1);
                TargetSpec::new(x, y, radius)
            }
            TargetSampler::UniformDisc {
                max_distance,
                radius_range,
            } => draw_disc(rng, *max_distance, *radius_range),
            TargetSampler::Curriculum { radius_range, .. } => {
                let d = episode
                    .max_distance
                    .expect("curriculum draw requires begin_episode");
                draw_disc(rng, d, *radius_range)
            }
        }
    }
}

/// Uniform-in-area draw over the disc of radius `max_distance` at the origin.
pub(crate) fn draw_disc(rng: &mut impl Rng, max_distance: f64, radius_range: (f64, f64)) -> TargetSpec {
    let r = max_distance * rng.gen::<f64>().sqrt();
    let phi = rng.gen::<f64>() * TAU;
    let radius = rng.gen_range(radius_range.0..=radius_range.1);
    TargetSpec::new(r * phi.cos(), r * phi.sin(), radius)
}

/// Attempts before the target sampler gives up on a non-overlapping draw.
pub const RESET_MAX_TARGET_DRAWS: usize = 100;

/// Starts a fresh episode: swimmers on the centered lattice, orientations
/// i.i.d. uniform, and a target that does not overlap any initial swimmer
/// (re-drawn up to [`RESET_MAX_TARGET_DRAWS`] times).
pub fn reset(
    init: &SwimmerInit,
    sampler: &TargetSampler,
    rng: &mut impl Rng,
    episode_index: u64,
) -> Result<(SwarmState, TargetSpec, EpisodeDraw)> {
    let positions = init.lattice_positions();
    let n = positions.len();
    let (lo, hi) = init.orientation_range;
    let orientations: Vec<f64> = (0..n).map(|_| lo + rng.gen::<f64>() * (hi - lo)).collect();

    let draw = sampler.begin_episode();
    let mut target = None;
    for _ in 0..RESET_MAX_TARGET_DRAWS {
        let candidate = sampler.draw(rng, &draw);
        if positions.iter().any(|p| candidate.contains(*p)) {
            continue;
        }
        target = Some(candidate);
        break;
    }
    let target = target.ok_or_else(|| {
        CoreError::config(format!(
            "target sampler failed to produce a non-overlapping target in {RESET_MAX_TARGET_DRAWS} draws"
        ))
    })?;

    Ok((
        SwarmState {
            positions,
            orientations,
            absorbed: vec![false; n],
            step_count: 0,
            episode_index,
        },
        target,
        draw,
    ))
}
