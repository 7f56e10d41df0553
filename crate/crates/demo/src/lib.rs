//! Browser demo bindings.
//!
//! Three interactive operations, all returning JSON strings the page renders
//! onto canvases:
//!   1. a steering sandbox — the pointer sets the commanded orientation and
//!      the swarm moves under hydrodynamic coupling toward an absorbing
//!      target;
//!   2. an embedded policy trained on random targets that can take over the
//!      controls;
//!   3. a curriculum explorer that plots the target-distance schedule and
//!      samples episode targets from it.
//!
//! The simulation logic lives in plain methods (testable natively); the
//! `wasm_bindgen` wrappers only translate errors into `JsValue`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use microswarm::curriculum::CurriculumSchedule;
use microswarm::env::SwarmEnv;
use microswarm::harness::checkpoint::Checkpoint;
use microswarm::harness::inference::InferenceSession;
use microswarm::obs::{Encoder, EncodingMode};
use microswarm::physics::{
    hydro_weight, PhysicsConfig, SwimmerInit, TargetSampler, TargetSpec,
};
use microswarm::CoreError;

/// Policy trained on env-2 (random target location and size, RPO, 4
/// swimmers); it generalizes across the demo's target placements.
const AGENT_CHECKPOINT: &[u8] = include_bytes!("../assets/agent_env2_rpo_n04.ckpt");

fn to_js(err: CoreError) -> JsValue {
    JsValue::from_str(&err.to_string())
}

#[derive(Serialize)]
struct SimView {
    n: usize,
    step: u32,
    episode_return: u32,
    terminated: bool,
    reason: String,
    positions: Vec<[f64; 2]>,
    orientations: Vec<f64>,
    absorbed: Vec<bool>,
    hydro: Vec<f64>,
    target: [f64; 3],
    mean: [f64; 2],
    last_action: Option<f64>,
    agent_available: bool,
}

/// Interactive swarm episode.
#[wasm_bindgen]
pub struct DemoSim {
    env: SwarmEnv,
    agent: Option<InferenceSession>,
    agent_rng: ChaCha8Rng,
    last_action: Option<f64>,
    finished: bool,
}

impl DemoSim {
    fn build(n_swimmers: usize, spacing: f64, seed: u64, scenario: &str) -> Result<DemoSim, CoreError> {
        let init = SwimmerInit::from_count(n_swimmers, spacing)?;
        let sampler = match scenario {
            "fixed" => TargetSampler::Fixed(TargetSpec::new(10.56, 41.63, 9.36)),
            "random" => TargetSampler::UniformSquare {
                half_extent: 100.0,
                radius_range: TargetSampler::DEFAULT_RADIUS_RANGE,
            },
            "near" => TargetSampler::UniformDisc {
                max_distance: 50.0,
                radius_range: TargetSampler::DEFAULT_RADIUS_RANGE,
            },
            other => {
                return Err(CoreError::config(format!(
                    "unknown scenario '{other}' (expected fixed | random | near)"
                )))
            }
        };
        let env = SwarmEnv::new(
            init,
            PhysicsConfig::default(),
            sampler,
            Encoder::new(EncodingMode::FullState),
            ChaCha8Rng::seed_from_u64(seed),
        )?;
        let agent = if n_swimmers == 4 {
            let ck = Checkpoint::from_bytes(AGENT_CHECKPOINT)?;
            Some(InferenceSession::from_checkpoint(&ck, &[])?)
        } else {
            None
        };
        Ok(DemoSim {
            env,
            agent,
            agent_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a6e7),
            last_action: None,
            finished: false,
        })
    }

    fn view_json(&self) -> Result<String, CoreError> {
        let state = &self.env.state;
        let n = state.swimmer_count();
        let mut hydro = vec![0.0; n];
        for i in 0..n {
            if !state.absorbed[i] {
                hydro[i] = hydro_weight(&state.positions, &state.absorbed, i, &self.env.physics);
            }
        }
        let mean = state.mean_position();
        let view = SimView {
            n,
            step: state.step_count,
            episode_return: self.env.episode_return(),
            terminated: self.finished,
            reason: if self.finished { self.last_reason() } else { "none".to_string() },
            positions: state.positions.iter().map(|p| [p.x, p.y]).collect(),
            orientations: state.orientations.clone(),
            absorbed: state.absorbed.clone(),
            hydro,
            target: [self.env.target.center.x, self.env.target.center.y, self.env.target.radius],
            mean: [mean.x, mean.y],
            last_action: self.last_action,
            agent_available: self.agent.is_some(),
        };
        Ok(serde_json::to_string(&view)?)
    }

    fn last_reason(&self) -> String {
        if self.env.state.all_absorbed() {
            "all_absorbed".to_string()
        } else if self.env.state.step_count >= self.env.physics.max_steps {
            "max_steps".to_string()
        } else {
            "drifted_away".to_string()
        }
    }

    fn step_with(&mut self, theta_m: f64) -> Result<String, CoreError> {
        if !self.finished {
            let out = self.env.step_raw(theta_m)?;
            self.last_action = Some(theta_m);
            self.finished = out.terminated;
        }
        self.view_json()
    }

    fn step_agent_inner(&mut self) -> Result<String, CoreError> {
        if self.finished {
            return self.view_json();
        }
        let agent = self
            .agent
            .as_ref()
            .ok_or_else(|| CoreError::config("agent drives 4-swimmer swarms only"))?;
        let (_, applied) = agent.act(&self.env.raw_obs(), false, &mut self.agent_rng);
        self.step_with(applied)
    }

    fn reset_inner(&mut self, seed: u64) -> Result<String, CoreError> {
        self.env.rng = ChaCha8Rng::seed_from_u64(seed);
        self.env.reset()?;
        self.last_action = None;
        self.finished = false;
        self.view_json()
    }
}

#[wasm_bindgen]
impl DemoSim {
    /// `scenario`: "fixed" (the constant-target setup), "random" (targets
    /// uniform in a 100 um box), or "near" (targets within a 50 um disc).
    #[wasm_bindgen(constructor)]
    pub fn new(n_swimmers: usize, spacing: f64, seed: u64, scenario: &str) -> Result<DemoSim, JsValue> {
        DemoSim::build(n_swimmers, spacing, seed, scenario).map_err(to_js)
    }

    /// Steps with a user-commanded orientation (radians) and returns the view.
    pub fn step_manual(&mut self, theta_m: f64) -> Result<String, JsValue> {
        self.step_with(theta_m).map_err(to_js)
    }

    /// Lets the embedded trained policy pick the command.
    pub fn step_agent(&mut self) -> Result<String, JsValue> {
        self.step_agent_inner().map_err(to_js)
    }

    /// Starts a new episode with a fresh seed.
    pub fn reset(&mut self, seed: u64) -> Result<String, JsValue> {
        self.reset_inner(seed).map_err(to_js)
    }

    /// Current view without stepping.
    pub fn view(&self) -> Result<String, JsValue> {
        self.view_json().map_err(to_js)
    }
}

#[derive(Serialize)]
struct CurvePoint {
    episode: u64,
    distance: f64,
}

fn curriculum_curve_inner(
    d_start: f64,
    d_final: f64,
    decay: f64,
    max_episode: u64,
    points: usize,
) -> Result<String, CoreError> {
    let schedule = CurriculumSchedule::new(d_start, d_final, decay)?;
    let points = points.clamp(2, 4096);
    let curve: Vec<CurvePoint> = (0..points)
        .map(|k| {
            let episode = max_episode * k as u64 / (points as u64 - 1);
            CurvePoint { episode, distance: schedule.max_distance(episode) }
        })
        .collect();
    Ok(serde_json::to_string(&curve)?)
}

#[derive(Serialize)]
struct SampledTarget {
    x: f64,
    y: f64,
    radius: f64,
    bound: f64,
}

fn curriculum_targets_inner(
    d_start: f64,
    d_final: f64,
    decay: f64,
    episode: u64,
    count: usize,
    seed: u64,
) -> Result<String, CoreError> {
    let schedule = CurriculumSchedule::new(d_start, d_final, decay)?;
    schedule.set_episodes_started(episode);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = schedule.max_distance(episode);
    let targets: Vec<SampledTarget> = (0..count.min(4096))
        .map(|_| {
            let t = microswarm::curriculum::sample_curriculum_target(
                &schedule,
                &mut rng,
                TargetSampler::DEFAULT_RADIUS_RANGE,
            );
            SampledTarget { x: t.center.x, y: t.center.y, radius: t.radius, bound }
        })
        .collect();
    Ok(serde_json::to_string(&targets)?)
}

/// Distance bound of the curriculum at one episode.
#[wasm_bindgen]
pub fn curriculum_max_distance(d_start: f64, d_final: f64, decay: f64, episode: u64) -> Result<f64, JsValue> {
    let schedule = CurriculumSchedule::new(d_start, d_final, decay).map_err(to_js)?;
    Ok(schedule.max_distance(episode))
}

/// JSON `[{episode, distance}, ...]` sampling the schedule curve.
#[wasm_bindgen]
pub fn curriculum_curve(
    d_start: f64,
    d_final: f64,
    decay: f64,
    max_episode: u64,
    points: usize,
) -> Result<String, JsValue> {
    curriculum_curve_inner(d_start, d_final, decay, max_episode, points).map_err(to_js)
}

/// JSON `[{x, y, radius, bound}, ...]` of targets drawn at a fixed episode.
#[wasm_bindgen]
pub fn curriculum_targets(
    d_start: f64,
    d_final: f64,
    decay: f64,
    episode: u64,
    count: usize,
    seed: u64,
) -> Result<String, JsValue> {
    curriculum_targets_inner(d_start, d_final, decay, episode, count, seed).map_err(to_js)
}

/// Hydrodynamic weights of a fresh lattice at the given spacing, JSON
/// `{positions: [[x,y]...], hydro: [...]}` (for the spacing explorer).
#[wasm_bindgen]
pub fn lattice_hydro(grid_side: usize, spacing: f64) -> Result<String, JsValue> {
    lattice_hydro_inner(grid_side, spacing).map_err(to_js)
}

#[derive(Serialize)]
struct LatticeView {
    positions: Vec<[f64; 2]>,
    hydro: Vec<f64>,
}

fn lattice_hydro_inner(grid_side: usize, spacing: f64) -> Result<String, CoreError> {
    let init = SwimmerInit::new(grid_side, spacing)?;
    let positions = init.lattice_positions();
    let absorbed = vec![false; positions.len()];
    let cfg = PhysicsConfig::default();
    let hydro: Vec<f64> =
        (0..positions.len()).map(|i| hydro_weight(&positions, &absorbed, i, &cfg)).collect();
    Ok(serde_json::to_string(&LatticeView {
        positions: positions.iter().map(|p| [p.x, p.y]).collect(),
        hydro,
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_steering_moves_toward_target() {
        let mut sim = DemoSim::build(4, 6.0, 7, "fixed").unwrap();
        let first: serde_json::Value = serde_json::from_str(&sim.view_json().unwrap()).unwrap();
        assert_eq!(first["n"], 4);
        assert_eq!(first["step"], 0);
        // Steer straight at the fixed target for a while.
        let mut last = String::new();
        for _ in 0..200 {
            let v: serde_json::Value = serde_json::from_str(&sim.view_json().unwrap()).unwrap();
            if v["terminated"].as_bool().unwrap() {
                break;
            }
            let mx = v["mean"][0].as_f64().unwrap();
            let my = v["mean"][1].as_f64().unwrap();
            let theta = (41.63 - my).atan2(10.56 - mx);
            last = sim.step_manual_native(theta).unwrap();
        }
        let v: serde_json::Value = serde_json::from_str(&last).unwrap();
        assert!(v["episode_return"].as_u64().unwrap() >= 1, "steering should absorb swimmers: {v}");
    }

    #[test]
    fn embedded_agent_loads_and_steps() {
        let mut sim = DemoSim::build(4, 6.0, 3, "random").unwrap();
        assert!(sim.agent.is_some());
        for _ in 0..50 {
            let view = sim.step_agent_inner().unwrap();
            let v: serde_json::Value = serde_json::from_str(&view).unwrap();
            if v["terminated"].as_bool().unwrap() {
                break;
            }
        }
        // Larger swarms have no matching embedded policy.
        let mut big = DemoSim::build(9, 6.0, 3, "random").unwrap();
        assert!(big.agent.is_none());
        assert!(big.step_agent_inner().is_err());
    }

    #[test]
    fn reset_starts_a_fresh_episode() {
        let mut sim = DemoSim::build(4, 6.0, 5, "near").unwrap();
        sim.step_manual_native(0.3).unwrap();
        let view = sim.reset_inner(11).unwrap();
        let v: serde_json::Value = serde_json::from_str(&view).unwrap();
        assert_eq!(v["step"], 0);
        assert_eq!(v["episode_return"], 0);
    }

    #[test]
    fn curriculum_outputs_parse_and_match_schedule() {
        let curve = curriculum_curve_inner(20.0, 100.0, 1000.0, 5000, 64).unwrap();
        let points: Vec<serde_json::Value> = serde_json::from_str(&curve).unwrap();
        assert_eq!(points.len(), 64);
        assert_eq!(points[0]["distance"].as_f64().unwrap(), 20.0);
        let targets = curriculum_targets_inner(20.0, 100.0, 1000.0, 1000, 200, 9).unwrap();
        let ts: Vec<serde_json::Value> = serde_json::from_str(&targets).unwrap();
        let bound = 100.0 - 80.0 / std::f64::consts::E;
        for t in ts {
            let r = (t["x"].as_f64().unwrap().powi(2) + t["y"].as_f64().unwrap().powi(2)).sqrt();
            assert!(r <= bound + 1e-9);
            assert!((t["bound"].as_f64().unwrap() - bound).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_hydro_center_value() {
        let view = lattice_hydro_inner(3, 6.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&view).unwrap();
        let hydro = v["hydro"].as_array().unwrap();
        // Center swimmer of the 3x3 lattice sits at index 4 (row-major).
        let center = hydro[4].as_f64().unwrap();
        assert!((center - 1.0 / 3.0).abs() < 1e-12);
    }

    impl DemoSim {
        /// Test-only alias avoiding the JsValue error path on native.
        fn step_manual_native(&mut self, theta: f64) -> Result<String, CoreError> {
            self.step_with(theta)
        }
    }
}
