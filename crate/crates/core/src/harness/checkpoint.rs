//! Versioned binary checkpoints.
//!
//! A checkpoint carries everything needed to (a) act: policy weights and the
//! frozen observation statistics, and (b) resume training bit-exactly:
//! optimizer moments, RNG streams, environment states, cached observations,
//! and progress counters. All integers and floats are little-endian; the
//! full layout is documented field by field in the README.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::harness::config::ExperimentConfig;
use crate::nn::{DenseLayer, Mlp, PolicyParams};
use crate::obs::Normalizer;
use crate::physics::{EpisodeDraw, SwarmState, TargetSpec, Vec2};
use crate::Result;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSWARMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable ChaCha state: seed, stream, and position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngSnapshot {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Frozen state of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    pub rng: RngSnapshot,
    pub episodes_started: u64,
    pub episode_return: u32,
    pub draw: EpisodeDraw,
    pub state: SwarmState,
    pub target: TargetSpec,
    /// Cached normalized observation the policy would act on next.
    pub norm_obs: Vec<f64>,
}

/// Optional reward-scaling state (only present when the ablation flag is on).
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNormSnapshot {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
    pub returns: Vec<f64>,
}

/// Complete training snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// The experiment configuration, embedded as its flat text form.
    pub config_text: String,
    pub global_step: u64,
    pub update_index: u64,
    pub episodes_completed: u64,
    /// Tail of the episode-return history (most recent last), long enough to
    /// rebuild the smoothed-return window after resume.
    pub recent_returns: Vec<u32>,
    pub policy: PolicyParams,
    pub adam_t: u64,
    pub adam_lr: f64,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub normalizer_mean: Vec<f64>,
    pub normalizer_m2: Vec<f64>,
    pub normalizer_count: f64,
    pub action_rng: RngSnapshot,
    pub update_rng: RngSnapshot,
    pub rpo_rng: RngSnapshot,
    /// Shared curriculum episode counter, when the experiment uses one.
    pub curriculum_episodes: Option<u64>,
    pub reward_norm: Option<RewardNormSnapshot>,
    pub envs: Vec<EnvSnapshot>,
}

impl Checkpoint {
    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&self.config_text)
    }

    pub fn normalizer(&self) -> Normalizer {
        Normalizer::from_parts(
            self.normalizer_mean.clone(),
            self.normalizer_m2.clone(),
            self.normalizer_count,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.config_text);
        w.u64(self.global_step);
        w.u64(self.update_index);
        w.u64(self.episodes_completed);
        w.u32(self.recent_returns.len() as u32);
        for &ret in &self.recent_returns {
            w.u32(ret);
        }
        write_mlp(&mut w, &self.policy.actor);
        w.f64(self.policy.log_std);
        write_mlp(&mut w, &self.policy.critic);
        w.u64(self.adam_t);
        w.f64(self.adam_lr);
        w.f64_slice(&self.adam_m);
        w.f64_slice(&self.adam_v);
        w.f64(self.normalizer_count);
        w.f64_slice(&self.normalizer_mean);
        w.f64_slice(&self.normalizer_m2);
        write_rng(&mut w, &self.action_rng);
        write_rng(&mut w, &self.update_rng);
        write_rng(&mut w, &self.rpo_rng);
        match self.curriculum_episodes {
            Some(e) => {
                w.u8(1);
                w.u64(e);
            }
            None => w.u8(0),
        }
        match &self.reward_norm {
            Some(rn) => {
                w.u8(1);
                w.f64(rn.count);
                w.f64(rn.mean);
                w.f64(rn.m2);
                w.f64_slice(&rn.returns);
            }
            None => w.u8(0),
        }
        w.u32(self.envs.len() as u32);
        for env in &self.envs {
            write_rng(&mut w, &env.rng);
            w.u64(env.episodes_started);
            w.u32(env.episode_return);
            match env.draw.episode {
                Some(e) => {
                    w.u8(1);
                    w.u64(e);
                }
                None => w.u8(0),
            }
            match env.draw.max_distance {
                Some(d) => {
                    w.u8(1);
                    w.f64(d);
                }
                None => w.u8(0),
            }
            let n = env.state.positions.len();
            w.u32(n as u32);
            for p in &env.state.positions {
                w.f64(p.x);
                w.f64(p.y);
            }
            for &o in &env.state.orientations {
                w.f64(o);
            }
            for &a in &env.state.absorbed {
                w.u8(a as u8);
            }
            w.u32(env.state.step_count);
            w.u64(env.state.episode_index);
            w.f64(env.target.center.x);
            w.f64(env.target.center.y);
            w.f64(env.target.radius);
            w.f64_slice(&env.norm_obs);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.bytes(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CoreError::checkpoint("bad magic; not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CoreError::checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let config_text = r.str()?;
        let global_step = r.u64()?;
        let update_index = r.u64()?;
        let episodes_completed = r.u64()?;
        let n_returns = r.u32()? as usize;
        let mut recent_returns = Vec::with_capacity(n_returns.min(1 << 20));
        for _ in 0..n_returns {
            recent_returns.push(r.u32()?);
        }
        let actor = read_mlp(&mut r)?;
        let log_std = r.f64()?;
        let critic = read_mlp(&mut r)?;
        let policy = PolicyParams { actor, log_std, critic };
        let adam_t = r.u64()?;
        let adam_lr = r.f64()?;
        let adam_m = r.f64_vec()?;
        let adam_v = r.f64_vec()?;
        if adam_m.len() != policy.param_count() || adam_v.len() != policy.param_count() {
            return Err(CoreError::checkpoint("optimizer moment length mismatch"));
        }
        let normalizer_count = r.f64()?;
        let normalizer_mean = r.f64_vec()?;
        let normalizer_m2 = r.f64_vec()?;
        if normalizer_mean.len() != normalizer_m2.len() {
            return Err(CoreError::checkpoint("normalizer length mismatch"));
        }
        let action_rng = read_rng(&mut r)?;
        let update_rng = read_rng(&mut r)?;
        let rpo_rng = read_rng(&mut r)?;
        let curriculum_episodes = if r.u8()? == 1 { Some(r.u64()?) } else { None };
        let reward_norm = if r.u8()? == 1 {
            Some(RewardNormSnapshot {
                count: r.f64()?,
                mean: r.f64()?,
                m2: r.f64()?,
                returns: r.f64_vec()?,
            })
        } else {
            None
        };
        let env_count = r.u32()? as usize;
        let mut envs = Vec::with_capacity(env_count);
        for _ in 0..env_count {
            let rng = read_rng(&mut r)?;
            let episodes_started = r.u64()?;
            let episode_return = r.u32()?;
            let episode = if r.u8()? == 1 { Some(r.u64()?) } else { None };
            let max_distance = if r.u8()? == 1 { Some(r.f64()?) } else { None };
            let n = r.u32()? as usize;
            let mut positions = Vec::with_capacity(n);
            for _ in 0..n {
                positions.push(Vec2::new(r.f64()?, r.f64()?));
            }
            let mut orientations = Vec::with_capacity(n);
            for _ in 0..n {
                orientations.push(r.f64()?);
            }
            let mut absorbed = Vec::with_capacity(n);
            for _ in 0..n {
                absorbed.push(r.u8()? != 0);
            }
            let step_count = r.u32()?;
            let episode_index = r.u64()?;
            let target = TargetSpec::new(r.f64()?, r.f64()?, r.f64()?);
            let norm_obs = r.f64_vec()?;
            envs.push(EnvSnapshot {
                rng,
                episodes_started,
                episode_return,
                draw: EpisodeDraw { episode, max_distance },
                state: SwarmState {
                    positions,
                    orientations,
                    absorbed,
                    step_count,
                    episode_index,
                },
                target,
                norm_obs,
            });
        }
        r.expect_eof()?;
        Ok(Checkpoint {
            config_text,
            global_step,
            update_index,
            episodes_completed,
            recent_returns,
            policy,
            adam_t,
            adam_lr,
            adam_m,
            adam_v,
            normalizer_mean,
            normalizer_m2,
            normalizer_count,
            action_rng,
            update_rng,
            rpo_rng,
            curriculum_episodes,
            reward_norm,
            envs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write-then-rename so a crash never leaves a torn checkpoint.
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn write_mlp(w: &mut ByteWriter, mlp: &Mlp) {
    w.u32(mlp.layers.len() as u32);
    for layer in &mlp.layers {
        w.u32(layer.in_dim as u32);
        w.u32(layer.out_dim as u32);
        w.f64_slice(&layer.weights);
        w.f64_slice(&layer.bias);
    }
}

fn read_mlp(r: &mut ByteReader) -> Result<Mlp> {
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(CoreError::checkpoint(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let weights = r.f64_vec()?;
        let bias = r.f64_vec()?;
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(CoreError::checkpoint("layer shape mismatch"));
        }
        layers.push(DenseLayer { weights, bias, in_dim, out_dim });
    }
    Ok(Mlp { layers })
}

fn write_rng(w: &mut ByteWriter, rng: &RngSnapshot) {
    w.bytes(&rng.seed);
    w.u64(rng.stream);
    w.u64(rng.word_pos as u64);
    w.u64((rng.word_pos >> 64) as u64);
}

fn read_rng(r: &mut ByteReader) -> Result<RngSnapshot> {
    let seed_bytes = r.bytes(32)?;
    let mut seed = [0u8; 32];
    seed.copy_from_slice(seed_bytes);
    let stream = r.u64()?;
    let lo = r.u64()? as u128;
    let hi = r.u64()? as u128;
    Ok(RngSnapshot { seed, stream, word_pos: lo | (hi << 64) })
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }

    fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_slice(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        ByteReader { data, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(CoreError::checkpoint("truncated checkpoint"));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        if len > 16_000_000 {
            return Err(CoreError::checkpoint(format!("implausible array length {len}")));
        }
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.bytes(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CoreError::checkpoint("config text is not UTF-8"))
    }

    fn expect_eof(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(CoreError::checkpoint(format!(
                "{} trailing bytes after checkpoint payload",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}
