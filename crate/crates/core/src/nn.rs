//! Small dense networks with exact reverse-mode gradients.
//!
//! The trainer only needs a fixed topology: affine layers with tanh hidden
//! activations and a linear output, orthogonally initialized, optimized with
//! Adam. Everything runs in f64 so gradient checks against finite
//! differences are meaningful.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::CoreError;
use crate::Result;

/// Hidden activation; only tanh is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

/// Shape description of an MLP.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden_dims.iter().any(|&d| d == 0) {
            return Err(CoreError::config("all MLP dimensions must be >= 1"));
        }
        Ok(MlpSpec {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Tanh,
        })
    }
}

/// One affine layer, weights stored row-major `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.bias[r];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Dense network: tanh on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Activation record from [`Mlp::forward_tape`], sufficient for exact
/// reverse-mode gradients of the recorded pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    input: Vec<f64>,
    /// Post-tanh activations of each hidden layer.
    hidden: Vec<Vec<f64>>,
}

/// Per-layer gradient accumulator shaped like an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    /// `(d_weights, d_bias)` per layer.
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|v| *v = 0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl Mlp {
    /// Builds the network with orthogonal weights: `hidden_gain` on every
    /// layer except the last, `output_gain` on the last. Biases start at 0.
    pub fn orthogonal(spec: &MlpSpec, hidden_gain: f64, output_gain: f64, rng: &mut impl Rng) -> Self {
        let mut dims = Vec::with_capacity(spec.hidden_dims.len() + 2);
        dims.push(spec.input_dim);
        dims.extend_from_slice(&spec.hidden_dims);
        dims.push(spec.output_dim);
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|k| {
                let gain = if k + 1 == n_layers { output_gain } else { hidden_gain };
                DenseLayer {
                    weights: orthogonal_matrix(dims[k + 1], dims[k], gain, rng),
                    bias: vec![0.0; dims[k + 1]],
                    in_dim: dims[k],
                    out_dim: dims[k + 1],
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Forward pass without recording.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass recording the activations needed by [`Mlp::backward`].
    pub fn forward_tape(&self, x: &[f64]) -> (Vec<f64>, MlpTape) {
        assert_eq!(x.len(), self.input_dim(), "input dimension mismatch");
        assert!(x.iter().all(|v| v.is_finite()), "non-finite network input");
        let mut tape = MlpTape {
            input: x.to_vec(),
            hidden: Vec::with_capacity(self.layers.len() - 1),
        };
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
                tape.hidden.push(next.clone());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        (cur, tape)
    }

    /// Accumulates exact gradients of the recorded pass into `grads`.
    /// `out_grad` is the loss gradient with respect to the network output.
    pub fn backward(&self, tape: &MlpTape, out_grad: &[f64], grads: &mut MlpGrads) {
        let last = self.layers.len() - 1;
        assert_eq!(out_grad.len(), self.output_dim(), "output grad dimension mismatch");
        assert_eq!(tape.input.len(), self.input_dim(), "tape does not match network");
        assert_eq!(tape.hidden.len(), last, "tape does not match network");
        assert_eq!(grads.layers.len(), self.layers.len(), "grads do not match network");

        let mut g = out_grad.to_vec();
        for k in (0..=last).rev() {
            let layer = &self.layers[k];
            // dL/d a_k -> dL/d z_k through tanh.
            if k < last {
                for (gi, ai) in g.iter_mut().zip(&tape.hidden[k]) {
                    *gi *= 1.0 - ai * ai;
                }
            }
            let a_prev: &[f64] = if k == 0 { &tape.input } else { &tape.hidden[k - 1] };
            let (dw, db) = &mut grads.layers[k];
            for r in 0..layer.out_dim {
                let gr = g[r];
                db[r] += gr;
                let row = &mut dw[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (d, a) in row.iter_mut().zip(a_prev) {
                    *d += gr * a;
                }
            }
            if k > 0 {
                let mut g_prev = vec![0.0; layer.in_dim];
                for r in 0..layer.out_dim {
                    let gr = g[r];
                    let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (gp, w) in g_prev.iter_mut().zip(row) {
                        *gp += gr * w;
                    }
                }
                g = g_prev;
            }
        }
    }
}

/// One standard-normal draw via Box-Muller.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 > 0.0 {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
        }
    }
}

/// Row-major `rows x cols` matrix with orthonormal rows (rows <= cols) or
/// columns (rows > cols), scaled by `gain`.
fn orthogonal_matrix(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Vec<f64> {
    let flip = rows < cols;
    let (m, n) = if flip { (cols, rows) } else { (rows, cols) };
    // Gaussian m x n, m >= n, row-major.
    let mut a: Vec<f64> = (0..m * n).map(|_| standard_normal(rng)).collect();

    // Householder QR; reflectors stored in-place below the diagonal.
    let mut r_diag = vec![0.0; n];
    let mut v = vec![0.0; m];
    for k in 0..n {
        let mut norm_sq = 0.0;
        for i in k..m {
            let val = a[i * n + k];
            v[i] = val;
            norm_sq += val * val;
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            // Degenerate column (probability zero for Gaussian draws).
            r_diag[k] = 0.0;
            for i in k..m {
                a[i * n + k] = 0.0;
            }
            continue;
        }
        let alpha = if v[k] >= 0.0 { -norm } else { norm };
        v[k] -= alpha;
        let v_norm_sq: f64 = (k..m).map(|i| v[i] * v[i]).sum();
        r_diag[k] = alpha;
        // Apply H = I - 2 v v^T / (v^T v) to the trailing block.
        for j in (k + 1)..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i] * a[i * n + j];
            }
            let scale = 2.0 * dot / v_norm_sq;
            for i in k..m {
                a[i * n + j] -= scale * v[i];
            }
        }
        // Keep the reflector in column k for the Q accumulation.
        for i in k..m {
            a[i * n + k] = v[i];
        }
    }

    // Accumulate thin Q = H_0 ... H_{n-1} I(m x n).
    let mut q = vec![0.0; m * n];
    for j in 0..n {
        q[j * n + j] = 1.0;
    }
    for k in (0..n).rev() {
        let v_norm_sq: f64 = (k..m).map(|i| a[i * n + k] * a[i * n + k]).sum();
        if v_norm_sq == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut dot = 0.0;
            for i in k..m {
                dot += a[i * n + k] * q[i * n + j];
            }
            let scale = 2.0 * dot / v_norm_sq;
            for i in k..m {
                q[i * n + j] -= scale * a[i * n + k];
            }
        }
    }

    // Sign-correct columns so the factorization is unique, then scale.
    for j in 0..n {
        let sign = if r_diag[j] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            q[i * n + j] *= sign * gain;
        }
    }

    if flip {
        // Want rows x cols = n x m: transpose Q.
        let mut out = vec![0.0; rows * cols];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = q[i * n + j];
            }
        }
        out
    } else {
        q
    }
}

/// Log-density and entropy of a scalar Gaussian at `action`.
pub fn gaussian_logprob_entropy(mean: f64, log_std: f64, action: f64) -> (f64, f64) {
    const HALF_LN_TAU: f64 = 0.918_938_533_204_672_7; // 0.5 * ln(2*pi)
    let std = log_std.exp();
    let z = (action - mean) / std;
    let logp = -0.5 * z * z - log_std - HALF_LN_TAU;
    let entropy = 0.5 + HALF_LN_TAU + log_std;
    (logp, entropy)
}

/// Actor-critic parameters: actor MLP producing the action mean, a
/// state-independent log standard deviation, and a critic MLP producing the
/// value estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub log_std: f64,
    pub critic: Mlp,
}

impl PolicyParams {
    pub const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
    pub const ACTOR_OUT_GAIN: f64 = 0.01;
    pub const CRITIC_OUT_GAIN: f64 = 1.0;

    /// Fresh policy: orthogonal layers (actor head squashed to 0.01 gain,
    /// critic head gain 1), log_std 0. Draw order is actor then critic.
    pub fn new(obs_dim: usize, hidden_dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let actor_spec = MlpSpec::new(obs_dim, hidden_dims.to_vec(), 1)?;
        let critic_spec = MlpSpec::new(obs_dim, hidden_dims.to_vec(), 1)?;
        Ok(PolicyParams {
            actor: Mlp::orthogonal(&actor_spec, Self::HIDDEN_GAIN, Self::ACTOR_OUT_GAIN, rng),
            log_std: 0.0,
            critic: Mlp::orthogonal(&critic_spec, Self::HIDDEN_GAIN, Self::CRITIC_OUT_GAIN, rng),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn actor_mean(&self, obs: &[f64]) -> f64 {
        self.actor.forward(obs)[0]
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.forward(obs)[0]
    }

    /// Samples an action from the Gaussian head and returns its log-prob.
    pub fn sample_action(&self, obs: &[f64], rng: &mut impl Rng) -> (f64, f64) {
        let mean = self.actor_mean(obs);
        let action = mean + self.log_std.exp() * standard_normal(rng);
        let (logp, _) = gaussian_logprob_entropy(mean, self.log_std, action);
        (action, logp)
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + 1 + self.critic.param_count()
    }

    /// Canonical flat layout: actor layers (weights then bias, in order),
    /// log_std, critic layers.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.actor.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out.push(self.log_std);
        for l in &self.critic.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        let mut pos = 0;
        for l in &mut self.actor.layers {
            let (nw, nb) = (l.weights.len(), l.bias.len());
            l.weights.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            l.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        self.log_std = flat[pos];
        pos += 1;
        for l in &mut self.critic.layers {
            let (nw, nb) = (l.weights.len(), l.bias.len());
            l.weights.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            l.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        debug_assert_eq!(pos, flat.len());
    }
}

/// Gradients mirroring [`PolicyParams`].
#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub actor: MlpGrads,
    pub log_std: f64,
    pub critic: MlpGrads,
}

impl PolicyGrads {
    pub fn zeros_like(policy: &PolicyParams) -> Self {
        PolicyGrads {
            actor: MlpGrads::zeros_like(&policy.actor),
            log_std: 0.0,
            critic: MlpGrads::zeros_like(&policy.critic),
        }
    }

    pub fn reset(&mut self) {
        self.actor.reset();
        self.log_std = 0.0;
        self.critic.reset();
    }

    /// Flattens in the same order as [`PolicyParams::flatten`].
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.clear();
        for (w, b) in &self.actor.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.push(self.log_std);
        for (w, b) in &self.critic.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(&mut self, t: u64, m: Vec<f64>, v: Vec<f64>) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.t = t;
        self.m = m;
        self.v = v;
    }

    /// Applies one bias-corrected update in place. Returns false (and leaves
    /// everything untouched) when the gradient contains non-finite values.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> bool {
        assert_eq!(params.len(), self.m.len(), "parameter length mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        if !grads.iter().all(|g| g.is_finite()) {
            return false;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        true
    }
}

/// Scales `grads` in place so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mlp(input: usize, hidden: Vec<usize>, output: usize, seed: u64) -> Mlp {
        let spec = MlpSpec::new(input, hidden, output).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::orthogonal(&spec, std::f64::consts::SQRT_2, 1.0, &mut rng)
    }

    /// Independent forward pass written with plain nested loops over an
    /// explicit matrix representation.
    fn forward_oracle(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (k, layer) in mlp.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            for r in 0..layer.out_dim {
                let mut acc = 0.0;
                for c in 0..layer.in_dim {
                    acc += layer.weights[r * layer.in_dim + c] * cur[c];
                }
                next[r] = acc + layer.bias[r];
            }
            if k + 1 < mlp.layers.len() {
                next = next.into_iter().map(|v| v.tanh()).collect();
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut mlp = random_mlp(3, vec![4], 2, 0);
        for l in &mut mlp.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        assert_eq!(mlp.forward(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_like_single_unit() {
        let mlp = Mlp {
            layers: vec![
                DenseLayer { weights: vec![1.0], bias: vec![0.0], in_dim: 1, out_dim: 1 },
                DenseLayer { weights: vec![1.0], bias: vec![0.0], in_dim: 1, out_dim: 1 },
            ],
        };
        assert_eq!(mlp.forward(&[0.0]), vec![0.0]);
        assert_relative_eq!(mlp.forward(&[0.7])[0], 0.7f64.tanh(), max_relative = 1e-15);
    }

    #[test]
    fn forward_matches_matrix_oracle() {
        let mlp = random_mlp(5, vec![7, 6], 3, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| standard_normal(&mut rng)).collect();
            let got = mlp.forward(&x);
            let want = forward_oracle(&mlp, &x);
            for (g, w) in got.iter().zip(&want) {
                assert_relative_eq!(g, w, epsilon = 1e-12);
            }
            let (tape_out, _) = mlp.forward_tape(&x);
            assert_eq!(got, tape_out);
        }
    }

    #[test]
    fn linear_net_weight_gradient_is_input() {
        let mlp = Mlp {
            layers: vec![DenseLayer { weights: vec![2.0], bias: vec![0.5], in_dim: 1, out_dim: 1 }],
        };
        let x = 3.7;
        let (_, tape) = mlp.forward_tape(&[x]);
        let mut grads = MlpGrads::zeros_like(&mlp);
        mlp.backward(&tape, &[1.0], &mut grads);
        assert_eq!(grads.layers[0].0[0], x);
        assert_eq!(grads.layers[0].1[0], 1.0);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mlp = random_mlp(4, vec![5], 2, 3);
        let (_, tape) = mlp.forward_tape(&[0.1, 0.2, 0.3, 0.4]);
        let mut grads = MlpGrads::zeros_like(&mlp);
        mlp.backward(&tape, &[0.0, 0.0], &mut grads);
        for (w, b) in &grads.layers {
            assert!(w.iter().all(|v| *v == 0.0));
            assert!(b.iter().all(|v| *v == 0.0));
        }
    }

    /// Central finite differences over every parameter of a random net.
    #[test]
    fn backward_matches_finite_differences() {
        let mlp = random_mlp(3, vec![5, 4], 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x: Vec<f64> = (0..3).map(|_| standard_normal(&mut rng)).collect();
        // Scalar loss: weighted sum of outputs.
        let wsum = [0.7, -1.3];
        let loss = |m: &Mlp| -> f64 {
            let y = m.forward(&x);
            y[0] * wsum[0] + y[1] * wsum[1]
        };

        let (_, tape) = mlp.forward_tape(&x);
        let mut grads = MlpGrads::zeros_like(&mlp);
        mlp.backward(&tape, &wsum, &mut grads);

        let h = 1e-5;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for li in 0..mlp.layers.len() {
            for wi in 0..mlp.layers[li].weights.len() {
                let mut plus = mlp.clone();
                plus.layers[li].weights[wi] += h;
                let mut minus = mlp.clone();
                minus.layers[li].weights[wi] -= h;
                numeric.push((loss(&plus) - loss(&minus)) / (2.0 * h));
                analytic.push(grads.layers[li].0[wi]);
            }
            for bi in 0..mlp.layers[li].bias.len() {
                let mut plus = mlp.clone();
                plus.layers[li].bias[bi] += h;
                let mut minus = mlp.clone();
                minus.layers[li].bias[bi] -= h;
                numeric.push((loss(&plus) - loss(&minus)) / (2.0 * h));
                analytic.push(grads.layers[li].1[bi]);
            }
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = numeric.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(diff / scale.max(1e-12) < 1e-6, "gradient mismatch {diff} vs scale {scale}");
    }

    #[test]
    fn orthogonal_gram_is_gain_squared_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (rows, cols, gain) in [(64usize, 15usize, std::f64::consts::SQRT_2), (1, 64, 0.01), (64, 64, 1.0), (4, 9, 1.0)] {
            let w = orthogonal_matrix(rows, cols, gain, &mut rng);
            let small = rows.min(cols);
            // Gram over the smaller dimension.
            for i in 0..small {
                for j in 0..small {
                    let mut dot = 0.0;
                    if rows <= cols {
                        for k in 0..cols {
                            dot += w[i * cols + k] * w[j * cols + k];
                        }
                    } else {
                        for k in 0..rows {
                            dot += w[k * cols + i] * w[k * cols + j];
                        }
                    }
                    let expect = if i == j { gain * gain } else { 0.0 };
                    assert!(
                        (dot - expect).abs() < 1e-8,
                        "gram[{i}][{j}] = {dot}, expected {expect} ({rows}x{cols})"
                    );
                }
            }
        }
    }

    #[test]
    fn gaussian_closed_forms() {
        let (logp, entropy) = gaussian_logprob_entropy(0.3, 0.0, 0.3);
        assert_relative_eq!(logp, -0.918_938_533_204_672_7, max_relative = 1e-12);
        assert_relative_eq!(entropy, 1.418_938_533_204_672_7, max_relative = 1e-12);
        // logp decreases monotonically in |a - mean|.
        let mut prev = logp;
        for k in 1..10 {
            let (lp, _) = gaussian_logprob_entropy(0.3, 0.0, 0.3 + 0.5 * k as f64);
            assert!(lp < prev);
            prev = lp;
        }
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut adam = AdamState::new(3, 0.1);
        let mut params = vec![1.0, -2.0, 0.5];
        assert!(adam.step(&mut params, &[0.0, 0.0, 0.0]));
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut adam = AdamState::new(1, 0.1);
        let mut params = vec![0.0];
        assert!(adam.step(&mut params, &[1.0]));
        // Bias correction makes m_hat = v_hat = 1 on the first step.
        assert_relative_eq!(params[0], -0.1, epsilon = 1e-6);
    }

    #[test]
    fn adam_rejects_non_finite_grads() {
        let mut adam = AdamState::new(2, 0.1);
        let mut params = vec![1.0, 2.0];
        assert!(!adam.step(&mut params, &[f64::NAN, 0.0]));
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut adam = AdamState::new(2, 0.01);
            let mut params = vec![0.3, -0.7];
            for k in 0..50 {
                let g = [0.1 * k as f64, -0.05];
                adam.step(&mut params, &g);
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_grad_norm_bounds_global_norm() {
        let mut g = vec![3.0, 4.0]; // norm 5
        let pre = clip_grad_norm(&mut g, 0.5);
        assert_relative_eq!(pre, 5.0, max_relative = 1e-12);
        let post: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(post <= 0.5 + 1e-9);
        // Below the bound nothing changes.
        let mut g2 = vec![0.1, 0.2];
        clip_grad_norm(&mut g2, 0.5);
        assert_eq!(g2, vec![0.1, 0.2]);
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let policy = PolicyParams::new(15, &[64], &mut rng).unwrap();
        let flat = policy.flatten();
        assert_eq!(flat.len(), policy.param_count());
        let mut other = PolicyParams::new(15, &[64], &mut rng).unwrap();
        other.set_from_flat(&flat);
        assert_eq!(other, policy);
    }
}
