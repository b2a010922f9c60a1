//! Categorical softmax heads over per-action logits, trained by gradient
//! descent on `KL(target ‖ φ(x, a; θ))` with hand-written backpropagation.
//!
//! Two architectures share one flat weight vector:
//!
//! * [`Architecture::TabularLogits`]: logits are linear in the features,
//!   `z[a][k] = Σ_f x_f W[f][a][k]`. With one-hot state features this is a
//!   table holding one logit row per state-action pair.
//! * [`Architecture::OneHiddenLayer`]: `h = relu(W1 x + b1)`,
//!   `z = W2 h + b2`.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::{Categorical, Support};
use crate::error::{Error, Result};
use crate::mdp::argmax;

/// Smoothing applied to model probabilities inside the training loss.
pub const TRAINING_KL_SMOOTHING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    TabularLogits,
    OneHiddenLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub feature_dim: usize,
    /// Ignored by [`Architecture::TabularLogits`].
    pub hidden_dim: usize,
    pub n_actions: usize,
    pub n_atoms: usize,
}

impl Dims {
    pub fn weight_count(&self, arch: Architecture) -> usize {
        let out = self.n_actions * self.n_atoms;
        match arch {
            Architecture::TabularLogits => self.feature_dim * out,
            Architecture::OneHiddenLayer => {
                self.hidden_dim * self.feature_dim + self.hidden_dim + out * self.hidden_dim + out
            }
        }
    }
}

/// `θ ← θ − lr · g`, with `g` optionally rescaled to at most `clip_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientUpdateRule {
    pub learning_rate: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl GradientUpdateRule {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidConfig(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproximatorParams {
    arch: Architecture,
    dims: Dims,
    support: Support,
    seed: u64,
    weights: Vec<f64>,
}

/// Intermediate values of one forward pass.
struct Activations {
    /// Hidden pre-activations (empty for the tabular head).
    pre: Vec<f64>,
    hidden: Vec<f64>,
    /// `n_actions × n_atoms` logits.
    logits: Vec<f64>,
}

impl ApproximatorParams {
    /// Seeded initialisation, uniform in `±1/√fan_in` per layer.
    pub fn init(arch: Architecture, dims: Dims, support: Support, seed: u64) -> Result<Self> {
        Self::check_dims(arch, dims, support)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize, out: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            out.extend((0..n).map(|_| rng.random_range(-bound..bound)));
        };
        let mut weights = Vec::with_capacity(dims.weight_count(arch));
        let out = dims.n_actions * dims.n_atoms;
        match arch {
            Architecture::TabularLogits => uniform(dims.feature_dim * out, dims.feature_dim, &mut weights),
            Architecture::OneHiddenLayer => {
                uniform(dims.hidden_dim * dims.feature_dim, dims.feature_dim, &mut weights);
                uniform(dims.hidden_dim, dims.feature_dim, &mut weights);
                uniform(out * dims.hidden_dim, dims.hidden_dim, &mut weights);
                uniform(out, dims.hidden_dim, &mut weights);
            }
        }
        Ok(Self {
            arch,
            dims,
            support,
            seed,
            weights,
        })
    }

    /// All-zero weights: every action predicts the uniform distribution.
    pub fn zeros(arch: Architecture, dims: Dims, support: Support) -> Result<Self> {
        Self::from_weights(arch, dims, support, 0, vec![0.0; dims.weight_count(arch)])
    }

    pub fn from_weights(
        arch: Architecture,
        dims: Dims,
        support: Support,
        seed: u64,
        weights: Vec<f64>,
    ) -> Result<Self> {
        Self::check_dims(arch, dims, support)?;
        if weights.len() != dims.weight_count(arch) {
            return Err(Error::DimensionMismatch {
                expected: dims.weight_count(arch),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("weights must be finite".into()));
        }
        Ok(Self {
            arch,
            dims,
            support,
            seed,
            weights,
        })
    }

    fn check_dims(arch: Architecture, dims: Dims, support: Support) -> Result<()> {
        if dims.feature_dim == 0 || dims.n_actions == 0 {
            return Err(Error::InvalidConfig("feature_dim and n_actions must be positive".into()));
        }
        if arch == Architecture::OneHiddenLayer && dims.hidden_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim must be positive".into()));
        }
        if dims.n_atoms != support.len() {
            return Err(Error::DimensionMismatch {
                expected: support.len(),
                actual: dims.n_atoms,
            });
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dims.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.dims.feature_dim,
                actual: features.len(),
            });
        }
        Ok(())
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let Dims {
            feature_dim: f_dim,
            hidden_dim: h_dim,
            n_actions,
            n_atoms,
        } = self.dims;
        let out = n_actions * n_atoms;
        match self.arch {
            Architecture::TabularLogits => {
                let mut logits = vec![0.0; out];
                for (f, &xf) in x.iter().enumerate() {
                    if xf == 0.0 {
                        continue;
                    }
                    let row = &self.weights[f * out..(f + 1) * out];
                    for (z, w) in logits.iter_mut().zip(row) {
                        *z += xf * w;
                    }
                }
                Activations {
                    pre: Vec::new(),
                    hidden: Vec::new(),
                    logits,
                }
            }
            Architecture::OneHiddenLayer => {
                let (w1, rest) = self.weights.split_at(h_dim * f_dim);
                let (b1, rest) = rest.split_at(h_dim);
                let (w2, b2) = rest.split_at(out * h_dim);
                let pre: Vec<f64> = (0..h_dim)
                    .map(|h| {
                        let row = &w1[h * f_dim..(h + 1) * f_dim];
                        b1[h] + row.iter().zip(x).map(|(w, xf)| w * xf).sum::<f64>()
                    })
                    .collect();
                let hidden: Vec<f64> = pre.iter().map(|p| p.max(0.0)).collect();
                let logits = (0..out)
                    .map(|o| {
                        let row = &w2[o * h_dim..(o + 1) * h_dim];
                        b2[o] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
                    })
                    .collect();
                Activations { pre, hidden, logits }
            }
        }
    }

    /// Raw logits, `n_actions × n_atoms` row-major.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_features(features)?;
        Ok(self.activations(features).logits)
    }

    fn action_probs(&self, logits: &[f64], action: usize) -> Vec<f64> {
        let k = self.dims.n_atoms;
        softmax(&logits[action * k..(action + 1) * k])
    }

    /// Predicted return distribution of every action.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<Categorical>> {
        let logits = self.logits(features)?;
        Ok((0..self.dims.n_actions)
            .map(|a| Categorical::from_raw(self.support, self.action_probs(&logits, a)))
            .collect())
    }

    /// Predicted return distribution of one action.
    pub fn forward_action(&self, features: &[f64], action: usize) -> Result<Categorical> {
        self.check_action(action)?;
        let logits = self.logits(features)?;
        Ok(Categorical::from_raw(self.support, self.action_probs(&logits, action)))
    }

    /// Means of the predicted distributions.
    pub fn q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(features)?.iter().map(Categorical::mean).collect())
    }

    /// Greedy action, lowest index on ties.
    pub fn greedy_action(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(features)?))
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.dims.n_actions {
            return Err(Error::DimensionMismatch {
                expected: self.dims.n_actions,
                actual: action,
            });
        }
        Ok(())
    }

    /// KL loss of one sample with its gradient.
    pub fn kl_loss_and_grad(
        &self,
        features: &[f64],
        action: usize,
        target: &Categorical,
        smoothing: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.weights.len()];
        let loss = self.accumulate_kl_grad(features, action, target, smoothing, &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds the gradient of `KL(target ‖ smoothed φ(x, action))` into `grad`
    /// and returns the loss.
    pub fn accumulate_kl_grad(
        &self,
        features: &[f64],
        action: usize,
        target: &Categorical,
        smoothing: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_features(features)?;
        self.check_action(action)?;
        if *target.support() != self.support {
            return Err(Error::SupportMismatch);
        }
        if grad.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: grad.len(),
            });
        }
        let act = self.activations(features);
        let q = self.action_probs(&act.logits, action);
        let (loss, dlogits) = kl_softmax_grad(target.probs(), &q, smoothing);

        let Dims {
            feature_dim: f_dim,
            hidden_dim: h_dim,
            n_actions,
            n_atoms: k,
        } = self.dims;
        let out = n_actions * k;
        let offset = action * k;
        match self.arch {
            Architecture::TabularLogits => {
                for (f, &xf) in features.iter().enumerate() {
                    if xf == 0.0 {
                        continue;
                    }
                    let row = &mut grad[f * out + offset..f * out + offset + k];
                    for (g, d) in row.iter_mut().zip(&dlogits) {
                        *g += xf * d;
                    }
                }
            }
            Architecture::OneHiddenLayer => {
                let w2_start = h_dim * f_dim + h_dim;
                let b2_start = w2_start + out * h_dim;
                let w2 = &self.weights[w2_start..b2_start];
                let mut dhidden = vec![0.0; h_dim];
                for (j, d) in dlogits.iter().enumerate() {
                    let o = offset + j;
                    grad[b2_start + o] += d;
                    let w_row = &w2[o * h_dim..(o + 1) * h_dim];
                    let g_row = &mut grad[w2_start + o * h_dim..w2_start + (o + 1) * h_dim];
                    for h in 0..h_dim {
                        g_row[h] += d * act.hidden[h];
                        dhidden[h] += d * w_row[h];
                    }
                }
                for h in 0..h_dim {
                    if act.pre[h] <= 0.0 {
                        continue;
                    }
                    let dpre = dhidden[h];
                    grad[h_dim * f_dim + h] += dpre;
                    let g_row = &mut grad[h * f_dim..(h + 1) * f_dim];
                    for (g, xf) in g_row.iter_mut().zip(features) {
                        *g += dpre * xf;
                    }
                }
            }
        }
        Ok(loss)
    }

    /// In-place form of [`apply_update`].
    pub fn apply_update_in_place(&mut self, grad: &[f64], rule: &GradientUpdateRule) -> Result<()> {
        if grad.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: grad.len(),
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            log::error!("rejecting gradient step: coordinate {index} is {}", grad[index]);
            return Err(Error::NonFiniteGradient { index });
        }
        let mut scale = rule.learning_rate;
        if let Some(clip) = rule.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                scale *= clip / norm;
            }
        }
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= scale * g;
        }
        Ok(())
    }
}

/// `θ − lr · g` as a new parameter value.
pub fn apply_update(
    params: &ApproximatorParams,
    grad: &[f64],
    rule: &GradientUpdateRule,
) -> Result<ApproximatorParams> {
    let mut next = params.clone();
    next.apply_update_in_place(grad, rule)?;
    Ok(next)
}

/// Numerically stable softmax; never returns an exact zero.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter()
        .map(|e| (e / total).max(f64::MIN_POSITIVE))
        .collect()
}

/// Loss and logit gradient of `KL(t ‖ q̃)` where `q = softmax(z)` and
/// `q̃_i = (q_i + ε)/(1 + Kε)`. For `ε = 0` the gradient is `q − t`.
fn kl_softmax_grad(target: &[f64], q: &[f64], smoothing: f64) -> (f64, Vec<f64>) {
    let norm = 1.0 + q.len() as f64 * smoothing;
    let mut loss = 0.0;
    let mut weighted = 0.0;
    for (&t, &qi) in target.iter().zip(q) {
        if t > 0.0 {
            loss += t * (t.ln() - ((qi + smoothing) / norm).ln());
            weighted += t * qi / (qi + smoothing);
        }
    }
    let grad = target
        .iter()
        .zip(q)
        .map(|(&t, &qi)| {
            let own = if t > 0.0 { t * qi / (qi + smoothing) } else { 0.0 };
            qi * weighted - own
        })
        .collect();
    (loss.max(0.0), grad)
}
