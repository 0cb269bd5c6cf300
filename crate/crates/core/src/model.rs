//! The trainable model: a one-hidden-layer tanh encoder plus a linear
//! softmax classifier, with explicit analytic gradients and SGD.
//!
//! The encoder and classifier use separate learning rates; gradients are
//! exact, which the finite-difference suite verifies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

/// Encoder and classifier weights. The encoder maps `input_dim` features to
/// `hidden_dim` tanh activations; the classifier maps those to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
    /// `input_dim x hidden_dim`, row-major.
    pub encoder_weights: Matrix,
    pub encoder_bias: Vec<f64>,
    /// `hidden_dim x class_count`, row-major.
    pub classifier_weights: Matrix,
    pub classifier_bias: Vec<f64>,
}

/// One buffer per parameter block, shape-matched to [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub encoder_weights: Matrix,
    pub encoder_bias: Vec<f64>,
    pub classifier_weights: Matrix,
    pub classifier_bias: Vec<f64>,
}

/// SGD hyperparameters. The classifier block steps with its own rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub classifier_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-4,
            classifier_lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid_config("learning_rate must be positive"));
        }
        if !(self.classifier_lr > 0.0) {
            return Err(Error::invalid_config("classifier_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid_config("momentum must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid_config("weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

impl ModelParams {
    /// Seeded initialization: every block uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`.
    pub fn init(input_dim: usize, hidden_dim: usize, class_count: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || class_count < 2 {
            return Err(Error::invalid_config(format!(
                "model dims must satisfy input >= 1, hidden >= 1, classes >= 2; got ({input_dim}, {hidden_dim}, {class_count})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_bound = 1.0 / (input_dim as f64).sqrt();
        let cls_bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut draw = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        Ok(ModelParams {
            input_dim,
            hidden_dim,
            class_count,
            encoder_weights: Matrix::from_values(
                input_dim,
                hidden_dim,
                draw(input_dim * hidden_dim, enc_bound),
            )?,
            encoder_bias: draw(hidden_dim, enc_bound),
            classifier_weights: Matrix::from_values(
                hidden_dim,
                class_count,
                draw(hidden_dim * class_count, cls_bound),
            )?,
            classifier_bias: draw(class_count, cls_bound),
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "model input",
                left: self.input_dim,
                right: x.len(),
            });
        }
        Ok(())
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut a = self.encoder_bias.clone();
        for (i, xi) in x.iter().enumerate() {
            let row = self.encoder_weights.row(i);
            for (j, w) in row.iter().enumerate() {
                a[j] += xi * w;
            }
        }
        a
    }

    /// Encoder output `tanh(W x + b)`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.pre_activation(x).into_iter().map(f64::tanh).collect())
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        let mut z = self.classifier_bias.clone();
        for (j, hj) in hidden.iter().enumerate() {
            let row = self.classifier_weights.row(j);
            for (c, w) in row.iter().enumerate() {
                z[c] += hj * w;
            }
        }
        z
    }

    /// Embedding plus class probabilities for one sample.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let hidden = self.embed(x)?;
        let probs = numerics::softmax(&self.logits(&hidden))?;
        Ok((hidden, probs))
    }

    /// Class probabilities only.
    pub fn predict_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.1)
    }
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet {
            encoder_weights: Matrix::zeros(params.input_dim, params.hidden_dim),
            encoder_bias: vec![0.0; params.hidden_dim],
            classifier_weights: Matrix::zeros(params.hidden_dim, params.class_count),
            classifier_bias: vec![0.0; params.class_count],
        }
    }

    pub fn add(&mut self, other: &GradientSet) {
        for (a, b) in self
            .encoder_weights
            .values_mut()
            .iter_mut()
            .zip(other.encoder_weights.values())
        {
            *a += b;
        }
        for (a, b) in self.encoder_bias.iter_mut().zip(&other.encoder_bias) {
            *a += b;
        }
        for (a, b) in self
            .classifier_weights
            .values_mut()
            .iter_mut()
            .zip(other.classifier_weights.values())
        {
            *a += b;
        }
        for (a, b) in self.classifier_bias.iter_mut().zip(&other.classifier_bias) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.encoder_weights
            .values()
            .iter()
            .chain(&self.encoder_bias)
            .chain(self.classifier_weights.values())
            .chain(&self.classifier_bias)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Weighted-mean cross-entropy over a batch, with its exact gradient.
///
/// `loss = (1/n) sum_i w_i * CE(probs_i, y_i)`; all-zero weights give zero
/// loss and zero gradients.
pub fn backward(
    params: &ModelParams,
    batch: &[(&[f64], usize)],
    loss_weights: &[f64],
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::Empty { what: "batch" });
    }
    if loss_weights.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            context: "loss_weights",
            left: batch.len(),
            right: loss_weights.len(),
        });
    }
    let n = batch.len() as f64;
    let mut grads = GradientSet::zeros_like(params);
    let mut loss = 0.0;

    for ((x, label), &w) in batch.iter().zip(loss_weights) {
        if *label >= params.class_count {
            return Err(Error::LabelOutOfRange {
                label: *label,
                classes: params.class_count,
            });
        }
        let hidden = params.embed(x)?;
        let probs = numerics::softmax(&params.logits(&hidden))?;
        loss += w * numerics::cross_entropy(&probs, *label)? / n;
        if w == 0.0 {
            continue;
        }
        // d loss / d logit_c; zero when the clamp is active (locally constant loss).
        let clamped = probs[*label] <= numerics::LOG_CLAMP;
        let scale = w / n;
        let mut dlogits = vec![0.0; params.class_count];
        if !clamped {
            for (c, d) in dlogits.iter_mut().enumerate() {
                *d = scale * (probs[c] - if c == *label { 1.0 } else { 0.0 });
            }
        }
        let mut dhidden = vec![0.0; params.hidden_dim];
        for j in 0..params.hidden_dim {
            for (c, dl) in dlogits.iter().enumerate() {
                grads.classifier_weights.add_at(j, c, hidden[j] * dl);
                dhidden[j] += params.classifier_weights.get(j, c) * dl;
            }
        }
        for (c, d) in dlogits.iter().enumerate() {
            grads.classifier_bias[c] += d;
        }
        accumulate_encoder(params, &mut grads, x, &hidden, &dhidden);
    }
    Ok((loss, grads))
}

/// Chain-rule a scalar functional of the embeddings back into the encoder.
///
/// `functional` receives the batch of embeddings and must return the scalar
/// value together with one gradient vector per embedding. Classifier blocks
/// are untouched.
pub fn backward_scalar<F>(
    params: &ModelParams,
    inputs: &[&[f64]],
    functional: F,
) -> Result<(f64, GradientSet)>
where
    F: FnOnce(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
{
    let mut embeddings = Vec::with_capacity(inputs.len());
    for x in inputs {
        embeddings.push(params.embed(x)?);
    }
    let (value, emb_grads) = functional(&embeddings);
    if emb_grads.len() != inputs.len() {
        return Err(Error::DimensionMismatch {
            context: "embedding gradients",
            left: inputs.len(),
            right: emb_grads.len(),
        });
    }
    let mut grads = GradientSet::zeros_like(params);
    for ((x, hidden), dh) in inputs.iter().zip(&embeddings).zip(&emb_grads) {
        if dh.len() != params.hidden_dim {
            return Err(Error::DimensionMismatch {
                context: "embedding gradient width",
                left: params.hidden_dim,
                right: dh.len(),
            });
        }
        accumulate_encoder(params, &mut grads, x, hidden, dh);
    }
    Ok((value, grads))
}

fn accumulate_encoder(
    params: &ModelParams,
    grads: &mut GradientSet,
    x: &[f64],
    hidden: &[f64],
    dhidden: &[f64],
) {
    // da_j = dh_j * (1 - tanh^2(a_j))
    let da: Vec<f64> = dhidden
        .iter()
        .zip(hidden)
        .map(|(dh, h)| dh * (1.0 - h * h))
        .collect();
    for (i, xi) in x.iter().enumerate() {
        for (j, daj) in da.iter().enumerate() {
            grads.encoder_weights.add_at(i, j, xi * daj);
        }
    }
    for (j, daj) in da.iter().enumerate() {
        grads.encoder_bias[j] += daj;
    }
    let _ = params;
}

/// SGD with momentum and weight decay:
/// `v <- momentum*v + grad + weight_decay*param; param <- param - lr*v`.
/// Encoder blocks use `learning_rate`, classifier blocks `classifier_lr`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    cfg: &SgdConfig,
    momentum_state: &mut GradientSet,
) {
    fn step(p: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, mu: f64, wd: f64) {
        for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mu * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
    step(
        params.encoder_weights.values_mut(),
        grads.encoder_weights.values(),
        momentum_state.encoder_weights.values_mut(),
        cfg.learning_rate,
        cfg.momentum,
        cfg.weight_decay,
    );
    step(
        &mut params.encoder_bias,
        &grads.encoder_bias,
        &mut momentum_state.encoder_bias,
        cfg.learning_rate,
        cfg.momentum,
        cfg.weight_decay,
    );
    step(
        params.classifier_weights.values_mut(),
        grads.classifier_weights.values(),
        momentum_state.classifier_weights.values_mut(),
        cfg.classifier_lr,
        cfg.momentum,
        cfg.weight_decay,
    );
    step(
        &mut params.classifier_bias,
        &grads.classifier_bias,
        &mut momentum_state.classifier_bias,
        cfg.classifier_lr,
        cfg.momentum,
        cfg.weight_decay,
    );
}

/// Flat checkpoint layout: dims plus row-major weight blocks.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    dims: [usize; 3],
    encoder_weights: Vec<f64>,
    encoder_bias: Vec<f64>,
    classifier_weights: Vec<f64>,
    classifier_bias: Vec<f64>,
}

impl ModelParams {
    pub fn to_checkpoint_json(&self) -> String {
        let ckpt = Checkpoint {
            dims: [self.input_dim, self.hidden_dim, self.class_count],
            encoder_weights: self.encoder_weights.values().to_vec(),
            encoder_bias: self.encoder_bias.clone(),
            classifier_weights: self.classifier_weights.values().to_vec(),
            classifier_bias: self.classifier_bias.clone(),
        };
        serde_json::to_string_pretty(&ckpt).expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "model checkpoint",
            message: e.to_string(),
        })?;
        let [input_dim, hidden_dim, class_count] = ckpt.dims;
        Ok(ModelParams {
            input_dim,
            hidden_dim,
            class_count,
            encoder_weights: Matrix::from_values(input_dim, hidden_dim, ckpt.encoder_weights)?,
            encoder_bias: ckpt.encoder_bias,
            classifier_weights: Matrix::from_values(
                hidden_dim,
                class_count,
                ckpt.classifier_weights,
            )?,
            classifier_bias: ckpt.classifier_bias,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(input: usize, hidden: usize, classes: usize) -> ModelParams {
        ModelParams {
            input_dim: input,
            hidden_dim: hidden,
            class_count: classes,
            encoder_weights: Matrix::zeros(input, hidden),
            encoder_bias: vec![0.0; hidden],
            classifier_weights: Matrix::zeros(hidden, classes),
            classifier_bias: vec![0.0; classes],
        }
    }

    /// Central finite differences over every parameter entry.
    fn fd_grads<F>(params: &ModelParams, loss: F, step: f64) -> GradientSet
    where
        F: Fn(&ModelParams) -> f64,
    {
        let mut out = GradientSet::zeros_like(params);
        let probe = |mutate: &dyn Fn(&mut ModelParams, f64)| -> f64 {
            let mut plus = params.clone();
            mutate(&mut plus, step);
            let mut minus = params.clone();
            mutate(&mut minus, -step);
            (loss(&plus) - loss(&minus)) / (2.0 * step)
        };
        for i in 0..params.input_dim {
            for j in 0..params.hidden_dim {
                let g = probe(&|p, d| {
                    let v = p.encoder_weights.get(i, j) + d;
                    p.encoder_weights.set(i, j, v);
                });
                out.encoder_weights.set(i, j, g);
            }
        }
        for j in 0..params.hidden_dim {
            out.encoder_bias[j] = probe(&|p, d| p.encoder_bias[j] += d);
        }
        for j in 0..params.hidden_dim {
            for c in 0..params.class_count {
                let g = probe(&|p, d| {
                    let v = p.classifier_weights.get(j, c) + d;
                    p.classifier_weights.set(j, c, v);
                });
                out.classifier_weights.set(j, c, g);
            }
        }
        for c in 0..params.class_count {
            out.classifier_bias[c] = probe(&|p, d| p.classifier_bias[c] += d);
        }
        out
    }

    fn assert_close_grads(analytic: &GradientSet, numeric: &GradientSet, tol: f64) {
        let pairs = analytic
            .encoder_weights
            .values()
            .iter()
            .zip(numeric.encoder_weights.values())
            .chain(analytic.encoder_bias.iter().zip(&numeric.encoder_bias))
            .chain(
                analytic
                    .classifier_weights
                    .values()
                    .iter()
                    .zip(numeric.classifier_weights.values()),
            )
            .chain(analytic.classifier_bias.iter().zip(&numeric.classifier_bias));
        for (a, f) in pairs {
            let err = (a - f).abs() / f64::max(1.0, f64::max(a.abs(), f.abs()));
            assert!(err <= tol, "gradient mismatch: analytic {a}, fd {f}");
        }
    }

    #[test]
    fn embed_zero_params_is_zero() {
        let m = zeroed(3, 4, 2);
        assert_eq!(m.embed(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn embed_scalar_tanh() {
        let mut m = zeroed(1, 1, 2);
        m.encoder_weights.set(0, 0, 1.0);
        let h = m.embed(&[0.5]).unwrap();
        assert!((h[0] - 0.46211715726000974).abs() < 1e-12);
    }

    #[test]
    fn embed_is_deterministic() {
        let m = ModelParams::init(4, 8, 3, 11).unwrap();
        let x = [0.1, -0.7, 2.0, 0.3];
        assert_eq!(m.embed(&x).unwrap(), m.embed(&x).unwrap());
    }

    #[test]
    fn embed_rejects_wrong_dim() {
        let m = zeroed(3, 2, 2);
        assert!(m.embed(&[1.0]).is_err());
    }

    #[test]
    fn forward_zero_params_is_uniform() {
        let m = zeroed(3, 4, 2);
        let (_, p) = m.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn forward_matches_hand_composed_chain() {
        let mut m = zeroed(1, 1, 2);
        m.encoder_weights.set(0, 0, 1.0);
        m.classifier_weights.set(0, 0, 1.0);
        m.classifier_weights.set(0, 1, -1.0);
        let (h, p) = m.forward(&[0.5]).unwrap();
        let t = 0.5f64.tanh();
        assert!((h[0] - t).abs() < 1e-15);
        let expect = numerics::softmax(&[t, -t]).unwrap();
        assert!((p[0] - expect[0]).abs() < 1e-15);
        assert!((p[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn forward_probs_sum_to_one() {
        let m = ModelParams::init(5, 7, 4, 3).unwrap();
        let (_, p) = m.forward(&[0.3, -2.0, 1.5, 0.0, 9.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backward_zero_weights_zero_everything() {
        let m = ModelParams::init(3, 4, 2, 5).unwrap();
        let x1 = [1.0, 0.0, -1.0];
        let x2 = [0.5, 0.5, 0.5];
        let batch: Vec<(&[f64], usize)> = vec![(&x1, 0), (&x2, 1)];
        let (loss, grads) = backward(&m, &batch, &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn backward_rejects_empty_batch() {
        let m = zeroed(2, 2, 2);
        assert!(backward(&m, &[], &[]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..3u64 {
            let m = ModelParams::init(4, 8, 3, 100 + seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3usize)).collect();
            let weights: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..1.5)).collect();
            let batch: Vec<(&[f64], usize)> = xs
                .iter()
                .map(|x| x.as_slice())
                .zip(labels.iter().cloned())
                .collect();
            let (_, analytic) = backward(&m, &batch, &weights).unwrap();
            let numeric = fd_grads(
                &m,
                |p| backward(p, &batch, &weights).unwrap().0,
                1e-5,
            );
            assert_close_grads(&analytic, &numeric, 1e-4);
        }
    }

    #[test]
    fn backward_scalar_zero_functional() {
        let m = ModelParams::init(3, 4, 2, 9).unwrap();
        let x1 = [0.2, -0.4, 0.9];
        let (v, g) = backward_scalar(&m, &[&x1], |embs| {
            (0.0, vec![vec![0.0; 4]; embs.len()])
        })
        .unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn backward_scalar_half_norm_matches_fd() {
        let m = ModelParams::init(3, 5, 2, 42).unwrap();
        let x = [0.7, -1.1, 0.4];
        let half_sq = |embs: &[Vec<f64>]| {
            let v = 0.5 * embs[0].iter().map(|e| e * e).sum::<f64>();
            (v, vec![embs[0].clone()])
        };
        let (_, analytic) = backward_scalar(&m, &[&x], half_sq).unwrap();
        let numeric = fd_grads(
            &m,
            |p| backward_scalar(p, &[&x], half_sq).unwrap().0,
            1e-5,
        );
        assert_close_grads(&analytic, &numeric, 1e-4);
    }

    #[test]
    fn backward_scalar_is_linear() {
        let m = ModelParams::init(2, 3, 2, 77).unwrap();
        let x = [0.5, -0.2];
        let f = |embs: &[Vec<f64>]| (embs[0][0], vec![vec![1.0, 0.0, 0.0]]);
        let g = |embs: &[Vec<f64>]| (embs[0][1], vec![vec![0.0, 1.0, 0.0]]);
        let fg = |embs: &[Vec<f64>]| (embs[0][0] + embs[0][1], vec![vec![1.0, 1.0, 0.0]]);
        let (_, gf) = backward_scalar(&m, &[&x], f).unwrap();
        let (_, gg) = backward_scalar(&m, &[&x], g).unwrap();
        let (_, gsum) = backward_scalar(&m, &[&x], fg).unwrap();
        let mut combined = gf.clone();
        combined.add(&gg);
        for (a, b) in gsum
            .encoder_weights
            .values()
            .iter()
            .zip(combined.encoder_weights.values())
        {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sgd_zero_grads_leave_params_unchanged() {
        let mut m = ModelParams::init(2, 3, 2, 1).unwrap();
        let before = m.clone();
        let grads = GradientSet::zeros_like(&m);
        let mut mom = GradientSet::zeros_like(&m);
        let cfg = SgdConfig {
            learning_rate: 0.1,
            classifier_lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        sgd_step(&mut m, &grads, &cfg, &mut mom);
        assert_eq!(m, before);
    }

    #[test]
    fn sgd_plain_step_is_definition() {
        let mut m = zeroed(1, 1, 2);
        m.encoder_weights.set(0, 0, 1.0);
        let mut grads = GradientSet::zeros_like(&m);
        grads.encoder_weights.set(0, 0, 0.5);
        let mut mom = GradientSet::zeros_like(&m);
        let cfg = SgdConfig {
            learning_rate: 0.1,
            classifier_lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        sgd_step(&mut m, &grads, &cfg, &mut mom);
        assert!((m.encoder_weights.get(0, 0) - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_step_displacement() {
        // v1 = g, v2 = 0.9 g + g, so the total displacement is lr*(g + 1.9 g).
        let mut m = zeroed(1, 1, 2);
        m.encoder_weights.set(0, 0, 1.0);
        let mut grads = GradientSet::zeros_like(&m);
        grads.encoder_weights.set(0, 0, 0.5);
        let mut mom = GradientSet::zeros_like(&m);
        let cfg = SgdConfig {
            learning_rate: 0.1,
            classifier_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut m, &grads, &cfg, &mut mom);
        sgd_step(&mut m, &grads, &cfg, &mut mom);
        let expected = 1.0 - 0.1 * (0.5 + 1.9 * 0.5);
        assert!((m.encoder_weights.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        assert_eq!(
            ModelParams::init(4, 8, 3, 21).unwrap(),
            ModelParams::init(4, 8, 3, 21).unwrap()
        );
        assert_ne!(
            ModelParams::init(4, 8, 3, 21).unwrap(),
            ModelParams::init(4, 8, 3, 22).unwrap()
        );
    }

    #[test]
    fn fifty_sgd_steps_reduce_loss_on_separable_batch() {
        let mut m = ModelParams::init(2, 4, 2, 7).unwrap();
        let xs: Vec<Vec<f64>> = vec![
            vec![-1.0, 0.2],
            vec![-1.2, -0.1],
            vec![-0.8, 0.0],
            vec![1.0, 0.1],
            vec![1.2, -0.2],
            vec![0.9, 0.3],
        ];
        let labels = [0usize, 0, 0, 1, 1, 1];
        let batch: Vec<(&[f64], usize)> = xs
            .iter()
            .map(|x| x.as_slice())
            .zip(labels.iter().cloned())
            .collect();
        let weights = vec![1.0; batch.len()];
        let cfg = SgdConfig {
            learning_rate: 0.1,
            classifier_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut mom = GradientSet::zeros_like(&m);
        let (initial, _) = backward(&m, &batch, &weights).unwrap();
        for _ in 0..50 {
            let (_, grads) = backward(&m, &batch, &weights).unwrap();
            sgd_step(&mut m, &grads, &cfg, &mut mom);
        }
        let (final_loss, _) = backward(&m, &batch, &weights).unwrap();
        assert!(
            final_loss < initial,
            "loss did not decrease: {initial} -> {final_loss}"
        );
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let m = ModelParams::init(4, 8, 3, 99).unwrap();
        let json = m.to_checkpoint_json();
        let back = ModelParams::from_checkpoint_json(&json).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(ModelParams::from_checkpoint_json("not json").is_err());
    }
}
