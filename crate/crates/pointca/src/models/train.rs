//! Training loops for the completion model and the classifier.

use super::{Classifier, CompletionModel};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Hyperparameters shared by both training loops. The seed fixes every
/// stochastic draw, so equal configs give identical trajectories.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Standard deviation of the Gaussian coordinate jitter applied to
    /// training inputs. Hardens the encoder against small perturbations;
    /// zero disables augmentation.
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 8,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            jitter_sigma: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0 < self.adam_beta1 && self.adam_beta1 < 1.0)
            || !(0.0 < self.adam_beta2 && self.adam_beta2 < 1.0)
        {
            return Err(Error::InvalidConfig("adam betas must lie in (0, 1)".into()));
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::InvalidConfig("adam_eps must be positive".into()));
        }
        if self.jitter_sigma < 0.0 {
            return Err(Error::InvalidConfig("jitter_sigma must be nonnegative".into()));
        }
        Ok(())
    }

    fn augments(&self) -> bool {
        self.jitter_sigma > 0.0
    }
}

/// Input cloud with seeded Gaussian jitter on every coordinate.
fn augmented(cloud: &PointCloud, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> PointCloud {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, cfg.jitter_sigma).expect("valid sigma");
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            [
                p[0] + normal.sample(rng),
                p[1] + normal.sample(rng),
                p[2] + normal.sample(rng),
            ]
        })
        .collect();
    PointCloud::new(points, cloud.kind()).expect("finite jitter")
}

/// Adam optimizer state over a fixed list of parameter tensors.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(param_sizes: &[usize], cfg: &TrainConfig) -> Self {
        Adam {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    /// One bias-corrected update. `grads[i]` must match `params[i]` in
    /// length.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((p, &g), (mi, vi)) in param
                .values_mut()
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Trains the completion model on `(partial, complete)` pairs with a
/// differentiable CD-P loss. Returns the per-epoch mean training loss.
pub fn train_completion(
    model: &mut CompletionModel,
    pairs: &[(PointCloud, PointCloud)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let param_sizes: Vec<usize> = model.params().iter().map(|t| t.numel()).collect();
    let mut adam = Adam::new(&param_sizes, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = param_sizes.iter().map(|&n| vec![0.0; n]).collect();
            for &idx in batch {
                let (partial, complete) = &pairs[idx];
                let input = if cfg.augments() {
                    augmented(partial, cfg, &mut rng)
                } else {
                    partial.clone()
                };
                let mut tape = Tape::new();
                let weights = model.register(&mut tape, true);
                let x = tape.constant(Tensor::from_points(input.points()));
                let out = model.complete_with(&mut tape, &weights, x)?;
                let gt = tape.constant(Tensor::from_points(complete.points()));
                let loss = tape.chamfer_cd_p(out, gt)?;
                epoch_loss += tape.value(loss).values()[0];
                tape.backward(loss)?;
                for (accum, &id) in grads.iter_mut().zip(weights.ids()) {
                    if let Some(g) = tape.grad(id) {
                        for (a, &gi) in accum.iter_mut().zip(g) {
                            *a += gi;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            adam.update(&mut model.params_mut(), &grads);
        }
        history.push(epoch_loss / pairs.len() as f64);
    }

    model.mark_trained();
    Ok(history)
}

/// Trains the classifier with cross-entropy on `(cloud, class)` samples.
/// Returns the per-epoch mean training loss.
pub fn train_classifier(
    model: &mut Classifier,
    samples: &[(PointCloud, usize)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.class_count();
    if let Some((_, bad)) = samples.iter().find(|(_, c)| *c >= classes) {
        return Err(Error::InvalidParam(format!(
            "class index {bad} out of range for {classes} classes"
        )));
    }

    let param_sizes: Vec<usize> = model.params().iter().map(|t| t.numel()).collect();
    let mut adam = Adam::new(&param_sizes, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = param_sizes.iter().map(|&n| vec![0.0; n]).collect();
            for &idx in batch {
                let (cloud, class) = &samples[idx];
                let input = if cfg.augments() {
                    augmented(cloud, cfg, &mut rng)
                } else {
                    cloud.clone()
                };
                let mut tape = Tape::new();
                let weights = model.register(&mut tape, true);
                let x = tape.constant(Tensor::from_points(input.points()));
                let logits = model.logits_with(&mut tape, &weights, x)?;
                let loss = cross_entropy(&mut tape, logits, *class, classes)?;
                epoch_loss += tape.value(loss).values()[0];
                tape.backward(loss)?;
                for (accum, &id) in grads.iter_mut().zip(weights.ids()) {
                    if let Some(g) = tape.grad(id) {
                        for (a, &gi) in accum.iter_mut().zip(g) {
                            *a += gi;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            adam.update(&mut model.params_mut(), &grads);
        }
        history.push(epoch_loss / samples.len() as f64);
    }

    model.mark_trained();
    Ok(history)
}

/// `-log softmax(logits)[class]` via tape primitives.
pub(crate) fn cross_entropy(
    tape: &mut Tape,
    logits: crate::autodiff::TensorId,
    class: usize,
    class_count: usize,
) -> Result<crate::autodiff::TensorId> {
    let probs = tape.softmax(logits)?;
    let log_probs = tape.log(probs)?;
    let mut one_hot = vec![0.0; class_count];
    one_hot[class] = 1.0;
    let mask = tape.constant(Tensor::new(vec![1, class_count], one_hot)?);
    let picked = tape.mul(log_probs, mask)?;
    let sum = tape.sum_all(picked)?;
    tape.scale(sum, -1.0)
}

/// Fraction of samples the classifier labels correctly.
pub fn classifier_accuracy(model: &Classifier, samples: &[(PointCloud, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hits = 0usize;
    for (cloud, class) in samples {
        if model.predict(cloud)? == *class {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}
