//! Toy differentiable completion model and classifier.
//!
//! The completion model is a minimal encoder-decoder: a shared per-point
//! MLP embeds each input point, max-pooling collapses the embeddings into
//! one permutation-invariant global feature, and a fully-connected decoder
//! expands that feature into a fixed-size complete cloud. The classifier
//! reuses the encoder topology and swaps the decoder for a small logit
//! head.

mod train;
mod weights;

pub use train::{classifier_accuracy, train_classifier, train_completion, Adam, TrainConfig};

pub(crate) use train::cross_entropy;

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::error::Result;
use crate::geometry::{CloudKind, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Layer widths of a completion model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    /// Widths of the two shared per-point encoder layers.
    pub enc_hidden: [usize; 2],
    /// Width of the decoder hidden layer.
    pub dec_hidden: usize,
    /// Number of output points.
    pub n_out: usize,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch {
            enc_hidden: [64, 128],
            dec_hidden: 256,
            n_out: 1024,
        }
    }
}

impl ModelArch {
    /// Narrower sibling architecture, used as the second victim in
    /// transferability runs.
    pub fn compact(n_out: usize) -> Self {
        ModelArch {
            enc_hidden: [48, 96],
            dec_hidden: 192,
            n_out,
        }
    }
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(vec![rows, cols], values).expect("consistent shape")
}

/// Shared-MLP + max-pool encoder weights.
#[derive(Clone, Debug, PartialEq)]
struct Encoder {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl Encoder {
    fn new(hidden: [usize; 2], rng: &mut ChaCha8Rng) -> Self {
        Encoder {
            w1: xavier(3, hidden[0], rng),
            b1: Tensor::zeros(vec![hidden[0]]),
            w2: xavier(hidden[0], hidden[1], rng),
            b2: Tensor::zeros(vec![hidden[1]]),
        }
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> [TensorId; 4] {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.variable(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        [reg(&self.w1), reg(&self.b1), reg(&self.w2), reg(&self.b2)]
    }

    /// `[m,3] -> [1,F]` permutation-invariant global feature.
    fn forward(&self, tape: &mut Tape, ids: &[TensorId; 4], cloud: TensorId) -> Result<TensorId> {
        let h1 = tape.matmul(cloud, ids[0])?;
        let h1 = tape.add_bias(h1, ids[1])?;
        let h1 = tape.relu(h1)?;
        let h2 = tape.matmul(h1, ids[2])?;
        let h2 = tape.add_bias(h2, ids[3])?;
        let h2 = tape.relu(h2)?;
        tape.max_over_points(h2)
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Weight handles of a model registered on a tape.
pub struct TapeWeights {
    ids: Vec<TensorId>,
}

impl TapeWeights {
    /// Tape ids in the model's canonical parameter order.
    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

/// Encoder-decoder completion model mapping an `[m,3]` partial cloud to an
/// `[n_out,3]` complete cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionModel {
    arch: ModelArch,
    encoder: Encoder,
    dec_w1: Tensor,
    dec_b1: Tensor,
    dec_w2: Tensor,
    dec_b2: Tensor,
    trained: bool,
}

impl CompletionModel {
    pub fn new(arch: ModelArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(arch.enc_hidden, &mut rng);
        let feature = arch.enc_hidden[1];
        CompletionModel {
            arch,
            encoder,
            dec_w1: xavier(feature, arch.dec_hidden, &mut rng),
            dec_b1: Tensor::zeros(vec![arch.dec_hidden]),
            dec_w2: xavier(arch.dec_hidden, 3 * arch.n_out, &mut rng),
            dec_b2: Tensor::zeros(vec![3 * arch.n_out]),
            trained: false,
        }
    }

    pub fn arch(&self) -> ModelArch {
        self.arch
    }

    /// Length of the encoder's global feature vector.
    pub fn feature_dim(&self) -> usize {
        self.arch.enc_hidden[1]
    }

    pub fn n_out(&self) -> usize {
        self.arch.n_out
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// Registers all weights on `tape`; trainable weights become gradient
    /// targets.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> TapeWeights {
        let mut ids = self.encoder.register(tape, trainable).to_vec();
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.variable(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ids.push(reg(&self.dec_w1));
        ids.push(reg(&self.dec_b1));
        ids.push(reg(&self.dec_w2));
        ids.push(reg(&self.dec_b2));
        TapeWeights { ids }
    }

    /// Encoder forward on a tape with pre-registered weights.
    pub fn encode_with(&self, tape: &mut Tape, w: &TapeWeights, cloud: TensorId) -> Result<TensorId> {
        let enc_ids = [w.ids[0], w.ids[1], w.ids[2], w.ids[3]];
        self.encoder.forward(tape, &enc_ids, cloud)
    }

    /// Full completion forward on a tape with pre-registered weights.
    pub fn complete_with(&self, tape: &mut Tape, w: &TapeWeights, cloud: TensorId) -> Result<TensorId> {
        let feature = self.encode_with(tape, w, cloud)?;
        let h = tape.matmul(feature, w.ids[4])?;
        let h = tape.add_bias(h, w.ids[5])?;
        let h = tape.relu(h)?;
        let out = tape.matmul(h, w.ids[6])?;
        let out = tape.add_bias(out, w.ids[7])?;
        tape.reshape(out, vec![self.arch.n_out, 3])
    }

    /// Encoder forward on a fresh tape with constant weights.
    pub fn encode_on(&self, tape: &mut Tape, cloud: TensorId) -> Result<TensorId> {
        let w = self.register(tape, false);
        self.encode_with(tape, &w, cloud)
    }

    /// Completion forward on a fresh tape with constant weights.
    pub fn complete_on(&self, tape: &mut Tape, cloud: TensorId) -> Result<TensorId> {
        let w = self.register(tape, false);
        self.complete_with(tape, &w, cloud)
    }

    /// Global feature of a cloud (inference only).
    pub fn encode(&self, cloud: &PointCloud) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_points(cloud.points()));
        let feature = self.encode_on(&mut tape, x)?;
        Ok(tape.value(feature).clone())
    }

    /// Predicted complete cloud of a partial input (inference only).
    pub fn complete(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_points(cloud.points()));
        let out = self.complete_on(&mut tape, x)?;
        let points = tape.value(out).to_points()?;
        let mut result = PointCloud::new(points, CloudKind::Reconstructed)?;
        if let Some(label) = cloud.label() {
            result = result.with_label(label);
        }
        Ok(result)
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend([&self.dec_w1, &self.dec_b1, &self.dec_w2, &self.dec_b2]);
        p
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.push(&mut self.dec_w1);
        p.push(&mut self.dec_b1);
        p.push(&mut self.dec_w2);
        p.push(&mut self.dec_b2);
        p
    }
}

/// Point-cloud classifier: the completion encoder topology with a logit
/// head.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    enc_hidden: [usize; 2],
    head_hidden: usize,
    class_count: usize,
    encoder: Encoder,
    head_w1: Tensor,
    head_b1: Tensor,
    head_w2: Tensor,
    head_b2: Tensor,
    trained: bool,
}

impl Classifier {
    pub const HEAD_HIDDEN: usize = 64;

    pub fn new(enc_hidden: [usize; 2], class_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(enc_hidden, &mut rng);
        let feature = enc_hidden[1];
        Classifier {
            enc_hidden,
            head_hidden: Self::HEAD_HIDDEN,
            class_count,
            encoder,
            head_w1: xavier(feature, Self::HEAD_HIDDEN, &mut rng),
            head_b1: Tensor::zeros(vec![Self::HEAD_HIDDEN]),
            head_w2: xavier(Self::HEAD_HIDDEN, class_count, &mut rng),
            head_b2: Tensor::zeros(vec![class_count]),
            trained: false,
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn enc_hidden(&self) -> [usize; 2] {
        self.enc_hidden
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> TapeWeights {
        let mut ids = self.encoder.register(tape, trainable).to_vec();
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.variable(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ids.push(reg(&self.head_w1));
        ids.push(reg(&self.head_b1));
        ids.push(reg(&self.head_w2));
        ids.push(reg(&self.head_b2));
        TapeWeights { ids }
    }

    /// `[m,3] -> [1,C]` logits on a tape with pre-registered weights.
    pub fn logits_with(&self, tape: &mut Tape, w: &TapeWeights, cloud: TensorId) -> Result<TensorId> {
        let enc_ids = [w.ids[0], w.ids[1], w.ids[2], w.ids[3]];
        let feature = self.encoder.forward(tape, &enc_ids, cloud)?;
        let h = tape.matmul(feature, w.ids[4])?;
        let h = tape.add_bias(h, w.ids[5])?;
        let h = tape.relu(h)?;
        let logits = tape.matmul(h, w.ids[6])?;
        tape.add_bias(logits, w.ids[7])
    }

    /// Logits on a fresh tape with constant weights.
    pub fn logits_on(&self, tape: &mut Tape, cloud: TensorId) -> Result<TensorId> {
        let w = self.register(tape, false);
        self.logits_with(tape, &w, cloud)
    }

    /// Class logits of a cloud (inference only).
    pub fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_points(cloud.points()));
        let logits = self.logits_on(&mut tape, x)?;
        Ok(tape.value(logits).values().to_vec())
    }

    /// Predicted class index (argmax logit, ties to the lowest index).
    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        let logits = self.logits(cloud)?;
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub(crate) fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend([&self.head_w1, &self.head_b1, &self.head_w2, &self.head_b2]);
        p
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.push(&mut self.head_w1);
        p.push(&mut self.head_b1);
        p.push(&mut self.head_w2);
        p.push(&mut self.head_b2);
        p
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
            CloudKind::Partial,
        )
        .unwrap()
    }

    fn small_arch() -> ModelArch {
        ModelArch {
            enc_hidden: [16, 24],
            dec_hidden: 32,
            n_out: 40,
        }
    }

    #[test]
    fn encode_is_permutation_invariant_bitwise() {
        let model = CompletionModel::new(small_arch(), 42);
        let cloud = random_cloud(30, 1);
        let feature = model.encode(&cloud).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut pts = cloud.points().to_vec();
            pts.shuffle(&mut rng);
            let shuffled = PointCloud::new(pts, CloudKind::Partial).unwrap();
            let other = model.encode(&shuffled).unwrap();
            assert_eq!(feature.values(), other.values());
        }
    }

    #[test]
    fn zero_weights_give_zero_feature() {
        let mut model = CompletionModel::new(small_arch(), 7);
        for p in model.params_mut() {
            for v in p.values_mut() {
                *v = 0.0;
            }
        }
        let feature = model.encode(&random_cloud(12, 3)).unwrap();
        assert!(feature.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn complete_has_output_shape_and_permutation_invariance() {
        let model = CompletionModel::new(small_arch(), 42);
        let cloud = random_cloud(30, 2);
        let out = model.complete(&cloud).unwrap();
        assert_eq!(out.len(), 40);
        assert_eq!(out.kind(), CloudKind::Reconstructed);

        let mut pts = cloud.points().to_vec();
        pts.reverse();
        let reversed = PointCloud::new(pts, CloudKind::Partial).unwrap();
        assert_eq!(out.points(), model.complete(&reversed).unwrap().points());
    }

    #[test]
    fn completion_gradient_reaches_the_input() {
        let model = CompletionModel::new(small_arch(), 42);
        let cloud = random_cloud(30, 4);
        let target = random_cloud(40, 5);

        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_points(cloud.points()));
        let out = model.complete_on(&mut tape, x).unwrap();
        let gt = tape.constant(Tensor::from_points(target.points()));
        let loss = tape.chamfer_cd_p(out, gt).unwrap();
        tape.backward(loss).unwrap();
        let grad = tape.grad(x).unwrap();
        assert!(grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn classifier_logit_shape_and_prediction() {
        let clf = Classifier::new([16, 24], 4, 11);
        let logits = clf.logits(&random_cloud(20, 6)).unwrap();
        assert_eq!(logits.len(), 4);
        let class = clf.predict(&random_cloud(20, 6)).unwrap();
        assert!(class < 4);
    }
}
