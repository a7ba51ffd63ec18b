//! Iterative sign-gradient attacks against the completion model.
//!
//! Both attack modes share the same loop: differentiate a similarity loss
//! w.r.t. the adversarial input, step against the gradient sign with a
//! decaying step size, and project the accumulated perturbation back into
//! the per-point budget computed once from the clean cloud. Geometry mode
//! drives the *completion output* toward a complete target; latent mode
//! only sees a partial target and drives the *encoder feature* toward the
//! target's feature.

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::error::{Error, Result};
use crate::geometry::{
    build_neighbor_profile, clip_channelwise, clip_pointwise_l2, clip_to_budget, BudgetKind,
    CloudKind, NeighborProfile, Perturbation, PointCloud,
};
use crate::metrics::MetricReport;
use crate::models::{Classifier, CompletionModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Which similarity loss drives the attack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Chamfer distance between the completion output and a complete
    /// target cloud.
    Geometry,
    /// Feature-space distance to a partial target's encoding.
    Latent,
}

impl AttackMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackMode::Geometry => "geometry",
            AttackMode::Latent => "latent",
        }
    }
}

/// Which terms of the latent loss are active; the ablation knob.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentComponents {
    Both,
    L2Only,
    KlOnly,
}

impl LatentComponents {
    pub fn as_str(&self) -> &'static str {
        match self {
            LatentComponents::Both => "both",
            LatentComponents::L2Only => "l2_only",
            LatentComponents::KlOnly => "kl_only",
        }
    }
}

/// Attack hyperparameters. Serializes as the `attack` section of campaign
/// configs; unknown keys are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub iterations: usize,
    /// Neighborhood size of the density profile.
    pub k: usize,
    /// Uniformity weight in the density score.
    pub t: f64,
    /// Budget scale: `eps_i = eta * rho_i`.
    pub eta: f64,
    pub base_step: f64,
    pub decay_rate: f64,
    pub decay_step: usize,
    /// KL weight in the latent loss.
    pub lambda: f64,
    pub budget_kind: BudgetKind,
    /// Multiplier on the derived uniform radius for the non-adaptive
    /// budget kinds; comparison campaigns calibrate it to match budgets.
    pub uniform_eps_scale: f64,
    /// Half-width of the uniform initialization noise.
    pub init_noise_scale: f64,
    pub latent_components: LatentComponents,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mode: AttackMode::Geometry,
            iterations: 200,
            k: 8,
            t: 3.0,
            eta: 5.0,
            base_step: 0.01,
            decay_rate: 0.7,
            decay_step: 20,
            lambda: 20.0,
            budget_kind: BudgetKind::Adaptive,
            uniform_eps_scale: 1.0,
            init_noise_scale: 0.01,
            latent_components: LatentComponents::Both,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("k must be at least 2".into()));
        }
        if self.t < 0.0 {
            return Err(Error::InvalidConfig("t must be nonnegative".into()));
        }
        if self.eta <= 0.0 {
            return Err(Error::InvalidConfig("eta must be positive".into()));
        }
        if self.base_step <= 0.0 {
            return Err(Error::InvalidConfig("base_step must be positive".into()));
        }
        if !(0.0 < self.decay_rate && self.decay_rate <= 1.0) {
            return Err(Error::InvalidConfig("decay_rate must lie in (0, 1]".into()));
        }
        if self.decay_step == 0 {
            return Err(Error::InvalidConfig("decay_step must be at least 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
        }
        if self.uniform_eps_scale <= 0.0 {
            return Err(Error::InvalidConfig(
                "uniform_eps_scale must be positive".into(),
            ));
        }
        if self.init_noise_scale < 0.0 {
            return Err(Error::InvalidConfig(
                "init_noise_scale must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Step size at 0-indexed iteration `q`:
    /// `base_step * decay_rate^(q / decay_step)`.
    pub fn step_size(&self, q: usize) -> f64 {
        self.base_step * self.decay_rate.powi((q / self.decay_step) as i32)
    }

    /// KL-weight presets reported for published victim completion
    /// networks; the toy default is 20.
    pub fn lambda_preset(victim: &str) -> Option<f64> {
        match victim {
            "pcn" => Some(1000.0),
            "rfa" => Some(20.0),
            "grnet" => Some(0.05),
            "vrcnet" => Some(20.0),
            _ => None,
        }
    }

    /// Uniform clip radius used when `budget_kind` is not adaptive: the
    /// mean adaptive budget (scaled by `uniform_eps_scale`), divided by
    /// sqrt(3) for the per-coordinate box so saturated displacement norms
    /// match.
    pub fn uniform_eps(&self, profile: &NeighborProfile) -> f64 {
        let base = profile.mean_epsilon() * self.uniform_eps_scale;
        match self.budget_kind {
            BudgetKind::ChannelwiseLinf => base / 3f64.sqrt(),
            _ => base,
        }
    }
}

/// Outcome of one attack: the adversarial cloud, the loss at every
/// iteration, and (once a campaign evaluates it) the metric report.
#[derive(Clone, Debug)]
pub struct AttackResult {
    pub adversarial: PointCloud,
    pub loss_trace: Vec<f64>,
    pub metrics: Option<MetricReport>,
    pub config_echo: AttackConfig,
}

/// Geometry-mode loss: CD-P between the completion of `adv` and the
/// complete target.
pub fn geometry_loss(
    model: &CompletionModel,
    tape: &mut Tape,
    adv: TensorId,
    target_gt: &PointCloud,
) -> Result<TensorId> {
    let output = model.complete_on(tape, adv)?;
    let target = tape.constant(Tensor::from_points(target_gt.points()));
    tape.chamfer_cd_p(output, target)
}

// Keeps feature logs finite where relu zeroes a channel.
const FEATURE_KL_EPS: f64 = 1e-6;

/// KL divergence between mass-normalized encoder features,
/// `KL(normalize(target) || normalize(adv))`, where `normalize(x) =
/// (x + eps) / sum(x + eps)`. Encoder features are nonnegative, so the
/// mass reading turns them into distributions without exponentiation.
///
/// Expanded for the tape as `sum(p ln p) - sum(p_i ln(x_i + eps)) +
/// ln(sum(x + eps))`; the target side is a constant branch, so its
/// normalization folds into plain numbers.
fn feature_kl(tape: &mut Tape, target_feature: TensorId, adv_feature: TensorId) -> Result<TensorId> {
    let n = tape.value(target_feature).numel();
    if tape.value(adv_feature).numel() != n {
        return Err(Error::ShapeMismatch(format!(
            "feature lengths {} vs {}",
            n,
            tape.value(adv_feature).numel()
        )));
    }
    let shape = tape.value(adv_feature).shape().to_vec();
    let shifted: Vec<f64> = tape
        .value(target_feature)
        .values()
        .iter()
        .map(|v| v + FEATURE_KL_EPS)
        .collect();
    let total: f64 = shifted.iter().sum();
    let p: Vec<f64> = shifted.iter().map(|v| v / total).collect();
    let entropy: f64 = p.iter().map(|pi| pi * pi.ln()).sum();

    let eps = tape.constant(Tensor::new(shape.clone(), vec![FEATURE_KL_EPS; n])?);
    let q_mass = tape.add(adv_feature, eps)?;
    let log_q = tape.log(q_mass)?;
    let p_const = tape.constant(Tensor::new(shape, p)?);
    let weighted = tape.mul(p_const, log_q)?;
    let cross = tape.sum_all(weighted)?;
    let neg_cross = tape.scale(cross, -1.0)?;
    let q_total = tape.sum_all(q_mass)?;
    let log_total = tape.log(q_total)?;
    let partial = tape.add(neg_cross, log_total)?;
    let entropy_const = tape.constant(Tensor::scalar(entropy));
    tape.add(partial, entropy_const)
}

/// Latent-mode loss: `||En(adv) - En(target_partial)||_2` plus
/// `lambda * KL(En(target_partial) || En(adv))` over mass-normalized
/// features. `components` selects the ablation variant.
pub fn latent_loss(
    model: &CompletionModel,
    tape: &mut Tape,
    adv: TensorId,
    target_partial: &PointCloud,
    lambda: f64,
    components: LatentComponents,
) -> Result<TensorId> {
    let weights = model.register(tape, false);
    let adv_feature = model.encode_with(tape, &weights, adv)?;
    let target = tape.constant(Tensor::from_points(target_partial.points()));
    let target_feature = model.encode_with(tape, &weights, target)?;

    let l2 = {
        let diff = tape.sub(adv_feature, target_feature)?;
        let sq = tape.square(diff)?;
        let sum = tape.sum_all(sq)?;
        tape.sqrt(sum)?
    };
    match components {
        LatentComponents::L2Only => Ok(l2),
        LatentComponents::KlOnly => feature_kl(tape, target_feature, adv_feature),
        LatentComponents::Both => {
            let kl = feature_kl(tape, target_feature, adv_feature)?;
            let weighted = tape.scale(kl, lambda)?;
            tape.add(l2, weighted)
        }
    }
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clip_for(
    cfg: &AttackConfig,
    profile: &NeighborProfile,
    perturbation: &Perturbation,
) -> Result<Perturbation> {
    match cfg.budget_kind {
        BudgetKind::Adaptive => clip_to_budget(perturbation, profile),
        BudgetKind::PointwiseL2 => Ok(clip_pointwise_l2(perturbation, cfg.uniform_eps(profile))),
        BudgetKind::ChannelwiseLinf => Ok(clip_channelwise(perturbation, cfg.uniform_eps(profile))),
    }
}

fn init_perturbation(
    cfg: &AttackConfig,
    profile: &NeighborProfile,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Perturbation> {
    let mut delta = vec![[0.0f64; 3]; len];
    if cfg.init_noise_scale > 0.0 {
        for d in delta.iter_mut() {
            for c in d.iter_mut() {
                *c = rng.random_range(-cfg.init_noise_scale..cfg.init_noise_scale);
            }
        }
    }
    clip_for(cfg, profile, &Perturbation::new(delta, cfg.budget_kind))
}

fn checked_setup<'a>(
    model: &CompletionModel,
    source_partial: &'a PointCloud,
    target: &PointCloud,
    cfg: &AttackConfig,
) -> Result<NeighborProfile> {
    cfg.validate()?;
    if !model.is_trained() {
        return Err(Error::ModelUntrained("attack needs a trained victim".into()));
    }
    let expected_kind = match cfg.mode {
        AttackMode::Geometry => CloudKind::Complete,
        AttackMode::Latent => CloudKind::Partial,
    };
    if target.kind() != expected_kind {
        return Err(Error::InvalidConfig(format!(
            "{} mode expects a {:?} target, got {:?}",
            cfg.mode.as_str(),
            expected_kind,
            target.kind()
        )));
    }
    // The density profile comes from the clean cloud, once; it is never
    // rebuilt from the perturbed cloud.
    build_neighbor_profile(source_partial, cfg.k, cfg.t, cfg.eta)
}

/// Runs the iterative attack.
///
/// Geometry mode takes a complete target cloud, latent mode a partial
/// one. The returned result's `metrics` field is unset; campaigns fill it
/// via the evaluation step that has access to every pair cloud.
pub fn run_pointca(
    model: &CompletionModel,
    source_partial: &PointCloud,
    target: &PointCloud,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let profile = checked_setup(model, source_partial, target, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clean = source_partial.points();
    let m = clean.len();

    let init = init_perturbation(cfg, &profile, m, &mut rng)?;
    let mut current: Vec<[f64; 3]> = clean
        .iter()
        .zip(init.delta())
        .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
        .collect();

    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    for q in 0..cfg.iterations {
        let mut tape = Tape::new();
        let adv = tape.variable(Tensor::from_points(&current));
        let loss = match cfg.mode {
            AttackMode::Geometry => geometry_loss(model, &mut tape, adv, target)?,
            AttackMode::Latent => latent_loss(
                model,
                &mut tape,
                adv,
                target,
                cfg.lambda,
                cfg.latent_components,
            )?,
        };
        loss_trace.push(tape.value(loss).values()[0]);
        tape.backward(loss)?;
        let grad = tape
            .grad(adv)
            .ok_or_else(|| Error::InvalidConfig("loss does not depend on the input".into()))?;

        let step = cfg.step_size(q);
        for (i, p) in current.iter_mut().enumerate() {
            for c in 0..3 {
                p[c] -= step * sign(grad[i * 3 + c]);
            }
        }

        let delta: Vec<[f64; 3]> = current
            .iter()
            .zip(clean)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
            .collect();
        let clipped = clip_for(cfg, &profile, &Perturbation::new(delta, cfg.budget_kind))?;
        for (p, (c, d)) in current.iter_mut().zip(clean.iter().zip(clipped.delta())) {
            *p = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
        }
    }

    let mut adversarial = PointCloud::new(current, CloudKind::Adversarial)?;
    if let Some(label) = source_partial.label() {
        adversarial = adversarial.with_label(label);
    }
    Ok(AttackResult {
        adversarial,
        loss_trace,
        metrics: None,
        config_echo: *cfg,
    })
}

/// Gaussian-noise baseline: draws noise with standard deviation 0.02 per
/// coordinate and projects it into the same budget the attack uses. No
/// optimization happens, so the loss trace is empty.
pub fn random_noise_baseline(source_partial: &PointCloud, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let profile = build_neighbor_profile(source_partial, cfg.k, cfg.t, cfg.eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 0.02).expect("valid std dev");

    let delta: Vec<[f64; 3]> = (0..source_partial.len())
        .map(|_| {
            [
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            ]
        })
        .collect();
    let clipped = clip_for(cfg, &profile, &Perturbation::new(delta, cfg.budget_kind))?;

    let points: Vec<[f64; 3]> = source_partial
        .points()
        .iter()
        .zip(clipped.delta())
        .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
        .collect();
    let mut adversarial = PointCloud::new(points, CloudKind::Adversarial)?;
    if let Some(label) = source_partial.label() {
        adversarial = adversarial.with_label(label);
    }
    Ok(AttackResult {
        adversarial,
        loss_trace: Vec::new(),
        metrics: None,
        config_echo: *cfg,
    })
}

/// Outcome of the classifier-transfer baseline on one cloud.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierFlip {
    pub true_class: usize,
    pub target_class: usize,
    pub predicted: usize,
    /// Whether the crafted noise changed the classifier's prediction away
    /// from the true class.
    pub fooled: bool,
}

/// Classification-noise baseline: crafts sign-gradient noise on the toy
/// classifier (toward a random wrong class, same budget machinery) for
/// later evaluation through the completion model.
pub fn classification_noise_baseline(
    classifier: &Classifier,
    source_partial: &PointCloud,
    true_class: usize,
    cfg: &AttackConfig,
) -> Result<(AttackResult, ClassifierFlip)> {
    cfg.validate()?;
    if !classifier.is_trained() {
        return Err(Error::ModelUntrained(
            "classification noise needs a trained classifier".into(),
        ));
    }
    if true_class >= classifier.class_count() {
        return Err(Error::InvalidParam(format!(
            "class {true_class} out of range"
        )));
    }
    let profile = build_neighbor_profile(source_partial, cfg.k, cfg.t, cfg.eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Random wrong class as the push direction.
    let offset = rng.random_range(1..classifier.class_count());
    let target_class = (true_class + offset) % classifier.class_count();

    let clean = source_partial.points();
    let init = init_perturbation(cfg, &profile, clean.len(), &mut rng)?;
    let mut current: Vec<[f64; 3]> = clean
        .iter()
        .zip(init.delta())
        .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
        .collect();

    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    for q in 0..cfg.iterations {
        let mut tape = Tape::new();
        let adv = tape.variable(Tensor::from_points(&current));
        let logits = classifier.logits_on(&mut tape, adv)?;
        let loss =
            crate::models::cross_entropy(&mut tape, logits, target_class, classifier.class_count())?;
        loss_trace.push(tape.value(loss).values()[0]);
        tape.backward(loss)?;
        let grad = tape
            .grad(adv)
            .ok_or_else(|| Error::InvalidConfig("loss does not depend on the input".into()))?;

        let step = cfg.step_size(q);
        for (i, p) in current.iter_mut().enumerate() {
            for c in 0..3 {
                p[c] -= step * sign(grad[i * 3 + c]);
            }
        }
        let delta: Vec<[f64; 3]> = current
            .iter()
            .zip(clean)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
            .collect();
        let clipped = clip_for(cfg, &profile, &Perturbation::new(delta, cfg.budget_kind))?;
        for (p, (c, d)) in current.iter_mut().zip(clean.iter().zip(clipped.delta())) {
            *p = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
        }
    }

    let mut adversarial = PointCloud::new(current, CloudKind::Adversarial)?;
    if let Some(label) = source_partial.label() {
        adversarial = adversarial.with_label(label);
    }
    let predicted = classifier.predict(&adversarial)?;
    let flip = ClassifierFlip {
        true_class,
        target_class,
        predicted,
        fooled: predicted != true_class,
    };
    Ok((
        AttackResult {
            adversarial,
            loss_trace,
            metrics: None,
            config_echo: *cfg,
        },
        flip,
    ))
}

/// Mean target reconstruction error of `model` over adversarial clouds
/// crafted elsewhere: the transferability cell `T-RE(model | adv set)`.
pub fn transfer_evaluate(model: &CompletionModel, items: &[(PointCloud, PointCloud)]) -> Result<f64> {
    if !model.is_trained() {
        return Err(Error::ModelUntrained(
            "transfer evaluation needs a trained victim".into(),
        ));
    }
    if items.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (adv, target_gt) in items {
        let output = model.complete(adv)?;
        total += crate::metrics::chamfer(&output, target_gt, crate::metrics::ChamferVariant::CdP)?;
    }
    Ok(total / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist;
    use crate::models::{train_classifier, train_completion, ModelArch, TrainConfig};
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64, kind: CloudKind) -> PointCloud {
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
            kind,
        )
        .unwrap()
    }

    fn tiny_trained_model() -> CompletionModel {
        let arch = ModelArch {
            enc_hidden: [12, 16],
            dec_hidden: 24,
            n_out: 32,
        };
        let mut model = CompletionModel::new(arch, 42);
        let pairs: Vec<(PointCloud, PointCloud)> = (0..6)
            .map(|i| {
                let gt = random_cloud(32, 50 + i, CloudKind::Complete);
                let partial =
                    PointCloud::new(gt.points()[..16].to_vec(), CloudKind::Partial).unwrap();
                (partial, gt)
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 3,
            ..TrainConfig::default()
        };
        train_completion(&mut model, &pairs, &cfg).unwrap();
        model
    }

    fn fast_cfg(mode: AttackMode) -> AttackConfig {
        AttackConfig {
            mode,
            iterations: 15,
            k: 4,
            eta: 2.0,
            base_step: 0.02,
            decay_step: 5,
            seed: 3,
            ..AttackConfig::default()
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = AttackConfig::default();
        cfg.validate().unwrap();
        cfg.decay_rate = 0.0;
        assert!(cfg.validate().is_err());
        cfg.decay_rate = 0.5;
        cfg.k = 1;
        assert!(cfg.validate().is_err());
        cfg.k = 8;
        cfg.eta = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn step_schedule_is_piecewise_constant_and_nonincreasing() {
        let cfg = AttackConfig {
            base_step: 0.5,
            decay_rate: 0.6,
            decay_step: 20,
            ..AttackConfig::default()
        };
        let steps: Vec<f64> = (0..60).map(|q| cfg.step_size(q)).collect();
        for w in steps.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(steps[0], 0.5);
        assert_eq!(steps[19], 0.5);
        assert!((steps[20] - 0.3).abs() < 1e-12);
        assert!((steps[40] - 0.18).abs() < 1e-12);
    }

    #[test]
    fn lambda_presets() {
        assert_eq!(AttackConfig::lambda_preset("pcn"), Some(1000.0));
        assert_eq!(AttackConfig::lambda_preset("grnet"), Some(0.05));
        assert_eq!(AttackConfig::lambda_preset("unknown"), None);
    }

    #[test]
    fn zero_iterations_returns_the_clipped_initialization() {
        let model = tiny_trained_model();
        let source = random_cloud(16, 7, CloudKind::Partial);
        let target = random_cloud(32, 8, CloudKind::Complete);
        let cfg = AttackConfig {
            iterations: 0,
            ..fast_cfg(AttackMode::Geometry)
        };
        let result = run_pointca(&model, &source, &target, &cfg).unwrap();
        assert!(result.loss_trace.is_empty());

        // Reproduce the initialization path by hand.
        let profile = build_neighbor_profile(&source, cfg.k, cfg.t, cfg.eta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = init_perturbation(&cfg, &profile, source.len(), &mut rng).unwrap();
        for ((p, d), adv) in source
            .points()
            .iter()
            .zip(init.delta())
            .zip(result.adversarial.points())
        {
            for c in 0..3 {
                assert_eq!(p[c] + d[c], adv[c]);
            }
        }
    }

    #[test]
    fn budget_holds_for_every_kind() {
        let model = tiny_trained_model();
        let source = random_cloud(16, 9, CloudKind::Partial);
        let target = random_cloud(32, 10, CloudKind::Complete);

        for kind in [
            BudgetKind::Adaptive,
            BudgetKind::PointwiseL2,
            BudgetKind::ChannelwiseLinf,
        ] {
            let cfg = AttackConfig {
                budget_kind: kind,
                ..fast_cfg(AttackMode::Geometry)
            };
            let result = run_pointca(&model, &source, &target, &cfg).unwrap();
            assert_eq!(result.loss_trace.len(), cfg.iterations);
            let profile = build_neighbor_profile(&source, cfg.k, cfg.t, cfg.eta).unwrap();
            let uniform = cfg.uniform_eps(&profile);
            for (i, (adv, clean)) in result
                .adversarial
                .points()
                .iter()
                .zip(source.points())
                .enumerate()
            {
                let d = dist(adv, clean);
                match kind {
                    BudgetKind::Adaptive => assert!(d <= profile.epsilon()[i] + 1e-9),
                    BudgetKind::PointwiseL2 => assert!(d <= uniform + 1e-9),
                    BudgetKind::ChannelwiseLinf => {
                        for c in 0..3 {
                            assert!((adv[c] - clean[c]).abs() <= uniform + 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn geometry_attack_reduces_its_loss() {
        let model = tiny_trained_model();
        let source = random_cloud(16, 11, CloudKind::Partial);
        let target = random_cloud(32, 12, CloudKind::Complete);
        let cfg = AttackConfig {
            iterations: 30,
            ..fast_cfg(AttackMode::Geometry)
        };
        let result = run_pointca(&model, &source, &target, &cfg).unwrap();
        assert!(result.loss_trace.last().unwrap() < result.loss_trace.first().unwrap());
    }

    #[test]
    fn tiny_budget_pins_the_cloud() {
        let model = tiny_trained_model();
        let source = random_cloud(16, 13, CloudKind::Partial);
        let target = random_cloud(32, 14, CloudKind::Complete);
        let cfg = AttackConfig {
            eta: 1e-9,
            ..fast_cfg(AttackMode::Geometry)
        };
        let result = run_pointca(&model, &source, &target, &cfg).unwrap();
        for (adv, clean) in result.adversarial.points().iter().zip(source.points()) {
            assert!(dist(adv, clean) <= 1e-8);
        }
    }

    #[test]
    fn latent_loss_zero_on_target_and_lambda_zero_reduces_to_l2() {
        let model = tiny_trained_model();
        let target = random_cloud(16, 15, CloudKind::Partial);

        let mut tape = Tape::new();
        let adv = tape.constant(Tensor::from_points(target.points()));
        let loss = latent_loss(&model, &mut tape, adv, &target, 20.0, LatentComponents::Both).unwrap();
        assert!(tape.value(loss).values()[0].abs() < 1e-12);

        let other = random_cloud(16, 16, CloudKind::Partial);
        let mut tape_a = Tape::new();
        let adv_a = tape_a.constant(Tensor::from_points(other.points()));
        let both_zero_lambda =
            latent_loss(&model, &mut tape_a, adv_a, &target, 0.0, LatentComponents::Both).unwrap();
        let mut tape_b = Tape::new();
        let adv_b = tape_b.constant(Tensor::from_points(other.points()));
        let l2_only =
            latent_loss(&model, &mut tape_b, adv_b, &target, 0.0, LatentComponents::L2Only).unwrap();
        assert_eq!(
            tape_a.value(both_zero_lambda).values()[0],
            tape_b.value(l2_only).values()[0]
        );
    }

    #[test]
    fn latent_mode_rejects_complete_target() {
        let model = tiny_trained_model();
        let source = random_cloud(16, 17, CloudKind::Partial);
        let target = random_cloud(32, 18, CloudKind::Complete);
        let cfg = fast_cfg(AttackMode::Latent);
        assert!(matches!(
            run_pointca(&model, &source, &target, &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn untrained_model_is_rejected() {
        let model = CompletionModel::new(
            ModelArch {
                enc_hidden: [12, 16],
                dec_hidden: 24,
                n_out: 32,
            },
            1,
        );
        let source = random_cloud(16, 19, CloudKind::Partial);
        let target = random_cloud(32, 20, CloudKind::Complete);
        assert!(matches!(
            run_pointca(&model, &source, &target, &fast_cfg(AttackMode::Geometry)),
            Err(Error::ModelUntrained(_))
        ));
    }

    #[test]
    fn random_baseline_is_deterministic_and_in_budget() {
        let source = random_cloud(16, 21, CloudKind::Partial);
        let cfg = fast_cfg(AttackMode::Geometry);
        let a = random_noise_baseline(&source, &cfg).unwrap();
        let b = random_noise_baseline(&source, &cfg).unwrap();
        assert_eq!(a.adversarial.points(), b.adversarial.points());
        assert!(a.loss_trace.is_empty());

        let profile = build_neighbor_profile(&source, cfg.k, cfg.t, cfg.eta).unwrap();
        for (i, (adv, clean)) in a.adversarial.points().iter().zip(source.points()).enumerate() {
            assert!(dist(adv, clean) <= profile.epsilon()[i] + 1e-9);
        }
    }

    #[test]
    fn classification_noise_pushes_toward_a_wrong_class() {
        // Two well-separated blobs even an under-trained classifier splits.
        let mut samples = Vec::new();
        for i in 0..8u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let offset = if i % 2 == 0 { 0.8 } else { -0.8 };
            let pts: Vec<[f64; 3]> = (0..16)
                .map(|_| {
                    [
                        offset + rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                    ]
                })
                .collect();
            samples.push((
                PointCloud::new(pts, CloudKind::Partial).unwrap(),
                (i % 2) as usize,
            ));
        }
        let mut clf = Classifier::new([12, 16], 2, 3);
        let cfg_train = TrainConfig {
            epochs: 15,
            batch_size: 4,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        train_classifier(&mut clf, &samples, &cfg_train).unwrap();

        let cfg = AttackConfig {
            iterations: 40,
            eta: 5.0,
            base_step: 0.05,
            ..fast_cfg(AttackMode::Geometry)
        };
        let (result, flip) =
            classification_noise_baseline(&clf, &samples[0].0, samples[0].1, &cfg).unwrap();
        assert_eq!(result.loss_trace.len(), 40);
        assert_ne!(flip.target_class, flip.true_class);

        let profile = build_neighbor_profile(&samples[0].0, cfg.k, cfg.t, cfg.eta).unwrap();
        for (i, (adv, clean)) in result
            .adversarial
            .points()
            .iter()
            .zip(samples[0].0.points())
            .enumerate()
        {
            assert!(dist(adv, clean) <= profile.epsilon()[i] + 1e-9);
        }
    }

    #[test]
    fn transfer_evaluation_runs_and_matches_direct_mean() {
        let model = tiny_trained_model();
        let items: Vec<(PointCloud, PointCloud)> = (0..3)
            .map(|i| {
                (
                    random_cloud(16, 30 + i, CloudKind::Adversarial),
                    random_cloud(32, 40 + i, CloudKind::Complete),
                )
            })
            .collect();
        let mean = transfer_evaluate(&model, &items).unwrap();
        let mut expected = 0.0;
        for (adv, gt) in &items {
            let out = model.complete(adv).unwrap();
            expected +=
                crate::metrics::chamfer(&out, gt, crate::metrics::ChamferVariant::CdP).unwrap();
        }
        expected /= 3.0;
        assert!((mean - expected).abs() < 1e-12);
        assert!(transfer_evaluate(&model, &[]).is_err());
    }
}
