//! Preprocessing defenses: simple random sampling, fixed-threshold outlier
//! removal, and statistical outlier removal.
//!
//! Every defense returns a subset of the input cloud; points are only ever
//! dropped, never moved or synthesized. The `outlier_count` reported in
//! metric rows is the SOR removal count from this module, so the defense
//! and the stealthiness metric always agree.

use crate::error::{Error, Result};
use crate::geometry::{k_nearest, PointCloud};
use crate::metrics::{chamfer, ChamferVariant};
use crate::models::CompletionModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Parameters of the three defenses.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    pub srs_drop_rate: f64,
    pub or_threshold: f64,
    pub sor_k: usize,
    pub sor_alpha: f64,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            srs_drop_rate: 0.3,
            or_threshold: 0.05,
            sor_k: 2,
            sor_alpha: 1.1,
            seed: 0,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.srs_drop_rate) {
            return Err(Error::InvalidConfig(format!(
                "srs_drop_rate must lie in [0, 1), got {}",
                self.srs_drop_rate
            )));
        }
        if self.or_threshold <= 0.0 {
            return Err(Error::InvalidConfig("or_threshold must be positive".into()));
        }
        if self.sor_k < 1 {
            return Err(Error::InvalidConfig("sor_k must be at least 1".into()));
        }
        if self.sor_alpha < 0.0 {
            return Err(Error::InvalidConfig("sor_alpha must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Which defense to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    None,
    Srs,
    Or,
    Sor,
}

impl DefenseKind {
    pub const ALL: [DefenseKind; 4] = [
        DefenseKind::None,
        DefenseKind::Srs,
        DefenseKind::Or,
        DefenseKind::Sor,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::Srs => "srs",
            DefenseKind::Or => "or",
            DefenseKind::Sor => "sor",
        }
    }
}

fn subset(cloud: &PointCloud, keep: &[usize]) -> Result<PointCloud> {
    let points = keep.iter().map(|&i| cloud.points()[i]).collect();
    let mut out = PointCloud::new(points, cloud.kind())?;
    if let Some(label) = cloud.label() {
        out = out.with_label(label);
    }
    Ok(out)
}

/// Mean distance from each point to its `k` nearest neighbors (query point
/// excluded).
fn mean_knn_distances(cloud: &PointCloud, k: usize) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    if cloud.len() <= k {
        return Err(Error::TooFewPoints {
            size: cloud.len(),
            needed: k,
        });
    }
    let points = cloud.points();
    Ok((0..points.len())
        .map(|i| {
            let neighbors = k_nearest(points, &points[i], k, Some(i));
            neighbors.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / k as f64
        })
        .collect())
}

/// Simple random sampling: keeps `ceil((1 - drop_rate) * m)` points chosen
/// uniformly without replacement, in their original order.
pub fn srs(cloud: &PointCloud, drop_rate: f64, seed: u64) -> PointCloud {
    assert!(
        (0.0..1.0).contains(&drop_rate),
        "drop_rate must lie in [0, 1)"
    );
    let m = cloud.len();
    let keep_count = ((1.0 - drop_rate) * m as f64).ceil() as usize;
    if keep_count >= m {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, m, keep_count).into_vec();
    keep.sort_unstable();
    subset(cloud, &keep).expect("nonempty subset")
}

/// Outlier removal: drops points whose mean `k`-NN distance exceeds
/// `threshold`.
pub fn outlier_removal(cloud: &PointCloud, threshold: f64, k: usize) -> Result<PointCloud> {
    let means = mean_knn_distances(cloud, k)?;
    let keep: Vec<usize> = means
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= threshold)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::AllPointsRemoved);
    }
    subset(cloud, &keep)
}

/// Statistical outlier removal.
///
/// With `d_i` the mean `k`-NN distance of point `i`, `mu` their mean and
/// `sigma` their population standard deviation, keeps points with
/// `d_i < mu + alpha * sigma` and reports how many were dropped. When
/// `sigma` is zero every `d_i` equals `mu` and nothing is removed.
pub fn sor(cloud: &PointCloud, k: usize, alpha: f64) -> Result<(PointCloud, usize)> {
    let means = mean_knn_distances(cloud, k)?;
    let m = means.len() as f64;
    let mu = means.iter().sum::<f64>() / m;
    let sigma = (means.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / m).sqrt();
    if sigma == 0.0 {
        return Ok((cloud.clone(), 0));
    }
    let threshold = mu + alpha * sigma;
    let keep: Vec<usize> = means
        .iter()
        .enumerate()
        .filter(|(_, &d)| d < threshold)
        .map(|(i, _)| i)
        .collect();
    let removed = cloud.len() - keep.len();
    Ok((subset(cloud, &keep)?, removed))
}

/// Statistical-outlier count of a cloud under the default defense
/// parameters; the `outlier_count` column of metric reports.
pub fn outlier_count(cloud: &PointCloud, cfg: &DefenseConfig) -> Result<usize> {
    Ok(sor(cloud, cfg.sor_k, cfg.sor_alpha)?.1)
}

/// Applies one defense according to `cfg`.
pub fn apply_defense(cloud: &PointCloud, kind: DefenseKind, cfg: &DefenseConfig) -> Result<PointCloud> {
    cfg.validate()?;
    match kind {
        DefenseKind::None => Ok(cloud.clone()),
        DefenseKind::Srs => Ok(srs(cloud, cfg.srs_drop_rate, cfg.seed)),
        DefenseKind::Or => outlier_removal(cloud, cfg.or_threshold, cfg.sor_k),
        DefenseKind::Sor => Ok(sor(cloud, cfg.sor_k, cfg.sor_alpha)?.0),
    }
}

/// Runs `adv` through a defense and the completion model, then scores the
/// result against the source ground truth.
///
/// Returns `(s_re, s_nre)` where `s_re = CD-P(f(defended adv), source_gt)`
/// and `s_nre` normalizes by `CD-P(clean_output, source_gt)`.
pub fn evaluate_defended(
    model: &CompletionModel,
    adv: &PointCloud,
    source_gt: &PointCloud,
    clean_output: &PointCloud,
    defense: DefenseKind,
    cfg: &DefenseConfig,
) -> Result<(f64, f64)> {
    if !model.is_trained() {
        return Err(Error::ModelUntrained(
            "defense evaluation needs a trained completion model".into(),
        ));
    }
    let defended = apply_defense(adv, defense, cfg)?;
    let output = model.complete(&defended)?;
    let s_re = chamfer(&output, source_gt, ChamferVariant::CdP)?;
    let denominator = chamfer(clean_output, source_gt, ChamferVariant::CdP)?;
    if denominator <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok((s_re, s_re / denominator))
}
