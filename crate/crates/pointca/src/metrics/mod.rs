//! Point-set distances and attack-evaluation metrics.
//!
//! Chamfer distance comes in two conventions: `CD-P` halves the sum of the
//! two directed mean distances, `CD-T` sums the two directed mean *squared*
//! distances. Every metric reported by the toolkit that is written `d(.,.)`
//! uses `CD-P`; `CD-T` is exposed for comparison.

mod emd;

pub use emd::{emd_approx_points, emd_exact_points, EXACT_EMD_LIMIT};

use crate::error::{Error, Result};
use crate::geometry::{dist_sq, KdTree, Neighbor, Point3, PointCloud, KDTREE_THRESHOLD};
use serde::{Deserialize, Serialize};

/// Which chamfer convention to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferVariant {
    /// Half the sum of directed mean Euclidean distances.
    CdP,
    /// Sum of directed mean squared Euclidean distances.
    CdT,
}

/// Nearest point in `to` for every point of `from`, ties to the lower index.
///
/// Shared by the chamfer metric and the differentiable chamfer loss so the
/// two always agree on correspondences.
pub fn nearest_correspondence(from: &[Point3], to: &[Point3]) -> Vec<Neighbor> {
    if to.len() > KDTREE_THRESHOLD {
        let tree = KdTree::build(to);
        from.iter()
            .map(|p| tree.nearest(p, None).expect("nonempty target"))
            .collect()
    } else {
        from.iter()
            .map(|p| {
                let mut best = Neighbor {
                    index: 0,
                    dist_sq: dist_sq(p, &to[0]),
                };
                for (j, q) in to.iter().enumerate().skip(1) {
                    let d = dist_sq(p, q);
                    if d < best.dist_sq {
                        best = Neighbor { index: j, dist_sq: d };
                    }
                }
                best
            })
            .collect()
    }
}

/// Chamfer distance over raw point slices.
pub fn chamfer_points(a: &[Point3], b: &[Point3], variant: ChamferVariant) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let a_to_b = nearest_correspondence(a, b);
    let b_to_a = nearest_correspondence(b, a);
    Ok(match variant {
        ChamferVariant::CdP => {
            let fwd: f64 = a_to_b.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / a.len() as f64;
            let bwd: f64 = b_to_a.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / b.len() as f64;
            0.5 * (fwd + bwd)
        }
        ChamferVariant::CdT => {
            let fwd: f64 = a_to_b.iter().map(|n| n.dist_sq).sum::<f64>() / a.len() as f64;
            let bwd: f64 = b_to_a.iter().map(|n| n.dist_sq).sum::<f64>() / b.len() as f64;
            fwd + bwd
        }
    })
}

/// Chamfer distance between two clouds; sizes may differ.
pub fn chamfer(a: &PointCloud, b: &PointCloud, variant: ChamferVariant) -> Result<f64> {
    chamfer_points(a.points(), b.points(), variant)
}

/// Exact earth mover's distance between equal-size clouds.
pub fn emd_exact(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    emd_exact_points(a.points(), b.points())
}

/// Auction upper bound on the earth mover's distance; `iterations` counts
/// epsilon-scaling phases.
pub fn emd_approx(a: &PointCloud, b: &PointCloud, iterations: usize) -> Result<f64> {
    emd_approx_points(a.points(), b.points(), iterations)
}

/// Target normalized reconstruction error:
/// `CD-P(f(adv), target_gt) / CD-P(f(target_partial), target_gt)`.
///
/// A value of 1 means the attack reconstructs the target as faithfully as
/// the target's own partial view does.
pub fn t_nre(
    model_output_on_adv: &PointCloud,
    target_gt: &PointCloud,
    model_output_on_target_partial: &PointCloud,
) -> Result<f64> {
    let numerator = chamfer(model_output_on_adv, target_gt, ChamferVariant::CdP)?;
    let denominator = chamfer(model_output_on_target_partial, target_gt, ChamferVariant::CdP)?;
    if denominator <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(numerator / denominator)
}

/// Source normalized reconstruction error:
/// `CD-P(f(defended adv), source_gt) / CD-P(f(clean), source_gt)`.
pub fn s_nre(
    model_output_on_defended_adv: &PointCloud,
    source_gt: &PointCloud,
    model_output_on_clean: &PointCloud,
) -> Result<f64> {
    let numerator = chamfer(model_output_on_defended_adv, source_gt, ChamferVariant::CdP)?;
    let denominator = chamfer(model_output_on_clean, source_gt, ChamferVariant::CdP)?;
    if denominator <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(numerator / denominator)
}

/// Fraction of attacks counted successful at each threshold: success at
/// `tau` means `t_nre < tau`. Thresholds must be sorted ascending; the
/// resulting curve is monotone nondecreasing.
pub fn relative_asr(t_nre_values: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if t_nre_values.is_empty() || thresholds.is_empty() {
        return Err(Error::EmptyInput);
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParam(
            "thresholds must be sorted ascending".into(),
        ));
    }
    let n = t_nre_values.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let hits = t_nre_values.iter().filter(|&&v| v < tau).count();
            (tau, hits as f64 / n)
        })
        .collect())
}

/// Perturbation budget `CD-P(adv, clean)`: how far the adversarial cloud
/// sits from its clean source.
pub fn perturbation_budget(adv: &PointCloud, clean: &PointCloud) -> Result<f64> {
    chamfer(adv, clean, ChamferVariant::CdP)
}

/// Per-attack evaluation record: reconstruction errors toward the target,
/// residual errors toward the source, the spent perturbation budget, and
/// the statistical-outlier count of the adversarial cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub t_re_cd: f64,
    pub t_re_emd: f64,
    pub t_nre_cd: f64,
    /// Denominator of `t_nre_cd`: `CD-P(f(target_partial), target_gt)`.
    pub t_nre_denominator: f64,
    pub s_re: f64,
    pub s_nre: f64,
    pub perturbation_budget_cd: f64,
    pub outlier_count: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "t_re_cd,t_re_emd,t_nre_cd,t_nre_denominator,s_re,s_nre,perturbation_budget_cd,outlier_count";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.t_re_cd,
            self.t_re_emd,
            self.t_nre_cd,
            self.t_nre_denominator,
            self.s_re,
            self.s_nre,
            self.perturbation_budget_cd,
            self.outlier_count
        )
    }

    /// Checks the report invariants: nonnegative distances, positive
    /// denominator, and the recorded ratio consistent with its parts.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("t_re_cd", self.t_re_cd),
            ("t_re_emd", self.t_re_emd),
            ("t_nre_cd", self.t_nre_cd),
            ("s_re", self.s_re),
            ("s_nre", self.s_nre),
            ("perturbation_budget_cd", self.perturbation_budget_cd),
        ];
        for (name, value) in fields {
            if !(value >= 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be >= 0, got {value}")));
            }
        }
        if self.t_nre_denominator <= 0.0 {
            return Err(Error::ZeroDenominator);
        }
        let expected = self.t_re_cd / self.t_nre_denominator;
        if (self.t_nre_cd - expected).abs() > 1e-9 * expected.max(1.0) {
            return Err(Error::InvalidParam(format!(
                "t_nre_cd {} inconsistent with t_re_cd/denominator {}",
                self.t_nre_cd, expected
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CloudKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cloud(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points, CloudKind::Complete).unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        cloud(
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn identical_clouds_are_zero() {
        let a = random_cloud(20, 7);
        assert_eq!(chamfer(&a, &a, ChamferVariant::CdP).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &a, ChamferVariant::CdT).unwrap(), 0.0);
    }

    #[test]
    fn single_pair_hand_case() {
        let a = cloud(vec![[0.0, 0.0, 0.0]]);
        let b = cloud(vec![[3.0, 4.0, 0.0]]);
        assert_relative_eq!(chamfer(&a, &b, ChamferVariant::CdP).unwrap(), 5.0, max_relative = 1e-12);
        assert_relative_eq!(chamfer(&a, &b, ChamferVariant::CdT).unwrap(), 50.0, max_relative = 1e-12);
    }

    #[test]
    fn asymmetric_sizes_hand_case() {
        let a = cloud(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = cloud(vec![[0.0, 0.0, 0.0]]);
        assert_relative_eq!(chamfer(&a, &b, ChamferVariant::CdP).unwrap(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn t_nre_cases() {
        let out_adv = random_cloud(16, 1);
        let target = random_cloud(16, 2);
        // Numerator equals denominator when the two outputs coincide.
        assert_relative_eq!(t_nre(&out_adv, &target, &out_adv).unwrap(), 1.0, max_relative = 1e-12);
        // Output equal to the target ground truth zeroes the numerator.
        assert_eq!(t_nre(&target, &target, &out_adv).unwrap(), 0.0);
        assert!(matches!(
            t_nre(&out_adv, &target, &target),
            Err(Error::ZeroDenominator)
        ));
    }

    #[test]
    fn t_nre_direct_ratio() {
        // Clouds engineered so numerator CD is 0.02 and denominator 0.01.
        let target = cloud(vec![[0.0, 0.0, 0.0]]);
        let out_adv = cloud(vec![[0.02, 0.0, 0.0]]);
        let out_tp = cloud(vec![[0.01, 0.0, 0.0]]);
        assert_relative_eq!(t_nre(&out_adv, &target, &out_tp).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn relative_asr_hand_cases() {
        let values = [0.5, 1.5, 2.5];
        let curve = relative_asr(&values, &[0.1, 2.0, 3.0]).unwrap();
        assert_eq!(curve[0].1, 0.0);
        assert_relative_eq!(curve[1].1, 2.0 / 3.0, max_relative = 1e-12);
        assert_eq!(curve[2].1, 1.0);
        assert!(relative_asr(&[], &[1.0]).is_err());
        assert!(relative_asr(&values, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn budget_cases() {
        let a = random_cloud(10, 3);
        assert_eq!(perturbation_budget(&a, &a).unwrap(), 0.0);
        let one = cloud(vec![[0.0, 0.0, 0.0]]);
        let other = cloud(vec![[3.0, 4.0, 0.0]]);
        assert_relative_eq!(perturbation_budget(&other, &one).unwrap(), 5.0, max_relative = 1e-12);
    }

    #[test]
    fn report_validation() {
        let mut report = MetricReport {
            t_re_cd: 0.02,
            t_re_emd: 0.1,
            t_nre_cd: 2.0,
            t_nre_denominator: 0.01,
            s_re: 0.03,
            s_nre: 3.0,
            perturbation_budget_cd: 0.01,
            outlier_count: 4,
        };
        report.validate().unwrap();
        report.t_nre_denominator = 0.0;
        assert!(report.validate().is_err());
    }

    proptest! {
        #[test]
        fn chamfer_is_permutation_invariant(seed in 0u64..40) {
            use rand::seq::SliceRandom;
            let a = random_cloud(24, seed);
            let b = random_cloud(18, seed + 1000);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 2000);
            let mut shuffled = a.points().to_vec();
            shuffled.shuffle(&mut rng);
            let shuffled = cloud(shuffled);
            let d1 = chamfer(&a, &b, ChamferVariant::CdP).unwrap();
            let d2 = chamfer(&shuffled, &b, ChamferVariant::CdP).unwrap();
            prop_assert!((d1 - d2).abs() < 1e-12);
        }

        #[test]
        fn chamfer_symmetric_and_translation_invariant(seed in 0u64..40, tx in -2.0f64..2.0) {
            let a = random_cloud(16, seed);
            let b = random_cloud(12, seed + 500);
            let d_ab = chamfer(&a, &b, ChamferVariant::CdP).unwrap();
            let d_ba = chamfer(&b, &a, ChamferVariant::CdP).unwrap();
            prop_assert!((d_ab - d_ba).abs() < 1e-12);
            let shift = |c: &PointCloud| {
                cloud(c.points().iter().map(|p| [p[0] + tx, p[1], p[2]]).collect())
            };
            let d_shifted = chamfer(&shift(&a), &shift(&b), ChamferVariant::CdP).unwrap();
            prop_assert!((d_ab - d_shifted).abs() <= 1e-9);
            prop_assert!(d_ab >= 0.0);
            prop_assert!(chamfer(&a, &b, ChamferVariant::CdT).unwrap() >= 0.0);
        }

        #[test]
        fn chamfer_zero_iff_equal_sets(seed in 0u64..40) {
            let a = random_cloud(10, seed);
            let b = random_cloud(10, seed + 999);
            let d = chamfer(&a, &b, ChamferVariant::CdP).unwrap();
            // Distinct random draws essentially never coincide as sets.
            prop_assert!(d > 0.0);
        }

        #[test]
        fn asr_curve_monotone(seed in 0u64..40) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..5.0)).collect();
            let thresholds: Vec<f64> = (1..=20).map(|i| i as f64 * 0.25).collect();
            let curve = relative_asr(&values, &thresholds).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            for (_, frac) in curve {
                prop_assert!((0.0..=1.0).contains(&frac));
            }
        }
    }
}
