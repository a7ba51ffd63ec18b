//! Synthetic shape generation, partial-view rendering, dataset and
//! attack-pair manifests, and point-cloud file formats.

mod formats;
mod manifest;
mod render;

pub use formats::{read_ply, read_xyz, write_ply, write_xyz};
pub use manifest::{
    build_pair_manifest, generate_dataset, DataGenConfig, DatasetIndex, ObjectEntry, PairEntry,
    PairManifest,
};
pub use render::{render_partial, visible_count};

use crate::error::{Error, Result};
use crate::geometry::{CloudKind, Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The four synthetic shape classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Sphere,
    Box,
    Cylinder,
    Plane,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Sphere,
        ShapeClass::Box,
        ShapeClass::Cylinder,
        ShapeClass::Plane,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Box => "box",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Plane => "plane",
        }
    }

    /// Stable class index used as the classifier label.
    pub fn index(&self) -> usize {
        match self {
            ShapeClass::Sphere => 0,
            ShapeClass::Box => 1,
            ShapeClass::Cylinder => 2,
            ShapeClass::Plane => 3,
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeClass::Sphere),
            "box" => Ok(ShapeClass::Box),
            "cylinder" => Ok(ShapeClass::Cylinder),
            "plane" => Ok(ShapeClass::Plane),
            other => Err(Error::InvalidSpec(format!("unknown shape class {other:?}"))),
        }
    }
}

/// Parameters of one synthetic object. Sampling is deterministic given the
/// seed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class: ShapeClass,
    /// Overall half-extent in (0, 1].
    pub scale: f64,
    /// Secondary extent ratio in [0.2, 1].
    pub aspect: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "scale must lie in (0, 1], got {}",
                self.scale
            )));
        }
        if !(0.2..=1.0).contains(&self.aspect) {
            return Err(Error::InvalidSpec(format!(
                "aspect must lie in [0.2, 1], got {}",
                self.aspect
            )));
        }
        if self.sample_count == 0 {
            return Err(Error::InvalidSpec("sample_count must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn unit_direction(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = [
            rng.random_range(-1.0..1.0f64),
            rng.random_range(-1.0..1.0f64),
            rng.random_range(-1.0..1.0f64),
        ];
        let norm_sq = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if norm_sq > 1e-6 && norm_sq <= 1.0 {
            let n = norm_sq.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Samples `sample_count` points uniformly on the surface described by
/// `spec`, centered at the origin and contained in `[-1,1]^3`.
pub fn generate_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.sample_count;
    let s = spec.scale;
    let a = spec.aspect;

    let points: Vec<Point3> = match spec.class {
        ShapeClass::Sphere => (0..n)
            .map(|_| {
                let d = unit_direction(&mut rng);
                [d[0] * s, d[1] * s, d[2] * s]
            })
            .collect(),
        ShapeClass::Box => {
            let h = [s, s * a, s * a];
            // Face pair areas, one weight per axis-normal face pair.
            let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
            let total: f64 = areas.iter().sum();
            (0..n)
                .map(|_| {
                    let mut pick = rng.random_range(0.0..total);
                    let mut axis = 0;
                    for (i, &w) in areas.iter().enumerate() {
                        if pick < w {
                            axis = i;
                            break;
                        }
                        pick -= w;
                    }
                    let sign = if rng.random_range(0..2u32) == 0 { 1.0 } else { -1.0 };
                    let mut p = [
                        rng.random_range(-h[0]..h[0]),
                        rng.random_range(-h[1]..h[1]),
                        rng.random_range(-h[2]..h[2]),
                    ];
                    p[axis] = sign * h[axis];
                    p
                })
                .collect()
        }
        ShapeClass::Cylinder => {
            let r = s * a;
            let h = s;
            let lateral = 2.0 * std::f64::consts::PI * r * 2.0 * h;
            let caps = 2.0 * std::f64::consts::PI * r * r;
            let total = lateral + caps;
            (0..n)
                .map(|_| {
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    if rng.random_range(0.0..total) < lateral {
                        let z = rng.random_range(-h..h);
                        [r * theta.cos(), r * theta.sin(), z]
                    } else {
                        let sign = if rng.random_range(0..2u32) == 0 { 1.0 } else { -1.0 };
                        let rad = r * rng.random_range(0.0..1.0f64).sqrt();
                        [rad * theta.cos(), rad * theta.sin(), sign * h]
                    }
                })
                .collect()
        }
        ShapeClass::Plane => (0..n)
            .map(|_| {
                [
                    rng.random_range(-s..s),
                    rng.random_range(-(s * a)..(s * a)),
                    0.0,
                ]
            })
            .collect(),
    };

    Ok(PointCloud::new(points, CloudKind::Complete)?.with_label(spec.class.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_samples_have_constant_radius() {
        let spec = ShapeSpec {
            class: ShapeClass::Sphere,
            scale: 0.8,
            aspect: 1.0,
            sample_count: 200,
            seed: 3,
        };
        let cloud = generate_shape(&spec).unwrap();
        for p in cloud.points() {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 0.8).abs() <= 1e-9, "radius {r}");
        }
        assert_eq!(cloud.label(), Some("sphere"));
        assert_eq!(cloud.kind(), CloudKind::Complete);
    }

    #[test]
    fn box_samples_lie_on_exactly_one_face() {
        let spec = ShapeSpec {
            class: ShapeClass::Box,
            scale: 0.9,
            aspect: 0.5,
            sample_count: 200,
            seed: 4,
        };
        let cloud = generate_shape(&spec).unwrap();
        let h = [0.9, 0.45, 0.45];
        for p in cloud.points() {
            let on_face = (0..3)
                .filter(|&i| (p[i].abs() - h[i]).abs() < 1e-12)
                .count();
            assert_eq!(on_face, 1, "point {p:?}");
            for i in 0..3 {
                assert!(p[i].abs() <= h[i] + 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = ShapeSpec {
            class: ShapeClass::Cylinder,
            scale: 1.0,
            aspect: 0.6,
            sample_count: 64,
            seed: 9,
        };
        let a = generate_shape(&spec).unwrap();
        let b = generate_shape(&spec).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = ShapeSpec {
            class: ShapeClass::Plane,
            scale: 0.0,
            aspect: 0.5,
            sample_count: 10,
            seed: 0,
        };
        assert!(matches!(generate_shape(&spec), Err(Error::InvalidSpec(_))));
        spec.scale = 0.5;
        spec.aspect = 0.1;
        assert!(matches!(generate_shape(&spec), Err(Error::InvalidSpec(_))));
        spec.aspect = 0.5;
        spec.sample_count = 0;
        assert!(matches!(generate_shape(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn everything_fits_the_unit_box() {
        for (i, class) in ShapeClass::ALL.into_iter().enumerate() {
            let spec = ShapeSpec {
                class,
                scale: 1.0,
                aspect: 0.7,
                sample_count: 100,
                seed: i as u64,
            };
            let cloud = generate_shape(&spec).unwrap();
            for p in cloud.points() {
                assert!(p.iter().all(|c| c.abs() <= 1.0));
            }
        }
    }
}
