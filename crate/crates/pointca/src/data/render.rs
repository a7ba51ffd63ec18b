//! Single-view partial rendering by depth-buffer culling.
//!
//! Points are projected through a pinhole camera at the viewpoint looking
//! at the origin with a fixed 90-degree field of view; each raster pixel
//! keeps its nearest point. Occluded regions vanish and the kept points
//! inherit the uneven, view-dependent density that a depth sensor would
//! produce.

use crate::error::{Error, Result};
use crate::geometry::{CloudKind, Point3, PointCloud};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: &Point3) -> Point3 {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Indices of the points that win the per-pixel depth test, ascending.
fn depth_cull(complete: &PointCloud, viewpoint: Point3, raster: usize) -> Result<Vec<usize>> {
    if dot(&viewpoint, &viewpoint) <= 1.0 {
        return Err(Error::InvalidViewpoint);
    }
    if raster == 0 {
        return Err(Error::InvalidParam("raster must be positive".into()));
    }

    // Camera basis: forward toward the origin, up robust to near-vertical
    // viewing directions.
    let forward = normalize(&[-viewpoint[0], -viewpoint[1], -viewpoint[2]]);
    let up_hint = if forward[2].abs() > 0.999 {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let right = normalize(&cross(&forward, &up_hint));
    let up = cross(&right, &forward);

    // 90-degree FOV: image coordinates u/depth, w/depth land in [-1, 1];
    // anything outside clamps into the border pixels.
    let to_pixel = |c: f64| -> usize {
        let t = (c + 1.0) * 0.5 * raster as f64;
        (t.floor() as isize).clamp(0, raster as isize - 1) as usize
    };

    let mut buffer: Vec<Option<(f64, usize)>> = vec![None; raster * raster];
    for (i, p) in complete.points().iter().enumerate() {
        let v = sub(p, &viewpoint);
        let depth = dot(&v, &forward);
        if depth <= 1e-9 {
            continue;
        }
        let u = dot(&v, &right) / depth;
        let w = dot(&v, &up) / depth;
        let cell = &mut buffer[to_pixel(w) * raster + to_pixel(u)];
        match cell {
            Some((d, _)) if *d <= depth => {}
            _ => *cell = Some((depth, i)),
        }
    }

    let mut visible: Vec<usize> = buffer.into_iter().flatten().map(|(_, i)| i).collect();
    visible.sort_unstable();
    Ok(visible)
}

/// Renders the single-view partial cloud of `complete` seen from
/// `viewpoint`, resampled to exactly `m` points.
///
/// The raster is `raster x raster` pixels over the camera's field of view.
/// When fewer than `m` points survive culling the visible set is padded by
/// resampling with replacement, so every output point is a member of the
/// complete cloud (possibly duplicated).
pub fn render_partial(
    complete: &PointCloud,
    viewpoint: Point3,
    m: usize,
    raster: usize,
    seed: u64,
) -> Result<PointCloud> {
    if m == 0 {
        return Err(Error::InvalidParam("m must be positive".into()));
    }
    if complete.len() < m {
        return Err(Error::TooFewPoints {
            size: complete.len(),
            needed: m,
        });
    }
    let visible = depth_cull(complete, viewpoint, raster)?;
    if visible.is_empty() {
        return Err(Error::InvalidViewpoint);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if visible.len() >= m {
        let mut picks = rand::seq::index::sample(&mut rng, visible.len(), m).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| visible[i]).collect()
    } else {
        let mut all = visible.clone();
        for _ in visible.len()..m {
            let extra = rand::seq::index::sample(&mut rng, visible.len(), 1).index(0);
            all.push(visible[extra]);
        }
        all
    };

    let points: Vec<Point3> = chosen.iter().map(|&i| complete.points()[i]).collect();
    let mut cloud = PointCloud::new(points, CloudKind::Partial)?;
    if let Some(label) = complete.label() {
        cloud = cloud.with_label(label);
    }
    Ok(cloud)
}

/// Number of distinct points that survive depth-buffer culling from this
/// viewpoint, before resampling. Exposed for density diagnostics.
pub fn visible_count(complete: &PointCloud, viewpoint: Point3, raster: usize) -> Result<usize> {
    Ok(depth_cull(complete, viewpoint, raster)?.len())
}
