//! Dataset layout and attack-pair manifests.
//!
//! A generated dataset is a directory of XYZ files plus an `index.json`
//! describing every object. The attack-pair manifest pairs partial source
//! clouds with targets from foreign classes, choosing per class the
//! targets whose ground truths sit nearest the source's in CD-P.

use super::{generate_shape, render_partial, write_xyz, ShapeClass, ShapeSpec};
use crate::data::read_xyz;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics::{chamfer, ChamferVariant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// Parameters of dataset generation; everything derives from `seed`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataGenConfig {
    pub objects_per_class: usize,
    pub views_per_object: usize,
    pub complete_size: usize,
    pub partial_size: usize,
    pub raster: usize,
    pub view_distance: f64,
    pub seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        DataGenConfig {
            objects_per_class: 30,
            views_per_object: 4,
            complete_size: 1024,
            partial_size: 256,
            // A finer raster and closer camera than the bare render default
            // keep 256-point partials mostly duplicate-free at the small
            // object scales below.
            raster: 192,
            view_distance: 2.0,
            seed: 0,
        }
    }
}

/// Object half-extent range. Small relative to the unit box so that clean
/// partial clouds have mean neighbor spacing well under the fixed
/// outlier-removal threshold of 0.05.
pub(crate) const SHAPE_SCALE_RANGE: (f64, f64) = (0.16, 0.24);

impl DataGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects_per_class == 0 || self.views_per_object == 0 {
            return Err(Error::InvalidConfig(
                "objects_per_class and views_per_object must be positive".into(),
            ));
        }
        if self.partial_size == 0 || self.complete_size < self.partial_size {
            return Err(Error::InvalidConfig(
                "complete_size must be at least partial_size".into(),
            ));
        }
        if self.raster == 0 {
            return Err(Error::InvalidConfig("raster must be positive".into()));
        }
        if self.view_distance <= 1.0 {
            return Err(Error::InvalidConfig(
                "view_distance must exceed the unit ball".into(),
            ));
        }
        Ok(())
    }
}

/// One generated object: a complete cloud and its partial views.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub class: String,
    pub object_id: String,
    pub complete_path: String,
    pub partial_paths: Vec<String>,
}

/// Index of a generated dataset directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub config: DataGenConfig,
    pub objects: Vec<ObjectEntry>,
}

impl DatasetIndex {
    pub const FILE_NAME: &'static str = "index.json";

    pub fn classes(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for o in &self.objects {
            if !seen.contains(&o.class) {
                seen.push(o.class.clone());
            }
        }
        seen
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        fs::write(root.as_ref().join(Self::FILE_NAME), text)?;
        Ok(())
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(root.as_ref().join(Self::FILE_NAME))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Loads every `(partial, complete)` pair in index order.
    pub fn all_pairs(&self, root: impl AsRef<Path>) -> Result<Vec<(PointCloud, PointCloud)>> {
        let root = root.as_ref();
        let mut pairs = Vec::new();
        for object in &self.objects {
            let complete = read_xyz(root.join(&object.complete_path))?;
            for partial_path in &object.partial_paths {
                let partial = read_xyz(root.join(partial_path))?;
                pairs.push((partial, complete.clone()));
            }
        }
        Ok(pairs)
    }

    /// Splits object indices into train and test sets by object, so no
    /// view of a test object leaks into training.
    pub fn split_objects(&self, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, o) in self.objects.iter().enumerate() {
            by_class.entry(o.class.as_str()).or_default().push(i);
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (_, mut indices) in by_class {
            use rand::seq::SliceRandom;
            indices.shuffle(&mut rng);
            let n_test = ((indices.len() as f64) * test_fraction).round() as usize;
            let n_test = n_test.min(indices.len().saturating_sub(1));
            test.extend_from_slice(&indices[..n_test]);
            train.extend_from_slice(&indices[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    }
}

/// Generates the synthetic dataset under `root`: complete clouds, partial
/// views, and the index file. Fully deterministic from the config.
pub fn generate_dataset(cfg: &DataGenConfig, root: impl AsRef<Path>) -> Result<DatasetIndex> {
    cfg.validate()?;
    let root = root.as_ref();
    fs::create_dir_all(root.join("complete"))?;
    fs::create_dir_all(root.join("partial"))?;

    let mut objects = Vec::new();
    for class in ShapeClass::ALL {
        for obj in 0..cfg.objects_per_class {
            // One sub-seed per (class, object); shape parameters and view
            // directions draw from it.
            let object_seed = cfg
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((class.index() as u64) << 32)
                .wrapping_add(obj as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(object_seed);
            let spec = ShapeSpec {
                class,
                scale: rng.random_range(SHAPE_SCALE_RANGE.0..SHAPE_SCALE_RANGE.1),
                aspect: rng.random_range(0.4..1.0),
                sample_count: cfg.complete_size,
                seed: rng.random(),
            };
            let complete = generate_shape(&spec)?;

            let object_id = format!("{}_{obj:03}", class.as_str());
            let complete_rel = format!("complete/{object_id}.xyz");
            write_xyz(root.join(&complete_rel), &complete)?;

            let mut partial_paths = Vec::with_capacity(cfg.views_per_object);
            for view in 0..cfg.views_per_object {
                let dir = super::unit_direction(&mut rng);
                let viewpoint = [
                    dir[0] * cfg.view_distance,
                    dir[1] * cfg.view_distance,
                    dir[2] * cfg.view_distance,
                ];
                let partial = render_partial(
                    &complete,
                    viewpoint,
                    cfg.partial_size,
                    cfg.raster,
                    rng.random(),
                )?;
                let partial_rel = format!("partial/{object_id}_v{view}.xyz");
                write_xyz(root.join(&partial_rel), &partial)?;
                partial_paths.push(partial_rel);
            }

            objects.push(ObjectEntry {
                class: class.as_str().to_string(),
                object_id,
                complete_path: complete_rel,
                partial_paths,
            });
        }
    }

    let index = DatasetIndex {
        config: cfg.clone(),
        objects,
    };
    index.save(root)?;
    Ok(index)
}

/// One source-target attack pair. Denominators are the model-dependent
/// normalization constants of T-NRE and S-NRE; they start unset and are
/// cached once a victim model evaluates them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairEntry {
    pub pair_id: String,
    pub source_partial_path: String,
    pub source_gt_path: String,
    pub target_partial_path: String,
    pub target_gt_path: String,
    pub source_class: String,
    pub target_class: String,
    #[serde(default)]
    pub t_nre_denominator: Option<f64>,
    #[serde(default)]
    pub s_nre_denominator: Option<f64>,
}

/// The attack pairing: which partial sources attack which targets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairManifest {
    pub entries: Vec<PairEntry>,
}

impl PairManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Checks that every referenced file exists under `root` and cached
    /// denominators, if any, are positive.
    pub fn validate(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for entry in &self.entries {
            for path in [
                &entry.source_partial_path,
                &entry.source_gt_path,
                &entry.target_partial_path,
                &entry.target_gt_path,
            ] {
                if !root.join(path).exists() {
                    return Err(Error::InvalidConfig(format!(
                        "manifest references missing file {path}"
                    )));
                }
            }
            if entry.source_class == entry.target_class {
                return Err(Error::InvalidConfig(format!(
                    "pair {} attacks its own class",
                    entry.pair_id
                )));
            }
            for denom in [entry.t_nre_denominator, entry.s_nre_denominator] {
                if let Some(d) = denom {
                    if d <= 0.0 {
                        return Err(Error::ZeroDenominator);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds the source-target pairing.
///
/// Per class, `sources_per_class` source objects are drawn (each with one
/// partial view); each source attacks every foreign class through the
/// `targets_top_n` targets whose ground truths are CD-P-nearest to the
/// source's ground truth.
pub fn build_pair_manifest(
    index: &DatasetIndex,
    root: impl AsRef<Path>,
    sources_per_class: usize,
    targets_top_n: usize,
    seed: u64,
) -> Result<PairManifest> {
    if sources_per_class == 0 || targets_top_n == 0 {
        return Err(Error::InvalidConfig(
            "sources_per_class and targets_top_n must be positive".into(),
        ));
    }
    let classes = index.classes();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    let root = root.as_ref();

    // Ground truths drive the nearest-target ranking; load each one once.
    let mut completes: Vec<PointCloud> = Vec::with_capacity(index.objects.len());
    for object in &index.objects {
        completes.push(read_xyz(root.join(&object.complete_path))?);
    }

    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, o) in index.objects.iter().enumerate() {
        by_class.entry(o.class.as_str()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();

    for class in &classes {
        let members = &by_class[class.as_str()];
        let take = sources_per_class.min(members.len());
        let picks = rand::seq::index::sample(&mut rng, members.len(), take);
        let mut source_ids: Vec<usize> = picks.iter().map(|i| members[i]).collect();
        source_ids.sort_unstable();

        for &src in &source_ids {
            let src_obj = &index.objects[src];
            let view = rng.random_range(0..src_obj.partial_paths.len());
            let source_partial_path = src_obj.partial_paths[view].clone();

            for target_class in &classes {
                if target_class == class {
                    continue;
                }
                let candidates = &by_class[target_class.as_str()];
                let mut ranked: Vec<(f64, usize)> = candidates
                    .iter()
                    .map(|&t| {
                        let d = chamfer(&completes[src], &completes[t], ChamferVariant::CdP)
                            .expect("nonempty clouds");
                        (d, t)
                    })
                    .collect();
                ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());

                for &(_, tgt) in ranked.iter().take(targets_top_n) {
                    let tgt_obj = &index.objects[tgt];
                    let tgt_view = rng.random_range(0..tgt_obj.partial_paths.len());
                    entries.push(PairEntry {
                        pair_id: format!(
                            "{}_v{view}__{}_v{tgt_view}",
                            src_obj.object_id, tgt_obj.object_id
                        ),
                        source_partial_path: source_partial_path.clone(),
                        source_gt_path: src_obj.complete_path.clone(),
                        target_partial_path: tgt_obj.partial_paths[tgt_view].clone(),
                        target_gt_path: tgt_obj.complete_path.clone(),
                        source_class: src_obj.class.clone(),
                        target_class: tgt_obj.class.clone(),
                        t_nre_denominator: None,
                        s_nre_denominator: None,
                    });
                }
            }
        }
    }

    Ok(PairManifest { entries })
}
