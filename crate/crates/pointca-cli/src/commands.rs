//! Command implementations and their JSON config schemas.

use pointca::campaign::{
    self, AttackCampaignConfig, DefenseSweepConfig, ReportConfig, TransferConfig,
};
use pointca::data::{
    build_pair_manifest, generate_dataset, DataGenConfig, DatasetIndex, ShapeClass,
};
use pointca::models::{
    classifier_accuracy, train_classifier as train_classifier_loop, train_completion, Classifier,
    CompletionModel, ModelArch, TrainConfig,
};
use pointca::metrics::{chamfer, ChamferVariant};
use pointca::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const GEN_DATA_HELP: &str = "Config keys:
  out_dir               output directory (dataset files + manifest.json)
  dataset.objects_per_class, dataset.views_per_object
  dataset.complete_size, dataset.partial_size
  dataset.raster, dataset.view_distance, dataset.seed
  sources_per_class     attack sources drawn per class
  targets_top_n         nearest targets kept per foreign class
  pairing_seed          seed of source/view draws";

pub const TRAIN_HELP: &str = "Config keys:
  dataset_dir           dataset root (from gen-data)
  out_weights           weight file to write
  loss_csv              per-epoch loss CSV to write
  arch                  \"default\" (64/128 enc, 256 dec) or \"compact\"
  init_seed             weight initialization seed
  test_fraction         held-out object fraction
  split_seed            train/test split seed
  train.epochs, train.batch_size, train.learning_rate
  train.adam_beta1, train.adam_beta2, train.adam_eps
  train.jitter_sigma    Gaussian input augmentation (0 disables)
  train.seed";

pub const TRAIN_CLASSIFIER_HELP: &str = "Config keys:
  dataset_dir, out_weights, loss_csv, init_seed,
  test_fraction, split_seed  as in train
  include_completes     also train on complete clouds
  enc_hidden            encoder widths, e.g. [64, 128]
  train.*               as in train";

pub const ATTACK_HELP: &str = "Config keys:
  dataset_dir, manifest, weights, out_dir
  attack_kind           pointca | random_noise | classification_noise
  classifier_weights    required for classification_noise
  pair_limit            evaluate this many pairs, spread evenly (null = all)
  emd_iterations        auction phases of the EMD metric
  workers               worker threads (0 = one per CPU)
  defense.*             outlier-count parameters (sor_k, sor_alpha, ...)
  attack.mode           geometry | latent
  attack.iterations, attack.k, attack.t, attack.eta
  attack.base_step, attack.decay_rate, attack.decay_step
  attack.lambda, attack.latent_components (both | l2_only | kl_only)
  attack.budget_kind    adaptive | pointwise_l2 | channelwise_linf
  attack.uniform_eps_scale, attack.init_noise_scale, attack.seed";

pub const DEFEND_HELP: &str = "Config keys:
  dataset_dir, manifest, weights
  campaign_dir          campaign holding adv/<pair_id>.xyz
  out_csv               sweep CSV to write
  srs_rates, or_thresholds, sor_ks, sor_alphas   parameter grids
  include_clean         also evaluate clean sources (control rows)
  pair_limit, seed";

pub const REPORT_HELP: &str = "Config keys:
  campaigns             list of campaign.csv paths
  out_json              aggregate summary to write
  out_asr_csv           relative-ASR curve CSV to write
  asr_tau_max, asr_tau_steps   threshold grid";

pub const TRANSFER_HELP: &str = "Config keys:
  dataset_dir, manifest
  victims               [[name, weights], ...]
  campaigns             [[name, campaign_dir], ...]
  out_csv               transfer matrix CSV
  pair_limit";

/// Loads a JSON config, applies `--set` overrides, and deserializes it.
/// Unknown keys are hard errors.
fn load_config<T: DeserializeOwned>(path: &Path, sets: &[String]) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!(
        "{}: {e}",
        path.display()
    )))?;
    for entry in sets {
        let (key, raw) = entry.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("--set expects KEY=VALUE, got {entry:?}"))
        })?;
        let parsed: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
        let mut cursor = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            cursor = cursor
                .as_object_mut()
                .ok_or_else(|| Error::InvalidConfig(format!("--set path {key:?} is not an object")))?
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
        cursor
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("--set path {key:?} is not an object")))?
            .insert(parts[parts.len() - 1].to_string(), parsed);
    }
    serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Re-roots a relative output path under `POINTCA_OUT_DIR` when that
/// variable is set; the only environment override the CLI honors.
fn resolve_out(path: &str) -> PathBuf {
    match std::env::var_os("POINTCA_OUT_DIR") {
        Some(root) if Path::new(path).is_relative() => PathBuf::from(root).join(path),
        _ => PathBuf::from(path),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn write_loss_csv(path: &Path, history: &[f64]) -> Result<()> {
    ensure_parent(path)?;
    let mut lines = vec!["epoch,loss".to_string()];
    for (i, loss) in history.iter().enumerate() {
        lines.push(format!("{},{}", i + 1, loss));
    }
    fs::write(path, lines.join("\n") + "\n")?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenDataConfig {
    out_dir: String,
    #[serde(default)]
    dataset: DataGenConfig,
    #[serde(default = "default_sources")]
    sources_per_class: usize,
    #[serde(default = "default_top_n")]
    targets_top_n: usize,
    #[serde(default)]
    pairing_seed: u64,
}

fn default_sources() -> usize {
    10
}

fn default_top_n() -> usize {
    3
}

pub fn gen_data(config: &Path, sets: &[String]) -> Result<()> {
    let cfg: GenDataConfig = load_config(config, sets)?;
    let out = resolve_out(&cfg.out_dir);
    fs::create_dir_all(&out)?;
    let index = generate_dataset(&cfg.dataset, &out)?;
    let manifest = build_pair_manifest(&index, &out, cfg.sources_per_class, cfg.targets_top_n, cfg.pairing_seed)?;
    manifest.save(out.join("manifest.json"))?;
    println!(
        "dataset: {} objects across {} classes, {} partial views each; manifest: {} attack pairs",
        index.objects.len(),
        index.classes().len(),
        cfg.dataset.views_per_object,
        manifest.entries.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainCmdConfig {
    dataset_dir: String,
    out_weights: String,
    #[serde(default)]
    loss_csv: Option<String>,
    #[serde(default = "default_arch")]
    arch: String,
    #[serde(default = "default_init_seed")]
    init_seed: u64,
    #[serde(default = "default_test_fraction")]
    test_fraction: f64,
    #[serde(default = "default_split_seed")]
    split_seed: u64,
    #[serde(default)]
    train: TrainConfig,
}

fn default_arch() -> String {
    "default".to_string()
}

fn default_init_seed() -> u64 {
    42
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_split_seed() -> u64 {
    11
}

fn split_pairs(
    index: &DatasetIndex,
    root: &Path,
    test_fraction: f64,
    split_seed: u64,
) -> Result<(
    Vec<(pointca::geometry::PointCloud, pointca::geometry::PointCloud)>,
    Vec<(pointca::geometry::PointCloud, pointca::geometry::PointCloud)>,
)> {
    let (train_idx, _test_idx) = index.split_objects(test_fraction, split_seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (oi, obj) in index.objects.iter().enumerate() {
        let complete = pointca::data::read_xyz(root.join(&obj.complete_path))?;
        for pp in &obj.partial_paths {
            let partial = pointca::data::read_xyz(root.join(pp))?;
            if train_idx.contains(&oi) {
                train.push((partial, complete.clone()));
            } else {
                test.push((partial, complete.clone()));
            }
        }
    }
    Ok((train, test))
}

pub fn train(config: &Path, sets: &[String]) -> Result<()> {
    let cfg: TrainCmdConfig = load_config(config, sets)?;
    let root = PathBuf::from(&cfg.dataset_dir);
    let index = DatasetIndex::load(&root)?;
    let arch = match cfg.arch.as_str() {
        "default" => ModelArch {
            n_out: index.config.complete_size,
            ..ModelArch::default()
        },
        "compact" => ModelArch::compact(index.config.complete_size),
        other => {
            return Err(Error::InvalidConfig(format!(
                "arch must be \"default\" or \"compact\", got {other:?}"
            )))
        }
    };
    let (train_pairs, test_pairs) = split_pairs(&index, &root, cfg.test_fraction, cfg.split_seed)?;

    let mut model = CompletionModel::new(arch, cfg.init_seed);
    let history = train_completion(&mut model, &train_pairs, &cfg.train)?;
    let out = resolve_out(&cfg.out_weights);
    ensure_parent(&out)?;
    model.save(&out)?;
    if let Some(loss_csv) = &cfg.loss_csv {
        write_loss_csv(&resolve_out(loss_csv), &history)?;
    }

    let mut test_cds: Vec<f64> = Vec::new();
    for (partial, complete) in &test_pairs {
        let output = model.complete(partial)?;
        test_cds.push(chamfer(&output, complete, ChamferVariant::CdP)?);
    }
    let final_loss = history.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} pairs; final train CD-P {final_loss:.5}",
        cfg.train.epochs,
        train_pairs.len()
    );
    if !test_cds.is_empty() {
        let median = campaign::median(&test_cds)?;
        let below = test_cds.iter().filter(|&&cd| cd < 0.05).count();
        println!(
            "held-out CD-P median {median:.5}; {}/{} below 0.05",
            below,
            test_cds.len()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainClassifierCmdConfig {
    dataset_dir: String,
    out_weights: String,
    #[serde(default)]
    loss_csv: Option<String>,
    #[serde(default = "default_clf_init_seed")]
    init_seed: u64,
    #[serde(default = "default_test_fraction")]
    test_fraction: f64,
    #[serde(default = "default_split_seed")]
    split_seed: u64,
    #[serde(default = "default_true")]
    include_completes: bool,
    #[serde(default = "default_enc_hidden")]
    enc_hidden: [usize; 2],
    #[serde(default)]
    train: TrainConfig,
}

fn default_clf_init_seed() -> u64 {
    9
}

fn default_true() -> bool {
    true
}

fn default_enc_hidden() -> [usize; 2] {
    [64, 128]
}

pub fn train_classifier(config: &Path, sets: &[String]) -> Result<()> {
    let cfg: TrainClassifierCmdConfig = load_config(config, sets)?;
    let root = PathBuf::from(&cfg.dataset_dir);
    let index = DatasetIndex::load(&root)?;
    let (train_idx, test_idx) = index.split_objects(cfg.test_fraction, cfg.split_seed);

    let collect = |indices: &[usize]| -> Result<Vec<(pointca::geometry::PointCloud, usize)>> {
        let mut samples = Vec::new();
        for &oi in indices {
            let obj = &index.objects[oi];
            let class = ShapeClass::from_str(&obj.class)?.index();
            if cfg.include_completes {
                samples.push((pointca::data::read_xyz(root.join(&obj.complete_path))?, class));
            }
            for pp in &obj.partial_paths {
                samples.push((pointca::data::read_xyz(root.join(pp))?, class));
            }
        }
        Ok(samples)
    };
    let train_samples = collect(&train_idx)?;
    let test_samples = collect(&test_idx)?;

    let class_count = index.classes().len();
    let mut model = Classifier::new(cfg.enc_hidden, class_count, cfg.init_seed);
    let history = train_classifier_loop(&mut model, &train_samples, &cfg.train)?;
    let out = resolve_out(&cfg.out_weights);
    ensure_parent(&out)?;
    model.save(&out)?;
    if let Some(loss_csv) = &cfg.loss_csv {
        write_loss_csv(&resolve_out(loss_csv), &history)?;
    }
    println!(
        "trained classifier on {} samples; train accuracy {:.3}",
        train_samples.len(),
        classifier_accuracy(&model, &train_samples)?
    );
    if !test_samples.is_empty() {
        println!(
            "held-out accuracy {:.3} over {} samples",
            classifier_accuracy(&model, &test_samples)?,
            test_samples.len()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn attack(config: &Path, sets: &[String], workers: Option<usize>) -> Result<()> {
    let mut cfg: AttackCampaignConfig = load_config(config, sets)?;
    if let Some(workers) = workers {
        cfg.workers = workers;
    }
    cfg.out_dir = resolve_out(&cfg.out_dir).to_string_lossy().into_owned();
    let summary = campaign::run_attack_campaign(&cfg)?;
    println!(
        "campaign complete: {} pairs; median T-NRE {:.4}, median budget {:.5}, median outliers {:.1}",
        summary.rows, summary.median_t_nre, summary.median_budget, summary.median_outliers
    );
    println!("wrote {}", summary.csv_path);
    Ok(())
}

pub fn defend(config: &Path, sets: &[String]) -> Result<()> {
    let mut cfg: DefenseSweepConfig = load_config(config, sets)?;
    cfg.out_csv = resolve_out(&cfg.out_csv).to_string_lossy().into_owned();
    let rows = campaign::run_defense_sweep(&cfg)?;
    println!("defense sweep: {} rows", rows.len());
    println!("wrote {}", cfg.out_csv);
    Ok(())
}

pub fn report(config: &Path, sets: &[String]) -> Result<()> {
    let mut cfg: ReportConfig = load_config(config, sets)?;
    cfg.out_json = resolve_out(&cfg.out_json).to_string_lossy().into_owned();
    cfg.out_asr_csv = resolve_out(&cfg.out_asr_csv).to_string_lossy().into_owned();
    let aggregates = campaign::build_report(&cfg)?;
    for a in &aggregates {
        println!(
            "{}: {} rows, {}/{} eta {}, median T-NRE {:.4}, median budget {:.5}",
            a.campaign, a.rows, a.attack_kind, a.mode, a.eta, a.median_t_nre, a.median_budget
        );
    }
    println!("wrote {} and {}", cfg.out_json, cfg.out_asr_csv);
    Ok(())
}

pub fn transfer(config: &Path, sets: &[String]) -> Result<()> {
    let mut cfg: TransferConfig = load_config(config, sets)?;
    cfg.out_csv = resolve_out(&cfg.out_csv).to_string_lossy().into_owned();
    let cells = campaign::run_transfer(&cfg)?;
    for cell in &cells {
        println!(
            "crafted on {} -> evaluated on {}: mean T-RE {:.5} over {} pairs",
            cell.crafted_on, cell.evaluated_on, cell.mean_t_re, cell.pairs
        );
    }
    println!("wrote {}", cfg.out_csv);
    Ok(())
}
