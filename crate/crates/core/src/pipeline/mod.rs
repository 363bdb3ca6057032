//! End-to-end experiment orchestration: train, attack, segregate, isolate,
//! blob, neutralize/evaluate, with deterministic artifacts on disk.
//!
//! Every run writes into its own output directory: `model.json`,
//! `pairs.json`, per-stage PNGs with JSON sidecars, `manifest.json`,
//! `scores.csv` and `ssim.csv`. Re-running with an unchanged config
//! reproduces every file byte for byte (no timestamps anywhere), and the
//! trained model is reused when its cache key still matches.

pub mod artifacts;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{self, AdversarialPair, AttackConfig};
use crate::classifier::{self, ModelConfig, TrainedModel};
use crate::container;
use crate::data::{self, ClassLabel, IngestOptions, LabeledImageSet, PairSpec};
use crate::error::{Error, Result};
use crate::isolation::{self, RegionStats};
use crate::metrics::{self, SsimReport};
use crate::neutralization::{self, Blob, ScoreQuad};
use crate::segregation::{
    self, BinaryMask, MaskKind, RepresentativeMap, SaliencyMap, Threshold,
};

use artifacts::{
    blob_sidecar, pack_masks, read_json, representative_sidecar, write_json, write_map_png,
    write_mask_png, write_partition_png, write_scores_csv, write_ssim_csv, BlobSidecar, ScoreRow,
    SsimRow,
};

fn default_theta() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn default_delta() -> Threshold {
    Threshold::Quantile(0.85)
}

/// Full configuration of one directed experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_id: String,
    pub source_class: String,
    pub target_class: String,
    /// Directory holding `<dataset_id>/` with IDX files or class folders.
    pub data_root: PathBuf,
    #[serde(default)]
    pub ingest: IngestOptions,
    #[serde(default)]
    pub model: ModelConfig,
    pub attack: AttackConfig,
    /// RoI mask threshold.
    #[serde(default = "default_delta")]
    pub delta1: Threshold,
    /// RoA mask threshold.
    #[serde(default = "default_delta")]
    pub delta2: Threshold,
    /// Blob threshold on the representative maps, in (0,1).
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Constant written into blob pixels; 0.0 or 1.0.
    #[serde(default)]
    pub fill_value: f64,
    #[serde(default = "default_true")]
    pub keep_largest_component: bool,
    /// false (default): representatives are means of binary masks;
    /// true: means of the continuous saliency maps.
    #[serde(default)]
    pub representative_from_maps: bool,
    /// Cap on source-class train images used for saliency/blob extraction;
    /// 0 = no cap.
    #[serde(default)]
    pub max_contributors: usize,
}

impl ExperimentConfig {
    pub fn pair(&self) -> Result<PairSpec> {
        PairSpec::new(&self.dataset_id, &self.source_class, &self.target_class)
    }

    pub fn validate(&self) -> Result<()> {
        self.pair()?;
        self.model.validate()?;
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta {} not in (0,1)", self.theta)));
        }
        if self.fill_value != 0.0 && self.fill_value != 1.0 {
            return Err(Error::Config(format!(
                "fill_value {} must be 0 or 1",
                self.fill_value
            )));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cache key over everything that influences the trained weights.
    pub fn model_cache_key(&self) -> String {
        let mut hasher = Sha256::new();
        let fields = serde_json::json!({
            "dataset_id": self.dataset_id,
            "source_class": self.source_class,
            "target_class": self.target_class,
            "data_root": self.data_root,
            "ingest": self.ingest,
            "model": self.model,
        });
        hasher.update(fields.to_string().as_bytes());
        let mut out = String::with_capacity(64);
        for byte in hasher.finalize() {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// Well-known file names inside a run's output directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }
    pub fn model(&self) -> PathBuf {
        self.dir.join("model.json")
    }
    pub fn model_meta(&self) -> PathBuf {
        self.dir.join("model.meta.json")
    }
    pub fn pairs(&self) -> PathBuf {
        self.dir.join("pairs.json")
    }
    pub fn roi_masks(&self) -> PathBuf {
        self.dir.join("roi_masks.json")
    }
    pub fn roa_masks(&self) -> PathBuf {
        self.dir.join("roa_masks.json")
    }
    pub fn rep_roi_png(&self) -> PathBuf {
        self.dir.join("rep_roi.png")
    }
    pub fn rep_roa_png(&self) -> PathBuf {
        self.dir.join("rep_roa.png")
    }
    pub fn rep_roi_json(&self) -> PathBuf {
        self.dir.join("rep_roi.json")
    }
    pub fn rep_roa_json(&self) -> PathBuf {
        self.dir.join("rep_roa.json")
    }
    pub fn partition_png(&self) -> PathBuf {
        self.dir.join("partition.png")
    }
    pub fn partition_json(&self) -> PathBuf {
        self.dir.join("partition.json")
    }
    pub fn blob_png(&self) -> PathBuf {
        self.dir.join("blob.png")
    }
    pub fn blob_json(&self) -> PathBuf {
        self.dir.join("blob.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
    pub fn scores_csv(&self) -> PathBuf {
        self.dir.join("scores.csv")
    }
    pub fn ssim_csv(&self) -> PathBuf {
        self.dir.join("ssim.csv")
    }
}

/// Run-level summary written as `manifest.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub model_cache_key: String,
    pub model_cache_hit: bool,
    pub epoch_losses: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_contributors: usize,
    pub region_stats: RegionStats,
    pub blob: BlobSidecar,
    pub scores: ScoreQuad,
    pub ssim: SsimReport,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
}

/// In-memory results of one run, mirrored by the artifacts on disk.
#[derive(Debug)]
pub struct RunOutcome {
    pub scores: ScoreQuad,
    pub ssim: SsimReport,
    pub region_stats: RegionStats,
    pub blob: Blob,
    pub warnings: Vec<String>,
}

/// Loads the dataset; tagged as the "ingest" stage on failure.
pub fn stage_ingest(cfg: &ExperimentConfig) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let pair = cfg.pair()?;
    data::load_pair(&pair, &cfg.data_root, &cfg.ingest).map_err(|e| e.in_stage("ingest"))
}

/// Trains the classifier, or reuses `model.json` when the cache key in
/// `model.meta.json` still matches the config.
pub fn stage_train(
    cfg: &ExperimentConfig,
    train_set: &LabeledImageSet,
    paths: &RunPaths,
) -> Result<(TrainedModel, bool)> {
    #[derive(Serialize, Deserialize)]
    struct ModelMeta {
        cache_key: String,
    }
    let key = cfg.model_cache_key();
    if paths.model().is_file() && paths.model_meta().is_file() {
        if let Ok(meta) = read_json::<ModelMeta>(&paths.model_meta()) {
            if meta.cache_key == key {
                let model = TrainedModel::load(&paths.model()).map_err(|e| e.in_stage("train"))?;
                return Ok((model, true));
            }
        }
    }
    let model = classifier::train(train_set, &cfg.model).map_err(|e| e.in_stage("train"))?;
    model.save(&paths.model()).map_err(|e| e.in_stage("train"))?;
    write_json(&paths.model_meta(), &ModelMeta { cache_key: key })
        .map_err(|e| e.in_stage("train"))?;
    Ok((model, false))
}

/// Source-class train subset the saliency/blob extraction works from,
/// optionally capped at `max_contributors`.
pub fn contributor_set(cfg: &ExperimentConfig, train_set: &LabeledImageSet) -> LabeledImageSet {
    let mut subset = train_set.filter(ClassLabel::Source);
    if cfg.max_contributors > 0 && subset.len() > cfg.max_contributors {
        subset.images.truncate(cfg.max_contributors);
        subset.labels.truncate(cfg.max_contributors);
    }
    subset
}

/// FGSM over the contributor subset; pairs are persisted to `pairs.json`.
pub fn stage_attack(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    contributors: &LabeledImageSet,
    paths: &RunPaths,
) -> Result<Vec<AdversarialPair>> {
    let run = || -> Result<Vec<AdversarialPair>> {
        let pairs = attack::attack_set(model, contributors, &cfg.attack)?;
        container::save_pairs(
            &paths.pairs(),
            &pairs,
            contributors.class_names.clone(),
            contributors.split_tag,
            &cfg.attack,
        )?;
        Ok(pairs)
    };
    run().map_err(|e| e.in_stage("attack"))
}

/// Per-image saliency plus class representatives.
#[derive(Debug)]
pub struct Segregation {
    pub roi_maps: Vec<SaliencyMap>,
    pub roa_maps: Vec<SaliencyMap>,
    pub roi_masks: Vec<BinaryMask>,
    pub roa_masks: Vec<BinaryMask>,
    pub rep_roi: RepresentativeMap,
    pub rep_roa: RepresentativeMap,
    pub warnings: Vec<String>,
}

/// RoI (Grad-CAM on clean images) and RoA (achieved perturbation) maps and
/// masks for every contributor, plus the two representative maps.
pub fn stage_segregate(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    pairs: &[AdversarialPair],
    paths: &RunPaths,
) -> Result<Segregation> {
    let run = || -> Result<Segregation> {
        if pairs.is_empty() {
            return Err(Error::Validation("no contributor images to segregate".into()));
        }
        let mut warnings = Vec::new();
        let mut roi_maps = Vec::with_capacity(pairs.len());
        let mut roa_maps = Vec::with_capacity(pairs.len());
        let mut roi_masks = Vec::with_capacity(pairs.len());
        let mut roa_masks = Vec::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let roi = segregation::roi_map(model, &pair.clean)?;
            let roa = segregation::roa_map(pair)?;
            if roi.degenerate {
                warnings.push(format!("RoI map {i} is degenerate (all zero)"));
            }
            if roa.degenerate {
                warnings.push(format!("RoA map {i} is degenerate (no perturbation)"));
            }
            roi_masks.push(segregation::threshold_mask(&roi, cfg.delta1)?);
            roa_masks.push(segregation::threshold_mask(&roa, cfg.delta2)?);
            roi_maps.push(roi);
            roa_maps.push(roa);
        }
        let (rep_roi, rep_roa) = if cfg.representative_from_maps {
            (
                segregation::representative_from_maps(&roi_maps)?,
                segregation::representative_from_maps(&roa_maps)?,
            )
        } else {
            (
                segregation::representative_map(&roi_masks)?,
                segregation::representative_map(&roa_masks)?,
            )
        };
        write_json(&paths.roi_masks(), &pack_masks(&roi_masks, "roi")?)?;
        write_json(&paths.roa_masks(), &pack_masks(&roa_masks, "roa")?)?;
        write_map_png(&paths.rep_roi_png(), &rep_roi.values)?;
        write_map_png(&paths.rep_roa_png(), &rep_roa.values)?;
        write_json(
            &paths.rep_roi_json(),
            &representative_sidecar("rep_roi", &rep_roi, cfg.delta1),
        )?;
        write_json(
            &paths.rep_roa_json(),
            &representative_sidecar("rep_roa", &rep_roa, cfg.delta2),
        )?;
        Ok(Segregation {
            roi_maps,
            roa_maps,
            roi_masks,
            roa_masks,
            rep_roi,
            rep_roa,
            warnings,
        })
    };
    run().map_err(|e| e.in_stage("segregate"))
}

/// Thresholds the representative maps at θ and partitions the image plane
/// into the four regions; writes the composite PNG and the stats sidecar.
pub fn stage_isolate(
    cfg: &ExperimentConfig,
    seg: &Segregation,
    paths: &RunPaths,
) -> Result<RegionStats> {
    let run = || -> Result<RegionStats> {
        let roi = BinaryMask {
            bits: seg.rep_roi.values.mapv(|v| v >= cfg.theta),
            kind: MaskKind::Roi,
        };
        let roa = BinaryMask {
            bits: seg.rep_roa.values.mapv(|v| v >= cfg.theta),
            kind: MaskKind::Roa,
        };
        let partition = isolation::partition(&roi, &roa)?;
        let stats = isolation::region_stats(&partition);
        write_partition_png(&paths.partition_png(), &partition)?;
        write_json(&paths.partition_json(), &stats)?;
        Ok(stats)
    };
    run().map_err(|e| e.in_stage("isolate"))
}

/// ŪV blob from the representative maps; writes blob.png and its sidecar.
pub fn stage_blob(cfg: &ExperimentConfig, seg: &Segregation, paths: &RunPaths) -> Result<Blob> {
    let run = || -> Result<Blob> {
        let pair = cfg.pair()?;
        let blob = neutralization::extract_blob(
            &seg.rep_roi,
            &seg.rep_roa,
            cfg.theta,
            cfg.fill_value,
            cfg.keep_largest_component,
            &pair,
            cfg.delta1,
            cfg.delta2,
        )?;
        write_mask_png(&paths.blob_png(), &blob.mask)?;
        write_json(&paths.blob_json(), &blob_sidecar(&blob))?;
        Ok(blob)
    };
    run().map_err(|e| e.in_stage("blob"))
}

/// Four-score protocol on the source-class test subset plus the RoI/RoA
/// similarity report over the contributor masks.
pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    test_set: &LabeledImageSet,
    seg: &Segregation,
    blob: &Blob,
    paths: &RunPaths,
) -> Result<(ScoreQuad, SsimReport)> {
    let run = || -> Result<(ScoreQuad, SsimReport)> {
        let pair = cfg.pair()?;
        let test_source = test_set.filter(ClassLabel::Source);
        if test_source.is_empty() {
            return Err(Error::Validation(format!(
                "no test samples of source class '{}'",
                cfg.source_class
            )));
        }
        let scores = neutralization::defense_eval(model, &test_source, &cfg.attack, blob)?;
        let ssim = metrics::roi_roa_similarity(&pair, &seg.roi_masks, &seg.roa_masks)?;
        let direction = format!("{} to {}", cfg.source_class, cfg.target_class);
        write_scores_csv(
            &paths.scores_csv(),
            &[ScoreRow::from_quad(&cfg.dataset_id, &direction, &scores)],
        )?;
        write_ssim_csv(&paths.ssim_csv(), &[SsimRow::from_report(&ssim)])?;
        Ok((scores, ssim))
    };
    run().map_err(|e| e.in_stage("evaluate"))
}

/// Runs all stages for one config and writes `manifest.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let paths = RunPaths::new(out_dir);
    write_json(&paths.config(), cfg)?;

    let (train_set, test_set) = stage_ingest(cfg)?;
    let (model, cache_hit) = stage_train(cfg, &train_set, &paths)?;
    let contributors = contributor_set(cfg, &train_set);
    let pairs = stage_attack(cfg, &model, &contributors, &paths)?;
    let seg = stage_segregate(cfg, &model, &pairs, &paths)?;
    let region_stats = stage_isolate(cfg, &seg, &paths)?;
    let blob = stage_blob(cfg, &seg, &paths)?;
    let (scores, ssim) = stage_evaluate(cfg, &model, &test_set, &seg, &blob, &paths)?;

    let mut warnings = model.warnings.clone();
    warnings.extend(seg.warnings.clone());
    if let Some(w) = &blob.warning {
        warnings.push(w.clone());
    }
    let artifacts = vec![
        "config.json",
        "model.json",
        "model.meta.json",
        "pairs.json",
        "roi_masks.json",
        "roa_masks.json",
        "rep_roi.png",
        "rep_roi.json",
        "rep_roa.png",
        "rep_roa.json",
        "partition.png",
        "partition.json",
        "blob.png",
        "blob.json",
        "scores.csv",
        "ssim.csv",
        "manifest.json",
    ]
    .into_iter()
    .map(str::to_string)
    .collect();
    let manifest = Manifest {
        format_version: 1,
        config: cfg.clone(),
        model_cache_key: cfg.model_cache_key(),
        model_cache_hit: cache_hit,
        epoch_losses: model.epoch_losses.clone(),
        n_train: train_set.len(),
        n_test: test_set.len(),
        n_contributors: contributors.len(),
        region_stats: region_stats.clone(),
        blob: blob_sidecar(&blob),
        scores: scores.clone(),
        ssim: ssim.clone(),
        artifacts,
        warnings: warnings.clone(),
    };
    write_json(&paths.manifest(), &manifest)?;
    Ok(RunOutcome {
        scores,
        ssim,
        region_stats,
        blob,
        warnings,
    })
}

/// Runs every config into its own subdirectory of `out_dir` and writes the
/// combined `scores.csv` / `ssim.csv` at the top level. A failed run is
/// recorded with an error status instead of aborting the rest.
pub fn run_matrix(configs: &[(String, ExperimentConfig)], out_dir: &Path) -> Result<Vec<ScoreRow>> {
    if configs.is_empty() {
        return Err(Error::Config("empty experiment matrix".into()));
    }
    let mut names = std::collections::HashSet::new();
    for (name, _) in configs {
        if !names.insert(name) {
            return Err(Error::Config(format!("duplicate run name '{name}'")));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut score_rows = Vec::new();
    let mut ssim_rows = Vec::new();
    for (name, cfg) in configs {
        let direction = format!("{} to {}", cfg.source_class, cfg.target_class);
        match run_experiment(cfg, &out_dir.join(name)) {
            Ok(outcome) => {
                score_rows.push(ScoreRow::from_quad(&cfg.dataset_id, &direction, &outcome.scores));
                ssim_rows.push(SsimRow::from_report(&outcome.ssim));
            }
            Err(e) => {
                score_rows.push(ScoreRow {
                    dataset: cfg.dataset_id.clone(),
                    direction,
                    score_clean: f64::NAN,
                    score_adv: f64::NAN,
                    score_mod: f64::NAN,
                    score_mod_adv: f64::NAN,
                    status: format!("error: {e}"),
                });
            }
        }
    }
    write_scores_csv(&out_dir.join("scores.csv"), &score_rows)?;
    write_ssim_csv(&out_dir.join("ssim.csv"), &ssim_rows)?;
    Ok(score_rows)
}
