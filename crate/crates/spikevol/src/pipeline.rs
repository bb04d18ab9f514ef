//! End-to-end pipeline driver: configuration, stage orchestration, run
//! manifests, inference benchmarks, and the multi-seed trend protocol.
//!
//! A run executes the stages in a fixed order — scene synthesis, detection
//! pairing, pairing scores, dataset featurization, teacher, student,
//! multi-view regressor, ensemble, both distillation modes, evaluation —
//! writing every artifact under one output directory and recording a
//! manifest of per-stage output hashes and wall-clock times. Re-running
//! with an identical configuration reproduces every output byte for byte
//! (wall-clock fields aside).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Camera;
use crate::cloud::{distance_histograms, CloudSource, PointCloud};
use crate::formats::{
    self, encoder_to_checkpoint, ensemble_to_checkpoint, rt_to_checkpoint, CheckpointKind,
    FormatError, FORMAT_VERSION,
};
use crate::learn::dataset::{
    make_synthetic_dataset, make_unlabeled_spikes, Dataset, SpikeRecord, HISTOGRAM_RANGE_MM,
};
use crate::learn::train::{
    distill_features, distill_pseudolabels, evaluate, train_ensemble, train_field_encoder,
    train_regulated, train_student, train_teacher, EvalRow, TrainedEncoder, TrainedEnsemble,
    TrainedRt, VolumeModel, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_LAMBDA,
};
use crate::learn::{LearnError, TrainConfig};
use crate::losses::{feature_align_loss, pearson_correlation, MetricReport};
use crate::pairing::{build_graph, consensus_clusters, filter_small_clusters, PairingParams};
use crate::rng::derive;
use crate::scene::{
    generate_scene, score_pairing, standard_rig, view_count_breakdown, PoseMode, Scene,
    SceneConfig,
};

/// Version string stamped into run manifests.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Errors from configuration validation or stage execution.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// The configuration is invalid or references missing inputs; nothing ran.
    #[error("configuration error: {0}")]
    Config(String),
    /// A stage failed; earlier outputs are retained for debugging.
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Scene-synthesis settings (the pairing benchmark scene).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneStageConfig {
    pub n_spikes: usize,
    /// `"upright"` (field-like tilts) or `"random"` (arbitrary orientation).
    pub pose: String,
    /// Tilt spread for upright pose, degrees.
    pub tilt_sigma_deg: f64,
    pub extent: [f64; 2],
    pub min_spacing: f64,
    pub height_jitter: f64,
    pub volume_mean: f64,
    pub volume_sd: f64,
}

impl Default for SceneStageConfig {
    fn default() -> Self {
        let base = SceneConfig::default();
        Self {
            n_spikes: base.n_spikes,
            pose: "upright".to_string(),
            tilt_sigma_deg: 15.0,
            extent: [base.extent.0, base.extent.1],
            min_spacing: base.min_spacing,
            height_jitter: base.height_jitter,
            volume_mean: base.volume_mean,
            volume_sd: base.volume_sd,
        }
    }
}

impl SceneStageConfig {
    /// Resolve to the generator's native config with the given seed.
    pub fn to_scene_config(&self, seed: u64) -> Result<SceneConfig, PipelineError> {
        let pose = match self.pose.as_str() {
            "upright" => PoseMode::Upright { sigma_deg: self.tilt_sigma_deg },
            "random" => PoseMode::Random,
            other => {
                return Err(PipelineError::Config(format!(
                    "pose must be \"upright\" or \"random\", got {other:?}"
                )));
            }
        };
        Ok(SceneConfig {
            n_spikes: self.n_spikes,
            pose,
            extent: (self.extent[0], self.extent[1]),
            min_spacing: self.min_spacing,
            height_jitter: self.height_jitter,
            volume_mean: self.volume_mean,
            volume_sd: self.volume_sd,
            occlusion_free: true,
            seed,
        })
    }
}

/// Detection-pairing settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingStageConfig {
    /// Epipolar samples per box edge pair (`k`).
    pub samples_per_box: usize,
    /// Agreement threshold on the sampled-consistency score.
    pub tau: f64,
    pub w_miss: f64,
    pub w_same_image: f64,
    /// Label-propagation restarts feeding the consensus.
    pub runs: usize,
    /// Restarts that must agree to keep a co-assignment.
    pub agreement: usize,
    /// Clusters smaller than this are dropped.
    pub min_views: usize,
}

impl Default for PairingStageConfig {
    fn default() -> Self {
        let p = PairingParams::default();
        Self {
            samples_per_box: p.samples_per_box,
            tau: p.tau,
            w_miss: p.w_miss,
            w_same_image: p.w_same_image,
            runs: 3,
            agreement: 2,
            min_views: 3,
        }
    }
}

impl PairingStageConfig {
    pub fn to_params(&self) -> PairingParams {
        PairingParams {
            samples_per_box: self.samples_per_box,
            tau: self.tau,
            w_miss: self.w_miss,
            w_same_image: self.w_same_image,
            ..PairingParams::default()
        }
    }
}

/// Training-dataset settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetStageConfig {
    pub n_spikes: usize,
    pub views_per_spike: usize,
    /// Unlabeled spikes available to pseudo-label distillation.
    pub n_unlabeled: usize,
}

impl Default for DatasetStageConfig {
    fn default() -> Self {
        Self { n_spikes: 200, views_per_spike: 12, n_unlabeled: 500 }
    }
}

/// Optimizer settings for one training stage. When overriding a stage's
/// optimizer in a config file, all three fields must be spelled out; the
/// per-stage defaults apply only when the whole object is absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl OptimConfig {
    fn from_train(base: TrainConfig) -> Self {
        Self { learning_rate: base.learning_rate, batch_size: base.batch_size, epochs: base.epochs }
    }

    /// Resolve to a full training config with the given seed.
    pub fn to_train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        }
    }

    fn validate(&self, stage: &str) -> Result<(), PipelineError> {
        self.to_train(0)
            .validate()
            .map_err(|e| PipelineError::Config(format!("{stage}: {e}")))
    }
}

/// Student (distilled field encoder) settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub optim: OptimConfig,
    /// Weight of the latent alignment penalty.
    pub lambda: f64,
    /// Magnitude weight inside the alignment penalty.
    pub alpha: f64,
    /// Teacher checkpoint consumed by the standalone subcommand; the full
    /// run wires the freshly trained teacher instead.
    pub teacher_checkpoint: Option<PathBuf>,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::from_train(TrainConfig::encoder_default(0)),
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
            teacher_checkpoint: None,
        }
    }
}

/// Multi-view regressor settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiViewConfig {
    pub optim: OptimConfig,
    /// Weight of the per-view loss terms (0 disables per-view supervision).
    pub per_view_weight: f64,
}

impl Default for MultiViewConfig {
    fn default() -> Self {
        Self { optim: OptimConfig::from_train(TrainConfig::regressor_default(0)), per_view_weight: 1.0 }
    }
}

/// Ensemble head settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub optim: OptimConfig,
    pub rt_checkpoint: Option<PathBuf>,
    pub student_checkpoint: Option<PathBuf>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::from_train(TrainConfig::ensemble_default(0)),
            rt_checkpoint: None,
            student_checkpoint: None,
        }
    }
}

/// Distillation settings (both modes share the optimizer of the multi-view
/// stage unless overridden here).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Weight of the token-alignment penalty (feature mode).
    pub beta: f64,
    /// Magnitude weight inside the token-alignment penalty.
    pub gamma: f64,
    /// Ensemble checkpoint consumed by the standalone subcommand.
    pub ensemble_checkpoint: Option<PathBuf>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { beta: DEFAULT_BETA, gamma: DEFAULT_GAMMA, ensemble_checkpoint: None }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `"train"`, `"val"`, or `"test"`.
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split: "test".to_string() }
    }
}

/// The full pipeline configuration. Every field has a default, so an empty
/// JSON object is a valid config; unknown fields are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: String,
    /// Global seed; each stage derives its own stream from this and the
    /// stage name.
    pub seed: u64,
    /// Optional external camera rig; the built-in twelve-camera ring is
    /// used when absent.
    pub cameras_file: Option<PathBuf>,
    pub scene: SceneStageConfig,
    pub pairing: PairingStageConfig,
    pub dataset: DatasetStageConfig,
    pub teacher: OptimConfig,
    pub student: StudentConfig,
    pub multi_view: MultiViewConfig,
    pub ensemble: EnsembleConfig,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION.to_string(),
            seed: 0,
            cameras_file: None,
            scene: SceneStageConfig::default(),
            pairing: PairingStageConfig::default(),
            dataset: DatasetStageConfig::default(),
            teacher: OptimConfig::from_train(TrainConfig::encoder_default(0)),
            student: StudentConfig::default(),
            multi_view: MultiViewConfig::default(),
            ensemble: EnsembleConfig::default(),
            distill: DistillConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// A tiny configuration that exercises every stage in well under a
    /// minute: 10 spikes, 3 epochs everywhere.
    pub fn smoke(seed: u64) -> Self {
        let mut cfg = Self { seed, ..Self::default() };
        cfg.scene.n_spikes = 10;
        cfg.dataset = DatasetStageConfig { n_spikes: 10, views_per_spike: 4, n_unlabeled: 8 };
        cfg.teacher.epochs = 3;
        cfg.student.optim.epochs = 3;
        cfg.multi_view.optim.epochs = 3;
        cfg.ensemble.optim.epochs = 3;
        cfg
    }

    /// Load from a JSON file.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let bytes = fs::read(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Hex SHA-256 of the canonical JSON serialization; stamped into every
    /// output file this configuration produces.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        formats::sha256_hex(canonical.as_bytes())
    }

    /// Join the config's relative path references onto `base_dir` (normally
    /// the config file's directory), so later stages can use them from any
    /// working directory.
    pub fn resolve_paths(&mut self, base_dir: &Path) {
        let fix = |slot: &mut Option<PathBuf>| {
            if let Some(path) = slot {
                if path.is_relative() {
                    *path = base_dir.join(std::mem::take(path));
                }
            }
        };
        fix(&mut self.cameras_file);
        fix(&mut self.student.teacher_checkpoint);
        fix(&mut self.ensemble.rt_checkpoint);
        fix(&mut self.ensemble.student_checkpoint);
        fix(&mut self.distill.ensemble_checkpoint);
    }

    /// Validate settings and referenced input paths. Relative paths resolve
    /// against `base_dir`. Parent-checkpoint references are only required by
    /// the standalone stage subcommands, so `require_parents` lists which of
    /// them must exist (any of `"student"`, `"ensemble"`, `"distill"`).
    pub fn validate(&self, base_dir: &Path, require_parents: &[&str]) -> Result<(), PipelineError> {
        if self.format_version != FORMAT_VERSION {
            return Err(PipelineError::Config(format!(
                "format_version {:?} is not supported (this build writes {:?})",
                self.format_version, FORMAT_VERSION
            )));
        }
        if self.scene.n_spikes == 0 {
            return Err(PipelineError::Config("scene.n_spikes must be positive".into()));
        }
        self.scene.to_scene_config(0)?;
        let p = &self.pairing;
        if p.samples_per_box == 0 {
            return Err(PipelineError::Config("pairing.samples_per_box must be positive".into()));
        }
        if !(p.tau > 0.0 && p.tau <= 1.0) {
            return Err(PipelineError::Config(format!("pairing.tau must lie in (0, 1], got {}", p.tau)));
        }
        if p.runs == 0 || p.agreement == 0 || p.agreement > p.runs {
            return Err(PipelineError::Config(format!(
                "pairing needs 0 < agreement <= runs, got agreement {} of {} runs",
                p.agreement, p.runs
            )));
        }
        let d = &self.dataset;
        if d.n_spikes < 9 {
            return Err(PipelineError::Config(format!(
                "dataset.n_spikes must be at least 9 (three families of four), got {}",
                d.n_spikes
            )));
        }
        if d.views_per_spike == 0 || d.views_per_spike > 12 {
            return Err(PipelineError::Config(format!(
                "dataset.views_per_spike must lie in 1..=12, got {}",
                d.views_per_spike
            )));
        }
        self.teacher.validate("teacher")?;
        self.student.optim.validate("student")?;
        self.multi_view.optim.validate("multi_view")?;
        self.ensemble.optim.validate("ensemble")?;
        if !(self.student.lambda >= 0.0 && self.student.lambda.is_finite()) {
            return Err(PipelineError::Config("student.lambda must be finite and >= 0".into()));
        }
        if !(self.distill.beta >= 0.0 && self.distill.beta.is_finite()) {
            return Err(PipelineError::Config("distill.beta must be finite and >= 0".into()));
        }
        match self.eval.split.as_str() {
            "train" | "val" | "test" => {}
            other => {
                return Err(PipelineError::Config(format!(
                    "eval.split must be train, val, or test, got {other:?}"
                )));
            }
        }
        // Referenced input files must exist before any stage runs.
        let mut required: Vec<(&str, &Option<PathBuf>)> = vec![("cameras_file", &self.cameras_file)];
        if require_parents.contains(&"student") {
            required.push(("student.teacher_checkpoint", &self.student.teacher_checkpoint));
        }
        if require_parents.contains(&"ensemble") {
            required.push(("ensemble.rt_checkpoint", &self.ensemble.rt_checkpoint));
            required.push(("ensemble.student_checkpoint", &self.ensemble.student_checkpoint));
        }
        if require_parents.contains(&"distill") {
            required.push(("distill.ensemble_checkpoint", &self.distill.ensemble_checkpoint));
        }
        for (name, path) in required {
            if let Some(p) = path {
                let resolved = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
                if !resolved.exists() {
                    return Err(PipelineError::Config(format!(
                        "{name} references {}, which does not exist",
                        resolved.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Split name -> evaluation indices.
    pub fn eval_indices<'a>(&self, dataset: &'a Dataset) -> &'a [usize] {
        match self.eval.split.as_str() {
            "train" => &dataset.split.train,
            "val" => &dataset.split.val,
            _ => &dataset.split.test,
        }
    }
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// One executed stage: wall-clock and the hash of every file it wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub wall_ms: u64,
    /// File name (relative to the output directory) -> hex SHA-256.
    pub outputs: BTreeMap<String, String>,
}

/// Record of a full pipeline run. Output hashes reproduce exactly when the
/// configuration does; wall-clock fields are informational only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: String,
    pub tool_version: String,
    pub config_hash: String,
    /// How stage seeds derive from the global seed.
    pub seed_derivation: String,
    /// Documented runtime budget for the smoke configuration.
    pub smoke_runtime_budget_s: u64,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    /// The output-hash skeleton (everything except wall-clock), used to
    /// compare runs for reproducibility.
    pub fn output_hashes(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        for stage in &self.stages {
            for (file, hash) in &stage.outputs {
                map.insert(file.clone(), hash.clone());
            }
        }
        map
    }
}

struct StageTimer<'a> {
    manifest: &'a mut RunManifest,
    out_dir: &'a Path,
}

impl StageTimer<'_> {
    fn run<T>(
        &mut self,
        name: &'static str,
        body: impl FnOnce() -> Result<(T, Vec<PathBuf>), PipelineError>,
    ) -> Result<T, PipelineError> {
        let started = Instant::now();
        let (value, files) = body()?;
        let mut outputs = BTreeMap::new();
        for file in files {
            let hash = formats::file_sha256_hex(&file).map_err(stage_err(name))?;
            let rel = file
                .strip_prefix(self.out_dir)
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_else(|_| file.to_string_lossy().into_owned());
            outputs.insert(rel, hash);
        }
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            wall_ms: started.elapsed().as_millis() as u64,
            outputs,
        });
        Ok(value)
    }
}

// ---------------------------------------------------------------------------
// Stage helpers shared with the CLI
// ---------------------------------------------------------------------------

/// Resolve the camera rig: the configured external file or the built-in ring.
pub fn load_rig(config: &PipelineConfig, base_dir: &Path) -> Result<Vec<Camera>, FormatError> {
    match &config.cameras_file {
        Some(p) => {
            let resolved = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
            formats::read_cameras(&resolved)
        }
        None => Ok(standard_rig()),
    }
}

/// Pairing-score summary written by the score stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub include_all: crate::scene::PairingScore,
    pub exclude_border: crate::scene::PairingScore,
    pub view_bins: Vec<crate::scene::BinScore>,
}

/// Score a clustering against a scene: overall scores both with and without
/// border detections, plus the standard view-count bins.
pub fn score_scene(scene: &Scene, clusters: &crate::pairing::ClusterSet) -> ScoreSummary {
    ScoreSummary {
        include_all: score_pairing(scene, clusters, false),
        exclude_border: score_pairing(scene, clusters, true),
        view_bins: view_count_breakdown(scene, clusters, &[(12, 12), (10, 12), (6, 9)], true),
    }
}

/// Serializable view of a metric report keyed by model name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

fn write_loss_curve(path: &Path, curve: &[f64], hash: &str) -> Result<(), FormatError> {
    let rows: Vec<Vec<String>> = curve
        .iter()
        .enumerate()
        .map(|(e, l)| vec![e.to_string(), l.to_string()])
        .collect();
    formats::write_table_csv(path, &["epoch", "loss"], &rows, hash)
}

fn write_eval_rows(path: &Path, rows: &[EvalRow], hash: &str) -> Result<(), FormatError> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(id, truth, pred)| vec![id.to_string(), truth.to_string(), pred.to_string()])
        .collect();
    formats::write_table_csv(path, &["spike_id", "truth_mm3", "predicted_mm3"], &table, hash)
}

// ---------------------------------------------------------------------------
// The full run
// ---------------------------------------------------------------------------

/// All models trained by a full run, in results-table order.
pub struct TrainedStack {
    pub teacher: TrainedEncoder,
    pub student: TrainedEncoder,
    pub rt: TrainedRt,
    pub ensemble: TrainedEnsemble,
    pub rt_distilled_feature: TrainedRt,
    pub rt_distilled_label: TrainedRt,
}

impl TrainedStack {
    /// `(table-name, model)` pairs in the order rows appear in results.csv.
    pub fn rows<'a>(&'a self) -> Vec<(&'static str, VolumeModel<'a>)> {
        vec![
            ("teacher", VolumeModel::ScanEncoder(&self.teacher)),
            ("student", VolumeModel::FieldEncoder(&self.student)),
            ("rt", VolumeModel::MultiView(&self.rt)),
            ("ensemble", VolumeModel::Ensemble(&self.ensemble.model)),
            ("rt_distilled_feature", VolumeModel::MultiView(&self.rt_distilled_feature)),
            ("rt_distilled_label", VolumeModel::MultiView(&self.rt_distilled_label)),
        ]
    }
}

/// Execute every stage under `out_dir` and write `manifest.json`.
///
/// Stage seeds derive from the global seed and the stage name, so stages
/// are reproducible in isolation. Fails fast on the first stage error;
/// outputs written so far stay on disk. Relative paths inside the config
/// resolve against the working directory; call
/// [`PipelineConfig::resolve_paths`] first when they should resolve against
/// the config file instead.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<RunManifest, PipelineError> {
    config.validate(Path::new("."), &[])?;
    fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    let hash = config.content_hash();
    let seed = config.seed;

    let config_path = out_dir.join("config.json");
    formats::write_json_report(&config_path, config)
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut manifest = RunManifest {
        format_version: FORMAT_VERSION.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        config_hash: hash.clone(),
        seed_derivation: "stage seed = splitmix64 hash of (global seed, stage name)".to_string(),
        smoke_runtime_budget_s: 60,
        stages: Vec::new(),
    };
    let mut timer = StageTimer { manifest: &mut manifest, out_dir };

    // --- synth: scene, cameras, detections -------------------------------
    let rig = load_rig(config, Path::new(".")).map_err(stage_err("synth"))?;
    timer.run("synth", || {
        let scene_cfg = config.scene.to_scene_config(derive(seed, "synth"))?;
        let scene = generate_scene(&scene_cfg, &rig).map_err(stage_err("synth"))?;
        let cameras_path = out_dir.join("cameras.json");
        let scene_path = out_dir.join("scene.json");
        let det_path = out_dir.join("detections.json");
        formats::write_cameras(&cameras_path, &scene.cameras, &hash).map_err(stage_err("synth"))?;
        formats::write_scene(&scene_path, &scene, &hash).map_err(stage_err("synth"))?;
        formats::write_detections(&det_path, &scene.detection_boxes(), &hash)
            .map_err(stage_err("synth"))?;
        Ok(((), vec![cameras_path, scene_path, det_path]))
    })?;

    // --- pair: cluster detections across views ---------------------------
    let clusters = timer.run("pair", || {
        // Read back through the files so the run exercises the same codecs
        // external callers use.
        let cameras = formats::read_cameras(&out_dir.join("cameras.json")).map_err(stage_err("pair"))?;
        let boxes = formats::read_detections(&out_dir.join("detections.json"))
            .map_err(stage_err("pair"))?;
        let params = config.pairing.to_params();
        let graph = build_graph(&boxes, &cameras, &params, derive(seed, "pair"))
            .map_err(stage_err("pair"))?;
        let consensus = consensus_clusters(
            &graph,
            config.pairing.runs,
            config.pairing.agreement,
            derive(seed, "pair"),
        );
        let filtered = filter_small_clusters(&consensus, config.pairing.min_views);
        let path = out_dir.join("clusters.json");
        formats::write_clusters(&path, &filtered, &hash).map_err(stage_err("pair"))?;
        Ok((filtered, vec![path]))
    })?;

    // --- score: precision/recall against ground truth --------------------
    timer.run("score", || {
        let scene_back = formats::read_scene(&out_dir.join("scene.json")).map_err(stage_err("score"))?;
        let summary = score_scene(&scene_back, &clusters);
        let path = out_dir.join("pairing_score.json");
        formats::write_json_report(&path, &summary).map_err(stage_err("score"))?;
        Ok(((), vec![path]))
    })?;

    // --- featurize: build the training dataset ---------------------------
    let (dataset, unlabeled) = timer.run("featurize", || {
        let dataset = make_synthetic_dataset(
            config.dataset.n_spikes,
            config.dataset.views_per_spike,
            derive(seed, "featurize"),
        )
        .map_err(stage_err("featurize"))?;
        let unlabeled = make_unlabeled_spikes(&dataset, config.dataset.n_unlabeled, derive(seed, "unlabeled"))
            .map_err(stage_err("featurize"))?;
        let summary = serde_json::json!({
            "format_version": FORMAT_VERSION,
            "config_hash": hash,
            "content_hash": dataset.content_hash(),
            "n_spikes": dataset.spikes.len(),
            "n_unlabeled": unlabeled.len(),
            "views_per_spike": dataset.views_per_spike,
            "split_sizes": {
                "train": dataset.split.train.len(),
                "val": dataset.split.val.len(),
                "test": dataset.split.test.len(),
            },
        });
        let summary_path = out_dir.join("dataset_summary.json");
        formats::write_json_report(&summary_path, &summary).map_err(stage_err("featurize"))?;
        let volumes_path = out_dir.join("volumes.csv");
        let split_of = |i: usize| {
            if dataset.split.train.contains(&i) {
                "train"
            } else if dataset.split.val.contains(&i) {
                "val"
            } else {
                "test"
            }
        };
        let rows: Vec<Vec<String>> = dataset
            .spikes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                vec![
                    s.id.to_string(),
                    s.family.to_string(),
                    split_of(i).to_string(),
                    s.volume.to_string(),
                ]
            })
            .collect();
        formats::write_table_csv(&volumes_path, &["spike_id", "family", "split", "volume_mm3"], &rows, &hash)
            .map_err(stage_err("featurize"))?;
        Ok(((dataset, unlabeled), vec![summary_path, volumes_path]))
    })?;

    // --- teacher ----------------------------------------------------------
    let teacher = timer.run("teacher", || {
        let trained = train_teacher(&dataset, &config.teacher.to_train(derive(seed, "teacher")))
            .map_err(stage_err("teacher"))?;
        let ckpt_path = out_dir.join("teacher.ckpt");
        let loss_path = out_dir.join("loss_teacher.csv");
        formats::write_checkpoint(
            &ckpt_path,
            &encoder_to_checkpoint(&trained, CheckpointKind::ScanEncoder, &hash),
        )
        .map_err(stage_err("teacher"))?;
        write_loss_curve(&loss_path, &trained.loss_curve, &hash).map_err(stage_err("teacher"))?;
        Ok((trained, vec![ckpt_path, loss_path]))
    })?;

    // --- student (distilled field encoder) --------------------------------
    let student = timer.run("student", || {
        let trained = train_student(
            &dataset,
            &teacher,
            config.student.lambda,
            config.student.alpha,
            &config.student.optim.to_train(derive(seed, "student")),
        )
        .map_err(stage_err("student"))?;
        let ckpt_path = out_dir.join("student.ckpt");
        let loss_path = out_dir.join("loss_student.csv");
        formats::write_checkpoint(
            &ckpt_path,
            &encoder_to_checkpoint(&trained, CheckpointKind::FieldEncoder, &hash),
        )
        .map_err(stage_err("student"))?;
        write_loss_curve(&loss_path, &trained.loss_curve, &hash).map_err(stage_err("student"))?;
        Ok((trained, vec![ckpt_path, loss_path]))
    })?;

    // --- multi-view regressor ---------------------------------------------
    let rt = timer.run("multi-view", || {
        let trained = train_regulated(
            &dataset,
            config.multi_view.per_view_weight,
            &config.multi_view.optim.to_train(derive(seed, "multi-view")),
        )
        .map_err(stage_err("multi-view"))?;
        let ckpt_path = out_dir.join("rt.ckpt");
        let loss_path = out_dir.join("loss_rt.csv");
        formats::write_checkpoint(&ckpt_path, &rt_to_checkpoint(&trained, &hash))
            .map_err(stage_err("multi-view"))?;
        write_loss_curve(&loss_path, &trained.loss_curve, &hash).map_err(stage_err("multi-view"))?;
        Ok((trained, vec![ckpt_path, loss_path]))
    })?;

    // --- ensemble -----------------------------------------------------------
    let ensemble = timer.run("ensemble", || {
        let trained = train_ensemble(
            &dataset,
            &rt.model,
            &student.model,
            &config.ensemble.optim.to_train(derive(seed, "ensemble")),
        )
        .map_err(stage_err("ensemble"))?;
        let ckpt_path = out_dir.join("ensemble.ckpt");
        let loss_path = out_dir.join("loss_ensemble.csv");
        formats::write_checkpoint(&ckpt_path, &ensemble_to_checkpoint(&trained.model, &hash))
            .map_err(stage_err("ensemble"))?;
        write_loss_curve(&loss_path, &trained.loss_curve, &hash).map_err(stage_err("ensemble"))?;
        Ok((trained, vec![ckpt_path, loss_path]))
    })?;

    // --- distill: feature mode ---------------------------------------------
    let rt_feature = timer.run("distill-feature", || {
        let (trained, _projection) = distill_features(
            &dataset,
            &ensemble.model,
            config.distill.beta,
            config.distill.gamma,
            &config.multi_view.optim.to_train(derive(seed, "distill-feature")),
        )
        .map_err(stage_err("distill-feature"))?;
        let ckpt_path = out_dir.join("rt_distilled_feature.ckpt");
        let loss_path = out_dir.join("loss_rt_distilled_feature.csv");
        formats::write_checkpoint(&ckpt_path, &rt_to_checkpoint(&trained, &hash))
            .map_err(stage_err("distill-feature"))?;
        write_loss_curve(&loss_path, &trained.loss_curve, &hash)
            .map_err(stage_err("distill-feature"))?;
        Ok((trained, vec![ckpt_path, loss_path]))
    })?;

    // --- distill: pseudo-label mode -----------------------------------------
    let rt_label = timer.run("distill-label", || {
        let outcome = distill_pseudolabels(
            &dataset,
            &ensemble,
            &unlabeled,
            &config.multi_view.optim.to_train(derive(seed, "distill-label")),
            &config.ensemble.optim.to_train(derive(seed, "distill-label")),
        )
        .map_err(stage_err("distill-label"))?;
        let ckpt_path = out_dir.join("rt_distilled_label.ckpt");
        let loss_path = out_dir.join("loss_rt_distilled_label.csv");
        let note_path = out_dir.join("distill_label.json");
        formats::write_checkpoint(&ckpt_path, &rt_to_checkpoint(&outcome.rt, &hash))
            .map_err(stage_err("distill-label"))?;
        write_loss_curve(&loss_path, &outcome.rt.loss_curve, &hash)
            .map_err(stage_err("distill-label"))?;
        let note = serde_json::json!({
            "format_version": FORMAT_VERSION,
            "config_hash": hash,
            "refreshed": outcome.refreshed,
            "val_mae_mm3": outcome.val_mae,
        });
        formats::write_json_report(&note_path, &note).map_err(stage_err("distill-label"))?;
        Ok((outcome.rt, vec![ckpt_path, loss_path, note_path]))
    })?;

    // --- eval ----------------------------------------------------------------
    let stack = TrainedStack {
        teacher,
        student,
        rt,
        ensemble,
        rt_distilled_feature: rt_feature,
        rt_distilled_label: rt_label,
    };
    timer.run("eval", || {
        let indices = config.eval_indices(&dataset);
        let mut files = Vec::new();
        let mut table_rows = Vec::new();
        let mut metrics = Vec::new();
        for (name, model) in stack.rows() {
            let (report, rows) = evaluate(&model, &dataset, indices).map_err(stage_err("eval"))?;
            let per_spike = out_dir.join(format!("eval_{name}.csv"));
            write_eval_rows(&per_spike, &rows, &hash).map_err(stage_err("eval"))?;
            files.push(per_spike);
            table_rows.push(vec![
                name.to_string(),
                report.mae.to_string(),
                report.pearson_r.to_string(),
                report.mape.to_string(),
                report.n.to_string(),
            ]);
            metrics.push(ModelMetrics { model: name.to_string(), report });
        }
        let results_path = out_dir.join("results.csv");
        formats::write_table_csv(&results_path, &["model", "mae_mm3", "pearson_r", "mape_pct", "n"], &table_rows, &hash)
            .map_err(stage_err("eval"))?;
        files.push(results_path);
        let metrics_path = out_dir.join("metrics.json");
        let wrapped = serde_json::json!({
            "format_version": FORMAT_VERSION,
            "config_hash": hash,
            "split": config.eval.split,
            "models": metrics,
        });
        formats::write_json_report(&metrics_path, &wrapped).map_err(stage_err("eval"))?;
        files.push(metrics_path);
        Ok(((), files))
    })?;

    let manifest_path = out_dir.join("manifest.json");
    formats::write_json_report(&manifest_path, &manifest)
        .map_err(|e| PipelineError::Stage { stage: "manifest", message: e.to_string() })?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Benchmarks
// ---------------------------------------------------------------------------

/// Latency summary over individual per-spike measurements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub median_us: f64,
    pub p95_us: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn summarize(mut samples: Vec<f64>) -> LatencyStats {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite latencies"));
    LatencyStats {
        samples: samples.len(),
        median_us: percentile(&samples, 0.5),
        p95_us: percentile(&samples, 0.95),
    }
}

/// Image-path vs cloud-path inference latency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceBench {
    /// Multi-view regressor on the per-view features.
    pub image_path: LatencyStats,
    /// Histogram featurization (O(n^2)) plus encoder prediction.
    pub cloud_path: LatencyStats,
    /// cloud_path median / image_path median.
    pub median_ratio: f64,
}

/// Time per-spike inference along both routes. Each repetition measures
/// every spike once; stats summarize the individual measurements, so
/// `repetitions = 1` with one spike reports that single measurement.
pub fn benchmark_inference(
    rt: &TrainedRt,
    encoder: &TrainedEncoder,
    records: &[SpikeRecord],
    repetitions: usize,
) -> Result<InferenceBench, PipelineError> {
    if records.is_empty() || repetitions == 0 {
        return Err(PipelineError::Config(
            "benchmark needs at least one spike and one repetition".into(),
        ));
    }
    let bins = encoder.model.bins;
    let mut image_samples = Vec::with_capacity(records.len() * repetitions);
    let mut cloud_samples = Vec::with_capacity(records.len() * repetitions);
    for _ in 0..repetitions {
        for record in records {
            let started = Instant::now();
            let out = rt.model.forward(&record.views).map_err(stage_err("bench"))?;
            std::hint::black_box(out.global.mu());
            image_samples.push(started.elapsed().as_secs_f64() * 1e6);

            let started = Instant::now();
            let feats = distance_histograms(&record.scan_cloud, bins, HISTOGRAM_RANGE_MM)
                .map_err(stage_err("bench"))?;
            let pred = encoder.model.predict(&feats.per_point).map_err(stage_err("bench"))?;
            std::hint::black_box(pred);
            cloud_samples.push(started.elapsed().as_secs_f64() * 1e6);
        }
    }
    let image_path = summarize(image_samples);
    let cloud_path = summarize(cloud_samples);
    let median_ratio = cloud_path.median_us / image_path.median_us;
    Ok(InferenceBench { image_path, cloud_path, median_ratio })
}

/// Time the histogram featurization at two cloud sizes and return
/// `t(n_large) / t(n_small)`, each timed as the best of `reps` passes.
/// Doubling the point count should land the ratio near 4.
pub fn histogram_scaling_ratio(
    n_small: usize,
    n_large: usize,
    reps: usize,
    seed: u64,
) -> Result<f64, PipelineError> {
    if n_small < 2 || n_large < 2 || reps == 0 {
        return Err(PipelineError::Config("scaling benchmark needs two sizes and >= 1 rep".into()));
    }
    let make_cloud = |n: usize, s: u64| {
        let mut rng = crate::rng::rng_from(derive(s, "bench-cloud"));
        use rand::Rng;
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-30.0..30.0),
                        rng.random_range(-30.0..30.0),
                        rng.random_range(-30.0..30.0),
                    )
                })
                .collect(),
            CloudSource::Synthetic,
        )
    };
    let time_best = |cloud: &PointCloud| -> Result<f64, PipelineError> {
        let mut best = f64::INFINITY;
        for _ in 0..reps {
            let started = Instant::now();
            let h = distance_histograms(cloud, 30, HISTOGRAM_RANGE_MM).map_err(stage_err("bench"))?;
            std::hint::black_box(h.per_point.sum());
            best = best.min(started.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    let small = make_cloud(n_small, seed);
    let large = make_cloud(n_large, seed.wrapping_add(1));
    let t_small = time_best(&small)?;
    let t_large = time_best(&large)?;
    Ok(t_large / t_small)
}

// ---------------------------------------------------------------------------
// Multi-seed trend protocol
// ---------------------------------------------------------------------------

/// Validation-split outcomes of the full training chain at one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendRow {
    pub seed: u64,
    pub teacher_mae: f64,
    /// Field encoder trained with latent alignment to the teacher.
    pub student_kd_mae: f64,
    /// Field encoder trained without distillation.
    pub student_plain_mae: f64,
    pub rt_plain_mae: f64,
    /// Multi-view regressor without per-view supervision.
    pub rt_unregulated_mae: f64,
    pub ensemble_mae: f64,
    pub rt_feature_mae: f64,
    pub rt_label_mae: f64,
    /// Pearson correlation between absolute error and true volume.
    pub rt_plain_bias: f64,
    pub rt_feature_bias: f64,
    pub rt_label_bias: f64,
    /// Mean latent alignment loss against the teacher on validation spikes.
    pub student_kd_align: f64,
    pub student_plain_align: f64,
}

fn val_mae(model: &VolumeModel<'_>, dataset: &Dataset) -> Result<f64, LearnError> {
    Ok(evaluate(model, dataset, &dataset.split.val)?.0.mae)
}

fn error_volume_bias(model: &VolumeModel<'_>, dataset: &Dataset) -> Result<f64, LearnError> {
    let (_, rows) = evaluate(model, dataset, &dataset.split.val)?;
    let abs_err: Vec<f64> = rows.iter().map(|(_, t, p)| (t - p).abs()).collect();
    let volumes: Vec<f64> = rows.iter().map(|(_, t, _)| *t).collect();
    Ok(pearson_correlation(&abs_err, &volumes)?)
}

fn mean_val_align(
    student: &TrainedEncoder,
    teacher: &TrainedEncoder,
    dataset: &Dataset,
    alpha: f64,
) -> Result<f64, LearnError> {
    let mut total = 0.0;
    for &i in &dataset.split.val {
        let record = &dataset.spikes[i];
        let s = student.model.latent(&record.field_features)?;
        let t = teacher.model.latent(&record.scan_features)?;
        total += feature_align_loss(s.as_slice().unwrap(), t.as_slice().unwrap(), alpha)?;
    }
    Ok(total / dataset.split.val.len() as f64)
}

/// Train the full model chain at each seed and collect the validation
/// outcomes the directional trends are judged on. The dataset stays fixed;
/// only initialization and batch shuffling vary with the seed.
pub fn distillation_trend(
    dataset: &Dataset,
    unlabeled: &[SpikeRecord],
    seeds: &[u64],
) -> Result<Vec<TrendRow>, LearnError> {
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let enc_cfg = TrainConfig::encoder_default(seed);
        let rt_cfg = TrainConfig::regressor_default(seed);
        let ens_cfg = TrainConfig::ensemble_default(seed);

        let teacher = train_teacher(dataset, &enc_cfg)?;
        let student_kd =
            train_student(dataset, &teacher, DEFAULT_LAMBDA, DEFAULT_ALPHA, &enc_cfg)?;
        let student_plain = train_field_encoder(dataset, &enc_cfg)?;
        let rt_plain = train_regulated(dataset, 1.0, &rt_cfg)?;
        let rt_unregulated = train_regulated(dataset, 0.0, &rt_cfg)?;
        let ensemble = train_ensemble(dataset, &rt_plain.model, &student_kd.model, &ens_cfg)?;
        let (rt_feature, _) =
            distill_features(dataset, &ensemble.model, DEFAULT_BETA, DEFAULT_GAMMA, &rt_cfg)?;
        let rt_label = distill_pseudolabels(dataset, &ensemble, unlabeled, &rt_cfg, &ens_cfg)?.rt;

        rows.push(TrendRow {
            seed,
            teacher_mae: val_mae(&VolumeModel::ScanEncoder(&teacher), dataset)?,
            student_kd_mae: val_mae(&VolumeModel::FieldEncoder(&student_kd), dataset)?,
            student_plain_mae: val_mae(&VolumeModel::FieldEncoder(&student_plain), dataset)?,
            rt_plain_mae: val_mae(&VolumeModel::MultiView(&rt_plain), dataset)?,
            rt_unregulated_mae: val_mae(&VolumeModel::MultiView(&rt_unregulated), dataset)?,
            ensemble_mae: val_mae(&VolumeModel::Ensemble(&ensemble.model), dataset)?,
            rt_feature_mae: val_mae(&VolumeModel::MultiView(&rt_feature), dataset)?,
            rt_label_mae: val_mae(&VolumeModel::MultiView(&rt_label), dataset)?,
            rt_plain_bias: error_volume_bias(&VolumeModel::MultiView(&rt_plain), dataset)?,
            rt_feature_bias: error_volume_bias(&VolumeModel::MultiView(&rt_feature), dataset)?,
            rt_label_bias: error_volume_bias(&VolumeModel::MultiView(&rt_label), dataset)?,
            student_kd_align: mean_val_align(&student_kd, &teacher, dataset, DEFAULT_ALPHA)?,
            student_plain_align: mean_val_align(&student_plain, &teacher, dataset, DEFAULT_ALPHA)?,
        });
    }
    Ok(rows)
}

/// Count the seeds where `pick` holds.
pub fn seeds_where(rows: &[TrendRow], pick: impl Fn(&TrendRow) -> bool) -> usize {
    rows.iter().filter(|r| pick(r)).count()
}
