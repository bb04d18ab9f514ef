//! Command-line interface over the spike-volume pipeline.
//!
//! Subcommands map one-to-one onto pipeline stages, plus `run` for the full
//! chain. Every stage derives its working seed from the global `--seed`
//! (or the config's seed) and the stage name, so a standalone stage
//! reproduces the matching stage of a full run bit for bit.
//!
//! Exit codes: 0 on success, 2 on configuration/validation errors, 3 on
//! stage failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spikevol::cloud::{distance_histograms, subsample, voxel_downsample};
use spikevol::formats::{
    self, encoder_from_checkpoint, encoder_to_checkpoint, ensemble_from_checkpoint,
    ensemble_to_checkpoint, rt_from_checkpoint, rt_to_checkpoint, Checkpoint, CheckpointKind,
};
use spikevol::learn::dataset::{make_synthetic_dataset, make_unlabeled_spikes, Dataset};
use spikevol::learn::train::{
    distill_features, distill_pseudolabels, evaluate, train_ensemble, train_regulated,
    train_student, train_teacher, TrainedEnsemble, VolumeModel,
};
use spikevol::losses::compute_metrics;
use spikevol::pairing::{build_graph, consensus_clusters, filter_small_clusters};
use spikevol::pipeline::{
    benchmark_inference, histogram_scaling_ratio, load_rig, run_pipeline, score_scene,
    PipelineConfig, PipelineError,
};
use spikevol::rng::derive;
use spikevol::scene::generate_scene;

#[derive(Parser)]
#[command(
    name = "spikevol",
    version,
    about = "Multi-view spike pairing, rigid-invariant featurization, and volume-model distillation"
)]
struct Cli {
    /// Global seed; overrides the config's seed. Stage seeds derive from
    /// this and the stage name.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for outputs and default checkpoint locations.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Pipeline configuration JSON; built-in defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistillMode {
    /// Align the regressor's token to the ensemble's fused latent.
    Feature,
    /// Train on ensemble pseudo-labels over labeled plus unlabeled spikes.
    Label,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: ground truth, cameras, and detections.
    Synth {
        /// Number of spikes in the scene.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// "upright" (field-like tilt) or "random" orientation.
        #[arg(long, default_value = "upright")]
        pose: String,
        /// Scene JSON path; cameras.json and detections.json land beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster multi-view detections into per-spike groups.
    Pair {
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Pairwise agreement threshold; config value when omitted.
        #[arg(long)]
        tau: Option<f64>,
        /// Epipolar samples per box pair; config value when omitted.
        #[arg(long)]
        k: Option<usize>,
        /// Label-propagation restarts.
        #[arg(long)]
        runs: Option<usize>,
        /// Restarts that must agree to keep a co-assignment.
        #[arg(long)]
        agree: Option<usize>,
        /// Drop clusters smaller than this.
        #[arg(long)]
        min_views: Option<usize>,
        /// Clusters JSON output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted clusters against a scene's ground truth.
    Score {
        /// Predicted clusters JSON.
        #[arg(long)]
        pred: PathBuf,
        /// Scene JSON with ground-truth labels.
        #[arg(long)]
        scene: PathBuf,
        /// Report the score with border-clipped detections excluded.
        #[arg(long)]
        exclude_border: bool,
        /// Full score summary JSON; stdout shows the headline score.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a point cloud to per-point distance histograms (CSV).
    Featurize {
        /// Input cloud: ASCII `x y z` lines, or binary for `.bin`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Histogram bin count.
        #[arg(long, default_value_t = 30)]
        bins: usize,
        /// Distance range covered by the bins, mm.
        #[arg(long, default_value_t = 60.0)]
        width: f64,
        /// Voxel size for downsampling, mm; 0 skips it.
        #[arg(long, default_value_t = 2.0)]
        voxel: f64,
        /// Random subsample cap; 0 skips it.
        #[arg(long, default_value_t = 1000)]
        subsample: usize,
        /// Features CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the scan-cloud encoder (the distillation teacher).
    TrainTeacher {
        /// Checkpoint output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the field-cloud student against a teacher checkpoint.
    TrainStudent {
        /// Checkpoint output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the multi-view image regressor.
    TrainRt {
        /// Checkpoint output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fusion ensemble from parent checkpoints.
    TrainEnsemble {
        /// Checkpoint output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill the ensemble into a fresh multi-view regressor.
    Distill {
        #[arg(long, value_enum)]
        mode: DistillMode,
        /// Checkpoint output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Model checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// "train", "val", or "test".
        #[arg(long, default_value = "test")]
        split: String,
        /// Metric JSON output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional per-spike prediction CSV.
        #[arg(long)]
        per_spike: Option<PathBuf>,
    },
    /// Compare prediction and truth CSVs (last column of each).
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Per-spike latency: image path vs cloud path, plus featurization scaling.
    Bench {
        /// Multi-view regressor checkpoint; defaults to out-dir/rt.ckpt.
        #[arg(long)]
        rt: Option<PathBuf>,
        /// Encoder checkpoint for the cloud path; defaults to out-dir/teacher.ckpt.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Measurement repetitions over the benchmark spikes.
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Benchmark JSON output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline into the output directory.
    Run,
}

/// CLI failure with its exit code.
enum CliError {
    /// Invalid configuration or missing referenced inputs (exit 2).
    Config(String),
    /// A stage failed while running (exit 3).
    Stage(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(msg) => CliError::Config(msg),
            other => CliError::Stage(other.to_string()),
        }
    }
}

macro_rules! stage_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Stage(e.to_string())
            }
        }
    )*};
}

stage_error_from!(
    spikevol::formats::FormatError,
    spikevol::learn::LearnError,
    spikevol::losses::LossError,
    spikevol::scene::SceneError,
    spikevol::pairing::PairingError,
    spikevol::cloud::CloudError
);

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Ignore the error when a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Stage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

/// Load the effective configuration: file or defaults, then the seed
/// override, with config-relative paths resolved against the config file's
/// directory so later stages can use them from any working directory.
fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let base = cli
        .config
        .as_ref()
        .and_then(|p| p.parent())
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    config.resolve_paths(&base);
    Ok(config)
}

fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

/// Resolve a parent-checkpoint path: the explicit config entry (already
/// resolved against the config file's directory) or the conventional name
/// inside the output directory.
fn parent_checkpoint(
    configured: &Option<PathBuf>,
    out_dir: &Path,
    default_name: &str,
) -> PathBuf {
    match configured {
        Some(p) => p.clone(),
        None => out_dir.join(default_name),
    }
}

fn ensure_parent_dir(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Stage(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    Ok(())
}

fn print_or_write<T: serde::Serialize>(value: &T, out: &Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            ensure_parent_dir(path)?;
            formats::write_json_report(path, value)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        None => {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| CliError::Stage(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

/// Build the training dataset the configuration describes; shared by every
/// training and evaluation subcommand.
fn build_dataset(config: &PipelineConfig) -> Result<Dataset, CliError> {
    Ok(make_synthetic_dataset(
        config.dataset.n_spikes,
        config.dataset.views_per_spike,
        derive(config.seed, "featurize"),
    )?)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let out_dir = &cli.out_dir;
    let hash = config.content_hash();

    match &cli.command {
        Command::Synth { n, pose, out } => {
            config.validate(Path::new("."), &[])?;
            let mut scene_settings = config.scene.clone();
            scene_settings.n_spikes = *n;
            scene_settings.pose = pose.clone();
            let scene_cfg = scene_settings.to_scene_config(derive(config.seed, "synth"))?;
            let rig = load_rig(&config, Path::new("."))?;
            let scene = generate_scene(&scene_cfg, &rig)?;
            ensure_parent_dir(out)?;
            let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
            let cameras_path = dir.join("cameras.json");
            let detections_path = dir.join("detections.json");
            formats::write_scene(out, &scene, &hash)?;
            formats::write_cameras(&cameras_path, &scene.cameras, &hash)?;
            formats::write_detections(&detections_path, &scene.detection_boxes(), &hash)?;
            println!(
                "scene: {} spikes, {} detections over {} cameras",
                scene.spikes.len(),
                scene.detections.len(),
                scene.cameras.len()
            );
            println!("wrote {}", out.display());
            println!("wrote {}", cameras_path.display());
            println!("wrote {}", detections_path.display());
            Ok(())
        }

        Command::Pair { cameras, detections, tau, k, runs, agree, min_views, out } => {
            config.validate(Path::new("."), &[])?;
            require_exists(cameras, "camera file")?;
            require_exists(detections, "detections file")?;
            let mut params = config.pairing.to_params();
            if let Some(t) = tau {
                params.tau = *t;
            }
            if let Some(k) = k {
                params.samples_per_box = *k;
            }
            let runs = runs.unwrap_or(config.pairing.runs);
            let agree = agree.unwrap_or(config.pairing.agreement);
            let min_views = min_views.unwrap_or(config.pairing.min_views);
            if runs == 0 || agree == 0 || agree > runs {
                return Err(CliError::Config(format!(
                    "need 0 < agree <= runs, got agree {agree} of {runs} runs"
                )));
            }
            let rig = formats::read_cameras(cameras)?;
            let boxes = formats::read_detections(detections)?;
            let seed = derive(config.seed, "pair");
            let graph = build_graph(&boxes, &rig, &params, seed)?;
            let consensus = consensus_clusters(&graph, runs, agree, seed);
            let filtered = filter_small_clusters(&consensus, min_views);
            ensure_parent_dir(out)?;
            formats::write_clusters(out, &filtered, &hash)?;
            println!(
                "paired {} detections into {} clusters (>= {} views)",
                boxes.len(),
                filtered.clusters.len(),
                min_views
            );
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::Score { pred, scene, exclude_border, out } => {
            require_exists(pred, "clusters file")?;
            require_exists(scene, "scene file")?;
            let clusters = formats::read_clusters(pred)?;
            let scene = formats::read_scene(scene)?;
            let summary = score_scene(&scene, &clusters);
            let headline =
                if *exclude_border { &summary.exclude_border } else { &summary.include_all };
            println!(
                "precision {:.4} recall {:.4} (true {} false {} missed {}{})",
                headline.precision,
                headline.recall,
                headline.true_pairs,
                headline.false_pairs,
                headline.missed_pairs,
                if *exclude_border { ", border excluded" } else { "" }
            );
            if out.is_some() {
                print_or_write(&summary, out)?;
            }
            Ok(())
        }

        Command::Featurize { input, bins, width, voxel, subsample: cap, out } => {
            require_exists(input, "cloud file")?;
            let mut cloud = formats::read_cloud(input)?;
            if *voxel > 0.0 {
                cloud = voxel_downsample(&cloud, *voxel)?;
            }
            if *cap > 0 && cloud.len() > *cap {
                cloud = subsample(&cloud, *cap, derive(config.seed, "featurize"))?;
            }
            let features = distance_histograms(&cloud, *bins, *width)?;
            ensure_parent_dir(out)?;
            formats::write_histogram_csv(out, &features, &hash)?;
            println!(
                "featurized {} points into {} histograms of {} bins (+overflow)",
                cloud.len(),
                features.per_point.nrows(),
                bins
            );
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::TrainTeacher { out } => {
            config.validate(Path::new("."), &[])?;
            let dataset = build_dataset(&config)?;
            let trained =
                train_teacher(&dataset, &config.teacher.to_train(derive(config.seed, "teacher")))?;
            ensure_parent_dir(out)?;
            formats::write_checkpoint(
                out,
                &encoder_to_checkpoint(&trained, CheckpointKind::ScanEncoder, &hash),
            )?;
            println!(
                "teacher trained: final loss {:.6}, {} epochs",
                trained.loss_curve.last().copied().unwrap_or(f64::NAN),
                trained.loss_curve.len()
            );
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::TrainStudent { out } => {
            config.validate(Path::new("."), &[])?;
            let teacher_path =
                parent_checkpoint(&config.student.teacher_checkpoint, out_dir, "teacher.ckpt");
            require_exists(&teacher_path, "teacher checkpoint")?;
            let teacher = encoder_from_checkpoint(&formats::read_checkpoint(&teacher_path)?)?;
            let dataset = build_dataset(&config)?;
            let trained = train_student(
                &dataset,
                &teacher,
                config.student.lambda,
                config.student.alpha,
                &config.student.optim.to_train(derive(config.seed, "student")),
            )?;
            ensure_parent_dir(out)?;
            formats::write_checkpoint(
                out,
                &encoder_to_checkpoint(&trained, CheckpointKind::FieldEncoder, &hash),
            )?;
            println!(
                "student trained against {}: final loss {:.6}",
                teacher_path.display(),
                trained.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::TrainRt { out } => {
            config.validate(Path::new("."), &[])?;
            let dataset = build_dataset(&config)?;
            let trained = train_regulated(
                &dataset,
                config.multi_view.per_view_weight,
                &config.multi_view.optim.to_train(derive(config.seed, "multi-view")),
            )?;
            ensure_parent_dir(out)?;
            formats::write_checkpoint(out, &rt_to_checkpoint(&trained, &hash))?;
            println!(
                "multi-view regressor trained: final loss {:.6}",
                trained.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::TrainEnsemble { out } => {
            config.validate(Path::new("."), &[])?;
            let rt_path =
                parent_checkpoint(&config.ensemble.rt_checkpoint, out_dir, "rt.ckpt");
            let student_path =
                parent_checkpoint(&config.ensemble.student_checkpoint, out_dir, "student.ckpt");
            require_exists(&rt_path, "multi-view checkpoint")?;
            require_exists(&student_path, "student checkpoint")?;
            let rt = rt_from_checkpoint(&formats::read_checkpoint(&rt_path)?)?;
            let student = encoder_from_checkpoint(&formats::read_checkpoint(&student_path)?)?;
            let dataset = build_dataset(&config)?;
            let trained = train_ensemble(
                &dataset,
                &rt.model,
                &student.model,
                &config.ensemble.optim.to_train(derive(config.seed, "ensemble")),
            )?;
            ensure_parent_dir(out)?;
            formats::write_checkpoint(out, &ensemble_to_checkpoint(&trained.model, &hash))?;
            println!(
                "ensemble trained from {} and {}",
                rt_path.display(),
                student_path.display()
            );
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::Distill { mode, out } => {
            config.validate(Path::new("."), &[])?;
            let ensemble_path =
                parent_checkpoint(&config.distill.ensemble_checkpoint, out_dir, "ensemble.ckpt");
            require_exists(&ensemble_path, "ensemble checkpoint")?;
            let ensemble_model = ensemble_from_checkpoint(&formats::read_checkpoint(&ensemble_path)?)?;
            let dataset = build_dataset(&config)?;
            let trained = match mode {
                DistillMode::Feature => {
                    let (trained, _projection) = distill_features(
                        &dataset,
                        &ensemble_model,
                        config.distill.beta,
                        config.distill.gamma,
                        &config.multi_view.optim.to_train(derive(config.seed, "distill-feature")),
                    )?;
                    println!(
                        "feature-distilled regressor: final loss {:.6}",
                        trained.loss_curve.last().copied().unwrap_or(f64::NAN)
                    );
                    trained
                }
                DistillMode::Label => {
                    let unlabeled = make_unlabeled_spikes(
                        &dataset,
                        config.dataset.n_unlabeled,
                        derive(config.seed, "unlabeled"),
                    )?;
                    let ensemble = TrainedEnsemble { model: ensemble_model, loss_curve: Vec::new() };
                    let outcome = distill_pseudolabels(
                        &dataset,
                        &ensemble,
                        &unlabeled,
                        &config.multi_view.optim.to_train(derive(config.seed, "distill-label")),
                        &config.ensemble.optim.to_train(derive(config.seed, "distill-label")),
                    )?;
                    println!(
                        "label-distilled regressor: val MAE {:.2} mm^3, refresh {}",
                        outcome.val_mae,
                        if outcome.refreshed { "ran" } else { "skipped" }
                    );
                    outcome.rt
                }
            };
            ensure_parent_dir(out)?;
            formats::write_checkpoint(out, &rt_to_checkpoint(&trained, &hash))?;
            println!("wrote {}", out.display());
            Ok(())
        }

        Command::Eval { model, split, out, per_spike } => {
            config.validate(Path::new("."), &[])?;
            require_exists(model, "model checkpoint")?;
            let ckpt = formats::read_checkpoint(model)?;
            let dataset = build_dataset(&config)?;
            let indices: &[usize] = match split.as_str() {
                "train" => &dataset.split.train,
                "val" => &dataset.split.val,
                "test" => &dataset.split.test,
                other => {
                    return Err(CliError::Config(format!(
                        "split must be train, val, or test, got {other:?}"
                    )));
                }
            };
            let (report, rows) = eval_checkpoint(&ckpt, &dataset, indices)?;
            let wrapped = serde_json::json!({
                "format_version": formats::FORMAT_VERSION,
                "config_hash": hash,
                "model_kind": ckpt.kind.name(),
                "split": split,
                "metrics": report,
            });
            print_or_write(&wrapped, out)?;
            if let Some(csv_path) = per_spike {
                ensure_parent_dir(csv_path)?;
                let table: Vec<Vec<String>> = rows
                    .iter()
                    .map(|(id, t, p)| vec![id.to_string(), t.to_string(), p.to_string()])
                    .collect();
                formats::write_table_csv(
                    csv_path,
                    &["spike_id", "truth_mm3", "predicted_mm3"],
                    &table,
                    &hash,
                )?;
                println!("wrote {}", csv_path.display());
            }
            Ok(())
        }

        Command::Metrics { pred, truth } => {
            require_exists(pred, "prediction file")?;
            require_exists(truth, "truth file")?;
            let predicted = formats::read_last_column(pred)?;
            let actual = formats::read_last_column(truth)?;
            let report = compute_metrics(&predicted, &actual)?;
            let text =
                serde_json::to_string_pretty(&report).map_err(|e| CliError::Stage(e.to_string()))?;
            println!("{text}");
            Ok(())
        }

        Command::Bench { rt, encoder, repetitions, out } => {
            config.validate(Path::new("."), &[])?;
            let rt_path = match rt {
                Some(p) => p.clone(),
                None => out_dir.join("rt.ckpt"),
            };
            let encoder_path = match encoder {
                Some(p) => p.clone(),
                None => out_dir.join("teacher.ckpt"),
            };
            require_exists(&rt_path, "multi-view checkpoint")?;
            require_exists(&encoder_path, "encoder checkpoint")?;
            let rt = rt_from_checkpoint(&formats::read_checkpoint(&rt_path)?)?;
            let enc = encoder_from_checkpoint(&formats::read_checkpoint(&encoder_path)?)?;
            let dataset = build_dataset(&config)?;
            let records: Vec<_> =
                dataset.split.test.iter().map(|&i| dataset.spikes[i].clone()).collect();
            let bench = benchmark_inference(&rt, &enc, &records, *repetitions)?;
            let scaling = histogram_scaling_ratio(1000, 2000, 3, config.seed)?;
            println!(
                "image path median {:.1} us (p95 {:.1}), cloud path median {:.1} us (p95 {:.1})",
                bench.image_path.median_us,
                bench.image_path.p95_us,
                bench.cloud_path.median_us,
                bench.cloud_path.p95_us
            );
            println!(
                "cloud/image median ratio {:.1}; featurization t(2000)/t(1000) = {:.2}",
                bench.median_ratio, scaling
            );
            let wrapped = serde_json::json!({
                "format_version": formats::FORMAT_VERSION,
                "config_hash": hash,
                "repetitions": repetitions,
                "bench": bench,
                "featurize_scaling_2000_over_1000": scaling,
            });
            if out.is_some() {
                print_or_write(&wrapped, out)?;
            }
            Ok(())
        }

        Command::Run => {
            let manifest = run_pipeline(&config, out_dir)?;
            for stage in &manifest.stages {
                println!(
                    "stage {:<16} {:>8} ms, {} output(s)",
                    stage.name,
                    stage.wall_ms,
                    stage.outputs.len()
                );
            }
            println!("run complete: {}", out_dir.join("manifest.json").display());
            Ok(())
        }
    }
}

/// Evaluate whichever model a checkpoint holds.
fn eval_checkpoint(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<(spikevol::losses::MetricReport, Vec<spikevol::learn::train::EvalRow>), CliError> {
    let result = match ckpt.kind {
        CheckpointKind::ScanEncoder => {
            let model = encoder_from_checkpoint(ckpt)?;
            evaluate(&VolumeModel::ScanEncoder(&model), dataset, indices)?
        }
        CheckpointKind::FieldEncoder => {
            let model = encoder_from_checkpoint(ckpt)?;
            evaluate(&VolumeModel::FieldEncoder(&model), dataset, indices)?
        }
        CheckpointKind::MultiView => {
            let model = rt_from_checkpoint(ckpt)?;
            evaluate(&VolumeModel::MultiView(&model), dataset, indices)?
        }
        CheckpointKind::Ensemble => {
            let model = ensemble_from_checkpoint(ckpt)?;
            evaluate(&VolumeModel::Ensemble(&model), dataset, indices)?
        }
    };
    Ok(result)
}
