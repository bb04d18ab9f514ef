//! Trainers for every model family, plus shared evaluation helpers.
//!
//! All trainers are deterministic given their [`TrainConfig`]: parameter
//! initialization and per-epoch shuffling each use dedicated RNG streams
//! derived from the config seed and a fixed label, and the list of training
//! indices is canonicalized (sorted) on entry, so the caller's index order
//! never affects the result. Setting `epochs = 0` returns the freshly
//! initialized model with no optimizer steps taken (the multi-view trainer
//! still fits its input normalization, which is data-derived, not learned).
//!
//! Ablation identities guaranteed bitwise (and covered by tests):
//! distillation weight `lambda = 0` makes the student trainer identical to
//! plain field training; `beta = 0` makes feature distillation identical to
//! plain multi-view training; an empty unlabeled set makes pseudo-label
//! distillation identical to plain multi-view training.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use super::dataset::{Dataset, SpikeRecord};
use super::encoder::HistogramEncoder;
use super::ensemble::EnsembleModel;
use super::mlp::{Activation, Adam};
use super::regulated::{RegulatedRegressor, RtGradSignal, TokenProjection, ViewNorm};
use super::{LearnError, TargetScaler, TrainConfig};
use crate::losses::{
    compute_metrics, feature_align_with_grad, regulated_loss_with_grad, MetricReport,
};
use crate::rng;

/// Default weight of the latent-alignment term in the student objective.
pub const DEFAULT_LAMBDA: f64 = 5.0;
/// Default weight of the norm-matching term inside latent alignment.
pub const DEFAULT_ALPHA: f64 = 0.2;
/// Default weight of the feature-distillation term in the multi-view
/// objective.
pub const DEFAULT_BETA: f64 = 0.2;
/// Default norm-matching weight inside the feature-distillation term.
pub const DEFAULT_GAMMA: f64 = 0.2;

/// A trained histogram encoder plus the target scaling it predicts under.
#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub model: HistogramEncoder,
    pub scaler: TargetScaler,
    pub loss_curve: Vec<f64>,
}

/// A trained multi-view regressor plus its target scaling.
#[derive(Debug, Clone)]
pub struct TrainedRt {
    pub model: RegulatedRegressor,
    pub scaler: TargetScaler,
    pub loss_curve: Vec<f64>,
}

/// A trained fusion ensemble (the model itself carries its scaler).
#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub model: EnsembleModel,
    pub loss_curve: Vec<f64>,
}

/// Which histogram features an encoder trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderInput {
    /// Complete scan clouds (the teacher's view).
    Scan,
    /// Partial field clouds (the student's view).
    Field,
}

fn features(record: &SpikeRecord, input: EncoderInput) -> &Array2<f64> {
    match input {
        EncoderInput::Scan => &record.scan_features,
        EncoderInput::Field => &record.field_features,
    }
}

fn check_optimizer_config(config: &TrainConfig) -> Result<(), LearnError> {
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(LearnError::InvalidConfig(format!(
            "learning rate must be positive and finite, got {}",
            config.learning_rate
        )));
    }
    if config.batch_size == 0 {
        return Err(LearnError::InvalidConfig("batch size must be at least 1".into()));
    }
    Ok(())
}

fn sorted_train_indices(dataset: &Dataset) -> Result<Vec<usize>, LearnError> {
    let mut idx = dataset.split.train.clone();
    idx.sort_unstable();
    idx.dedup();
    if idx.is_empty() {
        return Err(LearnError::InvalidConfig("training split is empty".into()));
    }
    if idx.last().is_some_and(|&i| i >= dataset.spikes.len()) {
        return Err(LearnError::InvalidConfig("training split indexes out of range".into()));
    }
    Ok(idx)
}

/// Shared encoder trainer. `distill` carries the frozen teacher model and the
/// alignment weights `(lambda, alpha)`; pass `None` (or `lambda = 0`) for
/// plain mean-squared-error training.
fn train_encoder_core(
    dataset: &Dataset,
    input: EncoderInput,
    config: &TrainConfig,
    distill: Option<(&HistogramEncoder, f64, f64)>,
    init_label: &str,
    shuffle_label: &str,
) -> Result<TrainedEncoder, LearnError> {
    check_optimizer_config(config)?;
    let train_idx = sorted_train_indices(dataset)?;
    let bins = features(&dataset.spikes[train_idx[0]], input).ncols() - 1;
    let scaler = TargetScaler::fit(&dataset.volumes(&train_idx))?;

    let mut init_rng = rng::rng_from(rng::derive(config.seed, init_label));
    let mut model = HistogramEncoder::init(bins, Activation::Tanh, &mut init_rng);

    // Teacher latents are frozen, so compute them once. A zero lambda
    // disables the branch entirely, which keeps the arithmetic identical to
    // plain training.
    let distill = distill.filter(|&(_, lambda, _)| lambda != 0.0);
    let teacher_latents: Option<Vec<Array1<f64>>> = match distill {
        Some((teacher, _, _)) => Some(
            train_idx
                .iter()
                .map(|&i| teacher.latent(&dataset.spikes[i].scan_features))
                .collect::<Result<_, _>>()?,
        ),
        None => None,
    };
    let (lambda, alpha) = distill.map_or((0.0, 0.0), |(_, l, a)| (l, a));

    let mut params = model.params_flat();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let n_train = train_idx.len() as f64;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_idx.len()).collect();
        let mut shuffle_rng =
            rng::rng_from(rng::derive_indexed(config.seed, shuffle_label, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len() as f64;
            let mut grads = model.zero_grads();
            for &slot in chunk {
                let record = &dataset.spikes[train_idx[slot]];
                let (pred, latent, cache) = model.forward_cached(features(record, input))?;
                let diff = pred - scaler.scale(record.volume);
                epoch_loss += diff * diff;
                let d_latent = match &teacher_latents {
                    None => None,
                    Some(latents) => {
                        let (align, d_student) = feature_align_with_grad(
                            latent.as_slice().expect("pooled latent is contiguous"),
                            latents[slot].as_slice().expect("teacher latent is contiguous"),
                            alpha,
                        )?;
                        epoch_loss += lambda * align;
                        Some(Array1::from_vec(d_student) * (lambda / b))
                    }
                };
                model.backward(&cache, 2.0 * diff / b, d_latent.as_ref(), &mut grads);
            }
            let mut flat = Vec::with_capacity(params.len());
            grads.write_flat(&mut flat);
            adam.step(&mut params, &flat);
            model.set_params_flat(&params);
        }
        let mean_loss = epoch_loss / n_train;
        if !mean_loss.is_finite() {
            return Err(LearnError::Divergence { epoch, loss: mean_loss });
        }
        loss_curve.push(mean_loss);
    }
    Ok(TrainedEncoder { model, scaler, loss_curve })
}

/// Train the point-cloud teacher on complete scan histograms.
pub fn train_teacher(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedEncoder, LearnError> {
    train_encoder_core(dataset, EncoderInput::Scan, config, None, "teacher-init", "teacher-shuffle")
}

/// Train a field encoder without distillation (the student ablation).
pub fn train_field_encoder(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainedEncoder, LearnError> {
    train_encoder_core(dataset, EncoderInput::Field, config, None, "student-init", "student-shuffle")
}

/// Train the field student against the frozen teacher: mean squared error
/// plus `lambda` times the latent alignment penalty (direction plus `alpha`
/// times the norm gap).
pub fn train_student(
    dataset: &Dataset,
    teacher: &TrainedEncoder,
    lambda: f64,
    alpha: f64,
    config: &TrainConfig,
) -> Result<TrainedEncoder, LearnError> {
    train_encoder_core(
        dataset,
        EncoderInput::Field,
        config,
        Some((&teacher.model, lambda, alpha)),
        "student-init",
        "student-shuffle",
    )
}

/// One multi-view training item: view features, a target volume (true or
/// pseudo-labeled), and optionally a frozen teacher latent for feature
/// distillation.
struct RtTrainItem<'a> {
    views: &'a Array2<f64>,
    volume: f64,
    teacher_latent: Option<Array1<f64>>,
}

/// Shared multi-view trainer. `distill = Some((beta, gamma))` with a nonzero
/// `beta` adds the projected-token alignment term against each item's
/// teacher latent.
fn train_rt_core(
    items: &[RtTrainItem<'_>],
    per_view_weight: f64,
    distill: Option<(f64, f64)>,
    config: &TrainConfig,
) -> Result<(TrainedRt, Option<TokenProjection>), LearnError> {
    check_optimizer_config(config)?;
    if items.is_empty() {
        return Err(LearnError::InvalidConfig("no multi-view training items".into()));
    }
    if !(per_view_weight.is_finite() && per_view_weight >= 0.0) {
        return Err(LearnError::InvalidConfig(format!(
            "per-view weight must be non-negative, got {per_view_weight}"
        )));
    }
    let view_dim = items[0].views.ncols();
    let volumes: Vec<f64> = items.iter().map(|it| it.volume).collect();
    let scaler = TargetScaler::fit(&volumes)?;

    let mut init_rng = rng::rng_from(rng::derive(config.seed, "rt-init"));
    let mut model = RegulatedRegressor::init(view_dim, Activation::Tanh, &mut init_rng);
    // Input-side counterpart of the target scaler: the raw silhouette
    // features carry large, nearly constant offsets (log pixel sizes, log
    // camera distance) that would otherwise saturate the tanh stages.
    model.view_norm = ViewNorm::fit(items.iter().map(|it| it.views))?;

    let distill = distill.filter(|&(beta, _)| beta != 0.0);
    let mut projection = match distill {
        Some(_) => {
            let fused_dim = items
                .iter()
                .map(|it| it.teacher_latent.as_ref().map(Array1::len))
                .collect::<Option<std::collections::BTreeSet<usize>>>()
                .filter(|dims| dims.len() == 1)
                .and_then(|dims| dims.into_iter().next())
                .ok_or_else(|| {
                    LearnError::InvalidConfig(
                        "feature distillation needs one teacher latent of a single width per item"
                            .into(),
                    )
                })?;
            let mut proj_rng =
                rng::rng_from(rng::derive(config.seed, "token-projection-init"));
            Some(TokenProjection::init(fused_dim, &mut proj_rng))
        }
        None => None,
    };
    let (beta, gamma) = distill.unwrap_or((0.0, 0.0));

    let mut params = model.params_flat();
    if let Some(projection) = &projection {
        params.extend(projection.params_flat());
    }
    let n_model = model.param_count();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let n_items = items.len() as f64;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut shuffle_rng =
            rng::rng_from(rng::derive_indexed(config.seed, "rt-shuffle", epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len() as f64;
            let mut grads = model.zero_grads();
            let mut proj_grads = projection.as_ref().map(TokenProjection::zero_grads);
            for &slot in chunk {
                let item = &items[slot];
                let (out, cache) = model.forward_cached(item.views)?;
                let target = scaler.scale(item.volume);
                let reg =
                    regulated_loss_with_grad(&out.per_view, &out.global, target, per_view_weight)?;
                epoch_loss += reg.loss;
                let mut signal = RtGradSignal {
                    per_view: reg.per_view.iter().map(|&(m, s)| (m / b, s / b)).collect(),
                    global: (reg.global.0 / b, reg.global.1 / b),
                    token_latent: None,
                };
                if let (Some(projection), Some(proj_grads)) =
                    (&projection, proj_grads.as_mut())
                {
                    let teacher = item.teacher_latent.as_ref().ok_or_else(|| {
                        LearnError::InvalidConfig("training item lacks a teacher latent".into())
                    })?;
                    let projected = projection.forward(&out.token_latent);
                    let (align, d_projected) = feature_align_with_grad(
                        projected.as_slice().expect("projected token is contiguous"),
                        teacher.as_slice().expect("teacher latent is contiguous"),
                        gamma,
                    )?;
                    epoch_loss += beta * align;
                    let d_projected = Array1::from_vec(d_projected) * (beta / b);
                    let d_latent = projection.backward(&out.token_latent, &d_projected, proj_grads);
                    signal.token_latent = Some(d_latent);
                }
                model.backward(&cache, &signal, &mut grads);
            }
            let mut flat = Vec::with_capacity(params.len());
            grads.write_flat(&mut flat);
            if let Some(proj_grads) = &proj_grads {
                flat.extend(proj_grads.0.iter());
                flat.extend(proj_grads.1.iter());
            }
            adam.step(&mut params, &flat);
            model.set_params_flat(&params[..n_model]);
            if let Some(projection) = &mut projection {
                projection.set_params_flat(&params[n_model..]);
            }
        }
        let mean_loss = epoch_loss / n_items;
        if !mean_loss.is_finite() {
            return Err(LearnError::Divergence { epoch, loss: mean_loss });
        }
        loss_curve.push(mean_loss);
    }
    Ok((TrainedRt { model, scaler, loss_curve }, projection))
}

fn labeled_items(dataset: &Dataset) -> Result<Vec<RtTrainItem<'_>>, LearnError> {
    Ok(sorted_train_indices(dataset)?
        .into_iter()
        .map(|i| {
            let record = &dataset.spikes[i];
            RtTrainItem { views: &record.views, volume: record.volume, teacher_latent: None }
        })
        .collect())
}

/// Train the multi-view regressor on true volumes. `per_view_weight = 1`
/// is the full objective; `0` drops the per-view likelihood terms.
pub fn train_regulated(
    dataset: &Dataset,
    per_view_weight: f64,
    config: &TrainConfig,
) -> Result<TrainedRt, LearnError> {
    let items = labeled_items(dataset)?;
    Ok(train_rt_core(&items, per_view_weight, None, config)?.0)
}

/// Feature distillation: retrain the multi-view model with an extra penalty
/// aligning its projected token latent with the frozen ensemble's fused
/// latent. Returns the trained projection alongside the model for
/// inspection; inference never needs it.
pub fn distill_features(
    dataset: &Dataset,
    ensemble: &EnsembleModel,
    beta: f64,
    gamma: f64,
    config: &TrainConfig,
) -> Result<(TrainedRt, Option<TokenProjection>), LearnError> {
    let mut items = labeled_items(dataset)?;
    if beta != 0.0 {
        let train_idx = sorted_train_indices(dataset)?;
        for (item, &i) in items.iter_mut().zip(&train_idx) {
            let record = &dataset.spikes[i];
            item.teacher_latent =
                Some(ensemble.fused_latent(&record.views, &record.field_features)?);
        }
    }
    train_rt_core(&items, 1.0, Some((beta, gamma)), config)
}

/// Outcome of pseudo-label distillation.
#[derive(Debug, Clone)]
pub struct PseudoLabelOutcome {
    pub rt: TrainedRt,
    /// Whether the single refresh round ran (it runs only when the first
    /// round improves validation error over the ensemble itself).
    pub refreshed: bool,
    /// Validation MAE of the returned model, mm^3.
    pub val_mae: f64,
}

/// Pseudo-label distillation: retrain the multi-view model on true volumes
/// for the labeled training split plus frozen-ensemble predictions for the
/// unlabeled spikes. If the retrained model improves validation MAE over the
/// ensemble, the ensemble head is refreshed once around the new model,
/// pseudo-labels are regenerated, and a second round runs; the better of the
/// two rounds (by validation MAE) is returned.
pub fn distill_pseudolabels(
    dataset: &Dataset,
    ensemble: &TrainedEnsemble,
    unlabeled: &[SpikeRecord],
    rt_config: &TrainConfig,
    ensemble_config: &TrainConfig,
) -> Result<PseudoLabelOutcome, LearnError> {
    let run_round = |teacher: &EnsembleModel| -> Result<TrainedRt, LearnError> {
        let mut items = labeled_items(dataset)?;
        for record in unlabeled {
            items.push(RtTrainItem {
                views: &record.views,
                volume: teacher.predict(&record.views, &record.field_features)?,
                teacher_latent: None,
            });
        }
        Ok(train_rt_core(&items, 1.0, None, rt_config)?.0)
    };

    let first = run_round(&ensemble.model)?;
    if unlabeled.is_empty() {
        let val_mae = validation_mae(&VolumeModel::MultiView(&first), dataset)?;
        return Ok(PseudoLabelOutcome { rt: first, refreshed: false, val_mae });
    }

    let ensemble_val = validation_mae(&VolumeModel::Ensemble(&ensemble.model), dataset)?;
    let first_val = validation_mae(&VolumeModel::MultiView(&first), dataset)?;
    if first_val >= ensemble_val {
        return Ok(PseudoLabelOutcome { rt: first, refreshed: false, val_mae: first_val });
    }

    // One refresh: rebuild the fusion head around the improved model,
    // regenerate pseudo-labels, retrain.
    let refreshed_ensemble =
        train_ensemble(dataset, &first.model, &ensemble.model.student, ensemble_config)?;
    let second = run_round(&refreshed_ensemble.model)?;
    let second_val = validation_mae(&VolumeModel::MultiView(&second), dataset)?;
    if second_val < first_val {
        Ok(PseudoLabelOutcome { rt: second, refreshed: true, val_mae: second_val })
    } else {
        Ok(PseudoLabelOutcome { rt: first, refreshed: true, val_mae: first_val })
    }
}

/// Train the fusion head over frozen parent latents.
pub fn train_ensemble(
    dataset: &Dataset,
    rt_model: &RegulatedRegressor,
    student_model: &HistogramEncoder,
    config: &TrainConfig,
) -> Result<TrainedEnsemble, LearnError> {
    check_optimizer_config(config)?;
    let train_idx = sorted_train_indices(dataset)?;
    let scaler = TargetScaler::fit(&dataset.volumes(&train_idx))?;
    let mut init_rng = rng::rng_from(rng::derive(config.seed, "ensemble-init"));
    let head = EnsembleModel::init_head(Activation::Tanh, &mut init_rng);
    let mut model =
        EnsembleModel::new(rt_model.clone(), student_model.clone(), head, scaler)?;

    let fused: Vec<Array1<f64>> = train_idx
        .iter()
        .map(|&i| {
            let record = &dataset.spikes[i];
            model.fused_latent(&record.views, &record.field_features)
        })
        .collect::<Result<_, _>>()?;
    let targets: Vec<f64> =
        train_idx.iter().map(|&i| model.scaler.scale(dataset.spikes[i].volume)).collect();

    let mut params = model.head.params_flat();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let n_train = train_idx.len() as f64;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_idx.len()).collect();
        let mut shuffle_rng =
            rng::rng_from(rng::derive_indexed(config.seed, "ensemble-shuffle", epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len() as f64;
            let mut grads = model.head.zero_grads();
            for &slot in chunk {
                let (pred, cache) = model.head_forward_cached(&fused[slot])?;
                let diff = pred - targets[slot];
                epoch_loss += diff * diff;
                model.head_backward(&cache, 2.0 * diff / b, &mut grads);
            }
            let mut flat = Vec::with_capacity(params.len());
            grads.write_flat(&mut flat);
            adam.step(&mut params, &flat);
            model.head.set_params_flat(&params);
        }
        let mean_loss = epoch_loss / n_train;
        if !mean_loss.is_finite() {
            return Err(LearnError::Divergence { epoch, loss: mean_loss });
        }
        loss_curve.push(mean_loss);
    }
    Ok(TrainedEnsemble { model, loss_curve })
}

/// Any trained model viewed as a volume predictor in mm^3.
#[derive(Debug, Clone, Copy)]
pub enum VolumeModel<'a> {
    /// Encoder over complete scan histograms.
    ScanEncoder(&'a TrainedEncoder),
    /// Encoder over partial field histograms.
    FieldEncoder(&'a TrainedEncoder),
    /// Multi-view regressor (global mean).
    MultiView(&'a TrainedRt),
    /// Fusion ensemble.
    Ensemble(&'a EnsembleModel),
}

impl VolumeModel<'_> {
    pub fn predict(&self, record: &SpikeRecord) -> Result<f64, LearnError> {
        match self {
            VolumeModel::ScanEncoder(enc) => {
                Ok(enc.scaler.unscale(enc.model.predict(&record.scan_features)?))
            }
            VolumeModel::FieldEncoder(enc) => {
                Ok(enc.scaler.unscale(enc.model.predict(&record.field_features)?))
            }
            VolumeModel::MultiView(rt) => {
                Ok(rt.scaler.unscale(rt.model.forward(&record.views)?.global.mu()))
            }
            VolumeModel::Ensemble(model) => {
                model.predict(&record.views, &record.field_features)
            }
        }
    }
}

/// One evaluated spike: id, true volume, predicted volume (mm^3).
pub type EvalRow = (u64, f64, f64);

/// Evaluate a model over the given spike indices.
pub fn evaluate(
    model: &VolumeModel<'_>,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<(MetricReport, Vec<EvalRow>), LearnError> {
    if indices.iter().any(|&i| i >= dataset.spikes.len()) {
        return Err(LearnError::InvalidConfig("evaluation indexes out of range".into()));
    }
    let mut rows = Vec::with_capacity(indices.len());
    for &i in indices {
        let record = &dataset.spikes[i];
        rows.push((record.id, record.volume, model.predict(record)?));
    }
    let preds: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let truths: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let report = compute_metrics(&preds, &truths)?;
    Ok((report, rows))
}

fn validation_mae(model: &VolumeModel<'_>, dataset: &Dataset) -> Result<f64, LearnError> {
    let idx = &dataset.split.val;
    if idx.is_empty() {
        return Err(LearnError::InvalidConfig("validation split is empty".into()));
    }
    let mut total = 0.0;
    for &i in idx {
        let record = &dataset.spikes[i];
        total += (model.predict(record)? - record.volume).abs();
    }
    Ok(total / idx.len() as f64)
}
