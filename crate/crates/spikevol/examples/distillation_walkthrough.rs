//! The full model chain, trained step by step on one synthetic dataset:
//! scan-cloud teacher, distilled field-cloud student (against a no-teacher
//! ablation), multi-view image regressor, fusion ensemble, and the two
//! ways of pushing the ensemble's knowledge back into the image regressor
//! (feature alignment and pseudo-labels).
//!
//! Prints a test-split metric row per model so the relationships between
//! the stages are visible in one table.

use std::error::Error;

use spikevol::learn::dataset::{make_synthetic_dataset, make_unlabeled_spikes, Dataset};
use spikevol::learn::train::{
    distill_features, distill_pseudolabels, evaluate, train_ensemble, train_field_encoder,
    train_regulated, train_student, train_teacher, VolumeModel, DEFAULT_ALPHA, DEFAULT_BETA,
    DEFAULT_GAMMA, DEFAULT_LAMBDA,
};
use spikevol::learn::TrainConfig;

fn report(name: &str, model: &VolumeModel<'_>, dataset: &Dataset) -> Result<(), Box<dyn Error>> {
    let (metrics, _) = evaluate(model, dataset, &dataset.split.test)?;
    println!(
        "  {name:<22} MAE {:>7.1} mm^3   r {:>6.3}   MAPE {:>5.1}%",
        metrics.mae, metrics.pearson_r, metrics.mape
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    // 80 spikes in 20 shape families; families split whole into train/val/
    // test so evaluation never sees a shape it trained on.
    println!("building dataset (surface scans, partial field clouds, view features)...");
    let dataset = make_synthetic_dataset(80, 12, 42)?;
    println!(
        "  {} spikes, split {}/{}/{} by family\n",
        dataset.spikes.len(),
        dataset.split.train.len(),
        dataset.split.val.len(),
        dataset.split.test.len()
    );

    let encoder_cfg = TrainConfig::encoder_default(1);
    let rt_cfg = TrainConfig::regressor_default(1);
    let ensemble_cfg = TrainConfig::ensemble_default(1);

    // Stage 1: the teacher sees complete scan clouds, the best geometry
    // available, and anchors everything that follows.
    println!("training teacher on complete scans ({} epochs)...", encoder_cfg.epochs);
    let teacher = train_teacher(&dataset, &encoder_cfg)?;

    // Stage 2: the student sees only partial field clouds. With latent
    // alignment (lambda > 0) it borrows the teacher's representation; the
    // plain field encoder is the ablation that shows what alignment buys.
    println!("training student with latent alignment (lambda = {DEFAULT_LAMBDA})...");
    let student = train_student(&dataset, &teacher, DEFAULT_LAMBDA, DEFAULT_ALPHA, &encoder_cfg)?;
    println!("training the no-teacher ablation (lambda = 0)...");
    let plain_field = train_field_encoder(&dataset, &encoder_cfg)?;

    // Stage 3: the image-only regressor needs no cloud at inference time.
    println!("training multi-view image regressor ({} epochs)...", rt_cfg.epochs);
    let rt = train_regulated(&dataset, 1.0, &rt_cfg)?;

    // Stage 4: fuse the frozen image regressor and student into an ensemble.
    println!("training fusion ensemble over the frozen pair...");
    let ensemble = train_ensemble(&dataset, &rt.model, &student.model, &ensemble_cfg)?;

    // Stage 5a: feature distillation — retrain the image regressor with its
    // token latent pulled toward the ensemble's fused latent.
    println!("feature-distilling the image regressor (beta = {DEFAULT_BETA})...");
    let (rt_feature, _projection) =
        distill_features(&dataset, &ensemble.model, DEFAULT_BETA, DEFAULT_GAMMA, &rt_cfg)?;

    // Stage 5b: pseudo-label distillation — the ensemble labels unlabeled
    // spikes, and the image regressor retrains on the widened set. A single
    // refresh round re-labels with the improved ensemble when the first
    // round helps on validation.
    println!("pseudo-label distilling over 60 extra unlabeled spikes...");
    let unlabeled = make_unlabeled_spikes(&dataset, 60, 7)?;
    let label_out = distill_pseudolabels(&dataset, &ensemble, &unlabeled, &rt_cfg, &ensemble_cfg)?;
    println!(
        "  refresh round ran: {} (validation MAE {:.1} mm^3)\n",
        label_out.refreshed, label_out.val_mae
    );

    println!("test-split metrics:");
    report("scan teacher", &VolumeModel::ScanEncoder(&teacher), &dataset)?;
    report("field student (KD)", &VolumeModel::FieldEncoder(&student), &dataset)?;
    report("field plain (no KD)", &VolumeModel::FieldEncoder(&plain_field), &dataset)?;
    report("image regressor", &VolumeModel::MultiView(&rt), &dataset)?;
    report("ensemble", &VolumeModel::Ensemble(&ensemble.model), &dataset)?;
    report("image + feature KD", &VolumeModel::MultiView(&rt_feature), &dataset)?;
    report("image + label KD", &VolumeModel::MultiView(&label_out.rt), &dataset)?;

    Ok(())
}
