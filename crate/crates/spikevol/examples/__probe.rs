//! Scratch probe: view-feature scaling effect on the multi-view regressor.

use ndarray::Array2;
use spikevol::learn::dataset::{make_synthetic_dataset, Dataset};
use spikevol::learn::train::{
    evaluate, train_field_encoder, train_regulated, train_student, train_teacher, VolumeModel,
    DEFAULT_ALPHA, DEFAULT_LAMBDA,
};
use spikevol::learn::TrainConfig;

fn mae_of(model: &VolumeModel<'_>, ds: &Dataset, idx: &[usize]) -> f64 {
    evaluate(model, ds, idx).unwrap().0.mae
}

fn mean_predictor_mae(ds: &Dataset, idx: &[usize]) -> f64 {
    let train_mean: f64 = ds
        .split
        .train
        .iter()
        .map(|&i| ds.spikes[i].volume)
        .sum::<f64>()
        / ds.split.train.len() as f64;
    idx.iter().map(|&i| (ds.spikes[i].volume - train_mean).abs()).sum::<f64>() / idx.len() as f64
}

fn standardize_views(ds: &Dataset) -> Dataset {
    let dim = ds.spikes[0].views.ncols();
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut n = 0.0;
    for &i in &ds.split.train {
        for row in ds.spikes[i].views.rows() {
            for (c, v) in row.iter().enumerate() {
                mean[c] += v;
                sq[c] += v * v;
            }
            n += 1.0;
        }
    }
    for c in 0..dim {
        mean[c] /= n;
        sq[c] = f64::max(sq[c] / n - mean[c] * mean[c], 1e-12).sqrt();
    }
    println!("per-column mean: {mean:.3?}");
    println!("per-column sd:   {sq:.3?}");
    let mut out = ds.clone();
    for spike in &mut out.spikes {
        let views = spike.views.clone();
        spike.views = Array2::from_shape_fn(views.dim(), |(r, c)| {
            (views[(r, c)] - mean[c]) / sq[c]
        });
    }
    out
}

fn main() {
    let ds = make_synthetic_dataset(200, 12, 42).unwrap();
    println!(
        "splits: train {} val {} test {}",
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len()
    );
    println!(
        "mean-predictor MAE: val {:.1} test {:.1}",
        mean_predictor_mae(&ds, &ds.split.val),
        mean_predictor_mae(&ds, &ds.split.test)
    );

    let enc_cfg = TrainConfig::encoder_default(1);
    let teacher = train_teacher(&ds, &enc_cfg).unwrap();
    println!(
        "teacher MAE: val {:.1} test {:.1}",
        mae_of(&VolumeModel::ScanEncoder(&teacher), &ds, &ds.split.val),
        mae_of(&VolumeModel::ScanEncoder(&teacher), &ds, &ds.split.test)
    );
    let plain = train_field_encoder(&ds, &enc_cfg).unwrap();
    println!(
        "student plain MAE: val {:.1} test {:.1}",
        mae_of(&VolumeModel::FieldEncoder(&plain), &ds, &ds.split.val),
        mae_of(&VolumeModel::FieldEncoder(&plain), &ds, &ds.split.test)
    );
    let kd = train_student(&ds, &teacher, DEFAULT_LAMBDA, DEFAULT_ALPHA, &enc_cfg).unwrap();
    println!(
        "student KD MAE:    val {:.1} test {:.1}",
        mae_of(&VolumeModel::FieldEncoder(&kd), &ds, &ds.split.val),
        mae_of(&VolumeModel::FieldEncoder(&kd), &ds, &ds.split.test)
    );

    let rt_cfg = TrainConfig::regressor_default(1);
    let rt = train_regulated(&ds, 1.0, &rt_cfg).unwrap();
    println!(
        "rt raw features MAE: val {:.1} test {:.1} (loss {:.4} -> {:.4})",
        mae_of(&VolumeModel::MultiView(&rt), &ds, &ds.split.val),
        mae_of(&VolumeModel::MultiView(&rt), &ds, &ds.split.test),
        rt.loss_curve[0],
        rt.loss_curve.last().unwrap()
    );

    let std_ds = standardize_views(&ds);
    for (lr, epochs, batch) in [
        (1e-3, 500, 32),
        (3e-3, 500, 32),
        (1e-3, 1500, 32),
        (3e-3, 1500, 32),
        (2e-3, 800, 16),
    ] {
        let cfg = TrainConfig { learning_rate: lr, batch_size: batch, epochs, seed: 1 };
        let rt_std = train_regulated(&std_ds, 1.0, &cfg).unwrap();
        let rt_std_unreg = train_regulated(&std_ds, 0.0, &cfg).unwrap();
        println!(
            "rt std lr={lr} ep={epochs} b={batch}: reg val {:.1} test {:.1} | unreg val {:.1} test {:.1} (loss -> {:.4})",
            mae_of(&VolumeModel::MultiView(&rt_std), &std_ds, &std_ds.split.val),
            mae_of(&VolumeModel::MultiView(&rt_std), &std_ds, &std_ds.split.test),
            mae_of(&VolumeModel::MultiView(&rt_std_unreg), &std_ds, &std_ds.split.val),
            mae_of(&VolumeModel::MultiView(&rt_std_unreg), &std_ds, &std_ds.split.test),
            rt_std.loss_curve.last().unwrap()
        );
    }
}
