//! Central-difference verification of analytic gradients.
//!
//! Every trainable objective in the crate gets an adapter implementing
//! [`Differentiable`]; [`max_rel_grad_error`] then perturbs each parameter
//! by `±h` and compares `(f(p+h) - f(p-h)) / 2h` against the backward pass.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::encoder::HistogramEncoder;
use super::mlp::{Activation, Mlp};
use super::regulated::{RegulatedRegressor, RtGradSignal, TokenProjection};
use super::LearnError;
use crate::losses::{feature_align_loss, feature_align_with_grad, pc_student_loss, regulated_loss, regulated_loss_with_grad};
use crate::rng;

/// A model + objective pair whose parameters can be flattened.
pub trait Differentiable {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]);
    /// Objective value at the current parameters.
    fn loss(&self) -> f64;
    /// Objective value and flat analytic gradient at the current parameters.
    fn loss_and_grad(&self) -> (f64, Vec<f64>);
}

/// Maximum relative error between analytic and central-difference gradients.
///
/// `subset` limits the check to `(count, seed)` randomly chosen parameters
/// (without replacement) for large models. The relative error uses
/// `|a - n| / max(|a|, |n|, 1e-3)` so near-zero coordinates are compared
/// absolutely.
pub fn max_rel_grad_error<M: Differentiable>(
    model: &mut M,
    h: f64,
    subset: Option<(usize, u64)>,
) -> f64 {
    let base = model.params();
    let (_, grad) = model.loss_and_grad();
    assert_eq!(base.len(), grad.len(), "gradient length mismatch");
    let indices: Vec<usize> = match subset {
        Some((count, seed)) if count < base.len() => {
            use rand::seq::SliceRandom;
            let mut all: Vec<usize> = (0..base.len()).collect();
            let mut rng = rng::rng_from(rng::derive(seed, "gradcheck-subset"));
            all.shuffle(&mut rng);
            let mut chosen = all[..count].to_vec();
            chosen.sort_unstable();
            chosen
        }
        _ => (0..base.len()).collect(),
    };
    let mut worst = 0.0_f64;
    let mut work = base.clone();
    for &i in &indices {
        work[i] = base[i] + h;
        model.set_params(&work);
        let up = model.loss();
        work[i] = base[i] - h;
        model.set_params(&work);
        let down = model.loss();
        work[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = grad[i].abs().max(numeric.abs()).max(1e-3);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    model.set_params(&base);
    worst
}

fn random_histograms(rows: usize, bins: usize, rng: &mut impl Rng) -> Array2<f64> {
    // Row-stochastic-ish inputs shaped like real distance histograms.
    let mut h = Array2::zeros((rows, bins + 1));
    for mut row in h.rows_mut() {
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = rng.random_range(0.0..1.0);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    h
}

fn random_views(n: usize, dim: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut v = Array2::zeros((n, dim));
    for x in v.iter_mut() {
        *x = rng.random_range(-1.5..1.5);
    }
    v
}

fn random_latent(dim: usize, rng: &mut impl Rng) -> Array1<f64> {
    Array1::from_iter((0..dim).map(|_| rng.random_range(-1.0..1.0)))
}

/// Mean squared error of a bare MLP on a small batch — the analytically
/// trivial case (quadratic in the last layer).
pub struct MlpMseCheck {
    pub mlp: Mlp,
    pub inputs: Array2<f64>,
    pub targets: Vec<f64>,
}

impl MlpMseCheck {
    pub fn random(widths: &[usize], activation: Activation, batch: usize, seed: u64) -> Self {
        let mut init = rng::rng_from(rng::derive(seed, "check-mlp"));
        let mlp = Mlp::init(widths, activation, &mut init);
        let mut data = rng::rng_from(rng::derive(seed, "check-mlp-data"));
        let inputs = random_views(batch, widths[0], &mut data);
        let targets = (0..batch).map(|_| data.random_range(-1.0..1.0)).collect();
        Self { mlp, inputs, targets }
    }
}

impl Differentiable for MlpMseCheck {
    fn params(&self) -> Vec<f64> {
        self.mlp.params_flat()
    }

    fn set_params(&mut self, params: &[f64]) {
        self.mlp.set_params_flat(params);
    }

    fn loss(&self) -> f64 {
        let out = self.mlp.forward(&self.inputs);
        let n = self.targets.len() as f64;
        self.targets
            .iter()
            .enumerate()
            .map(|(i, t)| (out[(i, 0)] - t).powi(2))
            .sum::<f64>()
            / n
    }

    fn loss_and_grad(&self) -> (f64, Vec<f64>) {
        let (out, cache) = self.mlp.forward_cached(&self.inputs);
        let n = self.targets.len() as f64;
        let mut loss = 0.0;
        let mut d_out = Array2::zeros(out.raw_dim());
        for (i, t) in self.targets.iter().enumerate() {
            let diff = out[(i, 0)] - t;
            loss += diff * diff / n;
            d_out[(i, 0)] = 2.0 * diff / n;
        }
        let mut grads = self.mlp.zero_grads();
        self.mlp.backward(&cache, &d_out, &mut grads);
        let mut flat = Vec::with_capacity(self.mlp.param_count());
        grads.write_flat(&mut flat);
        (loss, flat)
    }
}

/// Histogram encoder under the distillation objective
/// `MSE + lambda * mean(latent alignment)`; `lambda = 0` covers the plain
/// supervised case.
pub struct EncoderObjectiveCheck {
    pub encoder: HistogramEncoder,
    pub inputs: Vec<Array2<f64>>,
    pub targets: Vec<f64>,
    pub teacher_latents: Vec<Array1<f64>>,
    pub lambda: f64,
    pub alpha: f64,
}

impl EncoderObjectiveCheck {
    pub fn random(bins: usize, batch: usize, lambda: f64, alpha: f64, seed: u64) -> Self {
        let mut init = rng::rng_from(rng::derive(seed, "check-encoder"));
        let encoder = HistogramEncoder::init(bins, Activation::Tanh, &mut init);
        let mut data = rng::rng_from(rng::derive(seed, "check-encoder-data"));
        let inputs: Vec<Array2<f64>> = (0..batch)
            .map(|_| random_histograms(data.random_range(5..12), bins, &mut data))
            .collect();
        let targets = (0..batch).map(|_| data.random_range(-1.0..1.0)).collect();
        let teacher_latents = (0..batch)
            .map(|_| random_latent(super::encoder::LATENT_DIM, &mut data))
            .collect();
        Self { encoder, inputs, targets, teacher_latents, lambda, alpha }
    }

    fn batch_loss(&self) -> Result<f64, LearnError> {
        let mut preds = Vec::new();
        let mut students = Vec::new();
        for input in &self.inputs {
            let (pred, latent, _) = self.encoder.forward_cached(input)?;
            preds.push(pred);
            students.push(latent.to_vec());
        }
        let teachers: Vec<Vec<f64>> =
            self.teacher_latents.iter().map(|l| l.to_vec()).collect();
        Ok(pc_student_loss(&preds, &self.targets, &students, &teachers, self.lambda, self.alpha)?)
    }
}

impl Differentiable for EncoderObjectiveCheck {
    fn params(&self) -> Vec<f64> {
        self.encoder.params_flat()
    }

    fn set_params(&mut self, params: &[f64]) {
        self.encoder.set_params_flat(params);
    }

    fn loss(&self) -> f64 {
        self.batch_loss().expect("gradcheck inputs are well-formed")
    }

    fn loss_and_grad(&self) -> (f64, Vec<f64>) {
        let n = self.inputs.len() as f64;
        let mut grads = self.encoder.zero_grads();
        let mut loss = 0.0;
        for ((input, target), teacher) in
            self.inputs.iter().zip(&self.targets).zip(&self.teacher_latents)
        {
            let (pred, latent, cache) =
                self.encoder.forward_cached(input).expect("well-formed input");
            let diff = pred - target;
            loss += diff * diff / n;
            let d_pred = 2.0 * diff / n;
            let d_latent = if self.lambda == 0.0 {
                None
            } else {
                let (align, d_student) = feature_align_with_grad(
                    latent.as_slice().expect("contiguous"),
                    teacher.as_slice().expect("contiguous"),
                    self.alpha,
                )
                .expect("non-degenerate latents");
                loss += self.lambda * align / n;
                Some(Array1::from_vec(d_student) * (self.lambda / n))
            };
            self.encoder.backward(&cache, d_pred, d_latent.as_ref(), &mut grads);
        }
        let mut flat = Vec::with_capacity(self.encoder.param_count());
        grads.write_flat(&mut flat);
        (loss, flat)
    }
}

/// Regulated regressor under the per-view + global likelihood objective,
/// optionally with the projected-token feature alignment term
/// (`beta > 0`). `per_view_weight = 0` covers the global-only ablation.
pub struct RegulatedObjectiveCheck {
    pub model: RegulatedRegressor,
    pub projection: Option<TokenProjection>,
    pub views: Vec<Array2<f64>>,
    pub targets: Vec<f64>,
    pub teacher_latents: Vec<Array1<f64>>,
    pub per_view_weight: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl RegulatedObjectiveCheck {
    pub fn random(
        view_dim: usize,
        batch: usize,
        per_view_weight: f64,
        beta: f64,
        gamma: f64,
        fused_dim: usize,
        seed: u64,
    ) -> Self {
        let mut init = rng::rng_from(rng::derive(seed, "check-rt"));
        let model = RegulatedRegressor::init(view_dim, Activation::Tanh, &mut init);
        let projection = (beta != 0.0).then(|| {
            let mut proj_rng = rng::rng_from(rng::derive(seed, "check-proj"));
            TokenProjection::init(fused_dim, &mut proj_rng)
        });
        let mut data = rng::rng_from(rng::derive(seed, "check-rt-data"));
        let views: Vec<Array2<f64>> = (0..batch)
            .map(|_| random_views(data.random_range(3..7), view_dim, &mut data))
            .collect();
        let targets = (0..batch).map(|_| data.random_range(-1.0..1.0)).collect();
        let teacher_latents =
            (0..batch).map(|_| random_latent(fused_dim, &mut data)).collect();
        Self { model, projection, views, targets, teacher_latents, per_view_weight, beta, gamma }
    }

    fn item_loss(&self, i: usize) -> f64 {
        let out = self.model.forward(&self.views[i]).expect("well-formed views");
        let base = regulated_loss(
            &out.per_view,
            &out.global,
            self.targets[i],
            self.per_view_weight,
        )
        .expect("non-empty views");
        match &self.projection {
            None => base,
            Some(projection) => {
                let projected = projection.forward(&out.token_latent);
                let align = feature_align_loss(
                    projected.as_slice().expect("contiguous"),
                    self.teacher_latents[i].as_slice().expect("contiguous"),
                    self.gamma,
                )
                .expect("well-formed distill inputs");
                base + self.beta * align
            }
        }
    }
}

impl Differentiable for RegulatedObjectiveCheck {
    fn params(&self) -> Vec<f64> {
        let mut p = self.model.params_flat();
        if let Some(projection) = &self.projection {
            p.extend(projection.params_flat());
        }
        p
    }

    fn set_params(&mut self, params: &[f64]) {
        let n_model = self.model.param_count();
        self.model.set_params_flat(&params[..n_model]);
        if let Some(projection) = &mut self.projection {
            projection.set_params_flat(&params[n_model..]);
        }
    }

    fn loss(&self) -> f64 {
        let n = self.views.len() as f64;
        (0..self.views.len()).map(|i| self.item_loss(i)).sum::<f64>() / n
    }

    fn loss_and_grad(&self) -> (f64, Vec<f64>) {
        let n = self.views.len() as f64;
        let mut grads = self.model.zero_grads();
        let mut proj_grads = self.projection.as_ref().map(|p| p.zero_grads());
        let mut loss = 0.0;
        for i in 0..self.views.len() {
            let (out, cache) =
                self.model.forward_cached(&self.views[i]).expect("well-formed views");
            let reg = regulated_loss_with_grad(
                &out.per_view,
                &out.global,
                self.targets[i],
                self.per_view_weight,
            )
            .expect("non-empty views");
            loss += reg.loss / n;
            let mut signal = RtGradSignal {
                per_view: reg.per_view.iter().map(|&(m, s)| (m / n, s / n)).collect(),
                global: (reg.global.0 / n, reg.global.1 / n),
                token_latent: None,
            };
            if let (Some(projection), Some(pg)) = (&self.projection, proj_grads.as_mut()) {
                let projected = projection.forward(&out.token_latent);
                let (align, d_projected) = feature_align_with_grad(
                    projected.as_slice().expect("contiguous"),
                    self.teacher_latents[i].as_slice().expect("contiguous"),
                    self.gamma,
                )
                .expect("non-degenerate latents");
                loss += self.beta * align / n;
                let d_projected = Array1::from_vec(d_projected) * (self.beta / n);
                let d_latent = projection.backward(&out.token_latent, &d_projected, pg);
                signal.token_latent = Some(d_latent);
            }
            self.model.backward(&cache, &signal, &mut grads);
        }
        let mut flat = Vec::with_capacity(self.params().len());
        grads.write_flat(&mut flat);
        if let Some(pg) = &proj_grads {
            flat.extend(pg.0.iter());
            flat.extend(pg.1.iter());
        }
        (loss, flat)
    }
}
