//! Loss functions and evaluation metrics for the volume models, as pure
//! scalar functions with analytic gradients.
//!
//! The training objectives are:
//! - a Gaussian negative log-likelihood combining per-view and global
//!   predictions (the regulated loss),
//! - mean squared error for the point-cloud regressors,
//! - a latent feature-alignment term (normalized direction mismatch plus a
//!   weighted norm mismatch) used by both distillation paths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("sigma must be strictly positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("need at least one per-view prediction")]
    NoViews,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input must be non-empty")]
    Empty,
    #[error("latent vector has zero norm")]
    ZeroLatent,
    #[error("latent dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("correlation undefined: {0} series has zero variance")]
    UndefinedCorrelation(&'static str),
    #[error("MAPE undefined: truth value at index {0} is zero")]
    UndefinedMape(usize),
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function; the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Floor added to softplus so predicted scales stay strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// A per-view or global volume prediction as a Gaussian `(mu, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    mu: f64,
    sigma: f64,
}

impl GaussianPrediction {
    /// Construct with an explicit scale; `sigma` must be strictly positive.
    pub fn new(mu: f64, sigma: f64) -> Result<Self, LossError> {
        if !(sigma > 0.0) {
            return Err(LossError::NonPositiveSigma(sigma));
        }
        Ok(Self { mu, sigma })
    }

    /// Construct from an unconstrained scale output:
    /// `sigma = softplus(raw) + SIGMA_FLOOR`, always positive.
    pub fn from_raw(mu: f64, raw_sigma: f64) -> Self {
        Self { mu, sigma: softplus(raw_sigma) + SIGMA_FLOOR }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Role a latent vector plays in distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentRole {
    Teacher,
    Student,
    Token,
}

/// A latent feature vector plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFeature {
    pub vector: Vec<f64>,
    pub role: LatentRole,
}

impl LatentFeature {
    pub fn new(vector: Vec<f64>, role: LatentRole) -> Self {
        Self { vector, role }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }
}

/// Gaussian negative log-likelihood `(v - mu)^2 / (2 sigma^2) + ln(sigma)`.
///
/// `ln(sigma)` equals the usual `0.5 ln(sigma^2)` and avoids the extra
/// squaring.
pub fn gaussian_nll(mu: f64, sigma: f64, v: f64) -> Result<f64, LossError> {
    if !(sigma > 0.0) {
        return Err(LossError::NonPositiveSigma(sigma));
    }
    let d = v - mu;
    Ok(d * d / (2.0 * sigma * sigma) + sigma.ln())
}

/// [`gaussian_nll`] together with its partial derivatives `(d/dmu, d/dsigma)`.
pub fn gaussian_nll_with_grad(mu: f64, sigma: f64, v: f64) -> Result<(f64, f64, f64), LossError> {
    let nll = gaussian_nll(mu, sigma, v)?;
    let d = v - mu;
    let d_mu = (mu - v) / (sigma * sigma);
    let d_sigma = -d * d / (sigma * sigma * sigma) + 1.0 / sigma;
    Ok((nll, d_mu, d_sigma))
}

/// Regulated loss for one spike: mean per-view NLL plus `0.5` times the
/// global NLL.
///
/// `per_view_weight` scales the per-view term; it is `1` in the standard
/// objective and `0` for the unregulated ablation.
pub fn regulated_loss(
    per_view: &[GaussianPrediction],
    global: &GaussianPrediction,
    v: f64,
    per_view_weight: f64,
) -> Result<f64, LossError> {
    if per_view.is_empty() {
        return Err(LossError::NoViews);
    }
    let mut view_sum = 0.0;
    for p in per_view {
        view_sum += gaussian_nll(p.mu, p.sigma, v)?;
    }
    Ok(per_view_weight * view_sum / per_view.len() as f64 + 0.5 * gaussian_nll(global.mu, global.sigma, v)?)
}

/// Gradients of [`regulated_loss`] with respect to every prediction.
#[derive(Debug, Clone)]
pub struct RegulatedGrad {
    pub loss: f64,
    /// `(d/dmu_j, d/dsigma_j)` per view.
    pub per_view: Vec<(f64, f64)>,
    /// `(d/dmu_s, d/dsigma_s)` for the global prediction.
    pub global: (f64, f64),
}

pub fn regulated_loss_with_grad(
    per_view: &[GaussianPrediction],
    global: &GaussianPrediction,
    v: f64,
    per_view_weight: f64,
) -> Result<RegulatedGrad, LossError> {
    if per_view.is_empty() {
        return Err(LossError::NoViews);
    }
    let inv_n = per_view_weight / per_view.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(per_view.len());
    for p in per_view {
        let (nll, d_mu, d_sigma) = gaussian_nll_with_grad(p.mu, p.sigma, v)?;
        loss += inv_n * nll;
        grads.push((inv_n * d_mu, inv_n * d_sigma));
    }
    let (g_nll, g_mu, g_sigma) = gaussian_nll_with_grad(global.mu, global.sigma, v)?;
    loss += 0.5 * g_nll;
    Ok(RegulatedGrad { loss, per_view: grads, global: (0.5 * g_mu, 0.5 * g_sigma) })
}

/// Mean squared error over paired lists.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64, LossError> {
    if predictions.len() != targets.len() {
        return Err(LossError::LengthMismatch { left: predictions.len(), right: targets.len() });
    }
    if predictions.is_empty() {
        return Err(LossError::Empty);
    }
    let sum: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / predictions.len() as f64)
}

/// Latent alignment: squared distance between unit directions plus `alpha`
/// times the squared norm gap,
/// `|| s/||s|| - t/||t|| ||^2 + alpha (||s|| - ||t||)^2`.
pub fn feature_align_loss(student: &[f64], teacher: &[f64], alpha: f64) -> Result<f64, LossError> {
    let (s_norm, t_norm) = align_norms(student, teacher)?;
    let mut dir = 0.0;
    for (s, t) in student.iter().zip(teacher) {
        let d = s / s_norm - t / t_norm;
        dir += d * d;
    }
    Ok(dir + alpha * (s_norm - t_norm) * (s_norm - t_norm))
}

/// [`feature_align_loss`] plus its gradient with respect to the student
/// vector (the teacher side is always frozen in this pipeline).
pub fn feature_align_with_grad(
    student: &[f64],
    teacher: &[f64],
    alpha: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    let (s_norm, t_norm) = align_norms(student, teacher)?;
    let mut dir = 0.0;
    let mut dot_units = 0.0;
    for (s, t) in student.iter().zip(teacher) {
        let (su, tu) = (s / s_norm, t / t_norm);
        let d = su - tu;
        dir += d * d;
        dot_units += su * tu;
    }
    let norm_gap = s_norm - t_norm;
    let loss = dir + alpha * norm_gap * norm_gap;
    // d(dir)/ds = (2/||s||)(s_unit (s_unit . t_unit) - t_unit);
    // d(norm term)/ds = 2 alpha (||s|| - ||t||) s_unit.
    let grad = student
        .iter()
        .zip(teacher)
        .map(|(s, t)| {
            let (su, tu) = (s / s_norm, t / t_norm);
            2.0 / s_norm * (su * dot_units - tu) + 2.0 * alpha * norm_gap * su
        })
        .collect();
    Ok((loss, grad))
}

fn align_norms(student: &[f64], teacher: &[f64]) -> Result<(f64, f64), LossError> {
    if student.len() != teacher.len() {
        return Err(LossError::DimensionMismatch { left: student.len(), right: teacher.len() });
    }
    if student.is_empty() {
        return Err(LossError::Empty);
    }
    let s_norm = student.iter().map(|x| x * x).sum::<f64>().sqrt();
    let t_norm = teacher.iter().map(|x| x * x).sum::<f64>().sqrt();
    if s_norm == 0.0 || t_norm == 0.0 {
        return Err(LossError::ZeroLatent);
    }
    Ok((s_norm, t_norm))
}

/// Student point-cloud objective: batch MSE plus `lambda` times the mean
/// feature alignment to the (frozen) teacher latents.
pub fn pc_student_loss(
    predictions: &[f64],
    targets: &[f64],
    student_latents: &[Vec<f64>],
    teacher_latents: &[Vec<f64>],
    lambda: f64,
    alpha: f64,
) -> Result<f64, LossError> {
    if student_latents.len() != teacher_latents.len() {
        return Err(LossError::LengthMismatch {
            left: student_latents.len(),
            right: teacher_latents.len(),
        });
    }
    if predictions.len() != student_latents.len() {
        return Err(LossError::LengthMismatch {
            left: predictions.len(),
            right: student_latents.len(),
        });
    }
    let mse = mse_loss(predictions, targets)?;
    let mut align = 0.0;
    for (s, t) in student_latents.iter().zip(teacher_latents) {
        align += feature_align_loss(s, t, alpha)?;
    }
    Ok(mse + lambda * align / student_latents.len() as f64)
}

/// Distilled multi-view objective for one spike: the regulated loss plus
/// `beta` times the alignment of the projected volume token to the frozen
/// fused teacher latent (with norm weight `gamma`).
pub fn rt_distill_loss(
    per_view: &[GaussianPrediction],
    global: &GaussianPrediction,
    v: f64,
    projected_token: &[f64],
    teacher_latent: &[f64],
    beta: f64,
    gamma: f64,
) -> Result<f64, LossError> {
    let rt = regulated_loss(per_view, global, v, 1.0)?;
    let align = feature_align_loss(projected_token, teacher_latent, gamma)?;
    Ok(rt + beta * align)
}

/// Accuracy summary for a set of volume predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean absolute error, mm^3.
    pub mae: f64,
    /// Pearson correlation coefficient.
    pub pearson_r: f64,
    /// Mean absolute percentage error, percent.
    pub mape: f64,
    /// Number of samples evaluated.
    pub n: usize,
}

/// Pearson correlation coefficient between paired lists.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64, LossError> {
    if xs.len() != ys.len() {
        return Err(LossError::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    let n = xs.len();
    if n < 2 {
        return Err(LossError::TooFewSamples { need: 2, got: n });
    }
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let (mut cov, mut var_x, mut var_y) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(LossError::UndefinedCorrelation("left"));
    }
    if var_y == 0.0 {
        return Err(LossError::UndefinedCorrelation("right"));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// MAE, Pearson r (population moments), and MAPE over paired lists.
pub fn compute_metrics(predicted: &[f64], truth: &[f64]) -> Result<MetricReport, LossError> {
    if predicted.len() != truth.len() {
        return Err(LossError::LengthMismatch { left: predicted.len(), right: truth.len() });
    }
    let n = predicted.len();
    if n < 2 {
        return Err(LossError::TooFewSamples { need: 2, got: n });
    }
    if let Some(idx) = truth.iter().position(|&t| t == 0.0) {
        return Err(LossError::UndefinedMape(idx));
    }
    let nf = n as f64;
    let mean_p = predicted.iter().sum::<f64>() / nf;
    let mean_t = truth.iter().sum::<f64>() / nf;
    let (mut cov, mut var_p, mut var_t, mut abs_sum, mut pct_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&p, &t) in predicted.iter().zip(truth) {
        let (dp, dt) = (p - mean_p, t - mean_t);
        cov += dp * dt;
        var_p += dp * dp;
        var_t += dt * dt;
        abs_sum += (t - p).abs();
        pct_sum += (t - p).abs() / t.abs();
    }
    if var_p == 0.0 {
        return Err(LossError::UndefinedCorrelation("predicted"));
    }
    if var_t == 0.0 {
        return Err(LossError::UndefinedCorrelation("truth"));
    }
    Ok(MetricReport {
        mae: abs_sum / nf,
        pearson_r: cov / (var_p.sqrt() * var_t.sqrt()),
        mape: 100.0 * pct_sum / nf,
        n,
    })
}
