//! Multi-view volume regressor with per-view and global (regulated) heads.
//!
//! Incoming view features are z-scored per column (statistics fit on the
//! training items and frozen into the model), then linearly projected to a
//! shared 32-d space. Per-view heads predict a Gaussian `(mu_j, sigma_j)`
//! from each projected view. A single-head attention aggregator — a
//! learnable volume token attending over the projected views, with a
//! residual connection — produces the token latent from which the global
//! `(mu_s, sigma_s)` heads predict. Inference uses only the global mean;
//! the views form an unordered set (no positional encoding), so the global
//! prediction is view-order invariant.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::mlp::{Activation, Linear, Mlp, MlpCache, MlpGrads};
use super::LearnError;
use crate::losses::{sigmoid, GaussianPrediction};

/// Width of the shared projected view space and of the volume token.
pub const TOKEN_DIM: usize = 32;
/// Hidden width of the four prediction heads.
pub const RT_HEAD_HIDDEN: usize = 16;

/// Columns whose spread falls below this keep unit scale, so constant
/// features pass through centered instead of amplified.
const VIEW_NORM_MIN_SPREAD: f64 = 1e-9;

/// Per-column z-scoring of view features, the input-side counterpart of
/// [`super::TargetScaler`]. Fit on the training items and carried by the
/// model (outside the optimized parameter vector) so checkpointed inference
/// sees the same feature space as training.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewNorm {
    pub offset: Array1<f64>,
    pub scale: Array1<f64>,
}

impl ViewNorm {
    /// The do-nothing normalization new models start with.
    pub fn identity(dim: usize) -> Self {
        Self { offset: Array1::zeros(dim), scale: Array1::ones(dim) }
    }

    /// Fit per-column mean and standard deviation over every view row of
    /// every set.
    pub fn fit<'a>(
        view_sets: impl IntoIterator<Item = &'a Array2<f64>>,
    ) -> Result<Self, LearnError> {
        let mut sets = view_sets.into_iter().peekable();
        let dim = match sets.peek() {
            Some(views) => views.ncols(),
            None => return Err(LearnError::EmptyInput("view normalization needs view rows")),
        };
        let mut mean = Array1::<f64>::zeros(dim);
        let mut sq = Array1::<f64>::zeros(dim);
        let mut n = 0.0;
        for views in sets {
            if views.ncols() != dim {
                return Err(LearnError::DimensionMismatch {
                    what: "view feature width",
                    expected: dim,
                    got: views.ncols(),
                });
            }
            for row in views.rows() {
                for (c, v) in row.iter().enumerate() {
                    mean[c] += v;
                    sq[c] += v * v;
                }
                n += 1.0;
            }
        }
        if n == 0.0 {
            return Err(LearnError::EmptyInput("view normalization needs view rows"));
        }
        mean /= n;
        let scale = Array1::from_shape_fn(dim, |c| {
            let sd = (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt();
            if sd < VIEW_NORM_MIN_SPREAD {
                1.0
            } else {
                sd
            }
        });
        Ok(Self { offset: mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, views: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(views.dim(), |(r, c)| {
            (views[(r, c)] - self.offset[c]) / self.scale[c]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatedRegressor {
    /// Frozen input normalization applied ahead of the projection.
    pub view_norm: ViewNorm,
    /// Linear map from view features to the shared 32-d space.
    pub proj: Linear,
    /// Learnable volume token.
    pub token: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub head_mu_view: Mlp,
    pub head_sigma_view: Mlp,
    pub head_mu_global: Mlp,
    pub head_sigma_global: Mlp,
}

/// Per-view and global Gaussian predictions plus the token latent used for
/// fusion and distillation.
#[derive(Debug, Clone)]
pub struct RtOutput {
    pub per_view: Vec<GaussianPrediction>,
    pub global: GaussianPrediction,
    /// The aggregated volume-token representation `h` (32-d).
    pub token_latent: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct RtCache {
    views: Array2<f64>,
    projected: Array2<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    query: Array1<f64>,
    attention: Array1<f64>,
    mu_view_cache: MlpCache,
    sigma_view_cache: MlpCache,
    mu_global_cache: MlpCache,
    sigma_global_cache: MlpCache,
    sigma_view_raw: Vec<f64>,
    sigma_global_raw: f64,
}

/// Gradient accumulators mirroring [`RegulatedRegressor`].
#[derive(Debug, Clone)]
pub struct RtGrads {
    pub proj: (Array2<f64>, Array1<f64>),
    pub token: Array1<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub head_mu_view: MlpGrads,
    pub head_sigma_view: MlpGrads,
    pub head_mu_global: MlpGrads,
    pub head_sigma_global: MlpGrads,
}

/// Upstream gradients for one spike. Sigma gradients are with respect to the
/// post-softplus sigma; the chain through the parameterization is handled
/// internally.
#[derive(Debug, Clone)]
pub struct RtGradSignal {
    /// `(d/dmu_j, d/dsigma_j)` per view, aligned with the input rows.
    pub per_view: Vec<(f64, f64)>,
    /// `(d/dmu_s, d/dsigma_s)`.
    pub global: (f64, f64),
    /// Extra gradient applied directly to the token latent (the feature
    /// distillation branch).
    pub token_latent: Option<Array1<f64>>,
}

impl RegulatedRegressor {
    pub fn init(view_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let head = |rng: &mut ChaCha8Rng| {
            Mlp::init(&[TOKEN_DIM, RT_HEAD_HIDDEN, 1], activation, rng)
        };
        Self {
            view_norm: ViewNorm::identity(view_dim),
            proj: Linear::init(view_dim, TOKEN_DIM, rng),
            token: {
                let bound = 1.0 / (TOKEN_DIM as f64).sqrt();
                Array1::from_shape_fn(TOKEN_DIM, |_| {
                    use rand::Rng;
                    rng.random_range(-bound..bound)
                })
            },
            w_q: attention_weights(rng),
            w_k: attention_weights(rng),
            w_v: attention_weights(rng),
            head_mu_view: head(rng),
            head_sigma_view: head(rng),
            head_mu_global: head(rng),
            head_sigma_global: head(rng),
        }
    }

    pub fn view_dim(&self) -> usize {
        self.proj.fan_in()
    }

    fn check_input(&self, views: &Array2<f64>) -> Result<(), LearnError> {
        if views.nrows() == 0 {
            return Err(LearnError::EmptyInput("a spike needs at least one view"));
        }
        if views.ncols() != self.view_dim() {
            return Err(LearnError::DimensionMismatch {
                what: "view feature width",
                expected: self.view_dim(),
                got: views.ncols(),
            });
        }
        if self.view_norm.dim() != self.view_dim() {
            return Err(LearnError::DimensionMismatch {
                what: "view normalization width",
                expected: self.view_dim(),
                got: self.view_norm.dim(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, views: &Array2<f64>) -> Result<RtOutput, LearnError> {
        Ok(self.forward_cached(views)?.0)
    }

    pub fn forward_cached(
        &self,
        views: &Array2<f64>,
    ) -> Result<(RtOutput, RtCache), LearnError> {
        self.check_input(views)?;
        // The cache keeps the normalized rows: every downstream gradient,
        // including the projection's, is taken in the normalized space.
        let views = self.view_norm.apply(views);
        let projected = self.proj.forward(&views);
        let keys = projected.dot(&self.w_k);
        let values = projected.dot(&self.w_v);
        let query = self.token.dot(&self.w_q);
        let scale = 1.0 / (TOKEN_DIM as f64).sqrt();
        let scores = keys.dot(&query) * scale;
        let attention = softmax(&scores);
        let context = attention.dot(&values);
        let token_latent = &self.token + &context;
        let latent_row = token_latent
            .clone()
            .into_shape_with_order((1, TOKEN_DIM))
            .expect("token latent shape");

        let (mu_view, mu_view_cache) = self.head_mu_view.forward_cached(&projected);
        let (sigma_view_raw_col, sigma_view_cache) =
            self.head_sigma_view.forward_cached(&projected);
        let (mu_global, mu_global_cache) = self.head_mu_global.forward_cached(&latent_row);
        let (sigma_global_raw_m, sigma_global_cache) =
            self.head_sigma_global.forward_cached(&latent_row);

        let sigma_view_raw: Vec<f64> = sigma_view_raw_col.column(0).to_vec();
        let sigma_global_raw = sigma_global_raw_m[(0, 0)];
        let per_view = (0..views.nrows())
            .map(|j| GaussianPrediction::from_raw(mu_view[(j, 0)], sigma_view_raw[j]))
            .collect();
        let global = GaussianPrediction::from_raw(mu_global[(0, 0)], sigma_global_raw);

        Ok((
            RtOutput { per_view, global, token_latent },
            RtCache {
                views,
                projected,
                keys,
                values,
                query,
                attention,
                mu_view_cache,
                sigma_view_cache,
                mu_global_cache,
                sigma_global_cache,
                sigma_view_raw,
                sigma_global_raw,
            },
        ))
    }

    pub fn backward(&self, cache: &RtCache, signal: &RtGradSignal, grads: &mut RtGrads) {
        let n = cache.views.nrows();
        assert_eq!(signal.per_view.len(), n, "per-view gradient count mismatch");
        let scale = 1.0 / (TOKEN_DIM as f64).sqrt();

        // Per-view heads; sigma gradients chain through softplus.
        let d_mu_view =
            Array2::from_shape_fn((n, 1), |(j, _)| signal.per_view[j].0);
        let d_sigma_raw_view = Array2::from_shape_fn((n, 1), |(j, _)| {
            signal.per_view[j].1 * sigmoid(cache.sigma_view_raw[j])
        });
        let mut d_projected =
            self.head_mu_view.backward(&cache.mu_view_cache, &d_mu_view, &mut grads.head_mu_view);
        d_projected += &self.head_sigma_view.backward(
            &cache.sigma_view_cache,
            &d_sigma_raw_view,
            &mut grads.head_sigma_view,
        );

        // Global heads into the token latent.
        let d_mu_global = Array2::from_elem((1, 1), signal.global.0);
        let d_sigma_raw_global =
            Array2::from_elem((1, 1), signal.global.1 * sigmoid(cache.sigma_global_raw));
        let mut d_latent = self.head_mu_global.backward(
            &cache.mu_global_cache,
            &d_mu_global,
            &mut grads.head_mu_global,
        );
        d_latent += &self.head_sigma_global.backward(
            &cache.sigma_global_cache,
            &d_sigma_raw_global,
            &mut grads.head_sigma_global,
        );
        let mut d_latent = d_latent.into_shape_with_order(TOKEN_DIM).expect("latent shape");
        if let Some(extra) = &signal.token_latent {
            d_latent += extra;
        }

        // token_latent = token + attention . values
        grads.token += &d_latent;
        let d_context = d_latent;
        let d_attention = cache.values.dot(&d_context);
        // Softmax backward: ds = a * (da - a . da).
        let dot = cache.attention.dot(&d_attention);
        let d_scores =
            &cache.attention * &(&d_attention - &Array1::from_elem(n, dot)) * scale;
        // scores = keys . query (pre-scale; the factor is folded into d_scores).
        let d_query = cache.keys.t().dot(&d_scores);
        // dK = outer(d_scores, query); dV = outer(attention, d_context).
        let d_keys = outer(&d_scores, &cache.query);
        let d_values = outer(&cache.attention, &d_context);

        // query = token . w_q
        grads.w_q += &outer(&self.token, &d_query);
        grads.token += &self.w_q.dot(&d_query);

        // keys/values = projected . w_{k,v}
        grads.w_k += &cache.projected.t().dot(&d_keys);
        grads.w_v += &cache.projected.t().dot(&d_values);
        d_projected += &d_keys.dot(&self.w_k.t());
        d_projected += &d_values.dot(&self.w_v.t());

        self.proj.backward(&cache.views, &d_projected, &mut grads.proj.0, &mut grads.proj.1);
    }

    pub fn zero_grads(&self) -> RtGrads {
        RtGrads {
            proj: (Array2::zeros(self.proj.w.dim()), Array1::zeros(self.proj.b.len())),
            token: Array1::zeros(TOKEN_DIM),
            w_q: Array2::zeros((TOKEN_DIM, TOKEN_DIM)),
            w_k: Array2::zeros((TOKEN_DIM, TOKEN_DIM)),
            w_v: Array2::zeros((TOKEN_DIM, TOKEN_DIM)),
            head_mu_view: self.head_mu_view.zero_grads(),
            head_sigma_view: self.head_sigma_view.zero_grads(),
            head_mu_global: self.head_mu_global.zero_grads(),
            head_sigma_global: self.head_sigma_global.zero_grads(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.proj.param_count()
            + TOKEN_DIM
            + 3 * TOKEN_DIM * TOKEN_DIM
            + self.head_mu_view.param_count()
            + self.head_sigma_view.param_count()
            + self.head_mu_global.param_count()
            + self.head_sigma_global.param_count()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        self.proj.write_params(out);
        out.extend(self.token.iter());
        out.extend(self.w_q.iter());
        out.extend(self.w_k.iter());
        out.extend(self.w_v.iter());
        self.head_mu_view.write_params(out);
        self.head_sigma_view.write_params(out);
        self.head_mu_global.write_params(out);
        self.head_sigma_global.write_params(out);
    }

    pub fn read_params(&mut self, src: &[f64], cursor: &mut usize) {
        self.proj.read_params(src, cursor);
        for v in self.token.iter_mut() {
            *v = src[*cursor];
            *cursor += 1;
        }
        for m in [&mut self.w_q, &mut self.w_k, &mut self.w_v] {
            for v in m.iter_mut() {
                *v = src[*cursor];
                *cursor += 1;
            }
        }
        self.head_mu_view.read_params(src, cursor);
        self.head_sigma_view.read_params(src, cursor);
        self.head_mu_global.read_params(src, cursor);
        self.head_sigma_global.read_params(src, cursor);
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_params(&mut out);
        out
    }

    pub fn set_params_flat(&mut self, src: &[f64]) {
        let mut cursor = 0;
        self.read_params(src, &mut cursor);
    }
}

impl RtGrads {
    pub fn scale(&mut self, factor: f64) {
        self.proj.0 *= factor;
        self.proj.1 *= factor;
        self.token *= factor;
        self.w_q *= factor;
        self.w_k *= factor;
        self.w_v *= factor;
        self.head_mu_view.scale(factor);
        self.head_sigma_view.scale(factor);
        self.head_mu_global.scale(factor);
        self.head_sigma_global.scale(factor);
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend(self.proj.0.iter());
        out.extend(self.proj.1.iter());
        out.extend(self.token.iter());
        out.extend(self.w_q.iter());
        out.extend(self.w_k.iter());
        out.extend(self.w_v.iter());
        self.head_mu_view.write_flat(out);
        self.head_sigma_view.write_flat(out);
        self.head_mu_global.write_flat(out);
        self.head_sigma_global.write_flat(out);
    }
}

/// Linear projection of the volume token into a teacher feature space, used
/// by feature distillation.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenProjection {
    pub linear: Linear,
}

impl TokenProjection {
    pub fn init(out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { linear: Linear::init(TOKEN_DIM, out_dim, rng) }
    }

    pub fn forward(&self, token_latent: &Array1<f64>) -> Array1<f64> {
        token_latent.dot(&self.linear.w) + &self.linear.b
    }

    /// Accumulates gradients and returns the gradient at the token latent.
    pub fn backward(
        &self,
        token_latent: &Array1<f64>,
        d_out: &Array1<f64>,
        grads: &mut (Array2<f64>, Array1<f64>),
    ) -> Array1<f64> {
        grads.0 += &outer(token_latent, d_out);
        grads.1 += d_out;
        self.linear.w.dot(d_out)
    }

    pub fn zero_grads(&self) -> (Array2<f64>, Array1<f64>) {
        (Array2::zeros(self.linear.w.dim()), Array1::zeros(self.linear.b.len()))
    }

    pub fn param_count(&self) -> usize {
        self.linear.param_count()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        self.linear.write_params(out);
    }

    pub fn read_params(&mut self, src: &[f64], cursor: &mut usize) {
        self.linear.read_params(src, cursor);
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_params(&mut out);
        out
    }

    pub fn set_params_flat(&mut self, src: &[f64]) {
        let mut cursor = 0;
        self.read_params(src, &mut cursor);
    }
}

fn attention_weights(rng: &mut ChaCha8Rng) -> Array2<f64> {
    use rand::Rng;
    let bound = 1.0 / (TOKEN_DIM as f64).sqrt();
    Array2::from_shape_fn((TOKEN_DIM, TOKEN_DIM), |_| rng.random_range(-bound..bound))
}

fn softmax(scores: &Array1<f64>) -> Array1<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = scores.mapv(|s| (s - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{regulated_loss, regulated_loss_with_grad};
    use crate::rng;
    use rand::Rng;

    fn random_views(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::rng_from(seed);
        Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn global_prediction_is_view_order_invariant() {
        let mut rng = rng::rng_from(81);
        let model = RegulatedRegressor::init(8, Activation::Tanh, &mut rng);
        let views = random_views(7, 8, 82);
        let base = model.forward(&views).unwrap();
        for trial in 0..5 {
            use rand::seq::SliceRandom;
            let mut order: Vec<usize> = (0..7).collect();
            order.shuffle(&mut rng::rng_from(83 + trial));
            let permuted = Array2::from_shape_fn((7, 8), |(r, c)| views[(order[r], c)]);
            let out = model.forward(&permuted).unwrap();
            assert!((out.global.mu() - base.global.mu()).abs() < 1e-9);
            assert!((out.global.sigma() - base.global.sigma()).abs() < 1e-9);
            // Per-view predictions permute with the input rows.
            for (new_row, &old_row) in order.iter().enumerate() {
                assert!(
                    (out.per_view[new_row].mu() - base.per_view[old_row].mu()).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn single_view_attention_collapses_to_that_view() {
        let mut rng = rng::rng_from(89);
        let model = RegulatedRegressor::init(8, Activation::Tanh, &mut rng);
        let views = random_views(1, 8, 90);
        let (out, cache) = model.forward_cached(&views).unwrap();
        assert_eq!(cache.attention.len(), 1);
        assert!((cache.attention[0] - 1.0).abs() < 1e-15);
        // Token latent = token + V row exactly.
        let expected = &model.token + &cache.values.row(0);
        let max = (&out.token_latent - &expected).iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences_through_the_regulated_loss() {
        let mut rng = rng::rng_from(91);
        let mut model = RegulatedRegressor::init(6, Activation::Tanh, &mut rng);
        let views = random_views(4, 6, 92);
        let target = 0.7;
        let loss = |m: &RegulatedRegressor| {
            let out = m.forward(&views).unwrap();
            regulated_loss(&out.per_view, &out.global, target, 1.0).unwrap()
        };

        let (out, cache) = model.forward_cached(&views).unwrap();
        let lg = regulated_loss_with_grad(&out.per_view, &out.global, target, 1.0).unwrap();
        let mut grads = model.zero_grads();
        model.backward(
            &cache,
            &RtGradSignal { per_view: lg.per_view, global: lg.global, token_latent: None },
            &mut grads,
        );

        let flat = model.params_flat();
        let mut flat_grads = Vec::new();
        grads.write_flat(&mut flat_grads);
        assert_eq!(flat.len(), flat_grads.len());
        let h = 1e-5;
        let mut pick = rng::rng_from(93);
        for _ in 0..250 {
            let i = pick.random_range(0..flat.len());
            let mut bumped = flat.clone();
            bumped[i] += h;
            let mut cursor = 0;
            model.read_params(&bumped, &mut cursor);
            let up = loss(&model);
            bumped[i] -= 2.0 * h;
            cursor = 0;
            model.read_params(&bumped, &mut cursor);
            let down = loss(&model);
            cursor = 0;
            model.read_params(&flat, &mut cursor);
            let numeric = (up - down) / (2.0 * h);
            let denom = flat_grads[i].abs().max(numeric.abs()).max(1e-3);
            assert!(
                (flat_grads[i] - numeric).abs() / denom < 1e-4,
                "param {i}: {} vs {numeric}",
                flat_grads[i]
            );
        }
    }

    #[test]
    fn token_projection_backward_matches_finite_differences() {
        let mut rng = rng::rng_from(97);
        let mut proj = TokenProjection::init(10, &mut rng);
        let latent = Array1::from_shape_fn(TOKEN_DIM, |i| (i as f64 * 0.3).cos());
        let probe = Array1::from_shape_fn(10, |i| (i as f64 * 0.7).sin());
        let loss = |p: &TokenProjection| p.forward(&latent).dot(&probe);
        let mut grads = proj.zero_grads();
        let d_latent = proj.backward(&latent, &probe, &mut grads);

        let mut flat = Vec::new();
        proj.write_params(&mut flat);
        let mut flat_grads: Vec<f64> = Vec::new();
        flat_grads.extend(grads.0.iter().copied());
        flat_grads.extend(grads.1.iter().copied());
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut bumped = flat.clone();
            bumped[i] += h;
            let mut cursor = 0;
            proj.read_params(&bumped, &mut cursor);
            let up = loss(&proj);
            bumped[i] -= 2.0 * h;
            cursor = 0;
            proj.read_params(&bumped, &mut cursor);
            let down = loss(&proj);
            cursor = 0;
            proj.read_params(&flat, &mut cursor);
            let numeric = (up - down) / (2.0 * h);
            assert!((flat_grads[i] - numeric).abs() < 1e-6);
        }
        // Latent gradient: W . probe.
        let expected = proj.linear.w.dot(&probe);
        let max = (&d_latent - &expected).iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-12);
    }

    #[test]
    fn input_validation_rejects_bad_shapes() {
        let mut rng = rng::rng_from(99);
        let model = RegulatedRegressor::init(8, Activation::Tanh, &mut rng);
        assert!(matches!(
            model.forward(&Array2::zeros((0, 8))),
            Err(LearnError::EmptyInput(_))
        ));
        assert!(matches!(
            model.forward(&Array2::zeros((3, 5))),
            Err(LearnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn view_norm_fit_standardizes_and_guards_constant_columns() {
        // Column 0 varies, column 1 is constant, column 2 varies with offset.
        let a = Array2::from_shape_vec(
            (2, 3),
            vec![1.0, 5.0, 10.0, 3.0, 5.0, 14.0],
        )
        .unwrap();
        let b = Array2::from_shape_vec((1, 3), vec![5.0, 5.0, 18.0]).unwrap();
        let norm = ViewNorm::fit([&a, &b]).unwrap();
        assert!((norm.offset[0] - 3.0).abs() < 1e-12);
        assert!((norm.offset[1] - 5.0).abs() < 1e-12);
        assert!((norm.offset[2] - 14.0).abs() < 1e-12);
        // Constant column keeps unit scale and maps to exactly zero.
        assert_eq!(norm.scale[1], 1.0);
        let normed = norm.apply(&a);
        assert_eq!(normed[(0, 1)], 0.0);
        // Varying columns become zero-mean, unit-variance.
        for c in [0usize, 2] {
            let vals = [normed[(0, c)], normed[(1, c)], norm.apply(&b)[(0, c)]];
            let mean: f64 = vals.iter().sum::<f64>() / 3.0;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12, "column {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-12, "column {c} variance {var}");
        }
        assert!(ViewNorm::fit(std::iter::empty::<&Array2<f64>>()).is_err());
    }

    #[test]
    fn fitted_norm_equals_identity_norm_on_prenormalized_input() {
        let mut rng = rng::rng_from(101);
        let mut model = RegulatedRegressor::init(6, Activation::Tanh, &mut rng);
        let raw = random_views(5, 6, 102);
        let norm = ViewNorm::fit([&raw]).unwrap();
        let pre = norm.apply(&raw);
        model.view_norm = norm;
        let with_norm = model.forward(&raw).unwrap();
        model.view_norm = ViewNorm::identity(6);
        let identity = model.forward(&pre).unwrap();
        assert_eq!(with_norm.global.mu(), identity.global.mu());
        assert_eq!(with_norm.global.sigma(), identity.global.sigma());
        for (a, b) in with_norm.per_view.iter().zip(&identity.per_view) {
            assert_eq!(a.mu(), b.mu());
        }
        // The normalization lives outside the optimized parameter vector.
        let mut fitted = RegulatedRegressor::init(6, Activation::Tanh, &mut rng::rng_from(101));
        fitted.view_norm = ViewNorm::fit([&raw]).unwrap();
        assert_eq!(fitted.params_flat(), model.params_flat());
    }
}
