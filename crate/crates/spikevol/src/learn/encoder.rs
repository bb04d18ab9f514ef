//! Permutation-invariant point-cloud volume regressor: a shared pointwise
//! MLP over per-point distance histograms, mean pooling into a global
//! latent, and a small prediction head.
//!
//! The same architecture serves as the teacher (trained on complete scans,
//! 30 histogram bins) and the student (trained on partial field clouds, 10
//! bins).

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::mlp::{Activation, Mlp, MlpCache, MlpGrads};
use super::LearnError;

/// Width of the pooled latent (the distillation target space).
pub const LATENT_DIM: usize = 128;
/// Hidden width of the pointwise MLP.
pub const POINTWISE_HIDDEN: usize = 64;
/// Hidden width of the prediction head.
pub const HEAD_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramEncoder {
    /// Histogram bin count `k`; inputs have `k + 1` columns.
    pub bins: usize,
    /// Shared per-point MLP `(k+1) -> 64 -> 128`.
    pub pointwise: Mlp,
    /// Prediction head `128 -> 64 -> 1` on the pooled latent.
    pub head: Mlp,
}

/// Cache for one spike's forward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pointwise: MlpCache,
    head: MlpCache,
    n_points: usize,
}

/// Gradient accumulators mirroring [`HistogramEncoder`].
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub pointwise: MlpGrads,
    pub head: MlpGrads,
}

impl HistogramEncoder {
    pub fn init(bins: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        Self {
            bins,
            pointwise: Mlp::init(&[bins + 1, POINTWISE_HIDDEN, LATENT_DIM], activation, rng),
            head: Mlp::init(&[LATENT_DIM, HEAD_HIDDEN, 1], activation, rng),
        }
    }

    fn check_input(&self, histograms: &Array2<f64>) -> Result<(), LearnError> {
        if histograms.ncols() != self.bins + 1 {
            return Err(LearnError::DimensionMismatch {
                what: "histogram columns",
                expected: self.bins + 1,
                got: histograms.ncols(),
            });
        }
        if histograms.nrows() == 0 {
            return Err(LearnError::EmptyInput("histogram matrix has no rows"));
        }
        Ok(())
    }

    /// Pooled latent plus scalar prediction, with caches for backprop.
    pub fn forward_cached(
        &self,
        histograms: &Array2<f64>,
    ) -> Result<(f64, Array1<f64>, EncoderCache), LearnError> {
        self.check_input(histograms)?;
        let (per_point, pointwise_cache) = self.pointwise.forward_cached(histograms);
        let latent = per_point.mean_axis(Axis(0)).expect("non-empty rows");
        let latent_row =
            latent.clone().into_shape_with_order((1, LATENT_DIM)).expect("latent shape");
        let (pred, head_cache) = self.head.forward_cached(&latent_row);
        Ok((
            pred[(0, 0)],
            latent,
            EncoderCache {
                pointwise: pointwise_cache,
                head: head_cache,
                n_points: histograms.nrows(),
            },
        ))
    }

    /// Prediction in the model's target space (z-scored during training).
    pub fn predict(&self, histograms: &Array2<f64>) -> Result<f64, LearnError> {
        Ok(self.forward_cached(histograms)?.0)
    }

    /// Pooled latent only.
    pub fn latent(&self, histograms: &Array2<f64>) -> Result<Array1<f64>, LearnError> {
        Ok(self.forward_cached(histograms)?.1)
    }

    /// Backpropagate one spike: `d_pred` is the gradient at the scalar
    /// prediction, `d_latent` an optional extra gradient applied directly to
    /// the pooled latent (the distillation branch).
    pub fn backward(
        &self,
        cache: &EncoderCache,
        d_pred: f64,
        d_latent: Option<&Array1<f64>>,
        grads: &mut EncoderGrads,
    ) {
        let dy = Array2::from_elem((1, 1), d_pred);
        let mut d_pool = self.head.backward(&cache.head, &dy, &mut grads.head);
        if let Some(extra) = d_latent {
            let extra_row = extra
                .clone()
                .into_shape_with_order((1, LATENT_DIM))
                .expect("latent gradient shape");
            d_pool += &extra_row;
        }
        // Mean pooling distributes the latent gradient evenly over points.
        let scale = 1.0 / cache.n_points as f64;
        let d_points = Array2::from_shape_fn((cache.n_points, LATENT_DIM), |(_, c)| {
            d_pool[(0, c)] * scale
        });
        self.pointwise.backward(&cache.pointwise, &d_points, &mut grads.pointwise);
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads { pointwise: self.pointwise.zero_grads(), head: self.head.zero_grads() }
    }

    pub fn param_count(&self) -> usize {
        self.pointwise.param_count() + self.head.param_count()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        self.pointwise.write_params(out);
        self.head.write_params(out);
    }

    pub fn read_params(&mut self, src: &[f64], cursor: &mut usize) {
        self.pointwise.read_params(src, cursor);
        self.head.read_params(src, cursor);
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

impl EncoderGrads {
    pub fn scale(&mut self, factor: f64) {
        self.pointwise.scale(factor);
        self.head.scale(factor);
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.pointwise.write_flat(out);
        self.head.write_flat(out);
    }
}
