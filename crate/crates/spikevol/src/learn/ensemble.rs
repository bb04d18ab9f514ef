//! Fusion of the multi-view regressor and the point-cloud student: their
//! frozen latents are concatenated and a two-layer head regresses volume
//! from the fused vector. The fused latent also serves as the teacher
//! feature space for distilling back into a fresh multi-view model.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::encoder::{HistogramEncoder, LATENT_DIM};
use super::mlp::{Activation, Mlp, MlpCache, MlpGrads};
use super::regulated::{RegulatedRegressor, TOKEN_DIM};
use super::{LearnError, TargetScaler};

/// Width of the fused latent: token latent (32) plus cloud latent (128).
pub const FUSED_DIM: usize = TOKEN_DIM + LATENT_DIM;
/// Hidden width of the fusion head.
pub const ENSEMBLE_HIDDEN: usize = 64;

/// Self-contained ensemble: frozen upstream models plus the trained fusion
/// head and its target scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub rt: RegulatedRegressor,
    pub student: HistogramEncoder,
    /// Two-layer head `160 -> 64 -> 1` over the concatenated latents.
    pub head: Mlp,
    /// Target scaling the head was trained under.
    pub scaler: TargetScaler,
}

impl EnsembleModel {
    /// Assemble from frozen parents and a head; validates the head's input
    /// width against the concatenated latent width.
    pub fn new(
        rt: RegulatedRegressor,
        student: HistogramEncoder,
        head: Mlp,
        scaler: TargetScaler,
    ) -> Result<Self, LearnError> {
        if head.input_dim() != FUSED_DIM {
            return Err(LearnError::DimensionMismatch {
                what: "fusion head input width",
                expected: FUSED_DIM,
                got: head.input_dim(),
            });
        }
        Ok(Self { rt, student, head, scaler })
    }

    pub fn init_head(activation: Activation, rng: &mut ChaCha8Rng) -> Mlp {
        Mlp::init(&[FUSED_DIM, ENSEMBLE_HIDDEN, 1], activation, rng)
    }

    /// The fused latent `h` for one spike: `[token latent | cloud latent]`.
    pub fn fused_latent(
        &self,
        views: &Array2<f64>,
        field_histograms: &Array2<f64>,
    ) -> Result<Array1<f64>, LearnError> {
        let token = self.rt.forward(views)?.token_latent;
        let cloud = self.student.latent(field_histograms)?;
        let mut fused = Array1::zeros(FUSED_DIM);
        fused.slice_mut(ndarray::s![..TOKEN_DIM]).assign(&token);
        fused.slice_mut(ndarray::s![TOKEN_DIM..]).assign(&cloud);
        Ok(fused)
    }

    /// Head forward in the scaled target space, with the cache needed to
    /// train the head.
    pub fn head_forward_cached(
        &self,
        fused: &Array1<f64>,
    ) -> Result<(f64, MlpCache), LearnError> {
        let row = fused
            .clone()
            .into_shape_with_order((1, FUSED_DIM))
            .map_err(|_| LearnError::DimensionMismatch {
                what: "fused latent width",
                expected: FUSED_DIM,
                got: fused.len(),
            })?;
        let (out, cache) = self.head.forward_cached(&row);
        Ok((out[(0, 0)], cache))
    }

    /// Volume prediction in mm^3.
    pub fn predict(
        &self,
        views: &Array2<f64>,
        field_histograms: &Array2<f64>,
    ) -> Result<f64, LearnError> {
        let fused = self.fused_latent(views, field_histograms)?;
        let (scaled, _) = self.head_forward_cached(&fused)?;
        Ok(self.scaler.unscale(scaled))
    }

    /// Backpropagate into the head only (the upstream models stay frozen).
    pub fn head_backward(&self, cache: &MlpCache, d_pred: f64, grads: &mut MlpGrads) {
        let dy = Array2::from_elem((1, 1), d_pred);
        self.head.backward(cache, &dy, grads);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::Array2;
    use rand::Rng;

    fn toy_parents(seed: u64) -> (RegulatedRegressor, HistogramEncoder) {
        let mut rng = rng::rng_from(seed);
        (
            RegulatedRegressor::init(8, Activation::Tanh, &mut rng),
            HistogramEncoder::init(10, Activation::Tanh, &mut rng),
        )
    }

    #[test]
    fn fused_latent_concatenates_parent_latents() {
        let (rt, student) = toy_parents(201);
        let mut rng = rng::rng_from(202);
        let head = EnsembleModel::init_head(Activation::Tanh, &mut rng);
        let model =
            EnsembleModel::new(rt, student, head, TargetScaler::identity()).unwrap();
        let views = Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.0..1.0));
        let hists = Array2::from_shape_fn((20, 11), |_| rng.random_range(0.0..0.2));
        let fused = model.fused_latent(&views, &hists).unwrap();
        assert_eq!(fused.len(), FUSED_DIM);
        let token = model.rt.forward(&views).unwrap().token_latent;
        let cloud = model.student.latent(&hists).unwrap();
        for i in 0..TOKEN_DIM {
            assert_eq!(fused[i], token[i]);
        }
        for i in 0..LATENT_DIM {
            assert_eq!(fused[TOKEN_DIM + i], cloud[i]);
        }
    }

    #[test]
    fn head_width_is_validated() {
        let (rt, student) = toy_parents(203);
        let mut rng = rng::rng_from(204);
        let bad_head = Mlp::init(&[64, 16, 1], Activation::Tanh, &mut rng);
        assert!(matches!(
            EnsembleModel::new(rt, student, bad_head, TargetScaler::identity()),
            Err(LearnError::DimensionMismatch { .. })
        ));
    }
}
