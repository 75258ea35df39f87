//! The exit predictor: a small dense network regressing the quality score
//! every branch would achieve for a given input.

mod checkpoint;
mod mlp;
mod train;

pub use checkpoint::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use mlp::{loss, Activation, Gradients, Layer, LayerSpec, LossMode, Mlp, DEFAULT_LEAKY_SLOPE};
pub use train::{
    evaluate, evaluate_with, mean_loss, train, CosineSchedule, EvalReport, Labeled, TrainConfig,
    RELATIVE_ERROR_FLOOR,
};

use crate::error::Result;

/// Source of per-branch quality estimates used for routing.
pub trait ScorePredictor {
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>>;
}

impl ScorePredictor for Mlp {
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input)
    }
}

impl<F> ScorePredictor for F
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self(input)
    }
}
