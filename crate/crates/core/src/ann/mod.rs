//! Source network: threshold-ReLU forward pass, backpropagation, momentum SGD and accuracy.

mod model;
mod train;

use rayon::prelude::*;

pub use model::{threshold_relu, Activation, AnnBuilder, AnnLayer, AnnModel, Connection};
pub use train::{
    loss_and_grads, mean_loss, sgd_train, Gradients, ParamGrad, TrainConfig, TrainReport,
};

use crate::dataset::Dataset;
use crate::error::Result;

/// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
pub fn evaluate_accuracy(model: &AnnModel, data: &Dataset) -> Result<f64> {
    data.ensure_nonempty("evaluate_accuracy")?;
    let hits: Vec<Result<bool>> = data
        .inputs
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(x, &label)| Ok(model.predict(x)? == label))
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Activation kink points of a layer, used to skip ill-conditioned finite-difference checks.
pub fn activation_kinks(activation: Activation) -> Vec<f64> {
    activation.kinks()
}
