use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Tensor};

/// Clamp `x` to `[0, y_th]`.
pub fn threshold_relu(x: f64, y_th: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < y_th {
        x
    } else {
        y_th
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    ThresholdRelu { y_th: f64 },
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::ThresholdRelu { y_th } => threshold_relu(x, y_th),
        }
    }

    /// Forward value while training; during warmup the threshold is not applied.
    pub(crate) fn apply_train(self, x: f64, thresholds_enabled: bool) -> f64 {
        match self {
            Activation::ThresholdRelu { .. } if !thresholds_enabled => x.max(0.0),
            other => other.apply(x),
        }
    }

    /// Derivative used by backprop. Both threshold-ReLU kinks get 0.
    pub(crate) fn derivative(self, x: f64, thresholds_enabled: bool) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => f64::from(x > 0.0),
            Activation::ThresholdRelu { .. } if !thresholds_enabled => f64::from(x > 0.0),
            Activation::ThresholdRelu { y_th } => f64::from(x > 0.0 && x < y_th),
        }
    }

    /// Points where the derivative is discontinuous.
    pub(crate) fn kinks(self) -> Vec<f64> {
        match self {
            Activation::None => vec![],
            Activation::Relu => vec![0.0],
            Activation::ThresholdRelu { y_th } => vec![0.0, y_th],
        }
    }
}

/// The parametrised linear part of a weighted layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Connection {
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Conv2d {
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
}

impl Connection {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Connection::Dense { weight, bias } => numerics::affine(weight, bias, x),
            Connection::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => numerics::conv2d(kernel, bias, x, *stride, *padding),
        }
    }

    /// Bit-identical to [`Connection::forward`]; faster when most inputs are zero.
    pub fn forward_sparse(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Connection::Dense { weight, bias } => numerics::affine_sparse(weight, bias, x),
            conv => conv.forward(x),
        }
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Connection::Dense { weight, bias } => {
                if weight.shape().len() != 2 {
                    return Err(Error::dimension(
                        "weight",
                        "rank 2",
                        format!("{:?}", weight.shape()),
                    ));
                }
                let numel: usize = input_shape.iter().product();
                if numel != weight.shape()[1] {
                    return Err(Error::dimension("input", weight.shape()[1], numel));
                }
                if bias.len() != weight.shape()[0] {
                    return Err(Error::dimension("bias", weight.shape()[0], bias.len()));
                }
                Ok(vec![weight.shape()[0]])
            }
            Connection::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => {
                let shape =
                    numerics::conv2d_output_shape(kernel.shape(), input_shape, *stride, *padding)?;
                if bias.len() != shape[0] {
                    return Err(Error::dimension("bias", shape[0], bias.len()));
                }
                Ok(shape)
            }
        }
    }

    /// Weight matrix or convolution kernel.
    pub fn weight(&self) -> &Tensor {
        match self {
            Connection::Dense { weight, .. } => weight,
            Connection::Conv2d { kernel, .. } => kernel,
        }
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Tensor {
        match self {
            Connection::Dense { weight, .. } => weight,
            Connection::Conv2d { kernel, .. } => kernel,
        }
    }

    pub fn bias(&self) -> &Tensor {
        match self {
            Connection::Dense { bias, .. } | Connection::Conv2d { bias, .. } => bias,
        }
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        match self {
            Connection::Dense { bias, .. } | Connection::Conv2d { bias, .. } => bias,
        }
    }

    pub(crate) fn backward(&self, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        match self {
            Connection::Dense { weight, .. } => numerics::affine_backward(weight, x, dy),
            Connection::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => numerics::conv2d_backward(kernel, x, *stride, *padding, dy),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnnLayer {
    Weighted {
        connection: Connection,
        activation: Activation,
    },
    AvgPool {
        k: usize,
        stride: usize,
    },
    /// Identity at inference; inverted dropout while training.
    Dropout {
        p: f64,
    },
}

impl AnnLayer {
    pub fn is_weighted(&self) -> bool {
        matches!(self, AnnLayer::Weighted { .. })
    }
}

/// Feed-forward source network.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnModel {
    input_shape: Vec<usize>,
    pub(crate) layers: Vec<AnnLayer>,
}

impl AnnModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<AnnLayer>) -> Result<Self> {
        let model = AnnModel {
            input_shape,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn builder(input_shape: &[usize]) -> AnnBuilder {
        AnnBuilder {
            input_shape: input_shape.to_vec(),
            specs: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "input shape must have positive extents, got {:?}",
                self.input_shape
            )));
        }
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                AnnLayer::Weighted {
                    connection,
                    activation,
                } => {
                    if let Activation::ThresholdRelu { y_th } = activation {
                        if !(*y_th > 0.0 && y_th.is_finite()) {
                            return Err(Error::Config(format!(
                                "layer {i}: threshold_relu needs y_th > 0, got {y_th}"
                            )));
                        }
                    }
                    if !connection.weight().all_finite() || !connection.bias().all_finite() {
                        return Err(Error::Config(format!("layer {i}: non-finite parameters")));
                    }
                    connection.output_shape(&shape)?
                }
                AnnLayer::AvgPool { k, stride } => {
                    numerics::avgpool_output_shape(&shape, *k, *stride)?
                }
                AnnLayer::Dropout { p } => {
                    if !(0.0..1.0).contains(p) {
                        return Err(Error::Config(format!(
                            "layer {i}: dropout p must lie in [0, 1), got {p}"
                        )));
                    }
                    shape
                }
            };
        }
        match self
            .layers
            .iter()
            .rev()
            .find(|l| !matches!(l, AnnLayer::Dropout { .. }))
        {
            Some(AnnLayer::Weighted { .. }) => Ok(()),
            _ => Err(Error::Config(
                "the last non-dropout layer must be a weighted (dense or conv2d) layer".into(),
            )),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[AnnLayer] {
        &self.layers
    }

    pub fn num_weighted_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.is_weighted()).count()
    }

    /// `(connection, activation)` of each weighted layer in order.
    pub fn weighted_layers(&self) -> impl Iterator<Item = (&Connection, Activation)> + '_ {
        self.layers.iter().filter_map(|l| match l {
            AnnLayer::Weighted {
                connection,
                activation,
            } => Some((connection, *activation)),
            _ => None,
        })
    }

    pub fn num_outputs(&self) -> usize {
        self.weighted_layers()
            .last()
            .map(|(c, _)| c.bias().len())
            .unwrap_or(0)
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::dimension(
                "model input",
                format!("{:?}", self.input_shape),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Inference pass. Returns the final layer's outputs and, when `record` is set, the
    /// post-activation tensor of every weighted layer.
    pub fn forward(&self, x: &Tensor, record: bool) -> Result<(Tensor, Option<Vec<Tensor>>)> {
        self.check_input(x)?;
        let mut recorded = record.then(Vec::new);
        let mut signal = x.clone();
        for layer in &self.layers {
            match layer {
                AnnLayer::Weighted {
                    connection,
                    activation,
                } => {
                    let act = *activation;
                    signal = connection.forward(&signal)?.map(|v| act.apply(v));
                    if let Some(r) = recorded.as_mut() {
                        r.push(signal.clone());
                    }
                }
                AnnLayer::AvgPool { k, stride } => {
                    signal = numerics::avgpool(&signal, *k, *stride)?
                }
                AnnLayer::Dropout { .. } => {}
            }
        }
        Ok((signal, recorded))
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x, false)?.0.argmax())
    }
}

#[derive(Debug, Clone)]
enum LayerSpec {
    Dense {
        out: usize,
        activation: Activation,
    },
    Conv {
        channels: usize,
        k: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    },
    AvgPool {
        k: usize,
        stride: usize,
    },
    Dropout {
        p: f64,
    },
}

/// Builds a randomly initialised [`AnnModel`].
///
/// Weights are drawn from a zero-mean normal with standard deviation `sqrt(2 / (k^2 n))`,
/// where `k` is the kernel size (1 for dense layers) and `n` the number of output units or
/// channels. Biases start at zero.
#[derive(Debug, Clone)]
pub struct AnnBuilder {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
}

impl AnnBuilder {
    pub fn dense(mut self, out: usize, activation: Activation) -> Self {
        self.specs.push(LayerSpec::Dense { out, activation });
        self
    }

    pub fn conv2d(
        mut self,
        channels: usize,
        k: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    ) -> Self {
        self.specs.push(LayerSpec::Conv {
            channels,
            k,
            stride,
            padding,
            activation,
        });
        self
    }

    pub fn avgpool(mut self, k: usize, stride: usize) -> Self {
        self.specs.push(LayerSpec::AvgPool { k, stride });
        self
    }

    pub fn dropout(mut self, p: f64) -> Self {
        self.specs.push(LayerSpec::Dropout { p });
        self
    }

    pub fn build(self, seed: u64) -> Result<AnnModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.specs.len());
        for spec in self.specs {
            let layer = match spec {
                LayerSpec::Dense { out, activation } => {
                    let inp: usize = shape.iter().product();
                    if out == 0 {
                        return Err(Error::Config("dense layer needs at least one unit".into()));
                    }
                    let std = (2.0 / out as f64).sqrt();
                    let weight = random_normal(&mut rng, &[out, inp], std);
                    AnnLayer::Weighted {
                        connection: Connection::Dense {
                            weight,
                            bias: Tensor::zeros(&[out]),
                        },
                        activation,
                    }
                }
                LayerSpec::Conv {
                    channels,
                    k,
                    stride,
                    padding,
                    activation,
                } => {
                    if shape.len() != 3 || channels == 0 || k == 0 {
                        return Err(Error::Config(format!(
                            "conv2d needs a [c, h, w] input and positive sizes, input is {shape:?}"
                        )));
                    }
                    let std = (2.0 / ((k * k * channels) as f64)).sqrt();
                    let kernel = random_normal(&mut rng, &[channels, shape[0], k, k], std);
                    AnnLayer::Weighted {
                        connection: Connection::Conv2d {
                            kernel,
                            bias: Tensor::zeros(&[channels]),
                            stride,
                            padding,
                        },
                        activation,
                    }
                }
                LayerSpec::AvgPool { k, stride } => AnnLayer::AvgPool { k, stride },
                LayerSpec::Dropout { p } => AnnLayer::Dropout { p },
            };
            shape = match &layer {
                AnnLayer::Weighted { connection, .. } => connection.output_shape(&shape)?,
                AnnLayer::AvgPool { k, stride } => {
                    numerics::avgpool_output_shape(&shape, *k, *stride)?
                }
                AnnLayer::Dropout { .. } => shape,
            };
            layers.push(layer);
        }
        AnnModel::new(self.input_shape, layers)
    }
}

fn random_normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
