#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snnforge::ann::{activation_kinks, Activation, AnnLayer, AnnModel, Connection};
use snnforge::numerics::{self, Tensor};
use snnforge::snn::{Readout, SnnLayer, SnnModel};
use snnforge::workbench::{encode_images, encode_labels};
use snnforge::Error;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

pub fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    match rng.random_range(0..3) {
        0 => Activation::Relu,
        _ => Activation::ThresholdRelu {
            y_th: rng.random_range(0.5..2.0),
        },
    }
}

/// A small random ANN: optionally a conv and pooling front, then one or two dense layers.
pub fn random_ann(rng: &mut ChaCha8Rng, classes: usize) -> AnnModel {
    let conv = rng.random_bool(0.4);
    let (input_shape, mut layers) = if conv {
        let c = rng.random_range(1..=2);
        let side = rng.random_range(4..=5);
        let out_c = rng.random_range(1..=3);
        let k = rng.random_range(2..=3);
        let padding = rng.random_range(0..=1);
        let mut layers = vec![AnnLayer::Weighted {
            connection: Connection::Conv2d {
                kernel: uniform_tensor(rng, &[out_c, c, k, k], 0.8),
                bias: uniform_tensor(rng, &[out_c], 0.3),
                stride: 1,
                padding,
            },
            activation: random_activation(rng),
        }];
        let out_side = side + 2 * padding - k + 1;
        if out_side % 2 == 0 && rng.random_bool(0.5) {
            layers.push(AnnLayer::AvgPool { k: 2, stride: 2 });
        }
        (vec![c, side, side], layers)
    } else {
        let width = rng.random_range(2..=6);
        (vec![width], Vec::new())
    };
    let mut shape = input_shape.clone();
    for layer in &layers {
        shape = match layer {
            AnnLayer::Weighted { connection, .. } => connection.output_shape(&shape).unwrap(),
            AnnLayer::AvgPool { k, stride } => {
                numerics::avgpool_output_shape(&shape, *k, *stride).unwrap()
            }
            AnnLayer::Dropout { .. } => shape,
        };
    }
    let mut fan_in: usize = shape.iter().product();
    let hidden = if conv {
        rng.random_range(0..=1)
    } else {
        rng.random_range(1..=2)
    };
    for _ in 0..hidden {
        let out = rng.random_range(2..=6);
        layers.push(AnnLayer::Weighted {
            connection: Connection::Dense {
                weight: uniform_tensor(rng, &[out, fan_in], 1.0),
                bias: uniform_tensor(rng, &[out], 0.3),
            },
            activation: random_activation(rng),
        });
        if rng.random_bool(0.2) {
            layers.push(AnnLayer::Dropout { p: 0.3 });
        }
        fan_in = out;
    }
    layers.push(AnnLayer::Weighted {
        connection: Connection::Dense {
            weight: uniform_tensor(rng, &[classes, fan_in], 1.0),
            bias: uniform_tensor(rng, &[classes], 0.3),
        },
        activation: Activation::None,
    });
    AnnModel::new(input_shape, layers).unwrap()
}

pub fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

/// A random dense SNN of `depth` weighted layers with positive thresholds.
pub fn random_dense_snn(rng: &mut ChaCha8Rng, depth: usize, readout: Readout) -> SnnModel {
    let mut width = rng.random_range(1..=8);
    let input = vec![width];
    let mut layers = Vec::new();
    for _ in 0..depth {
        let out = rng.random_range(1..=8);
        layers.push(SnnLayer::Weighted {
            connection: Connection::Dense {
                weight: uniform_tensor(rng, &[out, width], 1.5),
                bias: uniform_tensor(rng, &[out], 0.3),
            },
            v_th: rng.random_range(0.2..2.0),
        });
        width = out;
    }
    SnnModel::new(input, layers, readout).unwrap()
}

/// A conv, pool and dense SNN on a `[1, 4, 4]` input.
pub fn random_conv_snn(rng: &mut ChaCha8Rng, readout: Readout) -> SnnModel {
    let layers = vec![
        SnnLayer::Weighted {
            connection: Connection::Conv2d {
                kernel: uniform_tensor(rng, &[2, 1, 3, 3], 1.0),
                bias: uniform_tensor(rng, &[2], 0.3),
                stride: 1,
                padding: 1,
            },
            v_th: rng.random_range(0.2..2.0),
        },
        SnnLayer::AvgPool { k: 2, stride: 2 },
        SnnLayer::Weighted {
            connection: Connection::Dense {
                weight: uniform_tensor(rng, &[3, 8], 1.0),
                bias: uniform_tensor(rng, &[3], 0.3),
            },
            v_th: rng.random_range(0.2..2.0),
        },
    ];
    SnnModel::new(vec![1, 4, 4], layers, readout).unwrap()
}

/// Pre-activations of every weighted layer with a kinked activation, paired with the kinks.
pub fn preactivations(model: &AnnModel, x: &Tensor) -> Vec<(f64, Vec<f64>)> {
    let mut out = Vec::new();
    let mut signal = x.clone();
    for layer in model.layers() {
        match layer {
            AnnLayer::Weighted {
                connection,
                activation,
            } => {
                let z = connection.forward(&signal).unwrap();
                let kinks = activation_kinks(*activation);
                if !kinks.is_empty() {
                    out.extend(z.data().iter().map(|&v| (v, kinks.clone())));
                }
                let act = *activation;
                signal = z.map(|v| act.apply(v));
            }
            AnnLayer::AvgPool { k, stride } => {
                signal = numerics::avgpool(&signal, *k, *stride).unwrap()
            }
            AnnLayer::Dropout { .. } => {}
        }
    }
    out
}

/// Which side of each kink every pre-activation lies on; `None` if one sits within `tol` of a kink.
pub fn kink_pattern(model: &AnnModel, inputs: &[Tensor], tol: f64) -> Option<Vec<bool>> {
    let mut pattern = Vec::new();
    for x in inputs {
        for (z, kinks) in preactivations(model, x) {
            for k in kinks {
                if (z - k).abs() <= tol {
                    return None;
                }
                pattern.push(z > k);
            }
        }
    }
    Some(pattern)
}

/// Mutable access to one scalar parameter, addressed by (layer index, is_bias, flat index).
pub fn param_mut(layers: &mut [AnnLayer], layer: usize, bias: bool, index: usize) -> &mut f64 {
    let AnnLayer::Weighted { connection, .. } = &mut layers[layer] else {
        panic!("layer {layer} has no parameters")
    };
    let t = match (connection, bias) {
        (Connection::Dense { bias, .. }, true) | (Connection::Conv2d { bias, .. }, true) => bias,
        (Connection::Dense { weight, .. }, false) => weight,
        (Connection::Conv2d { kernel, .. }, false) => kernel,
    };
    &mut t.data_mut()[index]
}

/// One malformed IDX pair with the error class it must produce (`None` means it parses with a warning).
pub struct IdxCase {
    pub name: &'static str,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub expect: Option<fn(&Error) -> bool>,
}

fn is_format(e: &Error) -> bool {
    matches!(e, Error::Format(_))
}

fn is_data(e: &Error) -> bool {
    matches!(e, Error::Data(_))
}

pub fn valid_idx_pair() -> (Vec<u8>, Vec<u8>) {
    let pixels: Vec<u8> = (0..3 * 4 * 4).map(|i| (i * 37 % 256) as u8).collect();
    (encode_images(4, 4, &pixels), encode_labels(&[1, 4, 9]))
}

pub fn malformed_idx_cases() -> Vec<IdxCase> {
    let (img, lab) = valid_idx_pair();
    let mut bad_magic = img.clone();
    bad_magic[3] = 0x04;
    let mut overflow = img[..4].to_vec();
    overflow.extend([0xff; 12]);
    let mut trailing = img.clone();
    trailing.extend([1, 2, 3]);
    vec![
        IdxCase {
            name: "bad magic",
            images: bad_magic,
            labels: lab.clone(),
            expect: Some(is_format),
        },
        IdxCase {
            name: "truncated header",
            images: img[..10].to_vec(),
            labels: lab.clone(),
            expect: Some(is_format),
        },
        IdxCase {
            name: "truncated payload",
            images: img[..img.len() - 5].to_vec(),
            labels: lab.clone(),
            expect: Some(is_format),
        },
        IdxCase {
            name: "dimension overflow",
            images: overflow,
            labels: lab.clone(),
            expect: Some(is_format),
        },
        IdxCase {
            name: "count mismatch",
            images: img.clone(),
            labels: encode_labels(&[1, 4]),
            expect: Some(is_data),
        },
        IdxCase {
            name: "empty file",
            images: Vec::new(),
            labels: lab.clone(),
            expect: Some(is_format),
        },
        IdxCase {
            name: "trailing bytes",
            images: trailing,
            labels: lab,
            expect: None,
        },
    ]
}
