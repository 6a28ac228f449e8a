//! JSON model files. Weights are flat row-major arrays written in shortest round-trip form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ann::{Activation, AnnLayer, AnnModel, Connection};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::snn::{Readout, SnnLayer, SnnModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ann,
    Snn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerRecord {
    Dense {
        /// `[out, in]`.
        shape: Vec<usize>,
        weight: Vec<f64>,
        bias: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        activation: Option<Activation>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v_th: Option<f64>,
    },
    Conv2d {
        /// `[out_channels, in_channels, k, k]`.
        shape: Vec<usize>,
        weight: Vec<f64>,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        activation: Option<Activation>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v_th: Option<f64>,
    },
    Avgpool {
        k: usize,
        stride: usize,
    },
    Dropout {
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: ModelKind,
    pub input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<Readout>,
    pub layers: Vec<LayerRecord>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn connection_record(
    connection: &Connection,
    activation: Option<Activation>,
    v_th: Option<f64>,
) -> LayerRecord {
    match connection {
        Connection::Dense { weight, bias } => LayerRecord::Dense {
            shape: weight.shape().to_vec(),
            weight: weight.data().to_vec(),
            bias: bias.data().to_vec(),
            activation,
            v_th,
        },
        Connection::Conv2d {
            kernel,
            bias,
            stride,
            padding,
        } => LayerRecord::Conv2d {
            shape: kernel.shape().to_vec(),
            weight: kernel.data().to_vec(),
            bias: bias.data().to_vec(),
            stride: *stride,
            padding: *padding,
            activation,
            v_th,
        },
    }
}

fn bad(layer: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("layer {layer}: {msg}"))
}

fn tensors(
    i: usize,
    shape: &[usize],
    weight: &[f64],
    bias: &[f64],
    rank: usize,
) -> Result<(Tensor, Tensor)> {
    if shape.len() != rank {
        return Err(bad(
            i,
            format!("weight shape {shape:?} must have rank {rank}"),
        ));
    }
    let weight = Tensor::new(shape.to_vec(), weight.to_vec()).map_err(|e| bad(i, e))?;
    if bias.len() != shape[0] {
        return Err(bad(
            i,
            format!("bias has {} values, expected {}", bias.len(), shape[0]),
        ));
    }
    Ok((weight, Tensor::vector(bias.to_vec())))
}

type ParsedConnection = (Connection, Option<Activation>, Option<f64>);

impl LayerRecord {
    fn connection(&self, i: usize) -> Result<Option<ParsedConnection>> {
        Ok(match self {
            LayerRecord::Dense {
                shape,
                weight,
                bias,
                activation,
                v_th,
            } => {
                let (weight, bias) = tensors(i, shape, weight, bias, 2)?;
                Some((Connection::Dense { weight, bias }, *activation, *v_th))
            }
            LayerRecord::Conv2d {
                shape,
                weight,
                bias,
                stride,
                padding,
                activation,
                v_th,
            } => {
                let (kernel, bias) = tensors(i, shape, weight, bias, 4)?;
                Some((
                    Connection::Conv2d {
                        kernel,
                        bias,
                        stride: *stride,
                        padding: *padding,
                    },
                    *activation,
                    *v_th,
                ))
            }
            _ => None,
        })
    }
}

impl ModelFile {
    pub fn from_ann(model: &AnnModel, meta: serde_json::Value) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| match l {
                AnnLayer::Weighted {
                    connection,
                    activation,
                } => connection_record(connection, Some(*activation), None),
                AnnLayer::AvgPool { k, stride } => LayerRecord::Avgpool {
                    k: *k,
                    stride: *stride,
                },
                AnnLayer::Dropout { p } => LayerRecord::Dropout { p: *p },
            })
            .collect();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: ModelKind::Ann,
            input_shape: model.input_shape().to_vec(),
            readout: None,
            layers,
            meta,
        }
    }

    pub fn from_snn(model: &SnnModel, meta: serde_json::Value) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| match l {
                SnnLayer::Weighted { connection, v_th } => {
                    connection_record(connection, None, Some(*v_th))
                }
                SnnLayer::AvgPool { k, stride } => LayerRecord::Avgpool {
                    k: *k,
                    stride: *stride,
                },
            })
            .collect();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: ModelKind::Snn,
            input_shape: model.input_shape().to_vec(),
            readout: Some(model.readout()),
            layers,
            meta,
        }
    }

    pub fn to_ann(&self) -> Result<AnnModel> {
        if self.kind != ModelKind::Ann {
            return Err(Error::Format(
                "expected an ann model file, found kind snn".into(),
            ));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, record) in self.layers.iter().enumerate() {
            layers.push(match (record.connection(i)?, record) {
                (Some((connection, activation, _)), _) => AnnLayer::Weighted {
                    connection,
                    activation: activation.ok_or_else(|| bad(i, "missing activation"))?,
                },
                (None, LayerRecord::Avgpool { k, stride }) => AnnLayer::AvgPool {
                    k: *k,
                    stride: *stride,
                },
                (None, LayerRecord::Dropout { p }) => AnnLayer::Dropout { p: *p },
                (None, _) => unreachable!("weighted records always yield a connection"),
            });
        }
        AnnModel::new(self.input_shape.clone(), layers)
            .map_err(|e| Error::Format(format!("invalid ann model: {e}")))
    }

    pub fn to_snn(&self) -> Result<SnnModel> {
        if self.kind != ModelKind::Snn {
            return Err(Error::Format(
                "expected an snn model file, found kind ann".into(),
            ));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, record) in self.layers.iter().enumerate() {
            match (record.connection(i)?, record) {
                (Some((connection, _, v_th)), _) => layers.push(SnnLayer::Weighted {
                    connection,
                    v_th: v_th.ok_or_else(|| bad(i, "snn weighted layer is missing v_th"))?,
                }),
                (None, LayerRecord::Avgpool { k, stride }) => layers.push(SnnLayer::AvgPool {
                    k: *k,
                    stride: *stride,
                }),
                (None, LayerRecord::Dropout { .. }) => {
                    return Err(bad(i, "dropout is not allowed in an snn"))
                }
                (None, _) => unreachable!("weighted records always yield a connection"),
            }
        }
        SnnModel::new(
            self.input_shape.clone(),
            layers,
            self.readout.unwrap_or_default(),
        )
        .map_err(|e| Error::Format(format!("invalid snn model: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("model file is not JSON: {e}")))?;
        match value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
        {
            Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Format(format!(
                    "unsupported model format_version {v}, expected {MODEL_FORMAT_VERSION}"
                )))
            }
            None => {
                return Err(Error::Format(
                    "model file has no integer format_version".into(),
                ))
            }
        }
        serde_json::from_value(value)
            .map_err(|e| Error::Format(format!("malformed model file: {e}")))
    }
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    std::fs::write(path, file.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelFile::from_json(&text)
}

pub fn load_ann(path: &Path) -> Result<AnnModel> {
    load_model(path)?.to_ann()
}

pub fn load_snn(path: &Path) -> Result<SnnModel> {
    load_model(path)?.to_snn()
}
