//! Threshold balancing: per-layer thresholds from ANN activations, verbatim weights, and a
//! bias shift that re-centres the floor-rounded spike rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::{AnnLayer, AnnModel};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::snn::{Readout, SnnLayer, SnnModel};

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftMode {
    None,
    /// `v_th / (2T)`, the shift minimising the squared rate error for uniform inputs.
    HalfVthOverT,
    /// `scale * v_th`.
    Custom {
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Largest activation seen in the layer.
    #[default]
    Max,
    /// The `ceil(p N)`-th smallest of the layer's `N` pooled activation values.
    Percentile { p: f64 },
}

impl ThresholdMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdMode::Percentile { p } if !(p > 0.0 && p <= 1.0) => Err(Error::Config(
                format!("percentile p must lie in (0, 1], got {p}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionConfig {
    /// Target simulation length.
    #[serde(rename = "T")]
    pub steps: usize,
    pub shift_mode: ShiftMode,
    #[serde(default)]
    pub shift_output_layer: bool,
    pub threshold_mode: ThresholdMode,
    #[serde(default)]
    pub readout: Readout,
}

impl ConversionConfig {
    /// Threshold from the max activation, `v_th / 2T` shift on every layer but the output.
    pub fn new(steps: usize) -> Self {
        ConversionConfig {
            steps,
            shift_mode: ShiftMode::HalfVthOverT,
            shift_output_layer: false,
            threshold_mode: ThresholdMode::Max,
            readout: Readout::AccumulatePotential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config(format!("T must be >= 1, got {}", self.steps)));
        }
        if let ShiftMode::Custom { scale } = self.shift_mode {
            if !scale.is_finite() {
                return Err(Error::Config(format!(
                    "custom shift scale must be finite, got {scale}"
                )));
            }
        }
        self.threshold_mode.validate()
    }
}

/// Fixed-width histogram of one layer's activations over `[0, v_th]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub upper: f64,
    pub counts: Vec<u64>,
    /// Values below 0 or above `upper` (not counted in any bin).
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    fn build(values: &[f64], upper: f64) -> Self {
        let mut h = Histogram {
            upper,
            counts: vec![0; HISTOGRAM_BINS],
            below: 0,
            above: 0,
        };
        for &v in values {
            if v < 0.0 {
                h.below += 1;
            } else if v > upper {
                h.above += 1;
            } else {
                let bin = ((v / upper) * HISTOGRAM_BINS as f64) as usize;
                h.counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub v_th_per_layer: Vec<f64>,
    #[serde(default)]
    pub sample_count: usize,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    #[serde(default)]
    pub histograms: Vec<Histogram>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    /// Thresholds supplied directly rather than measured.
    pub fn from_thresholds(v_th_per_layer: Vec<f64>) -> Result<Self> {
        if let Some(v) = v_th_per_layer
            .iter()
            .find(|v| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::Config(format!(
                "thresholds must be positive, got {v}"
            )));
        }
        Ok(CalibrationResult {
            histograms: v_th_per_layer
                .iter()
                .map(|&v| Histogram::build(&[], v))
                .collect(),
            v_th_per_layer,
            sample_count: 0,
            threshold_mode: ThresholdMode::Max,
            warnings: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self
            .v_th_per_layer
            .iter()
            .find(|v| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::Config(format!(
                "calibrated thresholds must be positive, got {v}"
            )));
        }
        Ok(())
    }
}

/// Records every weighted layer's activations over `data` and derives one threshold per layer.
///
/// A layer whose threshold comes out `<= 0` (it never activated) gets 1.0 and a warning.
pub fn calibrate(
    model: &AnnModel,
    data: &Dataset,
    mode: ThresholdMode,
) -> Result<CalibrationResult> {
    mode.validate()?;
    data.ensure_nonempty("calibrate")?;
    let n_layers = model.num_weighted_layers();
    if n_layers == 0 {
        return Err(Error::Config("model has no weighted layer".into()));
    }

    let per_sample: Vec<Result<Vec<Vec<f64>>>> = data
        .inputs
        .par_iter()
        .map(|x| {
            let (_, acts) = model.forward(x, true)?;
            Ok(acts
                .expect("recorded")
                .into_iter()
                .map(|t| t.into_data())
                .collect())
        })
        .collect();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    for sample in per_sample {
        for (layer, values) in pooled.iter_mut().zip(sample?) {
            layer.extend(values);
        }
    }

    let mut thresholds = Vec::with_capacity(n_layers);
    let mut warnings = Vec::new();
    for (l, values) in pooled.iter_mut().enumerate() {
        let raw = match mode {
            ThresholdMode::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ThresholdMode::Percentile { p } => {
                let n = values.len();
                let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
                let mut scratch = values.clone();
                let (_, v, _) = scratch.select_nth_unstable_by(rank - 1, f64::total_cmp);
                *v
            }
        };
        let v_th = if raw > 0.0 {
            raw
        } else {
            let msg = format!("layer {l} never activated (threshold {raw}); using v_th = 1");
            log::warn!("{msg}");
            warnings.push(msg);
            1.0
        };
        thresholds.push(v_th);
    }
    let histograms = pooled
        .iter()
        .zip(&thresholds)
        .map(|(values, &v)| Histogram::build(values, v))
        .collect();
    Ok(CalibrationResult {
        v_th_per_layer: thresholds,
        sample_count: data.len(),
        threshold_mode: mode,
        histograms,
        warnings,
    })
}

/// Builds the SNN: weights copied verbatim, `v_th` from `calib`, dropout removed, and the
/// configured shift folded into the bias of every weighted layer except (by default) the output.
pub fn convert(
    model: &AnnModel,
    calib: &CalibrationResult,
    cfg: &ConversionConfig,
) -> Result<SnnModel> {
    cfg.validate()?;
    let t = cfg.steps as f64;
    let offsets: Vec<f64> = calib
        .v_th_per_layer
        .iter()
        .map(|&v| match cfg.shift_mode {
            ShiftMode::None => 0.0,
            ShiftMode::HalfVthOverT => v / (2.0 * t),
            ShiftMode::Custom { scale } => scale * v,
        })
        .collect();
    convert_with_offsets(model, calib, &offsets, cfg.shift_output_layer, cfg.readout)
}

/// Conversion with an explicit per-layer bias offset. The output layer's offset is ignored
/// unless `shift_output_layer` is set.
pub fn convert_with_offsets(
    model: &AnnModel,
    calib: &CalibrationResult,
    offsets: &[f64],
    shift_output_layer: bool,
    readout: Readout,
) -> Result<SnnModel> {
    calib.validate()?;
    let n = model.num_weighted_layers();
    if calib.v_th_per_layer.len() != n || offsets.len() != n {
        return Err(Error::Config(format!(
            "calibration has {} thresholds but the model has {n} weighted layers",
            calib.v_th_per_layer.len()
        )));
    }
    let mut layers = Vec::with_capacity(model.layers().len());
    let mut w = 0;
    for layer in model.layers() {
        match layer {
            AnnLayer::Weighted { connection, .. } => {
                let mut connection = connection.clone();
                let is_output = w + 1 == n;
                let offset = offsets[w];
                if offset != 0.0 && (!is_output || shift_output_layer) {
                    for b in connection.bias_mut().data_mut() {
                        *b += offset;
                    }
                }
                layers.push(SnnLayer::Weighted {
                    connection,
                    v_th: calib.v_th_per_layer[w],
                });
                w += 1;
            }
            AnnLayer::AvgPool { k, stride } => layers.push(SnnLayer::AvgPool {
                k: *k,
                stride: *stride,
            }),
            AnnLayer::Dropout { .. } => {}
        }
    }
    SnnModel::new(model.input_shape().to_vec(), layers, readout)
}

/// Checks that `snn` has the same weighted topology and weights as `ann`.
pub(crate) fn check_pair(ann: &AnnModel, snn: &SnnModel) -> Result<()> {
    if ann.input_shape() != snn.input_shape()
        || ann.num_weighted_layers() != snn.num_weighted_layers()
    {
        return Err(Error::Config("ANN and SNN topologies differ".into()));
    }
    for (l, ((a, _), (s, _))) in ann.weighted_layers().zip(snn.weighted_layers()).enumerate() {
        let same_kind = std::mem::discriminant(a) == std::mem::discriminant(s);
        if !same_kind || a.weight().shape() != s.weight().shape() {
            return Err(Error::Config(format!(
                "weighted layer {l} differs between ANN and SNN"
            )));
        }
    }
    Ok(())
}
