//! Conversion diagnostics: accuracy loss, per-layer errors, shift sweeps and error scaling in T.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::{evaluate_accuracy, AnnModel};
use crate::convert::{self, convert_with_offsets, CalibrationResult, ConversionConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::snn::{simulate_with, snn_accuracy, Readout, SnnModel};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// `ann_accuracy - snn_accuracy` on `data`, the SNN run for `steps` timesteps.
pub fn conversion_loss(
    ann: &AnnModel,
    snn: &SnnModel,
    data: &Dataset,
    steps: usize,
) -> Result<f64> {
    convert::check_pair(ann, snn)?;
    Ok(evaluate_accuracy(ann, data)? - snn_accuracy(snn, data, steps)?)
}

/// Dataset means of the squared L2 norms of one layer's errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    /// `||a'_l - a_l||^2`: SNN averaged output against the ANN activation on the same input.
    pub output_error: f64,
    /// `||a'_l - h_l(W_l a'_{l-1} + b_l)||^2`: the layer's own rounding error, measured against
    /// the ANN layer applied to what the SNN layer actually received.
    pub activation_error: f64,
}

struct PairStats {
    ann_correct: usize,
    snn_correct: usize,
    layer_sums: Vec<LayerError>,
    n: usize,
}

impl PairStats {
    fn layer_means(&self) -> Vec<LayerError> {
        let n = self.n as f64;
        self.layer_sums
            .iter()
            .map(|e| LayerError {
                output_error: e.output_error / n,
                activation_error: e.activation_error / n,
            })
            .collect()
    }

    fn snn_accuracy(&self) -> f64 {
        self.snn_correct as f64 / self.n as f64
    }

    fn ann_accuracy(&self) -> f64 {
        self.ann_correct as f64 / self.n as f64
    }
}

/// One pass over `data`: ANN forward, SNN simulation and per-layer error norms per sample.
fn evaluate_pair(
    ann: &AnnModel,
    snn: &SnnModel,
    data: &Dataset,
    steps: usize,
) -> Result<PairStats> {
    convert::check_pair(ann, snn)?;
    data.ensure_nonempty("layerwise_error")?;
    if steps < 1 {
        return Err(Error::Config("simulation length T must be >= 1".into()));
    }
    let per_sample: Vec<Result<(bool, bool, Vec<LayerError>)>> = data
        .inputs
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(x, &label)| {
            let (logits, acts) = ann.forward(x, true)?;
            let acts = acts.expect("recorded");
            let trace = simulate_with(snn, x, steps, false)?;
            let snn_class = trace.scores().argmax();
            let outputs = trace.layer_outputs();
            let mut errors = Vec::with_capacity(acts.len());
            for (((a, a_snn), lt), (conn, act)) in acts
                .iter()
                .zip(&outputs)
                .zip(&trace.layers)
                .zip(ann.weighted_layers())
            {
                let reference = conn.forward(&lt.input_mean)?.map(|z| act.apply(z));
                errors.push(LayerError {
                    output_error: a_snn.squared_distance(a),
                    activation_error: a_snn.squared_distance(&reference),
                });
            }
            Ok((logits.argmax() == label, snn_class == label, errors))
        })
        .collect();

    let mut stats = PairStats {
        ann_correct: 0,
        snn_correct: 0,
        layer_sums: vec![
            LayerError {
                output_error: 0.0,
                activation_error: 0.0
            };
            ann.num_weighted_layers()
        ],
        n: data.len(),
    };
    for sample in per_sample {
        let (ann_ok, snn_ok, errors) = sample?;
        stats.ann_correct += usize::from(ann_ok);
        stats.snn_correct += usize::from(snn_ok);
        for (sum, e) in stats.layer_sums.iter_mut().zip(errors) {
            sum.output_error += e.output_error;
            sum.activation_error += e.activation_error;
        }
    }
    Ok(stats)
}

/// Per weighted layer mean squared errors of `snn` against `ann` over `data`.
pub fn layerwise_error(
    ann: &AnnModel,
    snn: &SnnModel,
    data: &Dataset,
    steps: usize,
) -> Result<Vec<LayerError>> {
    Ok(evaluate_pair(ann, snn, data, steps)?.layer_means())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    /// Mean over samples and weighted layers of `||a'_l - h_l(W_l a'_{l-1} + b_l)||^2`.
    pub objective: f64,
    pub snn_accuracy: f64,
}

/// Converts without shift, then adds the absolute bias offset `delta` to every layer except the
/// output and evaluates the activation-error objective and SNN accuracy at length `steps`.
pub fn shift_sweep(
    ann: &AnnModel,
    calib: &CalibrationResult,
    data: &Dataset,
    steps: usize,
    grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Config("shift grid is empty".into()));
    }
    if let Some(d) = grid.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(Error::Config(format!(
            "shift grid values must be finite and >= 0, got {d}"
        )));
    }
    let n = ann.num_weighted_layers();
    grid.iter()
        .map(|&delta| {
            let snn = convert_with_offsets(
                ann,
                calib,
                &vec![delta; n],
                false,
                Readout::AccumulatePotential,
            )?;
            let stats = evaluate_pair(ann, &snn, data, steps)?;
            let means = stats.layer_means();
            let objective =
                means.iter().map(|e| e.activation_error).sum::<f64>() / means.len() as f64;
            Ok(SweepPoint {
                delta,
                objective,
                snn_accuracy: stats.snn_accuracy(),
            })
        })
        .collect()
}

/// Upper estimate of the accumulated squared error of `num_layers` spiking layers with
/// threshold `v_th` after `steps` timesteps: `L v_th^2 / (4 T)`.
pub fn error_estimate(num_layers: usize, v_th: f64, steps: usize) -> Result<f64> {
    if num_layers < 1 {
        return Err(Error::Config(
            "error estimate needs at least one layer".into(),
        ));
    }
    if steps < 1 {
        return Err(Error::Config("T must be >= 1".into()));
    }
    if !(v_th > 0.0 && v_th.is_finite()) {
        return Err(Error::Config(format!("v_th must be > 0, got {v_th}")));
    }
    Ok(num_layers as f64 * v_th * v_th / (4.0 * steps as f64))
}

/// Sum of the per-layer estimate over every firing layer of `snn`.
pub fn model_error_estimate(snn: &SnnModel, steps: usize) -> Result<f64> {
    snn.thresholds()
        .into_iter()
        .take(snn.num_firing_layers())
        .map(|v| error_estimate(1, v, steps))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "T")]
    pub steps: usize,
    /// Mean over samples of `||a'_L - a_L||^2` for the final (readout) layer.
    pub mean_output_error: f64,
    /// Mean over samples and spiking layers of `||a'_l - a_l||^2`.
    pub mean_hidden_error: f64,
    pub estimate: f64,
    pub snn_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln(mean_output_error)` against `ln(T)`; absent with fewer than two
    /// rows or a zero error.
    pub log_log_slope: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Converts with the half-step shift at each T in `t_list` and tabulates the measured squared
/// error of the final layer's output against the estimate summed over the spiking layers.
pub fn scaling_experiment(
    ann: &AnnModel,
    calib: &CalibrationResult,
    data: &Dataset,
    t_list: &[usize],
) -> Result<ScalingTable> {
    if t_list.is_empty() {
        return Err(Error::Config("T list is empty".into()));
    }
    let mut rows = Vec::with_capacity(t_list.len());
    for &steps in t_list {
        let snn = convert::convert(ann, calib, &ConversionConfig::new(steps))?;
        let firing = snn.num_firing_layers();
        if firing == 0 {
            return Err(Error::Config(
                "model has no spiking layer to measure".into(),
            ));
        }
        let stats = evaluate_pair(ann, &snn, data, steps)?;
        let means = stats.layer_means();
        rows.push(ScalingRow {
            steps,
            mean_output_error: means.last().expect("weighted layer").output_error,
            mean_hidden_error: means[..firing].iter().map(|e| e.output_error).sum::<f64>()
                / firing as f64,
            estimate: model_error_estimate(&snn, steps)?,
            snn_accuracy: stats.snn_accuracy(),
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.steps as f64, r.mean_output_error))
        .collect();
    Ok(ScalingTable {
        log_log_slope: log_log_slope(&points),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerErrorRow {
    #[serde(rename = "T")]
    pub steps: usize,
    pub layer: usize,
    pub output_error: f64,
    pub activation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub format_version: u32,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub ann_accuracy: f64,
    #[serde(rename = "snn_accuracy_by_T")]
    pub snn_accuracy_by_t: BTreeMap<usize, f64>,
    #[serde(rename = "conversion_loss_by_T")]
    pub conversion_loss_by_t: BTreeMap<usize, f64>,
    pub per_layer_error: Vec<LayerErrorRow>,
    pub shift_sweep: Vec<SweepPoint>,
    #[serde(rename = "estimate_by_T")]
    pub estimate_by_t: BTreeMap<usize, f64>,
}

impl ConversionReport {
    /// Evaluates a fixed `snn` against `ann` at every T in `t_list`.
    pub fn build(
        ann: &AnnModel,
        snn: &SnnModel,
        data: &Dataset,
        t_list: &[usize],
        seed: Option<u64>,
        config: serde_json::Value,
    ) -> Result<Self> {
        if t_list.is_empty() {
            return Err(Error::Config("T list is empty".into()));
        }
        let mut report = ConversionReport {
            format_version: REPORT_FORMAT_VERSION,
            seed,
            config,
            ann_accuracy: 0.0,
            snn_accuracy_by_t: BTreeMap::new(),
            conversion_loss_by_t: BTreeMap::new(),
            per_layer_error: Vec::new(),
            shift_sweep: Vec::new(),
            estimate_by_t: BTreeMap::new(),
        };
        for &steps in t_list {
            let stats = evaluate_pair(ann, snn, data, steps)?;
            report.ann_accuracy = stats.ann_accuracy();
            let snn_acc = stats.snn_accuracy();
            report.snn_accuracy_by_t.insert(steps, snn_acc);
            report
                .conversion_loss_by_t
                .insert(steps, report.ann_accuracy - snn_acc);
            for (layer, e) in stats.layer_means().into_iter().enumerate() {
                report.per_layer_error.push(LayerErrorRow {
                    steps,
                    layer,
                    output_error: e.output_error,
                    activation_error: e.activation_error,
                });
            }
            if snn.num_firing_layers() > 0 {
                report
                    .estimate_by_t
                    .insert(steps, model_error_estimate(snn, steps)?);
            }
        }
        Ok(report)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_layer_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.per_layer_error)
    }

    pub fn write_sweep_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.shift_sweep)
    }
}

/// Writes `rows` as CSV with a header line.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Format(e.to_string()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}
