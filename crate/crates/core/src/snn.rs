//! Integrate-and-fire simulation with soft reset.
//!
//! Inputs are applied as a constant current at every timestep. Each weighted layer receives
//! its affine/convolution drive (bias included) every step, integrates it into the membrane
//! potential and emits a spike of height `v_th` whenever the potential reaches `v_th`, after
//! which `v_th` is subtracted. The last weighted layer either integrates without firing
//! (`AccumulatePotential`) or fires like the others (`SpikeCount`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::Connection;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{self, Tensor};

/// Relative slack on threshold crossings and on the floor in [`closed_form_activation`].
///
/// Absorbs the rounding drift of repeated additions so that a neuron whose cumulative drive
/// lands on an exact multiple of `v_th` fires the same number of times as the closed form says.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Output layer integrates its drive without firing; scores are potential / T.
    #[default]
    AccumulatePotential,
    /// Output layer fires; scores are its average PSP.
    SpikeCount,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SnnLayer {
    Weighted { connection: Connection, v_th: f64 },
    AvgPool { k: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnModel {
    input_shape: Vec<usize>,
    pub(crate) layers: Vec<SnnLayer>,
    readout: Readout,
}

impl SnnModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<SnnLayer>, readout: Readout) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = match layer {
                SnnLayer::Weighted { connection, v_th } => {
                    if !(*v_th > 0.0 && v_th.is_finite()) {
                        return Err(Error::Config(format!(
                            "layer {i}: v_th must be > 0, got {v_th}"
                        )));
                    }
                    connection.output_shape(&shape)?
                }
                SnnLayer::AvgPool { k, stride } => {
                    numerics::avgpool_output_shape(&shape, *k, *stride)?
                }
            };
        }
        if !matches!(layers.last(), Some(SnnLayer::Weighted { .. })) {
            return Err(Error::Config(
                "an SNN must end with a weighted layer".into(),
            ));
        }
        Ok(SnnModel {
            input_shape,
            layers,
            readout,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[SnnLayer] {
        &self.layers
    }

    pub fn readout(&self) -> Readout {
        self.readout
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }

    pub fn weighted_layers(&self) -> impl Iterator<Item = (&Connection, f64)> + '_ {
        self.layers.iter().filter_map(|l| match l {
            SnnLayer::Weighted { connection, v_th } => Some((connection, *v_th)),
            SnnLayer::AvgPool { .. } => None,
        })
    }

    pub fn num_weighted_layers(&self) -> usize {
        self.weighted_layers().count()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.weighted_layers().map(|(_, v)| v).collect()
    }

    /// Number of weighted layers that emit spikes under the current readout.
    pub fn num_firing_layers(&self) -> usize {
        match self.readout {
            Readout::AccumulatePotential => self.num_weighted_layers() - 1,
            Readout::SpikeCount => self.num_weighted_layers(),
        }
    }
}

/// One soft-reset integrate-and-fire update: returns `(v_next, spike)`.
pub fn if_step(v: f64, drive: f64, v_th: f64) -> (f64, f64) {
    let temp = v + drive;
    if temp >= v_th - BOUNDARY_TOLERANCE * v_th {
        (temp - v_th, v_th)
    } else {
        (temp, 0.0)
    }
}

/// Time-averaged output of an IF neuron under constant drive `z` from rest:
/// `(v_th / T) * clip(floor(z T / v_th), 0, T)`.
pub fn closed_form_activation(z: f64, v_th: f64, steps: usize) -> f64 {
    let t = steps as f64;
    let mut r = z * t / v_th;
    let nearest = r.round();
    if (r - nearest).abs() <= BOUNDARY_TOLERANCE {
        r = nearest;
    }
    let k = r.floor().clamp(0.0, t);
    k * v_th / t
}

/// Per weighted layer record of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub v_th: f64,
    /// False for the output layer under `AccumulatePotential`.
    pub fires: bool,
    /// Spike tensor of every timestep (entries exactly 0 or `v_th`), when recording was requested.
    pub spikes: Option<Vec<Tensor>>,
    pub spike_counts: Vec<u32>,
    /// Membrane potential after the last step.
    pub membrane: Tensor,
    /// Drive (input current plus bias) summed over all steps.
    pub drive_sum: Tensor,
    /// Time-averaged input this layer received (the raw input for the first layer).
    pub input_mean: Tensor,
    /// Time-averaged PSP emitted: spike count * v_th / T.
    pub avg_psp: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub steps: usize,
    pub readout: Readout,
    pub layers: Vec<LayerTrace>,
}

impl SimulationTrace {
    /// Readout scores of the output layer.
    pub fn scores(&self) -> Tensor {
        let last = self.layers.last().expect("at least one weighted layer");
        match self.readout {
            Readout::AccumulatePotential => last.membrane.map(|v| v / self.steps as f64),
            Readout::SpikeCount => last.avg_psp.clone(),
        }
    }

    /// Averaged output of every weighted layer; the last entry is the readout score.
    pub fn layer_outputs(&self) -> Vec<Tensor> {
        let n = self.layers.len();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if i + 1 == n {
                    self.scores()
                } else {
                    l.avg_psp.clone()
                }
            })
            .collect()
    }
}

/// Readout scores and predicted class (lowest index on ties).
pub fn snn_readout(trace: &SimulationTrace) -> (Tensor, usize) {
    let scores = trace.scores();
    let class = scores.argmax();
    (scores, class)
}

struct LayerState {
    v: Vec<f64>,
    counts: Vec<u32>,
    drive_sum: Vec<f64>,
    input_sum: Option<Vec<f64>>,
    spikes: Option<Vec<Tensor>>,
}

/// Runs `steps` timesteps from zero membrane potential, recording per-timestep spikes.
pub fn simulate(model: &SnnModel, x: &Tensor, steps: usize) -> Result<SimulationTrace> {
    simulate_with(model, x, steps, true)
}

/// As [`simulate`]; `record_spikes = false` keeps only counts and sums.
pub fn simulate_with(
    model: &SnnModel,
    x: &Tensor,
    steps: usize,
    record_spikes: bool,
) -> Result<SimulationTrace> {
    if steps < 1 {
        return Err(Error::Config("simulation length T must be >= 1".into()));
    }
    if x.shape() != model.input_shape() {
        return Err(Error::dimension(
            "model input",
            format!("{:?}", model.input_shape()),
            format!("{:?}", x.shape()),
        ));
    }

    // Everything up to and including the first weighted layer's drive is constant in time.
    let first = model
        .layers
        .iter()
        .position(|l| matches!(l, SnnLayer::Weighted { .. }))
        .expect("validated model has a weighted layer");
    let mut first_input = x.clone();
    for layer in &model.layers[..first] {
        if let SnnLayer::AvgPool { k, stride } = layer {
            first_input = numerics::avgpool(&first_input, *k, *stride)?;
        }
    }
    let SnnLayer::Weighted { connection, .. } = &model.layers[first] else {
        unreachable!()
    };
    let first_drive = connection.forward(&first_input)?;

    let n_weighted = model.num_weighted_layers();
    let mut shapes = Vec::with_capacity(n_weighted);
    let mut in_shapes = Vec::with_capacity(n_weighted);
    let mut states = Vec::with_capacity(n_weighted);
    let mut shape = first_input.shape().to_vec();
    for layer in &model.layers[first..] {
        match layer {
            SnnLayer::Weighted { connection, .. } => {
                let in_len: usize = shape.iter().product();
                in_shapes.push(shape.clone());
                shape = connection.output_shape(&shape)?;
                let n: usize = shape.iter().product();
                states.push(LayerState {
                    v: vec![0.0; n],
                    counts: vec![0; n],
                    drive_sum: vec![0.0; n],
                    input_sum: (!states.is_empty()).then(|| vec![0.0; in_len]),
                    spikes: record_spikes.then(|| Vec::with_capacity(steps)),
                });
                shapes.push(shape.clone());
            }
            SnnLayer::AvgPool { k, stride } => {
                shape = numerics::avgpool_output_shape(&shape, *k, *stride)?
            }
        }
    }

    let accumulate_last = model.readout == Readout::AccumulatePotential;
    for _ in 0..steps {
        let mut signal: Option<Tensor> = None;
        let mut w = 0;
        for layer in &model.layers[first..] {
            match layer {
                SnnLayer::Weighted { connection, v_th } => {
                    let state = &mut states[w];
                    let drive = match &signal {
                        None => first_drive.clone(),
                        Some(input) => {
                            if let Some(sum) = state.input_sum.as_mut() {
                                for (s, v) in sum.iter_mut().zip(input.data()) {
                                    *s += v;
                                }
                            }
                            connection.forward_sparse(input)?
                        }
                    };
                    let is_last = w + 1 == n_weighted;
                    let mut out = Tensor::zeros(&shapes[w]);
                    if is_last && accumulate_last {
                        for (i, &d) in drive.data().iter().enumerate() {
                            state.v[i] += d;
                            state.drive_sum[i] += d;
                        }
                    } else {
                        let spikes = out.data_mut();
                        for (i, &d) in drive.data().iter().enumerate() {
                            let (v_next, s) = if_step(state.v[i], d, *v_th);
                            state.v[i] = v_next;
                            state.drive_sum[i] += d;
                            if s > 0.0 {
                                spikes[i] = s;
                                state.counts[i] += 1;
                            }
                        }
                    }
                    if let Some(rec) = state.spikes.as_mut() {
                        rec.push(out.clone());
                    }
                    signal = Some(out);
                    w += 1;
                }
                SnnLayer::AvgPool { k, stride } => {
                    let input = signal
                        .take()
                        .expect("pooling follows a weighted layer here");
                    signal = Some(numerics::avgpool(&input, *k, *stride)?);
                }
            }
        }
    }

    let t = steps as f64;
    let mut layers = Vec::with_capacity(n_weighted);
    for (w, ((_, v_th), state)) in model.weighted_layers().zip(states).enumerate() {
        let shape = &shapes[w];
        let fires = !(w + 1 == n_weighted && accumulate_last);
        let input_mean = match state.input_sum {
            None => first_input.clone(),
            Some(sum) => Tensor::new(
                in_shapes[w].clone(),
                sum.into_iter().map(|s| s / t).collect(),
            )?,
        };
        let avg_psp = Tensor::new(
            shape.clone(),
            state.counts.iter().map(|&c| c as f64 * v_th / t).collect(),
        )?;
        layers.push(LayerTrace {
            v_th,
            fires,
            spikes: state.spikes,
            spike_counts: state.counts,
            membrane: Tensor::new(shape.clone(), state.v)?,
            drive_sum: Tensor::new(shape.clone(), state.drive_sum)?,
            input_mean,
            avg_psp,
        });
    }
    Ok(SimulationTrace {
        steps,
        readout: model.readout,
        layers,
    })
}

/// Predicted class of one input after `steps` timesteps.
pub fn snn_predict(model: &SnnModel, x: &Tensor, steps: usize) -> Result<usize> {
    Ok(snn_readout(&simulate_with(model, x, steps, false)?).1)
}

/// Fraction of samples whose SNN prediction at length `steps` equals the label.
pub fn snn_accuracy(model: &SnnModel, data: &Dataset, steps: usize) -> Result<f64> {
    data.ensure_nonempty("snn_accuracy")?;
    if steps < 1 {
        return Err(Error::Config("simulation length T must be >= 1".into()));
    }
    let hits: Vec<Result<bool>> = data
        .inputs
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(x, &label)| Ok(snn_predict(model, x, steps)? == label))
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / data.len() as f64)
}
