//! Seeded synthetic benchmarks: a uniform-drive probe and a 28x28 stroke-pattern task.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ann::{Activation, AnnLayer, AnnModel, Connection};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Model and data whose hidden pre-activations are i.i.d. uniform on `[0, v_th]`.
///
/// The hidden layer is `v_th * I` with zero bias and `threshold_relu(y_th = v_th)`; inputs are
/// uniform on `[0, 1]^width`. A fixed two-class readout scores `0` against
/// `sum(a) - width * v_th / 2`, and the label is the class that readout picks on the exact
/// activations.
pub fn synth_uniform_benchmark(
    n_samples: usize,
    width: usize,
    v_th: f64,
    seed: u64,
) -> Result<(AnnModel, Dataset)> {
    if n_samples == 0 || width == 0 {
        return Err(Error::Config(
            "synthetic benchmark needs n_samples > 0 and width > 0".into(),
        ));
    }
    if !(v_th > 0.0 && v_th.is_finite()) {
        return Err(Error::Config(format!("v_th must be > 0, got {v_th}")));
    }
    let mut eye = vec![0.0; width * width];
    for i in 0..width {
        eye[i * width + i] = v_th;
    }
    let mut readout = vec![0.0; 2 * width];
    readout[width..].fill(1.0);
    let model = AnnModel::new(
        vec![width],
        vec![
            AnnLayer::Weighted {
                connection: Connection::Dense {
                    weight: Tensor::new(vec![width, width], eye)?,
                    bias: Tensor::zeros(&[width]),
                },
                activation: Activation::ThresholdRelu { y_th: v_th },
            },
            AnnLayer::Weighted {
                connection: Connection::Dense {
                    weight: Tensor::new(vec![2, width], readout)?,
                    bias: Tensor::vector(vec![0.0, -(width as f64) * v_th / 2.0]),
                },
                activation: Activation::None,
            },
        ],
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = (0..n_samples)
        .map(|_| Tensor::vector((0..width).map(|_| rng.random::<f64>()).collect()))
        .collect();
    let labels = inputs
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new("uniform", vec![width], 2, inputs, labels)?.with_provenance(format!(
        "synth_uniform(n={n_samples}, width={width}, v_th={v_th}, seed={seed})"
    ));
    Ok((model, data))
}

/// Knobs of the stroke-pattern task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternConfig {
    pub side: usize,
    pub num_classes: usize,
    pub strokes_per_class: usize,
    /// Std-dev (pixels) of the per-sample jitter of every stroke endpoint.
    pub jitter: f64,
    /// Largest whole-image translation in pixels, per axis.
    pub max_shift: i64,
    /// Std-dev of additive pixel noise.
    pub noise: f64,
    /// Per-sample intensity scale is drawn from `[min_intensity, 1]`.
    pub min_intensity: f64,
    /// Stroke half-width in pixels is `1 + e` with `e` exponential of this mean (capped at 3).
    pub boldness: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig {
            side: 28,
            num_classes: 10,
            strokes_per_class: 3,
            jitter: 1.5,
            max_shift: 2,
            noise: 0.0,
            min_intensity: 0.5,
            boldness: 0.4,
        }
    }
}

type Stroke = [(f64, f64); 2];

fn segment_distance(p: (f64, f64), s: &Stroke) -> f64 {
    let [(ax, ay), (bx, by)] = *s;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn render(side: usize, strokes: &[Stroke], half_width: f64) -> Vec<f64> {
    let mut img = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let p = (c as f64, r as f64);
            let d = strokes
                .iter()
                .map(|s| segment_distance(p, s))
                .fold(f64::INFINITY, f64::min);
            img[r * side + c] = (half_width + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    img
}

/// Ten classes of hand-drawn-looking images: each class is a fixed set of line strokes; every
/// sample jitters the stroke endpoints, translates, rescales intensity and adds noise.
#[derive(Debug, Clone)]
pub struct PatternTask {
    config: PatternConfig,
    prototypes: Vec<Vec<Stroke>>,
}

impl PatternTask {
    pub fn new(config: PatternConfig, seed: u64) -> Result<Self> {
        if config.side < 8 || config.num_classes < 2 || config.strokes_per_class == 0 {
            return Err(Error::Config(
                "pattern task needs side >= 8, >= 2 classes and >= 1 stroke".into(),
            ));
        }
        if !(config.noise >= 0.0
            && config.jitter >= 0.0
            && config.boldness >= 0.0
            && (0.0..=1.0).contains(&config.min_intensity))
        {
            return Err(Error::Config(
                "pattern noise, jitter and boldness must be >= 0 and min_intensity in [0, 1]"
                    .into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = 4.0;
        let hi = config.side as f64 - 5.0;
        let prototypes = (0..config.num_classes)
            .map(|_| {
                (0..config.strokes_per_class)
                    .map(|_| {
                        [
                            (rng.random_range(lo..hi), rng.random_range(lo..hi)),
                            (rng.random_range(lo..hi), rng.random_range(lo..hi)),
                        ]
                    })
                    .collect()
            })
            .collect();
        Ok(PatternTask { config, prototypes })
    }

    pub fn config(&self) -> &PatternConfig {
        &self.config
    }

    /// `n` samples with balanced labels in random order, drawn from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let cfg = &self.config;
        let side = cfg.side;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, cfg.jitter).map_err(|e| Error::Config(e.to_string()))?;
        let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let class = rng.random_range(0..cfg.num_classes);
            let strokes: Vec<Stroke> = self.prototypes[class]
                .iter()
                .map(|s| s.map(|(x, y)| (x + jitter.sample(&mut rng), y + jitter.sample(&mut rng))))
                .collect();
            let extra = if cfg.boldness > 0.0 {
                -cfg.boldness * (1.0 - rng.random::<f64>()).ln()
            } else {
                0.0
            };
            let base = render(side, &strokes, 1.0 + extra.min(3.0));
            let dx = rng.random_range(-cfg.max_shift..=cfg.max_shift);
            let dy = rng.random_range(-cfg.max_shift..=cfg.max_shift);
            let scale = rng.random_range(cfg.min_intensity..=1.0);
            let mut img = vec![0.0; side * side];
            for r in 0..side as i64 {
                for c in 0..side as i64 {
                    let (sr, sc) = (r - dy, c - dx);
                    let v = if (0..side as i64).contains(&sr) && (0..side as i64).contains(&sc) {
                        base[(sr as usize) * side + sc as usize]
                    } else {
                        0.0
                    };
                    img[(r as usize) * side + c as usize] =
                        (scale * v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            inputs.push(Tensor::new(vec![side * side], img)?);
            labels.push(class);
        }
        Ok(Dataset::new(
            "patterns",
            vec![side * side],
            cfg.num_classes,
            inputs,
            labels,
        )?
        .with_provenance(format!("synth_patterns(n={n}, seed={seed})")))
    }
}
