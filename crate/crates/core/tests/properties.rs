mod common;

use proptest::prelude::*;
use snnforge::ann::{loss_and_grads, threshold_relu, Activation, AnnLayer, AnnModel, Connection};
use snnforge::convert::{calibrate, convert, ConversionConfig, ShiftMode, ThresholdMode};
use snnforge::numerics::Tensor;
use snnforge::snn::{closed_form_activation, simulate, simulate_with, Readout, SnnLayer, SnnModel};
use snnforge::Dataset;

fn single_neuron(v_th: f64, readout: Readout) -> SnnModel {
    SnnModel::new(
        vec![1],
        vec![SnnLayer::Weighted {
            connection: Connection::Dense {
                weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                bias: Tensor::zeros(&[1]),
            },
            v_th,
        }],
        readout,
    )
    .unwrap()
}

fn random_dataset(seed: u64, model: &AnnModel, n: usize) -> Dataset {
    let mut rng = common::rng(seed);
    let inputs: Vec<Tensor> = (0..n)
        .map(|_| common::random_input(&mut rng, model.input_shape()))
        .collect();
    Dataset::new(
        "random",
        model.input_shape().to_vec(),
        model.num_outputs(),
        inputs,
        vec![0; n],
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn closed_form_equals_simulation_for_constant_drive(
        ratio in -2.0f64..2.0,
        v_th in 0.05f64..5.0,
        steps in 1usize..=128,
    ) {
        let z = ratio * v_th;
        let trace = simulate(&single_neuron(v_th, Readout::SpikeCount), &Tensor::vector(vec![z]), steps).unwrap();
        prop_assert_eq!(trace.layers[0].avg_psp.data()[0], closed_form_activation(z, v_th, steps));
    }

    #[test]
    fn grid_aligned_drive_converts_exactly(k in 0usize..=64, steps in 1usize..=64, v_th in 0.25f64..4.0) {
        let k = k.min(steps);
        let z = k as f64 * v_th / steps as f64;
        let trace = simulate(&single_neuron(v_th, Readout::SpikeCount), &Tensor::vector(vec![z]), steps).unwrap();
        prop_assert_eq!(trace.layers[0].spike_counts[0] as usize, k);
    }

    #[test]
    fn closed_form_within_one_quantum(ratio in 0.0f64..1.0, v_th in 0.05f64..5.0, steps in 1usize..=512) {
        let z = ratio * v_th;
        let a = closed_form_activation(z, v_th, steps);
        prop_assert!((a - z).abs() <= v_th / steps as f64 + 1e-12);
        prop_assert!(a <= z + 1e-9 * v_th);
    }

    #[test]
    fn threshold_relu_stays_in_range(x in -10.0f64..10.0, y_th in 0.01f64..5.0) {
        let y = threshold_relu(x, y_th);
        prop_assert!((0.0..=y_th).contains(&y));
    }

    #[test]
    fn conservation_and_average_psp_identity(seed in any::<u64>(), depth in 2usize..=3, steps in 1usize..=64, spike_out in any::<bool>()) {
        let mut rng = common::rng(seed);
        let readout = if spike_out { Readout::SpikeCount } else { Readout::AccumulatePotential };
        let model = common::random_dense_snn(&mut rng, depth, readout);
        let x = common::random_input(&mut rng, model.input_shape());
        let trace = simulate_with(&model, &x, steps, true).unwrap();
        let t = steps as f64;
        for (layer, (conn, _)) in trace.layers.iter().zip(model.weighted_layers()) {
            let drive_mean = conn.forward(&layer.input_mean).unwrap();
            for i in 0..layer.spike_counts.len() {
                let count = f64::from(layer.spike_counts[i]);
                prop_assert!(layer.spike_counts[i] as usize <= steps);
                prop_assert!((count * layer.v_th - (layer.drive_sum.data()[i] - layer.membrane.data()[i])).abs() <= 1e-9);
                if layer.fires {
                    let expected = drive_mean.data()[i] - layer.membrane.data()[i] / t;
                    prop_assert!((layer.avg_psp.data()[i] - expected).abs() <= 1e-9);
                }
            }
            for s in layer.spikes.as_ref().unwrap() {
                prop_assert!(s.data().iter().all(|&v| v == 0.0 || v == layer.v_th));
            }
        }
    }

    #[test]
    fn zero_input_and_nonpositive_bias_never_spike(seed in any::<u64>(), steps in 1usize..=32) {
        let mut rng = common::rng(seed);
        let model = common::random_dense_snn(&mut rng, 3, Readout::SpikeCount);
        let layers = model
            .layers()
            .iter()
            .map(|l| match l {
                SnnLayer::Weighted { connection: Connection::Dense { weight, bias }, v_th } => SnnLayer::Weighted {
                    connection: Connection::Dense { weight: weight.clone(), bias: bias.map(|b| -b.abs()) },
                    v_th: *v_th,
                },
                other => other.clone(),
            })
            .collect();
        let model = SnnModel::new(model.input_shape().to_vec(), layers, Readout::SpikeCount).unwrap();
        let trace = simulate(&model, &Tensor::zeros(model.input_shape()), steps).unwrap();
        prop_assert!(trace.layers.iter().all(|l| l.spike_counts.iter().all(|&c| c == 0)));
    }

    #[test]
    fn conversion_preserves_weights_and_bounds_shift(seed in any::<u64>(), steps in 1usize..=256) {
        let mut rng = common::rng(seed);
        let ann = common::random_ann(&mut rng, 3);
        let data = random_dataset(seed ^ 1, &ann, 8);
        let calib = calibrate(&ann, &data, ThresholdMode::Max).unwrap();
        let snn = convert(&ann, &calib, &ConversionConfig::new(steps)).unwrap();
        let ann_layers: Vec<_> = ann.weighted_layers().map(|(c, _)| c).collect();
        let snn_layers: Vec<_> = snn.weighted_layers().collect();
        prop_assert_eq!(ann_layers.len(), snn_layers.len());
        let last = ann_layers.len() - 1;
        for (l, (a, (s, v_th))) in ann_layers.iter().zip(&snn_layers).enumerate() {
            prop_assert_eq!(a.weight(), s.weight());
            prop_assert_eq!(*v_th, calib.v_th_per_layer[l]);
            let want = if l == last { 0.0 } else { v_th / (2.0 * steps as f64) };
            for (b, b2) in a.bias().data().iter().zip(s.bias().data()) {
                prop_assert_eq!(*b2, b + want);
            }
        }
    }

    #[test]
    fn calibration_is_monotone_in_the_sample_set(seed in any::<u64>(), n in 1usize..12, extra in 1usize..12) {
        let mut rng = common::rng(seed);
        let ann = common::random_ann(&mut rng, 2);
        let all = random_dataset(seed ^ 7, &ann, n + extra);
        let (subset, _) = all.split_at(n);
        let small = calibrate(&ann, &subset, ThresholdMode::Max).unwrap();
        let large = calibrate(&ann, &all, ThresholdMode::Max).unwrap();
        for (s, l) in small.v_th_per_layer.iter().zip(&large.v_th_per_layer) {
            if small.warnings.is_empty() {
                prop_assert!(l >= s);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradients_match_central_differences(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let classes = 3;
        let model = common::random_ann(&mut rng, classes);
        let inputs: Vec<Tensor> = (0..3).map(|_| common::random_input(&mut rng, model.input_shape())).collect();
        let labels = vec![0, 1, 2];
        let (_, grads) = loss_and_grads(&model, &inputs, &labels).unwrap();
        let h = 1e-5;
        for (li, layer) in model.layers().iter().enumerate() {
            if !matches!(layer, AnnLayer::Weighted { .. }) {
                continue;
            }
            let g = grads.layers[li].as_ref().unwrap();
            for (bias, analytic) in [(false, g.weight.data()), (true, g.bias.data())] {
                for (idx, &a) in analytic.iter().enumerate() {
                    let shifted = |d: f64| {
                        let mut layers = model.layers().to_vec();
                        *common::param_mut(&mut layers, li, bias, idx) += d;
                        AnnModel::new(model.input_shape().to_vec(), layers).unwrap()
                    };
                    let (plus, minus) = (shifted(h), shifted(-h));
                    let pp = common::kink_pattern(&plus, &inputs, 1e-6);
                    if pp.is_none() || pp != common::kink_pattern(&minus, &inputs, 1e-6) {
                        continue;
                    }
                    let numeric = (loss_and_grads(&plus, &inputs, &labels).unwrap().0
                        - loss_and_grads(&minus, &inputs, &labels).unwrap().0)
                        / (2.0 * h);
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    prop_assert!(rel <= 1e-4, "layer {} bias {} index {}: analytic {} numeric {}", li, bias, idx, a, numeric);
                }
            }
        }
    }

    #[test]
    fn relu_network_is_positively_homogeneous(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = common::rng(seed);
        let width = 4;
        let layers = (0..2)
            .map(|i| AnnLayer::Weighted {
                connection: Connection::Dense {
                    weight: common::random_input(&mut rng, &[width, width]).map(|v| v - 0.5),
                    bias: Tensor::zeros(&[width]),
                },
                activation: if i == 0 { Activation::Relu } else { Activation::None },
            })
            .collect();
        let model = AnnModel::new(vec![width], layers).unwrap();
        let x = common::random_input(&mut rng, &[width]);
        let (y, _) = model.forward(&x, false).unwrap();
        let (yc, _) = model.forward(&x.map(|v| v * c), false).unwrap();
        for (a, b) in y.data().iter().zip(yc.data()) {
            prop_assert!((a * c - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn dropout_is_identity_at_inference(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let model = common::random_ann(&mut rng, 3);
        let stripped: Vec<AnnLayer> = model
            .layers()
            .iter()
            .filter(|l| !matches!(l, AnnLayer::Dropout { .. }))
            .cloned()
            .collect();
        let plain = AnnModel::new(model.input_shape().to_vec(), stripped).unwrap();
        let x = common::random_input(&mut rng, model.input_shape());
        prop_assert_eq!(model.forward(&x, true).unwrap(), plain.forward(&x, true).unwrap());
    }
}

#[test]
fn shift_modes_edit_biases_as_configured() {
    let ann = AnnModel::new(
        vec![1],
        vec![
            AnnLayer::Weighted {
                connection: Connection::Dense {
                    weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                    bias: Tensor::vector(vec![0.1]),
                },
                activation: Activation::ThresholdRelu { y_th: 1.0 },
            },
            AnnLayer::Weighted {
                connection: Connection::Dense {
                    weight: Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
                    bias: Tensor::vector(vec![0.2]),
                },
                activation: Activation::None,
            },
        ],
    )
    .unwrap();
    let calib = snnforge::convert::CalibrationResult::from_thresholds(vec![1.0, 2.0]).unwrap();
    let check = |cfg: &ConversionConfig, want: [f64; 2]| {
        let got: Vec<f64> = convert(&ann, &calib, cfg)
            .unwrap()
            .weighted_layers()
            .map(|(c, _)| c.bias().data()[0])
            .collect();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15, "{got:?} vs {want:?}");
        }
    };
    check(&ConversionConfig::new(8), [0.1625, 0.2]);
    let mut cfg = ConversionConfig::new(8);
    cfg.shift_mode = ShiftMode::None;
    check(&cfg, [0.1, 0.2]);
    cfg.shift_mode = ShiftMode::Custom { scale: 0.25 };
    cfg.shift_output_layer = true;
    check(&cfg, [0.35, 0.7]);
}
