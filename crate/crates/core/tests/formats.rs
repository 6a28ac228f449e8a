mod common;

use proptest::prelude::*;
use serde_json::{json, Value};
use snnforge::snn::Readout;
use snnforge::workbench::{
    load_ann, load_dataset, load_idx, load_model, load_snn, parse_idx, save_dataset, save_model,
    synth_uniform_benchmark, IdxOptions, ModelFile, ModelKind, PatternConfig, PatternTask,
};
use snnforge::Error;

fn fixture_byte(i: usize, r: usize, c: usize) -> u8 {
    if !(r + c + i).is_multiple_of(5) {
        ((i * 61 + r * 9 + c * 3) % 256) as u8
    } else {
        255
    }
}

#[test]
fn bundled_idx_fixture_matches_its_byte_layout() {
    let raw = std::fs::read(common::fixture("four_images.idx3")).unwrap();
    assert_eq!(
        &raw[..16],
        &[0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 28, 0, 0, 0, 28]
    );
    assert_eq!(raw.len(), 16 + 4 * 784);
    let d = load_idx(
        &common::fixture("four_images.idx3"),
        &common::fixture("four_labels.idx1"),
        IdxOptions::default(),
    )
    .unwrap();
    assert_eq!(d.len(), 4);
    assert_eq!(d.input_shape, vec![1, 28, 28]);
    assert_eq!(d.labels, vec![7, 2, 1, 0]);
    assert!(d.warnings.is_empty());
    for (i, x) in d.inputs.iter().enumerate() {
        for r in 0..28 {
            for c in 0..28 {
                assert_eq!(
                    x.data()[r * 28 + c],
                    f64::from(fixture_byte(i, r, c)) / 255.0
                );
            }
        }
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(d.inputs[0].data()[0], 1.0);
}

#[test]
fn images_file_given_as_labels_is_rejected() {
    let img = std::fs::read(common::fixture("four_images.idx3")).unwrap();
    let err = parse_idx(&img, &img, IdxOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    let msg = err.to_string();
    assert!(
        msg.contains("0x00000803") && msg.contains("0x00000801"),
        "{msg}"
    );
}

#[test]
fn malformed_idx_variants_behave_as_documented() {
    let cases = common::malformed_idx_cases();
    assert_eq!(cases.len(), 7);
    for case in cases {
        let got = parse_idx(&case.images, &case.labels, IdxOptions::default());
        match case.expect {
            Some(pred) => {
                let e = got.expect_err(case.name);
                assert!(pred(&e), "{}: {e:?}", case.name);
            }
            None => {
                let d = got.unwrap();
                assert_eq!(d.warnings.len(), 1, "{}", case.name);
                assert!(matches!(
                    parse_idx(&case.images, &case.labels, IdxOptions { strict: true }),
                    Err(Error::Format(_))
                ));
            }
        }
    }
}

#[test]
fn missing_idx_file_is_io_error() {
    let err = load_idx(
        &common::fixture("absent.idx3"),
        &common::fixture("four_labels.idx1"),
        IdxOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

fn ann_json() -> Value {
    serde_json::from_str(&std::fs::read_to_string(common::fixture("exact_grid_ann.json")).unwrap())
        .unwrap()
}

#[test]
fn other_format_versions_are_rejected() {
    let mut v = ann_json();
    v["format_version"] = json!(2);
    let err = ModelFile::from_json(&v.to_string()).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("format_version"));
}

#[test]
fn snn_file_without_v_th_is_rejected() {
    let mut v = ann_json();
    v["kind"] = json!("snn");
    let err = ModelFile::from_json(&v.to_string())
        .and_then(|f| f.to_snn())
        .unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("v_th"), "{err}");
}

#[test]
fn unknown_layer_type_and_bad_lengths_are_rejected() {
    let mut v = ann_json();
    v["layers"][0]["type"] = json!("maxpool");
    assert!(matches!(
        ModelFile::from_json(&v.to_string()),
        Err(Error::Format(_))
    ));

    let mut v = ann_json();
    v["layers"][1]["weight"].as_array_mut().unwrap().pop();
    assert!(matches!(
        ModelFile::from_json(&v.to_string()).and_then(|f| f.to_ann()),
        Err(Error::Format(_))
    ));

    let mut v = ann_json();
    v["layers"][2]["shape"] = json!([4, 2]);
    assert!(ModelFile::from_json(&v.to_string())
        .and_then(|f| f.to_ann())
        .is_err());
}

#[test]
fn model_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ann = load_ann(&common::fixture("exact_grid_ann.json")).unwrap();
    let path = dir.path().join("ann.json");
    save_model(&ModelFile::from_ann(&ann, json!({"seed": 1})), &path).unwrap();
    assert_eq!(load_ann(&path).unwrap(), ann);
    assert_eq!(load_model(&path).unwrap().kind, ModelKind::Ann);
    assert!(load_snn(&path).is_err());

    let mut rng = common::rng(4);
    let snn = common::random_conv_snn(&mut rng, Readout::SpikeCount);
    let path = dir.path().join("snn.json");
    save_model(&ModelFile::from_snn(&snn, Value::Null), &path).unwrap();
    assert_eq!(load_snn(&path).unwrap(), snn);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_models_round_trip_bit_exactly(seed in any::<u64>(), spike_out in any::<bool>()) {
        let mut rng = common::rng(seed);
        let ann = common::random_ann(&mut rng, 4);
        let text = ModelFile::from_ann(&ann, json!({"seed": seed})).to_json().unwrap();
        let back = ModelFile::from_json(&text).unwrap().to_ann().unwrap();
        prop_assert_eq!(&back, &ann);

        let readout = if spike_out { Readout::SpikeCount } else { Readout::AccumulatePotential };
        let snn = common::random_dense_snn(&mut rng, 3, readout);
        let text = ModelFile::from_snn(&snn, Value::Null).to_json().unwrap();
        prop_assert_eq!(ModelFile::from_json(&text).unwrap().to_snn().unwrap(), snn);
    }
}

#[test]
fn dataset_files_round_trip() {
    let (_, data) = synth_uniform_benchmark(64, 8, 1.0, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.json");
    save_dataset(&data, json!({"seed": 2}), &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), data);
}

#[test]
fn uniform_benchmark_support_and_determinism() {
    let (m1, d1) = synth_uniform_benchmark(10_000 / 32, 32, 0.5, 8).unwrap();
    let (m2, d2) = synth_uniform_benchmark(10_000 / 32, 32, 0.5, 8).unwrap();
    assert_eq!((m1.clone(), d1.clone()), (m2, d2));
    let (conn, _) = m1.weighted_layers().next().unwrap();
    let z: Vec<f64> = d1
        .inputs
        .iter()
        .flat_map(|x| conn.forward(x).unwrap().into_data())
        .collect();
    assert!(z.iter().all(|v| (0.0..=0.5).contains(v)));
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let sigma = 0.5 / 12f64.sqrt() / (z.len() as f64).sqrt();
    assert!((mean - 0.25).abs() < 3.0 * sigma, "mean {mean}");
    assert!(matches!(
        synth_uniform_benchmark(0, 4, 1.0, 0),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        synth_uniform_benchmark(4, 4, 0.0, 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn pattern_task_is_balanced_and_seeded() {
    let task = PatternTask::new(PatternConfig::default(), 1).unwrap();
    let d = task.sample(2000, 9).unwrap();
    assert_eq!(d, task.sample(2000, 9).unwrap());
    assert_ne!(d, task.sample(2000, 10).unwrap());
    for class in 0..10 {
        let count = d.labels.iter().filter(|&&l| l == class).count();
        assert!((120..=280).contains(&count), "class {class}: {count}");
    }
    let other = PatternTask::new(PatternConfig::default(), 2)
        .unwrap()
        .sample(10, 9)
        .unwrap();
    assert_ne!(other.inputs, d.inputs[..10].to_vec());
}
