mod common;

use std::path::Path;

use common::*;
use focusconv::model::*;
use focusconv::synth;
use focusconv::*;
use proptest::prelude::*;

fn compose_by_hand(model: &Model, input: &Tensor) -> Tensor {
    let mut x = input.clone();
    for layer in model.layers() {
        x = match layer {
            Layer::Conv { spec, weights } => conv_standard(&x, spec, weights).unwrap().0,
            Layer::Relu => Tensor::from_fn(x.shape(), |b, c, h, w| x.at(b, c, h, w).max(0.0)).unwrap(),
            Layer::MaxPool { window } => {
                let s = x.shape();
                let (oh, ow) = window.output_dims(s.height, s.width).unwrap();
                Tensor::from_fn(Shape4::new(s.batch, s.channels, oh, ow).unwrap(), |b, c, y, xx| {
                    let mut m = f32::NEG_INFINITY;
                    for ky in 0..window.kernel {
                        for kx in 0..window.kernel {
                            m = m.max(x.at(b, c, y * window.stride + ky, xx * window.stride + kx));
                        }
                    }
                    m
                })
                .unwrap()
            }
        };
    }
    x
}

fn pooled_net() -> Model {
    Model::new(
        "pooled",
        Shape4::new(2, 3, 20, 18).unwrap(),
        vec![
            seeded_conv(3, 8, 3, 1, 1, 4),
            Layer::Relu,
            Layer::MaxPool { window: Window { kernel: 2, stride: 2, padding: 0 } },
            seeded_conv(8, 6, 3, 2, 0, 5),
            Layer::Relu,
            seeded_conv(6, 4, 1, 1, 0, 6),
        ],
    )
    .unwrap()
}

#[test]
fn standard_run_equals_manual_composition() {
    let model = pooled_net();
    let input = synth::random_tensor(model.input_shape(), &mut synth::rng(31)).unwrap();
    let (out, report) = run_standard(&model, &input).unwrap();
    assert!(out.bitwise_eq(&compose_by_hand(&model, &input)));
    let sum: u64 = report.conv_reports().map(|r| r.multiply_adds).sum();
    assert_eq!(report.multiply_adds, sum);
}

#[test]
fn zero_weights_give_zero_output() {
    let spec = ConvSpec::new(3, 1, 1, 3, 4).unwrap();
    let model = Model::new(
        "zeros",
        Shape4::new(1, 3, 8, 8).unwrap(),
        vec![Layer::Conv { spec, weights: Weights::zeros(&spec).unwrap() }, Layer::Relu],
    )
    .unwrap();
    let input = synth::random_tensor(model.input_shape(), &mut synth::rng(32)).unwrap();
    let (out, report) = run_standard(&model, &input).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
    assert_eq!(report.layers.len(), 2);
}

#[test]
fn single_conv_report_is_the_layer_report() {
    let spec = ConvSpec::new(3, 1, 0, 2, 3).unwrap();
    let weights = seeded_weights(&spec, 9).unwrap();
    let model = Model::new("one", Shape4::new(1, 2, 7, 7).unwrap(), vec![Layer::Conv { spec, weights: weights.clone() }]).unwrap();
    let input = synth::random_tensor(model.input_shape(), &mut synth::rng(33)).unwrap();
    let (_, report) = run_standard(&model, &input).unwrap();
    let (_, direct) = conv_standard(&input, &spec, &weights).unwrap();
    let layer = report.layers[0].ops.unwrap();
    assert_eq!((layer.columns_kept, layer.columns_total, layer.multiply_adds), (direct.columns_kept, direct.columns_total, direct.multiply_adds));
    assert_eq!(report.multiply_adds, direct.multiply_adds);
}

#[test]
fn all_relevant_mask_reproduces_standard() {
    let model = pooled_net();
    let input = synth::random_tensor(model.input_shape(), &mut synth::rng(34)).unwrap();
    let full = PixelMask::filled(20, 18, true).unwrap();
    let (std_out, std_report) = run_standard(&model, &input).unwrap();
    let run = run_focused(&model, &input, &full, PatchRule::Any).unwrap();
    assert!(run.output.bitwise_eq(&std_out));
    assert_eq!(run.report.multiply_adds, std_report.multiply_adds);
    assert_eq!(run.exact, run.retained);
}

#[test]
fn rectangle_mask_scales_ops_per_layer() {
    // Valid 3x3 convs on a 102-row input; a top band of r pixel rows keeps r
    // output rows at layer 1, and the band grows by none at later layers
    // because it is anchored to the top edge and ANY keeps rows 0..r.
    let model = Model::new(
        "band",
        Shape4::new(1, 2, 102, 8).unwrap(),
        vec![seeded_conv(2, 4, 3, 1, 0, 1), Layer::Relu, seeded_conv(4, 4, 3, 1, 0, 2)],
    )
    .unwrap();
    let input = synth::random_tensor(model.input_shape(), &mut synth::rng(35)).unwrap();
    let mask = PixelMask::rect(102, 8, 0, 0, 52, 8).unwrap();
    let cmp = compare(&model, &input, &mask, PatchRule::Any).unwrap();
    let ops: Vec<OpReport> = cmp.focused.conv_reports().copied().collect();
    assert_eq!(ops[0].columns_kept, 52 * 6);
    assert_eq!(ops[0].columns_total, 100 * 6);
    assert_eq!(ops[1].columns_kept, 52 * 4);
    assert_eq!(ops[1].columns_total, 98 * 4);
    assert!(cmp.output_equal);
}

#[test]
fn focused_runs_match_standard_on_exact_region_for_blob_masks() {
    let model = pooled_net();
    let mut rng = synth::rng(36);
    for _ in 0..10 {
        let input = synth::random_tensor(model.input_shape(), &mut rng).unwrap();
        let mask = synth::random_blob_mask(20, 18, 2, &mut rng).unwrap();
        let cmp = compare(&model, &input, &mask, PatchRule::Any).unwrap();
        assert_eq!(cmp.mismatches, 0);
        assert!(cmp.exact_positions <= cmp.retained_positions);
    }
}

#[test]
fn model_file_with_weight_sidecars_loads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ConvSpec::new(3, 1, 1, 2, 4).unwrap();
    let w = seeded_weights(&spec, 3).unwrap();
    tensor_write(&w.tensor, dir.path().join("w0.ftns")).unwrap();
    let bias = Tensor::new(Shape4::new(1, 1, 1, 4).unwrap(), w.bias.clone()).unwrap();
    tensor_write(&bias, dir.path().join("b0.ftns")).unwrap();
    std::fs::write(
        dir.path().join("net.json"),
        r#"{"name": "side", "input": [1, 2, 6, 6], "layers": [
            {"kind": "conv", "out_channels": 4, "kernel": 3, "padding": 1, "weights": "w0.ftns", "bias": "b0.ftns"},
            {"kind": "relu"},
            {"kind": "maxpool", "kernel": 2, "stride": 2}
        ]}"#,
    )
    .unwrap();
    let model = model_load(dir.path().join("net.json")).unwrap();
    match &model.layers()[0] {
        Layer::Conv { weights, .. } => assert_eq!(weights, &w),
        _ => panic!("expected conv"),
    }

    // Weights whose in_channels break the chain.
    let bad = Tensor::zeros(Shape4::new(4, 3, 3, 3).unwrap()).unwrap();
    tensor_write(&bad, dir.path().join("w0.ftns")).unwrap();
    let err = model_load(dir.path().join("net.json")).unwrap_err();
    assert!(matches!(err, Error::Validation(_) | Error::Shape(_)), "{err}");

    std::fs::write(dir.path().join("w0.ftns"), b"FTNS\x01").unwrap();
    assert!(model_load(dir.path().join("net.json")).unwrap_err().is_io_class());
    assert!(matches!(model_load(Path::new("/nonexistent/net.json")), Err(Error::Io { .. })));
}

#[test]
fn identity_check_detects_excluded_evidence() {
    let model = two_class_model(24);
    let inputs = vec![two_class_image(24, 0, 3, 3), two_class_image(24, 1, 14, 12)];
    let covering = vec![PixelMask::rect(24, 24, 1, 1, 8, 8).unwrap(), PixelMask::rect(24, 24, 12, 10, 8, 8).unwrap()];
    let ok = accuracy_identity_check(&model, &inputs, &covering, PatchRule::Any).unwrap();
    assert!(ok.identical(), "{ok:?}");
    let away = vec![PixelMask::rect(24, 24, 16, 16, 8, 8).unwrap(), PixelMask::rect(24, 24, 0, 0, 6, 6).unwrap()];
    let bad = accuracy_identity_check(&model, &inputs, &away, PatchRule::Any).unwrap();
    assert_eq!(bad.mismatches, 1);
    assert!(bad.cases.iter().all(|c| c.exact_mismatches == 0));
    let full = vec![PixelMask::filled(24, 24, true).unwrap(); 2];
    assert!(accuracy_identity_check(&model, &inputs, &full, PatchRule::Any).unwrap().identical());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_region_is_bitwise_equal(seed in any::<u64>(), rule_idx in 0usize..3) {
        let rule = [PatchRule::Any, PatchRule::All, PatchRule::Center][rule_idx];
        let model = pooled_net();
        let mut rng = synth::rng(seed);
        let input = synth::random_tensor(model.input_shape(), &mut rng).unwrap();
        let mask = synth::random_blob_mask(20, 18, 3, &mut rng).unwrap();
        let cmp = compare(&model, &input, &mask, rule).unwrap();
        prop_assert!(cmp.output_equal);
        let total: u64 = cmp.focused.conv_reports().map(|r| r.multiply_adds).sum();
        prop_assert_eq!(total, cmp.multiply_adds_focused);
        for (layer, report) in model.layers().iter().zip(&cmp.focused.layers) {
            if let (Layer::Conv { spec, .. }, Some(ops)) = (layer, report.ops) {
                prop_assert_eq!(ops.multiply_adds, ops.columns_kept * spec.ops_per_column());
            }
        }
    }

    #[test]
    fn shrinking_the_mask_never_adds_ops(seed in any::<u64>()) {
        let model = pooled_net();
        let mut rng = synth::rng(seed);
        let input = synth::random_tensor(model.input_shape(), &mut rng).unwrap();
        let small = synth::random_blob_mask(20, 18, 2, &mut rng).unwrap();
        let big = small.union(&synth::random_blob_mask(20, 18, 2, &mut rng).unwrap()).unwrap();
        let a = run_focused(&model, &input, &small, PatchRule::Any).unwrap();
        let b = run_focused(&model, &input, &big, PatchRule::Any).unwrap();
        prop_assert!(a.report.multiply_adds <= b.report.multiply_adds);
        for (la, lb) in a.report.layers.iter().zip(&b.report.layers) {
            prop_assert_eq!(la.output_shape, lb.output_shape);
        }
    }
}
