#![allow(dead_code)]

use std::path::Path;

use focusconv::model::{Layer, Model};
use focusconv::pgm::depth_write;
use focusconv::relevance::{GroundTruth, GtObject};
use focusconv::synth;
use focusconv::{ConvSpec, PixelMask, Shape4, Tensor, Weights, Window};
use rand::Rng;

/// Input, conv spec, and weights for one random small convolution.
pub struct ConvCase {
    pub input: Tensor,
    pub spec: ConvSpec,
    pub weights: Weights,
}

pub fn random_conv_case(rng: &mut impl Rng) -> ConvCase {
    let k: usize = [1, 3, 5][rng.gen_range(0..3)];
    let stride = rng.gen_range(1..=2);
    let padding = rng.gen_range(0..=1);
    let min_extent = k.saturating_sub(2 * padding).max(1);
    let h = rng.gen_range(min_extent..=16);
    let w = rng.gen_range(min_extent..=16);
    let cin = rng.gen_range(1..=8);
    let cout = rng.gen_range(1..=8);
    let batch = rng.gen_range(1..=2);
    let spec = ConvSpec::new(k, stride, padding, cin, cout).unwrap();
    let input = synth::random_tensor(Shape4::new(batch, cin, h, w).unwrap(), rng).unwrap();
    let wt = synth::random_tensor(Shape4::new(cout, cin, k, k).unwrap(), rng).unwrap();
    let bias = (0..cout).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    ConvCase { input, spec, weights: Weights::new(wt, bias).unwrap() }
}

pub fn random_mask_for(input: &Tensor, rng: &mut impl Rng) -> PixelMask {
    let s = input.shape();
    if rng.gen_bool(0.5) {
        let blobs = rng.gen_range(0..=3);
        synth::random_blob_mask(s.height, s.width, blobs, rng).unwrap()
    } else {
        let p = rng.gen_range(0.0..1.0);
        synth::random_pixel_mask(s.height, s.width, p, rng).unwrap()
    }
}

/// The (1,1,4,6) input of the worked 3x3 example.
pub fn worked_input() -> Tensor {
    Tensor::from_fn(Shape4::new(1, 1, 4, 6).unwrap(), |_, _, h, w| (h * 6 + w + 1) as f32).unwrap()
}

/// Relevant only in columns 3..6, which drops the two leftmost 3x3 patches.
pub fn worked_two_patch_mask() -> PixelMask {
    PixelMask::from_fn(4, 6, |_, w| w >= 3).unwrap()
}

/// Brute-force receptive-field test for one output position, with the mask
/// edge-replicated into the padding.
pub fn rf_relevant(mask: &PixelMask, window: Window, rule: focusconv::PatchRule, oh: usize, ow: usize) -> bool {
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, mask.height() as isize - 1) as usize;
        let x = x.clamp(0, mask.width() as isize - 1) as usize;
        mask.get(y, x)
    };
    let oy = (oh * window.stride) as isize - window.padding as isize;
    let ox = (ow * window.stride) as isize - window.padding as isize;
    let mut any = false;
    let mut all = true;
    for ky in 0..window.kernel as isize {
        for kx in 0..window.kernel as isize {
            let r = at(oy + ky, ox + kx);
            any |= r;
            all &= r;
        }
    }
    match rule {
        focusconv::PatchRule::Any => any,
        focusconv::PatchRule::All => all,
        focusconv::PatchRule::Center => {
            let half = (window.kernel / 2) as isize;
            at(oy + half, ox + half)
        }
    }
}

pub fn rf_oracle_mask(mask: &PixelMask, window: Window, rule: focusconv::PatchRule) -> PixelMask {
    let (oh, ow) = window.output_dims(mask.height(), mask.width()).unwrap();
    PixelMask::from_fn(oh, ow, |y, x| rf_relevant(mask, window, rule, y, x)).unwrap()
}

pub fn seeded_conv(cin: usize, cout: usize, k: usize, stride: usize, padding: usize, seed: u64) -> Layer {
    let spec = ConvSpec::new(k, stride, padding, cin, cout).unwrap();
    Layer::Conv { spec, weights: focusconv::model::seeded_weights(&spec, seed).unwrap() }
}

/// conv3x3/16 -> relu -> conv3x3/32 -> relu -> conv3x3/32, padding 1.
pub fn three_conv_net(h: usize, w: usize) -> Model {
    Model::new(
        "three-conv",
        Shape4::new(1, 3, h, w).unwrap(),
        vec![
            seeded_conv(3, 16, 3, 1, 1, 1),
            Layer::Relu,
            seeded_conv(16, 32, 3, 1, 1, 2),
            Layer::Relu,
            seeded_conv(32, 32, 3, 1, 1, 3),
        ],
    )
    .unwrap()
}

/// Conv with a single 1 at the kernel center mapping channel c to channel c.
pub fn identity_conv(channels: usize) -> Layer {
    let spec = ConvSpec::new(3, 1, 1, channels, channels).unwrap();
    let t = Tensor::from_fn(Shape4::new(channels, channels, 3, 3).unwrap(), |o, i, y, x| {
        if o == i && y == 1 && x == 1 {
            1.0
        } else {
            0.0
        }
    })
    .unwrap();
    Layer::Conv { spec, weights: Weights::without_bias(t).unwrap() }
}

pub fn two_class_model(size: usize) -> Model {
    Model::new(
        "two-class",
        Shape4::new(1, 2, size, size).unwrap(),
        vec![
            identity_conv(2),
            Layer::Relu,
            Layer::MaxPool { window: Window { kernel: 2, stride: 2, padding: 0 } },
            identity_conv(2),
        ],
    )
    .unwrap()
}

/// One image of the synthetic two-class set: channel 0 carries a 0.2
/// background; the class's channel carries a bright 4x4 blob at (top, left).
pub fn two_class_image(size: usize, class: usize, top: usize, left: usize) -> Tensor {
    Tensor::from_fn(Shape4::new(1, 2, size, size).unwrap(), |_, c, h, w| {
        let in_blob = h >= top && h < top + 4 && w >= left && w < left + 4;
        match (c == class && in_blob, c) {
            (true, _) => 1.0,
            (false, 0) => 0.2,
            _ => 0.0,
        }
    })
    .unwrap()
}

/// Depth ramp plus GT columns chosen so the threshold loop ends at
/// `[0.20, 0.75]`, i.e. exactly 55% of a 100-wide image relevant.
pub fn write_55_percent_pair(depth_dir: &Path, gt_dir: &Path, stem: &str, height: usize) {
    let depth = synth::horizontal_ramp(height, 100).unwrap();
    depth_write(&depth, depth_dir.join(format!("{stem}.pgm"))).unwrap();
    let gt = GroundTruth::new(
        100,
        height,
        vec![GtObject::from_box(20, 0, 1, height.min(3)), GtObject::from_box(74, height - 1, 1, 1)],
    )
    .unwrap();
    gt.write(gt_dir.join(format!("{stem}.json"))).unwrap();
}
