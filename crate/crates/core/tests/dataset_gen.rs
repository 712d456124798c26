//! Generator oracles: counts, determinism, planted shortcuts, augmentation.

use dg_core::dataset::{
    augment, generate_color_two_class, generate_rotated_shapes, generate_style_shapes, hflip,
    normalize, style, AugConfig, DatasetBundle, Style,
};
use dg_core::rng::Stream;
use dg_core::tensor::Tensor;

const FOUR_STYLES: [Style; 4] = [
    Style::Plain,
    Style::ClassShade,
    Style::ClassTexture,
    Style::SketchOutline,
];

/// Mean over the one-pixel border frame; glyphs never reach it, so this
/// reads back the rendered background directly.
fn border_mean(bundle: &DatasetBundle, index: usize) -> f64 {
    let (h, w) = (bundle.height(), bundle.width());
    let img = bundle.image_slice(index);
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..h {
        for j in 0..w {
            if i == 0 || j == 0 || i == h - 1 || j == w - 1 {
                // channel 0 suffices for grayscale styles
                total += img[i * w + j];
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn style_shapes_cell_counts_are_exact() {
    let bundle = generate_style_shapes(7, &FOUR_STYLES, 40, 16, 7).unwrap();
    assert_eq!(bundle.len(), 7 * 4 * 40);
    assert_eq!(bundle.class_count(), 7);
    assert_eq!(bundle.domain_count(), 4);
    for c in 0..7 {
        for d in 0..4 {
            assert_eq!(bundle.cell_indices(c, d).len(), 40, "cell ({c}, {d})");
        }
    }
}

#[test]
fn style_shapes_regeneration_is_bit_identical() {
    let a = generate_style_shapes(3, &FOUR_STYLES[..2], 5, 16, 123).unwrap();
    let b = generate_style_shapes(3, &FOUR_STYLES[..2], 5, 16, 123).unwrap();
    assert_eq!(a, b);
    let raw_a: Vec<u64> = a.raw_data().iter().map(|v| v.to_bits()).collect();
    let raw_b: Vec<u64> = b.raw_data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(raw_a, raw_b);

    let c = generate_style_shapes(3, &FOUR_STYLES[..2], 5, 16, 124).unwrap();
    assert_ne!(a.raw_data(), c.raw_data());
}

#[test]
fn style_shapes_rejects_bad_config() {
    assert!(generate_style_shapes(11, &FOUR_STYLES, 4, 16, 0).is_err());
    assert!(generate_style_shapes(3, &[], 4, 16, 0).is_err());
    assert!(generate_style_shapes(3, &FOUR_STYLES, 4, 8, 0).is_err());
}

#[test]
fn class_shade_background_matches_table() {
    let bundle = generate_style_shapes(10, &[Style::ClassShade], 8, 16, 5).unwrap();
    for idx in 0..bundle.len() {
        let k = bundle.class_of(idx);
        let expected = style::shade_level(k);
        let got = border_mean(&bundle, idx);
        assert!(
            (got - expected).abs() <= 0.02,
            "class {k}: border mean {got} vs shade {expected}"
        );
    }
}

#[test]
fn class_shade_supports_depth_zero_background_classifier() {
    // planted shortcut: nearest shade-table entry from the mean background
    // intensity must classify >= 95% of the training-domain images
    let bundle = generate_style_shapes(10, &[Style::ClassShade], 20, 16, 9).unwrap();
    let mut correct = 0;
    for idx in 0..bundle.len() {
        let bg = border_mean(&bundle, idx);
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for k in 0..10 {
            let err = (bg - style::shade_level(k)).abs();
            if err < best_err {
                best_err = err;
                best = k;
            }
        }
        if best == bundle.class_of(idx) {
            correct += 1;
        }
    }
    let acc = correct as f64 / bundle.len() as f64;
    assert!(acc >= 0.95, "depth-0 shortcut accuracy {acc}");
}

#[test]
fn color_two_class_full_correlation_is_red_for_class_zero() {
    let bundle = generate_color_two_class(1.0, 50, 3).unwrap();
    let plane = bundle.height() * bundle.width();
    for idx in 0..bundle.len() {
        if bundle.class_of(idx) != 0 {
            continue;
        }
        let img = bundle.image_slice(idx);
        let red: f64 = img[..plane].iter().sum();
        let green: f64 = img[plane..2 * plane].iter().sum();
        assert!(red > green, "sample {idx} not red-dominant");
    }
}

#[test]
fn color_two_class_half_correlation_is_balanced() {
    let bundle = generate_color_two_class(0.5, 1000, 11).unwrap();
    let plane = bundle.height() * bundle.width();
    let mut agree = 0;
    for idx in 0..bundle.len() {
        let img = bundle.image_slice(idx);
        let red: f64 = img[..plane].iter().sum();
        let green: f64 = img[plane..2 * plane].iter().sum();
        let color = if red > green { 0 } else { 1 };
        if color == bundle.class_of(idx) {
            agree += 1;
        }
    }
    let rate = agree as f64 / bundle.len() as f64;
    assert!((rate - 0.5).abs() <= 0.03, "agreement rate {rate}");
}

#[test]
fn color_two_class_empty_bundle() {
    let bundle = generate_color_two_class(0.7, 0, 1).unwrap();
    assert!(bundle.is_empty());
    assert_eq!(bundle.class_count(), 2);
    assert_eq!(bundle.domain_count(), 2);
}

#[test]
fn rotated_single_angle_single_domain() {
    let bundle = generate_rotated_shapes(&[0.0], 10, 3, 16, 2).unwrap();
    assert_eq!(bundle.domain_count(), 1);
    assert_eq!(bundle.len(), 30);
}

#[test]
fn rotated_disk_is_symmetric_under_half_turn() {
    let bundle = generate_rotated_shapes(&[0.0, 180.0], 1, 10, 16, 4).unwrap();
    let plane = 3 * 16 * 16;
    let mut means = [vec![0.0f64; plane], vec![0.0f64; plane]];
    let mut counts = [0usize; 2];
    for idx in 0..bundle.len() {
        let d = bundle.domain_of(idx);
        counts[d] += 1;
        for (p, v) in bundle.image_slice(idx).iter().enumerate() {
            means[d][p] += v;
        }
    }
    for d in 0..2 {
        for v in means[d].iter_mut() {
            *v /= counts[d] as f64;
        }
    }
    for p in 0..plane {
        assert!(
            (means[0][p] - means[1][p]).abs() <= 0.02,
            "pixel {p}: {} vs {}",
            means[0][p],
            means[1][p]
        );
    }
}

#[test]
fn rotated_table_sized_bundle() {
    let angles = [0.0, 15.0, 30.0, 45.0, 60.0, 75.0];
    let bundle = generate_rotated_shapes(&angles, 10, 20, 16, 6).unwrap();
    assert_eq!(bundle.len(), 1200);
    assert_eq!(bundle.domain_count(), 6);
}

#[test]
fn rotated_rejects_duplicate_angles() {
    assert!(generate_rotated_shapes(&[0.0, 15.0, 0.0], 10, 2, 16, 0).is_err());
}

#[test]
fn augment_identity_configuration() {
    let cfg = AugConfig {
        crop_enabled: false,
        flip_probability: 0.0,
        jitter_range: (1.0, 1.0),
        grayscale_probability: 0.0,
        ..AugConfig::default()
    };
    let bundle = generate_style_shapes(3, &[Style::CartoonFlat], 2, 16, 8).unwrap();
    let img = bundle.image(0);
    let mut stream = Stream::from_parts(&[1]);
    let out = augment(&img, &cfg, &mut stream).unwrap();
    let expected = normalize(&img, &cfg);
    assert_eq!(out.data(), expected.data());
}

#[test]
fn hflip_is_an_involution() {
    let bundle = generate_style_shapes(2, &[Style::PaintJitter], 1, 16, 10).unwrap();
    let img = bundle.image(0);
    let back = hflip(&hflip(&img));
    assert_eq!(back.data(), img.data());
}

#[test]
fn grayscale_branch_equalizes_channels() {
    let cfg = AugConfig {
        crop_enabled: false,
        flip_probability: 0.0,
        jitter_range: (1.0, 1.0),
        grayscale_probability: 1.0,
        normalize_mean: [0.0, 0.0, 0.0],
        normalize_std: [1.0, 1.0, 1.0],
    };
    let bundle = generate_style_shapes(2, &[Style::CartoonFlat], 1, 16, 12).unwrap();
    let mut stream = Stream::from_parts(&[2]);
    let out = augment(&bundle.image(0), &cfg, &mut stream).unwrap();
    let plane = 16 * 16;
    let d = out.data();
    for p in 0..plane {
        assert!((d[p] - d[plane + p]).abs() < 1e-12);
        assert!((d[p] - d[2 * plane + p]).abs() < 1e-12);
    }
}

#[test]
fn augment_rejects_bad_config() {
    let cfg = AugConfig {
        flip_probability: 1.5,
        ..AugConfig::default()
    };
    let img = Tensor::zeros(vec![3, 16, 16]);
    let mut stream = Stream::from_parts(&[3]);
    assert!(augment(&img, &cfg, &mut stream).is_err());
}

#[test]
fn bundle_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = generate_style_shapes(4, &FOUR_STYLES[..3], 6, 16, 77).unwrap();
    bundle.save(dir.path()).unwrap();
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("data.bin").exists());
    assert!(dir.path().join("labels.csv").exists());

    let loaded = DatasetBundle::load(dir.path()).unwrap();
    assert_eq!(loaded, bundle);
}

#[test]
fn pixel_values_stay_in_unit_interval() {
    for style in [
        Style::Plain,
        Style::ClassShade,
        Style::ClassTexture,
        Style::SketchOutline,
        Style::CartoonFlat,
        Style::PaintJitter,
    ] {
        let bundle = generate_style_shapes(10, &[style], 3, 16, 21).unwrap();
        for v in bundle.raw_data() {
            assert!((0.0..=1.0).contains(v), "{style:?}: value {v}");
        }
    }
}
