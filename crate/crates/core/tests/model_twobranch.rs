//! Architecture, initialization, reversal-node, and masking behaviour.

use dg_core::model::{
    bottleneck_embed, forward, init_two_branch, Arch, GrlConfig, TwoBranchParams,
};
use dg_core::rng::Stream;
use dg_core::tensor::{Tape, Tensor};

fn tiny_arch() -> Arch {
    Arch {
        image_size: 12,
        in_channels: 3,
        conv_channels: (4, 6),
        feature_width: 16,
        class_count: 5,
        domain_count: 3,
        bottleneck: None,
    }
}

fn random_batch(arch: &Arch, b: usize, seed: u64) -> Tensor<f64> {
    let mut stream = Stream::from_parts(&[seed, 0xBA7C4]);
    let n = b * arch.in_channels * arch.image_size * arch.image_size;
    Tensor::from_vec(
        vec![b, arch.in_channels, arch.image_size, arch.image_size],
        (0..n).map(|_| stream.range(0.0, 1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn init_is_deterministic_with_zero_biases() {
    let arch = tiny_arch();
    let a: TwoBranchParams<f64> = init_two_branch(&arch, 7).unwrap();
    let b: TwoBranchParams<f64> = init_two_branch(&arch, 7).unwrap();
    assert_eq!(a, b);
    let c: TwoBranchParams<f64> = init_two_branch(&arch, 8).unwrap();
    assert_ne!(a, c);

    for name in ["trunk_b", "class_b", "domain_b"] {
        let (_, t) = a.tensors().into_iter().find(|(n, _)| *n == name).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0), "{name} not zero");
    }
}

#[test]
fn init_matches_uniform_variance() {
    // pool weights normalized by each layer's bound a; the normalized draws
    // are uniform(-1, 1) with std 1/sqrt(3)
    let arch = Arch {
        image_size: 16,
        in_channels: 3,
        conv_channels: (8, 16),
        feature_width: 64,
        class_count: 7,
        domain_count: 4,
        bottleneck: None,
    };
    let mut normalized: Vec<f64> = Vec::new();
    for seed in 0..3u64 {
        let params: TwoBranchParams<f64> = init_two_branch(&arch, seed).unwrap();
        let fan = |name: &str| -> (usize, usize) {
            match name {
                "conv1" => (3 * 9, 8 * 9),
                "conv2" => (8 * 9, 16 * 9),
                "trunk_w" => (params.arch.flat_width(), 64),
                "class_w" => (64, 7),
                "domain_w" => (64, 4),
                _ => unreachable!(),
            }
        };
        for (name, t) in params.tensors() {
            if name.ends_with("_b") {
                continue;
            }
            let (fi, fo) = fan(name);
            let a = (6.0 / (fi + fo) as f64).sqrt();
            normalized.extend(t.data().iter().map(|&w| w / a));
        }
    }
    assert!(normalized.len() >= 10_000, "pooled {}", normalized.len());
    let mean: f64 = normalized.iter().sum::<f64>() / normalized.len() as f64;
    let var: f64 =
        normalized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / normalized.len() as f64;
    let std = var.sqrt();
    let expect = 1.0 / 3.0f64.sqrt();
    assert!(
        (std - expect).abs() / expect <= 0.10,
        "std {std} vs {expect}"
    );
    assert!(normalized.iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn all_ones_mask_keeps_class_logits_identical() {
    let arch = tiny_arch();
    let params: TwoBranchParams<f64> = init_two_branch(&arch, 3).unwrap();
    let batch = random_batch(&arch, 4, 1);

    let mut tape_plain = Tape::new();
    let plain = forward(&mut tape_plain, &params, &batch, &GrlConfig::off(), None).unwrap();
    let mut tape_masked = Tape::new();
    let ones = Tensor::filled(vec![4, arch.feature_width], 1.0);
    let masked = forward(
        &mut tape_masked,
        &params,
        &batch,
        &GrlConfig::off(),
        Some(&ones),
    )
    .unwrap();

    assert_eq!(
        tape_plain.value(plain.class_logits).data(),
        tape_masked.value(masked.class_logits).data()
    );
}

#[test]
fn grl_forward_is_bit_exact_identity() {
    let arch = tiny_arch();
    let params: TwoBranchParams<f64> = init_two_branch(&arch, 5).unwrap();
    let batch = random_batch(&arch, 3, 2);

    let mut with = Tape::new();
    let w = forward(&mut with, &params, &batch, &GrlConfig::with_lambda(1.0), None).unwrap();
    let mut without = Tape::new();
    let wo = forward(&mut without, &params, &batch, &GrlConfig::off(), None).unwrap();

    assert_eq!(
        with.value(w.domain_logits).data(),
        without.value(wo.domain_logits).data()
    );
    assert_eq!(
        with.value(w.class_logits).data(),
        without.value(wo.class_logits).data()
    );
}

#[test]
fn grl_negates_trunk_gradients_exactly() {
    let arch = tiny_arch();
    let params: TwoBranchParams<f64> = init_two_branch(&arch, 11).unwrap();
    let batch = random_batch(&arch, 4, 3);
    let domains: Vec<usize> = (0..4).map(|i| i % arch.domain_count).collect();

    let run = |grl: &GrlConfig| {
        let mut tape = Tape::new();
        let pass = forward(&mut tape, &params, &batch, grl, None).unwrap();
        let loss = tape.cross_entropy(pass.domain_logits, &domains).unwrap();
        let grads = tape.backward(loss).unwrap();
        pass.param_nodes
            .iter()
            .filter(|(name, _)| TwoBranchParams::<f64>::group_of(name)
                == dg_core::model::ParamGroup::Trunk)
            .map(|(name, node)| (*name, grads.wrt(*node)))
            .collect::<Vec<_>>()
    };

    let reversed = run(&GrlConfig::with_lambda(1.0));
    let identity = run(&GrlConfig::off());
    for ((name, rev), (_, idn)) in reversed.iter().zip(&identity) {
        let negated: Vec<f64> = idn.data().iter().map(|v| -v).collect();
        assert_eq!(rev.data(), negated.as_slice(), "{name}");
    }

    // lambda = 0 with the node enabled blocks the domain branch entirely
    let zeroed = run(&GrlConfig::with_lambda(0.0));
    for (name, g) in &zeroed {
        assert!(g.data().iter().all(|&v| v == 0.0), "{name} got gradient");
    }
}

#[test]
fn masked_features_get_zero_class_gradient() {
    let arch = tiny_arch();
    let params: TwoBranchParams<f64> = init_two_branch(&arch, 13).unwrap();
    let batch = random_batch(&arch, 2, 9);
    let mut mask = Tensor::filled(vec![2, arch.feature_width], 1.0);
    mask.data_mut()[3] = 0.0;
    mask.data_mut()[arch.feature_width + 10] = 0.0;

    let mut tape = Tape::new();
    let pass = forward(&mut tape, &params, &batch, &GrlConfig::off(), Some(&mask)).unwrap();
    let loss = tape.cross_entropy(pass.class_logits, &[0, 1]).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.wrt(pass.feature);
    assert_eq!(g.data()[3], 0.0);
    assert_eq!(g.data()[arch.feature_width + 10], 0.0);
    assert!(g.data().iter().any(|&v| v != 0.0));
}

#[test]
fn bottleneck_embed_shape_and_determinism() {
    let arch = tiny_arch().with_bottleneck(2);
    let params: TwoBranchParams<f64> = init_two_branch(&arch, 17).unwrap();
    let batch = random_batch(&arch, 6, 4);
    let a = bottleneck_embed(&params, &batch).unwrap();
    assert_eq!(a.shape(), &[6, 2]);
    let b = bottleneck_embed(&params, &batch).unwrap();
    assert_eq!(a.data(), b.data());

    let no_bn: TwoBranchParams<f64> = init_two_branch(&tiny_arch(), 17).unwrap();
    assert!(bottleneck_embed(&no_bn, &batch).is_err());
}

#[test]
fn forward_rejects_shape_mismatches() {
    let arch = tiny_arch();
    let params: TwoBranchParams<f64> = init_two_branch(&arch, 1).unwrap();
    let bad = Tensor::zeros(vec![2, 3, 10, 10]);
    let mut tape = Tape::new();
    assert!(forward(&mut tape, &params, &bad, &GrlConfig::off(), None).is_err());

    let batch = random_batch(&arch, 2, 0);
    let bad_mask = Tensor::filled(vec![2, 7], 1.0);
    assert!(forward(
        &mut tape,
        &params,
        &batch,
        &GrlConfig::off(),
        Some(&bad_mask)
    )
    .is_err());
}

#[test]
fn checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let arch = tiny_arch().with_bottleneck(2);
    let mut params: TwoBranchParams<f64> = init_two_branch(&arch, 21).unwrap();
    params.step = 123;
    params.save_checkpoint(dir.path()).unwrap();
    assert!(dir.path().join("ckpt.bin").exists());
    assert!(dir.path().join("ckpt.json").exists());

    let loaded = TwoBranchParams::<f64>::load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded, params);
    assert_eq!(loaded.step, 123);
}
