//! Two-branch architecture: shared convolutional trunk producing a feature
//! vector `g`, a class head, and a domain head. The domain path can route
//! through a gradient-reversal node; the class path can see a masked copy of
//! `g` (the domain head always reads the unmasked feature). An optional
//! two-node bottleneck before the class head supports embedding dumps.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DgError, Result};
use crate::rng::{salt, Stream};
use crate::scalar::Scalar;
use crate::tensor::{NodeId, Tape, Tensor};

/// Layer-size descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub image_size: usize,
    pub in_channels: usize,
    pub conv_channels: (usize, usize),
    /// Width of the shared feature `g`.
    pub feature_width: usize,
    pub class_count: usize,
    pub domain_count: usize,
    /// Width of the bottleneck between `g` and the class head, if any.
    pub bottleneck: Option<usize>,
}

impl Arch {
    /// The default trunk for a bundle: conv(3->8) / pool / conv(8->16) /
    /// pool / dense to a 64-wide feature.
    pub fn for_bundle(image_size: usize, class_count: usize, domain_count: usize) -> Arch {
        Arch {
            image_size,
            in_channels: 3,
            conv_channels: (8, 16),
            feature_width: 64,
            class_count,
            domain_count,
            bottleneck: None,
        }
    }

    pub fn with_bottleneck(mut self, width: usize) -> Arch {
        self.bottleneck = Some(width);
        self
    }

    /// Spatial extent after conv -> pool -> conv -> pool.
    fn pooled_extent(&self) -> usize {
        ((self.image_size - 2) / 2).saturating_sub(2) / 2
    }

    /// Flattened width entering the trunk's dense layer.
    pub fn flat_width(&self) -> usize {
        self.conv_channels.1 * self.pooled_extent() * self.pooled_extent()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 12 || self.pooled_extent() == 0 {
            return Err(DgError::Config(format!(
                "image size {} too small for the conv/pool trunk",
                self.image_size
            )));
        }
        if self.in_channels == 0
            || self.conv_channels.0 == 0
            || self.conv_channels.1 == 0
            || self.feature_width == 0
            || self.class_count == 0
            || self.domain_count == 0
        {
            return Err(DgError::Config("zero-width layer in architecture".into()));
        }
        if self.bottleneck == Some(0) {
            return Err(DgError::Config("zero-width bottleneck".into()));
        }
        Ok(())
    }

    /// Class-head input width: the bottleneck if present, else `g`.
    fn class_in(&self) -> usize {
        self.bottleneck.unwrap_or(self.feature_width)
    }
}

/// Gradient-reversal configuration for the domain branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrlConfig {
    pub enabled: bool,
    pub lambda: f64,
}

impl GrlConfig {
    pub fn off() -> GrlConfig {
        GrlConfig {
            enabled: false,
            lambda: 0.0,
        }
    }

    pub fn with_lambda(lambda: f64) -> GrlConfig {
        GrlConfig {
            enabled: true,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(DgError::Config(format!(
                "reversal strength {} must be finite and >= 0",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Which update group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Trunk,
    ClassHead,
    DomainHead,
}

/// Trunk, class-head, and domain-head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBranchParams<T> {
    pub arch: Arch,
    pub conv1: Tensor<T>,
    pub conv2: Tensor<T>,
    pub trunk_w: Tensor<T>,
    pub trunk_b: Tensor<T>,
    pub bottleneck_w: Option<Tensor<T>>,
    pub bottleneck_b: Option<Tensor<T>>,
    pub class_w: Tensor<T>,
    pub class_b: Tensor<T>,
    pub domain_w: Tensor<T>,
    pub domain_b: Tensor<T>,
    /// Optimizer steps applied so far (checkpoint metadata).
    pub step: u64,
}

impl<T: Scalar> TwoBranchParams<T> {
    /// Parameter tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = vec![
            ("conv1", &self.conv1),
            ("conv2", &self.conv2),
            ("trunk_w", &self.trunk_w),
            ("trunk_b", &self.trunk_b),
        ];
        if let (Some(w), Some(b)) = (&self.bottleneck_w, &self.bottleneck_b) {
            out.push(("bottleneck_w", w));
            out.push(("bottleneck_b", b));
        }
        out.push(("class_w", &self.class_w));
        out.push(("class_b", &self.class_b));
        out.push(("domain_w", &self.domain_w));
        out.push(("domain_b", &self.domain_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut out = vec![
            ("conv1", &mut self.conv1),
            ("conv2", &mut self.conv2),
            ("trunk_w", &mut self.trunk_w),
            ("trunk_b", &mut self.trunk_b),
        ];
        if let (Some(w), Some(b)) = (&mut self.bottleneck_w, &mut self.bottleneck_b) {
            out.push(("bottleneck_w", w));
            out.push(("bottleneck_b", b));
        }
        out.push(("class_w", &mut self.class_w));
        out.push(("class_b", &mut self.class_b));
        out.push(("domain_w", &mut self.domain_w));
        out.push(("domain_b", &mut self.domain_b));
        out
    }

    pub fn group_of(name: &str) -> ParamGroup {
        match name {
            "conv1" | "conv2" | "trunk_w" | "trunk_b" => ParamGroup::Trunk,
            "bottleneck_w" | "bottleneck_b" | "class_w" | "class_b" => ParamGroup::ClassHead,
            "domain_w" | "domain_b" => ParamGroup::DomainHead,
            other => unreachable!("unknown parameter {other}"),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

fn glorot_uniform<T: Scalar>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    stream: &mut Stream,
) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_const(stream.range(-a, a)))
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Glorot-uniform weights (`a = sqrt(6 / (fan_in + fan_out))`), zero biases,
/// deterministic by seed.
pub fn init_two_branch<T: Scalar>(arch: &Arch, seed: u64) -> Result<TwoBranchParams<T>> {
    arch.validate()?;
    let mut layer = 0u64;
    let mut next = || {
        layer += 1;
        Stream::from_parts(&[seed, salt::INIT, layer])
    };
    let (c1, c2) = arch.conv_channels;
    let flat = arch.flat_width();
    let g = arch.feature_width;

    let conv1 = glorot_uniform(
        vec![c1, arch.in_channels, 3, 3],
        arch.in_channels * 9,
        c1 * 9,
        &mut next(),
    );
    let conv2 = glorot_uniform(vec![c2, c1, 3, 3], c1 * 9, c2 * 9, &mut next());
    let trunk_w = glorot_uniform(vec![g, flat], flat, g, &mut next());
    let (bottleneck_w, bottleneck_b) = match arch.bottleneck {
        Some(width) => (
            Some(glorot_uniform(vec![width, g], g, width, &mut next())),
            Some(Tensor::zeros(vec![width])),
        ),
        None => (None, None),
    };
    let class_w = glorot_uniform(
        vec![arch.class_count, arch.class_in()],
        arch.class_in(),
        arch.class_count,
        &mut next(),
    );
    let domain_w = glorot_uniform(
        vec![arch.domain_count, g],
        g,
        arch.domain_count,
        &mut next(),
    );

    Ok(TwoBranchParams {
        arch: arch.clone(),
        conv1,
        conv2,
        trunk_w,
        trunk_b: Tensor::zeros(vec![g]),
        bottleneck_w,
        bottleneck_b,
        class_w,
        class_b: Tensor::zeros(vec![arch.class_count]),
        domain_w,
        domain_b: Tensor::zeros(vec![arch.domain_count]),
        step: 0,
    })
}

/// Tape nodes of one recorded forward pass.
pub struct ForwardPass {
    pub class_logits: NodeId,
    pub domain_logits: NodeId,
    /// The shared feature `g` (before any masking), shape `[batch, g]`.
    pub feature: NodeId,
    /// Bottleneck activations when the architecture has one.
    pub bottleneck: Option<NodeId>,
    /// Parameter leaf nodes, in [`TwoBranchParams::tensors`] order.
    pub param_nodes: Vec<(&'static str, NodeId)>,
}

/// Records the full two-branch forward pass on `tape`.
///
/// `batch` is `[b, c, h, w]`. The class head sees `g * mask` when a mask is
/// given; the domain head always reads the unmasked `g`, through a reversal
/// node when `grl.enabled`.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &TwoBranchParams<T>,
    batch: &Tensor<T>,
    grl: &GrlConfig,
    mask: Option<&Tensor<T>>,
) -> Result<ForwardPass> {
    grl.validate()?;
    let arch = &params.arch;
    if batch.rank() != 4
        || batch.shape()[1] != arch.in_channels
        || batch.shape()[2] != arch.image_size
        || batch.shape()[3] != arch.image_size
    {
        return Err(DgError::Dimension(format!(
            "batch shape {:?} does not match architecture ({} x {} x {})",
            batch.shape(),
            arch.in_channels,
            arch.image_size,
            arch.image_size
        )));
    }
    let b = batch.shape()[0];
    if b == 0 {
        return Err(DgError::Contract("empty batch".into()));
    }
    if let Some(m) = mask {
        if m.shape() != [b, arch.feature_width] {
            return Err(DgError::Dimension(format!(
                "mask shape {:?}, expected [{b}, {}]",
                m.shape(),
                arch.feature_width
            )));
        }
    }

    let conv1 = tape.leaf(params.conv1.clone());
    let conv2 = tape.leaf(params.conv2.clone());
    let trunk_w = tape.leaf(params.trunk_w.clone());
    let trunk_b = tape.leaf(params.trunk_b.clone());
    let mut param_nodes = vec![
        ("conv1", conv1),
        ("conv2", conv2),
        ("trunk_w", trunk_w),
        ("trunk_b", trunk_b),
    ];

    let x = tape.leaf(batch.clone());
    let h = tape.conv2d(conv1, x)?;
    let h = tape.relu(h);
    let h = tape.mean_pool2(h)?;
    let h = tape.conv2d(conv2, h)?;
    let h = tape.relu(h);
    let h = tape.mean_pool2(h)?;
    let h = tape.reshape(h, vec![b, arch.flat_width()])?;
    let h = tape.dense(trunk_w, trunk_b, h)?;
    let feature = tape.relu(h);

    // class path
    let class_in = match mask {
        Some(m) => {
            let m = tape.leaf(m.clone());
            tape.mul(feature, m)?
        }
        None => feature,
    };
    let (class_in, bottleneck) = match (&params.bottleneck_w, &params.bottleneck_b) {
        (Some(w), Some(bias)) => {
            let w = tape.leaf(w.clone());
            let bias_node = tape.leaf(bias.clone());
            param_nodes.push(("bottleneck_w", w));
            param_nodes.push(("bottleneck_b", bias_node));
            let z = tape.dense(w, bias_node, class_in)?;
            (z, Some(z))
        }
        _ => (class_in, None),
    };
    let class_w = tape.leaf(params.class_w.clone());
    let class_b = tape.leaf(params.class_b.clone());
    param_nodes.push(("class_w", class_w));
    param_nodes.push(("class_b", class_b));
    let class_logits = tape.dense(class_w, class_b, class_in)?;

    // domain path reads the unmasked feature
    let domain_in = if grl.enabled {
        tape.grad_reverse(feature, T::from_f64_const(grl.lambda))
    } else {
        feature
    };
    let domain_w = tape.leaf(params.domain_w.clone());
    let domain_b = tape.leaf(params.domain_b.clone());
    param_nodes.push(("domain_w", domain_w));
    param_nodes.push(("domain_b", domain_b));
    let domain_logits = tape.dense(domain_w, domain_b, domain_in)?;

    Ok(ForwardPass {
        class_logits,
        domain_logits,
        feature,
        bottleneck,
        param_nodes,
    })
}

/// The two bottleneck activations per sample, for embedding dumps.
pub fn bottleneck_embed<T: Scalar>(
    params: &TwoBranchParams<T>,
    batch: &Tensor<T>,
) -> Result<Tensor<T>> {
    if params.arch.bottleneck.is_none() {
        return Err(DgError::Contract(
            "bottleneck_embed on an architecture without a bottleneck".into(),
        ));
    }
    let mut tape = Tape::new();
    let pass = forward(&mut tape, params, batch, &GrlConfig::off(), None)?;
    let node = pass.bottleneck.expect("bottleneck arch produces the node");
    Ok(tape.value(node).clone())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    arch: Arch,
    step: u64,
    tensor_names: Vec<String>,
    tensor_lens: Vec<usize>,
}

impl TwoBranchParams<f64> {
    /// Writes `ckpt.bin` (flat 64-bit little-endian floats in tensor order)
    /// and `ckpt.json` (architecture descriptor and step count) into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| DgError::io(dir, e))?;
        let tensors = self.tensors();
        let meta = CheckpointMeta {
            arch: self.arch.clone(),
            step: self.step,
            tensor_names: tensors.iter().map(|(n, _)| n.to_string()).collect(),
            tensor_lens: tensors.iter().map(|(_, t)| t.len()).collect(),
        };
        let json_path = dir.join("ckpt.json");
        let json = serde_json::to_string_pretty(&meta).map_err(|e| DgError::Parse {
            path: json_path.clone(),
            message: e.to_string(),
        })?;
        fs::write(&json_path, json).map_err(|e| DgError::io(&json_path, e))?;

        let bin_path = dir.join("ckpt.bin");
        let mut bytes = Vec::new();
        for (_, t) in &tensors {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(&bin_path, bytes).map_err(|e| DgError::io(&bin_path, e))
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let json_path = dir.join("ckpt.json");
        let text = fs::read_to_string(&json_path).map_err(|e| DgError::io(&json_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| DgError::Parse {
            path: json_path.clone(),
            message: e.to_string(),
        })?;

        let bin_path = dir.join("ckpt.bin");
        let mut file = fs::File::open(&bin_path).map_err(|e| DgError::io(&bin_path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|e| DgError::io(&bin_path, e))?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();

        let mut params: TwoBranchParams<f64> = init_two_branch(&meta.arch, 0)?;
        params.step = meta.step;
        let mut offset = 0usize;
        {
            let tensors = params.tensors_mut();
            if tensors.len() != meta.tensor_names.len() {
                return Err(DgError::Parse {
                    path: json_path.clone(),
                    message: "tensor list does not match architecture".into(),
                });
            }
            for (i, (name, tensor)) in tensors.into_iter().enumerate() {
                if meta.tensor_names[i] != name || meta.tensor_lens[i] != tensor.len() {
                    return Err(DgError::Parse {
                        path: json_path.clone(),
                        message: format!("tensor {name} does not match checkpoint layout"),
                    });
                }
                let end = offset + tensor.len();
                if end > values.len() {
                    return Err(DgError::Parse {
                        path: bin_path.clone(),
                        message: "checkpoint shorter than architecture".into(),
                    });
                }
                tensor.data_mut().copy_from_slice(&values[offset..end]);
                offset = end;
            }
        }
        if offset != values.len() {
            return Err(DgError::Parse {
                path: bin_path,
                message: "checkpoint longer than architecture".into(),
            });
        }
        Ok(params)
    }
}
