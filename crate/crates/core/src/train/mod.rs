//! Losses, optimizers, and the four trainers: plain class-loss ERM,
//! gradient-reversal multitask, self-challenging class-gradient masking, and
//! domain-gradient feature masking. Also the validation-selection protocol
//! reporting selected / best / worst test accuracy over the post-saturation
//! window.

pub mod mask;
pub mod optim;

pub use mask::{idfm_mask, mask_zero_count, rsc_mask, top_fraction_mask, top_fraction_mask_batch_mean};
pub use optim::{adam_step, sgd_step, OptimState, Optimizer};

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{augment, normalize, AugConfig, DatasetBundle};
use crate::error::{DgError, Result};
use crate::model::{class_head_on, forward, init_two_branch, Arch, GrlConfig, ParamGroup, TwoBranchParams};
use crate::rng::{salt, Stream};
use crate::split::SplitSpec;
use crate::tensor::{Gradients, NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Erm,
    Grl,
    Rsc,
    Idfm,
}

impl TrainerKind {
    pub fn name(self) -> &'static str {
        match self {
            TrainerKind::Erm => "erm",
            TrainerKind::Grl => "grl",
            TrainerKind::Rsc => "rsc",
            TrainerKind::Idfm => "idfm",
        }
    }
}

fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    32
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    0.0005
}
fn default_q() -> f64 {
    33.0
}
fn default_lambda() -> f64 {
    1.0
}
fn default_val_fraction() -> f64 {
    0.05
}

/// Hyperparameters of one training run. The learning rate defaults to 0.01
/// for SGD and 0.001 for Adam when left unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub trainer: TrainerKind,
    /// Mask percentile `q`.
    pub q_percent: f64,
    /// Weight of the domain loss in the multitask objectives.
    pub lambda_dom: f64,
    /// Reversal strength; 0 turns the reversal node off (plain multitask).
    pub lambda_grl: f64,
    /// Rank the batch-mean gradient magnitude instead of per-sample ones.
    pub mask_batch_mean: bool,
    pub augment: bool,
    pub aug: AugConfig,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch(),
            optimizer: Optimizer::Sgd,
            learning_rate: None,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            trainer: TrainerKind::Erm,
            q_percent: default_q(),
            lambda_dom: default_lambda(),
            lambda_grl: default_lambda(),
            mask_batch_mean: false,
            augment: false,
            aug: AugConfig::default(),
            val_fraction: default_val_fraction(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn resolved_lr(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.optimizer {
            Optimizer::Sgd => 0.01,
            Optimizer::Adam => 0.001,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DgError::Config("epochs and batch size must be >= 1".into()));
        }
        if !(0.0..=100.0).contains(&self.q_percent) {
            return Err(DgError::Config(format!(
                "mask percentile {} outside [0, 100]",
                self.q_percent
            )));
        }
        for (name, v) in [
            ("learning rate", self.resolved_lr()),
            ("momentum", self.momentum),
            ("weight decay", self.weight_decay),
            ("domain loss weight", self.lambda_dom),
            ("reversal strength", self.lambda_grl),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(DgError::Config(format!("{name} {v} must be finite and >= 0")));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(DgError::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        self.aug.validate()
    }
}

/// Mean softmax cross-entropy of a `[batch, classes]` logit matrix.
pub fn cross_entropy<T: crate::scalar::Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let mut tape = Tape::new();
    let node = tape.leaf(logits.clone());
    let loss = tape.cross_entropy(node, labels)?;
    Ok(tape.value(loss).item())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Full record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trainer: TrainerKind,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub a_sel: f64,
    pub a_max: f64,
    pub a_min: f64,
    pub selected_epoch: usize,
    /// Predicted-class histogram of the selected checkpoint on the test set.
    pub test_histogram: Vec<usize>,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| DgError::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        fs::write(path, json).map_err(|e| DgError::io(path, e))
    }

    /// `metrics.csv`: one row per epoch.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path).map_err(|e| DgError::io(path, e))?;
        writeln!(out, "epoch,train_loss,val_acc,test_acc").map_err(|e| DgError::io(path, e))?;
        for m in &self.epochs {
            writeln!(
                out,
                "{},{},{},{}",
                m.epoch, m.train_loss, m.val_acc, m.test_acc
            )
            .map_err(|e| DgError::io(path, e))?;
        }
        Ok(())
    }
}

enum Transform<'a> {
    Raw,
    /// Normalization only (evaluation path when training augments).
    Normalize(&'a AugConfig),
    /// Full augmentation; decisions keyed by `(seed, epoch, sample index)`.
    Augment(&'a AugConfig, u64, usize),
}

fn assemble_batch(
    bundle: &DatasetBundle,
    indices: &[usize],
    transform: &Transform,
) -> Result<(Tensor<f64>, Vec<usize>, Vec<usize>)> {
    let (h, w) = (bundle.height(), bundle.width());
    let mut data = Vec::with_capacity(indices.len() * 3 * h * w);
    let mut classes = Vec::with_capacity(indices.len());
    let mut domains = Vec::with_capacity(indices.len());
    for &i in indices {
        let image = match transform {
            Transform::Raw => bundle.image(i),
            Transform::Normalize(cfg) => normalize(&bundle.image(i), cfg),
            Transform::Augment(cfg, seed, epoch) => {
                let mut stream =
                    Stream::from_parts(&[*seed, salt::AUGMENT, *epoch as u64, i as u64]);
                augment(&bundle.image(i), cfg, &mut stream)?
            }
        };
        data.extend_from_slice(image.data());
        classes.push(bundle.class_of(i));
        domains.push(bundle.domain_of(i));
    }
    Ok((
        Tensor::from_vec(vec![indices.len(), 3, h, w], data)?,
        classes,
        domains,
    ))
}

/// Applies one optimizer step to the given parameter groups. Parameters
/// outside `groups` are left bit-unchanged, momentum buffers included.
fn apply_updates(
    params: &mut TwoBranchParams<f64>,
    state: &mut OptimState<f64>,
    nodes: &[(&'static str, NodeId)],
    grads: &Gradients<f64>,
    cfg: &TrainConfig,
    groups: &[ParamGroup],
) -> Result<()> {
    let lr = cfg.resolved_lr();
    let grad_of = |name: &str| -> Option<Tensor<f64>> {
        nodes
            .iter()
            .rev() // later bindings (rebuilt heads) win
            .find(|(n, _)| *n == name)
            .map(|(_, id)| grads.wrt(*id))
    };
    if let OptimState::Adam { step, .. } = state {
        *step += 1;
    }
    let step = state.step_count();
    for (idx, (name, tensor)) in params.tensors_mut().into_iter().enumerate() {
        if !groups.contains(&TwoBranchParams::<f64>::group_of(name)) {
            continue;
        }
        let Some(grad) = grad_of(name) else { continue };
        match state {
            OptimState::Sgd { velocity } => sgd_step(
                tensor.data_mut(),
                grad.data(),
                &mut velocity[idx],
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?,
            OptimState::Adam { first, second, .. } => adam_step(
                tensor.data_mut(),
                grad.data(),
                &mut first[idx],
                &mut second[idx],
                step,
                lr,
                optim::ADAM_BETA1,
                optim::ADAM_BETA2,
                optim::ADAM_EPS,
            )?,
        }
    }
    params.step += 1;
    Ok(())
}

fn batch_mask(grads: &Tensor<f64>, cfg: &TrainConfig) -> Result<Tensor<f64>> {
    if cfg.mask_batch_mean {
        top_fraction_mask_batch_mean(grads, cfg.q_percent)
    } else {
        top_fraction_mask(grads, cfg.q_percent)
    }
}

/// One optimizer step on one batch; returns the scalar objective value.
fn train_batch(
    params: &mut TwoBranchParams<f64>,
    state: &mut OptimState<f64>,
    batch: &Tensor<f64>,
    classes: &[usize],
    domains: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    match cfg.trainer {
        TrainerKind::Erm => {
            let pass = forward(&mut tape, params, batch, &GrlConfig::off(), None)?;
            let loss = tape.cross_entropy(pass.class_logits, classes)?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss)?;
            apply_updates(
                params,
                state,
                &pass.param_nodes,
                &grads,
                cfg,
                &[ParamGroup::Trunk, ParamGroup::ClassHead],
            )?;
            Ok(value)
        }
        TrainerKind::Grl => {
            // a zero strength disables the node, reducing to plain
            // unreversed multitask training
            let grl = GrlConfig {
                enabled: cfg.lambda_grl != 0.0,
                lambda: cfg.lambda_grl,
            };
            let pass = forward(&mut tape, params, batch, &grl, None)?;
            let class_ce = tape.cross_entropy(pass.class_logits, classes)?;
            let domain_ce = tape.cross_entropy(pass.domain_logits, domains)?;
            let scaled = tape.scale(domain_ce, cfg.lambda_dom);
            let total = tape.add(class_ce, scaled)?;
            let value = tape.value(total).item();
            let grads = tape.backward(total)?;
            apply_updates(
                params,
                state,
                &pass.param_nodes,
                &grads,
                cfg,
                &[ParamGroup::Trunk, ParamGroup::ClassHead, ParamGroup::DomainHead],
            )?;
            Ok(value)
        }
        TrainerKind::Rsc => {
            // rank features by the true-class logit gradient, mask, then
            // train the class path on the masked feature
            let pass = forward(&mut tape, params, batch, &GrlConfig::off(), None)?;
            let picked = tape.select_sum(pass.class_logits, classes)?;
            let feature_grad = tape.backward(picked)?.wrt(pass.feature);
            let mask = batch_mask(&feature_grad, cfg)?;
            let mask_node = tape.leaf(mask);
            let masked = tape.mul(pass.feature, mask_node)?;
            let (logits, head_nodes) = class_head_on(&mut tape, params, masked)?;
            let loss = tape.cross_entropy(logits, classes)?;
            let value = tape.value(loss).item();
            let grads = tape.backward(loss)?;
            let mut nodes = pass.param_nodes.clone();
            nodes.extend(head_nodes);
            apply_updates(
                params,
                state,
                &nodes,
                &grads,
                cfg,
                &[ParamGroup::Trunk, ParamGroup::ClassHead],
            )?;
            Ok(value)
        }
        TrainerKind::Idfm => {
            // rank features by the true-domain logit gradient; the class
            // loss reads the masked feature, the domain loss the unmasked
            // one, with no reversal
            let pass = forward(&mut tape, params, batch, &GrlConfig::off(), None)?;
            let picked = tape.select_sum(pass.domain_logits, domains)?;
            let feature_grad = tape.backward(picked)?.wrt(pass.feature);
            let mask = batch_mask(&feature_grad, cfg)?;
            let mask_node = tape.leaf(mask);
            let masked = tape.mul(pass.feature, mask_node)?;
            let (logits, head_nodes) = class_head_on(&mut tape, params, masked)?;
            let class_ce = tape.cross_entropy(logits, classes)?;
            let domain_ce = tape.cross_entropy(pass.domain_logits, domains)?;
            let scaled = tape.scale(domain_ce, cfg.lambda_dom);
            let total = tape.add(class_ce, scaled)?;
            let value = tape.value(total).item();
            let grads = tape.backward(total)?;
            let mut nodes = pass.param_nodes.clone();
            nodes.extend(head_nodes);
            apply_updates(
                params,
                state,
                &nodes,
                &grads,
                cfg,
                &[ParamGroup::Trunk, ParamGroup::ClassHead, ParamGroup::DomainHead],
            )?;
            Ok(value)
        }
    }
}

/// One pass over the train split in seeded shuffled batches; returns the
/// sample-weighted mean objective.
pub fn train_epoch(
    params: &mut TwoBranchParams<f64>,
    state: &mut OptimState<f64>,
    split: &SplitSpec,
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(DgError::Contract("empty train split".into()));
    }
    let mut order = split.train.clone();
    Stream::from_parts(&[cfg.seed, salt::SHUFFLE, epoch as u64]).shuffle(&mut order);

    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let transform = if cfg.augment {
            Transform::Augment(&cfg.aug, cfg.seed, epoch)
        } else {
            Transform::Raw
        };
        let (batch, classes, domains) = assemble_batch(bundle, chunk, &transform)?;
        let loss = train_batch(params, state, &batch, &classes, &domains, cfg)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / order.len() as f64)
}

const EVAL_CHUNK: usize = 128;

/// Argmax class predictions over `indices`, in chunks.
pub fn predict(
    params: &TwoBranchParams<f64>,
    bundle: &DatasetBundle,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<usize>> {
    let transform = if cfg.augment {
        Transform::Normalize(&cfg.aug)
    } else {
        Transform::Raw
    };
    let classes = params.arch.class_count;
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (batch, _, _) = assemble_batch(bundle, chunk, &transform)?;
        let mut tape = Tape::new();
        let pass = forward(&mut tape, params, &batch, &GrlConfig::off(), None)?;
        let logits = tape.value(pass.class_logits);
        for row in 0..chunk.len() {
            let r = &logits.data()[row * classes..(row + 1) * classes];
            let mut best = 0;
            for k in 1..classes {
                if r[k] > r[best] {
                    best = k;
                }
            }
            preds.push(best);
        }
    }
    Ok(preds)
}

/// Accuracy and predicted-class histogram over `indices`.
pub fn evaluate(
    params: &TwoBranchParams<f64>,
    bundle: &DatasetBundle,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<usize>)> {
    let preds = predict(params, bundle, indices, cfg)?;
    let labels: Vec<usize> = indices.iter().map(|&i| bundle.class_of(i)).collect();
    crate::metrics::accuracy(&preds, &labels, params.arch.class_count)
}

/// Selected/best/worst test accuracy over a checkpoint window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub a_sel: f64,
    pub a_max: f64,
    pub a_min: f64,
    /// Position of the selected checkpoint within the window.
    pub selected: usize,
}

/// Selection rule over `(val_acc, test_acc)` scores: the checkpoint
/// maximizing validation accuracy (earliest on ties) provides `a_sel`;
/// `a_max`/`a_min` are the extreme test accuracies in the window.
pub fn select_from_scores(scores: &[(f64, f64)]) -> Result<Selection> {
    if scores.is_empty() {
        return Err(DgError::Contract("empty checkpoint list".into()));
    }
    let mut best = 0;
    for (i, (val, _)) in scores.iter().enumerate() {
        if *val > scores[best].0 {
            best = i;
        }
    }
    let a_sel = scores[best].1;
    let a_max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let a_min = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    Ok(Selection {
        a_sel,
        a_max,
        a_min,
        selected: best,
    })
}

/// A parameter snapshot taken at the end of an epoch.
pub struct ParamCheckpoint {
    pub epoch: usize,
    pub params: TwoBranchParams<f64>,
}

/// Evaluates every checkpoint on the validation and test splits and applies
/// the selection rule. Callers pass the post-saturation window they want the
/// protocol to consider.
pub fn select_model(
    checkpoints: &[ParamCheckpoint],
    bundle: &DatasetBundle,
    val: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
) -> Result<Selection> {
    if checkpoints.is_empty() {
        return Err(DgError::Contract("empty checkpoint list".into()));
    }
    let mut scores = Vec::with_capacity(checkpoints.len());
    for ckpt in checkpoints {
        let (val_acc, _) = evaluate(&ckpt.params, bundle, val, cfg)?;
        let (test_acc, _) = evaluate(&ckpt.params, bundle, test, cfg)?;
        scores.push((val_acc, test_acc));
    }
    select_from_scores(&scores)
}

/// Epochs in the post-saturation selection window (the final third).
pub fn selection_window(epochs: usize) -> usize {
    epochs.div_ceil(3)
}

/// Trains for `cfg.epochs` epochs and applies the selection protocol over
/// the final third of per-epoch checkpoints. Returns the record and the
/// final parameters.
pub fn run_training(
    bundle: &DatasetBundle,
    split: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<(RunRecord, TwoBranchParams<f64>)> {
    run_training_with_arch(bundle, split, cfg, None)
}

/// [`run_training`] with an architecture override (e.g. a bottleneck).
pub fn run_training_with_arch(
    bundle: &DatasetBundle,
    split: &SplitSpec,
    cfg: &TrainConfig,
    arch: Option<Arch>,
) -> Result<(RunRecord, TwoBranchParams<f64>)> {
    cfg.validate()?;
    if bundle.height() != bundle.width() {
        return Err(DgError::Config("trainer expects square images".into()));
    }
    if split.val.is_empty() {
        return Err(DgError::Config(
            "model selection needs a validation split; carve one first".into(),
        ));
    }
    let arch = arch.unwrap_or_else(|| {
        Arch::for_bundle(bundle.height(), bundle.class_count(), bundle.domain_count())
    });
    let mut params: TwoBranchParams<f64> = init_two_branch(&arch, cfg.seed)?;
    let lens: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    let mut state = OptimState::new(cfg.optimizer, &lens);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut histograms = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let train_loss = train_epoch(&mut params, &mut state, split, bundle, cfg, epoch)?;
        let (val_acc, _) = evaluate(&params, bundle, &split.val, cfg)?;
        let (test_acc, hist) = evaluate(&params, bundle, &split.test, cfg)?;
        epochs.push(EpochMetrics {
            epoch,
            train_loss,
            val_acc,
            test_acc,
        });
        histograms.push(hist);
    }

    let window = selection_window(cfg.epochs);
    let start = cfg.epochs - window;
    let scores: Vec<(f64, f64)> = epochs[start..]
        .iter()
        .map(|m| (m.val_acc, m.test_acc))
        .collect();
    let sel = select_from_scores(&scores)?;
    let selected_epoch = start + sel.selected;

    let record = RunRecord {
        trainer: cfg.trainer,
        seed: cfg.seed,
        epochs,
        a_sel: sel.a_sel,
        a_max: sel.a_max,
        a_min: sel.a_min,
        selected_epoch,
        test_histogram: histograms[selected_epoch].clone(),
    };
    Ok((record, params))
}
