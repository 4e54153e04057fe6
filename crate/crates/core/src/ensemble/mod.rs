//! Toy two-branch ensemble: a fine branch of stacked 3×3 convolutions and a
//! coarse branch of 7×7 plus dilated 3×3 convolutions, fused by global
//! average pooling and followed by a fully connected head.

pub mod network;
pub mod predict;
pub mod probe;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::net::{Checkpoint, Layer, LayerSpec, NetError, Tensor};
use crate::rng::RngStream;

pub use network::{Branch, Fuse, Network};
pub use probe::NetworkProbe;
pub use predict::{crop_average, predict_image, CropScorer, DEFAULT_CROPS};
pub use train::{classification_accuracy, finetune, load_corpus, pretrain, write_log, ClassImage, EpochLog, LabeledImage, TrainOptions};

/// Output-layer weights are drawn with this gain so the initial outputs sit
/// near zero (uniform softmax for classification).
pub const OUTPUT_GAIN: f64 = 0.1;
pub const INPUT_CHANNELS: usize = 3;
pub const MODEL_FORMAT: &str = "iqa-ensemble";

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("invalid ensemble config: {0}")]
    Config(String),
    #[error("model has {head} outputs but the corpus has {corpus} classes")]
    ClassCount { head: usize, corpus: usize },
    #[error("model is already a regressor")]
    AlreadyRegressor,
    #[error("operation needs a {0} model")]
    WrongTask(&'static str),
    #[error("empty training set")]
    Empty,
    #[error("target {0} outside [0, 1]; normalize scores first")]
    Unnormalized(f64),
    #[error("ablation not applicable: {0}")]
    Ablation(String),
    #[error("image {width}x{height} smaller than the {size}x{size} input")]
    TooSmall { width: usize, height: usize, size: usize },
    #[error("numeric failure: {0}")]
    NonFinite(String),
    #[error("n_crops must be at least 1")]
    NoCrops,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub input_size: usize,
    pub branch_a: Vec<LayerSpec>,
    pub branch_b: Vec<LayerSpec>,
    pub fuse: Fuse,
    /// Hidden widths followed by the regression output width 1.
    pub head_widths: Vec<usize>,
    pub dropout_early: f64,
    pub dropout_late: f64,
    pub n_classes_pretrain: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let relu = || LayerSpec::Relu;
        Self {
            input_size: 32,
            branch_a: vec![
                LayerSpec::conv(3, 8, 3, 2, 1),
                relu(),
                LayerSpec::conv(8, 16, 3, 2, 1),
                relu(),
                LayerSpec::conv(16, 16, 3, 1, 1),
                relu(),
            ],
            branch_b: vec![LayerSpec::conv(3, 8, 7, 2, 1), relu(), LayerSpec::conv(8, 16, 3, 2, 2), relu()],
            fuse: Fuse::ConcatThenGap,
            head_widths: vec![128, 32, 1],
            dropout_early: 0.25,
            dropout_late: 0.5,
            n_classes_pretrain: 125,
        }
    }
}

impl EnsembleConfig {
    /// Default toy network with a `classes`-way pretraining head.
    pub fn toy(classes: usize) -> Self {
        Self { n_classes_pretrain: classes, ..Self::default() }
    }

    /// Output shapes of the two branches for a square input.
    pub fn branch_shapes(&self) -> Result<Vec<Vec<usize>>, EnsembleError> {
        let mut shapes = Vec::new();
        for (name, specs) in [("a", &self.branch_a), ("b", &self.branch_b)] {
            if specs.is_empty() {
                continue;
            }
            let mut shape = vec![INPUT_CHANNELS, self.input_size, self.input_size];
            for s in specs {
                if matches!(s, LayerSpec::FullyConnected { .. } | LayerSpec::Gap | LayerSpec::Concat | LayerSpec::Softmax) {
                    return Err(EnsembleError::Config(format!("branch {name} may hold only conv/relu/dropout layers")));
                }
                s.validate()?;
                shape = s
                    .output_shape(&shape)
                    .map_err(|e| EnsembleError::Config(format!("branch {name}: {e}")))?;
            }
            shapes.push(shape);
        }
        if shapes.is_empty() {
            return Err(EnsembleError::Config("no branches".into()));
        }
        Ok(shapes)
    }

    pub fn feature_width(&self) -> Result<usize, EnsembleError> {
        Ok(self.branch_shapes()?.iter().map(|s| s[0]).sum())
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.input_size == 0 {
            return Err(EnsembleError::Config("input_size must be positive".into()));
        }
        let shapes = self.branch_shapes()?;
        if self.fuse == Fuse::ConcatThenGap && shapes.len() == 2 && shapes[0][1..] != shapes[1][1..] {
            return Err(EnsembleError::Config(format!(
                "concat_then_gap needs equal branch extents, got {:?} and {:?}",
                &shapes[0][1..],
                &shapes[1][1..]
            )));
        }
        match self.head_widths.last() {
            Some(1) => {}
            _ => return Err(EnsembleError::Config("head_widths must end in 1".into())),
        }
        if self.head_widths.contains(&0) {
            return Err(EnsembleError::Config("zero head width".into()));
        }
        for p in [self.dropout_early, self.dropout_late] {
            if !(0.0..1.0).contains(&p) {
                return Err(EnsembleError::Config(format!("dropout {p} outside [0, 1)")));
            }
        }
        if self.n_classes_pretrain < 2 {
            return Err(EnsembleError::Config("need at least 2 pretraining classes".into()));
        }
        Ok(())
    }

    /// Head layer specs for an output of width `out`; hidden layers are
    /// FC → ReLU → dropout, the first with `dropout_early`.
    fn head_specs(&self, fan_in: usize, out: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut prev = fan_in;
        let hidden = &self.head_widths[..self.head_widths.len() - 1];
        for (i, w) in hidden.iter().enumerate() {
            specs.push(LayerSpec::fc(prev, *w));
            specs.push(LayerSpec::Relu);
            let p = if i == 0 { self.dropout_early } else { self.dropout_late };
            if p > 0.0 {
                specs.push(LayerSpec::Dropout { p });
            }
            prev = *w;
        }
        specs.push(LayerSpec::fc(prev, out));
        specs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "task")]
pub enum Task {
    Classifier { classes: usize },
    Regressor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "stage")]
pub enum Provenance {
    Scratch { seed: u64 },
    Pretrained { corpus: String },
    Transferred,
    Finetuned { manifest: String },
    Ablated { variant: AblationVariant, reinit: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    DropBranchA,
    DropBranchB,
    DropHead,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::Full, Self::DropBranchA, Self::DropBranchB, Self::DropHead];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::DropBranchA => "drop_branch_a",
            Self::DropBranchB => "drop_branch_b",
            Self::DropHead => "drop_head",
        }
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown ablation variant {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub config: EnsembleConfig,
    pub task: Task,
    pub net: Network<f32>,
    pub provenance: Vec<Provenance>,
    pub init_seed: u64,
}

/// Builds a classifier for `config.n_classes_pretrain` classes.
pub fn build(config: &EnsembleConfig, init_seed: u64) -> Result<EnsembleModel, EnsembleError> {
    build_for(config, Task::Classifier { classes: config.n_classes_pretrain }, init_seed)
}

/// Builds a model with a regression head directly (scratch training).
pub fn build_regressor(config: &EnsembleConfig, init_seed: u64) -> Result<EnsembleModel, EnsembleError> {
    build_for(config, Task::Regressor, init_seed)
}

fn build_for(config: &EnsembleConfig, task: Task, init_seed: u64) -> Result<EnsembleModel, EnsembleError> {
    config.validate()?;
    let mut rng = RngStream::new(init_seed, 1);
    let mut branches = Vec::new();
    for (name, specs) in [("a", &config.branch_a), ("b", &config.branch_b)] {
        if specs.is_empty() {
            continue;
        }
        let layers = specs.iter().map(|s| Layer::init(s.clone(), &mut rng, 1.0)).collect::<Result<_, _>>()?;
        branches.push(Branch { name: name.into(), layers });
    }
    let out = match task {
        Task::Classifier { classes } => classes,
        Task::Regressor => 1,
    };
    let head = init_head(&config.head_specs(config.feature_width()?, out), task, &mut rng)?;
    Ok(EnsembleModel {
        config: config.clone(),
        task,
        net: Network { branches, fuse: config.fuse, head },
        provenance: vec![Provenance::Scratch { seed: init_seed }],
        init_seed,
    })
}

fn init_head(specs: &[LayerSpec], task: Task, rng: &mut RngStream) -> Result<Vec<Layer<f32>>, EnsembleError> {
    let last = specs.len() - 1;
    let mut head: Vec<Layer<f32>> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| Layer::init(s.clone(), rng, if i == last { OUTPUT_GAIN } else { 1.0 }))
        .collect::<Result<_, _>>()?;
    if matches!(task, Task::Classifier { .. }) {
        head.push(Layer::without_params(LayerSpec::Softmax));
    }
    Ok(head)
}

impl EnsembleModel {
    pub fn output_width(&self) -> usize {
        match self.task {
            Task::Classifier { classes } => classes,
            Task::Regressor => 1,
        }
    }

    /// Number of fully connected layers in the head.
    pub fn head_depth(&self) -> usize {
        self.net.head.iter().filter(|l| matches!(l.spec, LayerSpec::FullyConnected { .. })).count()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<f32>)> {
        self.net.named_params()
    }

    fn derived_rng(&self, tag: u64) -> RngStream {
        RngStream::new(RngStream::derive_seed(self.init_seed, &[tag, self.provenance.len() as u64]), 2)
    }
}

/// Swaps the classification output for a fresh width-1 regression layer.
pub fn transfer_to_regressor(model: &EnsembleModel) -> Result<EnsembleModel, EnsembleError> {
    if model.task == Task::Regressor {
        return Err(EnsembleError::AlreadyRegressor);
    }
    let mut m = model.clone();
    if matches!(m.net.head.last().map(|l| &l.spec), Some(LayerSpec::Softmax)) {
        m.net.head.pop();
    }
    let last = m.net.head.pop().ok_or_else(|| EnsembleError::Config("empty head".into()))?;
    let LayerSpec::FullyConnected { fan_in, .. } = last.spec else {
        return Err(EnsembleError::Config("head does not end in a fully connected layer".into()));
    };
    let mut rng = m.derived_rng(0x7EA5);
    m.net.head.push(Layer::init(LayerSpec::fc(fan_in, 1), &mut rng, OUTPUT_GAIN)?);
    m.task = Task::Regressor;
    m.provenance.push(Provenance::Transferred);
    Ok(m)
}

/// Structural ablation. Layers whose shape changes are always freshly
/// initialized; `reinit` additionally reinitializes every surviving layer.
pub fn ablate(model: &EnsembleModel, variant: AblationVariant, reinit: bool) -> Result<EnsembleModel, EnsembleError> {
    let mut m = model.clone();
    let mut rng = m.derived_rng(0xAB1A);
    match variant {
        AblationVariant::Full => return Ok(m),
        AblationVariant::DropBranchA | AblationVariant::DropBranchB => {
            let name = if variant == AblationVariant::DropBranchA { "a" } else { "b" };
            if m.net.branches.len() < 2 {
                return Err(EnsembleError::Ablation("model already has a single branch".into()));
            }
            m.net.branches.retain(|b| b.name != name);
            match name {
                "a" => m.config.branch_a.clear(),
                _ => m.config.branch_b.clear(),
            }
            let fan_in = m.config.feature_width()?;
            let gain = if m.head_depth() == 1 { OUTPUT_GAIN } else { 1.0 };
            let first = m
                .net
                .head
                .iter_mut()
                .find(|l| matches!(l.spec, LayerSpec::FullyConnected { .. }))
                .expect("head has a fully connected layer");
            let LayerSpec::FullyConnected { fan_out, .. } = first.spec else { unreachable!() };
            *first = Layer::init(LayerSpec::fc(fan_in, fan_out), &mut rng, gain)?;
        }
        AblationVariant::DropHead => {
            if m.head_depth() == 1 {
                return Err(EnsembleError::Ablation("head already has a single layer".into()));
            }
            m.config.head_widths = vec![1];
            let out = m.output_width();
            m.net.head = init_head(&[LayerSpec::fc(m.config.feature_width()?, out)], m.task, &mut rng)?;
        }
    }
    if reinit {
        for b in &mut m.net.branches {
            for l in &mut b.layers {
                *l = Layer::init(l.spec.clone(), &mut rng, 1.0)?;
            }
        }
        let last_fc = m.net.head.iter().rposition(|l| matches!(l.spec, LayerSpec::FullyConnected { .. }));
        for (i, l) in m.net.head.iter_mut().enumerate() {
            let gain = if Some(i) == last_fc { OUTPUT_GAIN } else { 1.0 };
            *l = Layer::init(l.spec.clone(), &mut rng, gain)?;
        }
    }
    m.provenance.push(Provenance::Ablated { variant, reinit });
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: EnsembleConfig,
    task: Task,
    provenance: Vec<Provenance>,
    init_seed: u64,
    branches: Vec<(String, Vec<LayerSpec>)>,
    head: Vec<LayerSpec>,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn to_checkpoint(model: &EnsembleModel, metadata: serde_json::Value) -> Checkpoint {
    let header = Header {
        format: MODEL_FORMAT.into(),
        config: model.config.clone(),
        task: model.task,
        provenance: model.provenance.clone(),
        init_seed: model.init_seed,
        branches: model
            .net
            .branches
            .iter()
            .map(|b| (b.name.clone(), b.layers.iter().map(|l| l.spec.clone()).collect()))
            .collect(),
        head: model.net.head.iter().map(|l| l.spec.clone()).collect(),
        metadata,
    };
    Checkpoint {
        header: serde_json::to_value(header).expect("header serializes"),
        tensors: model.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect(),
    }
}

pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<EnsembleModel, EnsembleError> {
    let bad = |m: String| EnsembleError::Net(NetError::Checkpoint(m));
    let header: Header = serde_json::from_value(ckpt.header.clone()).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != MODEL_FORMAT {
        return Err(bad(format!("not an ensemble checkpoint: {}", header.format)));
    }
    let shell = |specs: &[LayerSpec]| specs.iter().cloned().map(Layer::without_params).collect::<Vec<Layer<f32>>>();
    let mut net = Network {
        branches: header.branches.iter().map(|(n, s)| Branch { name: n.clone(), layers: shell(s) }).collect(),
        fuse: header.config.fuse,
        head: shell(&header.head),
    };
    for b in &mut net.branches {
        fill_params(&mut b.layers, &b.name, &ckpt.tensors)?;
    }
    fill_params(&mut net.head, "head", &ckpt.tensors)?;
    if net.param_count() != ckpt.tensors.iter().map(|(_, t)| t.len()).sum::<usize>() {
        return Err(bad("unused tensors in checkpoint".into()));
    }
    Ok(EnsembleModel {
        config: header.config,
        task: header.task,
        net,
        provenance: header.provenance,
        init_seed: header.init_seed,
    })
}

fn fill_params(layers: &mut [Layer<f32>], prefix: &str, tensors: &[(String, Tensor<f32>)]) -> Result<(), EnsembleError> {
    let find = |name: String, shape: Vec<usize>| -> Result<Tensor<f32>, EnsembleError> {
        let t = tensors
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| NetError::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(NetError::Checkpoint(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape())).into());
        }
        Ok(t)
    };
    for (i, l) in layers.iter_mut().enumerate() {
        let (w, b) = match l.spec {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                (vec![out_channels, in_channels, kernel, kernel], out_channels)
            }
            LayerSpec::FullyConnected { fan_in, fan_out } => (vec![fan_out, fan_in], fan_out),
            _ => continue,
        };
        l.weight = Some(find(format!("{prefix}.{i}.weight"), w)?);
        l.bias = Some(find(format!("{prefix}.{i}.bias"), vec![b])?);
    }
    Ok(())
}

pub fn save_model(model: &EnsembleModel, path: &Path, metadata: serde_json::Value) -> Result<(), EnsembleError> {
    Ok(to_checkpoint(model, metadata).save(path)?)
}

pub fn load_model(path: &Path) -> Result<EnsembleModel, EnsembleError> {
    from_checkpoint(&Checkpoint::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_params(i: usize, o: usize, k: usize) -> usize {
        o * i * k * k + o
    }

    #[test]
    fn toy_parameter_count() {
        let branch_a = conv_params(3, 8, 3) + conv_params(8, 16, 3) + conv_params(16, 16, 3);
        let branch_b = conv_params(3, 8, 7) + conv_params(8, 16, 3);
        let head = (32 * 128 + 128) + (128 * 32 + 32) + (32 + 1);
        let reg = build_regressor(&EnsembleConfig::default(), 1).unwrap();
        assert_eq!(reg.param_count(), branch_a + branch_b + head);
        assert_eq!(reg.param_count(), 14449);
        let cls = build(&EnsembleConfig::toy(25), 1).unwrap();
        assert_eq!(cls.param_count(), branch_a + branch_b + head - 33 + 32 * 25 + 25);
    }

    #[test]
    fn deterministic_init() {
        let a = build(&EnsembleConfig::default(), 42).unwrap();
        let b = build(&EnsembleConfig::default(), 42).unwrap();
        let c = build(&EnsembleConfig::default(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.net, c.net);
        assert!(a.named_params().iter().filter(|(n, _)| n.ends_with("bias")).all(|(_, t)| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn mismatched_extents_rejected() {
        let mut cfg = EnsembleConfig::default();
        cfg.branch_b = vec![LayerSpec::conv(3, 8, 3, 1, 1), LayerSpec::Relu];
        assert!(matches!(build(&cfg, 0), Err(EnsembleError::Config(_))));
        cfg.fuse = Fuse::GapThenConcat;
        assert!(build(&cfg, 0).is_ok());
    }

    #[test]
    fn transfer_retains_trunk() {
        let m = build(&EnsembleConfig::toy(25), 3).unwrap();
        let r = transfer_to_regressor(&m).unwrap();
        let before = m.named_params();
        let after = r.named_params();
        let head_out = format!("head.{}.", r.net.head.len() - 1);
        for (name, t) in &after {
            if name.starts_with(&head_out) {
                assert_eq!(t.shape()[0], 1);
                continue;
            }
            let (_, old) = before.iter().find(|(n, _)| n == name).unwrap();
            assert_eq!(t.data(), old.data(), "{name}");
        }
        assert_eq!(r.output_width(), 1);
        assert_eq!(r.provenance.len(), 2);
        assert!(matches!(transfer_to_regressor(&r), Err(EnsembleError::AlreadyRegressor)));
    }

    #[test]
    fn ablation_structure() {
        let m = build_regressor(&EnsembleConfig::default(), 5).unwrap();
        let a = ablate(&m, AblationVariant::DropBranchA, false).unwrap();
        assert_eq!(a.net.branches.len(), 1);
        assert!(matches!(ablate(&a, AblationVariant::DropBranchB, false), Err(EnsembleError::Ablation(_))));
        let h = ablate(&m, AblationVariant::DropHead, false).unwrap();
        assert_eq!(h.head_depth(), 1);
        assert_eq!(h.net.branches, m.net.branches);
        let r = ablate(&m, AblationVariant::DropHead, true).unwrap();
        assert_ne!(r.net.branches, m.net.branches);
        let b = ablate(&m, AblationVariant::DropBranchB, false).unwrap();
        assert_eq!(b.net.branches[0], m.net.branches[0]);
        assert_eq!(b.net.head[3..], m.net.head[3..]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(v.name().parse::<AblationVariant>().unwrap(), v);
        }
    }
}
