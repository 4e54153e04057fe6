//! Mini-batch training loops for distortion-classification pretraining and
//! quality-regression fine-tuning.
//!
//! Each sample is a random crop of the input size followed by the
//! augmentation policy (horizontal flip, right-angle rotation). Gradients
//! are averaged over the batch, then one Adam step is taken.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::predict::{predict_image, to_input, DEFAULT_CROPS};
use super::{EnsembleError, EnsembleModel, Provenance, Task};
use crate::distort::CorpusManifest;
use crate::metrics::{rmse, RmseDenominator, ScorePair};
use crate::net::{loss_value_and_grad, AdamConstants, LossKind, LossSpec, LrSchedule, Mode, OptimizerState, Tensor};
use crate::raster::{center_crop, load_image, random_crop, Augmentation, Raster};
use crate::rng::RngStream;

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub id: String,
    pub raster: Arc<Raster>,
    pub target: f64,
}

#[derive(Clone, Debug)]
pub struct ClassImage {
    pub id: String,
    pub raster: Arc<Raster>,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConstants,
    pub augment: bool,
    /// Crops per image when scoring the validation set.
    pub val_crops: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            schedule: LrSchedule::default(),
            adam: AdamConstants::default(),
            augment: true,
            val_crops: DEFAULT_CROPS,
        }
    }
}

/// One training-log line. Epoch 0 is measured before any update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<(), EnsembleError> {
    let mut f = std::fs::File::create(path).map_err(|e| EnsembleError::Io(format!("{}: {e}", path.display())))?;
    for rec in log {
        writeln!(f, "{}", serde_json::to_string(rec).expect("log serializes"))
            .map_err(|e| EnsembleError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Loads a distortion corpus, numbering its distinct specs densely in label order.
pub fn load_corpus(corpus: &CorpusManifest) -> Result<Vec<ClassImage>, EnsembleError> {
    let specs: Vec<_> = corpus.entries.iter().map(|e| e.spec).collect::<BTreeSet<_>>().into_iter().collect();
    corpus
        .entries
        .iter()
        .map(|e| {
            let raster = load_image(&e.distorted).map_err(|err| EnsembleError::Io(err.to_string()))?;
            Ok(ClassImage {
                id: e.distorted.display().to_string(),
                raster: Arc::new(raster),
                class: specs.binary_search(&e.spec).expect("spec collected"),
            })
        })
        .collect()
}

fn sample_crop(r: &Raster, size: usize, augment: bool, rng: &mut RngStream) -> Result<Raster, EnsembleError> {
    let crop = random_crop(r, size, size, rng).map_err(|_| EnsembleError::TooSmall {
        width: r.width(),
        height: r.height(),
        size,
    })?;
    Ok(if augment { Augmentation::draw(rng).apply(&crop) } else { crop })
}

fn check_sizes<'a>(rasters: impl Iterator<Item = &'a Raster>, size: usize) -> Result<(), EnsembleError> {
    for r in rasters {
        if r.width() < size || r.height() < size {
            return Err(EnsembleError::TooSmall { width: r.width(), height: r.height(), size });
        }
    }
    Ok(())
}

/// Shared loop: `targets(i)` gives the target tensor for sample `i`.
fn train_loop(
    model: &mut EnsembleModel,
    images: &[&Raster],
    targets: &dyn Fn(usize) -> Tensor<f32>,
    loss: &LossSpec,
    opts: &TrainOptions,
    rng: &mut RngStream,
    mut on_epoch: impl FnMut(&EnsembleModel, usize, f64, f64, f64) -> Result<(), EnsembleError>,
) -> Result<(), EnsembleError> {
    let size = model.config.input_size;
    let batch = opts.batch_size.max(1);
    let param_refs: Vec<Tensor<f32>> = model.net.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    let mut opt = OptimizerState::new(&param_refs.iter().collect::<Vec<_>>(), opts.schedule);
    opt.constants = opts.adam;
    drop(param_refs);

    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        rng.shuffle(&mut order);
        let (mut total, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(batch) {
            let mut acc: Option<Vec<Tensor<f32>>> = None;
            let scale = 1.0 / chunk.len() as f32;
            for &i in chunk {
                let crop = sample_crop(images[i], size, opts.augment, rng)?;
                let (y, trace) = model.net.forward(&to_input(&crop), Mode::Train, rng)?;
                let t = targets(i);
                let (l, mut g) = loss_value_and_grad(loss, &y, &t)?;
                if !l.is_finite() {
                    return Err(EnsembleError::NonFinite(format!("training loss at epoch {}", epoch + 1)));
                }
                total += l;
                correct += usize::from(argmax(y.data()) == argmax(t.data()));
                g.scale(scale);
                let grads = model.net.backward(&trace, &g)?;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let grads = acc.expect("non-empty batch");
            opt.adam_step(&mut model.net.params_mut(), &grads, epoch)?;
        }
        let n = images.len() as f64;
        on_epoch(model, epoch + 1, opts.schedule.lr(epoch), total / n, correct as f64 / n)?;
    }
    Ok(())
}

fn argmax(v: &[f32]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

/// Mean cross-entropy and accuracy of a classifier on centre crops, eval mode.
pub fn classification_accuracy(model: &EnsembleModel, data: &[ClassImage]) -> Result<(f64, f64), EnsembleError> {
    let Task::Classifier { classes } = model.task else {
        return Err(EnsembleError::WrongTask("classification"));
    };
    if data.is_empty() {
        return Err(EnsembleError::Empty);
    }
    let images: Vec<&Raster> = data.iter().map(|d| d.raster.as_ref()).collect();
    check_sizes(images.iter().copied(), model.config.input_size)?;
    let onehot = |i: usize| {
        let mut v = vec![0.0f32; classes];
        v[data[i].class.min(classes - 1)] = 1.0;
        Tensor::new(vec![classes], v)
    };
    evaluate(model, &images, &onehot, &LossSpec::new(LossKind::CrossEntropy))
}

/// Mean loss and accuracy on centre crops in eval mode.
fn evaluate(
    model: &EnsembleModel,
    images: &[&Raster],
    targets: &dyn Fn(usize) -> Tensor<f32>,
    loss: &LossSpec,
) -> Result<(f64, f64), EnsembleError> {
    let size = model.config.input_size;
    let (mut total, mut correct) = (0.0, 0usize);
    for (i, r) in images.iter().enumerate() {
        let crop = center_crop(r, size, size).expect("size checked");
        let (y, _) = model.net.forward(&to_input(&crop), Mode::Eval, &mut RngStream::new(0, 0))?;
        let t = targets(i);
        total += loss_value_and_grad(loss, &y, &t)?.0;
        correct += usize::from(argmax(y.data()) == argmax(t.data()));
    }
    let n = images.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Cross-entropy training of the classification head on distortion labels.
pub fn pretrain(
    model: &EnsembleModel,
    data: &[ClassImage],
    corpus_id: &str,
    opts: &TrainOptions,
    rng: &mut RngStream,
) -> Result<(EnsembleModel, Vec<EpochLog>), EnsembleError> {
    let Task::Classifier { classes } = model.task else {
        return Err(EnsembleError::WrongTask("classification"));
    };
    if data.is_empty() {
        return Err(EnsembleError::Empty);
    }
    let distinct = data.iter().map(|d| d.class).collect::<BTreeSet<_>>();
    let max_class = *distinct.last().unwrap();
    if distinct.len() != classes || max_class >= classes {
        return Err(EnsembleError::ClassCount { head: classes, corpus: distinct.len().max(max_class + 1) });
    }
    let images: Vec<&Raster> = data.iter().map(|d| d.raster.as_ref()).collect();
    check_sizes(images.iter().copied(), model.config.input_size)?;
    let onehot = |i: usize| {
        let mut v = vec![0.0f32; classes];
        v[data[i].class] = 1.0;
        Tensor::new(vec![classes], v)
    };
    let loss = LossSpec::new(LossKind::CrossEntropy);
    let mut m = model.clone();
    let (l0, a0) = evaluate(&m, &images, &onehot, &loss)?;
    let mut log = vec![EpochLog { epoch: 0, lr: opts.schedule.lr(0), train_loss: l0, val_rmse: None, train_accuracy: Some(a0) }];
    train_loop(&mut m, &images, &onehot, &loss, opts, rng, |_, epoch, lr, l, acc| {
        log.push(EpochLog { epoch, lr, train_loss: l, val_rmse: None, train_accuracy: Some(acc) });
        Ok(())
    })?;
    m.provenance.push(Provenance::Pretrained { corpus: corpus_id.into() });
    Ok((m, log))
}

/// Regression fine-tuning; `val` (if any) is only scored, never trained on.
pub fn finetune(
    model: &EnsembleModel,
    train: &[LabeledImage],
    val: Option<&[LabeledImage]>,
    loss: &LossSpec,
    manifest_id: &str,
    opts: &TrainOptions,
    rng: &mut RngStream,
) -> Result<(EnsembleModel, Vec<EpochLog>), EnsembleError> {
    if model.task != Task::Regressor {
        return Err(EnsembleError::WrongTask("regression"));
    }
    if train.is_empty() {
        return Err(EnsembleError::Empty);
    }
    loss.validate()?;
    if loss.kind == LossKind::CrossEntropy {
        return Err(EnsembleError::Config("cross-entropy is not a regression loss".into()));
    }
    for s in train.iter().chain(val.unwrap_or(&[])) {
        if !(0.0..=1.0).contains(&s.target) {
            return Err(EnsembleError::Unnormalized(s.target));
        }
    }
    let images: Vec<&Raster> = train.iter().map(|d| d.raster.as_ref()).collect();
    check_sizes(images.iter().copied().chain(val.unwrap_or(&[]).iter().map(|d| d.raster.as_ref())), model.config.input_size)?;
    let target = |i: usize| Tensor::new(vec![1], vec![train[i].target as f32]);
    let val_rng = rng.derive(0x7A1);
    let score_val = |m: &EnsembleModel, epoch: usize| -> Result<Option<f64>, EnsembleError> {
        let Some(val) = val.filter(|v| v.len() >= 2) else { return Ok(None) };
        let mut r = val_rng.derive(epoch as u64);
        let pred = val.iter().map(|s| predict_image(m, &s.raster, opts.val_crops.max(1), &mut r)).collect::<Result<Vec<_>, _>>()?;
        let pair = ScorePair::new(pred, val.iter().map(|s| s.target).collect())
            .map_err(|e| EnsembleError::NonFinite(e.to_string()))?;
        Ok(Some(rmse(&pair, RmseDenominator::N).map_err(|e| EnsembleError::NonFinite(e.to_string()))?))
    };
    let mut m = model.clone();
    let (l0, _) = evaluate(&m, &images, &target, loss)?;
    let mut log = vec![EpochLog { epoch: 0, lr: opts.schedule.lr(0), train_loss: l0, val_rmse: score_val(&m, 0)?, train_accuracy: None }];
    train_loop(&mut m, &images, &target, loss, opts, rng, |m, epoch, lr, l, _| {
        log.push(EpochLog { epoch, lr, train_loss: l, val_rmse: score_val(m, epoch)?, train_accuracy: None });
        Ok(())
    })?;
    m.provenance.push(Provenance::Finetuned { manifest: manifest_id.into() });
    Ok((m, log))
}
