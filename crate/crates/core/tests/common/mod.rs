#![allow(dead_code)]

use std::cell::RefCell;
use std::path::Path;

use iqa_core::ensemble::{CropScorer, EnsembleError, LabeledImage};
use iqa_core::harness::load_manifest;
use iqa_core::metrics::{PwrcParams, ScorePair};
use iqa_core::net::gradcheck::{random_layer_input, LayerProbe, LossProbe, DEFAULT_EPS};
use iqa_core::net::layers::Padding;
use iqa_core::net::{concat_backward, concat_forward, grad_check, Differentiable, Layer, LayerSpec, LossKind, LossSpec, Mode, Tensor};
use iqa_core::raster::{save_image, Raster};
use iqa_core::{toy, RngStream};

pub const LAYER_KINDS: [&str; 7] = ["conv2d", "relu", "gap", "fully_connected", "dropout", "concat", "softmax"];

pub struct FuzzResult {
    pub cases: usize,
    pub max_rel_error: f64,
    pub failures: Vec<String>,
}

impl FuzzResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.failures.is_empty() && self.max_rel_error <= tol
    }
}

fn pick(rng: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Σ wᵢ·concat(a, b)ᵢ over two inputs.
struct ConcatProbe {
    a: Tensor<f64>,
    b: Tensor<f64>,
    readout: Vec<f64>,
}

impl ConcatProbe {
    fn value(&self) -> f64 {
        let (y, _) = concat_forward(&[&self.a, &self.b]).unwrap();
        y.data().iter().zip(&self.readout).map(|(a, b)| a * b).sum()
    }
}

impl Differentiable for ConcatProbe {
    fn group_names(&self) -> Vec<String> {
        vec!["concat.a".into(), "concat.b".into()]
    }
    fn group(&self, i: usize) -> &[f64] {
        if i == 0 { self.a.data() } else { self.b.data() }
    }
    fn group_mut(&mut self, i: usize) -> &mut [f64] {
        if i == 0 { self.a.data_mut() } else { self.b.data_mut() }
    }
    fn objective(&mut self) -> f64 {
        self.value()
    }
    fn objective_and_grads(&mut self) -> (f64, Vec<Vec<f64>>) {
        let (y, cache) = concat_forward(&[&self.a, &self.b]).unwrap();
        let up = Tensor::new(y.shape().to_vec(), self.readout.clone());
        let g = concat_backward(&cache, &up).unwrap();
        (self.value(), g.into_iter().map(Tensor::into_data).collect())
    }
}

/// One random layer of `kind` with a random, valid input shape.
fn random_layer_case(kind: &str, rng: &mut RngStream) -> (Layer<f64>, Vec<usize>, Mode) {
    let mut mode = Mode::Eval;
    let (spec, shape) = match kind {
        "conv2d" => {
            let (k, stride, dilation) = ([1, 3, 5][rng.below(3)], pick(rng, 1, 2), pick(rng, 1, 2));
            let padding = if rng.bernoulli(0.5) { Padding::Valid } else { Padding::SameZero };
            let (ci, co) = (pick(rng, 1, 3), pick(rng, 1, 3));
            let span = dilation * (k - 1) + 1;
            let (h, w) = (pick(rng, span, span + 4), pick(rng, span, span + 4));
            (LayerSpec::Conv2d { in_channels: ci, out_channels: co, kernel: k, stride, dilation, padding }, vec![ci, h, w])
        }
        "relu" => (LayerSpec::Relu, vec![pick(rng, 1, 3), pick(rng, 1, 5), pick(rng, 1, 5)]),
        "gap" => (LayerSpec::Gap, vec![pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 5)]),
        "fully_connected" => {
            let (i, o) = (pick(rng, 1, 12), pick(rng, 1, 6));
            (LayerSpec::fc(i, o), vec![i])
        }
        "dropout" => {
            mode = Mode::Train;
            let p = [0.1, 0.25, 0.5][rng.below(3)];
            (LayerSpec::Dropout { p }, vec![pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)])
        }
        "softmax" => (LayerSpec::Softmax, vec![pick(rng, 2, 10)]),
        other => panic!("no random case for {other}"),
    };
    (Layer::init(spec, rng, 1.0).unwrap(), shape, mode)
}

pub fn fuzz_layer(kind: &str, cases: usize, seed: u64, tol: f64) -> FuzzResult {
    let mut rng = RngStream::new(seed, 0x1A7E);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..cases {
        let report = if kind == "concat" {
            let (h, w) = (pick(&mut rng, 1, 4), pick(&mut rng, 1, 4));
            let flat = rng.bernoulli(0.3);
            let shape = |rng: &mut RngStream| if flat { vec![pick(rng, 1, 4)] } else { vec![pick(rng, 1, 3), h, w] };
            let (sa, sb) = (shape(&mut rng), shape(&mut rng));
            let a = random_layer_input(&LayerSpec::Concat, sa, &mut rng);
            let b = random_layer_input(&LayerSpec::Concat, sb, &mut rng);
            let readout = (0..a.len() + b.len()).map(|_| rng.normal()).collect();
            grad_check(&mut ConcatProbe { a, b, readout }, DEFAULT_EPS, tol)
        } else {
            let (layer, shape, mode) = random_layer_case(kind, &mut rng);
            let spec = layer.spec.clone();
            let input = random_layer_input(&spec, shape.clone(), &mut rng);
            let mut probe = LayerProbe::new(layer, input, mode, &mut rng);
            let r = grad_check(&mut probe, DEFAULT_EPS, tol);
            if !r.passed() {
                failures.push(format!("case {case}: {spec:?} on {shape:?}: {:.3e}", r.max_rel_error()));
            }
            r
        };
        worst = worst.max(report.max_rel_error());
        if kind == "concat" && !report.passed() {
            failures.push(format!("case {case}: {:.3e}", report.max_rel_error()));
        }
    }
    FuzzResult { cases, max_rel_error: worst, failures }
}

/// Random predicted/target pair for `kind`, kept clear of the loss's kinks
/// (|P − T| = 0 for the absolute losses, |P − T| = δ for Huber).
pub fn random_loss_case(kind: LossKind, rng: &mut RngStream) -> LossProbe {
    let n = pick(rng, 1, 8);
    let mut spec = LossSpec::new(kind);
    if kind == LossKind::CrossEntropy {
        let logits: Vec<f64> = (0..n + 1).map(|_| rng.normal()).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let p: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let raw: Vec<f64> = (0..n + 1).map(|_| rng.uniform() + 0.01).collect();
        let s: f64 = raw.iter().sum();
        let t: Vec<f64> = raw.iter().map(|v| v / s).collect();
        return LossProbe { spec, predicted: Tensor::new(vec![n + 1], p), target: Tensor::new(vec![n + 1], t) };
    }
    if kind == LossKind::Huber {
        spec.huber_delta = 0.05 + 0.5 * rng.uniform();
    }
    let (mut p, mut t) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let target = 0.05 + 0.95 * rng.uniform();
        loop {
            let off = (0.01 + 0.6 * rng.uniform()) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            if kind == LossKind::Huber && (off.abs() - spec.huber_delta).abs() < 0.01 {
                continue;
            }
            p.push(target + off);
            break;
        }
        t.push(target);
    }
    LossProbe { spec, predicted: Tensor::new(vec![n], p), target: Tensor::new(vec![n], t) }
}

pub fn all_losses() -> Vec<LossKind> {
    let mut v = LossKind::REGRESSION.to_vec();
    v.push(LossKind::CrossEntropy);
    v
}

pub fn fuzz_loss(kind: LossKind, cases: usize, seed: u64, tol: f64) -> FuzzResult {
    let mut rng = RngStream::new(seed, 0x1055);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..cases {
        let mut probe = random_loss_case(kind, &mut rng);
        let r = grad_check(&mut probe, DEFAULT_EPS, tol);
        worst = worst.max(r.max_rel_error());
        if !r.passed() {
            failures.push(format!("case {case}: {:.3e}", r.max_rel_error()));
        }
    }
    FuzzResult { cases, max_rel_error: worst, failures }
}

/// PWRC by direct enumeration of every pair at every threshold.
pub fn pwrc_oracle(pred: &[f64], subj: &[f64], params: &PwrcParams) -> f64 {
    let n = subj.len();
    let s_at = |keep: &dyn Fn(f64) -> bool| -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if i >= j {
                    continue;
                }
                let ds = subj[i] - subj[j];
                if ds == 0.0 || !keep(ds.abs()) {
                    continue;
                }
                let dp = pred[i] - pred[j];
                let d = if dp != 0.0 && dp.signum() == ds.signum() { 1.0 } else { -1.0 };
                let m = (subj[i].max(subj[j]) / params.importance_beta).exp();
                num += m * d;
                den += m;
            }
        }
        (den > 0.0).then(|| num / den)
    };
    let mut widest: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            widest = widest.max((subj[i] - subj[j]).abs());
        }
    }
    let at_widest = s_at(&|g| g == widest).expect("some pair differs");
    let curve: Vec<(f64, f64)> = params.grid().into_iter().map(|t| (t, s_at(&|g| g > t).unwrap_or(at_widest))).collect();
    curve.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

pub fn pair(pred: Vec<f64>, subj: Vec<f64>) -> ScorePair {
    ScorePair::new(pred, subj).unwrap()
}

/// Writes the toy quality set as PNGs plus a `path,score` manifest and loads
/// it back through the manifest reader.
pub fn toy_manifest(dir: &Path, sources: usize, size: usize, seed: u64) -> Vec<LabeledImage> {
    let set = toy::quality_set(sources, size, &toy::TOY_FAMILIES, seed);
    let mut csv = String::from("path,score\n");
    for s in &set {
        let name = format!("{}.png", s.id);
        save_image(&s.raster, &dir.join(&name)).unwrap();
        csv.push_str(&format!("{name},{}\n", s.target));
    }
    let path = dir.join("toy.csv");
    std::fs::write(&path, csv).unwrap();
    load_manifest(&path, 0.0, 1.0, false).unwrap().load_images().unwrap()
}

/// Distinct values: a shuffled integer grid plus jitter below the spacing.
pub fn tie_free(rng: &mut RngStream, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 + 0.4 * rng.uniform()).collect();
    rng.shuffle(&mut v);
    v
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Returns a dyadic score per crop and remembers each one.
pub struct Recording {
    pub size: usize,
    pub seen: RefCell<Vec<f64>>,
}

impl Recording {
    pub fn new(size: usize) -> Self {
        Self { size, seen: RefCell::new(Vec::new()) }
    }
}

impl CropScorer for Recording {
    fn input_size(&self) -> usize {
        self.size
    }
    fn score_crop(&self, crop: &Raster) -> Result<f64, EnsembleError> {
        let q = (crop.data()[0] * 64.0).floor() as f64 / 64.0 + (self.seen.borrow().len() % 4) as f64 / 256.0;
        self.seen.borrow_mut().push(q);
        Ok(q)
    }
}
