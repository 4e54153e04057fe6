//! The two-branch graph: branches → fuse → head, one sample at a time.

use serde::{Deserialize, Serialize};

use crate::net::{concat_backward, concat_forward, Layer, LayerCache, LayerSpec, Mode, NetError, Scalar, Tensor};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fuse {
    /// Concatenate feature maps along channels, then pool (needs equal extents).
    ConcatThenGap,
    /// Pool each branch, then concatenate the vectors.
    GapThenConcat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch<T: Scalar> {
    pub name: String,
    pub layers: Vec<Layer<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    pub branches: Vec<Branch<T>>,
    pub fuse: Fuse,
    pub head: Vec<Layer<T>>,
}

pub struct Trace<T: Scalar> {
    branch_caches: Vec<Vec<LayerCache<T>>>,
    fuse: FuseTrace<T>,
    head_caches: Vec<LayerCache<T>>,
}

enum FuseTrace<T: Scalar> {
    ConcatThenGap { concat: Option<LayerCache<T>>, gap: LayerCache<T> },
    GapThenConcat { gaps: Vec<LayerCache<T>>, concat: Option<LayerCache<T>> },
}

impl<T: Scalar> Network<T> {
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            branches: self
                .branches
                .iter()
                .map(|b| Branch { name: b.name.clone(), layers: b.layers.iter().map(Layer::cast).collect() })
                .collect(),
            fuse: self.fuse,
            head: self.head.iter().map(Layer::cast).collect(),
        }
    }

    /// Parameter tensors in canonical order with their checkpoint names.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for b in &self.branches {
            push_named(&mut out, &b.name, &b.layers);
        }
        push_named(&mut out, "head", &self.head);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            for l in &mut b.layers {
                out.extend(l.params_mut());
            }
        }
        for l in &mut self.head {
            out.extend(l.params_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> Result<(Tensor<T>, Trace<T>), NetError> {
        let mut branch_caches = Vec::with_capacity(self.branches.len());
        let mut feats = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let (y, caches) = run_seq(&b.layers, x.clone(), mode, rng)?;
            branch_caches.push(caches);
            feats.push(y);
        }
        let gap = Layer::without_params(LayerSpec::Gap);
        let (pooled, fuse) = match self.fuse {
            Fuse::ConcatThenGap => {
                let (maps, concat) = if feats.len() == 1 {
                    (feats.pop().unwrap(), None)
                } else {
                    let refs: Vec<&Tensor<T>> = feats.iter().collect();
                    let (m, c) = concat_forward(&refs)?;
                    (m, Some(c))
                };
                let (v, gc) = gap.forward(&maps, mode, rng)?;
                (v, FuseTrace::ConcatThenGap { concat, gap: gc })
            }
            Fuse::GapThenConcat => {
                let mut vecs = Vec::with_capacity(feats.len());
                let mut gaps = Vec::with_capacity(feats.len());
                for f in &feats {
                    let (v, gc) = gap.forward(f, mode, rng)?;
                    vecs.push(v);
                    gaps.push(gc);
                }
                let (v, concat) = if vecs.len() == 1 {
                    (vecs.pop().unwrap(), None)
                } else {
                    let refs: Vec<&Tensor<T>> = vecs.iter().collect();
                    let (v, c) = concat_forward(&refs)?;
                    (v, Some(c))
                };
                (v, FuseTrace::GapThenConcat { gaps, concat })
            }
        };
        let (out, head_caches) = run_seq(&self.head, pooled, mode, rng)?;
        Ok((out, Trace { branch_caches, fuse, head_caches }))
    }

    /// Parameter gradients in `named_params` order.
    pub fn backward(&self, trace: &Trace<T>, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>, NetError> {
        let (g, head_grads) = back_seq(&self.head, &trace.head_caches, upstream.clone(), true)?;
        let g = g.expect("head input gradient");
        let gap = Layer::without_params(LayerSpec::Gap);
        let branch_inputs: Vec<Tensor<T>> = match &trace.fuse {
            FuseTrace::ConcatThenGap { concat, gap: gc } => {
                let (dmaps, _) = gap.backward(gc, &g)?;
                match concat {
                    Some(c) => concat_backward(c, &dmaps)?,
                    None => vec![dmaps],
                }
            }
            FuseTrace::GapThenConcat { gaps, concat } => {
                let parts = match concat {
                    Some(c) => concat_backward(c, &g)?,
                    None => vec![g],
                };
                parts
                    .iter()
                    .zip(gaps)
                    .map(|(p, gc)| gap.backward(gc, p).map(|(d, _)| d))
                    .collect::<Result<_, _>>()?
            }
        };
        let mut grads = Vec::new();
        for ((b, caches), g) in self.branches.iter().zip(&trace.branch_caches).zip(branch_inputs) {
            let (_, bg) = back_seq(&b.layers, caches, g, false)?;
            grads.extend(bg);
        }
        grads.extend(head_grads);
        Ok(grads)
    }
}

fn push_named<'a, T: Scalar>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, layers: &'a [Layer<T>]) {
    for (i, l) in layers.iter().enumerate() {
        if let Some(w) = &l.weight {
            out.push((format!("{prefix}.{i}.weight"), w));
        }
        if let Some(b) = &l.bias {
            out.push((format!("{prefix}.{i}.bias"), b));
        }
    }
}

fn run_seq<T: Scalar>(
    layers: &[Layer<T>],
    mut h: Tensor<T>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(Tensor<T>, Vec<LayerCache<T>>), NetError> {
    let mut caches = Vec::with_capacity(layers.len());
    for l in layers {
        let (y, c) = l.forward(&h, mode, rng)?;
        caches.push(c);
        h = y;
    }
    Ok((h, caches))
}

/// Backpropagates through a layer sequence; parameter grads come back in
/// forward order. The input gradient of the first layer is skipped unless
/// `want_input`.
fn back_seq<T: Scalar>(
    layers: &[Layer<T>],
    caches: &[LayerCache<T>],
    mut g: Tensor<T>,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>), NetError> {
    let mut per_layer: Vec<Vec<Tensor<T>>> = Vec::with_capacity(layers.len());
    let mut out = None;
    for (i, (l, c)) in layers.iter().zip(caches).enumerate().rev() {
        let need = i > 0 || want_input;
        let (dx, pg) = l.backward_opt(c, &g, need)?;
        per_layer.push(pg);
        match dx {
            Some(dx) if i > 0 => g = dx,
            dx => out = dx,
        }
    }
    if layers.is_empty() {
        out = Some(g);
    }
    Ok((out, per_layer.into_iter().rev().flatten().collect()))
}
