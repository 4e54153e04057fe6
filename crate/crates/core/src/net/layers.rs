//! The closed layer set of the two-branch network, with exact gradients.

use serde::{Deserialize, Serialize};

use super::tensor::{matmul, Scalar, Tensor};
use super::NetError;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    /// Zero padding of `dilation·(kernel−1)/2` on every side.
    SameZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "one")]
        dilation: usize,
        #[serde(default)]
        padding: Padding,
    },
    Relu,
    Gap,
    FullyConnected {
        fan_in: usize,
        fan_out: usize,
    },
    Dropout {
        p: f64,
    },
    Concat,
    Softmax,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, dilation, padding: Padding::Valid }
    }

    pub fn fc(fan_in: usize, fan_out: usize) -> Self {
        LayerSpec::FullyConnected { fan_in, fan_out }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Gap => "gap",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Concat => "concat",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, dilation, .. } => {
                if kernel % 2 == 0 {
                    return Err(NetError::InvalidSpec(format!("conv kernel {kernel} must be odd")));
                }
                if in_channels == 0 || out_channels == 0 || stride == 0 || dilation == 0 {
                    return Err(NetError::InvalidSpec("conv channels, stride and dilation must be positive".into()));
                }
            }
            LayerSpec::FullyConnected { fan_in, fan_out } if fan_in == 0 || fan_out == 0 => {
                return Err(NetError::InvalidSpec("fully connected extents must be positive".into()));
            }
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => {
                return Err(NetError::InvalidSpec(format!("drop probability {p} outside [0,1)")));
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                out_channels * in_channels * kernel * kernel + out_channels
            }
            LayerSpec::FullyConnected { fan_in, fan_out } => fan_in * fan_out + fan_out,
            _ => 0,
        }
    }

    /// Output shape for a `[C, H, W]` map or `[N]` vector input.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, dilation, padding } => {
                let [c, h, w] = map_dims(input)?;
                if c != in_channels {
                    return Err(NetError::Shape(format!("conv expects {in_channels} channels, got {c}")));
                }
                let (oh, ow) = conv_out(h, w, kernel, stride, dilation, padding)?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::Gap => {
                let [c, _, _] = map_dims(input)?;
                Ok(vec![c])
            }
            LayerSpec::FullyConnected { fan_in, fan_out } => {
                let n: usize = input.iter().product();
                if n != fan_in {
                    return Err(NetError::Shape(format!("fully connected expects {fan_in} inputs, got {n}")));
                }
                Ok(vec![fan_out])
            }
            LayerSpec::Concat => Err(NetError::Shape("concat takes several inputs".into())),
            _ => Ok(input.to_vec()),
        }
    }
}

fn map_dims(shape: &[usize]) -> Result<[usize; 3], NetError> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(NetError::Shape(format!("expected [C, H, W], got {other:?}"))),
    }
}

fn conv_out(h: usize, w: usize, k: usize, stride: usize, dil: usize, padding: Padding) -> Result<(usize, usize), NetError> {
    let span = dil * (k - 1) + 1;
    let pad = match padding {
        Padding::Valid => 0,
        Padding::SameZero => dil * (k - 1) / 2,
    };
    if h + 2 * pad < span || w + 2 * pad < span {
        return Err(NetError::Shape(format!("{h}x{w} input smaller than kernel span {span}")));
    }
    Ok(((h + 2 * pad - span) / stride + 1, (w + 2 * pad - span) / stride + 1))
}

/// A layer specification with its parameters (if any).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Scalar = f32> {
    pub spec: LayerSpec,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Saved activations from a forward pass, consumed by `backward`.
#[derive(Clone, Debug)]
pub enum LayerCache<T: Scalar> {
    Conv { cols: Vec<T>, in_shape: [usize; 3], out_hw: (usize, usize) },
    Relu { active: Vec<bool>, shape: Vec<usize> },
    Gap { in_shape: [usize; 3] },
    Fc { input: Vec<T>, in_shape: Vec<usize> },
    Dropout { mask: Option<Vec<T>>, shape: Vec<usize> },
    Concat { parts: Vec<Vec<usize>> },
    Softmax { output: Vec<T>, shape: Vec<usize> },
}

impl<T: Scalar> LayerCache<T> {
    fn kind(&self) -> &'static str {
        match self {
            LayerCache::Conv { .. } => "conv2d",
            LayerCache::Relu { .. } => "relu",
            LayerCache::Gap { .. } => "gap",
            LayerCache::Fc { .. } => "fully_connected",
            LayerCache::Dropout { .. } => "dropout",
            LayerCache::Concat { .. } => "concat",
            LayerCache::Softmax { .. } => "softmax",
        }
    }
}

impl<T: Scalar> Layer<T> {
    /// Fan-in-scaled Gaussian weights (variance `2·gain²/fan_in`), zero biases.
    pub fn init(spec: LayerSpec, rng: &mut RngStream, gain: f64) -> Result<Self, NetError> {
        spec.validate()?;
        let (weight_shape, fan_in, out) = match spec {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => (
                vec![out_channels, in_channels, kernel, kernel],
                in_channels * kernel * kernel,
                out_channels,
            ),
            LayerSpec::FullyConnected { fan_in, fan_out } => (vec![fan_out, fan_in], fan_in, fan_out),
            _ => return Ok(Self { spec, weight: None, bias: None }),
        };
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let n: usize = weight_shape.iter().product();
        let w: Vec<T> = (0..n).map(|_| T::of_f64(std * rng.normal())).collect();
        Ok(Self { spec, weight: Some(Tensor::new(weight_shape, w)), bias: Some(Tensor::zeros(vec![out])) })
    }

    pub fn without_params(spec: LayerSpec) -> Self {
        Self { spec, weight: None, bias: None }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.weight.iter().chain(self.bias.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.weight.iter_mut().chain(self.bias.iter_mut()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            spec: self.spec.clone(),
            weight: self.weight.as_ref().map(Tensor::cast),
            bias: self.bias.as_ref().map(Tensor::cast),
        }
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> Result<(Tensor<T>, LayerCache<T>), NetError> {
        match self.spec {
            LayerSpec::Conv2d { out_channels, kernel, stride, dilation, padding, .. } => {
                let out_shape = self.spec.output_shape(input.shape())?;
                let [c, h, w] = map_dims(input.shape())?;
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let cols = im2col(input.data(), c, h, w, kernel, stride, dilation, padding, oh, ow);
                let weight = self.weight.as_ref().ok_or(NetError::MissingParams)?;
                let bias = self.bias.as_ref().ok_or(NetError::MissingParams)?;
                let kk = c * kernel * kernel;
                let mut out = vec![T::zero(); out_channels * oh * ow];
                for (o, row) in out.chunks_mut(oh * ow).enumerate() {
                    row.fill(bias.data()[o]);
                }
                matmul(weight.data(), false, &cols, false, &mut out, out_channels, kk, oh * ow, true);
                Ok((Tensor::new(out_shape, out), LayerCache::Conv { cols, in_shape: [c, h, w], out_hw: (oh, ow) }))
            }
            LayerSpec::Relu => {
                let active: Vec<bool> = input.data().iter().map(|v| *v > T::zero()).collect();
                let out = input.data().iter().map(|v| v.max(T::zero())).collect();
                Ok((
                    Tensor::new(input.shape().to_vec(), out),
                    LayerCache::Relu { active, shape: input.shape().to_vec() },
                ))
            }
            LayerSpec::Gap => {
                let [c, h, w] = map_dims(input.shape())?;
                let hw = h * w;
                let denom = T::of_f64(hw as f64);
                let out = input.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() / denom).collect();
                Ok((Tensor::new(vec![c], out), LayerCache::Gap { in_shape: [c, h, w] }))
            }
            LayerSpec::FullyConnected { fan_in, fan_out } => {
                self.spec.output_shape(input.shape())?;
                let weight = self.weight.as_ref().ok_or(NetError::MissingParams)?;
                let bias = self.bias.as_ref().ok_or(NetError::MissingParams)?;
                let mut out = bias.data().to_vec();
                matmul(weight.data(), false, input.data(), false, &mut out, fan_out, fan_in, 1, true);
                Ok((
                    Tensor::new(vec![fan_out], out),
                    LayerCache::Fc { input: input.data().to_vec(), in_shape: input.shape().to_vec() },
                ))
            }
            LayerSpec::Dropout { p } => {
                let shape = input.shape().to_vec();
                if mode == Mode::Eval || p == 0.0 {
                    return Ok((input.clone(), LayerCache::Dropout { mask: None, shape }));
                }
                let keep = T::of_f64(1.0 / (1.0 - p));
                let mask: Vec<T> =
                    (0..input.len()).map(|_| if rng.bernoulli(1.0 - p) { keep } else { T::zero() }).collect();
                let out = input.data().iter().zip(&mask).map(|(x, m)| *x * *m).collect();
                Ok((Tensor::new(shape.clone(), out), LayerCache::Dropout { mask: Some(mask), shape }))
            }
            LayerSpec::Softmax => {
                let x = input.data();
                let max = x.iter().copied().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = x.iter().map(|v| (*v - max).exp()).collect();
                let total: T = exps.iter().copied().sum();
                let out: Vec<T> = exps.iter().map(|e| *e / total).collect();
                Ok((
                    Tensor::new(input.shape().to_vec(), out.clone()),
                    LayerCache::Softmax { output: out, shape: input.shape().to_vec() },
                ))
            }
            LayerSpec::Concat => concat_forward(&[input]),
        }
    }

    /// Gradient with respect to the input and the parameters (weight, bias).
    pub fn backward(&self, cache: &LayerCache<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NetError> {
        let (dx, grads) = self.backward_opt(cache, upstream, true)?;
        Ok((dx.expect("input gradient requested"), grads))
    }

    /// As [`Layer::backward`], skipping the input gradient when `want_input` is false.
    pub fn backward_opt(
        &self,
        cache: &LayerCache<T>,
        upstream: &Tensor<T>,
        want_input: bool,
    ) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>), NetError> {
        if cache.kind() != self.spec.kind() {
            return Err(NetError::StaleCache { layer: self.spec.kind(), cache: cache.kind() });
        }
        let g = upstream.data();
        match (&self.spec, cache) {
            (
                LayerSpec::Conv2d { out_channels, kernel, stride, dilation, padding, .. },
                LayerCache::Conv { cols, in_shape, out_hw },
            ) => {
                let [c, h, w] = *in_shape;
                let hw = out_hw.0 * out_hw.1;
                if g.len() != out_channels * hw {
                    return Err(NetError::StaleCache { layer: "conv2d", cache: "conv2d (shape)" });
                }
                let weight = self.weight.as_ref().ok_or(NetError::MissingParams)?;
                let kk = c * kernel * kernel;
                let mut dw = vec![T::zero(); out_channels * kk];
                matmul(g, false, cols, true, &mut dw, *out_channels, hw, kk, false);
                let db: Vec<T> = g.chunks(hw).map(|row| row.iter().copied().sum()).collect();
                let dx = if want_input {
                    let mut dcols = vec![T::zero(); kk * hw];
                    matmul(weight.data(), true, g, false, &mut dcols, kk, *out_channels, hw, false);
                    let dx = col2im(&dcols, c, h, w, *kernel, *stride, *dilation, *padding, out_hw.0, out_hw.1);
                    Some(Tensor::new(vec![c, h, w], dx))
                } else {
                    None
                };
                Ok((
                    dx,
                    vec![Tensor::new(weight.shape().to_vec(), dw), Tensor::new(vec![*out_channels], db)],
                ))
            }
            (LayerSpec::Relu, LayerCache::Relu { active, shape }) => {
                check_len(g.len(), active.len())?;
                let dx = g.iter().zip(active).map(|(g, a)| if *a { *g } else { T::zero() }).collect();
                Ok((Some(Tensor::new(shape.clone(), dx)), vec![]))
            }
            (LayerSpec::Gap, LayerCache::Gap { in_shape }) => {
                let [c, h, w] = *in_shape;
                check_len(g.len(), c)?;
                let denom = T::of_f64((h * w) as f64);
                let mut dx = Vec::with_capacity(c * h * w);
                for gc in g {
                    dx.extend(std::iter::repeat_n(*gc / denom, h * w));
                }
                Ok((Some(Tensor::new(vec![c, h, w], dx)), vec![]))
            }
            (LayerSpec::FullyConnected { fan_in, fan_out }, LayerCache::Fc { input, in_shape }) => {
                check_len(g.len(), *fan_out)?;
                let weight = self.weight.as_ref().ok_or(NetError::MissingParams)?;
                let mut dw = vec![T::zero(); fan_out * fan_in];
                matmul(g, false, input, false, &mut dw, *fan_out, 1, *fan_in, false);
                let dx = if want_input {
                    let mut dx = vec![T::zero(); *fan_in];
                    matmul(weight.data(), true, g, false, &mut dx, *fan_in, *fan_out, 1, false);
                    Some(Tensor::new(in_shape.clone(), dx))
                } else {
                    None
                };
                Ok((dx, vec![Tensor::new(vec![*fan_out, *fan_in], dw), Tensor::new(vec![*fan_out], g.to_vec())]))
            }
            (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask, shape }) => {
                check_len(g.len(), shape.iter().product())?;
                let dx = match mask {
                    Some(m) => g.iter().zip(m).map(|(g, m)| *g * *m).collect(),
                    None => g.to_vec(),
                };
                Ok((Some(Tensor::new(shape.clone(), dx)), vec![]))
            }
            (LayerSpec::Softmax, LayerCache::Softmax { output, shape }) => {
                check_len(g.len(), output.len())?;
                let dot: T = g.iter().zip(output).map(|(g, y)| *g * *y).sum();
                let dx = g.iter().zip(output).map(|(g, y)| *y * (*g - dot)).collect();
                Ok((Some(Tensor::new(shape.clone(), dx)), vec![]))
            }
            _ => Err(NetError::StaleCache { layer: self.spec.kind(), cache: cache.kind() }),
        }
    }
}

fn check_len(got: usize, want: usize) -> Result<(), NetError> {
    if got != want {
        return Err(NetError::Shape(format!("upstream gradient has {got} elements, cache expects {want}")));
    }
    Ok(())
}

/// Channel-axis concatenation of `[C_i, H, W]` maps or `[N_i]` vectors.
pub fn concat_forward<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, LayerCache<T>), NetError> {
    let first = inputs.first().ok_or_else(|| NetError::Shape("concat of nothing".into()))?;
    let tail = &first.shape()[1..];
    let mut channels = 0;
    let mut data = Vec::with_capacity(inputs.iter().map(|t| t.len()).sum());
    for t in inputs {
        if t.shape().len() != first.shape().len() || &t.shape()[1..] != tail {
            return Err(NetError::ConcatSpatial(first.shape().to_vec(), t.shape().to_vec()));
        }
        channels += t.shape()[0];
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![channels];
    shape.extend_from_slice(tail);
    let parts = inputs.iter().map(|t| t.shape().to_vec()).collect();
    Ok((Tensor::new(shape, data), LayerCache::Concat { parts }))
}

/// Splits the upstream gradient of a concatenation back into its parts.
pub fn concat_backward<T: Scalar>(cache: &LayerCache<T>, upstream: &Tensor<T>) -> Result<Vec<Tensor<T>>, NetError> {
    let LayerCache::Concat { parts } = cache else {
        return Err(NetError::StaleCache { layer: "concat", cache: cache.kind() });
    };
    check_len(upstream.len(), parts.iter().map(|s| s.iter().product::<usize>()).sum())?;
    let mut offset = 0;
    Ok(parts
        .iter()
        .map(|shape| {
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape.clone(), upstream.data()[offset..offset + n].to_vec());
            offset += n;
            t
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    dil: usize,
    padding: Padding,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let pad = if padding == Padding::SameZero { dil * (k - 1) / 2 } else { 0 } as isize;
    let mut cols = vec![T::zero(); c * k * k * oh * ow];
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky * dil) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kx * dil) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    dil: usize,
    padding: Padding,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let pad = if padding == Padding::SameZero { dil * (k - 1) / 2 } else { 0 } as isize;
    let mut x = vec![T::zero(); c * h * w];
    let mut row = 0;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky * dil) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ci * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx * dil) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            let idx = base + ix as usize;
                            x[idx] = x[idx] + src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> RngStream {
        RngStream::new(42, 0)
    }

    #[test]
    fn gap_and_relu_examples() {
        let gap = Layer::<f64>::without_params(LayerSpec::Gap);
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (y, cache) = gap.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let (dx, _) = gap.backward(&cache, &Tensor::new(vec![1], vec![2.0])).unwrap();
        assert_eq!(dx.data(), &[0.5; 4]);

        let relu = Layer::<f64>::without_params(LayerSpec::Relu);
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]);
        let (y, cache) = relu.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::new(vec![2], vec![0.5, 3.0]);
        let (_, c2) = relu.forward(&pos, Mode::Train, &mut rng()).unwrap();
        let up = Tensor::new(vec![2], vec![7.0, -2.0]);
        assert_eq!(relu.backward(&c2, &up).unwrap().0, up);
        assert!(relu.backward(&cache, &up).is_err());
    }

    #[test]
    fn dropout_eval_identity() {
        let d = Layer::<f32>::without_params(LayerSpec::Dropout { p: 0.5 });
        let x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        let (y, _) = d.forward(&x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_known_values() {
        // 1 channel 3x3 input, 3x3 kernel of ones, valid -> sum of input
        let spec = LayerSpec::conv(1, 1, 3, 1, 1);
        let layer = Layer::<f64> {
            spec,
            weight: Some(Tensor::filled(vec![1, 1, 3, 3], 1.0)),
            bias: Some(Tensor::new(vec![1], vec![0.5])),
        };
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect());
        let (y, _) = layer.forward(&x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[45.5]);

        // same-zero padding keeps extent; centre output equals the valid one
        let same = Layer::<f64> {
            spec: LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 1,
                kernel: 3,
                stride: 1,
                dilation: 1,
                padding: Padding::SameZero,
            },
            ..layer.clone()
        };
        let (y, _) = same.forward(&x, Mode::Eval, &mut rng()).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.data()[4], 45.5);
        assert_eq!(y.data()[0], 1.0 + 2.0 + 4.0 + 5.0 + 0.5);
    }

    #[test]
    fn dilated_strided_shapes() {
        let spec = LayerSpec::conv(8, 16, 3, 2, 2);
        assert_eq!(spec.output_shape(&[8, 13, 13]).unwrap(), vec![16, 5, 5]);
        assert_eq!(LayerSpec::conv(3, 8, 7, 2, 1).output_shape(&[3, 32, 32]).unwrap(), vec![8, 13, 13]);
        assert!(LayerSpec::conv(3, 8, 4, 1, 1).validate().is_err());
        assert!(LayerSpec::Dropout { p: 1.0 }.validate().is_err());
    }

    #[test]
    fn concat_checks_spatial_extent() {
        let a = Tensor::<f32>::zeros(vec![2, 3, 3]);
        let b = Tensor::<f32>::zeros(vec![1, 3, 3]);
        let (y, cache) = concat_forward(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), &[3, 3, 3]);
        let parts = concat_backward(&cache, &y).unwrap();
        assert_eq!(parts[1].shape(), &[1, 3, 3]);
        let c = Tensor::<f32>::zeros(vec![1, 2, 3]);
        assert!(matches!(concat_forward(&[&a, &c]), Err(NetError::ConcatSpatial(..))));
    }

    #[test]
    fn softmax_normalizes() {
        let s = Layer::<f64>::without_params(LayerSpec::Softmax);
        let x = Tensor::new(vec![4], vec![30.0, 29.0, -5.0, 0.0]);
        let (y, _) = s.forward(&x, Mode::Eval, &mut rng()).unwrap();
        let total: f64 = y.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(y.data().iter().all(|v| *v > 0.0));
    }
}
