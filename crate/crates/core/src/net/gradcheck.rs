//! Central finite-difference validation of analytic gradients.

use serde::Serialize;

use super::layers::{Layer, LayerSpec, Mode};
use super::loss::{loss_value_and_grad, LossSpec};
use super::tensor::Tensor;
use crate::rng::RngStream;

/// Anything exposing f64 parameter groups, a scalar objective and its gradient.
pub trait Differentiable {
    fn group_names(&self) -> Vec<String>;
    fn group(&self, index: usize) -> &[f64];
    fn group_mut(&mut self, index: usize) -> &mut [f64];
    fn objective(&mut self) -> f64;
    fn objective_and_grads(&mut self) -> (f64, Vec<Vec<f64>>);
}

/// Gradient magnitudes below this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;
pub const DEFAULT_EPS: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.groups.extend(other.groups);
    }
}

/// Perturbs every scalar of every group by ±`eps` and compares the
/// central difference with the analytic gradient.
pub fn grad_check<D: Differentiable>(model: &mut D, eps: f64, tolerance: f64) -> GradCheckReport {
    let (_, analytic) = model.objective_and_grads();
    let names = model.group_names();
    let mut groups = Vec::with_capacity(names.len());
    for (gi, name) in names.into_iter().enumerate() {
        let n = model.group(gi).len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let orig = model.group(gi)[i];
            model.group_mut(gi)[i] = orig + eps;
            let plus = model.objective();
            model.group_mut(gi)[i] = orig - eps;
            let minus = model.objective();
            model.group_mut(gi)[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[gi][i], numeric));
        }
        groups.push(GroupError { name, checked: n, max_rel_error: worst });
    }
    GradCheckReport { eps, tolerance, groups }
}

/// A single layer under the objective `Σ wᵢ·yᵢ` with fixed random weights.
///
/// Dropout masks are reproduced on every evaluation by replaying the same
/// random stream, so train-mode dropout is checked against a fixed mask.
pub struct LayerProbe {
    layer: Layer<f64>,
    input: Tensor<f64>,
    readout: Vec<f64>,
    mode: Mode,
    seed: u64,
}

impl LayerProbe {
    pub fn new(layer: Layer<f64>, input: Tensor<f64>, mode: Mode, rng: &mut RngStream) -> Self {
        let out = layer
            .spec
            .output_shape(input.shape())
            .expect("probe input matches layer")
            .iter()
            .product();
        let readout = (0..out).map(|_| rng.normal()).collect();
        Self { layer, input, readout, mode, seed: rng.next_u64() }
    }

    fn run(&self) -> f64 {
        let mut rng = RngStream::new(self.seed, 0);
        let (y, _) = self.layer.forward(&self.input, self.mode, &mut rng).expect("probe forward");
        y.data().iter().zip(&self.readout).map(|(a, b)| a * b).sum()
    }
}

impl Differentiable for LayerProbe {
    fn group_names(&self) -> Vec<String> {
        let mut names = vec![format!("{}.input", self.layer.spec.kind())];
        if self.layer.weight.is_some() {
            names.push(format!("{}.weight", self.layer.spec.kind()));
            names.push(format!("{}.bias", self.layer.spec.kind()));
        }
        names
    }

    fn group(&self, index: usize) -> &[f64] {
        match index {
            0 => self.input.data(),
            1 => self.layer.weight.as_ref().unwrap().data(),
            _ => self.layer.bias.as_ref().unwrap().data(),
        }
    }

    fn group_mut(&mut self, index: usize) -> &mut [f64] {
        match index {
            0 => self.input.data_mut(),
            1 => self.layer.weight.as_mut().unwrap().data_mut(),
            _ => self.layer.bias.as_mut().unwrap().data_mut(),
        }
    }

    fn objective(&mut self) -> f64 {
        self.run()
    }

    fn objective_and_grads(&mut self) -> (f64, Vec<Vec<f64>>) {
        let mut rng = RngStream::new(self.seed, 0);
        let (y, cache) = self.layer.forward(&self.input, self.mode, &mut rng).expect("probe forward");
        let value = y.data().iter().zip(&self.readout).map(|(a, b)| a * b).sum();
        let upstream = Tensor::new(y.shape().to_vec(), self.readout.clone());
        let (dx, params) = self.layer.backward(&cache, &upstream).expect("probe backward");
        let mut grads = vec![dx.into_data()];
        grads.extend(params.into_iter().map(Tensor::into_data));
        (value, grads)
    }
}

/// A loss under test, differentiated with respect to its `predicted` input.
pub struct LossProbe {
    pub spec: LossSpec,
    pub predicted: Tensor<f64>,
    pub target: Tensor<f64>,
}

impl Differentiable for LossProbe {
    fn group_names(&self) -> Vec<String> {
        vec![format!("{}.predicted", self.spec.kind.name())]
    }

    fn group(&self, _: usize) -> &[f64] {
        self.predicted.data()
    }

    fn group_mut(&mut self, _: usize) -> &mut [f64] {
        self.predicted.data_mut()
    }

    fn objective(&mut self) -> f64 {
        loss_value_and_grad(&self.spec, &self.predicted, &self.target).expect("loss domain").0
    }

    fn objective_and_grads(&mut self) -> (f64, Vec<Vec<f64>>) {
        let (v, g) = loss_value_and_grad(&self.spec, &self.predicted, &self.target).expect("loss domain");
        (v, vec![g.into_data()])
    }
}

/// Random input tensor for `spec`, keeping ReLU inputs away from the kink.
pub fn random_layer_input(spec: &LayerSpec, shape: Vec<usize>, rng: &mut RngStream) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.uniform() * 2.0 - 1.0;
            if matches!(spec, LayerSpec::Relu) && v.abs() < 0.05 {
                v.signum() * 0.05 + v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape, data)
}
