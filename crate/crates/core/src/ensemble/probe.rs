//! End-to-end gradient check of a whole network in double precision.

use crate::net::{loss_value_and_grad, Differentiable, LossSpec, Mode, Tensor};
use crate::rng::RngStream;

use super::network::Network;

/// Mean loss of a fixed mini-batch, differentiated with respect to every
/// parameter tensor. Dropout masks replay from `seed` on each evaluation.
pub struct NetworkProbe {
    pub net: Network<f64>,
    pub inputs: Vec<Tensor<f64>>,
    pub targets: Vec<Tensor<f64>>,
    pub loss: LossSpec,
    pub mode: Mode,
    pub seed: u64,
    names: Vec<String>,
}

impl NetworkProbe {
    pub fn new(net: Network<f64>, inputs: Vec<Tensor<f64>>, targets: Vec<Tensor<f64>>, loss: LossSpec, mode: Mode, seed: u64) -> Self {
        let names = net.named_params().into_iter().map(|(n, _)| n).collect();
        Self { net, inputs, targets, loss, mode, seed, names }
    }

    fn run(&self, with_grads: bool) -> (f64, Vec<Vec<f64>>) {
        let mut rng = RngStream::new(self.seed, 0);
        let scale = 1.0 / self.inputs.len() as f64;
        let mut total = 0.0;
        let mut acc: Vec<Vec<f64>> = Vec::new();
        for (x, t) in self.inputs.iter().zip(&self.targets) {
            let (y, trace) = self.net.forward(x, self.mode, &mut rng).expect("probe forward");
            let (l, mut g) = loss_value_and_grad(&self.loss, &y, t).expect("probe loss");
            total += l * scale;
            if with_grads {
                g.scale(scale);
                let grads = self.net.backward(&trace, &g).expect("probe backward");
                if acc.is_empty() {
                    acc = grads.into_iter().map(Tensor::into_data).collect();
                } else {
                    for (a, g) in acc.iter_mut().zip(grads) {
                        a.iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
                    }
                }
            }
        }
        (total, acc)
    }
}

impl Differentiable for NetworkProbe {
    fn group_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn group(&self, index: usize) -> &[f64] {
        self.net.named_params()[index].1.data()
    }

    fn group_mut(&mut self, index: usize) -> &mut [f64] {
        self.net.params_mut().swap_remove(index).data_mut()
    }

    fn objective(&mut self) -> f64 {
        self.run(false).0
    }

    fn objective_and_grads(&mut self) -> (f64, Vec<Vec<f64>>) {
        self.run(true)
    }
}
