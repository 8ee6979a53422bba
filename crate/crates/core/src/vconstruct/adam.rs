use super::layer::DenseLayer;
use super::net::{Gradients, VConstructModel};
use super::{f64_of, real, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with `f64` moment accumulators.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

fn flat<F: Real>(l: &DenseLayer<F>) -> impl Iterator<Item = &F> {
    l.weights.iter().chain(l.bias.iter())
}

impl Adam {
    pub fn new<F: Real>(model: &VConstructModel<F>, cfg: AdamConfig) -> Self {
        let sizes: Vec<usize> = model
            .layers()
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .collect();
        Self {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update<F: Real>(&mut self, model: &mut VConstructModel<F>, grads: &Gradients<F>) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((layer, g), m), v) in model
            .layers_mut()
            .into_iter()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
            for (((p, &gi), mi), vi) in params.zip(flat(g)).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = f64_of(gi);
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let step = c.learning_rate * (*mi / bc1) / ((*vi / bc2).sqrt() + c.epsilon);
                *p = real(f64_of(*p) - step);
            }
        }
    }
}
