use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{real, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Self::Relu => 0,
            Self::Identity => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Relu),
            1 => Some(Self::Identity),
            _ => None,
        }
    }
}

/// `y = act(W x + b)` with `W` stored out×in.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<F: Real> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: Activation,
}

impl<F: Real> DenseLayer<F> {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    /// Uniform in `±√(6 / fan_in)`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / input as f64).sqrt();
        Self {
            weights: Array2::from_shape_simple_fn((output, input), || {
                real(rng.random_range(-limit..limit))
            }),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }

    /// Pre-activations for a batch (rows are samples).
    pub fn pre(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weights.t());
        y += &self.bias;
        y
    }

    pub fn activate(&self, mut pre: Array2<F>) -> Array2<F> {
        if self.activation == Activation::Relu {
            pre.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        }
        pre
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        self.activate(self.pre(x))
    }

    /// Turns the gradient w.r.t. this layer's output into the gradient w.r.t.
    /// its pre-activation. ReLU is differentiated through its output, so the
    /// derivative at 0 is 0.
    pub fn pre_grad(&self, output: &Array2<F>, mut grad: Array2<F>) -> Array2<F> {
        if self.activation == Activation::Relu {
            grad.zip_mut_with(output, |g, &o| {
                if o <= F::zero() {
                    *g = F::zero();
                }
            });
        }
        grad
    }

    /// Parameter gradients and input gradient from the pre-activation gradient.
    pub fn backward(
        &self,
        input: ArrayView2<F>,
        pre_grad: &Array2<F>,
        need_input_grad: bool,
    ) -> (DenseLayer<F>, Option<Array2<F>>) {
        let grads = DenseLayer {
            weights: pre_grad.t().dot(&input).as_standard_layout().into_owned(),
            bias: pre_grad.sum_axis(Axis(0)),
            activation: self.activation,
        };
        let dx = need_input_grad.then(|| pre_grad.dot(&self.weights));
        (grads, dx)
    }

    pub fn cast<G: Real>(&self) -> DenseLayer<G> {
        let conv = |v: &F| G::from_f64(v.to_f64().expect("finite")).expect("float");
        DenseLayer {
            weights: self.weights.map(conv),
            bias: self.bias.map(conv),
            activation: self.activation,
        }
    }
}
