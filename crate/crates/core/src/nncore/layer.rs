use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W` stored `d_out x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub frozen: bool,
}

/// Gradient buffers shaped like one [`Linear`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> Self {
        Self {
            weight: Matrix::zeros(layer.d_out(), layer.d_in()),
            bias: vec![0.0; layer.d_out()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight.as_slice().iter().chain(&self.bias).all(|&v| v == 0.0)
    }
}

impl Linear {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                "Linear::new bias",
                weight.rows(),
                bias.len(),
            ));
        }
        Ok(Self {
            weight,
            bias,
            frozen: false,
        })
    }

    pub fn zeros(d_out: usize, d_in: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_out, d_in),
            bias: vec![0.0; d_out],
            frozen: false,
        }
    }

    /// Uniform init in `±1/sqrt(d_in)` for weights and bias.
    pub fn init_uniform<R: Rng + ?Sized>(d_out: usize, d_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let mut layer = Self::zeros(d_out, d_in);
        for w in layer.weight.as_mut_slice() {
            *w = rng.random_range(-bound..bound);
        }
        for b in &mut layer.bias {
            *b = rng.random_range(-bound..bound);
        }
        layer
    }

    #[inline]
    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn n_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_in() {
            return Err(Error::shape("Linear::forward input columns", self.d_in(), x.cols()));
        }
        let mut out = Matrix::zeros(x.rows(), self.d_out());
        for (i, xi) in x.iter_rows().enumerate() {
            let oi = out.row_mut(i);
            for (o, w) in self.weight.iter_rows().enumerate() {
                let mut acc = self.bias[o];
                for (wj, xj) in w.iter().zip(xi) {
                    acc += wj * xj;
                }
                oi[o] = acc;
            }
        }
        Ok(out)
    }

    /// Given `dL/dY` and the layer input, accumulates parameter gradients and
    /// optionally returns `dL/dX`.
    pub(crate) fn backward(
        &self,
        input: &Matrix,
        grad_out: &Matrix,
        want_input_grad: bool,
    ) -> (LinearGrad, Option<Matrix>) {
        let mut grad = LinearGrad::zeros_like(self);
        for (xi, gi) in input.iter_rows().zip(grad_out.iter_rows()) {
            for (o, &g) in gi.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                for (wg, &xj) in grad.weight.row_mut(o).iter_mut().zip(xi) {
                    *wg += g * xj;
                }
            }
        }
        let grad_in = want_input_grad.then(|| {
            let mut gx = Matrix::zeros(input.rows(), self.d_in());
            for (i, gi) in grad_out.iter_rows().enumerate() {
                let gxi = gx.row_mut(i);
                for (o, &g) in gi.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for (acc, &w) in gxi.iter_mut().zip(self.weight.row(o)) {
                        *acc += g * w;
                    }
                }
            }
            gx
        });
        (grad, grad_in)
    }
}

pub(crate) fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}
