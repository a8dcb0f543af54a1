use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Elementwise nonlinearity applied after a layer's affine part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    #[serde(alias = "none")]
    Linear,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, buf: &mut [f64]) {
        if self == Activation::Tanh {
            buf.iter_mut().for_each(|v| *v = v.tanh());
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed through the output `y`.
    #[inline]
    pub(crate) fn chain(self, y: &[f64], grad: &mut [f64]) {
        if self == Activation::Tanh {
            grad.iter_mut().zip(y).for_each(|(g, y)| *g *= 1.0 - y * y);
        }
    }
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// `grad * (1 - y^2)`, with `y` the forward output.
pub fn tanh_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let mut out = grad.clone();
    Activation::Tanh.chain(y.data(), out.data_mut());
    out
}
