//! Network building blocks with hand-written backward passes.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{tanh_backward, tanh_forward, Activation};
pub use conv::{ConvCache, ConvGrads, GenerativeConvLayer};
pub use dense::{DenseCache, DenseGrads, DenseLayer};
pub use pool::{PoolCache, PoolKind, PoolLayer};

use rand::Rng;

/// Uniform `[-a, a]` with `a = sqrt(6 / (fan_in * q + fan_out))`.
pub(crate) fn init_uniform<R: Rng + ?Sized>(rng: &mut R, buf: &mut [f64], fan_in: usize, fan_out: usize, q: usize) {
    let a = (6.0 / (fan_in * q + fan_out) as f64).sqrt();
    buf.iter_mut().for_each(|w| *w = rng.gen_range(-a..=a));
}
