use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    #[default]
    Max,
    Average,
}

/// Non-overlapping `s x s` sub-sampling. Rows and columns past
/// `s * floor(extent / s)` are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolLayer {
    pub factor: usize,
    pub kind: PoolKind,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat input index of each output's maximum (max pooling only).
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.output_shape.clone()
    }
}

impl PoolLayer {
    pub fn new(factor: usize, kind: PoolKind) -> Result<Self> {
        if factor < 1 {
            return Err(Error::Config("pool factor must be positive".into()));
        }
        Ok(PoolLayer { factor, kind })
    }

    pub fn max(factor: usize) -> Self {
        PoolLayer {
            factor,
            kind: PoolKind::Max,
        }
    }

    pub fn output_shape(&self, (h, w): (usize, usize)) -> Result<(usize, usize)> {
        let s = self.factor;
        if s > h || s > w {
            return Err(Error::Dimension(format!("pool factor {s} exceeds map {h}x{w}")));
        }
        Ok((h / s, w / s))
    }

    /// Accepts `[H, W]` or `[C, H, W]`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, PoolCache)> {
        let (c, h, w) = match *input.shape() {
            [h, w] => (1, h, w),
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::Dimension(format!(
                    "pooling needs a 2-D or 3-D tensor, got {:?}",
                    input.shape()
                )))
            }
        };
        let (ho, wo) = self.output_shape((h, w))?;
        let s = self.factor;
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::new();
        for ch in 0..c {
            let base = ch * h * w;
            let map = &input.data()[base..base + h * w];
            for i in 0..ho {
                for j in 0..wo {
                    match self.kind {
                        PoolKind::Max => {
                            let mut best = (i * s) * w + j * s;
                            for u in 0..s {
                                for v in 0..s {
                                    let idx = (i * s + u) * w + j * s + v;
                                    // strict: ties keep the first row-major index; NaN wins so divergence propagates
                                    if map[idx] > map[best] || (map[idx].is_nan() && !map[best].is_nan()) {
                                        best = idx;
                                    }
                                }
                            }
                            out.push(map[best]);
                            argmax.push(base + best);
                        }
                        PoolKind::Average => {
                            let mut acc = 0.0;
                            for u in 0..s {
                                let row = (i * s + u) * w + j * s;
                                acc += map[row..row + s].iter().sum::<f64>();
                            }
                            out.push(acc / (s * s) as f64);
                        }
                    }
                }
            }
        }
        let shape = if input.rank() == 2 { vec![ho, wo] } else { vec![c, ho, wo] };
        Ok((
            Tensor::from_parts(shape.clone(), out),
            PoolCache {
                input_shape: input.shape().to_vec(),
                output_shape: shape,
                argmax,
            },
        ))
    }

    /// Routes each output gradient back to the position that produced it.
    pub fn backward(&self, cache: &PoolCache, grad: &Tensor) -> Result<Tensor> {
        let mut dx = vec![0.0; cache.input_shape.iter().product()];
        match self.kind {
            PoolKind::Max => {
                if grad.len() != cache.argmax.len() {
                    return Err(Error::Dimension(format!(
                        "pool gradient has {} elements, cache expects {}",
                        grad.len(),
                        cache.argmax.len()
                    )));
                }
                for (&idx, g) in cache.argmax.iter().zip(grad.data()) {
                    dx[idx] += g;
                }
            }
            PoolKind::Average => {
                let (c, h, w) = match *cache.input_shape.as_slice() {
                    [h, w] => (1, h, w),
                    [c, h, w] => (c, h, w),
                    _ => unreachable!(),
                };
                let s = self.factor;
                let (ho, wo) = (h / s, w / s);
                if grad.len() != c * ho * wo {
                    return Err(Error::Dimension("pool gradient shape mismatch".into()));
                }
                let scale = 1.0 / (s * s) as f64;
                for ch in 0..c {
                    for i in 0..ho * wo {
                        let g = grad.data()[ch * ho * wo + i] * scale;
                        let (oi, oj) = (i / wo, i % wo);
                        for u in 0..s {
                            for v in 0..s {
                                dx[ch * h * w + (oi * s + u) * w + oj * s + v] += g;
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_parts(cache.input_shape.clone(), dx))
    }
}
