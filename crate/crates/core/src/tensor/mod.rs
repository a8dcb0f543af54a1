//! Dense row-major tensors and the convolution kernels built on them.
//!
//! Two routes compute the same 2-D correlation: [`conv2d_direct`] is a plain
//! nested loop, while [`im2col`] + [`hadamard_reduce`] reshuffles sliding
//! windows into matrix rows and reduces them against a row-repeated kernel.
//! The layers use a blocked, transposed variant of the second route (see
//! [`patches`]) and the first one serves as the oracle in tests.

mod io;
pub(crate) mod patches;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{decode_tensor, encode_tensor, read_tensor_file, write_tensor_file, Dtype};

/// Zero-padding mode for unit-stride correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding, the output shrinks by `kernel - 1`.
    #[default]
    Valid,
    /// Zero padding that preserves the spatial extent.
    Same,
}

impl Padding {
    /// Zeros added before and after an axis for a kernel of extent `k`.
    /// For even kernels the extra zero goes after.
    pub fn pads(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let before = (k - 1) / 2;
                (before, k - 1 - before)
            }
        }
    }

    /// Output extent along an axis, or `None` when the kernel does not fit.
    pub fn output_extent(self, len: usize, k: usize) -> Option<usize> {
        if k == 0 || len == 0 {
            return None;
        }
        let (b, a) = self.pads(k);
        (len + b + a).checked_sub(k).map(|d| d + 1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
        }
    }
}

/// Row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the buffer length and that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} must have at least one axis and positive extents"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} elements, buffer has {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "element {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    /// Builds a rank-2 tensor from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Tensor::new(
            vec![rows.len(), cols],
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Element at a 2-D index of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    /// Elementwise integer power `t^q`, `q >= 1`.
    pub fn powi(&self, q: u32) -> Self {
        elementwise_power(self, q)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Largest absolute elementwise difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Slice of channel `c` of a `[C, H, W]` tensor.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane: usize = self.shape[1..].iter().product();
        &self.data[c * plane..(c + 1) * plane]
    }

}

/// `out(i) = t(i)^q`.
pub fn elementwise_power(t: &Tensor, q: u32) -> Tensor {
    assert!(q >= 1, "power order must be at least 1");
    t.map(|v| v.powi(q as i32))
}

/// Windows of a single map reshuffled into rows, one row per output position.
#[derive(Debug, Clone, PartialEq)]
pub struct Im2ColMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    origin_shape: (usize, usize),
    kernel_shape: (usize, usize),
    out_shape: (usize, usize),
    padding: Padding,
}

impl Im2ColMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn origin_shape(&self) -> (usize, usize) {
        self.origin_shape
    }

    pub fn kernel_shape(&self) -> (usize, usize) {
        self.kernel_shape
    }

    /// `(H_out, W_out)`.
    pub fn out_shape(&self) -> (usize, usize) {
        self.out_shape
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    /// Inverse gather (col2im): scatter-adds every row back onto the source
    /// grid. Taps covered by several windows accumulate; padding taps drop.
    pub fn fold(&self) -> Tensor {
        let (h, w) = self.origin_shape;
        let (m, n) = self.kernel_shape;
        let (_, wo) = self.out_shape;
        let (pt, _) = self.padding.pads(m);
        let (pl, _) = self.padding.pads(n);
        let mut out = vec![0.0; h * w];
        for r in 0..self.rows {
            let (i, j) = (r / wo, r % wo);
            let row = self.row(r);
            for u in 0..m {
                let Some(y) = (i + u).checked_sub(pt).filter(|&y| y < h) else {
                    continue;
                };
                for v in 0..n {
                    if let Some(x) = (j + v).checked_sub(pl).filter(|&x| x < w) {
                        out[y * w + x] += row[u * n + v];
                    }
                }
            }
        }
        Tensor::from_parts(vec![h, w], out)
    }
}

fn check_map(map: &Tensor) -> Result<(usize, usize)> {
    if map.rank() != 2 {
        return Err(Error::Dimension(format!(
            "expected a 2-D map, got shape {:?}",
            map.shape()
        )));
    }
    Ok((map.shape()[0], map.shape()[1]))
}

fn output_shape(
    (h, w): (usize, usize),
    (m, n): (usize, usize),
    padding: Padding,
) -> Result<(usize, usize)> {
    match (padding.output_extent(h, m), padding.output_extent(w, n)) {
        (Some(ho), Some(wo)) => Ok((ho, wo)),
        _ => Err(Error::Dimension(format!(
            "kernel {m}x{n} does not fit map {h}x{w} under {} padding",
            padding.as_str()
        ))),
    }
}

/// Reshuffles every `m x n` window of `map` into a row.
pub fn im2col(map: &Tensor, kernel_shape: (usize, usize), padding: Padding) -> Result<Im2ColMatrix> {
    let (h, w) = check_map(map)?;
    let (m, n) = kernel_shape;
    let (ho, wo) = output_shape((h, w), kernel_shape, padding)?;
    let (pt, _) = padding.pads(m);
    let (pl, _) = padding.pads(n);
    let cols = m * n;
    let mut data = vec![0.0; ho * wo * cols];
    for i in 0..ho {
        for j in 0..wo {
            let row = &mut data[(i * wo + j) * cols..][..cols];
            for u in 0..m {
                let Some(y) = (i + u).checked_sub(pt).filter(|&y| y < h) else {
                    continue;
                };
                for v in 0..n {
                    if let Some(x) = (j + v).checked_sub(pl).filter(|&x| x < w) {
                        row[u * n + v] = map.data()[y * w + x];
                    }
                }
            }
        }
    }
    Ok(Im2ColMatrix {
        rows: ho * wo,
        cols,
        data,
        origin_shape: (h, w),
        kernel_shape,
        out_shape: (ho, wo),
        padding,
    })
}

/// Matrix whose `rows` rows are all copies of the flattened kernel.
pub fn repeat_kernel(kernel: &Tensor, rows: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * kernel.len());
    for _ in 0..rows {
        data.extend_from_slice(kernel.data());
    }
    Tensor::from_parts(vec![rows, kernel.len()], data)
}

/// Row sums of the Hadamard product `Y ⊗ Wrep`, reshaped to `H_out x W_out`.
pub fn hadamard_reduce(y: &Im2ColMatrix, wrep: &Tensor) -> Result<Tensor> {
    if wrep.shape() != [y.rows, y.cols] {
        return Err(Error::Dimension(format!(
            "im2col matrix is {}x{} but weight matrix is {:?}",
            y.rows,
            y.cols,
            wrep.shape()
        )));
    }
    let out = y
        .data
        .chunks_exact(y.cols)
        .zip(wrep.data().chunks_exact(y.cols))
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum())
        .collect();
    Ok(Tensor::from_parts(vec![y.out_shape.0, y.out_shape.1], out))
}

/// Nested-loop 2-D correlation:
/// `out(i, j) = sum_{u,v} kernel(u, v) * map(i + u - pad_top, j + v - pad_left)`.
pub fn conv2d_direct(map: &Tensor, kernel: &Tensor, padding: Padding) -> Result<Tensor> {
    let (h, w) = check_map(map)?;
    if kernel.rank() != 2 {
        return Err(Error::Dimension(format!(
            "expected a 2-D kernel, got shape {:?}",
            kernel.shape()
        )));
    }
    let (m, n) = (kernel.shape()[0], kernel.shape()[1]);
    let (ho, wo) = output_shape((h, w), (m, n), padding)?;
    let (pt, _) = padding.pads(m);
    let (pl, _) = padding.pads(n);
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            let mut acc = 0.0;
            for u in 0..m {
                for v in 0..n {
                    let (y, x) = (i + u, j + v);
                    if y < pt || x < pl || y - pt >= h || x - pl >= w {
                        continue;
                    }
                    acc += kernel.at2(u, v) * map.at2(y - pt, x - pl);
                }
            }
            out[i * wo + j] = acc;
        }
    }
    Ok(Tensor::from_parts(vec![ho, wo], out))
}
