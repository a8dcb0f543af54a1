//! Operational convolution layer built from generative neurons.
//!
//! Each kernel connection applies a learned Q-term polynomial to its input
//! taps: `x_k = b_k + sum_j sum_q conv(y_j^q, W[k][j][q])`. Stacking the
//! powers `y_j^1..y_j^Q` as extra channels turns the whole layer into one
//! GEMM over the patch matrix of the power stack.

use rand::Rng;

use super::Activation;
use crate::error::{Error, Result};
use crate::tensor::patches::{gemm, Geometry};
use crate::tensor::{Padding, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeConvLayer {
    in_maps: usize,
    out_maps: usize,
    q: usize,
    kernel: (usize, usize),
    padding: Padding,
    activation: Activation,
    /// `[k][j][q][u][v]`, slice `q` holds the weights of the `(q + 1)`-th power.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// What backward needs from forward: the power stack and the layer output.
#[derive(Debug, Clone)]
pub struct ConvCache {
    /// `[S * Q, H, W]`, channel `j * Q + q` holds `input_j^(q + 1)`.
    powers: Tensor,
    output: Tensor,
}

impl ConvCache {
    pub fn powers(&self) -> &Tensor {
        &self.powers
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GenerativeConvLayer {
    /// A zero-initialized layer.
    pub fn new(
        in_maps: usize,
        out_maps: usize,
        q: usize,
        kernel: (usize, usize),
        padding: Padding,
        activation: Activation,
    ) -> Result<Self> {
        if in_maps == 0 || out_maps == 0 || q == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::Config(format!(
                "conv layer needs positive sizes (in={in_maps}, out={out_maps}, Q={q}, kernel={}x{})",
                kernel.0, kernel.1
            )));
        }
        Ok(GenerativeConvLayer {
            in_maps,
            out_maps,
            q,
            kernel,
            padding,
            activation,
            weights: vec![0.0; out_maps * in_maps * q * kernel.0 * kernel.1],
            bias: vec![0.0; out_maps],
        })
    }

    pub fn with_params(mut self, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != self.weights.len() || bias.len() != self.bias.len() {
            return Err(Error::Config(format!(
                "expected {} weights and {} biases, got {} and {}",
                self.weights.len(),
                self.bias.len(),
                weights.len(),
                bias.len()
            )));
        }
        self.weights = weights;
        self.bias = bias;
        Ok(self)
    }

    pub(crate) fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let taps = self.kernel.0 * self.kernel.1;
        super::init_uniform(rng, &mut self.weights, self.in_maps * taps, self.out_maps * taps, self.q);
        self.bias.fill(0.0);
    }

    pub fn in_maps(&self) -> usize {
        self.in_maps
    }

    pub fn out_maps(&self) -> usize {
        self.out_maps
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn kernel(&self) -> (usize, usize) {
        self.kernel
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    /// Flat position of `W[k][j][q][u][v]` (`q` zero-based).
    pub fn weight_index(&self, k: usize, j: usize, q: usize, u: usize, v: usize) -> usize {
        (((k * self.in_maps + j) * self.q + q) * self.kernel.0 + u) * self.kernel.1 + v
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn output_shape(&self, (h, w): (usize, usize)) -> Result<(usize, usize)> {
        self.geometry(h, w).map(|g| (g.ho, g.wo))
    }

    fn geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        Geometry::new(self.in_maps * self.q, (h, w), self.kernel, self.padding).ok_or_else(|| {
            Error::Dimension(format!(
                "kernel {}x{} does not fit {h}x{w} input under {} padding",
                self.kernel.0,
                self.kernel.1,
                self.padding.as_str()
            ))
        })
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        match *input.shape() {
            [s, h, w] if s == self.in_maps => Ok((h, w)),
            _ => Err(Error::Config(format!(
                "layer expects [{}, H, W] input, got {:?}",
                self.in_maps,
                input.shape()
            ))),
        }
    }

    /// Forward pass over `[S, H, W]` input, returning `[K, H_out, W_out]`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ConvCache)> {
        let (h, w) = self.check_input(input)?;
        let g = self.geometry(h, w)?;
        let powers = self.power_stack(input, h * w);
        let positions = g.positions();
        let taps = g.taps();
        let mut out = vec![0.0; self.out_maps * positions];
        let band = g.band_rows();
        let mut cols = vec![0.0; taps * band * g.wo];
        let mut r0 = 0;
        while r0 < g.ho {
            let r1 = (r0 + band).min(g.ho);
            let width = (r1 - r0) * g.wo;
            g.gather(powers.data(), r0, r1, &mut cols);
            gemm(
                (self.out_maps, taps, width),
                1.0,
                &self.weights,
                (taps, 1),
                &cols,
                (width, 1),
                0.0,
                &mut out[r0 * g.wo..],
                (positions, 1),
            );
            r0 = r1;
        }
        for (plane, b) in out.chunks_exact_mut(positions).zip(&self.bias) {
            plane.iter_mut().for_each(|v| *v += b);
        }
        self.activation.apply(&mut out);
        let output = Tensor::from_parts(vec![self.out_maps, g.ho, g.wo], out);
        Ok((output.clone(), ConvCache { powers, output }))
    }

    fn power_stack(&self, input: &Tensor, plane: usize) -> Tensor {
        let q = self.q;
        let mut data = vec![0.0; self.in_maps * q * plane];
        for (j, src) in input.data().chunks_exact(plane).enumerate() {
            let base = j * q * plane;
            data[base..base + plane].copy_from_slice(src);
            for p in 1..q {
                let (done, rest) = data.split_at_mut(base + p * plane);
                let prev = &done[base + (p - 1) * plane..];
                rest[..plane]
                    .iter_mut()
                    .zip(prev)
                    .zip(src)
                    .for_each(|((d, a), b)| *d = a * b);
            }
        }
        let (h, w) = (input.shape()[1], input.shape()[2]);
        Tensor::from_parts(vec![self.in_maps * q, h, w], data)
    }

    /// Exact gradients of a scalar loss given `dL/d(output)`.
    pub fn backward(&self, cache: ConvCache, grad_out: &Tensor) -> Result<ConvGrads> {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.bias.len()];
        let input = self.backward_into(&cache, grad_out.data(), true, false, &mut gw, &mut gb)?;
        Ok(ConvGrads {
            input: input.expect("input gradient requested"),
            weights: gw,
            bias: gb,
        })
    }

    /// Accumulates parameter gradients into `gw`/`gb`; computes the input
    /// gradient only when asked. `skip_activation` drops the activation
    /// derivative and exists for negative-control tests of the gradient checker.
    pub(crate) fn backward_into(
        &self,
        cache: &ConvCache,
        grad_out: &[f64],
        want_input: bool,
        skip_activation: bool,
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> Result<Option<Tensor>> {
        let pshape = cache.powers.shape();
        if pshape.len() != 3 || pshape[0] != self.in_maps * self.q || grad_out.len() != cache.output.len() {
            return Err(Error::Config(format!(
                "cache {:?}/{:?} does not match layer or gradient of {} elements",
                pshape,
                cache.output.shape(),
                grad_out.len()
            )));
        }
        let (h, w) = (pshape[1], pshape[2]);
        let g = self.geometry(h, w)?;
        let positions = g.positions();
        let taps = g.taps();

        let mut delta = grad_out.to_vec();
        if !skip_activation {
            self.activation.chain(cache.output.data(), &mut delta);
        }
        for (b, plane) in gb.iter_mut().zip(delta.chunks_exact(positions)) {
            *b += plane.iter().sum::<f64>();
        }

        let band = g.band_rows();
        let mut cols = vec![0.0; taps * band * g.wo];
        let mut dcols = if want_input { vec![0.0; taps * band * g.wo] } else { Vec::new() };
        let mut dpowers = if want_input { vec![0.0; cache.powers.len()] } else { Vec::new() };
        let mut r0 = 0;
        while r0 < g.ho {
            let r1 = (r0 + band).min(g.ho);
            let width = (r1 - r0) * g.wo;
            g.gather(cache.powers.data(), r0, r1, &mut cols);
            // dW += delta_band * cols^T
            gemm(
                (self.out_maps, width, taps),
                1.0,
                &delta[r0 * g.wo..],
                (positions, 1),
                &cols,
                (1, width),
                1.0,
                gw,
                (taps, 1),
            );
            if want_input {
                // dcols = W^T * delta_band
                gemm(
                    (taps, self.out_maps, width),
                    1.0,
                    &self.weights,
                    (1, taps),
                    &delta[r0 * g.wo..],
                    (positions, 1),
                    0.0,
                    &mut dcols,
                    (width, 1),
                );
                g.scatter_add(&dcols, r0, r1, &mut dpowers);
            }
            r0 = r1;
        }
        if !want_input {
            return Ok(None);
        }

        // d(y^(p+1))/dy = (p + 1) y^p
        let plane = h * w;
        let q = self.q;
        let mut dx = vec![0.0; self.in_maps * plane];
        for (j, dst) in dx.chunks_exact_mut(plane).enumerate() {
            let base = j * q * plane;
            dst.copy_from_slice(&dpowers[base..base + plane]);
            for p in 1..q {
                let dp = &dpowers[base + p * plane..base + (p + 1) * plane];
                let yp = &cache.powers.data()[base + (p - 1) * plane..base + p * plane];
                let scale = (p + 1) as f64;
                dst.iter_mut()
                    .zip(dp.iter().zip(yp))
                    .for_each(|(d, (g, y))| *d += scale * y * g);
            }
        }
        Ok(Some(Tensor::from_parts(vec![self.in_maps, h, w], dx)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d_direct;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(rng: &mut ChaCha8Rng, s: usize, k: usize, q: usize, kern: (usize, usize), padding: Padding, act: Activation) -> GenerativeConvLayer {
        let mut l = GenerativeConvLayer::new(s, k, q, kern, padding, act).unwrap();
        l.weights_mut().iter_mut().for_each(|w| *w = rng.gen_range(-0.5..0.5));
        l.bias_mut().iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        l
    }

    fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_tap_polynomial() {
        let l = GenerativeConvLayer::new(1, 1, 3, (1, 1), Padding::Valid, Activation::Linear)
            .unwrap()
            .with_params(vec![1.0, 2.0, -4.0], vec![0.0])
            .unwrap();
        let x = Tensor::full(&[1, 1, 1], 0.5);
        let (y, cache) = l.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.5]);
        let g = l.backward(cache, &Tensor::full(&[1, 1, 1], 1.0)).unwrap();
        // 1 + 2*2*0.5 + 3*(-4)*0.25
        assert!(g.input.data()[0].abs() < 1e-15);
        assert_eq!(g.weights, vec![0.5, 0.25, 0.125]);
        assert_eq!(g.bias, vec![1.0]);
    }

    #[test]
    fn zero_weights_give_tanh_of_bias() {
        let l = GenerativeConvLayer::new(2, 3, 5, (3, 3), Padding::Same, Activation::Tanh)
            .unwrap()
            .with_params(vec![0.0; 3 * 2 * 5 * 9], vec![0.3, -0.2, 0.0])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, _) = l.forward(&random_input(&mut rng, &[2, 6, 7])).unwrap();
        for (k, b) in [0.3f64, -0.2, 0.0].iter().enumerate() {
            assert!(y.channel(k).iter().all(|&v| v == b.tanh()));
        }
    }

    #[test]
    fn q1_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for padding in [Padding::Valid, Padding::Same] {
            let l = random_layer(&mut rng, 3, 2, 1, (3, 2), padding, Activation::Linear);
            let x = random_input(&mut rng, &[3, 9, 8]);
            let (y, _) = l.forward(&x).unwrap();
            for k in 0..2 {
                let mut expect = vec![l.bias()[k]; y.channel(k).len()];
                for j in 0..3 {
                    let map = Tensor::new(vec![9, 8], x.channel(j).to_vec()).unwrap();
                    let idx = l.weight_index(k, j, 0, 0, 0);
                    let kern = Tensor::new(vec![3, 2], l.weights()[idx..idx + 6].to_vec()).unwrap();
                    let c = conv2d_direct(&map, &kern, padding).unwrap();
                    expect.iter_mut().zip(c.data()).for_each(|(e, v)| *e += v);
                }
                for (a, b) in y.channel(k).iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_input() {
        let l = GenerativeConvLayer::new(2, 1, 2, (3, 3), Padding::Valid, Activation::Tanh).unwrap();
        assert!(matches!(l.forward(&Tensor::zeros(&[3, 5, 5])), Err(Error::Config(_))));
        assert!(matches!(l.forward(&Tensor::zeros(&[2, 2, 5])), Err(Error::Dimension(_))));
        assert!(GenerativeConvLayer::new(2, 1, 0, (3, 3), Padding::Valid, Activation::Tanh).is_err());
    }

    #[test]
    fn backward_rejects_mismatched_gradient() {
        let l = GenerativeConvLayer::new(1, 1, 2, (1, 1), Padding::Valid, Activation::Tanh).unwrap();
        let (_, cache) = l.forward(&Tensor::zeros(&[1, 2, 2])).unwrap();
        assert!(l.backward(cache, &Tensor::zeros(&[1, 3, 3])).is_err());
    }

    #[test]
    fn weight_count_is_linear_in_q() {
        for q in 1..=9 {
            let l = GenerativeConvLayer::new(3, 4, q, (5, 3), Padding::Valid, Activation::Tanh).unwrap();
            assert_eq!(l.weights().len(), 3 * 4 * 15 * q);
            assert_eq!(l.param_count(), 180 * q + 4);
        }
    }
}
