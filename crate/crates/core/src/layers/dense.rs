use rand::Rng;

use super::Activation;
use crate::error::{Error, Result};

/// Fully connected layer, `y = act(W x + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_features: usize,
    out_features: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f64>,
    output: Vec<f64>,
}

impl DenseCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(in_features: usize, out_features: usize, activation: Activation) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config(format!(
                "dense layer needs positive sizes, got {in_features} -> {out_features}"
            )));
        }
        Ok(DenseLayer {
            in_features,
            out_features,
            activation,
            weights: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        })
    }

    pub fn with_params(mut self, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != self.weights.len() || bias.len() != self.bias.len() {
            return Err(Error::Config("dense parameter sizes do not match".into()));
        }
        self.weights = weights;
        self.bias = bias;
        Ok(self)
    }

    pub(crate) fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        super::init_uniform(rng, &mut self.weights, self.in_features, self.out_features, 1);
        self.bias.fill(0.0);
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
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

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        if x.len() != self.in_features {
            return Err(Error::Dimension(format!(
                "dense layer expects {} inputs, got {}",
                self.in_features,
                x.len()
            )));
        }
        let mut y: Vec<f64> = self
            .weights
            .chunks_exact(self.in_features)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        self.activation.apply(&mut y);
        Ok((
            y.clone(),
            DenseCache {
                input: x.to_vec(),
                output: y,
            },
        ))
    }

    pub fn backward(&self, cache: DenseCache, grad: &[f64]) -> Result<DenseGrads> {
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.bias.len()];
        let input = self.backward_into(&cache, grad, false, &mut gw, &mut gb)?;
        Ok(DenseGrads {
            input,
            weights: gw,
            bias: gb,
        })
    }

    pub(crate) fn backward_into(
        &self,
        cache: &DenseCache,
        grad: &[f64],
        skip_activation: bool,
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> Result<Vec<f64>> {
        if grad.len() != self.out_features || cache.input.len() != self.in_features {
            return Err(Error::Dimension(format!(
                "dense gradient has {} elements, layer has {} outputs",
                grad.len(),
                self.out_features
            )));
        }
        let mut delta = grad.to_vec();
        if !skip_activation {
            self.activation.chain(&cache.output, &mut delta);
        }
        let mut dx = vec![0.0; self.in_features];
        for (o, &d) in delta.iter().enumerate() {
            gb[o] += d;
            let row = o * self.in_features;
            for (i, &xi) in cache.input.iter().enumerate() {
                gw[row + i] += d * xi;
                dx[i] += d * self.weights[row + i];
            }
        }
        Ok(dx)
    }
}
