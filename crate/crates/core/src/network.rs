//! The three-stage operational CNN with a dense classification head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Activation, ConvCache, DenseCache, DenseLayer, GenerativeConvLayer, PoolCache, PoolKind, PoolLayer};
use crate::tensor::{Padding, Tensor};

/// Declarative architecture. Defaults describe the reference network:
/// 3x128x128 input, operational widths 32/16/8 with 11x11, 9x9, 3x3 kernels,
/// pooling by 4, 4, 2, then dense 16 -> 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_size: (usize, usize),
    pub widths: Vec<usize>,
    pub kernels: Vec<(usize, usize)>,
    pub pools: Vec<usize>,
    /// Polynomial order of every operational layer; 1 gives a plain CNN.
    pub q: usize,
    pub dense_widths: Vec<usize>,
    pub padding: Padding,
    pub pool_kind: PoolKind,
    pub output_activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_channels: 3,
            input_size: (128, 128),
            widths: vec![32, 16, 8],
            kernels: vec![(11, 11), (9, 9), (3, 3)],
            pools: vec![4, 4, 2],
            q: 5,
            dense_widths: vec![16, 2],
            padding: Padding::Valid,
            pool_kind: PoolKind::Max,
            output_activation: Activation::Tanh,
        }
    }
}

/// Number of operational stages every configuration has.
pub const OPERATIONAL_STAGES: usize = 3;
/// Output classes (healthy, glaucoma).
pub const NUM_CLASSES: usize = 2;

/// Spatial extents around one operational stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub input: (usize, usize),
    pub conv_out: (usize, usize),
    pub pooled: (usize, usize),
}

impl NetworkConfig {
    pub fn with_q(q: usize) -> Self {
        NetworkConfig {
            q,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.widths.len();
        if n != OPERATIONAL_STAGES || self.kernels.len() != n || self.pools.len() != n {
            return Err(Error::Config(format!(
                "widths, kernels and pools must each list {OPERATIONAL_STAGES} stages (got {}, {}, {})",
                n,
                self.kernels.len(),
                self.pools.len()
            )));
        }
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("widths[{i}] must be positive")));
        }
        if let Some(i) = self.kernels.iter().position(|&(m, n)| m == 0 || n == 0) {
            return Err(Error::Config(format!("kernels[{i}] must be positive")));
        }
        if let Some(i) = self.pools.iter().position(|&p| p == 0) {
            return Err(Error::Config(format!("pools[{i}] must be positive")));
        }
        if self.dense_widths.last() != Some(&NUM_CLASSES) {
            return Err(Error::Config(format!(
                "dense_widths must end with the {NUM_CLASSES}-way output layer"
            )));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::Config("dense_widths must be positive".into()));
        }
        self.stage_shapes().map(|_| ())
    }

    /// Walks the spatial chain, failing at the first stage that collapses.
    pub fn stage_shapes(&self) -> Result<Vec<StageShape>> {
        let mut hw = self.input_size;
        if hw.0 == 0 || hw.1 == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        let mut out = Vec::with_capacity(self.widths.len());
        for (i, (&(m, n), &s)) in self.kernels.iter().zip(&self.pools).enumerate() {
            let conv_out = match (
                self.padding.output_extent(hw.0, m),
                self.padding.output_extent(hw.1, n),
            ) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Config(format!(
                        "operational layer {} ({}x{} kernel) collapses a {}x{} map to zero extent",
                        i + 1,
                        m,
                        n,
                        hw.0,
                        hw.1
                    )))
                }
            };
            let pooled = (conv_out.0 / s, conv_out.1 / s);
            if pooled.0 == 0 || pooled.1 == 0 {
                return Err(Error::Config(format!(
                    "pooling layer {} (factor {s}) collapses a {}x{} map to zero extent",
                    i + 1,
                    conv_out.0,
                    conv_out.1
                )));
            }
            out.push(StageShape {
                input: hw,
                conv_out,
                pooled,
            });
            hw = pooled;
        }
        Ok(out)
    }

    /// Features entering the dense head.
    pub fn flat_features(&self) -> Result<usize> {
        let shapes = self.stage_shapes()?;
        let (h, w) = shapes.last().map(|s| s.pooled).unwrap_or(self.input_size);
        Ok(self.widths.last().copied().unwrap_or(self.input_channels) * h * w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperationalStage {
    pub conv: GenerativeConvLayer,
    pub pool: PoolLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    stages: Vec<OperationalStage>,
    dense: Vec<DenseLayer>,
    backward_fault: bool,
}

/// Per-parameter-buffer gradient accumulators, in [`Network::param_buffers`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub buffers: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zero(&mut self) {
        self.buffers.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn is_finite(&self) -> bool {
        self.buffers.iter().flatten().all(|v| v.is_finite())
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    stage_inputs: Vec<Tensor>,
    conv: Vec<ConvCache>,
    pool: Vec<PoolCache>,
    features: Vec<f64>,
    dense: Vec<DenseCache>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Name of the first layer whose output holds a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        let bad = |d: &[f64]| d.iter().any(|v| !v.is_finite());
        for (i, c) in self.conv.iter().enumerate() {
            if bad(c.output().data()) {
                return Some(format!("oper{}", i + 1));
            }
        }
        for (i, d) in self.dense.iter().enumerate() {
            if bad(d.output()) {
                return Some(format!("dense{}", i + 1));
            }
        }
        None
    }
}

impl Network {
    /// Instantiates and initializes the network deterministically from `seed`.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Network::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut net.stages {
            s.conv.init(&mut rng);
        }
        for d in &mut net.dense {
            d.init(&mut rng);
        }
        Ok(net)
    }

    /// Same topology with every parameter zero.
    pub fn zeroed(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::new();
        let mut in_maps = config.input_channels;
        for ((&k, &kernel), &s) in config.widths.iter().zip(&config.kernels).zip(&config.pools) {
            stages.push(OperationalStage {
                conv: GenerativeConvLayer::new(in_maps, k, config.q, kernel, config.padding, Activation::Tanh)?,
                pool: PoolLayer::new(s, config.pool_kind)?,
            });
            in_maps = k;
        }
        let mut dense = Vec::new();
        let mut width = config.flat_features()?;
        for (i, &out) in config.dense_widths.iter().enumerate() {
            let act = if i + 1 == config.dense_widths.len() {
                config.output_activation
            } else {
                Activation::Tanh
            };
            dense.push(DenseLayer::new(width, out, act)?);
            width = out;
        }
        Ok(Network {
            config: config.clone(),
            stages,
            dense,
            backward_fault: false,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stages(&self) -> &[OperationalStage] {
        &self.stages
    }

    pub fn dense_layers(&self) -> &[DenseLayer] {
        &self.dense
    }

    /// Negative-control hook: when set, backward ignores activation derivatives.
    #[doc(hidden)]
    pub fn set_backward_fault(&mut self, on: bool) {
        self.backward_fault = on;
    }

    /// Parameter buffers in a fixed order: per stage conv weights then bias,
    /// then per dense layer weights then bias.
    pub fn param_buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for s in &self.stages {
            out.push(s.conv.weights());
            out.push(s.conv.bias());
        }
        for d in &self.dense {
            out.push(d.weights());
            out.push(d.bias());
        }
        out
    }

    pub fn param_buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for s in &mut self.stages {
            let (w, b) = s.conv.params_mut();
            out.push(w);
            out.push(b);
        }
        for d in &mut self.dense {
            let (w, b) = d.params_mut();
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Overwrites every parameter buffer, in [`param_buffers`](Self::param_buffers) order.
    pub fn set_params(&mut self, buffers: &[Vec<f64>]) -> Result<()> {
        let mut dst = self.param_buffers_mut();
        if dst.len() != buffers.len() || dst.iter().zip(buffers).any(|(d, s)| d.len() != s.len()) {
            return Err(Error::Config("parameter buffers do not match the network".into()));
        }
        if buffers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("parameters must be finite".into()));
        }
        for (d, s) in dst.iter_mut().zip(buffers) {
            d.copy_from_slice(s);
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.stages.len() {
            out.push(format!("oper{}.weight", i + 1));
            out.push(format!("oper{}.bias", i + 1));
        }
        for i in 0..self.dense.len() {
            out.push(format!("dense{}.weight", i + 1));
            out.push(format!("dense{}.bias", i + 1));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_buffers().iter().map(|b| b.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            buffers: self.param_buffers().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let c = &self.config;
        if x.shape() != [c.input_channels, c.input_size.0, c.input_size.1] {
            return Err(Error::Dimension(format!(
                "network expects input [{}, {}, {}], got {:?}",
                c.input_channels,
                c.input_size.0,
                c.input_size.1,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Class scores for one `[C, H, W]` image.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut trace = Trace {
            stage_inputs: Vec::with_capacity(self.stages.len()),
            conv: Vec::with_capacity(self.stages.len()),
            pool: Vec::with_capacity(self.stages.len()),
            features: Vec::new(),
            dense: Vec::with_capacity(self.dense.len()),
            output: Vec::new(),
        };
        let mut maps = x.clone();
        for s in &self.stages {
            let (y, cc) = s.conv.forward(&maps)?;
            let (p, pc) = s.pool.forward(&y)?;
            trace.stage_inputs.push(maps);
            trace.conv.push(cc);
            trace.pool.push(pc);
            maps = p;
        }
        trace.features = maps.into_data();
        self.run_dense(0, &mut trace)?;
        Ok(trace)
    }

    fn run_dense(&self, from: usize, trace: &mut Trace) -> Result<()> {
        trace.dense.truncate(from);
        let mut h = if from == 0 {
            trace.features.clone()
        } else {
            trace.dense[from - 1].output().to_vec()
        };
        for d in &self.dense[from..] {
            let (y, c) = d.forward(&h)?;
            trace.dense.push(c);
            h = y;
        }
        trace.output = h;
        Ok(())
    }

    /// Re-runs the forward pass from the layer that owns parameter buffer
    /// `buffer`, reusing the upstream part of `base`. The flag reports
    /// whether any max-pool window picked a different element than in `base`.
    pub(crate) fn forward_from(&self, buffer: usize, base: &Trace) -> Result<(Vec<f64>, bool)> {
        let layer = buffer / 2;
        if layer < self.stages.len() {
            let mut maps = base.stage_inputs[layer].clone();
            let mut switched = false;
            for (i, s) in self.stages.iter().enumerate().skip(layer) {
                let (y, _) = s.conv.forward(&maps)?;
                let (pooled, cache) = s.pool.forward(&y)?;
                switched |= cache.argmax() != base.pool[i].argmax();
                maps = pooled;
            }
            let mut h = maps.into_data();
            for d in &self.dense {
                h = d.forward(&h)?.0;
            }
            Ok((h, switched))
        } else {
            let mut t = Trace {
                stage_inputs: Vec::new(),
                conv: Vec::new(),
                pool: Vec::new(),
                features: base.features.clone(),
                dense: base.dense.clone(),
                output: Vec::new(),
            };
            self.run_dense(layer - self.stages.len(), &mut t)?;
            Ok((t.output, false))
        }
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut Gradients) -> Result<()> {
        if grads.buffers.len() != 2 * (self.stages.len() + self.dense.len()) {
            return Err(Error::Config("gradient buffers do not match network".into()));
        }
        let ns = self.stages.len();
        let mut g = grad_out.to_vec();
        for (i, d) in self.dense.iter().enumerate().rev() {
            let (gw, gb) = pair_mut(&mut grads.buffers, 2 * (ns + i));
            g = d.backward_into(&trace.dense[i], &g, self.backward_fault, gw, gb)?;
        }
        let last = trace.pool.last().map(|p| p.output_shape()).unwrap_or_default();
        let mut gt = Tensor::new(last, g)?;
        for (i, s) in self.stages.iter().enumerate().rev() {
            let gy = s.pool.backward(&trace.pool[i], &gt)?;
            let (gw, gb) = pair_mut(&mut grads.buffers, 2 * i);
            match s.conv.backward_into(&trace.conv[i], gy.data(), i > 0, self.backward_fault, gw, gb)? {
                Some(gx) => gt = gx,
                None => break,
            }
        }
        Ok(())
    }
}

fn pair_mut(bufs: &mut [Vec<f64>], i: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = bufs[i..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}
