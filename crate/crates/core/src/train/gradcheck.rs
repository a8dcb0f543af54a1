//! Central-difference verification of the analytic backward pass.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mse_loss;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates probed per parameter buffer (the largest-gradient
    /// coordinate is always added). `None` probes every coordinate.
    pub samples_per_buffer: Option<usize>,
    /// Denominator floor for the relative error, so that coordinates whose
    /// true gradient is below the resolution of the central difference are
    /// judged by absolute error at this scale.
    pub floor: f64,
    /// Step reductions tried when a probe moves a max-pool selection.
    pub kink_retries: u32,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            samples_per_buffer: Some(6),
            floor: 1e-6,
            kink_retries: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub buffer: String,
    pub index: usize,
    /// Human-readable coordinates within the buffer.
    pub coords: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// The step that produced `numeric`.
    pub step: f64,
    /// Every tried step moved a max-pool selection, so the loss is not
    /// differentiable within reach and the entry is left out of the maximum.
    pub kink: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest relative error over entries that are not on a kink.
    pub max_rel_error: f64,
    pub kinks: usize,
    pub worst: GradCheckEntry,
    pub entries: Vec<GradCheckEntry>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub(crate) fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn describe(net: &Network, buffer: usize, index: usize) -> String {
    let stages = net.stages();
    let layer = buffer / 2;
    let is_bias = buffer % 2 == 1;
    if is_bias {
        return format!("k={index}");
    }
    if layer < stages.len() {
        let c = &stages[layer].conv;
        let (m, n) = c.kernel();
        let (q, s) = (c.q(), c.in_maps());
        let v = index % n;
        let u = (index / n) % m;
        let qq = (index / (n * m)) % q;
        let j = (index / (n * m * q)) % s;
        let k = index / (n * m * q * s);
        format!("k={k},j={j},q={},u={u},v={v}", qq + 1)
    } else {
        let d = &net.dense_layers()[layer - stages.len()];
        format!("out={},in={}", index / d.in_features(), index % d.in_features())
    }
}

/// Compares analytic parameter gradients of the MSE loss on one sample
/// against central differences, re-running only the layers downstream of
/// each perturbed parameter.
pub fn gradient_check(net: &Network, input: &Tensor, target: &[f64], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) || !(opts.floor > 0.0) {
        return Err(Error::Config("gradcheck step and floor must be positive".into()));
    }
    let trace = net.forward_trace(input)?;
    let (_, g) = mse_loss(trace.output(), target)?;
    let mut grads = net.zero_gradients();
    net.backward(&trace, &g, &mut grads)?;

    let names = net.param_names();
    let mut probe = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    for (b, analytic) in grads.buffers.iter().enumerate() {
        let len = analytic.len();
        let mut coords: Vec<usize> = match opts.samples_per_buffer {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        let largest = (0..len)
            .max_by(|&x, &y| analytic[x].abs().total_cmp(&analytic[y].abs()))
            .unwrap_or(0);
        if !coords.contains(&largest) {
            coords.push(largest);
        }
        coords.sort_unstable();
        for idx in coords {
            let original = net.param_buffers()[b][idx];
            let mut eval = |delta: f64| -> Result<(f64, bool)> {
                probe.param_buffers_mut()[b][idx] = original + delta;
                let (out, switched) = probe.forward_from(b, &trace)?;
                Ok((mse_loss(&out, target)?.0, switched))
            };
            let mut step = opts.step;
            let mut attempt = 0;
            let (numeric, kink) = loop {
                let (plus, s1) = eval(step)?;
                let (minus, s2) = eval(-step)?;
                let numeric = (plus - minus) / (2.0 * step);
                if !(s1 || s2) || attempt == opts.kink_retries {
                    break (numeric, s1 || s2);
                }
                attempt += 1;
                step /= 10.0;
            };
            probe.param_buffers_mut()[b][idx] = original;
            entries.push(GradCheckEntry {
                buffer: names[b].clone(),
                index: idx,
                coords: describe(net, b, idx),
                analytic: analytic[idx],
                numeric,
                rel_error: relative_error(analytic[idx], numeric, opts.floor),
                step,
                kink,
            });
        }
    }
    let kinks = entries.iter().filter(|e| e.kink).count();
    let worst = entries
        .iter()
        .filter(|e| !e.kink)
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .cloned()
        .ok_or_else(|| Error::Config("no differentiable coordinate was probed".into()))?;
    Ok(GradCheckReport {
        max_rel_error: worst.rel_error,
        kinks,
        worst,
        entries,
    })
}
