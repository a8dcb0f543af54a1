use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-buffer first/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new<'a>(buffers: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (m, v) = buffers
            .into_iter()
            .map(|b| (vec![0.0; b.len()], vec![0.0; b.len()]))
            .unzip();
        AdamState { m, v, t: 0 }
    }
}

/// One bias-corrected Adam update over every parameter buffer.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Config(format!(
            "adam: {} parameter buffers, {} gradient buffers, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Config(format!("adam: buffer {i} length mismatch")));
        }
    }
    state.t += 1;
    let AdamHyper { beta1, beta2, eps } = *hyper;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.5; 4];
        let mut s = AdamState::new([p.as_slice()]);
        adam_step(&mut [&mut p], &[vec![1.0; 4]], &mut s, 1e-4, &AdamHyper::default()).unwrap();
        for v in &p {
            assert!((v - (0.5 - 1e-4)).abs() < 1e-8);
        }
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![0.1, -0.2];
        let orig = p.clone();
        let mut s = AdamState::new([p.as_slice()]);
        for _ in 0..3 {
            adam_step(&mut [&mut p], &[vec![0.0; 2]], &mut s, 1e-3, &AdamHyper::default()).unwrap();
        }
        assert_eq!(p, orig);
        assert_eq!(s.t, 3);
    }

    #[test]
    fn identical_sequences_agree() {
        let run = || {
            let mut p = vec![0.3; 3];
            let mut s = AdamState::new([p.as_slice()]);
            for k in 0..5 {
                let g = vec![k as f64 * 0.1 - 0.2, 0.7, -1.3];
                adam_step(&mut [&mut p], &[g], &mut s, 1e-2, &AdamHyper::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_mismatched_buffers() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new([p.as_slice()]);
        assert!(adam_step(&mut [&mut p], &[vec![0.0; 3]], &mut s, 1e-3, &AdamHyper::default()).is_err());
    }
}
