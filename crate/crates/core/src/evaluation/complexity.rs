//! Trainable parameter (PARs) and multiply-accumulate (MACs) counts.
//!
//! Conventions: an operational layer with `S` input maps, `K` neurons, an
//! `m x n` kernel and order `Q` has `S*K*m*n*Q` weights plus `K` biases and
//! performs `H_out*W_out*m*n*S*K*Q` MACs. Dense layers contribute `in*out`
//! MACs. Bias additions, pooling and activations are not MACs.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::NetworkConfig;
use crate::tensor::Padding;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerComplexity {
    pub name: String,
    pub pars: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub convention: Padding,
    pub per_layer: Vec<LayerComplexity>,
    pub total_pars: u64,
    pub total_macs: u64,
}

impl ComplexityReport {
    pub fn pars_millions(&self) -> f64 {
        self.total_pars as f64 / 1e6
    }

    pub fn macs_millions(&self) -> f64 {
        self.total_macs as f64 / 1e6
    }
}

/// Per-layer and total counts under the configuration's padding convention.
pub fn complexity(cfg: &NetworkConfig) -> Result<ComplexityReport> {
    cfg.validate()?;
    let shapes = cfg.stage_shapes()?;
    let q = cfg.q as u64;
    let mut per_layer = Vec::new();
    let mut in_maps = cfg.input_channels as u64;
    for (i, ((&k, &(m, n)), shape)) in cfg.widths.iter().zip(&cfg.kernels).zip(&shapes).enumerate() {
        let (k, m, n) = (k as u64, m as u64, n as u64);
        let (ho, wo) = (shape.conv_out.0 as u64, shape.conv_out.1 as u64);
        per_layer.push(LayerComplexity {
            name: format!("oper{}", i + 1),
            pars: in_maps * k * m * n * q + k,
            macs: ho * wo * m * n * in_maps * k * q,
        });
        in_maps = k;
    }
    let mut width = cfg.flat_features()? as u64;
    for (i, &out) in cfg.dense_widths.iter().enumerate() {
        let out = out as u64;
        per_layer.push(LayerComplexity {
            name: format!("dense{}", i + 1),
            pars: width * out + out,
            macs: width * out,
        });
        width = out;
    }
    Ok(ComplexityReport {
        convention: cfg.padding,
        total_pars: per_layer.iter().map(|l| l.pars).sum(),
        total_macs: per_layer.iter().map(|l| l.macs).sum(),
        per_layer,
    })
}

pub fn count_pars(cfg: &NetworkConfig) -> Result<u64> {
    complexity(cfg).map(|r| r.total_pars)
}

pub fn count_macs(cfg: &NetworkConfig) -> Result<u64> {
    complexity(cfg).map(|r| r.total_macs)
}
