//! Per-layer compute and size accounting.
//!
//! BitOps for a layer is `macs * b_w * b_a`; model size counts the quantized
//! weight payload only (bias, scale factors and metadata excluded). Both are
//! exact integers.

use crate::error::{Error, Result};
use crate::model::{LayerKind, Network};

/// Multiply-accumulate and parameter counts for one quantized layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCostStats {
    pub layer: usize,
    pub name: String,
    pub macs: u64,
    pub params: u64,
}

/// Compute budgets; at least one limit must be present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub bitops_limit: Option<u64>,
    pub size_limit_bits: Option<u64>,
}

impl Budget {
    pub fn new(bitops_limit: Option<u64>, size_limit_bits: Option<u64>) -> Result<Self> {
        if bitops_limit.is_none() && size_limit_bits.is_none() {
            return Err(Error::EmptyBudget);
        }
        if bitops_limit == Some(0) || size_limit_bits == Some(0) {
            return Err(Error::InvalidArgument { what: "budget", detail: "limits must be positive".into() });
        }
        Ok(Budget { bitops_limit, size_limit_bits })
    }

    pub fn bitops(limit: u64) -> Self {
        Budget { bitops_limit: Some(limit), size_limit_bits: None }
    }
}

/// One record per quantized layer, in layer order. Non-parametric layers
/// (relu, flatten) carry no MACs and are not listed.
pub fn layer_stats(network: &Network) -> Vec<LayerCostStats> {
    network
        .quantized_layers()
        .map(|(index, layer)| {
            let macs = match &layer.kind {
                LayerKind::Linear { in_features, out_features } => (*in_features * *out_features) as u64,
                LayerKind::Conv { in_channels, out_channels, kernel, out_hw, .. } => {
                    (out_hw.0 * out_hw.1 * *out_channels * *in_channels * kernel * kernel) as u64
                }
            };
            LayerCostStats { layer: index, name: layer.name.clone(), macs, params: layer.weight.numel() as u64 }
        })
        .collect()
}

/// `macs * b_w * b_a`, exact.
pub fn bitops(stats: &LayerCostStats, b_w: u32, b_a: u32) -> u64 {
    stats.macs * b_w as u64 * b_a as u64
}

/// Total weight payload in bits for one bit-width per listed layer.
pub fn model_size_bits(stats: &[LayerCostStats], bits_per_layer: &[u32]) -> Result<u64> {
    if stats.len() != bits_per_layer.len() {
        return Err(Error::InvalidArgument {
            what: "model_size_bits",
            detail: format!("{} layers vs {} bit-widths", stats.len(), bits_per_layer.len()),
        });
    }
    Ok(stats.iter().zip(bits_per_layer).map(|(s, &b)| s.params * b as u64).sum())
}

pub fn model_size_bytes(bits: u64) -> u64 {
    bits.div_ceil(8)
}

/// Weight compression rate against a 32-bit baseline.
pub fn compression_rate(stats: &[LayerCostStats], bits_per_layer: &[u32]) -> Result<f64> {
    let quantized = model_size_bits(stats, bits_per_layer)?;
    let baseline = model_size_bits(stats, &vec![32; stats.len()])?;
    if quantized == 0 {
        return Err(Error::InvalidArgument { what: "compression_rate", detail: "zero quantized size".into() });
    }
    Ok(baseline as f64 / quantized as f64)
}
