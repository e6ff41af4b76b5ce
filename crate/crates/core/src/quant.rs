//! Uniform fake quantization with a learnable step-size scale factor.
//!
//! Values are mapped onto the grid `s * {min_b .. max_b}` by clip-then-round
//! (round half away from zero). The backward pass is the straight-through
//! estimator: the value gradient passes through inside the clip range and is
//! zero outside; the scale gradient follows the learned-step-size rule with
//! an optional `1/sqrt(N * max_b)` normalizer.

use crate::error::{Error, Result};
use crate::tensor::{BackwardOp, Graph, Tensor};

/// Lower clamp applied to every scale factor after an optimizer step.
pub const SCALE_MIN: f64 = 1e-6;

/// Fallback scale when a tensor has zero mean magnitude.
pub const SCALE_FALLBACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantKind {
    /// Signed grid `[-2^(b-1), 2^(b-1)-1]`.
    Weights,
    /// Unsigned grid `[0, 2^b-1]`; natural for post-relu activations.
    Activations,
}

/// Bit-width plus signedness, fixing the integer grid bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantSpec {
    pub bits: u32,
    pub kind: QuantKind,
}

impl QuantSpec {
    pub fn new(bits: u32, kind: QuantKind) -> Result<Self> {
        if !(2..=32).contains(&bits) {
            return Err(Error::InvalidArgument {
                what: "bit-width",
                detail: format!("{bits} outside supported range 2..=32"),
            });
        }
        Ok(QuantSpec { bits, kind })
    }

    pub fn weights(bits: u32) -> Result<Self> {
        Self::new(bits, QuantKind::Weights)
    }

    pub fn activations(bits: u32) -> Result<Self> {
        Self::new(bits, QuantKind::Activations)
    }

    pub fn min_b(&self) -> i64 {
        match self.kind {
            QuantKind::Weights => -(1i64 << (self.bits - 1)),
            QuantKind::Activations => 0,
        }
    }

    pub fn max_b(&self) -> i64 {
        match self.kind {
            QuantKind::Weights => (1i64 << (self.bits - 1)) - 1,
            QuantKind::Activations => (1i64 << self.bits) - 1,
        }
    }
}

/// A learnable positive scalar tied to one layer and one grid.
#[derive(Debug, Clone)]
pub struct ScaleFactor {
    pub tensor: Tensor,
    pub layer: usize,
    pub spec: QuantSpec,
}

impl ScaleFactor {
    pub fn new(layer: usize, spec: QuantSpec, value: f64) -> Result<Self> {
        if !(value > 0.0) {
            return Err(Error::NonPositiveScale { scale: value });
        }
        Ok(ScaleFactor { tensor: Tensor::scalar_param(value), layer, spec })
    }

    pub fn value(&self) -> f64 {
        self.tensor.item()
    }

    /// Re-establish positivity after an optimizer step.
    pub fn clamp_min(&self) {
        let mut d = self.tensor.data_mut();
        if d.values[0] < SCALE_MIN {
            d.values[0] = SCALE_MIN;
        }
    }

    /// Record a fake-quantization of `v` through this scale on the graph.
    pub fn quantize(&self, graph: &mut Graph, v: &Tensor, grad_scale: bool) -> Result<Tensor> {
        quantize(graph, v, &self.tensor, self.spec, grad_scale)
    }
}

/// Clip-then-round onto the scaled integer grid. Pure; no tape involvement.
pub fn quantize_values(values: &[f64], s: f64, spec: QuantSpec) -> Result<Vec<f64>> {
    if !(s > 0.0) {
        return Err(Error::NonPositiveScale { scale: s });
    }
    let (lo, hi) = (spec.min_b() as f64, spec.max_b() as f64);
    Ok(values.iter().map(|&v| (v / s).clamp(lo, hi).round() * s).collect())
}

/// Straight-through backward rule. Returns the per-element value gradient
/// and the reduced scalar scale gradient. With `u = v/s`:
///
/// - `min_b < u < max_b`: dv = upstream, ds-contribution = round(u) - u
/// - `u <= min_b`: dv = 0, ds-contribution = min_b
/// - `u >= max_b`: dv = 0, ds-contribution = max_b
///
/// When `grad_scale` is set the scale gradient is multiplied by
/// `1/sqrt(N * max_b)`.
pub fn quantize_grads(
    upstream: &[f64],
    values: &[f64],
    s: f64,
    spec: QuantSpec,
    grad_scale: bool,
) -> Result<(Vec<f64>, f64)> {
    if !(s > 0.0) {
        return Err(Error::NonPositiveScale { scale: s });
    }
    let (lo, hi) = (spec.min_b() as f64, spec.max_b() as f64);
    let mut grad_v = vec![0.0; values.len()];
    let mut grad_s = 0.0;
    for (i, (&v, &up)) in values.iter().zip(upstream).enumerate() {
        let u = v / s;
        if u <= lo {
            grad_s += lo * up;
        } else if u >= hi {
            grad_s += hi * up;
        } else {
            grad_v[i] = up;
            grad_s += (u.round() - u) * up;
        }
    }
    if grad_scale {
        grad_s /= (values.len() as f64 * hi).sqrt();
    }
    Ok((grad_v, grad_s))
}

struct QuantizeOp {
    spec: QuantSpec,
    grad_scale: bool,
}

impl BackwardOp for QuantizeOp {
    fn name(&self) -> &'static str {
        "quantize"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (v, s) = (&inputs[0], &inputs[1]);
        let s_val = s.data().values[0];
        let (grad_v, grad_s) = quantize_grads(out_grad, &v.data().values, s_val, self.spec, self.grad_scale)
            .expect("scale positivity is enforced on the forward pass");
        vec![v.requires_grad().then_some(grad_v), s.requires_grad().then(|| vec![grad_s])]
    }
}

/// Record a fake-quantization on the graph. `s` must be a positive scalar.
pub fn quantize(graph: &mut Graph, v: &Tensor, s: &Tensor, spec: QuantSpec, grad_scale: bool) -> Result<Tensor> {
    if s.numel() != 1 {
        return Err(Error::ShapeMismatch { op: "quantize", detail: format!("scale shape {:?} is not scalar", s.shape()) });
    }
    let out_values = quantize_values(&v.data().values, s.data().values[0], spec)?;
    let requires = v.requires_grad() || s.requires_grad();
    let out = Tensor::intermediate(v.shape(), out_values, requires);
    graph.record(Box::new(QuantizeOp { spec, grad_scale }), vec![v.clone(), s.clone()], out.clone());
    Ok(out)
}

/// `s = 2*mean(|w|)/sqrt(max_b)`, falling back to a small constant when the
/// tensor is all zero.
pub fn init_scale_statistics(values: &[f64], spec: QuantSpec) -> f64 {
    if values.is_empty() {
        return SCALE_FALLBACK;
    }
    let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
    if mean_abs == 0.0 {
        SCALE_FALLBACK
    } else {
        2.0 * mean_abs / (spec.max_b() as f64).sqrt()
    }
}

/// Bit-dependent constant initialization `s = 0.1 / b`.
pub fn init_scale_uniform(spec: QuantSpec) -> f64 {
    0.1 / spec.bits as f64
}
