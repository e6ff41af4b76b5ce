//! Small model zoo wired for per-layer fake quantization.
//!
//! A network is a straight chain of parametric layers (linear or conv)
//! separated by relu, with an implicit flatten in front of the first linear
//! layer. Each parametric layer marked `quantized` exposes a slot where a
//! `QuantizerSource` can inject weight and activation quantizers; returning
//! `None` for a slot runs it in full precision, which is how the bypass and
//! first/last-layer exemption paths work.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::quant::ScaleFactor;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Linear { in_features: usize, out_features: usize },
    Conv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize, out_hw: (usize, usize) },
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    /// Linear: `[in, out]`; conv: `[out_c, in_c, k, k]`.
    pub weight: Tensor,
    pub bias: Tensor,
    pub quantized: bool,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub name: String,
    pub layers: Vec<Layer>,
    /// Per-sample input shape, e.g. `[1, 8, 8]` or `[16]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
}

/// Supplies quantizers per quantized-layer slot during a forward pass.
/// `None` for either side bypasses that quantizer (full precision).
pub trait QuantizerSource {
    /// `(weight scale, activation scale)` for slot `slot`.
    fn layer_scales(&self, slot: usize) -> (Option<ScaleFactor>, Option<ScaleFactor>);

    /// Whether the scale gradient uses the `1/sqrt(N * max_b)` normalizer.
    fn grad_scale(&self) -> bool {
        true
    }
}

/// Runs every layer in full precision.
pub struct FullPrecision;

impl QuantizerSource for FullPrecision {
    fn layer_scales(&self, _slot: usize) -> (Option<ScaleFactor>, Option<ScaleFactor>) {
        (None, None)
    }
}

/// Fixed per-slot quantizers, e.g. during fine-tuning at a searched policy.
pub struct FixedScales {
    pub scales: Vec<(Option<ScaleFactor>, Option<ScaleFactor>)>,
    pub grad_scale: bool,
}

impl FixedScales {
    /// Every scale tensor present, in slot order (weight before activation).
    pub fn params(&self) -> Vec<Tensor> {
        self.scales
            .iter()
            .flat_map(|(w, a)| [w, a])
            .flatten()
            .map(|s| s.tensor.clone())
            .collect()
    }

    pub fn clamp_min(&self) {
        for (w, a) in &self.scales {
            if let Some(s) = w {
                s.clamp_min();
            }
            if let Some(s) = a {
                s.clamp_min();
            }
        }
    }
}

impl QuantizerSource for FixedScales {
    fn layer_scales(&self, slot: usize) -> (Option<ScaleFactor>, Option<ScaleFactor>) {
        self.scales[slot].clone()
    }

    fn grad_scale(&self) -> bool {
        self.grad_scale
    }
}

/// Output of one forward pass. `layer_inputs[slot]` is the pre-quantization
/// input activation of each quantized layer, saved for statistics-based
/// scale initialization.
pub struct ForwardTrace {
    pub logits: Tensor,
    pub layer_inputs: Vec<Tensor>,
}

impl Network {
    /// All trainable tensors in a fixed order (per layer: weight, bias).
    pub fn parameters(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    /// Quantized layers with their slot index (0-based among quantized).
    pub fn quantized_layers(&self) -> impl Iterator<Item = (usize, &Layer)> {
        self.layers.iter().filter(|l| l.quantized).enumerate()
    }

    pub fn num_quantized(&self) -> usize {
        self.layers.iter().filter(|l| l.quantized).count()
    }

    pub fn forward(&self, graph: &mut Graph, input: &Tensor, source: &dyn QuantizerSource) -> Result<ForwardTrace> {
        let shape = input.shape();
        if shape.len() < 2 || shape[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("batch shape {:?} does not end with {:?}", shape, self.input_shape),
            });
        }
        let grad_scale = source.grad_scale();
        let mut cur = input.clone();
        let mut layer_inputs = Vec::with_capacity(self.num_quantized());
        let mut slot = 0;
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            if matches!(layer.kind, LayerKind::Linear { .. }) && cur.shape().len() > 2 {
                cur = graph.flatten(&cur)?;
            }
            let mut weight = layer.weight.clone();
            if layer.quantized {
                layer_inputs.push(cur.clone());
                let (s_w, s_a) = source.layer_scales(slot);
                if let Some(s) = s_a {
                    cur = s.quantize(graph, &cur, grad_scale)?;
                }
                if let Some(s) = s_w {
                    weight = s.quantize(graph, &weight, grad_scale)?;
                }
                slot += 1;
            }
            cur = match &layer.kind {
                LayerKind::Linear { .. } => graph.matmul(&cur, &weight)?,
                LayerKind::Conv { stride, pad, .. } => graph.conv2d(&cur, &weight, *stride, *pad)?,
            };
            cur = graph.add_bias(&cur, &layer.bias)?;
            if li != last {
                cur = graph.relu(&cur)?;
            }
        }
        Ok(ForwardTrace { logits: cur, layer_inputs })
    }

    /// Fraction of samples whose argmax logit matches the label.
    pub fn top1(&self, logits: &Tensor, labels: &[usize]) -> f64 {
        let shape = logits.shape();
        let classes = shape[1];
        let values = logits.data();
        let mut hits = 0usize;
        for (i, &label) in labels.iter().enumerate() {
            let row = &values.values[i * classes..(i + 1) * classes];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            if argmax == label {
                hits += 1;
            }
        }
        hits as f64 / labels.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    Cnn,
    Contrast,
}

impl ModelKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mlp" => Ok(ModelKind::Mlp),
            "cnn" => Ok(ModelKind::Cnn),
            "contrast" => Ok(ModelKind::Contrast),
            other => Err(Error::Config(format!("unknown model '{other}' (expected mlp, cnn or contrast)"))),
        }
    }

    /// Common-practice default: exempt first and last layers on the conv
    /// net, quantize everything on the small nets.
    pub fn default_exempt_first_last(self) -> bool {
        matches!(self, ModelKind::Cnn)
    }
}

fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, count: usize) -> Vec<f64> {
    normal_values(rng, (2.0 / fan_in as f64).sqrt(), count)
}

fn normal_values(rng: &mut ChaCha8Rng, std: f64, count: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("std must be finite and positive");
    (0..count).map(|_| dist.sample(rng)).collect()
}

fn linear(name: &str, rng: &mut ChaCha8Rng, in_features: usize, out_features: usize, std: Option<f64>) -> Layer {
    let count = in_features * out_features;
    let values = match std {
        Some(s) => normal_values(rng, s, count),
        None => he_normal(rng, in_features, count),
    };
    Layer {
        name: name.to_string(),
        kind: LayerKind::Linear { in_features, out_features },
        weight: Tensor::param(vec![in_features, out_features], values),
        bias: Tensor::param(vec![out_features], vec![0.0; out_features]),
        quantized: true,
    }
}

fn conv(name: &str, rng: &mut ChaCha8Rng, in_channels: usize, out_channels: usize, stride: usize, in_hw: (usize, usize)) -> (Layer, (usize, usize)) {
    let kernel = 3;
    let pad = 1;
    let out_hw = ((in_hw.0 + 2 * pad - kernel) / stride + 1, (in_hw.1 + 2 * pad - kernel) / stride + 1);
    let count = out_channels * in_channels * kernel * kernel;
    let values = he_normal(rng, in_channels * kernel * kernel, count);
    let layer = Layer {
        name: name.to_string(),
        kind: LayerKind::Conv { in_channels, out_channels, kernel, stride, pad, out_hw },
        weight: Tensor::param(vec![out_channels, in_channels, kernel, kernel], values),
        bias: Tensor::param(vec![out_channels], vec![0.0; out_channels]),
        quantized: true,
    };
    (layer, out_hw)
}

/// Build a model from the zoo. `exempt_first_last = None` applies the
/// model's default convention.
pub fn build_model(
    kind: ModelKind,
    input_shape: &[usize],
    classes: usize,
    exempt_first_last: Option<bool>,
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    let features: usize = input_shape.iter().product();
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    let mut layers = match kind {
        ModelKind::Mlp => {
            let hidden = 32;
            vec![linear("fc0", rng, features, hidden, None), linear("fc1", rng, hidden, classes, None)]
        }
        ModelKind::Contrast => {
            // Two layers with identical shapes; only the weight spread
            // differs (wide vs narrow), so any learned asymmetry in their
            // scale indicators reflects the distributions, not the geometry.
            if classes != features {
                return Err(Error::Config(format!(
                    "contrast model needs classes == input features, got {classes} vs {features}"
                )));
            }
            vec![
                linear("wide", rng, features, features, Some(1.0)),
                linear("narrow", rng, features, features, Some(0.1)),
            ]
        }
        ModelKind::Cnn => {
            if input_shape.len() != 3 {
                return Err(Error::Config(format!("cnn expects [c, h, w] input, got {input_shape:?}")));
            }
            let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
            let (conv0, hw) = conv("conv0", rng, c, 8, 1, (h, w));
            let (conv1, hw) = conv("conv1", rng, 8, 8, 2, hw);
            let (conv2, hw) = conv("conv2", rng, 8, 16, 1, hw);
            let (conv3, hw) = conv("conv3", rng, 16, 16, 2, hw);
            let fc_in = 16 * hw.0 * hw.1;
            vec![conv0, conv1, conv2, conv3, linear("fc0", rng, fc_in, classes, None)]
        }
    };
    if exempt_first_last.unwrap_or_else(|| kind.default_exempt_first_last()) {
        if layers.len() < 3 {
            return Err(Error::Config("first/last exemption needs at least 3 layers".into()));
        }
        layers.first_mut().unwrap().quantized = false;
        layers.last_mut().unwrap().quantized = false;
    }
    Ok(Network { name: format!("{kind:?}").to_lowercase(), layers, input_shape: input_shape.to_vec(), classes })
}
