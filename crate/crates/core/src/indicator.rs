//! Joint training of the per-layer, per-bit importance indicators.
//!
//! For L quantized layers and n bit options the bank holds 2*L*n learnable
//! scale factors. One training step is an atomic update: n forward/backward
//! passes at uniform bit assignments (one per option) plus a single pass
//! under an independent random per-layer assignment, with no parameter
//! update in between; the accumulated gradients are averaged over the n+1
//! passes and applied in one optimizer step to the shared weights and every
//! touched scale.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Network, QuantizerSource};
use crate::quant::{init_scale_statistics, init_scale_uniform, QuantSpec, ScaleFactor};
use crate::tensor::{param_digest, Graph, Sgd, Tensor};

/// Strictly increasing bit-width options, each at least 2.
pub fn validate_bits(bits: &[u32]) -> Result<()> {
    let ok = !bits.is_empty() && bits.windows(2).all(|w| w[0] < w[1]) && bits.iter().all(|&b| b >= 2);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidBitOptions { bits: bits.to_vec() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// `2*mean(|x|)/sqrt(max_b)` from weights / the first batch's activations.
    Statistics,
    /// Bit-dependent constant `0.1/b`, identical across layers.
    Uniform,
}

impl InitScheme {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "statistics" => Ok(InitScheme::Statistics),
            "uniform" => Ok(InitScheme::Uniform),
            other => Err(Error::Config(format!("unknown init scheme '{other}' (expected statistics or uniform)"))),
        }
    }
}

/// The bank of 2*L*n bit-specific scale factors for L quantized layers.
#[derive(Debug, Clone)]
pub struct ScaleBank {
    pub bits: Vec<u32>,
    pub layer_names: Vec<String>,
    /// `[layer][bit option]`
    pub s_w: Vec<Vec<ScaleFactor>>,
    pub s_a: Vec<Vec<ScaleFactor>>,
}

impl ScaleBank {
    /// Constant per-bit initialization, identical for every layer.
    pub fn new_uniform(network: &Network, bits: &[u32]) -> Result<Self> {
        Self::build(network, bits, |_, spec| Ok(init_scale_uniform(spec)), |_, spec| Ok(init_scale_uniform(spec)))
    }

    /// Statistics initialization; weight scales come from the current weight
    /// tensors, activation scales from a full-precision forward pass over
    /// `first_batch`.
    pub fn new_statistics(network: &Network, bits: &[u32], first_batch: &Tensor) -> Result<Self> {
        let mut graph = Graph::new();
        let trace = network.forward(&mut graph, first_batch, &crate::model::FullPrecision)?;
        let acts: Vec<Vec<f64>> = trace.layer_inputs.iter().map(Tensor::values).collect();
        let weights: Vec<Vec<f64>> = network.quantized_layers().map(|(_, l)| l.weight.values()).collect();
        Self::build(
            network,
            bits,
            |slot, spec| Ok(init_scale_statistics(&weights[slot], spec)),
            |slot, spec| Ok(init_scale_statistics(&acts[slot], spec)),
        )
    }

    fn build(
        network: &Network,
        bits: &[u32],
        mut weight_init: impl FnMut(usize, QuantSpec) -> Result<f64>,
        mut act_init: impl FnMut(usize, QuantSpec) -> Result<f64>,
    ) -> Result<Self> {
        validate_bits(bits)?;
        let mut s_w = Vec::new();
        let mut s_a = Vec::new();
        let mut layer_names = Vec::new();
        for (slot, layer) in network.quantized_layers() {
            let mut row_w = Vec::with_capacity(bits.len());
            let mut row_a = Vec::with_capacity(bits.len());
            for &b in bits {
                let spec_w = QuantSpec::weights(b)?;
                let spec_a = QuantSpec::activations(b)?;
                row_w.push(ScaleFactor::new(slot, spec_w, weight_init(slot, spec_w)?)?);
                row_a.push(ScaleFactor::new(slot, spec_a, act_init(slot, spec_a)?)?);
            }
            s_w.push(row_w);
            s_a.push(row_a);
            layer_names.push(layer.name.clone());
        }
        Ok(ScaleBank { bits: bits.to_vec(), layer_names, s_w, s_a })
    }

    pub fn num_layers(&self) -> usize {
        self.layer_names.len()
    }

    /// Always 2 * layers * options.
    pub fn size(&self) -> usize {
        2 * self.num_layers() * self.bits.len()
    }

    /// Every scale tensor in a fixed order (per layer: weight row, then
    /// activation row).
    pub fn params(&self) -> Vec<Tensor> {
        self.s_w
            .iter()
            .zip(&self.s_a)
            .flat_map(|(w, a)| w.iter().chain(a).map(|s| s.tensor.clone()))
            .collect()
    }

    /// Re-establish positivity after an optimizer step.
    pub fn clamp_min(&self) {
        for row in self.s_w.iter().chain(&self.s_a) {
            for s in row {
                s.clamp_min();
            }
        }
    }

    pub fn values(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let grab = |rows: &Vec<Vec<ScaleFactor>>| rows.iter().map(|r| r.iter().map(ScaleFactor::value).collect()).collect();
        (grab(&self.s_w), grab(&self.s_a))
    }

    /// Scale-gradient snapshot (weight rows, activation rows); zeros when a
    /// scale was not touched since the last zeroing.
    pub fn grad_values(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let grab = |rows: &Vec<Vec<ScaleFactor>>| {
            rows.iter()
                .map(|r| r.iter().map(|s| s.tensor.grad().map_or(0.0, |g| g[0])).collect())
                .collect()
        };
        (grab(&self.s_w), grab(&self.s_a))
    }
}

/// Per-layer `(weight-bit index, activation-bit index)` used by one pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitAssignment(pub Vec<(usize, usize)>);

impl BitAssignment {
    pub fn uniform(option: usize, layers: usize) -> Self {
        BitAssignment(vec![(option, option); layers])
    }

    /// Weight and activation indices drawn independently per layer.
    pub fn random(rng: &mut ChaCha8Rng, layers: usize, options: usize) -> Self {
        BitAssignment((0..layers).map(|_| (rng.gen_range(0..options), rng.gen_range(0..options))).collect())
    }
}

/// Routes the bank's scale factors into the model per the active assignment.
pub struct BankSource<'a> {
    pub bank: &'a ScaleBank,
    pub assignment: &'a BitAssignment,
    pub grad_scale: bool,
}

impl QuantizerSource for BankSource<'_> {
    fn layer_scales(&self, slot: usize) -> (Option<ScaleFactor>, Option<ScaleFactor>) {
        let (w_idx, a_idx) = self.assignment.0[slot];
        (Some(self.bank.s_w[slot][w_idx].clone()), Some(self.bank.s_a[slot][a_idx].clone()))
    }

    fn grad_scale(&self) -> bool {
        self.grad_scale
    }
}

#[derive(Debug, Clone)]
pub struct StepMetrics {
    /// Loss of each of the n+1 passes, uniform passes first.
    pub pass_losses: Vec<f64>,
    pub random_assignment: BitAssignment,
    pub forward_passes: usize,
    pub backward_passes: usize,
}

/// Extra per-pass instrumentation, opt-in because snapshots are not free.
#[derive(Debug, Default)]
pub struct StepTrace {
    /// Digest of all trainable values after each pass; the passes of one
    /// atomic update must leave parameters bit-identical.
    pub param_digests: Vec<u64>,
    /// Bank gradients after each pass, for touch accounting.
    pub scale_grads: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

/// One atomic update: n uniform passes plus one random-assignment pass on
/// the same batch, gradients accumulated throughout, then a single averaged
/// optimizer step. The random stream is consumed only by the final pass.
pub fn atomic_update_step(
    network: &Network,
    bank: &ScaleBank,
    batch: (&Tensor, &[usize]),
    optimizer: &mut Sgd,
    random_pass_rng: &mut ChaCha8Rng,
    mut trace: Option<&mut StepTrace>,
) -> Result<StepMetrics> {
    validate_bits(&bank.bits)?;
    let n = bank.bits.len();
    let layers = bank.num_layers();
    let grad_scale = true;
    let (images, labels) = batch;

    let mut pass_losses = Vec::with_capacity(n + 1);
    let run_pass = |assignment: &BitAssignment, trace: &mut Option<&mut StepTrace>| -> Result<f64> {
        let source = BankSource { bank, assignment, grad_scale };
        let mut graph = Graph::new();
        let out = network.forward(&mut graph, images, &source)?;
        let loss = graph.softmax_cross_entropy(&out.logits, labels)?;
        let loss_value = loss.item();
        graph.backward(&loss)?;
        if let Some(t) = trace.as_deref_mut() {
            t.param_digests.push(param_digest(optimizer.params()));
            t.scale_grads.push(bank.grad_values());
        }
        Ok(loss_value)
    };

    for k in 0..n {
        let assignment = BitAssignment::uniform(k, layers);
        pass_losses.push(run_pass(&assignment, &mut trace)?);
    }
    let random_assignment = BitAssignment::random(random_pass_rng, layers, n);
    pass_losses.push(run_pass(&random_assignment, &mut trace)?);

    optimizer.scale_grads(1.0 / (n + 1) as f64);
    optimizer.step()?;
    bank.clamp_min();

    Ok(StepMetrics { pass_losses, random_assignment, forward_passes: n + 1, backward_passes: n + 1 })
}

/// Final learned indicator values plus training metadata; immutable once
/// copied out of the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorReport {
    pub layer_names: Vec<String>,
    pub bits: Vec<u32>,
    /// `[layer][bit option]`
    pub s_w: Vec<Vec<f64>>,
    pub s_a: Vec<Vec<f64>>,
    pub seed: u64,
    pub steps: usize,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct IndicatorTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

/// Train the whole bank in one session. The model's weights are a training
/// vehicle only; the returned report is the product.
pub fn train_indicators(
    network: &Network,
    bank: &ScaleBank,
    batches: &mut dyn Iterator<Item = (Tensor, Vec<usize>)>,
    config: &IndicatorTrainConfig,
) -> Result<IndicatorReport> {
    let sgd = crate::tensor::SgdConfig::new(config.lr.max(f64::MIN_POSITIVE), config.momentum, config.weight_decay)?;
    let params: Vec<Tensor> = network.parameters().into_iter().chain(bank.params()).collect();
    let mut optimizer = Sgd::new(params, sgd);
    let mut rng = crate::rng::stream_rng(config.seed, crate::rng::streams::RANDOM_PASS);
    let mut loss_curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (images, labels) = batches
            .next()
            .ok_or_else(|| Error::InvalidArgument { what: "batches", detail: "iterator exhausted".into() })?;
        let metrics = atomic_update_step(network, bank, (&images, &labels), &mut optimizer, &mut rng, None)?;
        let mean_loss = metrics.pass_losses.iter().sum::<f64>() / metrics.pass_losses.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence { step, loss: mean_loss });
        }
        loss_curve.push(mean_loss);
    }
    let (s_w, s_a) = bank.values();
    Ok(IndicatorReport {
        layer_names: bank.layer_names.clone(),
        bits: bank.bits.clone(),
        s_w,
        s_a,
        seed: config.seed,
        steps: config.steps,
        loss_curve,
    })
}

/// `table[l][i][j] = s_a[l][j] + alpha * s_w[l][i]`: the ILP objective
/// coefficients for every (weight-bit, activation-bit) combination.
pub fn importance_table(report: &IndicatorReport, alpha: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument { what: "alpha", detail: format!("{alpha} must be >= 0") });
    }
    let n = report.bits.len();
    Ok((0..report.layer_names.len())
        .map(|l| {
            (0..n)
                .map(|i| (0..n).map(|j| report.s_a[l][j] + alpha * report.s_w[l][i]).collect())
                .collect()
        })
        .collect())
}
