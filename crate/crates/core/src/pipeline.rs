//! End-to-end orchestration: dataset, indicator training, bit-width search,
//! quantized fine-tuning, evaluation, and the reversed-assignment ablation.
//!
//! The search stage is structurally data-free: it consumes only an
//! indicator report and layer stats, never a dataset handle, so searching
//! works with the training data deleted.

use std::path::Path;
use std::time::Instant;

use crate::config::RunConfig;
use crate::cost::{layer_stats, Budget, LayerCostStats};
use crate::data::{load_idx_dataset, load_idx_dataset_with_val, synth_dataset, BatchIter, DatasetHandle, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::ilp::{build_instance, solve_with_sense, Policy, Sense};
use crate::indicator::{train_indicators, IndicatorReport, IndicatorTrainConfig, InitScheme, ScaleBank};
use crate::model::{build_model, FixedScales, FullPrecision, Network, QuantizerSource};
use crate::quant::{init_scale_statistics, QuantSpec, ScaleFactor};
use crate::report::{
    read_policy, write_indicator_report, write_layer_stats, write_policy, write_run_record, write_weights, PolicyFile,
    RunRecord,
};
use crate::rng::{stream_rng, streams};
use crate::tensor::{Graph, Sgd, SgdConfig, Tensor};

pub const INDICATORS_FILE: &str = "indicators.txt";
pub const STATS_FILE: &str = "stats.txt";
pub const POLICY_FILE: &str = "policy.txt";
pub const POLICY_REVERSED_FILE: &str = "policy_reversed.txt";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const WEIGHTS_REVERSED_FILE: &str = "weights_reversed.bin";
pub const RECORD_FILE: &str = "record.txt";
pub const RECORD_REVERSED_FILE: &str = "record_reversed.txt";

pub fn load_dataset(config: &RunConfig) -> Result<DatasetHandle> {
    let d = &config.dataset;
    match d.kind.as_str() {
        "synth" => synth_dataset(&SynthSpec {
            classes: d.classes,
            train_samples: d.train_samples,
            val_samples: d.val_samples,
            input_shape: d.input_shape.clone(),
            noise: d.noise,
            seed: config.run.seed,
        }),
        "idx" => {
            let train_images = d.train_images.as_ref().expect("validated");
            let train_labels = d.train_labels.as_ref().expect("validated");
            match (&d.val_images, &d.val_labels) {
                (Some(vi), Some(vl)) => load_idx_dataset_with_val(train_images, train_labels, vi, vl),
                _ => load_idx_dataset(train_images, train_labels),
            }
        }
        other => Err(Error::Config(format!("unknown dataset kind '{other}'"))),
    }
}

pub fn build_network(config: &RunConfig, dataset: &DatasetHandle) -> Result<Network> {
    let mut rng = stream_rng(config.run.seed, streams::MODEL_INIT);
    build_model(
        config.model_kind()?,
        &dataset.input_shape,
        dataset.classes,
        config.flags.exempt_first_last,
        &mut rng,
    )
}

/// Outcome of the indicator stage: the trained report plus the cost stats
/// that the search stage needs.
pub struct IndicatorStage {
    pub report: IndicatorReport,
    pub stats: Vec<LayerCostStats>,
}

pub fn indicator_stage(config: &RunConfig, network: &Network, dataset: &DatasetHandle) -> Result<IndicatorStage> {
    let ind = &config.indicators;
    let make_batches = || {
        BatchIter::new(&dataset.train, &dataset.input_shape, ind.batch_size, ind.data_fraction, config.run.seed)
    };
    let bank = match config.init_scheme()? {
        InitScheme::Uniform => ScaleBank::new_uniform(network, &config.run.bits)?,
        InitScheme::Statistics => {
            let (first_images, _) = make_batches()?.next().expect("batch stream is endless");
            ScaleBank::new_statistics(network, &config.run.bits, &first_images)?
        }
    };
    let train_cfg = IndicatorTrainConfig {
        steps: ind.steps,
        lr: ind.lr,
        momentum: ind.momentum,
        weight_decay: ind.weight_decay,
        seed: config.run.seed,
    };
    let mut batches = make_batches()?;
    let report = train_indicators(network, &bank, &mut batches, &train_cfg)?;
    Ok(IndicatorStage { report, stats: layer_stats(network) })
}

/// Solve the bit allocation from artifacts alone.
pub fn search_stage(
    report: &IndicatorReport,
    stats: &[LayerCostStats],
    alpha: f64,
    budget: Budget,
    reversed: bool,
) -> Result<Policy> {
    let instance = build_instance(report, stats, alpha, budget)?;
    let sense = if reversed { Sense::Maximize } else { Sense::Minimize };
    solve_with_sense(&instance, sense)
}

#[derive(Debug, Clone)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_scale: bool,
}

impl FinetuneConfig {
    pub fn from_run(config: &RunConfig) -> Self {
        FinetuneConfig {
            steps: config.finetune.steps,
            lr: config.finetune.lr,
            momentum: config.finetune.momentum,
            weight_decay: config.finetune.weight_decay,
            batch_size: config.finetune.batch_size,
            seed: config.run.seed,
            grad_scale: config.flags.grad_scale,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub top1: f64,
    pub final_loss: f64,
    pub scales: FixedScalesDump,
}

/// Scale values by slot for the weight dump; `None` marks a bypassed side.
pub type FixedScalesDump = Vec<(Option<f64>, Option<f64>)>;

/// Fresh statistics-initialized quantizers at the policy's bit-widths.
/// Bit-width 32 bypasses that quantizer entirely.
pub fn scales_for_policy(network: &Network, bits_per_slot: &[(u32, u32)], dataset: &DatasetHandle, cfg: &FinetuneConfig) -> Result<FixedScales> {
    if bits_per_slot.len() != network.num_quantized() {
        return Err(Error::LayerSetMismatch {
            detail: format!("policy covers {} layers, model has {} quantized", bits_per_slot.len(), network.num_quantized()),
        });
    }
    let (first_images, _) = BatchIter::new(&dataset.train, &dataset.input_shape, cfg.batch_size, 1.0, cfg.seed)?
        .next()
        .expect("batch stream is endless");
    let mut graph = Graph::new();
    let trace = network.forward(&mut graph, &first_images, &FullPrecision)?;
    let mut scales = Vec::with_capacity(bits_per_slot.len());
    for ((slot, layer), &(b_w, b_a)) in network.quantized_layers().zip(bits_per_slot) {
        let weight_scale = if b_w >= 32 {
            None
        } else {
            let spec = QuantSpec::weights(b_w)?;
            Some(ScaleFactor::new(slot, spec, init_scale_statistics(&layer.weight.values(), spec))?)
        };
        let act_scale = if b_a >= 32 {
            None
        } else {
            let spec = QuantSpec::activations(b_a)?;
            let acts = trace.layer_inputs[slot].values();
            Some(ScaleFactor::new(slot, spec, init_scale_statistics(&acts, spec))?)
        };
        scales.push((weight_scale, act_scale));
    }
    Ok(FixedScales { scales, grad_scale: cfg.grad_scale })
}

/// Quantization-aware fine-tuning at fixed per-layer bit-widths; trains the
/// shared weights and one fresh scale per layer and tensor kind, then
/// evaluates top-1 on the validation split.
pub fn finetune_with_policy(
    network: &Network,
    bits_per_slot: &[(u32, u32)],
    dataset: &DatasetHandle,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    let source = scales_for_policy(network, bits_per_slot, dataset, cfg)?;
    let params: Vec<Tensor> = network.parameters().into_iter().chain(source.params()).collect();
    let mut optimizer = Sgd::new(params, SgdConfig::new(cfg.lr, cfg.momentum, cfg.weight_decay)?);
    let mut batches = BatchIter::new(&dataset.train, &dataset.input_shape, cfg.batch_size, 1.0, cfg.seed)?;
    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        let (images, labels) = batches.next().expect("batch stream is endless");
        let mut graph = Graph::new();
        let out = network.forward(&mut graph, &images, &source)?;
        let loss = graph.softmax_cross_entropy(&out.logits, &labels)?;
        final_loss = loss.item();
        if !final_loss.is_finite() {
            return Err(Error::Divergence { step, loss: final_loss });
        }
        graph.backward(&loss)?;
        optimizer.step()?;
        source.clamp_min();
    }
    let top1 = evaluate(network, &source, &dataset.val, &dataset.input_shape, cfg.batch_size)?;
    let scales = source
        .scales
        .iter()
        .map(|(w, a)| (w.as_ref().map(ScaleFactor::value), a.as_ref().map(ScaleFactor::value)))
        .collect();
    Ok(FinetuneOutcome { top1, final_loss, scales })
}

/// Top-1 accuracy over a split in fixed batch order.
pub fn evaluate(network: &Network, source: &dyn QuantizerSource, split: &Split, input_shape: &[usize], batch_size: usize) -> Result<f64> {
    let mut hits = 0.0;
    let mut total = 0usize;
    for (images, labels) in split.sequential_batches(batch_size, input_shape) {
        let mut graph = Graph::new();
        let out = network.forward(&mut graph, &images, source)?;
        hits += network.top1(&out.logits, &labels) * labels.len() as f64;
        total += labels.len();
    }
    Ok(hits / total as f64)
}

/// `(b_w, b_a)` per quantized slot from a policy file, checked against the
/// model's layer set.
pub fn policy_bits(policy: &PolicyFile, network: &Network) -> Result<Vec<(u32, u32)>> {
    if policy.layers.len() != network.num_quantized() {
        return Err(Error::LayerSetMismatch {
            detail: format!("policy has {} layers, model has {} quantized", policy.layers.len(), network.num_quantized()),
        });
    }
    for ((slot, layer), p) in network.quantized_layers().zip(&policy.layers) {
        if p.layer != slot || p.name != layer.name {
            return Err(Error::LayerSetMismatch {
                detail: format!("slot {slot}: model layer '{}', policy layer '{}' (id {})", layer.name, p.name, p.layer),
            });
        }
    }
    Ok(policy.layers.iter().map(|l| (l.b_w, l.b_a)).collect())
}

fn network_dump(network: &Network, scales: &FixedScalesDump, bank_names: &[String]) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut tensors = Vec::new();
    for layer in &network.layers {
        tensors.push((format!("{}.weight", layer.name), layer.weight.shape(), layer.weight.values()));
        tensors.push((format!("{}.bias", layer.name), layer.bias.shape(), layer.bias.values()));
    }
    for (slot, (w, a)) in scales.iter().enumerate() {
        if let Some(v) = w {
            tensors.push((format!("{}.s_w", bank_names[slot]), vec![1], vec![*v]));
        }
        if let Some(v) = a {
            tensors.push((format!("{}.s_a", bank_names[slot]), vec![1], vec![*v]));
        }
    }
    tensors
}

/// Load a weight dump produced by `run`/`finetune` back into a fresh model
/// plus the fixed quantizers for the policy it was trained under.
pub fn restore_finetuned(network: &Network, tensors: &[(String, Vec<usize>, Vec<f64>)], bits_per_slot: &[(u32, u32)], grad_scale: bool) -> Result<FixedScales> {
    let find = |name: &str| -> Result<&(String, Vec<usize>, Vec<f64>)> {
        tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::InvalidArgument { what: "weights", detail: format!("missing tensor '{name}'") })
    };
    for layer in &network.layers {
        let (_, shape, values) = find(&format!("{}.weight", layer.name))?;
        if *shape != layer.weight.shape() {
            return Err(Error::ShapeMismatch { op: "restore", detail: format!("{}.weight {shape:?}", layer.name) });
        }
        layer.weight.set_values(values.clone());
        let (_, _, bias) = find(&format!("{}.bias", layer.name))?;
        layer.bias.set_values(bias.clone());
    }
    let mut scales = Vec::new();
    for ((slot, layer), &(b_w, b_a)) in network.quantized_layers().zip(bits_per_slot) {
        let w = if b_w >= 32 {
            None
        } else {
            let (_, _, v) = find(&format!("{}.s_w", layer.name))?;
            Some(ScaleFactor::new(slot, QuantSpec::weights(b_w)?, v[0])?)
        };
        let a = if b_a >= 32 {
            None
        } else {
            let (_, _, v) = find(&format!("{}.s_a", layer.name))?;
            Some(ScaleFactor::new(slot, QuantSpec::activations(b_a)?, v[0])?)
        };
        scales.push((w, a));
    }
    Ok(FixedScales { scales, grad_scale })
}

// ---------------------------------------------------------------------------
// full runs

fn ms(start: Instant) -> u128 {
    start.elapsed().as_millis()
}

struct PreparedRun {
    dataset: DatasetHandle,
    stage: IndicatorStage,
    budget: Budget,
    wall_dataset: u128,
    wall_indicators: u128,
}

fn prepare(config: &RunConfig) -> Result<PreparedRun> {
    let t0 = Instant::now();
    let dataset = load_dataset(config).map_err(|e| e.in_stage("dataset"))?;
    let wall_dataset = ms(t0);
    let network = build_network(config, &dataset).map_err(|e| e.in_stage("model"))?;
    let t1 = Instant::now();
    let stage = indicator_stage(config, &network, &dataset).map_err(|e| e.in_stage("indicators"))?;
    let wall_indicators = ms(t1);
    let budget = config.budget.resolve(&stage.stats).map_err(|e| e.in_stage("search"))?;
    Ok(PreparedRun { dataset, stage, budget, wall_dataset, wall_indicators })
}

fn search_and_finetune(
    config: &RunConfig,
    prepared: &PreparedRun,
    reversed: bool,
    policy_file: &str,
    weights_file: &str,
    record_file: &str,
    fp_baseline: Option<f64>,
) -> Result<RunRecord> {
    let out_dir = &config.run.out_dir;
    let t_search = Instant::now();
    let policy = search_stage(&prepared.stage.report, &prepared.stage.stats, config.run.alpha, prepared.budget, reversed)
        .map_err(|e| e.in_stage("search"))?;
    let wall_search = ms(t_search);
    write_policy(&PolicyFile::from_policy(&policy, &prepared.stage.report.layer_names), &out_dir.join(policy_file))?;

    let network = build_network(config, &prepared.dataset)?;
    let bits: Vec<(u32, u32)> = policy.choices.iter().map(|c| (c.b_w, c.b_a)).collect();
    let t_ft = Instant::now();
    let outcome =
        finetune_with_policy(&network, &bits, &prepared.dataset, &FinetuneConfig::from_run(config)).map_err(|e| e.in_stage("finetune"))?;
    let wall_finetune = ms(t_ft);
    let names: Vec<String> = network.quantized_layers().map(|(_, l)| l.name.clone()).collect();
    write_weights(&network_dump(&network, &outcome.scales, &names), &out_dir.join(weights_file))?;

    let mut record = RunRecord {
        config_digest: config.digest(),
        seed: config.run.seed,
        model: config.run.model.clone(),
        ..Default::default()
    };
    record.add_artifact("indicators", out_dir, INDICATORS_FILE)?;
    record.add_artifact("stats", out_dir, STATS_FILE)?;
    record.add_artifact("policy", out_dir, policy_file)?;
    record.add_artifact("weights", out_dir, weights_file)?;
    if let Some(fp) = fp_baseline {
        record.metrics.push(("top1_fp".into(), fp));
    }
    record.metrics.push(("top1_quant".into(), outcome.top1));
    record.metrics.push(("policy_objective".into(), policy.objective));
    record.metrics.push(("policy_bitops".into(), policy.total_bitops as f64));
    record.wall_ms.push(("dataset".into(), prepared.wall_dataset));
    record.wall_ms.push(("indicators".into(), prepared.wall_indicators));
    record.wall_ms.push(("search".into(), wall_search));
    record.wall_ms.push(("finetune".into(), wall_finetune));
    write_run_record(&record, &out_dir.join(record_file))?;
    Ok(record)
}

fn existing_record(config: &RunConfig, record_file: &str) -> Option<RunRecord> {
    let out_dir = &config.run.out_dir;
    let path = out_dir.join(record_file);
    if !path.exists() {
        return None;
    }
    let record = crate::report::read_run_record(&path).ok()?;
    if record.config_digest == config.digest() && record.verify(out_dir).is_ok() {
        Some(record)
    } else {
        None
    }
}

fn fp_baseline(config: &RunConfig, prepared: &PreparedRun) -> Result<Option<f64>> {
    if !config.finetune.fp_baseline {
        return Ok(None);
    }
    let network = build_network(config, &prepared.dataset)?;
    let bypass = vec![(32u32, 32u32); network.num_quantized()];
    let outcome = finetune_with_policy(&network, &bypass, &prepared.dataset, &FinetuneConfig::from_run(config))
        .map_err(|e| e.in_stage("finetune"))?;
    Ok(Some(outcome.top1))
}

/// Run the whole pipeline. A completed run with the same config digest in
/// the output directory is a no-op unless `force` is set.
pub fn run_pipeline(config: &RunConfig, force: bool) -> Result<RunRecord> {
    if !force {
        if let Some(record) = existing_record(config, RECORD_FILE) {
            return Ok(record);
        }
    }
    std::fs::create_dir_all(&config.run.out_dir)?;
    let prepared = prepare(config)?;
    write_indicator_report(&prepared.stage.report, &config.run.out_dir.join(INDICATORS_FILE))?;
    write_layer_stats(&prepared.stage.stats, &config.run.out_dir.join(STATS_FILE))?;
    let fp = fp_baseline(config, &prepared)?;
    let reversed = config.flags.reversed;
    search_and_finetune(config, &prepared, reversed, POLICY_FILE, WEIGHTS_FILE, RECORD_FILE, fp)
}

/// One indicator report, two searches and fine-tunes: the routine
/// (minimizing) assignment and the reversed (maximizing) ablation.
pub fn ablate_reverse(config: &RunConfig, force: bool) -> Result<(RunRecord, RunRecord)> {
    if !force {
        if let (Some(routine), Some(reversed)) = (existing_record(config, RECORD_FILE), existing_record(config, RECORD_REVERSED_FILE)) {
            return Ok((routine, reversed));
        }
    }
    std::fs::create_dir_all(&config.run.out_dir)?;
    let prepared = prepare(config)?;
    write_indicator_report(&prepared.stage.report, &config.run.out_dir.join(INDICATORS_FILE))?;
    write_layer_stats(&prepared.stage.stats, &config.run.out_dir.join(STATS_FILE))?;
    let fp = fp_baseline(config, &prepared)?;
    let routine = search_and_finetune(config, &prepared, false, POLICY_FILE, WEIGHTS_FILE, RECORD_FILE, fp)?;
    let reversed = search_and_finetune(
        config,
        &prepared,
        true,
        POLICY_REVERSED_FILE,
        WEIGHTS_REVERSED_FILE,
        RECORD_REVERSED_FILE,
        fp,
    )?;
    Ok((routine, reversed))
}

/// Evaluate a weight dump (with its policy, when quantized) on the
/// validation split.
pub fn eval_weights(config: &RunConfig, weights_path: &Path, policy_path: Option<&Path>) -> Result<f64> {
    let dataset = load_dataset(config).map_err(|e| e.in_stage("dataset"))?;
    let network = build_network(config, &dataset)?;
    let tensors = crate::report::read_weights(weights_path)?;
    let bits = match policy_path {
        Some(path) => policy_bits(&read_policy(path)?, &network)?,
        None => vec![(32, 32); network.num_quantized()],
    };
    let source = restore_finetuned(&network, &tensors, &bits, config.flags.grad_scale)?;
    evaluate(&network, &source, &dataset.val, &dataset.input_shape, config.finetune.batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn tiny_config(dir: &Path) -> RunConfig {
        let text = format!(
            r#"
[run]
model = "mlp"
seed = 7
bits = [2, 4]
out_dir = "{}"

[dataset]
kind = "synth"
classes = 4
train_samples = 128
val_samples = 64
input_shape = [8]
noise = 0.25

[budget]
bitops_level = 3.0

[indicators]
steps = 5
batch_size = 16

[finetune]
steps = 10
batch_size = 16
fp_baseline = false
"#,
            dir.display()
        );
        RunConfig::parse(&text).unwrap()
    }

    #[test]
    fn pipeline_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let record = run_pipeline(&config, false).unwrap();
        for file in [INDICATORS_FILE, STATS_FILE, POLICY_FILE, WEIGHTS_FILE, RECORD_FILE] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
        record.verify(dir.path()).unwrap();
        assert!(record.metric("top1_quant").is_some());
    }

    #[test]
    fn rerun_is_noop_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let first = run_pipeline(&config, false).unwrap();
        let record_bytes = std::fs::read(dir.path().join(RECORD_FILE)).unwrap();
        let second = run_pipeline(&config, false).unwrap();
        assert_eq!(first, second);
        assert_eq!(record_bytes, std::fs::read(dir.path().join(RECORD_FILE)).unwrap());
    }

    #[test]
    fn infeasible_budget_fails_before_finetune() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.budget.bitops_level = None;
        config.budget.bitops = Some(1); // below any assignment
        let err = run_pipeline(&config, false).unwrap_err();
        match err {
            Error::Stage { stage, source } => {
                assert_eq!(stage, "search");
                assert!(matches!(*source, Error::InfeasibleBudget { .. }));
            }
            other => panic!("expected staged infeasible error, got {other:?}"),
        }
        assert!(!dir.path().join(WEIGHTS_FILE).exists(), "no finetune artifacts on infeasible budget");
    }

    #[test]
    fn ablation_shares_one_indicator_report() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let (routine, reversed) = ablate_reverse(&config, false).unwrap();
        let routine_ind = routine.artifacts.iter().find(|(l, _, _)| l == "indicators").unwrap();
        let reversed_ind = reversed.artifacts.iter().find(|(l, _, _)| l == "indicators").unwrap();
        assert_eq!(routine_ind, reversed_ind);
        assert!(dir.path().join(POLICY_REVERSED_FILE).exists());
    }
}
