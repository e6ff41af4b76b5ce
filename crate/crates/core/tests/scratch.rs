// Temporary calibration experiments; run with --nocapture. Deleted before release.

use mpq_core::config::RunConfig;
use mpq_core::cost::Budget;
use mpq_core::pipeline::*;

fn config(seed: u64, model: &str, extra: &str) -> RunConfig {
    let (dataset, bits) = match model {
        "cnn" => ("classes = 16\ntrain_samples = 2000\nval_samples = 400\ninput_shape = [1, 8, 8]\nnoise = 0.4", "[2, 3, 4, 8]"),
        "contrast" => ("classes = 16\ntrain_samples = 1600\nval_samples = 320\ninput_shape = [16]\nnoise = 0.3", "[2, 3, 4, 8]"),
        _ => ("classes = 10\ntrain_samples = 2000\nval_samples = 400\ninput_shape = [16]\nnoise = 0.3", "[2, 3, 4, 8]"),
    };
    let text = format!(
        "[run]\nmodel = \"{model}\"\nseed = {seed}\nbits = {bits}\nout_dir = \"/tmp/scratch-{model}-{seed}\"\n\n[dataset]\nkind = \"synth\"\n{dataset}\n{extra}\n"
    );
    RunConfig::parse(&text).unwrap()
}

#[test]
#[ignore]
fn exp1_fp_baseline() {
    for steps in [500, 1000, 2000] {
        let cfg = config(1, "mlp", "");
        let dataset = load_dataset(&cfg).unwrap();
        let network = build_network(&cfg, &dataset).unwrap();
        let ft = FinetuneConfig { steps, lr: 0.02, momentum: 0.9, weight_decay: 0.0, batch_size: 32, seed: 1, grad_scale: true };
        let bypass = vec![(32u32, 32u32); network.num_quantized()];
        let out = finetune_with_policy(&network, &bypass, &dataset, &ft).unwrap();
        println!("fp mlp steps={steps}: top1={:.4} loss={:.4}", out.top1, out.final_loss);
    }
}

#[test]
#[ignore]
fn exp2_indicator_monotonicity() {
    let mut total_slots = 0;
    let mut mono_slots = 0;
    for seed in 0..10u64 {
        let cfg = config(seed, "mlp", "[indicators]\nsteps = 300\n");
        let dataset = load_dataset(&cfg).unwrap();
        let network = build_network(&cfg, &dataset).unwrap();
        let stage = indicator_stage(&cfg, &network, &dataset).unwrap();
        let report = &stage.report;
        for l in 0..report.layer_names.len() {
            for values in [&report.s_w[l], &report.s_a[l]] {
                total_slots += 1;
                let mono = values.windows(2).all(|w| w[0] >= w[1]);
                if mono {
                    mono_slots += 1;
                } else {
                    println!("seed {seed} layer {l}: {values:?}");
                }
            }
        }
    }
    println!("monotone slots: {mono_slots}/{total_slots}");
}

#[test]
#[ignore]
fn exp3_contrast() {
    let mut wins = 0;
    for seed in 0..10u64 {
        let cfg = config(seed, "contrast", "[indicators]\nsteps = 300\n");
        let dataset = load_dataset(&cfg).unwrap();
        let network = build_network(&cfg, &dataset).unwrap();
        let stage = indicator_stage(&cfg, &network, &dataset).unwrap();
        let r = &stage.report;
        let all = (0..r.bits.len()).all(|i| r.s_w[0][i] > r.s_w[1][i]);
        println!(
            "seed {seed}: wide={:?} narrow={:?} all_gt={all}",
            r.s_w[0].iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            r.s_w[1].iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        );
        if all {
            wins += 1;
        }
    }
    println!("contrast wins: {wins}/10");
}

#[test]
#[ignore]
fn exp5_difficulty_sweep() {
    for (classes, noise) in [(10, 0.3), (10, 0.4), (16, 0.3), (16, 0.4)] {
        let text = format!(
            "[run]\nmodel = \"cnn\"\nseed = 1\nout_dir = \"/tmp/sweep\"\n\n[dataset]\nkind = \"synth\"\nclasses = {classes}\ntrain_samples = 2000\nval_samples = 400\ninput_shape = [1, 8, 8]\nnoise = {noise}\n\n[finetune]\nsteps = 600\n\n[flags]\nexempt_first_last = false\n"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        let dataset = load_dataset(&cfg).unwrap();
        let network = build_network(&cfg, &dataset).unwrap();
        let ft = FinetuneConfig::from_run(&cfg);
        let l = network.num_quantized();
        let run = |bits: &[(u32, u32)]| {
            let net = build_network(&cfg, &dataset).unwrap();
            finetune_with_policy(&net, bits, &dataset, &ft).unwrap().top1
        };
        let fp = run(&vec![(32, 32); l]);
        let u2 = run(&vec![(2, 2); l]);
        let u3 = run(&vec![(3, 3); l]);
        let u8b = run(&vec![(8, 8); l]);
        println!("classes={classes} noise={noise}: fp={fp:.4} u2={u2:.4} u3={u3:.4} u8={u8b:.4}");
    }
}

#[test]
#[ignore]
fn exp7_resnet18_shaped_speed() {
    use mpq_core::ilp::{solve_exact, solve_reversed, IlpInstance};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, LogNormal};

    let block = |macs: u64, params: u64| (macs, params);
    let mut layers: Vec<(u64, u64)> = Vec::new();
    for _ in 0..4 {
        layers.push(block(115_605_504, 36_864)); // stage 1 convs
    }
    for (first, mid, down) in [
        ((57_802_752, 73_728), (115_605_504, 147_456), (6_422_528, 8_192)),
        ((57_802_752, 294_912), (115_605_504, 589_824), (6_422_528, 32_768)),
        ((57_802_752, 1_179_648), (115_605_504, 2_359_296), (6_422_528, 131_072)),
    ] {
        layers.push(first);
        layers.push(down);
        layers.push(mid);
        layers.push(mid);
        layers.push(mid);
    }
    assert_eq!(layers.len(), 19);

    let bits = vec![2u32, 3, 4, 6, 8];
    let n = bits.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let magnitude = LogNormal::new(0.0, 0.5).unwrap();
    let jitter = LogNormal::new(0.0, 0.15).unwrap();
    let total_macs: u64 = layers.iter().map(|&(m, _)| m).sum();

    for budget_level in [2.5f64, 3.0, 4.0, 6.0] {
        let mut importance = Vec::new();
        let mut bitops = Vec::new();
        let mut size_bits = Vec::new();
        let mut rng2 = rng.clone();
        for &(macs, params) in &layers {
            let m_w: f64 = magnitude.sample(&mut rng2);
            let m_a: f64 = magnitude.sample(&mut rng2);
            let s_w: Vec<f64> = bits.iter().map(|&b| m_w * 0.1 / b as f64 * jitter.sample(&mut rng2)).collect();
            let s_a: Vec<f64> = bits.iter().map(|&b| m_a * 0.1 / b as f64 * jitter.sample(&mut rng2)).collect();
            let mut imp = vec![vec![0.0; n]; n];
            let mut ops = vec![vec![0u64; n]; n];
            for i in 0..n {
                for j in 0..n {
                    imp[i][j] = s_a[j] + s_w[i];
                    ops[i][j] = macs * bits[i] as u64 * bits[j] as u64;
                }
            }
            importance.push(imp);
            bitops.push(ops);
            size_bits.push(bits.iter().map(|&b| params * b as u64).collect());
        }
        let _ = rng.gen_range(0..2u8);
        let inst = IlpInstance {
            bits: bits.clone(),
            layer_names: (0..19).map(|l| format!("l{l}")).collect(),
            importance,
            bitops,
            size_bits,
            budget: mpq_core::cost::Budget::bitops((budget_level * budget_level * total_macs as f64) as u64),
        };
        let t = std::time::Instant::now();
        let policy = solve_exact(&inst).unwrap();
        let el = t.elapsed();
        let t2 = std::time::Instant::now();
        let rev = solve_reversed(&inst).unwrap();
        let el2 = t2.elapsed();
        println!(
            "budget {budget_level}-bit: solve {:?} ({} nodes) obj {:.4}; reversed {:?} ({} nodes)",
            el, policy.nodes_explored, policy.objective, el2, rev.nodes_explored
        );
    }
}

#[test]
#[ignore]
fn exp6_mlp_bit_ordering() {
    let mut wins = 0;
    for seed in 0..10u64 {
        let cfg = config(seed, "mlp", "[finetune]\nsteps = 600\n");
        let dataset = load_dataset(&cfg).unwrap();
        let network = build_network(&cfg, &dataset).unwrap();
        let ft = FinetuneConfig::from_run(&cfg);
        let l = network.num_quantized();
        let run = |bits: &[(u32, u32)]| {
            let net = build_network(&cfg, &dataset).unwrap();
            finetune_with_policy(&net, bits, &dataset, &ft).unwrap().top1
        };
        let u2 = run(&vec![(2, 2); l]);
        let u8b = run(&vec![(8, 8); l]);
        println!("seed {seed}: u2={u2:.4} u8={u8b:.4}");
        if u2 <= u8b {
            wins += 1;
        }
    }
    println!("u2 <= u8 in {wins}/10 seeds");
}

#[test]
#[ignore]
fn exp4_cnn_ablation() {
    for seed in 0..3u64 {
        let cfg = config(seed, "cnn", "[indicators]\nsteps = 300\n\n[finetune]\nsteps = 600\n\n[flags]\nexempt_first_last = false\n");
        let dataset = load_dataset(&cfg).unwrap();
        let network = build_network(&cfg, &dataset).unwrap();
        let t0 = std::time::Instant::now();
        let stage = indicator_stage(&cfg, &network, &dataset).unwrap();
        let t_ind = t0.elapsed().as_millis();
        let total_macs: u64 = stage.stats.iter().map(|s| s.macs).sum();
        let budget = Budget::bitops(9 * total_macs);
        let ft = FinetuneConfig::from_run(&cfg);

        let run = |bits: &[(u32, u32)]| {
            let net = build_network(&cfg, &dataset).unwrap();
            finetune_with_policy(&net, bits, &dataset, &ft).unwrap().top1
        };
        let l = network.num_quantized();
        let t1 = std::time::Instant::now();
        let fp = run(&vec![(32, 32); l]);
        let t_ft = t1.elapsed().as_millis();
        let u2 = run(&vec![(2, 2); l]);
        let u3 = run(&vec![(3, 3); l]);
        let u8b = run(&vec![(8, 8); l]);

        let routine = search_stage(&stage.report, &stage.stats, 1.0, budget, false).unwrap();
        let reversed = search_stage(&stage.report, &stage.stats, 1.0, budget, true).unwrap();
        let rbits: Vec<(u32, u32)> = routine.choices.iter().map(|c| (c.b_w, c.b_a)).collect();
        let vbits: Vec<(u32, u32)> = reversed.choices.iter().map(|c| (c.b_w, c.b_a)).collect();
        let top_routine = run(&rbits);
        let top_reversed = run(&vbits);
        println!(
            "seed {seed}: fp={fp:.4} u2={u2:.4} u3={u3:.4} u8={u8b:.4} routine={top_routine:.4} {rbits:?} reversed={top_reversed:.4} {vbits:?} (ind {t_ind}ms ft {t_ft}ms)"
        );
        println!("  indicators w: {:?}", stage.report.s_w.iter().map(|r| r.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()).collect::<Vec<_>>());
        println!("  indicators a: {:?}", stage.report.s_a.iter().map(|r| r.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()).collect::<Vec<_>>());
    }
}
