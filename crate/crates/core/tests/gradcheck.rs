//! Finite-difference validation of every differentiable operation, plus the
//! quantizer's straight-through scale gradient.

mod common;

use common::{central_diff, rel_err};
use mpq_core::quant::{self, QuantSpec};
use mpq_core::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;
/// Keep relu inputs clear of the kink.
const KINK_MARGIN: f64 = 1e-3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random values in [-1, 1] nudged away from zero so relu stays smooth
/// around the finite-difference probes.
fn smooth_values(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v.abs() < 10.0 * KINK_MARGIN {
                v + 0.05 * v.signum_or_one()
            } else {
                v
            }
        })
        .collect()
}

trait SignumOrOne {
    fn signum_or_one(self) -> f64;
}

impl SignumOrOne for f64 {
    fn signum_or_one(self) -> f64 {
        if self == 0.0 {
            1.0
        } else {
            self.signum()
        }
    }
}

/// Check every element of every parameter of a scalar-valued graph builder
/// against central differences. Returns the number of elements checked.
fn check_params(params: &[Tensor], mut eval: impl FnMut() -> f64, mut backward: impl FnMut()) -> usize {
    for p in params {
        p.zero_grad();
    }
    backward();
    let mut checked = 0;
    for p in params {
        let grad = p.grad().expect("parameter gradient populated");
        for index in 0..p.numel() {
            let fd = central_diff(p, index, FD_STEP, &mut eval);
            assert!(
                rel_err(grad[index], fd) <= TOLERANCE,
                "analytic {} vs fd {} at element {index}",
                grad[index],
                fd
            );
            checked += 1;
        }
    }
    checked
}

#[test]
fn matmul_gradients() {
    let mut r = rng(1);
    let mut total = 0;
    for _ in 0..8 {
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let a = Tensor::param(vec![m, k], smooth_values(&mut r, m * k));
        let b = Tensor::param(vec![k, n], smooth_values(&mut r, k * n));
        let coeff = Tensor::input(vec![m, n], smooth_values(&mut r, m * n));
        let eval = || {
            let mut g = Graph::new();
            let out = g.matmul(&a, &b).unwrap();
            let weighted = g.mul(&out, &coeff).unwrap();
            g.sum(&weighted).unwrap().item()
        };
        let backward = || {
            let mut g = Graph::new();
            let out = g.matmul(&a, &b).unwrap();
            let weighted = g.mul(&out, &coeff).unwrap();
            let loss = g.sum(&weighted).unwrap();
            g.backward(&loss).unwrap();
        };
        total += check_params(&[a.clone(), b.clone()], eval, backward);
    }
    assert!(total >= 50, "checked {total}");
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(2);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let (batch, c_in, c_out, hw) = (2, 2, 3, 5);
        let input = Tensor::param(vec![batch, c_in, hw, hw], smooth_values(&mut r, batch * c_in * hw * hw));
        let kernel = Tensor::param(vec![c_out, c_in, 3, 3], smooth_values(&mut r, c_out * c_in * 9));
        let out_hw = (hw + 2 * pad - 3) / stride + 1;
        let coeff = Tensor::input(vec![batch, c_out, out_hw, out_hw], smooth_values(&mut r, batch * c_out * out_hw * out_hw));
        let eval = || {
            let mut g = Graph::new();
            let out = g.conv2d(&input, &kernel, stride, pad).unwrap();
            let weighted = g.mul(&out, &coeff).unwrap();
            g.sum(&weighted).unwrap().item()
        };
        let backward = || {
            let mut g = Graph::new();
            let out = g.conv2d(&input, &kernel, stride, pad).unwrap();
            let weighted = g.mul(&out, &coeff).unwrap();
            let loss = g.sum(&weighted).unwrap();
            g.backward(&loss).unwrap();
        };
        check_params(&[input.clone(), kernel.clone()], eval, backward);
    }
}

#[test]
fn bias_relu_flatten_gradients() {
    let mut r = rng(3);
    let x = Tensor::param(vec![3, 2, 2, 2], smooth_values(&mut r, 24));
    let bias = Tensor::param(vec![2], smooth_values(&mut r, 2));
    let coeff = Tensor::input(vec![3, 8], smooth_values(&mut r, 24));
    let eval = || {
        let mut g = Graph::new();
        let y = g.add_bias(&x, &bias).unwrap();
        let y = g.relu(&y).unwrap();
        let y = g.flatten(&y).unwrap();
        let weighted = g.mul(&y, &coeff).unwrap();
        g.sum(&weighted).unwrap().item()
    };
    let backward = || {
        let mut g = Graph::new();
        let y = g.add_bias(&x, &bias).unwrap();
        let y = g.relu(&y).unwrap();
        let y = g.flatten(&y).unwrap();
        let weighted = g.mul(&y, &coeff).unwrap();
        let loss = g.sum(&weighted).unwrap();
        g.backward(&loss).unwrap();
    };
    check_params(&[x.clone(), bias.clone()], eval, backward);
}

#[test]
fn softmax_cross_entropy_gradients() {
    let mut r = rng(4);
    let (batch, classes) = (6, 5);
    let logits = Tensor::param(vec![batch, classes], smooth_values(&mut r, batch * classes));
    let labels: Vec<usize> = (0..batch).map(|_| r.gen_range(0..classes)).collect();
    let eval = || {
        let mut g = Graph::new();
        g.softmax_cross_entropy(&logits, &labels).unwrap().item()
    };
    let backward = || {
        let mut g = Graph::new();
        let loss = g.softmax_cross_entropy(&logits, &labels).unwrap();
        g.backward(&loss).unwrap();
    };
    check_params(&[logits.clone()], eval, backward);
}

#[test]
fn two_layer_mlp_end_to_end_gradients() {
    // random 2-layer MLP: every parameter element against central
    // differences through the full forward pass
    let mut r = rng(5);
    let (batch, d, h, classes) = (4, 6, 5, 3);
    let x = Tensor::input(vec![batch, d], smooth_values(&mut r, batch * d));
    let w0 = Tensor::param(vec![d, h], smooth_values(&mut r, d * h));
    let b0 = Tensor::param(vec![h], smooth_values(&mut r, h));
    let w1 = Tensor::param(vec![h, classes], smooth_values(&mut r, h * classes));
    let b1 = Tensor::param(vec![classes], smooth_values(&mut r, classes));
    let labels: Vec<usize> = (0..batch).map(|_| r.gen_range(0..classes)).collect();
    let forward = |g: &mut Graph| {
        let z = g.matmul(&x, &w0).unwrap();
        let z = g.add_bias(&z, &b0).unwrap();
        let z = g.relu(&z).unwrap();
        let z = g.matmul(&z, &w1).unwrap();
        let z = g.add_bias(&z, &b1).unwrap();
        g.softmax_cross_entropy(&z, &labels).unwrap()
    };
    let eval = || forward(&mut Graph::new()).item();
    let backward = || {
        let mut g = Graph::new();
        let loss = forward(&mut g);
        g.backward(&loss).unwrap();
    };
    check_params(&[w0.clone(), b0.clone(), w1.clone(), b1.clone()], eval, backward);
}

/// Sample (u, s, spec) with u at least `margin` away from every rounding
/// half-step and from the clip bounds.
fn safe_quant_case(r: &mut ChaCha8Rng, margin: f64) -> (f64, f64, QuantSpec) {
    loop {
        let bits = r.gen_range(2..=6);
        let spec = if r.gen_bool(0.5) { QuantSpec::weights(bits).unwrap() } else { QuantSpec::activations(bits).unwrap() };
        let s: f64 = r.gen_range(0.05..1.0);
        let u: f64 = r.gen_range(-5.0..5.0);
        let distance_to_half = (u - u.floor() - 0.5).abs();
        let clear_of_bounds =
            (u - spec.min_b() as f64).abs() > margin && (u - spec.max_b() as f64).abs() > margin;
        if distance_to_half > margin && clear_of_bounds {
            return (u, s, spec);
        }
    }
}

/// The function the straight-through estimator actually differentiates:
/// clip-then-rescale with the rounding residual frozen at the base point.
/// It coincides with the quantizer forward at the base point, and its exact
/// partial derivatives are the pinned backward formulas (interior:
/// dv = 1, ds = round(u) - u; clipped: dv = 0, ds = the clip bound).
fn ste_surrogate(v: f64, s: f64, spec: QuantSpec, frozen_residual: f64) -> f64 {
    let clipped = (v / s).clamp(spec.min_b() as f64, spec.max_b() as f64);
    frozen_residual * s + clipped * s
}

fn frozen_residual(v: f64, s: f64, spec: QuantSpec) -> f64 {
    let clipped = (v / s).clamp(spec.min_b() as f64, spec.max_b() as f64);
    clipped.round() - clipped
}

#[test]
fn quantizer_gradients_match_surrogate_finite_difference() {
    let mut r = rng(6);
    let mut checked = 0;
    for _ in 0..300 {
        let (u, s_val, spec) = safe_quant_case(&mut r, 10.0 * KINK_MARGIN);
        let v = Tensor::param(vec![1], vec![u * s_val]);
        let s = Tensor::scalar_param(s_val);
        // sanity: the surrogate reproduces the implementation's forward
        let residual = frozen_residual(v.item(), s.item(), spec);
        let forward = quant::quantize_values(&v.values(), s.item(), spec).unwrap()[0];
        assert!((ste_surrogate(v.item(), s.item(), spec, residual) - forward).abs() < 1e-12);

        s.zero_grad();
        v.zero_grad();
        {
            let mut g = Graph::new();
            let q = quant::quantize(&mut g, &v, &s, spec, false).unwrap();
            let loss = g.sum(&q).unwrap();
            g.backward(&loss).unwrap();
        }
        let eval = || ste_surrogate(v.item(), s.item(), spec, residual);
        // step scaled by s keeps the probe inside the same STE region
        let h = FD_STEP * s_val;
        let fd_s = central_diff(&s, 0, h, eval);
        let grad_s = s.grad().unwrap()[0];
        assert!(rel_err(grad_s, fd_s) <= TOLERANCE, "grad_s {grad_s} vs fd {fd_s} (u={u}, spec {spec:?})");
        let fd_v = central_diff(&v, 0, h, eval);
        let grad_v = v.grad().unwrap()[0];
        assert!(rel_err(grad_v, fd_v) <= TOLERANCE, "grad_v {grad_v} vs fd {fd_v} (u={u})");
        checked += 2;
    }
    assert!(checked >= 600);
}

#[test]
fn quantizer_saturated_gradients_match_raw_finite_difference() {
    // Deep in the clip region the surrogate and the raw forward agree, so
    // a plain finite difference of the real quantizer applies.
    let mut r = rng(7);
    for _ in 0..100 {
        let bits = r.gen_range(2..=5);
        let spec = if r.gen_bool(0.5) { QuantSpec::weights(bits).unwrap() } else { QuantSpec::activations(bits).unwrap() };
        let s_val: f64 = r.gen_range(0.05..1.0);
        let beyond: f64 = r.gen_range(0.5..3.0);
        let (u, expected_ds) = if r.gen_bool(0.5) {
            (spec.max_b() as f64 + beyond, spec.max_b() as f64)
        } else {
            (spec.min_b() as f64 - beyond, spec.min_b() as f64)
        };
        let v = Tensor::param(vec![1], vec![u * s_val]);
        let s = Tensor::scalar_param(s_val);
        let eval = || {
            quant::quantize_values(&v.values(), s.item(), spec).unwrap()[0]
        };
        s.zero_grad();
        v.zero_grad();
        {
            let mut g = Graph::new();
            let q = quant::quantize(&mut g, &v, &s, spec, false).unwrap();
            let loss = g.sum(&q).unwrap();
            g.backward(&loss).unwrap();
        }
        let fd_s = central_diff(&s, 0, FD_STEP * s_val, eval);
        let grad_s = s.grad().unwrap()[0];
        assert!(rel_err(grad_s, fd_s) <= TOLERANCE, "grad_s {grad_s} vs fd {fd_s}");
        assert!((grad_s - expected_ds).abs() < 1e-9);
        let fd_v = central_diff(&v, 0, FD_STEP * s_val, eval);
        assert_eq!(v.grad().unwrap()[0], 0.0);
        assert!(fd_v.abs() <= TOLERANCE);
    }
}

#[test]
fn quantizer_tensor_scale_gradient_reduces_over_elements() {
    let mut r = rng(8);
    for _ in 0..20 {
        let cases: Vec<(f64, f64, QuantSpec)> = (0..4).map(|_| safe_quant_case(&mut r, 10.0 * KINK_MARGIN)).collect();
        let spec = cases[0].2;
        let s_val = cases[0].1;
        let values: Vec<f64> = cases.iter().map(|&(u, ..)| u * s_val).collect();
        let residuals: Vec<f64> = values.iter().map(|&x| frozen_residual(x, s_val, spec)).collect();
        let v = Tensor::param(vec![4], values);
        let s = Tensor::scalar_param(s_val);
        s.zero_grad();
        {
            let mut g = Graph::new();
            let q = quant::quantize(&mut g, &v, &s, spec, false).unwrap();
            let loss = g.sum(&q).unwrap();
            g.backward(&loss).unwrap();
        }
        let eval = || {
            v.values()
                .iter()
                .zip(&residuals)
                .map(|(&x, &r0)| ste_surrogate(x, s.item(), spec, r0))
                .sum()
        };
        let fd = central_diff(&s, 0, FD_STEP * s_val, eval);
        let grad = s.grad().unwrap()[0];
        assert!(rel_err(grad, fd) <= TOLERANCE, "grad_s {grad} vs fd {fd}");
    }
}

#[test]
fn gradient_determinism_two_runs_bit_identical() {
    let build = || {
        let mut r = rng(8);
        let x = Tensor::input(vec![3, 4], smooth_values(&mut r, 12));
        let w = Tensor::param(vec![4, 2], smooth_values(&mut r, 8));
        let labels = vec![0, 1, 0];
        let mut g = Graph::new();
        let z = g.matmul(&x, &w).unwrap();
        let loss = g.softmax_cross_entropy(&z, &labels).unwrap();
        g.backward(&loss).unwrap();
        w.grad().unwrap()
    };
    let a = build();
    let b = build();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
