//! Shared test oracles: central finite differences, independent of every
//! gradient path they check.

#![allow(dead_code)]

use mpq_core::tensor::Tensor;

/// Central difference d/dx f around element `index` of `tensor`.
pub fn central_diff(tensor: &Tensor, index: usize, h: f64, mut f: impl FnMut() -> f64) -> f64 {
    let original = tensor.values()[index];
    let set = |v: f64| {
        let mut values = tensor.values();
        values[index] = v;
        tensor.set_values(values);
    };
    set(original + h);
    let plus = f();
    set(original - h);
    let minus = f();
    set(original);
    (plus - minus) / (2.0 * h)
}

/// Relative error with an absolute floor for near-zero pairs.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / scale
}
