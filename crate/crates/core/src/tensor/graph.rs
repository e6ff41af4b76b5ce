use crate::error::{Error, Result};

use super::{shape_error, Tensor};

/// Backward rule for one recorded operation.
///
/// Implementations compute the gradient contribution for each input given
/// the upstream gradient of the output. Returning `None` for an input
/// skips accumulation (used for inputs that do not require gradients).
pub trait BackwardOp {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[Tensor], output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Record {
    op: Box<dyn BackwardOp>,
    inputs: Vec<Tensor>,
    output: Tensor,
}

/// Ordered tape of executed differentiable operations.
///
/// Operations append in execution order, so inputs always precede their
/// consumers. `backward` walks the tape once in reverse and is consumed
/// by it; build a fresh graph per forward pass.
#[derive(Default)]
pub struct Graph {
    records: Vec<Record>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Append an already-computed operation to the tape. The output tensor
    /// must have been produced from `inputs` by the op's forward rule.
    pub(crate) fn record(&mut self, op: Box<dyn BackwardOp>, inputs: Vec<Tensor>, output: Tensor) {
        if output.requires_grad() {
            self.records.push(Record { op, inputs, output });
        }
    }

    fn output_of(&mut self, values: Vec<f64>, shape: Vec<usize>, inputs: &[Tensor]) -> Tensor {
        let requires = inputs.iter().any(Tensor::requires_grad);
        Tensor::intermediate(shape, values, requires)
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_error("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let values = mm(&a.data().values, m, k, &b.data().values, n);
        let out = self.output_of(values, vec![m, n], &[a.clone(), b.clone()]);
        self.record(Box::new(MatMul { m, k, n }), vec![a.clone(), b.clone()], out.clone());
        Ok(out)
    }

    /// Input `[n, c_in, h, w]`, kernel `[c_out, c_in, kh, kw]`.
    pub fn conv2d(&mut self, input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (si, sk) = (input.shape(), kernel.shape());
        if si.len() != 4 || sk.len() != 4 || si[1] != sk[1] {
            return Err(shape_error("conv2d", format!("input {si:?}, kernel {sk:?}")));
        }
        if stride == 0 {
            return Err(shape_error("conv2d", "stride must be positive".into()));
        }
        let (batch, c_in, h, w) = (si[0], si[1], si[2], si[3]);
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_error(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let out_h = (h + 2 * pad - kh) / stride + 1;
        let out_w = (w + 2 * pad - kw) / stride + 1;
        let col_h = c_in * kh * kw;
        let col_w = out_h * out_w;

        let mut cols = vec![0.0; batch * col_h * col_w];
        let mut values = vec![0.0; batch * c_out * col_w];
        {
            let inp = input.data();
            let ker = kernel.data();
            for n in 0..batch {
                let col = &mut cols[n * col_h * col_w..(n + 1) * col_h * col_w];
                im2col(&inp.values[n * c_in * h * w..(n + 1) * c_in * h * w], c_in, h, w, kh, kw, stride, pad, col);
                let out_n = mm(&ker.values, c_out, col_h, col, col_w);
                values[n * c_out * col_w..(n + 1) * c_out * col_w].copy_from_slice(&out_n);
            }
        }
        let out = self.output_of(values, vec![batch, c_out, out_h, out_w], &[input.clone(), kernel.clone()]);
        self.record(
            Box::new(Conv2d { stride, pad, c_in, h, w, kh, kw, c_out, col_h, col_w, cols }),
            vec![input.clone(), kernel.clone()],
            out.clone(),
        );
        Ok(out)
    }

    /// Bias over the feature dim of `[n, f]` or the channel dim of `[n, c, h, w]`.
    pub fn add_bias(&mut self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (sx, sb) = (x.shape(), bias.shape());
        let channels = match sx.len() {
            2 => sx[1],
            4 => sx[1],
            _ => return Err(shape_error("add-bias", format!("input rank {} unsupported", sx.len()))),
        };
        if sb != vec![channels] {
            return Err(shape_error("add-bias", format!("input {sx:?}, bias {sb:?}")));
        }
        let inner: usize = sx[2..].iter().product();
        let mut values = x.values();
        {
            let b = bias.data();
            for (i, v) in values.iter_mut().enumerate() {
                let c = (i / inner) % channels;
                *v += b.values[c];
            }
        }
        let out = self.output_of(values, sx, &[x.clone(), bias.clone()]);
        self.record(Box::new(AddBias { channels, inner }), vec![x.clone(), bias.clone()], out.clone());
        Ok(out)
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        let values = x.data().values.iter().map(|&v| v.max(0.0)).collect();
        let out = self.output_of(values, x.shape(), &[x.clone()]);
        self.record(Box::new(Relu), vec![x.clone()], out.clone());
        Ok(out)
    }

    /// `[d0, d1, ..]` -> `[d0, d1*..]`
    pub fn flatten(&mut self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.is_empty() {
            return Err(shape_error("flatten", "rank-0 input".into()));
        }
        let rest: usize = s[1..].iter().product();
        let out = self.output_of(x.values(), vec![s[0], rest], &[x.clone()]);
        self.record(Box::new(Flatten), vec![x.clone()], out.clone());
        Ok(out)
    }

    /// Mean cross-entropy over the batch from raw logits `[n, classes]`.
    pub fn softmax_cross_entropy(&mut self, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let s = logits.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(shape_error(
                "softmax-cross-entropy",
                format!("logits {s:?} vs {} labels", labels.len()),
            ));
        }
        let (n, classes) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(shape_error("softmax-cross-entropy", format!("label {bad} >= {classes} classes")));
        }
        let mut probs = vec![0.0; n * classes];
        let mut loss = 0.0;
        {
            let d = logits.data();
            for i in 0..n {
                let row = &d.values[i * classes..(i + 1) * classes];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for (j, &z) in row.iter().enumerate() {
                    let e = (z - max).exp();
                    probs[i * classes + j] = e;
                    denom += e;
                }
                for j in 0..classes {
                    probs[i * classes + j] /= denom;
                }
                loss -= probs[i * classes + labels[i]].ln();
            }
        }
        loss /= n as f64;
        let out = self.output_of(vec![loss], vec![1], &[logits.clone()]);
        self.record(
            Box::new(SoftmaxCrossEntropy { labels: labels.to_vec(), probs, classes }),
            vec![logits.clone()],
            out.clone(),
        );
        Ok(out)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_error("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let values = a.data().values.iter().zip(b.data().values.iter()).map(|(&x, &y)| x + y).collect();
        let out = self.output_of(values, a.shape(), &[a.clone(), b.clone()]);
        self.record(Box::new(Add), vec![a.clone(), b.clone()], out.clone());
        Ok(out)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(shape_error("mul", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let values = a.data().values.iter().zip(b.data().values.iter()).map(|(&x, &y)| x * y).collect();
        let out = self.output_of(values, a.shape(), &[a.clone(), b.clone()]);
        self.record(Box::new(Mul), vec![a.clone(), b.clone()], out.clone());
        Ok(out)
    }

    /// Sum all elements into a scalar.
    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        let total = x.data().values.iter().sum();
        let out = self.output_of(vec![total], vec![1], &[x.clone()]);
        self.record(Box::new(Sum), vec![x.clone()], out.clone());
        Ok(out)
    }

    /// Reverse pass from a scalar loss; gradients sum into every reachable
    /// tensor that requires them. Consumes the tape.
    pub fn backward(self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss { shape: loss.shape() });
        }
        loss.accumulate_grad(&[1.0]);
        for rec in self.records.iter().rev() {
            let out_grad = match rec.output.grad() {
                Some(g) => g,
                None => continue,
            };
            let grads = rec.op.backward(&rec.inputs, &rec.output, &out_grad);
            debug_assert_eq!(grads.len(), rec.inputs.len(), "{}: backward arity", rec.op.name());
            for (input, grad) in rec.inputs.iter().zip(grads) {
                if let Some(g) = grad {
                    if input.requires_grad() {
                        input.accumulate_grad(&g);
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// dense matmul helpers (row-major)

/// `[m,k] x [k,n]`
fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `[m,n] x [k,n]^T -> [m,k]`
fn mm_nt(a: &[f64], m: usize, n: usize, b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `[m,k]^T x [m,n] -> [k,n]`
fn mm_tn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for t in 0..m {
        let arow = &a[t * k..(t + 1) * k];
        let brow = &b[t * n..(t + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn im2col(input: &[f64], c_in: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize, col: &mut [f64]) {
    let out_h = (h + 2 * pad - kh) / stride + 1;
    let out_w = (w + 2 * pad - kw) / stride + 1;
    let col_w = out_h * out_w;
    for c in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh * kw + ky * kw + kx) * col_w;
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        col[row + oy * out_w + ox] =
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                input[c * h * w + iy as usize * w + ix as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], c_in: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize, input_grad: &mut [f64]) {
    let out_h = (h + 2 * pad - kh) / stride + 1;
    let out_w = (w + 2 * pad - kw) / stride + 1;
    let col_w = out_h * out_w;
    for c in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh * kw + ky * kw + kx) * col_w;
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            input_grad[c * h * w + iy as usize * w + ix as usize] += col[row + oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// op backward rules

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl BackwardOp for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let da = a
            .requires_grad()
            .then(|| mm_nt(out_grad, self.m, self.n, &b.data().values, self.k));
        let db = b
            .requires_grad()
            .then(|| mm_tn(&a.data().values, self.m, self.k, out_grad, self.n));
        vec![da, db]
    }
}

struct Conv2d {
    stride: usize,
    pad: usize,
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    c_out: usize,
    col_h: usize,
    col_w: usize,
    /// im2col matrices saved per batch sample during forward.
    cols: Vec<f64>,
}

impl BackwardOp for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (input, kernel) = (&inputs[0], &inputs[1]);
        let batch = input.shape()[0];
        let sample = self.c_in * self.h * self.w;
        let mut dinput = input.requires_grad().then(|| vec![0.0; batch * sample]);
        let mut dkernel = kernel.requires_grad().then(|| vec![0.0; self.c_out * self.col_h]);
        for n in 0..batch {
            let dout_n = &out_grad[n * self.c_out * self.col_w..(n + 1) * self.c_out * self.col_w];
            let col_n = &self.cols[n * self.col_h * self.col_w..(n + 1) * self.col_h * self.col_w];
            if let Some(dk) = dkernel.as_mut() {
                let contrib = mm_nt(dout_n, self.c_out, self.col_w, col_n, self.col_h);
                for (d, c) in dk.iter_mut().zip(contrib) {
                    *d += c;
                }
            }
            if let Some(di) = dinput.as_mut() {
                let dcol = mm_tn(&kernel.data().values, self.c_out, self.col_h, dout_n, self.col_w);
                col2im(
                    &dcol,
                    self.c_in,
                    self.h,
                    self.w,
                    self.kh,
                    self.kw,
                    self.stride,
                    self.pad,
                    &mut di[n * sample..(n + 1) * sample],
                );
            }
        }
        vec![dinput, dkernel]
    }
}

struct AddBias {
    channels: usize,
    inner: usize,
}

impl BackwardOp for AddBias {
    fn name(&self) -> &'static str {
        "add-bias"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let dx = inputs[0].requires_grad().then(|| out_grad.to_vec());
        let db = inputs[1].requires_grad().then(|| {
            let mut db = vec![0.0; self.channels];
            for (i, &g) in out_grad.iter().enumerate() {
                db[(i / self.inner) % self.channels] += g;
            }
            db
        });
        vec![dx, db]
    }
}

struct Relu;

impl BackwardOp for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0].data();
        let dx = inputs[0]
            .requires_grad()
            .then(|| x.values.iter().zip(out_grad).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect());
        vec![dx]
    }
}

struct Flatten;

impl BackwardOp for Flatten {
    fn name(&self) -> &'static str {
        "flatten"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![inputs[0].requires_grad().then(|| out_grad.to_vec())]
    }
}

struct SoftmaxCrossEntropy {
    labels: Vec<usize>,
    probs: Vec<f64>,
    classes: usize,
}

impl BackwardOp for SoftmaxCrossEntropy {
    fn name(&self) -> &'static str {
        "softmax-cross-entropy"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = out_grad[0];
        let n = self.labels.len();
        let dlogits = inputs[0].requires_grad().then(|| {
            let mut d = vec![0.0; n * self.classes];
            for i in 0..n {
                for j in 0..self.classes {
                    let indicator = if j == self.labels[i] { 1.0 } else { 0.0 };
                    d[i * self.classes + j] = g * (self.probs[i * self.classes + j] - indicator) / n as f64;
                }
            }
            d
        });
        vec![dlogits]
    }
}

struct Add;

impl BackwardOp for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        inputs.iter().map(|t| t.requires_grad().then(|| out_grad.to_vec())).collect()
    }
}

struct Mul;

impl BackwardOp for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let da = inputs[0]
            .requires_grad()
            .then(|| inputs[1].data().values.iter().zip(out_grad).map(|(&b, &g)| b * g).collect());
        let db = inputs[1]
            .requires_grad()
            .then(|| inputs[0].data().values.iter().zip(out_grad).map(|(&a, &g)| a * g).collect());
        vec![da, db]
    }
}

struct Sum;

impl BackwardOp for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, out_grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = out_grad[0];
        vec![inputs[0].requires_grad().then(|| vec![g; inputs[0].numel()])]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shape_and_values() {
        let mut g = Graph::new();
        let a = Tensor::input(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::input(vec![3, 4], (0..12).map(f64::from).collect());
        let c = g.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), vec![2, 4]);
        // row 0: [1,2,3] . columns of b
        assert_eq!(c.values()[0], 1.0 * 0.0 + 2.0 * 4.0 + 3.0 * 8.0);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let mut g = Graph::new();
        let a = Tensor::input(vec![2, 3], vec![0.0; 6]);
        let b = Tensor::input(vec![4, 2], vec![0.0; 8]);
        let err = g.matmul(&a, &b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = Tensor::input(vec![3], vec![-1.0, 0.0, 2.0]);
        let y = g.relu(&x).unwrap();
        assert_eq!(y.values(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn conv2d_shape() {
        let mut g = Graph::new();
        let x = Tensor::input(vec![1, 1, 5, 5], vec![0.0; 25]);
        let k = Tensor::input(vec![1, 1, 3, 3], vec![0.0; 9]);
        let y = g.conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 3, 3]);
    }

    #[test]
    fn conv2d_known_value() {
        // 3x3 input of ones, 2x2 kernel of ones -> every output element is 4.
        let mut g = Graph::new();
        let x = Tensor::input(vec![1, 1, 3, 3], vec![1.0; 9]);
        let k = Tensor::input(vec![1, 1, 2, 2], vec![1.0; 4]);
        let y = g.conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 2, 2]);
        assert_eq!(y.values(), vec![4.0; 4]);
    }

    #[test]
    fn backward_sum_is_ones() {
        let mut g = Graph::new();
        let w = Tensor::param(vec![3], vec![5.0, -1.0, 2.0]);
        let loss = g.sum(&w).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_square_sum() {
        let mut g = Graph::new();
        let w = Tensor::param(vec![2], vec![1.0, 2.0]);
        let sq = g.mul(&w, &w).unwrap();
        let loss = g.sum(&sq).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_accumulates_across_passes() {
        let w = Tensor::param(vec![2], vec![1.0, 2.0]);
        for _ in 0..2 {
            let mut g = Graph::new();
            let sq = g.mul(&w, &w).unwrap();
            let loss = g.sum(&sq).unwrap();
            g.backward(&loss).unwrap();
        }
        assert_eq!(w.grad().unwrap(), vec![4.0, 8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let w = Tensor::param(vec![2], vec![1.0, 2.0]);
        let y = g.mul(&w, &w).unwrap();
        match g.backward(&y) {
            Err(Error::NonScalarLoss { shape }) => assert_eq!(shape, vec![2]),
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }
    }

    #[test]
    fn softmax_cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let logits = Tensor::param(vec![2, 4], vec![0.0; 8]);
        let loss = g.softmax_cross_entropy(&logits, &[1, 3]).unwrap();
        assert!((loss.item() - (4.0f64).ln()).abs() < 1e-12);
        g.backward(&loss).unwrap();
        let grad = logits.grad().unwrap();
        // p = 0.25 everywhere; label entries get (0.25 - 1)/2.
        assert!((grad[1] - (0.25 - 1.0) / 2.0).abs() < 1e-12);
        assert!((grad[0] - 0.25 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn flatten_roundtrip() {
        let mut g = Graph::new();
        let x = Tensor::param(vec![2, 1, 2, 2], (0..8).map(f64::from).collect());
        let y = g.flatten(&x).unwrap();
        assert_eq!(y.shape(), vec![2, 4]);
        let loss = g.sum(&y).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 8]);
    }

    #[test]
    fn add_bias_rank4_reduces_over_spatial() {
        let mut g = Graph::new();
        let x = Tensor::input(vec![1, 2, 2, 2], vec![0.0; 8]);
        let b = Tensor::param(vec![2], vec![1.0, -1.0]);
        let y = g.add_bias(&x, &b).unwrap();
        assert_eq!(y.values(), vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]);
        let loss = g.sum(&y).unwrap();
        g.backward(&loss).unwrap();
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0]);
    }
}
