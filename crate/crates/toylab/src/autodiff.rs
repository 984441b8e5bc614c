//! A small reverse-mode tape over rank-3 tensors `[batch, channels, length]`.
//!
//! Nodes are evaluated eagerly when they are added, so every shape error
//! surfaces while the graph is being built. [`Graph::backward`] walks the
//! tape in reverse and returns one gradient buffer per node.

use std::sync::Arc;

use duetsep_core::audio::{istft_adjoint, istft_samples, ComplexGrid};
use rustfft::num_complex::Complex64;

use crate::error::{Result, ToyError};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(ToyError::Shape(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `(b, c)` along the last axis.
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + c) * l;
        &self.data[start..start + l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    stride: usize,
    pad: usize,
}

/// Fixed complex grid the mask is applied to, plus the constant gain for
/// bins the mask does not cover (the Nyquist bin).
#[derive(Debug, Clone)]
pub struct MaskTarget {
    pub grid: Arc<ComplexGrid>,
    pub uncovered_gain: f64,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Conv1d { x: Var, w: Var, b: Var, g: ConvGeom },
    ConvTranspose1d { x: Var, w: Var, b: Var, g: ConvGeom },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Linear { x: Var, w: Var, b: Var },
    Reshape(Var),
    MaskIstft { mask: Var, target: MaskTarget },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Output of [`Graph::backward`]: gradient per node, `None` where nothing flowed.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0[v.0].as_deref()
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.0[v.0].take()
    }
}

/// `c = beta * c + op(a) * op(b)` for row-major operands, where `op`
/// optionally transposes; `[m, k, n]` are the dimensions of the product.
fn gemm([m, k, n]: [usize; 3], a: &[f64], a_trans: bool, b: &[f64], b_trans: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand sizes");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index reachable through the
    // given strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `[B, C, L]` to `[C, B * L]`.
fn to_channel_major(x: &[f64], [bn, c, l]: [usize; 3]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for bi in 0..bn {
        for ci in 0..c {
            out[(ci * bn + bi) * l..][..l].copy_from_slice(&x[(bi * c + ci) * l..][..l]);
        }
    }
    out
}

/// `[C, B * L]` to `[B, C, L]`, adding a per-channel bias.
fn from_channel_major(y: &[f64], [bn, c, l]: [usize; 3], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for bi in 0..bn {
        for ci in 0..c {
            let src = &y[(ci * bn + bi) * l..][..l];
            for (o, v) in out[(bi * c + ci) * l..][..l].iter_mut().zip(src) {
                *o = v + bias[ci];
            }
        }
    }
    out
}

fn add_from_channel_major(y: &[f64], [bn, c, l]: [usize; 3], out: &mut [f64]) {
    for bi in 0..bn {
        for ci in 0..c {
            let src = &y[(ci * bn + bi) * l..][..l];
            for (o, v) in out[(bi * c + ci) * l..][..l].iter_mut().zip(src) {
                *o += v;
            }
        }
    }
}

/// Patch matrix `[C * K, B * lout]` of a `[B, C, len]` signal: entry
/// `(c, k), (b, t)` is `x[b, c, t * stride + k - pad]`, zero outside.
fn im2col(x: &[f64], [bn, c, len]: [usize; 3], k: usize, g: ConvGeom, lout: usize) -> Vec<f64> {
    let n = bn * lout;
    let mut col = vec![0.0; c * k * n];
    for ci in 0..c {
        for kk in 0..k {
            let (lo, hi) = valid_range(kk, g, len, lout);
            let row = &mut col[(ci * k + kk) * n..][..n];
            for bi in 0..bn {
                let xr = &x[(bi * c + ci) * len..][..len];
                let r = &mut row[bi * lout..][..lout];
                for t in lo..hi {
                    r[t] = xr[t * g.stride + kk - g.pad];
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds the patch matrix into `out`.
fn col2im(col: &[f64], [bn, c, len]: [usize; 3], k: usize, g: ConvGeom, lout: usize, out: &mut [f64]) {
    let n = bn * lout;
    for ci in 0..c {
        for kk in 0..k {
            let (lo, hi) = valid_range(kk, g, len, lout);
            let row = &col[(ci * k + kk) * n..][..n];
            for bi in 0..bn {
                let o = &mut out[(bi * c + ci) * len..][..len];
                let r = &row[bi * lout..][..lout];
                for t in lo..hi {
                    o[t * g.stride + kk - g.pad] += r[t];
                }
            }
        }
    }
}

fn conv_out_len(l: usize, k: usize, g: ConvGeom) -> Option<usize> {
    (l + 2 * g.pad).checked_sub(k).map(|n| n / g.stride + 1)
}

/// Range of output positions `t` for which `t * stride + k - pad` lands in `0..len`.
fn valid_range(k: usize, g: ConvGeom, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if g.pad > k { (g.pad - k).div_ceil(g.stride) } else { 0 };
    let hi = if len + g.pad > k {
        ((len + g.pad - k - 1) / g.stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 3] {
        self.nodes[v.0].value.shape
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node: a parameter or a constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    fn bias_len(&self, b: Var, want: usize, what: &str) -> Result<()> {
        let bs = self.shape(b);
        if bs[0] * bs[1] != 1 || bs[2] != want {
            return Err(ToyError::Shape(format!("{what} bias has shape {bs:?}, expected [1, 1, {want}]")));
        }
        Ok(())
    }

    /// `x: [B, Cin, L]`, `w: [Cout, Cin, K]`, `b: [1, 1, Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [bn, cin, l] = self.shape(x);
        let [cout, wcin, k] = self.shape(w);
        if wcin != cin {
            return Err(ToyError::Shape(format!("conv1d weight expects {wcin} input channels, got {cin}")));
        }
        if stride == 0 {
            return Err(ToyError::Shape("conv1d stride must be >= 1".into()));
        }
        self.bias_len(b, cout, "conv1d")?;
        let g = ConvGeom { stride, pad };
        let lout = conv_out_len(l, k, g)
            .ok_or_else(|| ToyError::Shape(format!("conv1d kernel {k} longer than padded input {l}")))?;
        let col = im2col(&self.value(x).data, [bn, cin, l], k, g, lout);
        let mut y = vec![0.0; cout * bn * lout];
        gemm([cout, cin * k, bn * lout], &self.value(w).data, false, &col, false, &mut y, 0.0);
        let out = from_channel_major(&y, [bn, cout, lout], &self.value(b).data);
        let value = Tensor::new([bn, cout, lout], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, g }))
    }

    /// `x: [B, Cin, L]`, `w: [Cin, Cout, K]`, `b: [1, 1, Cout]`; output length
    /// `(L - 1) * stride - 2 * pad + K`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [bn, cin, l] = self.shape(x);
        let [wcin, cout, k] = self.shape(w);
        if wcin != cin {
            return Err(ToyError::Shape(format!("conv_transpose1d weight expects {wcin} input channels, got {cin}")));
        }
        if stride == 0 || l == 0 {
            return Err(ToyError::Shape("conv_transpose1d needs stride >= 1 and a non-empty input".into()));
        }
        self.bias_len(b, cout, "conv_transpose1d")?;
        let g = ConvGeom { stride, pad };
        let lout = ((l - 1) * stride + k)
            .checked_sub(2 * pad)
            .filter(|&n| n > 0)
            .ok_or_else(|| ToyError::Shape(format!("conv_transpose1d padding {pad} consumes the output")))?;
        let xm = to_channel_major(&self.value(x).data, [bn, cin, l]);
        let mut col = vec![0.0; cout * k * bn * l];
        gemm([cout * k, cin, bn * l], &self.value(w).data, true, &xm, false, &mut col, 0.0);
        let bv = &self.value(b).data;
        let mut out: Vec<f64> = (0..bn * cout).flat_map(|r| std::iter::repeat(bv[r % cout]).take(lout)).collect();
        col2im(&col, [bn, cout, lout], k, g, l, &mut out);
        let value = Tensor::new([bn, cout, lout], out)?;
        Ok(self.push(value, Op::ConvTranspose1d { x, w, b, g }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        self.push(value, Op::Sigmoid(x))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(ToyError::Shape(format!(
                "{what} operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x + y).collect();
        Ok(self.push(Tensor { shape: self.shape(a), data }, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x * y).collect();
        Ok(self.push(Tensor { shape: self.shape(a), data }, Op::Mul(a, b)))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(ToyError::Shape("concat of nothing".into()));
        };
        let [bn, _, l] = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let [pb, pc, pl] = self.shape(p);
            if pb != bn || pl != l {
                return Err(ToyError::Shape(format!(
                    "concat parts must share batch and length, got {:?} and {:?}",
                    self.shape(first),
                    self.shape(p)
                )));
            }
            channels += pc;
        }
        let mut data = Vec::with_capacity(bn * channels * l);
        for bi in 0..bn {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape[1];
                data.extend_from_slice(&t.data[bi * c * l..(bi + 1) * c * l]);
            }
        }
        Ok(self.push(Tensor { shape: [bn, channels, l], data }, Op::Concat(parts.to_vec())))
    }

    /// Affine map over the last axis: `x: [B, C, In]`, `w: [1, Out, In]`, `b: [1, 1, Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [bn, c, inp] = self.shape(x);
        let [w0, out, win] = self.shape(w);
        if w0 != 1 || win != inp {
            return Err(ToyError::Shape(format!("linear weight {:?} cannot map length {inp}", self.shape(w))));
        }
        self.bias_len(b, out, "linear")?;
        let bv = &self.value(b).data;
        let rows = bn * c;
        let mut data: Vec<f64> = (0..rows).flat_map(|_| bv.iter().copied()).collect();
        gemm([rows, inp, out], &self.value(x).data, false, &self.value(w).data, true, &mut data, 1.0);
        Ok(self.push(Tensor { shape: [bn, c, out], data }, Op::Linear { x, w, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: [usize; 3]) -> Result<Var> {
        let value = Tensor::new(shape, self.value(x).data.clone())
            .map_err(|_| ToyError::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape(x))))?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Applies real masks `[T, S, K]` to the fixed grid (bins `0..K`; higher
    /// bins get `uncovered_gain`) and inverts each source, giving `[1, S, N]`.
    pub fn mask_istft(&mut self, mask: Var, target: MaskTarget) -> Result<Var> {
        let [t, s, k] = self.shape(mask);
        let grid = &target.grid;
        if t != grid.frames() || k > grid.bins() {
            return Err(ToyError::Shape(format!(
                "mask {:?} does not fit a grid of {} frames x {} bins",
                self.shape(mask),
                grid.frames(),
                grid.bins()
            )));
        }
        let n = grid.signal_len();
        let m = &self.value(mask).data;
        let mut data = Vec::with_capacity(s * n);
        for src in 0..s {
            let masked = apply_mask(grid, m, [t, s, k], src, target.uncovered_gain);
            data.extend(istft_samples(&grid.with_values(masked).expect("same layout")));
        }
        Ok(self.push(Tensor { shape: [1, s, n], data }, Op::MaskIstft { mask, target }))
    }

    /// Reverse pass seeded with `d loss / d output`.
    pub fn backward(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        if seed.len() != self.value(output).len() {
            return Err(ToyError::Shape(format!(
                "seed gradient has {} values, output has {}",
                seed.len(),
                self.value(output).len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.to_vec());
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients(grads))
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if matches!(self.nodes[v.0].op, Op::Constant) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Conv1d { x, w, b, g: geom } => {
                let [bn, cin, l] = self.shape(*x);
                let [cout, _, k] = self.shape(*w);
                let lout = node.value.shape[2];
                let g2 = to_channel_major(g, [bn, cout, lout]);
                let n = bn * lout;
                acc(*b, &mut |db| {
                    for (d, row) in db.iter_mut().zip(g2.chunks_exact(n)) {
                        *d += row.iter().sum::<f64>();
                    }
                });
                acc(*w, &mut |dw| {
                    let col = im2col(&self.value(*x).data, [bn, cin, l], k, *geom, lout);
                    gemm([cout, n, cin * k], &g2, false, &col, true, dw, 1.0);
                });
                acc(*x, &mut |dx| {
                    let mut dcol = vec![0.0; cin * k * n];
                    gemm([cin * k, cout, n], &self.value(*w).data, true, &g2, false, &mut dcol, 0.0);
                    col2im(&dcol, [bn, cin, l], k, *geom, lout, dx);
                });
            }
            Op::ConvTranspose1d { x, w, b, g: geom } => {
                let [bn, cin, l] = self.shape(*x);
                let [_, cout, k] = self.shape(*w);
                let lout = node.value.shape[2];
                acc(*b, &mut |db| {
                    for (r, row) in g.chunks_exact(lout).enumerate() {
                        db[r % cout] += row.iter().sum::<f64>();
                    }
                });
                let gcol = im2col(g, [bn, cout, lout], k, *geom, l);
                let n = bn * l;
                acc(*w, &mut |dw| {
                    let xm = to_channel_major(&self.value(*x).data, [bn, cin, l]);
                    gemm([cin, n, cout * k], &xm, false, &gcol, true, dw, 1.0);
                });
                acc(*x, &mut |dx| {
                    let mut dxm = vec![0.0; cin * n];
                    gemm([cin, cout * k, n], &self.value(*w).data, false, &gcol, false, &mut dxm, 0.0);
                    add_from_channel_major(&dxm, [bn, cin, l], dx);
                });
            }
            Op::Relu(x) => {
                let xv = &self.value(*x).data;
                acc(*x, &mut |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value.data;
                acc(*x, &mut |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(*v, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Concat(parts) => {
                let [bn, c, l] = node.value.shape;
                let mut offset = 0;
                for p in parts {
                    let pc = self.shape(*p)[1];
                    acc(*p, &mut |d| {
                        for bi in 0..bn {
                            let src = &g[(bi * c + offset) * l..][..pc * l];
                            for (di, gi) in d[bi * pc * l..][..pc * l].iter_mut().zip(src) {
                                *di += gi;
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::Linear { x, w, b } => {
                let inp = self.shape(*x)[2];
                let out = node.value.shape[2];
                let rows = g.len() / out;
                acc(*b, &mut |db| {
                    for gr in g.chunks_exact(out) {
                        for (d, gi) in db.iter_mut().zip(gr) {
                            *d += gi;
                        }
                    }
                });
                acc(*w, &mut |dw| gemm([out, rows, inp], g, true, &self.value(*x).data, false, dw, 1.0));
                acc(*x, &mut |dx| gemm([rows, out, inp], g, false, &self.value(*w).data, false, dx, 1.0));
            }
            Op::Reshape(x) => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
            }
            Op::MaskIstft { mask, target } => {
                let [t, s, k] = self.shape(*mask);
                let grid = &target.grid;
                let n = grid.signal_len();
                let bins = grid.bins();
                acc(*mask, &mut |dm| {
                    for src in 0..s {
                        let up = &g[src * n..(src + 1) * n];
                        let dz = istft_adjoint(grid, up).expect("upstream matches grid length");
                        for f in 0..t {
                            for kk in 0..k {
                                let x = grid.values()[f * bins + kk];
                                let gz = dz[f * bins + kk];
                                dm[(f * s + src) * k + kk] += gz.re * x.re + gz.im * x.im;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn apply_mask(grid: &ComplexGrid, mask: &[f64], [t, s, k]: [usize; 3], src: usize, uncovered: f64) -> Vec<Complex64> {
    let bins = grid.bins();
    let mut out = grid.values().to_vec();
    for f in 0..t {
        for b in 0..bins {
            let gain = if b < k { mask[(f * s + src) * k + b] } else { uncovered };
            out[f * bins + b] *= gain;
        }
    }
    out
}
