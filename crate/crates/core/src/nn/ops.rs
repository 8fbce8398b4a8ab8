//! Built-in differentiable operations.

use super::tape::{Grads, Op, Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

/// `c = a * b + beta * c` on strided row/column-addressed buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn check_same(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

fn rank3(tape: &Tape, x: Var, what: &str) -> Result<(usize, usize, usize)> {
    match *tape.shape(x) {
        [a, b, c] => Ok((a, b, c)),
        ref s => Err(Error::Shape(format!("{what} expects a rank-3 input, got {s:?}"))),
    }
}

struct AddOp(Var, Var);
impl Op for AddOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        for v in [self.0, self.1] {
            if grads.wants(v) {
                add_into(grads.slot(v), g);
            }
        }
    }
}

struct MulOp(Var, Var);
impl Op for MulOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        for (v, other) in [(self.0, self.1), (self.1, self.0)] {
            if grads.wants(v) {
                let o = grads.value(other).data();
                let s = grads.slot(v);
                for i in 0..g.len() {
                    s[i] += g[i] * o[i];
                }
            }
        }
    }
}

struct ScaleOp(Var, f64);
impl Op for ScaleOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let s = grads.slot(self.0);
        s.iter_mut().zip(g).for_each(|(d, g)| *d += self.1 * g);
    }
}

struct SumOp(Var, f64);
impl Op for SumOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let gv = g[0] * self.1;
        grads.slot(self.0).iter_mut().for_each(|d| *d += gv);
    }
}

struct ReluOp(Var);
impl Op for ReluOp {
    fn backward(&self, out: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let s = grads.slot(self.0);
        for ((d, &o), &g) in s.iter_mut().zip(out.data()).zip(g) {
            if o > 0.0 {
                *d += g;
            }
        }
    }
}

struct SigmoidOp(Var);
impl Op for SigmoidOp {
    fn backward(&self, out: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let s = grads.slot(self.0);
        for ((d, &o), &g) in s.iter_mut().zip(out.data()).zip(g) {
            *d += g * o * (1.0 - o);
        }
    }
}

struct PassOp(Var);
impl Op for PassOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        add_into(grads.slot(self.0), g);
    }
}

struct Transpose12Op {
    x: Var,
    dims: (usize, usize, usize),
}
impl Op for Transpose12Op {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let (n, a, b) = self.dims;
        let s = grads.slot(self.x);
        for i in 0..n {
            for p in 0..a {
                for q in 0..b {
                    s[(i * a + p) * b + q] += g[(i * b + q) * a + p];
                }
            }
        }
    }
}

struct StackOp {
    parts: Vec<Var>,
    rows: usize,
    width: usize,
}
impl Op for StackOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let count = self.parts.len();
        for (j, &part) in self.parts.iter().enumerate() {
            if !grads.wants(part) {
                continue;
            }
            let s = grads.slot(part);
            for r in 0..self.rows {
                let src = &g[(r * count + j) * self.width..][..self.width];
                add_into(&mut s[r * self.width..][..self.width], src);
            }
        }
    }
}

struct LinearOp {
    x: Var,
    w: Var,
    b: Option<Var>,
    rows: usize,
    inp: usize,
    out: usize,
}
impl Op for LinearOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let (r, i, o) = (self.rows, self.inp, self.out);
        if grads.wants(self.x) {
            let w = grads.value(self.w).data();
            gemm(r, o, i, g, (o, 1), w, (i, 1), 1.0, grads.slot(self.x), (i, 1));
        }
        if grads.wants(self.w) {
            let x = grads.value(self.x).data();
            gemm(o, r, i, g, (1, o), x, (i, 1), 1.0, grads.slot(self.w), (i, 1));
        }
        if let Some(b) = self.b.filter(|&b| grads.wants(b)) {
            let s = grads.slot(b);
            for row in g.chunks_exact(o) {
                add_into(s, row);
            }
        }
    }
}

struct Conv1dOp {
    x: Var,
    w: Var,
    b: Var,
    batch: usize,
    c_in: usize,
    c_out: usize,
    width: usize,
    len: usize,
    /// im2col buffers, `batch x (c_in * width) x len`.
    cols: Vec<f64>,
}

fn im2col(x: &[f64], c_in: usize, width: usize, len: usize, cols: &mut [f64]) {
    let pad = width / 2;
    for c in 0..c_in {
        for t in 0..width {
            let row = &mut cols[(c * width + t) * len..][..len];
            for (l, dst) in row.iter_mut().enumerate() {
                let src = l + t;
                *dst = if src >= pad && src - pad < len { x[c * len + src - pad] } else { 0.0 };
            }
        }
    }
}

impl Op for Conv1dOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let (ci, co, wd, len) = (self.c_in, self.c_out, self.width, self.len);
        let kk = ci * wd;
        let pad = wd / 2;
        if grads.wants(self.w) {
            let s = grads.slot(self.w);
            for n in 0..self.batch {
                let gy = &g[n * co * len..][..co * len];
                let cols = &self.cols[n * kk * len..][..kk * len];
                gemm(co, len, kk, gy, (len, 1), cols, (1, len), 1.0, s, (kk, 1));
            }
        }
        if grads.wants(self.b) {
            let s = grads.slot(self.b);
            for n in 0..self.batch {
                for c in 0..co {
                    s[c] += g[(n * co + c) * len..][..len].iter().sum::<f64>();
                }
            }
        }
        if grads.wants(self.x) {
            let w = grads.value(self.w).data();
            let mut dcols = vec![0.0; kk * len];
            let s = grads.slot(self.x);
            for n in 0..self.batch {
                let gy = &g[n * co * len..][..co * len];
                gemm(kk, co, len, w, (1, kk), gy, (len, 1), 0.0, &mut dcols, (len, 1));
                let dx = &mut s[n * ci * len..][..ci * len];
                for c in 0..ci {
                    for t in 0..wd {
                        let row = &dcols[(c * wd + t) * len..][..len];
                        for (l, &v) in row.iter().enumerate() {
                            let src = l + t;
                            if src >= pad && src - pad < len {
                                dx[c * len + src - pad] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Normalisation over groups of a row-major buffer, shared by batch and
/// layer norm. `xhat` and `inv_std` are cached from the forward pass.
struct NormOp {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// `true`: statistics per feature over the batch axis of an `[N, F]`
    /// input. `false`: statistics per row over the last axis.
    over_batch: bool,
    rows: usize,
    features: usize,
    /// Statistics are constants (evaluation-mode batch norm).
    frozen: bool,
}

impl NormOp {
    fn idx(&self, group: usize, member: usize) -> usize {
        if self.over_batch {
            member * self.features + group
        } else {
            group * self.features + member
        }
    }

    fn feature_of(&self, group: usize, member: usize) -> usize {
        if self.over_batch {
            group
        } else {
            member
        }
    }
}

impl Op for NormOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let (groups, members) =
            if self.over_batch { (self.features, self.rows) } else { (self.rows, self.features) };
        if grads.wants(self.gamma) {
            let s = grads.slot(self.gamma);
            for (i, (&gy, &xh)) in g.iter().zip(&self.xhat).enumerate() {
                s[i % self.features] += gy * xh;
            }
        }
        if grads.wants(self.beta) {
            let s = grads.slot(self.beta);
            for (i, &gy) in g.iter().enumerate() {
                s[i % self.features] += gy;
            }
        }
        if !grads.wants(self.x) {
            return;
        }
        let gamma = grads.value(self.gamma).data();
        let s = grads.slot(self.x);
        let m = members as f64;
        for grp in 0..groups {
            let inv = self.inv_std[grp];
            if self.frozen {
                for mem in 0..members {
                    let i = self.idx(grp, mem);
                    s[i] += g[i] * gamma[self.feature_of(grp, mem)] * inv;
                }
                continue;
            }
            let (mut sum, mut dot) = (0.0, 0.0);
            for mem in 0..members {
                let i = self.idx(grp, mem);
                let dxh = g[i] * gamma[self.feature_of(grp, mem)];
                sum += dxh;
                dot += dxh * self.xhat[i];
            }
            for mem in 0..members {
                let i = self.idx(grp, mem);
                let dxh = g[i] * gamma[self.feature_of(grp, mem)];
                s[i] += inv / m * (m * dxh - sum - self.xhat[i] * dot);
            }
        }
    }
}

struct AttentionOp {
    q: Var,
    k: Var,
    v: Var,
    dims: (usize, usize, usize),
    heads: usize,
    /// Softmax weights, `batch x heads x T x T`.
    probs: Vec<f64>,
}

impl Op for AttentionOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let (n, t, d) = self.dims;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = grads.value(self.q).data();
        let k = grads.value(self.k).data();
        let v = grads.value(self.v).data();
        let mut dq = vec![0.0; q.len()];
        let mut dk = vec![0.0; k.len()];
        let mut dv = vec![0.0; v.len()];
        let mut dp = vec![0.0; t];
        for b in 0..n {
            for h in 0..self.heads {
                let probs = &self.probs[(b * self.heads + h) * t * t..][..t * t];
                let at = |i: usize, c: usize| (b * t + i) * d + h * dh + c;
                for i in 0..t {
                    let p_row = &probs[i * t..][..t];
                    for j in 0..t {
                        let mut acc = 0.0;
                        for c in 0..dh {
                            acc += g[at(i, c)] * v[at(j, c)];
                            dv[at(j, c)] += p_row[j] * g[at(i, c)];
                        }
                        dp[j] = acc;
                    }
                    let inner: f64 = p_row.iter().zip(&dp).map(|(p, d)| p * d).sum();
                    for j in 0..t {
                        let ds = p_row[j] * (dp[j] - inner) * scale;
                        for c in 0..dh {
                            dq[at(i, c)] += ds * k[at(j, c)];
                            dk[at(j, c)] += ds * q[at(i, c)];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(self.q, dq), (self.k, dk), (self.v, dv)] {
            if grads.wants(var) {
                add_into(grads.slot(var), &buf);
            }
        }
    }
}

struct MeanLastOp {
    x: Var,
    len: usize,
}
impl Op for MeanLastOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let inv = 1.0 / self.len as f64;
        let s = grads.slot(self.x);
        for (row, &gv) in s.chunks_exact_mut(self.len).zip(g) {
            row.iter_mut().for_each(|d| *d += gv * inv);
        }
    }
}

struct ScaleChannelsOp {
    x: Var,
    scale: Var,
    len: usize,
}
impl Op for ScaleChannelsOp {
    fn backward(&self, _: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
        let len = self.len;
        if grads.wants(self.x) {
            let sc = grads.value(self.scale).data();
            let s = grads.slot(self.x);
            for (i, &m) in sc.iter().enumerate() {
                for l in 0..len {
                    s[i * len + l] += g[i * len + l] * m;
                }
            }
        }
        if grads.wants(self.scale) {
            let x = grads.value(self.x).data();
            let s = grads.slot(self.scale);
            for (i, d) in s.iter_mut().enumerate() {
                *d += (0..len).map(|l| g[i * len + l] * x[i * len + l]).sum::<f64>();
            }
        }
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self, a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y);
        let out = Tensor::new(self.shape(a).to_vec(), data.collect())?;
        Ok(self.push(out, &[a, b], AddOp(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same(self, a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y);
        let out = Tensor::new(self.shape(a).to_vec(), data.collect())?;
        Ok(self.push(out, &[a, b], MulOp(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(out, &[a], ScaleOp(a, factor))
    }

    /// Sum of all elements, shape `()`.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), &[a], SumOp(a, 1.0))
    }

    /// Mean of all elements, shape `()`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total / n), &[a], SumOp(a, 1.0 / n))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(out, &[a], ReluOp(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(out, &[a], SigmoidOp(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, &[a], PassOp(a)))
    }

    /// `[N, A, B] -> [N, B, A]`.
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        let (n, a, b) = rank3(self, x, "transpose12")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for i in 0..n {
            for p in 0..a {
                for q in 0..b {
                    data[(i * b + q) * a + p] = src[(i * a + p) * b + q];
                }
            }
        }
        let out = Tensor::new(vec![n, b, a], data)?;
        Ok(self.push(out, &[x], Transpose12Op { x, dims: (n, a, b) }))
    }

    /// Stacks `[N, M]` inputs into `[N, parts, M]`.
    pub fn stack1(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("stack1 of nothing".into()))?;
        let [rows, width] = *self.shape(first) else {
            return Err(Error::Shape(format!("stack1 expects [N, M], got {:?}", self.shape(first))));
        };
        let mut data = vec![0.0; rows * parts.len() * width];
        for (j, &p) in parts.iter().enumerate() {
            if self.shape(p) != [rows, width] {
                return Err(Error::Shape(format!("stack1 part {j} has shape {:?}", self.shape(p))));
            }
            let src = self.value(p).data();
            for r in 0..rows {
                data[(r * parts.len() + j) * width..][..width]
                    .copy_from_slice(&src[r * width..][..width]);
            }
        }
        let out = Tensor::new(vec![rows, parts.len(), width], data)?;
        Ok(self.push(out, parts, StackOp { parts: parts.to_vec(), rows, width }))
    }

    /// `y = x W^T + b` over the last axis; `W` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let &[o, i] = self.shape(w) else {
            return Err(Error::Shape(format!("linear weight must be rank 2, got {:?}", self.shape(w))));
        };
        let xs = self.shape(x).to_vec();
        if xs.last() != Some(&i) {
            return Err(Error::Shape(format!("linear expects last dim {i}, got input {xs:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::Shape(format!("linear bias must be [{o}], got {:?}", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / i.max(1);
        let mut data = vec![0.0; rows * o];
        if let Some(b) = b {
            let bias = self.value(b).data();
            data.chunks_exact_mut(o).for_each(|row| row.copy_from_slice(bias));
        }
        gemm(
            rows,
            i,
            o,
            self.value(x).data(),
            (i, 1),
            self.value(w).data(),
            (1, i),
            if b.is_some() { 1.0 } else { 0.0 },
            &mut data,
            (o, 1),
        );
        let mut shape = xs;
        *shape.last_mut().expect("nonempty") = o;
        let out = Tensor::new(shape, data)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, &inputs, LinearOp { x, w, b, rows, inp: i, out: o }))
    }

    /// Same-padded 1-D cross-correlation. `x` is `[N, C_in, L]`, `w` is
    /// `[C_out, C_in, W]` with odd `W`, `b` is `[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, c_in, len) = rank3(self, x, "conv1d")?;
        let (c_out, wc_in, width) = rank3(self, w, "conv1d weight")?;
        if wc_in != c_in {
            return Err(Error::Shape(format!("conv1d input has {c_in} channels, kernel expects {wc_in}")));
        }
        if width % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel width must be odd, got {width}")));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::Shape(format!("conv1d bias must be [{c_out}]")));
        }
        let kk = c_in * width;
        let mut cols = vec![0.0; batch * kk * len];
        let mut data = vec![0.0; batch * c_out * len];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        for n in 0..batch {
            let col = &mut cols[n * kk * len..][..kk * len];
            im2col(&xv[n * c_in * len..][..c_in * len], c_in, width, len, col);
            let y = &mut data[n * c_out * len..][..c_out * len];
            for (c, row) in y.chunks_exact_mut(len).enumerate() {
                row.iter_mut().for_each(|v| *v = bv[c]);
            }
            gemm(c_out, kk, len, wv, (kk, 1), col, (len, 1), 1.0, y, (len, 1));
        }
        let out = Tensor::new(vec![batch, c_out, len], data)?;
        let op = Conv1dOp { x, w, b, batch, c_in, c_out, width, len, cols };
        Ok(self.push(out, &[x, w, b], op))
    }

    /// Training-mode batch norm over the batch axis of `[N, F]`. Returns the
    /// output with the batch mean and the unbiased batch variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let &[rows, features] = self.shape(x) else {
            return Err(Error::Shape(format!("batch norm expects [N, F], got {:?}", self.shape(x))));
        };
        if rows < 2 {
            return Err(Error::Config("training-mode batch norm needs a batch of at least 2".into()));
        }
        self.check_affine(gamma, beta, features)?;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; features];
        let mut var = vec![0.0; features];
        for row in xv.chunks_exact(features) {
            add_into(&mut mean, row);
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        for row in xv.chunks_exact(features) {
            for f in 0..features {
                var[f] += (row[f] - mean[f]).powi(2);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / rows as f64 + eps).sqrt()).collect();
        let unbiased: Vec<f64> = var.iter().map(|v| v / (rows - 1) as f64).collect();
        let out = self.normalize(x, gamma, beta, &mean, &inv_std, true, rows, features, false);
        Ok((out, mean, unbiased))
    }

    /// Evaluation-mode batch norm using fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let &[rows, features] = self.shape(x) else {
            return Err(Error::Shape(format!("batch norm expects [N, F], got {:?}", self.shape(x))));
        };
        self.check_affine(gamma, beta, features)?;
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        Ok(self.normalize(x, gamma, beta, running_mean, &inv_std, true, rows, features, true))
    }

    /// Layer norm over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let features = *self.shape(x).last().ok_or_else(|| Error::Shape("layer norm of scalar".into()))?;
        self.check_affine(gamma, beta, features)?;
        let rows = self.value(x).numel() / features;
        let mut mean = Vec::with_capacity(rows);
        let mut inv_std = Vec::with_capacity(rows);
        for row in self.value(x).data().chunks_exact(features) {
            let m = row.iter().sum::<f64>() / features as f64;
            let v = row.iter().map(|r| (r - m).powi(2)).sum::<f64>() / features as f64;
            mean.push(m);
            inv_std.push(1.0 / (v + eps).sqrt());
        }
        Ok(self.normalize(x, gamma, beta, &mean, &inv_std, false, rows, features, false))
    }

    fn check_affine(&self, gamma: Var, beta: Var, features: usize) -> Result<()> {
        if self.shape(gamma) != [features] || self.shape(beta) != [features] {
            return Err(Error::Shape(format!("norm affine parameters must be [{features}]")));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        over_batch: bool,
        rows: usize,
        features: usize,
        frozen: bool,
    ) -> Var {
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut data = vec![0.0; xv.len()];
        for r in 0..rows {
            for f in 0..features {
                let i = r * features + f;
                let grp = if over_batch { f } else { r };
                xhat[i] = (xv[i] - mean[grp]) * inv_std[grp];
                data[i] = gv[f] * xhat[i] + bv[f];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let op = NormOp {
            x,
            gamma,
            beta,
            xhat,
            inv_std: inv_std.to_vec(),
            over_batch,
            rows,
            features,
            frozen,
        };
        self.push(out, &[x, gamma, beta], op)
    }

    /// Multi-head scaled dot-product attention on `[N, T, d]` projections,
    /// heads taking contiguous `d / heads` slices of the model dimension.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (n, t, d) = rank3(self, q, "attention")?;
        check_same(self, q, k, "attention keys")?;
        check_same(self, q, v, "attention values")?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("model dim {d} is not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; n * heads * t * t];
        let mut data = vec![0.0; n * t * d];
        for b in 0..n {
            for h in 0..heads {
                let at = |i: usize, c: usize| (b * t + i) * d + h * dh + c;
                let p = &mut probs[(b * heads + h) * t * t..][..t * t];
                for i in 0..t {
                    let row = &mut p[i * t..][..t];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = (0..dh).map(|c| qv[at(i, c)] * kv[at(j, c)]).sum::<f64>() * scale;
                    }
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    row.iter_mut().for_each(|s| *s /= z);
                    for c in 0..dh {
                        data[at(i, c)] = (0..t).map(|j| row[j] * vv[at(j, c)]).sum();
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, t, d], data)?;
        Ok(self.push(out, &[q, k, v], AttentionOp { q, k, v, dims: (n, t, d), heads, probs }))
    }

    /// `[N, C, L] -> [N, C]` average over the last axis.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let (n, c, len) = rank3(self, x, "mean_last")?;
        let data = self.value(x).data().chunks_exact(len).map(|r| r.iter().sum::<f64>() / len as f64);
        let out = Tensor::new(vec![n, c], data.collect())?;
        Ok(self.push(out, &[x], MeanLastOp { x, len }))
    }

    /// Multiplies channel `c` of sample `n` in `[N, C, L]` by `scale[n, c]`.
    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (n, c, len) = rank3(self, x, "scale_channels")?;
        if self.shape(scale) != [n, c] {
            return Err(Error::Shape(format!("channel scale must be [{n}, {c}]")));
        }
        let sc = self.value(scale).data();
        let mut data = self.value(x).data().to_vec();
        for (row, &m) in data.chunks_exact_mut(len).zip(sc) {
            row.iter_mut().for_each(|v| *v *= m);
        }
        let out = Tensor::new(vec![n, c, len], data)?;
        Ok(self.push(out, &[x, scale], ScaleChannelsOp { x, scale, len }))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
