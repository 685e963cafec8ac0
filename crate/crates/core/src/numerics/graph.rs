//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every op appends a node to the graph; node ids are assigned in creation
//! order, so reverse id order is a valid topological order for the backward
//! pass. Gradients of a node consumed by several ops accumulate additively.

use super::tensor::{gemm, split_axis, MatRef, Scalar, Tensor};
use super::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Which key positions a query position may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnMask {
    None,
    /// Query `i` sees keys `j <= i`.
    Causal,
    /// Positions `< prefix` attend to the whole prefix; later positions are causal.
    PrefixCausal(usize),
    /// Query `i` sees keys with `|i - j| <= radius`.
    Band(usize),
}

impl AttnMask {
    #[inline]
    pub fn allows(self, i: usize, j: usize) -> bool {
        match self {
            AttnMask::None => true,
            AttnMask::Causal => j <= i,
            AttnMask::PrefixCausal(p) => j < p || j <= i,
            AttnMask::Band(r) => i.abs_diff(j) <= r,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum UnKind {
    Relu,
    LeakyRelu(f64),
    Exp,
    Log,
    Sqrt,
    Abs,
    Square,
    Tanh,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Binary { kind: BinKind, a: Var, b: Var },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    Unary { kind: UnKind, x: Var },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, idx: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, heads: usize, mask: AttnMask, probs: Vec<T> },
    Conv1d { x: Var, w: Var, cols: Vec<T> },
    Conv2d { x: Var, w: Var, geom: Conv2dGeom, cols: Vec<T> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    Transpose { x: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    SumAxis { x: Var, axis: usize },
    Pick { x: Var, idx: Vec<usize> },
}

#[derive(Clone, Copy, Debug)]
struct Conv2dGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. One graph is driven by a single thread; build a
/// fresh graph per sample and per step.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (0 along broadcast dims).
fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let mut strides = vec![0; r];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + r - shape.len();
        strides[oi] = if shape[i] == 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

fn for_each_bcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let r = out.len();
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; r];
    let (mut ia, mut ib) = (0usize, 0usize);
    let last = out[r - 1];
    let (la, lb) = (sa[r - 1], sb[r - 1]);
    let mut o = 0;
    loop {
        for j in 0..last {
            f(o + j, ia + j * la, ib + j * lb);
        }
        o += last;
        if o >= n {
            break;
        }
        // advance odometer over the leading dims
        let mut d = r - 1;
        loop {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), check_finite: cfg!(debug_assertions) }
    }

    /// Toggle the per-op non-finite check.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Adds an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `x` cut off from the graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.constant(v)
    }

    /// Probabilities saved by an attention node, laid out `[heads, tq, tk]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    // ---- linear algebra -------------------------------------------------

    /// `(m×k)·(k×n) → (m×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{:?} · {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            &mut out,
            n,
            false,
        );
        let rg = self.needs(&[a, b]);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    // ---- element-wise ---------------------------------------------------

    fn binary(&mut self, kind: BinKind, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape =
            broadcast_shape(&sa, &sb).ok_or_else(|| shape_err(name, format!("{:?} vs {:?}", sa, sb)))?;
        let n: usize = out_shape.iter().product();
        let mut out = vec![T::zero(); n];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            let f = |x: T, y: T| match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
                BinKind::Div => x / y,
            };
            if sa == sb {
                for (o, (&x, &y)) in out.iter_mut().zip(da.iter().zip(db)) {
                    *o = f(x, y);
                }
            } else {
                let st_a = bcast_strides(&sa, &out_shape);
                let st_b = bcast_strides(&sb, &out_shape);
                for_each_bcast(&out_shape, &st_a, &st_b, |o, ia, ib| out[o] = f(da[ia], db[ib]));
            }
        }
        let rg = self.needs(&[a, b]);
        self.push(Tensor::new(&out_shape, out)?, Op::Binary { kind, a, b }, rg, name)
    }

    /// Element-wise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b, "sub")
    }

    /// Element-wise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, a, b, "div")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = Tensor::new(self.shape(x), self.value(x).data().iter().map(|&v| v * c).collect())?;
        let rg = self.needs(&[x]);
        self.push(out, Op::Scale { x, c }, rg, "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let out = Tensor::new(self.shape(x), self.value(x).data().iter().map(|&v| v + c).collect())?;
        let rg = self.needs(&[x]);
        self.push(out, Op::AddScalar { x }, rg, "add_scalar")
    }

    fn unary(&mut self, kind: UnKind, x: Var, name: &'static str) -> Result<Var> {
        let alpha = |a: f64| T::lit(a);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| match kind {
                UnKind::Relu => v.max(T::zero()),
                UnKind::LeakyRelu(a) => {
                    if v > T::zero() {
                        v
                    } else {
                        v * alpha(a)
                    }
                }
                UnKind::Exp => v.exp(),
                UnKind::Log => v.ln(),
                UnKind::Sqrt => v.sqrt(),
                UnKind::Abs => v.abs(),
                UnKind::Square => v * v,
                UnKind::Tanh => v.tanh(),
            })
            .collect();
        let out = Tensor::new(self.shape(x), data)?;
        let rg = self.needs(&[x]);
        self.push(out, Op::Unary { kind, x }, rg, name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Relu, x, "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(UnKind::LeakyRelu(slope), x, "leaky_relu")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Exp, x, "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Log, x, "log")
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Sqrt, x, "sqrt")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Abs, x, "abs")
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Square, x, "square")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Tanh, x, "tanh")
    }

    // ---- normalisation ----------------------------------------------------

    fn check_axis(&self, x: Var, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(shape_err(op, format!("axis {} out of range for {:?}", axis, self.shape(x))));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "softmax")?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mx = (0..n).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for j in 0..n {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    s += e;
                }
                for j in 0..n {
                    out[at(j)] = out[at(j)] / s;
                }
            }
        }
        let rg = self.needs(&[x]);
        self.push(Tensor::new(&shape, out)?, Op::Softmax { x, axis }, rg, "softmax")
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "log_softmax")?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mx = (0..n).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let s: T = (0..n).map(|j| (src[at(j)] - mx).exp()).sum();
                let lse = mx + s.ln();
                for j in 0..n {
                    out[at(j)] = src[at(j)] - lse;
                }
            }
        }
        let rg = self.needs(&[x]);
        self.push(Tensor::new(&shape, out)?, Op::LogSoftmax { x, axis }, rg, "log_softmax")
    }

    /// Normalises over the last axis, then applies `gamma`/`beta` (shape `[C]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| shape_err("layer_norm", "scalar input".into()))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", shape, self.shape(gamma), self.shape(beta)),
            ));
        }
        let rows = self.value(x).numel() / c.max(1);
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        let cn = T::from_usize(c).unwrap();
        for r in 0..rows {
            let row = &src[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
            let rs = T::one() / (var + T::lit(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.needs(&[x, gamma, beta]);
        self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
            rg,
            "layer_norm",
        )
    }

    // ---- lookup / attention -------------------------------------------

    /// Rows of `table` (`[V, C]`) at `idx` → `[len, C]`.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(shape_err("embedding", format!("table {:?}", ts)));
        }
        let (v, c) = (ts[0], ts[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(TensorError::Index { op: "embedding", index: bad, bound: v });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.needs(&[table]);
        self.push(
            Tensor::new(&[idx.len(), c], out)?,
            Op::Embedding { table, idx: idx.to_vec() },
            rg,
            "embedding",
        )
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q: [Tq, H·dk]`, `k: [Tk, H·dk]`, `v: [Tk, H·dv]` → `[Tq, H·dv]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: AttnMask) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        let bad = sq.len() != 2
            || sk.len() != 2
            || sv.len() != 2
            || heads == 0
            || sq[1] != sk[1]
            || sk[0] != sv[0]
            || sq[1] % heads != 0
            || sv[1] % heads != 0
            || sk[0] == 0;
        if bad {
            return Err(shape_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?}, heads {}", sq, sk, sv, heads),
            ));
        }
        let (tq, tk, dq, dv) = (sq[0], sk[0], sq[1], sv[1]);
        let (hk, hv) = (dq / heads, dv / heads);
        let scale = T::one() / T::from_usize(hk).unwrap().sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * tq * tk];
        let mut out = vec![T::zero(); tq * dv];
        for h in 0..heads {
            let p = &mut probs[h * tq * tk..(h + 1) * tq * tk];
            let qh = MatRef { data: &qd[h * hk..], rows: tq, cols: hk, row_stride: dq, col_stride: 1 };
            let kh = MatRef { data: &kd[h * hk..], rows: tk, cols: hk, row_stride: dq, col_stride: 1 };
            gemm(qh, kh.t(), p, tk, false);
            for i in 0..tq {
                let row = &mut p[i * tk..(i + 1) * tk];
                let mut mx = T::neg_infinity();
                for (j, s) in row.iter_mut().enumerate() {
                    if mask.allows(i, j) {
                        *s = *s * scale;
                        mx = mx.max(*s);
                    }
                }
                if mx == T::neg_infinity() {
                    return Err(shape_err("attention", format!("query {} has no visible keys", i)));
                }
                let mut sum = T::zero();
                for (j, s) in row.iter_mut().enumerate() {
                    if mask.allows(i, j) {
                        *s = (*s - mx).exp();
                        sum += *s;
                    } else {
                        *s = T::zero();
                    }
                }
                for s in row.iter_mut() {
                    *s = *s / sum;
                }
            }
            let vh = MatRef { data: &vd[h * hv..], rows: tk, cols: hv, row_stride: dv, col_stride: 1 };
            gemm(MatRef::new(p, tq, tk), vh, &mut out[h * hv..], dv, false);
        }
        let rg = self.needs(&[q, k, v]);
        self.push(
            Tensor::new(&[tq, dv], out)?,
            Op::Attention { q, k, v, heads, mask, probs },
            rg,
            "attention",
        )
    }

    // ---- convolution ----------------------------------------------------

    /// Stride-1 "same" 1-D convolution. `x: [T, Cin]`, `w: [Cout, Cin, K]` → `[T, Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sx[1] != sw[1] || sw[2] == 0 {
            return Err(shape_err("conv1d", format!("x {:?}, w {:?}", sx, sw)));
        }
        let (t, cin, cout, kk) = (sx[0], sx[1], sw[0], sw[2]);
        let pad = (kk - 1) / 2;
        let ck = cin * kk;
        let xd = self.value(x).data();
        let mut cols = vec![T::zero(); t * ck];
        for ti in 0..t {
            for k in 0..kk {
                let src = ti as isize + k as isize - pad as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let src = src as usize;
                for ci in 0..cin {
                    cols[ti * ck + ci * kk + k] = xd[src * cin + ci];
                }
            }
        }
        let mut out = vec![T::zero(); t * cout];
        gemm(
            MatRef::new(&cols, t, ck),
            MatRef::new(self.value(w).data(), cout, ck).t(),
            &mut out,
            cout,
            false,
        );
        let rg = self.needs(&[x, w]);
        let cols = if rg { cols } else { Vec::new() };
        self.push(Tensor::new(&[t, cout], out)?, Op::Conv1d { x, w, cols }, rg, "conv1d")
    }

    /// 2-D convolution with zero padding. `x: [Cin, H, W]`, `w: [Cout, Cin, KH, KW]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sx[0] != sw[1] || stride == 0 {
            return Err(shape_err("conv2d", format!("x {:?}, w {:?}, stride {}", sx, sw, stride)));
        }
        let (cin, h, wd) = (sx[0], sx[1], sx[2]);
        let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(shape_err("conv2d", format!("input {:?} smaller than kernel {:?}", sx, sw)));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let geom = Conv2dGeom { cin, h, w: wd, kh, kw, stride, pad, oh, ow };
        let cols = im2col_2d(self.value(x).data(), &geom);
        let ckk = cin * kh * kw;
        let mut out = vec![T::zero(); cout * oh * ow];
        gemm(
            MatRef::new(self.value(w).data(), cout, ckk),
            MatRef::new(&cols, ckk, oh * ow),
            &mut out,
            oh * ow,
            false,
        );
        let rg = self.needs(&[x, w]);
        let cols = if rg { cols } else { Vec::new() };
        self.push(Tensor::new(&[cout, oh, ow], out)?, Op::Conv2d { x, w, geom, cols }, rg, "conv2d")
    }

    // ---- shape ops ------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {} for {:?}", axis, base)));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(shape_err("concat", format!("{:?} vs {:?} along axis {}", base, s, axis)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * n..(o + 1) * n]);
            }
        }
        let rg = self.needs(parts);
        self.push(Tensor::new(&shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, rg, "concat")
    }

    /// Range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(shape_err("slice", format!("[{}, {}) on axis {} of {:?}", start, end, axis, shape)));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let rg = self.needs(&[x]);
        self.push(Tensor::new(&out_shape, out)?, Op::Slice { x, axis, start }, rg, "slice")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        self.push(v, Op::Reshape { x }, rg, "reshape")
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("{:?}", s)));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.needs(&[x]);
        self.push(Tensor::new(&[c, r], out)?, Op::Transpose { x }, rg, "transpose")
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll { x }, rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s / T::from_usize(n).unwrap()), Op::MeanAll { x }, rg, "mean")
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "sum_axis")?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * n + j) * inner + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let rg = self.needs(&[x]);
        self.push(Tensor::new(&out_shape, out)?, Op::SumAxis { x, axis }, rg, "sum_axis")
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "mean_axis")?;
        let n = self.shape(x)[axis];
        let s = self.sum_axis(x, axis)?;
        self.scale(s, T::one() / T::from_usize(n.max(1)).unwrap())
    }

    /// `out[i] = x[i, idx[i]]` for `x: [N, K]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != idx.len() {
            return Err(shape_err("pick", format!("x {:?}, {} indices", s, idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[1]) {
            return Err(TensorError::Index { op: "pick", index: bad, bound: s[1] });
        }
        let src = self.value(x).data();
        let out: Vec<T> = idx.iter().enumerate().map(|(r, &i)| src[r * s[1] + i]).collect();
        let rg = self.needs(&[x]);
        self.push(Tensor::new(&[idx.len()], out)?, Op::Pick { x, idx: idx.to_vec() }, rg, "pick")
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads[id] = Some(g);
                continue;
            }
            self.backward_node(id, &g, &mut grads);
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn backward_node(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    gemm(MatRef::new(gd, m, n), MatRef::new(bd, k, n).t(), ga, k, true)
                });
                self.acc(grads, *b, |gb| {
                    gemm(MatRef::new(ad, m, k).t(), MatRef::new(gd, m, n), gb, n, true)
                });
            }
            Op::Binary { kind, a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let out_shape = node.value.shape();
                let st_a = bcast_strides(sa, out_shape);
                let st_b = bcast_strides(sb, out_shape);
                let kind = *kind;
                self.acc(grads, *a, |ga| {
                    for_each_bcast(out_shape, &st_a, &st_b, |o, ia, ib| {
                        ga[ia] += match kind {
                            BinKind::Add | BinKind::Sub => gd[o],
                            BinKind::Mul => gd[o] * bd[ib],
                            BinKind::Div => gd[o] / bd[ib],
                        }
                    })
                });
                self.acc(grads, *b, |gb| {
                    for_each_bcast(out_shape, &st_a, &st_b, |o, ia, ib| {
                        gb[ib] += match kind {
                            BinKind::Add => gd[o],
                            BinKind::Sub => -gd[o],
                            BinKind::Mul => gd[o] * ad[ia],
                            BinKind::Div => -gd[o] * ad[ia] / (bd[ib] * bd[ib]),
                        }
                    })
                });
            }
            Op::Scale { x, c } => self.acc(grads, *x, |gx| {
                for (a, &b) in gx.iter_mut().zip(gd) {
                    *a += b * *c;
                }
            }),
            Op::AddScalar { x } => self.acc(grads, *x, |gx| {
                for (a, &b) in gx.iter_mut().zip(gd) {
                    *a += b;
                }
            }),
            Op::Unary { kind, x } => {
                let xd = self.value(*x).data();
                let half = T::lit(0.5);
                let two = T::lit(2.0);
                self.acc(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        let d = match *kind {
                            UnKind::Relu => {
                                if xd[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            UnKind::LeakyRelu(a) => {
                                if xd[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::lit(a)
                                }
                            }
                            UnKind::Exp => y[i],
                            UnKind::Log => T::one() / xd[i],
                            UnKind::Sqrt => half / y[i],
                            UnKind::Abs => {
                                if xd[i] > T::zero() {
                                    T::one()
                                } else if xd[i] < T::zero() {
                                    -T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            UnKind::Square => two * xd[i],
                            UnKind::Tanh => T::one() - y[i] * y[i],
                        };
                        gx[i] += gd[i] * d;
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * n * inner + j * inner + i;
                            let dot: T = (0..n).map(|j| gd[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                gx[at(j)] += y[at(j)] * (gd[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * n * inner + j * inner + i;
                            let s: T = (0..n).map(|j| gd[at(j)]).sum();
                            for j in 0..n {
                                gx[at(j)] += gd[at(j)] - y[at(j)].exp() * s;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = self.shape(*gamma)[0];
                let rows = rstd.len();
                let gm = self.value(*gamma).data();
                self.acc(grads, *gamma, |gg| {
                    for r in 0..rows {
                        for j in 0..c {
                            gg[j] += gd[r * c + j] * xhat[r * c + j];
                        }
                    }
                });
                self.acc(grads, *beta, |gb| {
                    for r in 0..rows {
                        for j in 0..c {
                            gb[j] += gd[r * c + j];
                        }
                    }
                });
                let cn = T::from_usize(c).unwrap();
                self.acc(grads, *x, |gx| {
                    for r in 0..rows {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            let dh = gd[r * c + j] * gm[j];
                            m1 += dh;
                            m2 += dh * xhat[r * c + j];
                        }
                        m1 = m1 / cn;
                        m2 = m2 / cn;
                        for j in 0..c {
                            let dh = gd[r * c + j] * gm[j];
                            gx[r * c + j] += rstd[r] * (dh - m1 - xhat[r * c + j] * m2);
                        }
                    }
                });
            }
            Op::Embedding { table, idx } => {
                let c = self.shape(*table)[1];
                self.acc(grads, *table, |gt| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            gt[i * c + j] += gd[r * c + j];
                        }
                    }
                });
            }
            Op::Attention { q, k, v, heads, mask, probs } => {
                self.attention_backward(*q, *k, *v, *heads, *mask, probs, gd, grads)
            }
            Op::Conv1d { x, w, cols } => {
                let (t, cin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (cout, kk) = (self.shape(*w)[0], self.shape(*w)[2]);
                let ck = cin * kk;
                let pad = (kk - 1) / 2;
                self.acc(grads, *w, |gw| {
                    gemm(MatRef::new(gd, t, cout).t(), MatRef::new(cols, t, ck), gw, ck, true)
                });
                let wd = self.value(*w).data();
                self.acc(grads, *x, |gx| {
                    let mut dcols = vec![T::zero(); t * ck];
                    gemm(MatRef::new(gd, t, cout), MatRef::new(wd, cout, ck), &mut dcols, ck, false);
                    for ti in 0..t {
                        for k in 0..kk {
                            let src = ti as isize + k as isize - pad as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let src = src as usize;
                            for ci in 0..cin {
                                gx[src * cin + ci] += dcols[ti * ck + ci * kk + k];
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, w, geom, cols } => {
                let cout = self.shape(*w)[0];
                let ckk = geom.cin * geom.kh * geom.kw;
                let p = geom.oh * geom.ow;
                self.acc(grads, *w, |gw| {
                    gemm(MatRef::new(gd, cout, p), MatRef::new(cols, ckk, p).t(), gw, ckk, true)
                });
                let wd = self.value(*w).data();
                self.acc(grads, *x, |gx| {
                    let mut dcols = vec![T::zero(); ckk * p];
                    gemm(MatRef::new(wd, cout, ckk).t(), MatRef::new(gd, cout, p), &mut dcols, p, false);
                    col2im_2d(&dcols, geom, gx);
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut off = 0;
                for &p in parts {
                    let n = self.shape(p)[*axis];
                    self.acc(grads, p, |gp| {
                        for o in 0..outer {
                            let src = &gd[(o * total + off) * inner..(o * total + off + n) * inner];
                            for (a, &b) in gp[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    });
                    off += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let m = node.value.shape()[*axis];
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + m) * inner];
                        for (a, &b) in dst.iter_mut().zip(&gd[o * m * inner..(o + 1) * m * inner]) {
                            *a += b;
                        }
                    }
                });
            }
            Op::Reshape { x } => self.acc(grads, *x, |gx| {
                for (a, &b) in gx.iter_mut().zip(gd) {
                    *a += b;
                }
            }),
            Op::Transpose { x } => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.acc(grads, *x, |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += gd[j * r + i];
                        }
                    }
                });
            }
            Op::SumAll { x } => self.acc(grads, *x, |gx| {
                for a in gx.iter_mut() {
                    *a += gd[0];
                }
            }),
            Op::MeanAll { x } => {
                let n = T::from_usize(self.value(*x).numel()).unwrap();
                self.acc(grads, *x, |gx| {
                    for a in gx.iter_mut() {
                        *a += gd[0] / n;
                    }
                })
            }
            Op::SumAxis { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        for j in 0..n {
                            for i in 0..inner {
                                gx[(o * n + j) * inner + i] += gd[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::Pick { x, idx } => {
                let k = self.shape(*x)[1];
                self.acc(grads, *x, |gx| {
                    for (r, &i) in idx.iter().enumerate() {
                        gx[r * k + i] += gd[r];
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: AttnMask,
        probs: &[T],
        gd: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (tq, dq) = (self.shape(q)[0], self.shape(q)[1]);
        let (tk, dv) = (self.shape(k)[0], self.shape(v)[1]);
        let (hk, hv) = (dq / heads, dv / heads);
        let scale = T::one() / T::from_usize(hk).unwrap().sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let need_q = self.nodes[q.0].requires_grad;
        let need_k = self.nodes[k.0].requires_grad;
        let mut gq = vec![T::zero(); if need_q { tq * dq } else { 0 }];
        let mut gk = vec![T::zero(); if need_k { tk * dq } else { 0 }];
        let mut gv = vec![T::zero(); tk * dv];
        let mut ds = vec![T::zero(); tq * tk];
        for h in 0..heads {
            let p = &probs[h * tq * tk..(h + 1) * tq * tk];
            let go = MatRef { data: &gd[h * hv..], rows: tq, cols: hv, row_stride: dv, col_stride: 1 };
            let vh = MatRef { data: &vd[h * hv..], rows: tk, cols: hv, row_stride: dv, col_stride: 1 };
            // dV_h = Pᵀ · dO_h
            gemm(MatRef::new(p, tq, tk).t(), go, &mut gv[h * hv..], dv, true);
            if !(need_q || need_k) {
                continue;
            }
            // dP = dO_h · V_hᵀ ; dS = P ⊙ (dP − rowsum(dP ⊙ P)) · scale
            gemm(go, vh.t(), &mut ds, tk, false);
            for i in 0..tq {
                let row = &mut ds[i * tk..(i + 1) * tk];
                let pr = &p[i * tk..(i + 1) * tk];
                let dot: T = row.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                for j in 0..tk {
                    row[j] = if mask.allows(i, j) { pr[j] * (row[j] - dot) * scale } else { T::zero() };
                }
            }
            let qh = MatRef { data: &qd[h * hk..], rows: tq, cols: hk, row_stride: dq, col_stride: 1 };
            let kh = MatRef { data: &kd[h * hk..], rows: tk, cols: hk, row_stride: dq, col_stride: 1 };
            if need_q {
                gemm(MatRef::new(&ds, tq, tk), kh, &mut gq[h * hk..], dq, true);
            }
            if need_k {
                gemm(MatRef::new(&ds, tq, tk).t(), qh, &mut gk[h * hk..], dq, true);
            }
        }
        let add = |dst: &mut [T], src: &[T]| {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        };
        self.acc(grads, q, |g| add(g, &gq));
        self.acc(grads, k, |g| add(g, &gk));
        self.acc(grads, v, |g| add(g, &gv));
    }
}

fn im2col_2d<T: Scalar>(x: &[T], g: &Conv2dGeom) -> Vec<T> {
    let p = g.oh * g.ow;
    let mut cols = vec![T::zero(); g.cin * g.kh * g.kw * p];
    for ci in 0..g.cin {
        for a in 0..g.kh {
            for b in 0..g.kw {
                let row = (ci * g.kh + a) * g.kw + b;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + a) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + b) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        cols[row * p + oy * g.ow + ox] = x[(ci * g.h + iy as usize) * g.w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_2d<T: Scalar>(cols: &[T], g: &Conv2dGeom, gx: &mut [T]) {
    let p = g.oh * g.ow;
    for ci in 0..g.cin {
        for a in 0..g.kh {
            for b in 0..g.kw {
                let row = (ci * g.kh + a) * g.kw + b;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + a) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + b) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        gx[(ci * g.h + iy as usize) * g.w + ix as usize] += cols[row * p + oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// Gradients of the leaves that required them.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_shape_rule() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 4]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 4]);
        let err = g.matmul(b, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[3, 4]"), "{err}");
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[4], &[0.7; 4]));
        let y = g.softmax(x, 0).unwrap();
        for &p in g.value(y).data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn causal_attention_first_row_copies_first_value() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin()));
        let k = g.constant(Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.91).cos()));
        let v = g.constant(Tensor::from_fn(&[3, 4], |i| i as f64));
        let o = g.attention(q, k, v, 2, AttnMask::Causal).unwrap();
        assert_eq!(g.value(o).row(0), g.value(v).row(0));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3], &[1.0, -2.0, 5.0]), true);
        let s = g.sum(x).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::<f64>::new();
        g.set_check_finite(true);
        let x = g.constant(t(&[1], &[-1.0]));
        assert!(matches!(g.log(x), Err(TensorError::NonFinite { op: "log" })));
    }

    #[test]
    fn broadcast_add_row_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let b = g.leaf(t(&[3], &[10.0, 20.0, 30.0]), true);
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let s = g.sum(y).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn conv2d_output_extent() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 80, 32]));
        let w = g.constant(Tensor::zeros(&[4, 1, 3, 3]));
        let y = g.conv2d(x, w, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[4, 40, 16]);
    }
}
