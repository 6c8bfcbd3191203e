use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Softmax(Var, usize),
    Normalize(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    Min(Var, usize, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SqDist(Var, Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run reverse-mode tape. Build a fresh tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => panic!("expected rank 1 or 2, got {shape:?}"),
    }
}

/// C (m×n) += A·B where A, B are given with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes slices whose extents cover the strided
    // m×k, k×n and m×n views; c does not alias a or b.
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
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Record a tensor; gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad,
        )
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        assert_eq!(self.node(v).value.len(), 1, "not a scalar");
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).unwrap()
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(TensorError::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, self.value(a), k, 1, self.value(b), n, 1, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.rank2("transpose", a)?;
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(a);
        Ok(self.push(vec![c, r], out, Op::Transpose(a), ng))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, tag: Op) -> Result<Var> {
        self.check_same(op, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, tag, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[r×c] + row[c]`, the row broadcast to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.rank2("add_row", x)?;
        if self.value(row).len() != c {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: vec![r, c],
                rhs: self.shape(row).to_vec(),
            });
        }
        let b = self.value(row);
        let out = self
            .value(x)
            .chunks_exact(c)
            .flat_map(|xs| xs.iter().zip(b).map(|(p, q)| p + q))
            .collect();
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(vec![r, c], out, Op::AddRow(x, row), ng))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, tag: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, tag, ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("nonpositive input {bad}"),
            });
        }
        Ok(self.map(x, f64::ln, Op::Log(x)))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Visit each slice along `axis` of a rank-1/2 value as (offset, stride, len).
    fn slices(shape: &[usize], axis: usize) -> Result<(usize, usize, usize, usize)> {
        let (r, c) = dims2(shape);
        let rank = shape.len();
        if axis >= rank {
            return Err(TensorError::Axis { axis, rank });
        }
        // (count, outer step, inner stride, len)
        if rank == 1 || axis == 1 {
            Ok((r, c, 1, c))
        } else {
            Ok((c, 1, c, r))
        }
    }

    /// Softmax along `axis` with max-subtraction. `mask` is either full
    /// (one flag per element) or a column mask broadcast over rows; masked
    /// entries are exactly zero. A slice with no unmasked entry is an error.
    pub fn softmax(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (count, outer, stride, len) = Self::slices(&shape, axis)?;
        let (_, cols) = dims2(&shape);
        let numel = self.value(x).len();
        let keep = |idx: usize| -> bool {
            match mask {
                None => true,
                Some(m) if m.len() == numel => m[idx],
                Some(m) => m[idx % cols],
            }
        };
        if let Some(m) = mask {
            if m.len() != numel && m.len() != cols {
                return Err(TensorError::Shape {
                    op: "softmax mask",
                    lhs: shape,
                    rhs: vec![m.len()],
                });
            }
        }
        let src = self.value(x);
        let mut out = vec![0.0; numel];
        for s in 0..count {
            let base = s * outer;
            let mut max = f64::NEG_INFINITY;
            let mut any = false;
            for t in 0..len {
                let i = base + t * stride;
                if keep(i) {
                    any = true;
                    max = max.max(src[i]);
                }
            }
            if !any {
                return Err(TensorError::EmptySoftmaxSlice);
            }
            let mut total = 0.0;
            for t in 0..len {
                let i = base + t * stride;
                if keep(i) {
                    let e = (src[i] - max).exp();
                    out[i] = e;
                    total += e;
                }
            }
            for t in 0..len {
                out[base + t * stride] /= total;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(shape, out, Op::Softmax(x, axis), ng))
    }

    /// Divide each slice along `axis` by its sum.
    pub fn normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (count, outer, stride, len) = Self::slices(&shape, axis)?;
        let mut out = self.value(x).to_vec();
        for s in 0..count {
            let base = s * outer;
            let total: f64 = (0..len).map(|t| out[base + t * stride]).sum();
            if total == 0.0 || !total.is_finite() {
                return Err(TensorError::EmptySlice { op: "normalize" });
            }
            for t in 0..len {
                out[base + t * stride] /= total;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(shape, out, Op::Normalize(x, axis), ng))
    }

    /// Row-wise layer normalization with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.rank2("layer_norm", x)?;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: vec![r, c],
                rhs: self.shape(gain).to_vec(),
            });
        }
        let src = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            vec![r, c],
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    fn reduce_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        if shape.len() == 1 {
            vec![1]
        } else if axis == 0 {
            vec![shape[1]]
        } else {
            vec![shape[0]]
        }
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (count, outer, stride, len) = Self::slices(&shape, axis)?;
        if len == 0 {
            return Err(TensorError::EmptyAxis);
        }
        let src = self.value(x);
        let out = (0..count)
            .map(|s| (0..len).map(|t| src[s * outer + t * stride]).sum())
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Self::reduce_shape(&shape, axis), out, Op::Sum(x, axis), ng))
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (count, outer, stride, len) = Self::slices(&shape, axis)?;
        if len == 0 {
            return Err(TensorError::EmptyAxis);
        }
        let src = self.value(x);
        let out = (0..count)
            .map(|s| (0..len).map(|t| src[s * outer + t * stride]).sum::<f64>() / len as f64)
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Self::reduce_shape(&shape, axis), out, Op::Mean(x, axis), ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![1], vec![total], Op::SumAll(x), ng)
    }

    /// Minimum along `axis`; ties resolve to the lowest index, which alone
    /// receives the gradient.
    pub fn min(&mut self, x: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        let shape = self.shape(x).to_vec();
        let (count, outer, stride, len) = Self::slices(&shape, axis)?;
        if len == 0 {
            return Err(TensorError::EmptyAxis);
        }
        let src = self.value(x);
        let mut vals = Vec::with_capacity(count);
        let mut idx = Vec::with_capacity(count);
        for s in 0..count {
            let mut best = 0;
            let mut bv = src[s * outer];
            for t in 1..len {
                let v = src[s * outer + t * stride];
                if v < bv {
                    bv = v;
                    best = t;
                }
            }
            vals.push(bv);
            idx.push(best);
        }
        let ng = self.ng(x);
        let v = self.push(
            Self::reduce_shape(&shape, axis),
            vals,
            Op::Min(x, axis, idx.clone()),
            ng,
        );
        Ok((v, idx))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.rank2("slice_cols", x)?;
        if start >= end || end > c {
            return Err(TensorError::Shape {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let src = self.value(x);
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let ng = self.ng(x);
        Ok(self.push(vec![r, w], out, Op::SliceCols(x, start), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.rank2("concat_cols", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.rank2("concat_cols", p)?;
            if pr != r {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: vec![pr, pc],
                });
            }
            widths.push(pc);
        }
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![r, c], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.rank2("slice_rows", x)?;
        if start >= end || end > r {
            return Err(TensorError::Shape {
                op: "slice_rows",
                lhs: vec![r, c],
                rhs: vec![start, end],
            });
        }
        let out = self.value(x)[start * c..end * c].to_vec();
        let ng = self.ng(x);
        Ok(self.push(vec![end - start, c], out, Op::SliceRows(x, start), ng))
    }

    /// `D[i, j] = ‖x_i − y_j‖²` for row sets `x` (n×k) and `y` (m×k).
    pub fn sq_dist(&mut self, x: Var, y: Var) -> Result<Var> {
        let (n, k) = self.rank2("sq_dist", x)?;
        let (m, k2) = self.rank2("sq_dist", y)?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "sq_dist",
                lhs: vec![n, k],
                rhs: vec![m, k2],
            });
        }
        let (xs, ys) = (self.value(x), self.value(y));
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let xi = &xs[i * k..(i + 1) * k];
            for j in 0..m {
                let yj = &ys[j * k..(j + 1) * k];
                out[i * m + j] = xi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
        let ng = self.ng(x) || self.ng(y);
        Ok(self.push(vec![n, m], out, Op::SqDist(x, y), ng))
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        if self.leaf_grads.len() < n {
            self.leaf_grads.resize(n, None);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                match &mut self.leaf_grads[idx] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        // Lazily zero-initialized accumulator for an input, or None when the
        // input does not need a gradient.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].needs_grad {
                    let len = nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(&nodes[a.0].shape);
                let n = nodes[b.0].shape[1];
                if let Some(ga) = buf!(*a) {
                    // dA = dC · Bᵀ
                    gemm_acc(m, n, k, g, n, 1, &nodes[b.0].value, 1, n, ga);
                }
                if let Some(gb) = buf!(*b) {
                    // dB = Aᵀ · dC
                    gemm_acc(k, m, n, &nodes[a.0].value, 1, k, g, n, 1, gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = dims2(&nodes[a.0].shape);
                if let Some(ga) = buf!(*a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                }
                if let Some(gb) = buf!(*b) {
                    gb.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                }
                if let Some(gb) = buf!(*b) {
                    gb.iter_mut().zip(g).for_each(|(p, q)| *p -= q);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = buf!(*a) {
                    let bv = &nodes[b.0].value;
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = buf!(*b) {
                    let av = &nodes[a.0].value;
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddRow(x, row) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                }
                if let Some(gr) = buf!(*row) {
                    let c = gr.len();
                    for chunk in g.chunks_exact(c) {
                        gr.iter_mut().zip(chunk).for_each(|(p, q)| *p += q);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(p, q)| *p += c * q);
                }
            }
            Op::AddScalar(x) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(p, q)| *p += q);
                }
            }
            Op::Relu(x) => {
                let xv = &nodes[x.0].value;
                if let Some(gx) = buf!(*x) {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                if let Some(gx) = buf!(*x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Exp(x) => {
                let y = &node.value;
                if let Some(gx) = buf!(*x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] * y[i];
                    }
                }
            }
            Op::Log(x) => {
                let xv = &nodes[x.0].value;
                if let Some(gx) = buf!(*x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] / xv[i];
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = &nodes[x.0].value;
                if let Some(gx) = buf!(*x) {
                    for i in 0..g.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Softmax(x, axis) => {
                let y = &node.value;
                let (count, outer, stride, len) = Self::slices(&node.shape, *axis).unwrap();
                if let Some(gx) = buf!(*x) {
                    for s in 0..count {
                        let base = s * outer;
                        let dot: f64 = (0..len)
                            .map(|t| {
                                let i = base + t * stride;
                                g[i] * y[i]
                            })
                            .sum();
                        for t in 0..len {
                            let i = base + t * stride;
                            gx[i] += y[i] * (g[i] - dot);
                        }
                    }
                }
            }
            Op::Normalize(x, axis) => {
                let y = &node.value;
                let xv = &nodes[x.0].value;
                let (count, outer, stride, len) = Self::slices(&node.shape, *axis).unwrap();
                if let Some(gx) = buf!(*x) {
                    for s in 0..count {
                        let base = s * outer;
                        let total: f64 = (0..len).map(|t| xv[base + t * stride]).sum();
                        let dot: f64 = (0..len)
                            .map(|t| {
                                let i = base + t * stride;
                                g[i] * y[i]
                            })
                            .sum();
                        for t in 0..len {
                            let i = base + t * stride;
                            gx[i] += (g[i] - dot) / total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = dims2(&node.shape);
                let gv = &nodes[gain.0].value;
                if let Some(gg) = buf!(*gain) {
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if let Some(gb) = buf!(*bias) {
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += g[i * c + j];
                        }
                    }
                }
                if let Some(gx) = buf!(*x) {
                    let mut dh = vec![0.0; c];
                    for i in 0..r {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..c {
                            dh[j] = g[i * c + j] * gv[j];
                            mean_dh += dh[j];
                            mean_dh_h += dh[j] * xhat[i * c + j];
                        }
                        mean_dh /= c as f64;
                        mean_dh_h /= c as f64;
                        for j in 0..c {
                            gx[i * c + j] +=
                                inv_std[i] * (dh[j] - mean_dh - xhat[i * c + j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let in_shape = &nodes[x.0].shape;
                let (count, outer, stride, len) = Self::slices(in_shape, *axis).unwrap();
                let div = if matches!(node.op, Op::Mean(..)) {
                    len as f64
                } else {
                    1.0
                };
                if let Some(gx) = buf!(*x) {
                    for s in 0..count {
                        for t in 0..len {
                            gx[s * outer + t * stride] += g[s] / div;
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().for_each(|p| *p += g[0]);
                }
            }
            Op::Min(x, axis, argmin) => {
                let in_shape = &nodes[x.0].shape;
                let (_, outer, stride, _) = Self::slices(in_shape, *axis).unwrap();
                if let Some(gx) = buf!(*x) {
                    for (s, &t) in argmin.iter().enumerate() {
                        gx[s * outer + t * stride] += g[s];
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let c = nodes[x.0].shape[1];
                let (r, w) = dims2(&node.shape);
                if let Some(gx) = buf!(*x) {
                    for i in 0..r {
                        for j in 0..w {
                            gx[i * c + start + j] += g[i * w + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (r, c) = dims2(&node.shape);
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].shape[1];
                    if let Some(gp) = buf!(*p) {
                        for i in 0..r {
                            for j in 0..w {
                                gp[i * w + j] += g[i * c + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows(x, start) => {
                let c = node.shape[1];
                if let Some(gx) = buf!(*x) {
                    let s = start * c;
                    gx[s..s + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(p, q)| *p += q);
                }
            }
            Op::SqDist(x, y) => {
                let (n, k) = dims2(&nodes[x.0].shape);
                let m = nodes[y.0].shape[0];
                let (xs, ys) = (&nodes[x.0].value, &nodes[y.0].value);
                if let Some(gx) = buf!(*x) {
                    for i in 0..n {
                        for j in 0..m {
                            let w = 2.0 * g[i * m + j];
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..k {
                                gx[i * k + c] += w * (xs[i * k + c] - ys[j * k + c]);
                            }
                        }
                    }
                }
                if let Some(gy) = buf!(*y) {
                    for i in 0..n {
                        for j in 0..m {
                            let w = 2.0 * g[i * m + j];
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..k {
                                gy[j * k + c] -= w * (xs[i * k + c] - ys[j * k + c]);
                            }
                        }
                    }
                }
            }
        }
    }
}
