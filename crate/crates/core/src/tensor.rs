//! Dense tensors with reverse-mode differentiation.
//!
//! [`Tensor`] is plain storage (shape + values + optional gradient) used for
//! parameters and data. Differentiable computation happens on a [`Tape`]:
//! leaves are pushed onto the tape, ops append new nodes in SSA order, and
//! [`Tape::backward`] walks the nodes in reverse accumulating gradients.
//! Gradients accumulate across repeated `backward` calls; the tape never
//! resets them implicitly.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Plain tensor storage: row-major values plus an optional gradient buffer of
/// the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::dimension(
                "tensor construction",
                format!("{expect} values for shape {shape:?}"),
                values.len(),
            ));
        }
        Ok(Tensor { shape, values, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, values: vec![T::zero(); n], grad: None }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], values: vec![v], grad: None }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Add `delta` into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::dimension("gradient accumulation", self.values.len(), delta.len()));
        }
        let grad = self.grad.get_or_insert_with(|| vec![T::zero(); self.values.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g = *g + *d;
        }
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    /// `a[r,k] @ b[k,c]`
    MatMul(Var, Var),
    /// `a[r,k] @ b[c,k]^T`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `m[r,c] + v[c]` broadcast over rows.
    AddRowVec(Var, Var),
    /// `m[r,c] + v[r]` broadcast over columns.
    AddColVec(Var, Var),
    Scale(Var, T),
    Relu(Var),
    SumAll(Var),
    MeanAll(Var),
    /// Row sums of a matrix: `[r,c] -> [r]`.
    SumAxis1(Var),
    SoftmaxRows(Var),
    /// Mean cross-entropy of row-wise softmax against integer labels.
    /// The softmax probabilities are cached for the backward pass.
    CrossEntropyMean(Var, Vec<usize>),
    /// `-mean(ln(max(p[i, y_i], eps)))` over rows of a probability matrix.
    NllMeanRows(Var, Vec<usize>),
    /// L2-normalize each row, guarding zero rows with `eps`.
    NormalizeRows(Var),
    /// All pairs of rows: `a[na,d], b[nb,d] -> [na*nb, 2d]` where row
    /// `i*nb + j` is `concat(a[i], b[j])`.
    PairConcat(Var, Var),
    Reshape(Var),
}

struct Node<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Vec<T>,
    /// Cached forward by-products (softmax probabilities, row norms).
    aux: Vec<T>,
    op: Op<T>,
}

/// Epsilon guarding zero-norm rows in `normalize_rows` and zero
/// probabilities in `nll_mean_rows`.
pub const NORM_EPS: f64 = 1e-12;

/// Append-only computation graph for one forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<T>, aux: Vec<T>, op: Op<T>) -> Var {
        let grad = vec![T::zero(); values.len()];
        self.nodes.push(Node { shape, values, grad, aux, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::dimension(
                "tape leaf",
                format!("{expect} values for shape {shape:?}"),
                values.len(),
            ));
        }
        Ok(self.push(shape, values, Vec::new(), Op::Leaf))
    }

    pub fn leaf_tensor(&mut self, tensor: &Tensor<T>) -> Var {
        self.push(tensor.shape().to_vec(), tensor.values().to_vec(), Vec::new(), Op::Leaf)
    }

    pub fn leaf_matrix(&mut self, rows: usize, cols: usize, values: Vec<T>) -> Result<Var> {
        self.leaf(vec![rows, cols], values)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> &[T] {
        &self.nodes[v.0].grad
    }

    fn dims2(&self, v: Var, context: &str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape[..] {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::dimension(context, "a rank-2 tensor", format!("shape {s:?}"))),
        }
    }

    fn dims1(&self, v: Var, context: &str) -> Result<usize> {
        match self.nodes[v.0].shape[..] {
            [n] => Ok(n),
            ref s => Err(Error::dimension(context, "a rank-1 tensor", format!("shape {s:?}"))),
        }
    }

    // ---- forward ops -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.dims2(a, "matmul lhs")?;
        let (k2, c) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::dimension("matmul rhs", format!("{k} rows"), k2));
        }
        let mut out = vec![T::zero(); r * c];
        matmul_accum(&mut out, &self.nodes[a.0].values, &self.nodes[b.0].values, r, k, c);
        Ok(self.push(vec![r, c], out, Vec::new(), Op::MatMul(a, b)))
    }

    /// `a @ b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.dims2(a, "matmul_nt lhs")?;
        let (c, k2) = self.dims2(b, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::dimension("matmul_nt rhs", format!("{k} columns"), k2));
        }
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..c {
                let brow = &bv[j * k..(j + 1) * k];
                let mut s = T::zero();
                for p in 0..k {
                    s = s + arow[p] * brow[p];
                }
                out[i * c + j] = s;
            }
        }
        Ok(self.push(vec![r, c], out, Vec::new(), Op::MatMulNT(a, b)))
    }

    fn elementwise(&mut self, a: Var, b: Var, context: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::dimension(
                context,
                format!("{:?}", self.nodes[a.0].shape),
                format!("{:?}", self.nodes[b.0].shape),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add rhs")?;
        let out = zip_map(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| x + y);
        Ok(self.push(self.nodes[a.0].shape.clone(), out, Vec::new(), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub rhs")?;
        let out = zip_map(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| x - y);
        Ok(self.push(self.nodes[a.0].shape.clone(), out, Vec::new(), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul rhs")?;
        let out = zip_map(&self.nodes[a.0].values, &self.nodes[b.0].values, |x, y| x * y);
        Ok(self.push(self.nodes[a.0].shape.clone(), out, Vec::new(), Op::Mul(a, b)))
    }

    pub fn add_row_vec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "add_row_vec matrix")?;
        let n = self.dims1(v, "add_row_vec vector")?;
        if n != c {
            return Err(Error::dimension("add_row_vec vector", c, n));
        }
        let mv = &self.nodes[m.0].values;
        let vv = &self.nodes[v.0].values;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(mv[i * c + j] + vv[j]);
            }
        }
        Ok(self.push(vec![r, c], out, Vec::new(), Op::AddRowVec(m, v)))
    }

    pub fn add_col_vec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "add_col_vec matrix")?;
        let n = self.dims1(v, "add_col_vec vector")?;
        if n != r {
            return Err(Error::dimension("add_col_vec vector", r, n));
        }
        let mv = &self.nodes[m.0].values;
        let vv = &self.nodes[v.0].values;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(mv[i * c + j] + vv[i]);
            }
        }
        Ok(self.push(vec![r, c], out, Vec::new(), Op::AddColVec(m, v)))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.nodes[a.0].values.iter().map(|&x| x * k).collect();
        self.push(self.nodes[a.0].shape.clone(), out, Vec::new(), Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].values.iter().map(|&x| x.max(T::zero())).collect();
        self.push(self.nodes[a.0].shape.clone(), out, Vec::new(), Op::Relu(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].values.iter().copied().sum();
        self.push(vec![1], vec![s], Vec::new(), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::of(self.nodes[a.0].values.len() as f64);
        let s: T = self.nodes[a.0].values.iter().copied().sum();
        self.push(vec![1], vec![s / n], Vec::new(), Op::MeanAll(a))
    }

    pub fn sum_axis1(&mut self, m: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "sum_axis1")?;
        let mv = &self.nodes[m.0].values;
        let out = (0..r)
            .map(|i| mv[i * c..(i + 1) * c].iter().copied().sum())
            .collect();
        Ok(self.push(vec![r], out, Vec::new(), Op::SumAxis1(m)))
    }

    pub fn softmax_rows(&mut self, m: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "softmax_rows")?;
        let mv = &self.nodes[m.0].values;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &mv[i * c..(i + 1) * c];
            softmax_into(row, &mut out);
        }
        Ok(self.push(vec![r, c], out, Vec::new(), Op::SoftmaxRows(m)))
    }

    /// Mean negative log-likelihood of `logits` rows under integer `labels`.
    pub fn cross_entropy_mean(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(logits, "cross_entropy logits")?;
        if labels.len() != r {
            return Err(Error::dimension("cross_entropy labels", r, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidInput(format!(
                "cross_entropy label {bad} out of range for {c} classes"
            )));
        }
        let mv = &self.nodes[logits.0].values;
        let mut probs = Vec::with_capacity(r * c);
        let mut loss = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = &mv[i * c..(i + 1) * c];
            let start = probs.len();
            softmax_into(row, &mut probs);
            let p = probs[start + y];
            // `max` would swallow a NaN (IEEE maxNum returns the other
            // operand), silently turning divergence into a finite loss; let
            // non-finite probabilities poison the loss instead.
            if p.is_finite() {
                loss = loss - p.max(T::of(NORM_EPS)).ln();
            } else {
                loss = loss + p.abs();
            }
        }
        loss = loss / T::of(r as f64);
        Ok(self.push(vec![1], vec![loss], probs, Op::CrossEntropyMean(logits, labels.to_vec())))
    }

    /// `-mean(ln(max(p[i, y_i], eps)))` for a matrix of probabilities.
    pub fn nll_mean_rows(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(probs, "nll probs")?;
        if labels.len() != r {
            return Err(Error::dimension("nll labels", r, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidInput(format!(
                "nll label {bad} out of range for {c} classes"
            )));
        }
        let eps = T::of(NORM_EPS);
        let mv = &self.nodes[probs.0].values;
        let mut loss = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let p = mv[i * c + y];
            // See cross_entropy_mean: never let `max` swallow a NaN.
            if p.is_finite() {
                loss = loss - p.max(eps).ln();
            } else {
                loss = loss + p.abs();
            }
        }
        loss = loss / T::of(r as f64);
        Ok(self.push(vec![1], vec![loss], Vec::new(), Op::NllMeanRows(probs, labels.to_vec())))
    }

    /// L2-normalize each row; rows with norm below [`NORM_EPS`] are divided
    /// by the epsilon instead.
    pub fn normalize_rows(&mut self, m: Var) -> Result<Var> {
        let (r, c) = self.dims2(m, "normalize_rows")?;
        let eps = T::of(NORM_EPS);
        let mv = &self.nodes[m.0].values;
        let mut out = Vec::with_capacity(r * c);
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &mv[i * c..(i + 1) * c];
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt().max(eps);
            norms.push(norm);
            out.extend(row.iter().map(|&x| x / norm));
        }
        Ok(self.push(vec![r, c], out, norms, Op::NormalizeRows(m)))
    }

    /// Concatenate every row of `a` with every row of `b`.
    pub fn pair_concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, d) = self.dims2(a, "pair_concat lhs")?;
        let (nb, d2) = self.dims2(b, "pair_concat rhs")?;
        if d != d2 {
            return Err(Error::dimension("pair_concat rhs", format!("{d} columns"), d2));
        }
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = Vec::with_capacity(na * nb * 2 * d);
        for i in 0..na {
            for j in 0..nb {
                out.extend_from_slice(&av[i * d..(i + 1) * d]);
                out.extend_from_slice(&bv[j * d..(j + 1) * d]);
            }
        }
        Ok(self.push(vec![na * nb, 2 * d], out, Vec::new(), Op::PairConcat(a, b)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let expect: usize = shape.iter().product();
        if expect != self.nodes[a.0].values.len() {
            return Err(Error::dimension(
                "reshape",
                format!("{} values", self.nodes[a.0].values.len()),
                format!("shape {shape:?}"),
            ));
        }
        let values = self.nodes[a.0].values.clone();
        Ok(self.push(shape, values, Vec::new(), Op::Reshape(a)))
    }

    // ---- backward ----------------------------------------------------

    /// Accumulate gradients of `loss` into every reachable node. `loss`
    /// must be a scalar (a single-element tensor). Each call contributes one
    /// full gradient; repeated calls without clearing accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        // Per-call gradient buffers, folded into the persistent gradients at
        // the end. Operand indices always precede the result index (the tape
        // is append-only), so splitting at idx separates reads from writes.
        let mut g: Vec<Vec<T>> =
            self.nodes.iter().map(|n| vec![T::zero(); n.values.len()]).collect();
        g[loss.0][0] = T::one();

        for idx in (0..=loss.0).rev() {
            let (lower, upper) = g.split_at_mut(idx);
            let go: &[T] = &upper[0];
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (r, c) = (self.nodes[idx].shape[0], self.nodes[idx].shape[1]);
                    let k = self.nodes[a.0].shape[1];
                    {
                        // da[r,k] += go[r,c] @ b[k,c]^T
                        let bv = &self.nodes[b.0].values;
                        let da = &mut lower[a.0];
                        for i in 0..r {
                            for p in 0..k {
                                let mut s = T::zero();
                                for j in 0..c {
                                    s = s + go[i * c + j] * bv[p * c + j];
                                }
                                da[i * k + p] = da[i * k + p] + s;
                            }
                        }
                    }
                    {
                        // db[k,c] += a[r,k]^T @ go[r,c]
                        let av = &self.nodes[a.0].values;
                        let db = &mut lower[b.0];
                        for p in 0..k {
                            for i in 0..r {
                                let apv = av[i * k + p];
                                let grow = &go[i * c..(i + 1) * c];
                                let drow = &mut db[p * c..(p + 1) * c];
                                for j in 0..c {
                                    drow[j] = drow[j] + apv * grow[j];
                                }
                            }
                        }
                    }
                }
                Op::MatMulNT(a, b) => {
                    // out[r,c] = sum_p a[r,p] * b[c,p]
                    let (r, c) = (self.nodes[idx].shape[0], self.nodes[idx].shape[1]);
                    let k = self.nodes[a.0].shape[1];
                    {
                        // da[r,k] += go[r,c] @ b[c,k]
                        let bv = &self.nodes[b.0].values;
                        let da = &mut lower[a.0];
                        for i in 0..r {
                            for j in 0..c {
                                let gv = go[i * c + j];
                                let brow = &bv[j * k..(j + 1) * k];
                                let drow = &mut da[i * k..(i + 1) * k];
                                for p in 0..k {
                                    drow[p] = drow[p] + gv * brow[p];
                                }
                            }
                        }
                    }
                    {
                        // db[c,k] += go[r,c]^T @ a[r,k]
                        let av = &self.nodes[a.0].values;
                        let db = &mut lower[b.0];
                        for j in 0..c {
                            for i in 0..r {
                                let gv = go[i * c + j];
                                let arow = &av[i * k..(i + 1) * k];
                                let drow = &mut db[j * k..(j + 1) * k];
                                for p in 0..k {
                                    drow[p] = drow[p] + gv * arow[p];
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    accum(&mut lower[a.0], go, |x| x);
                    accum(&mut lower[b.0], go, |x| x);
                }
                Op::Sub(a, b) => {
                    accum(&mut lower[a.0], go, |x| x);
                    accum(&mut lower[b.0], go, |x| -x);
                }
                Op::Mul(a, b) => {
                    {
                        let bv = &self.nodes[b.0].values;
                        let da = &mut lower[a.0];
                        for i in 0..go.len() {
                            da[i] = da[i] + go[i] * bv[i];
                        }
                    }
                    {
                        let av = &self.nodes[a.0].values;
                        let db = &mut lower[b.0];
                        for i in 0..go.len() {
                            db[i] = db[i] + go[i] * av[i];
                        }
                    }
                }
                Op::AddRowVec(m, v) => {
                    let (r, c) = (self.nodes[idx].shape[0], self.nodes[idx].shape[1]);
                    accum(&mut lower[m.0], go, |x| x);
                    let dv = &mut lower[v.0];
                    for i in 0..r {
                        for j in 0..c {
                            dv[j] = dv[j] + go[i * c + j];
                        }
                    }
                }
                Op::AddColVec(m, v) => {
                    let (r, c) = (self.nodes[idx].shape[0], self.nodes[idx].shape[1]);
                    accum(&mut lower[m.0], go, |x| x);
                    let dv = &mut lower[v.0];
                    for i in 0..r {
                        let mut s = T::zero();
                        for j in 0..c {
                            s = s + go[i * c + j];
                        }
                        dv[i] = dv[i] + s;
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accum(&mut lower[a.0], go, |x| x * k);
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].values;
                    let da = &mut lower[a.0];
                    for i in 0..go.len() {
                        if av[i] > T::zero() {
                            da[i] = da[i] + go[i];
                        }
                    }
                }
                Op::SumAll(a) => {
                    let g0 = go[0];
                    for d in lower[a.0].iter_mut() {
                        *d = *d + g0;
                    }
                }
                Op::MeanAll(a) => {
                    let n = T::of(self.nodes[a.0].values.len() as f64);
                    let g0 = go[0] / n;
                    for d in lower[a.0].iter_mut() {
                        *d = *d + g0;
                    }
                }
                Op::SumAxis1(m) => {
                    let r = self.nodes[idx].shape[0];
                    let c = self.nodes[m.0].shape[1];
                    let dm = &mut lower[m.0];
                    for i in 0..r {
                        let gv = go[i];
                        for j in 0..c {
                            dm[i * c + j] = dm[i * c + j] + gv;
                        }
                    }
                }
                Op::SoftmaxRows(m) => {
                    let (r, c) = (self.nodes[idx].shape[0], self.nodes[idx].shape[1]);
                    let y = &self.nodes[idx].values;
                    let dm = &mut lower[m.0];
                    for i in 0..r {
                        let mut dot = T::zero();
                        for j in 0..c {
                            dot = dot + go[i * c + j] * y[i * c + j];
                        }
                        for j in 0..c {
                            let d = y[i * c + j] * (go[i * c + j] - dot);
                            dm[i * c + j] = dm[i * c + j] + d;
                        }
                    }
                }
                Op::CrossEntropyMean(logits, labels) => {
                    let c = self.nodes[logits.0].shape[1];
                    let r = labels.len();
                    let g0 = go[0] / T::of(r as f64);
                    let probs = &self.nodes[idx].aux;
                    let dl = &mut lower[logits.0];
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let indicator = if j == y { T::one() } else { T::zero() };
                            dl[i * c + j] = dl[i * c + j] + g0 * (probs[i * c + j] - indicator);
                        }
                    }
                }
                Op::NllMeanRows(p, labels) => {
                    let c = self.nodes[p.0].shape[1];
                    let r = labels.len();
                    let eps = T::of(NORM_EPS);
                    let g0 = go[0] / T::of(r as f64);
                    let pv = &self.nodes[p.0].values;
                    let dp = &mut lower[p.0];
                    for (i, &y) in labels.iter().enumerate() {
                        // The forward clamps at eps, so probabilities below
                        // it carry zero gradient.
                        if pv[i * c + y] > eps {
                            dp[i * c + y] = dp[i * c + y] - g0 / pv[i * c + y];
                        }
                    }
                }
                Op::NormalizeRows(m) => {
                    let (r, c) = (self.nodes[idx].shape[0], self.nodes[idx].shape[1]);
                    let eps = T::of(NORM_EPS);
                    let norms = &self.nodes[idx].aux;
                    let xv = &self.nodes[m.0].values;
                    let dm = &mut lower[m.0];
                    for i in 0..r {
                        let n = norms[i];
                        let row = &xv[i * c..(i + 1) * c];
                        let grow = &go[i * c..(i + 1) * c];
                        if n <= eps {
                            // Forward divided by the constant eps.
                            for j in 0..c {
                                dm[i * c + j] = dm[i * c + j] + grow[j] / n;
                            }
                        } else {
                            let mut dot = T::zero();
                            for j in 0..c {
                                dot = dot + row[j] * grow[j];
                            }
                            let n3 = n * n * n;
                            for j in 0..c {
                                let d = grow[j] / n - row[j] * dot / n3;
                                dm[i * c + j] = dm[i * c + j] + d;
                            }
                        }
                    }
                }
                Op::PairConcat(a, b) => {
                    let d = self.nodes[a.0].shape[1];
                    let na = self.nodes[a.0].shape[0];
                    let nb = self.nodes[b.0].shape[0];
                    {
                        let da = &mut lower[a.0];
                        for i in 0..na {
                            for j in 0..nb {
                                let row = (i * nb + j) * 2 * d;
                                for p in 0..d {
                                    da[i * d + p] = da[i * d + p] + go[row + p];
                                }
                            }
                        }
                    }
                    {
                        let db = &mut lower[b.0];
                        for i in 0..na {
                            for j in 0..nb {
                                let row = (i * nb + j) * 2 * d;
                                for p in 0..d {
                                    db[j * d + p] = db[j * d + p] + go[row + d + p];
                                }
                            }
                        }
                    }
                }
                Op::Reshape(a) => {
                    accum(&mut lower[a.0], go, |x| x);
                }
            }
        }

        for (node, gi) in self.nodes.iter_mut().zip(g) {
            for (dst, src) in node.grad.iter_mut().zip(gi) {
                *dst = *dst + src;
            }
        }
        Ok(())
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accum<T: Scalar>(dst: &mut [T], src: &[T], f: impl Fn(T) -> T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + f(s);
    }
}

/// `out[r,c] += a[r,k] @ b[k,c]`, ikj order so the inner loop runs over
/// contiguous rows of `b` and `out`.
fn matmul_accum<T: Scalar>(out: &mut [T], a: &[T], b: &[T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * c..(p + 1) * c];
            for j in 0..c {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
}

/// Numerically stable softmax of one row, appended to `out`.
fn softmax_into<T: Scalar>(row: &[T], out: &mut Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut sum = T::zero();
    for &x in row {
        let e = (x - max).exp();
        out.push(e);
        sum = sum + e;
    }
    for v in &mut out[start..] {
        *v = *v / sum;
    }
}

/// Row index of the largest value in each row; ties resolve to the lowest
/// index.
pub fn argmax_rows<T: Scalar>(values: &[T], rows: usize, cols: usize) -> Vec<usize> {
    (0..rows)
        .map(|i| {
            let row = &values[i * cols..(i + 1) * cols];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
