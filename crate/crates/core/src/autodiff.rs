//! A small reverse-mode tape over dense matrices.
//!
//! Every node stores its forward value. Parameters enter the tape as
//! top-left blocks of larger tensors, so gradients come back as blocks that
//! the caller accumulates into full-size buffers.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Transpose(Var),
    /// zero-padded copy; source occupies the top-left block
    Pad(Var),
    RowSoftmax(Var),
    /// `D^{-1/2}(A + I)D^{-1/2}` with `D` the row sums of `A + I`
    GcnNormalize { src: Var, inv_sqrt_deg: Vec<f64> },
    /// row-major flatten into a `1 × (rows·cols)` row vector
    Flatten(Var),
    FrobNorm(Var),
    SoftmaxCrossEntropy { logits: Var, label: usize, probs: DMatrix<f64> },
    Sum(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradient blocks keyed by parameter name. Each block has the shape of
/// the slice that entered the tape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub blocks: BTreeMap<String, DMatrix<f64>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
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

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Registers the top-left `rows × cols` block of `full` as a learnable
    /// leaf. Repeated calls with the same name return the same node.
    pub fn param(&mut self, name: &str, full: &DMatrix<f64>, rows: usize, cols: usize) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            let shape = self.nodes[v.0].value.shape();
            if shape != (rows, cols) {
                return Err(Error::contract(format!(
                    "parameter `{name}` sliced as {shape:?} and {:?} in one pass",
                    (rows, cols)
                )));
            }
            return Ok(v);
        }
        if rows > full.nrows() || cols > full.ncols() {
            return Err(Error::contract(format!(
                "parameter `{name}` is {:?}, cannot slice {rows}x{cols}",
                full.shape()
            )));
        }
        let block = full.view((0, 0), (rows, cols)).into_owned();
        let v = self.push(block, Op::Param, true);
        self.params.insert(name.to_owned(), v);
        Ok(v)
    }

    fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
        Error::contract(format!("{what}: incompatible shapes {a:?} and {b:?}"))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.1 != sb.0 {
            return Err(Self::shape_err("matmul", sa, sb));
        }
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Self::shape_err("add", sa, sb));
        }
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Self::shape_err("sub", sa, sb));
        }
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Zero-pads `a` to `rows × cols`.
    pub fn pad(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = src.shape();
        if rows < r || cols < c {
            return Err(Self::shape_err("pad", (r, c), (rows, cols)));
        }
        let mut value = DMatrix::zeros(rows, cols);
        value.view_mut((0, 0), (r, c)).copy_from(src);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Pad(a), rg))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = row_softmax(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    pub fn gcn_normalize(&mut self, a: Var) -> Result<Var> {
        let (value, inv_sqrt_deg) = gcn_normalize(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::GcnNormalize { src: a, inv_sqrt_deg }, rg))
    }

    pub fn flatten(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let (r, c) = src.shape();
        let value = DMatrix::from_fn(1, r * c, |_, k| src[(k / c, k % c)]);
        let rg = self.rg(a);
        self.push(value, Op::Flatten(a), rg)
    }

    pub fn frob_norm(&mut self, a: Var) -> Var {
        let value = DMatrix::from_element(1, 1, self.value(a).norm());
        let rg = self.rg(a);
        self.push(value, Op::FrobNorm(a), rg)
    }

    /// `−(1/c) log(max(softmax(z)_label, PROB_FLOOR))` for a `1 × c` row of logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.nrows() != 1 || label >= z.ncols() {
            return Err(Error::contract(format!(
                "cross entropy expects 1xc logits with label < c, got {:?} and label {label}",
                z.shape()
            )));
        }
        let probs = row_softmax(z);
        let c = z.ncols() as f64;
        let loss = -(probs[(0, label)].max(PROB_FLOOR)).ln() / c;
        let rg = self.rg(logits);
        Ok(self.push(
            DMatrix::from_element(1, 1, loss),
            Op::SoftmaxCrossEntropy { logits, label, probs },
            rg,
        ))
    }

    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let first = *terms.first().ok_or_else(|| Error::contract("sum of no terms"))?;
        let mut value = self.value(first).clone();
        for &t in &terms[1..] {
            let s = self.value(t).shape();
            if s != value.shape() {
                return Err(Self::shape_err("sum", value.shape(), s));
            }
            value += self.value(t);
        }
        let rg = terms.iter().any(|&t| self.rg(t));
        Ok(self.push(value, Op::Sum(terms.to_vec()), rg))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::contract("backward needs a 1x1 root"));
        }
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(DMatrix::from_element(1, 1, 1.0));

        fn acc(grads: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, &g * self.value(*b).transpose());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, self.value(*a).transpose() * &g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, -g);
                    }
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Pad(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, g.view((0, 0), (r, c)).into_owned());
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut dx = g.component_mul(y);
                    for i in 0..y.nrows() {
                        let dot: f64 = dx.row(i).sum();
                        for j in 0..y.ncols() {
                            dx[(i, j)] -= y[(i, j)] * dot;
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::GcnNormalize { src, inv_sqrt_deg } => {
                    let a = self.value(*src);
                    let n = a.nrows();
                    let s = inv_sqrt_deg;
                    // Â_ij = s_i B_ij s_j with B = A + I and s_i = d_i^{-1/2}
                    let mut ds = vec![0.0; n];
                    let mut db = DMatrix::zeros(n, n);
                    for j in 0..n {
                        for i in 0..n {
                            let b = a[(i, j)] + if i == j { 1.0 } else { 0.0 };
                            let gij = g[(i, j)];
                            db[(i, j)] = gij * s[i] * s[j];
                            ds[i] += gij * b * s[j];
                            ds[j] += gij * s[i] * b;
                        }
                    }
                    // ds_i/dd_i = -½ d_i^{-3/2} = -½ s_i³, and ∂d_i/∂B_ij = 1
                    let dd: Vec<f64> = (0..n).map(|i| -0.5 * s[i].powi(3) * ds[i]).collect();
                    for j in 0..n {
                        for i in 0..n {
                            db[(i, j)] += dd[i];
                        }
                    }
                    acc(&mut grads, *src, db);
                }
                Op::Flatten(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, DMatrix::from_fn(r, c, |i, j| g[(0, i * c + j)]));
                }
                Op::FrobNorm(a) => {
                    let norm = node.value[(0, 0)];
                    let x = self.value(*a);
                    let k = if norm > 0.0 { g[(0, 0)] / norm } else { 0.0 };
                    acc(&mut grads, *a, x * k);
                }
                Op::SoftmaxCrossEntropy { logits, label, probs } => {
                    let c = probs.ncols() as f64;
                    let mut dz = DMatrix::zeros(1, probs.ncols());
                    if probs[(0, *label)] > PROB_FLOOR {
                        for j in 0..probs.ncols() {
                            let target = if j == *label { 1.0 } else { 0.0 };
                            dz[(0, j)] = g[(0, 0)] * (probs[(0, j)] - target) / c;
                        }
                    }
                    acc(&mut grads, *logits, dz);
                }
                Op::Sum(terms) => {
                    for &t in terms {
                        if self.rg(t) {
                            acc(&mut grads, t, g.clone());
                        }
                    }
                }
            }
        }

        let mut out = Gradients::default();
        for (name, &v) in &self.params {
            let g = if v.0 <= root.0 { grads[v.0].take() } else { None };
            let g = g.unwrap_or_else(|| DMatrix::zeros(self.value(v).nrows(), self.value(v).ncols()));
            out.blocks.insert(name.clone(), g);
        }
        Ok(out)
    }
}

/// Row-wise softmax with max subtraction.
pub fn row_softmax(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let s: f64 = row.sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// `D^{-1/2}(A + I)D^{-1/2}` and the `d^{-1/2}` vector used to build it.
pub fn gcn_normalize(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::contract(format!("GCN adjacency must be square, got {:?}", a.shape())));
    }
    let mut inv = Vec::with_capacity(n);
    for i in 0..n {
        let d = a.row(i).sum() + 1.0;
        if !(d > 0.0) {
            return Err(Error::Numeric(format!("row {i} of A + I has nonpositive sum {d}")));
        }
        inv.push(1.0 / d.sqrt());
    }
    let value = DMatrix::from_fn(n, n, |i, j| inv[i] * (a[(i, j)] + if i == j { 1.0 } else { 0.0 }) * inv[j]);
    Ok((value, inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::uniform_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences on every entry of one parameter.
    fn numeric_grad(
        full: &DMatrix<f64>,
        f: &dyn Fn(&DMatrix<f64>) -> f64,
    ) -> DMatrix<f64> {
        let h = 1e-6;
        DMatrix::from_fn(full.nrows(), full.ncols(), |i, j| {
            let mut p = full.clone();
            p[(i, j)] += h;
            let up = f(&p);
            p[(i, j)] -= 2.0 * h;
            let down = f(&p);
            (up - down) / (2.0 * h)
        })
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max() / b.abs().max().max(1e-8)
    }

    #[test]
    fn quadratic_head() {
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let mut t = Tape::new();
        let p = t.param("theta", &theta, 2, 2).unwrap();
        let n = t.frob_norm(p);
        let sq = t.matmul(n, n).unwrap();
        let half = t.scale(sq, 0.5);
        let g = t.backward(half).unwrap();
        assert!((&g.blocks["theta"] - &theta).abs().max() < 1e-14);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = uniform_matrix(4, 3, 1.0, &mut rng);
        let x = uniform_matrix(5, 4, 1.0, &mut rng);
        let adj = uniform_matrix(5, 5, 1.0, &mut rng).map(f64::abs);
        let adj = &adj + adj.transpose();
        let build = |w: &DMatrix<f64>| -> (Tape, Var) {
            let mut t = Tape::new();
            let wp = t.param("w", w, 4, 3).unwrap();
            let xc = t.constant(x.clone());
            let h = t.matmul(xc, wp).unwrap(); // 5x3
            let r = t.relu(h);
            let s = t.row_softmax(r);
            let st = t.transpose(s); // 3x5
            let ac = t.constant(adj.clone());
            let pooled_a = t.matmul(st, ac).unwrap();
            let pooled_a = t.matmul(pooled_a, s).unwrap(); // 3x3
            let norm = t.gcn_normalize(pooled_a).unwrap();
            let padded = t.pad(norm, 4, 4).unwrap();
            let pw = t.param("w", w, 4, 3).unwrap();
            let y = t.matmul(padded, pw).unwrap(); // 4x3
            let sc = t.scale(y, 0.7);
            let cols = padded.into_sub_cols(&mut t);
            let d = t.sub(sc, cols).unwrap();
            let fl = t.flatten(d);
            let logits_w = t.constant(DMatrix::from_fn(12, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin()));
            let logits = t.matmul(fl, logits_w).unwrap();
            let xe = t.softmax_cross_entropy(logits, 1).unwrap();
            let fr = t.frob_norm(y);
            let tot = t.sum(&[xe, fr]).unwrap();
            let tot = t.add(tot, xe).unwrap();
            (t, tot)
        };
        let (tape, root) = build(&w);
        let g = tape.backward(root).unwrap();
        let num = numeric_grad(&w, &|w| {
            let (t, r) = build(w);
            t.scalar(r)
        });
        let err = rel_err(&g.blocks["w"], &num);
        assert!(err < 1e-6, "relative error {err}");
    }

    trait SubCols {
        fn into_sub_cols(self, t: &mut Tape) -> Var;
    }

    impl SubCols for Var {
        /// first three columns of a 4x4 node, via a constant selector
        fn into_sub_cols(self, t: &mut Tape) -> Var {
            let sel = t.constant(DMatrix::from_fn(4, 3, |i, j| if i == j { 1.0 } else { 0.0 }));
            t.matmul(self, sel).unwrap()
        }
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let mut t = Tape::new();
        let p = t.param("used", &a, 2, 2).unwrap();
        t.param("unused", &a, 1, 1).unwrap();
        let r = t.frob_norm(p);
        let g = t.backward(r).unwrap();
        assert_eq!(g.blocks["unused"], DMatrix::zeros(1, 1));
    }

    #[test]
    fn clamped_cross_entropy_is_finite_with_zero_gradient() {
        let mut t = Tape::new();
        let z = DMatrix::from_row_slice(1, 2, &[0.0, 1000.0]);
        let p = t.param("z", &z, 1, 2).unwrap();
        let l = t.softmax_cross_entropy(p, 0).unwrap();
        assert!((t.scalar(l) - (-(PROB_FLOOR.ln()) / 2.0)).abs() < 1e-12);
        let g = t.backward(l).unwrap();
        assert_eq!(g.blocks["z"], DMatrix::zeros(1, 2));
    }

    #[test]
    fn slice_conflict_is_rejected() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let mut t = Tape::new();
        t.param("p", &a, 2, 2).unwrap();
        assert!(t.param("p", &a, 3, 3).is_err());
        assert!(t.param("q", &a, 4, 1).is_err());
    }

    #[test]
    fn gcn_normalize_rejects_nonpositive_rows() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, -2.0, 0.0]);
        assert!(matches!(gcn_normalize(&a), Err(Error::Numeric(_))));
    }
}
