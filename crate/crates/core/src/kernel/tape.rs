use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{log_sigmoid, sigmoid, Array, KernelError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `scale * a + shift`; only the scale matters for the gradient.
    Affine(usize, f64),
    MulConst(usize, Vec<f64>),
    Exp(usize),
    Sigmoid(usize),
    Tanh(usize),
    LogSigmoid(usize),
    LnClamped { a: usize, lo: f64, hi: f64 },
    /// `W x` with `W: [out][in]`.
    MatVec(usize, usize),
    /// `M^T x` with `M: [rows][cols]`, `x: [rows]`.
    MatTVec(usize, usize),
    Row(usize, usize),
    Index(usize, usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Dot(usize, usize),
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
}

/// Records primitive operations so reverse-mode gradients of a scalar can be
/// taken with respect to every registered parameter.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// reverse topological traversal. Shape errors inside primitives are
/// programming errors and panic; the layer functions in this module validate
/// user-facing shapes before recording anything.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(String, usize)>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients keyed by registered parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Array>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Array> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, name: String, grad: Array) {
        self.map.insert(name, grad);
    }

    /// Adds `other` into `self`, inserting names not yet present.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.map.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.map.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Array::is_finite)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Vec<f64>, shape: Vec<usize>, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, shape, op });
        Var {
            tape: self.id,
            idx: nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable recorded on a different tape");
        v.idx
    }

    fn node(&self, v: Var) -> Ref<'_, Node> {
        let idx = self.check(v);
        Ref::map(self.nodes.borrow(), |n| &n[idx])
    }

    /// Records a constant; it never receives a gradient.
    pub fn constant(&self, a: &Array) -> Var {
        self.push(a.data().to_vec(), a.shape().to_vec(), Op::Leaf)
    }

    pub fn constant_vec(&self, data: Vec<f64>) -> Var {
        let shape = vec![data.len()];
        self.push(data, shape, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.push(vec![value], vec![1], Op::Leaf)
    }

    /// Records a named trainable parameter.
    pub fn param(&self, name: &str, a: &Array) -> Var {
        let v = self.constant(a);
        let mut params = self.params.borrow_mut();
        assert!(
            params.iter().all(|(n, _)| n != name),
            "parameter {name} registered twice"
        );
        params.push((name.to_string(), v.idx));
        v
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.node(v).value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.node(v).value)
    }

    pub fn item(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "item() on a non-scalar");
        n.value[0]
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.node(v).shape.clone()
    }

    pub fn dim(&self, v: Var) -> usize {
        self.node(v).value.len()
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Var {
        let ia = self.check(a);
        let (value, shape) = {
            let n = self.node(a);
            (n.value.iter().map(|&x| f(x)).collect(), n.shape.clone())
        };
        self.push(value, shape, op(ia))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (value, shape) = {
            let na = self.node(a);
            let nb = self.node(b);
            assert_eq!(
                na.value.len(),
                nb.value.len(),
                "{name}: operand lengths differ"
            );
            (
                na.value
                    .iter()
                    .zip(&nb.value)
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
                na.shape.clone(),
            )
        };
        self.push(value, shape, op(ia, ib))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    /// Sum of several same-length values.
    pub fn add_all(&self, terms: &[Var]) -> Var {
        let (first, rest) = terms.split_first().expect("add_all of nothing");
        rest.iter().fold(*first, |acc, &t| self.add(acc, t))
    }

    pub fn affine(&self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, |x| scale * x + shift, |i| Op::Affine(i, scale))
    }

    pub fn scale(&self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    pub fn one_minus(&self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    /// Elementwise product with a constant vector.
    pub fn mul_const(&self, a: Var, c: &[f64]) -> Var {
        let ia = self.check(a);
        let (value, shape) = {
            let n = self.node(a);
            assert_eq!(n.value.len(), c.len(), "mul_const: length mismatch");
            (
                n.value.iter().zip(c).map(|(x, y)| x * y).collect(),
                n.shape.clone(),
            )
        };
        self.push(value, shape, Op::MulConst(ia, c.to_vec()))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn log_sigmoid(&self, a: Var) -> Var {
        self.unary(a, log_sigmoid, Op::LogSigmoid)
    }

    /// `ln(clamp(a, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi).ln(), |i| Op::LnClamped { a: i, lo, hi })
    }

    pub fn matvec(&self, w: Var, x: Var) -> Var {
        let (iw, ix) = (self.check(w), self.check(x));
        let value = {
            let nw = self.node(w);
            let nx = self.node(x);
            assert_eq!(nw.shape.len(), 2, "matvec: weight must be 2-D");
            let (rows, cols) = (nw.shape[0], nw.shape[1]);
            assert_eq!(cols, nx.value.len(), "matvec: inner dimension mismatch");
            (0..rows)
                .map(|r| {
                    nw.value[r * cols..(r + 1) * cols]
                        .iter()
                        .zip(&nx.value)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect::<Vec<f64>>()
        };
        let shape = vec![value.len()];
        self.push(value, shape, Op::MatVec(iw, ix))
    }

    /// `M^T x`: weighted sum of the rows of `m`.
    pub fn mat_t_vec(&self, m: Var, x: Var) -> Var {
        let (im, ix) = (self.check(m), self.check(x));
        let value = {
            let nm = self.node(m);
            let nx = self.node(x);
            assert_eq!(nm.shape.len(), 2, "mat_t_vec: matrix must be 2-D");
            let (rows, cols) = (nm.shape[0], nm.shape[1]);
            assert_eq!(rows, nx.value.len(), "mat_t_vec: row count mismatch");
            let mut out = vec![0.0; cols];
            for (r, &w) in nx.value.iter().enumerate() {
                if w != 0.0 {
                    for (o, &v) in out.iter_mut().zip(&nm.value[r * cols..(r + 1) * cols]) {
                        *o += w * v;
                    }
                }
            }
            out
        };
        let shape = vec![value.len()];
        self.push(value, shape, Op::MatTVec(im, ix))
    }

    pub fn row(&self, m: Var, i: usize) -> Var {
        let im = self.check(m);
        let value = {
            let n = self.node(m);
            assert_eq!(n.shape.len(), 2, "row: matrix must be 2-D");
            let cols = n.shape[1];
            assert!(i < n.shape[0], "row: index out of range");
            n.value[i * cols..(i + 1) * cols].to_vec()
        };
        let shape = vec![value.len()];
        self.push(value, shape, Op::Row(im, i))
    }

    pub fn index(&self, a: Var, i: usize) -> Var {
        let ia = self.check(a);
        let value = self.node(a).value[i];
        self.push(vec![value], vec![1], Op::Index(ia, i))
    }

    pub fn concat(&self, parts: &[Var]) -> Var {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect();
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(&self.node(p).value);
        }
        let shape = vec![value.len()];
        self.push(value, shape, Op::Concat(idx))
    }

    pub fn slice(&self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.check(a);
        let value = self.node(a).value[start..start + len].to_vec();
        self.push(value, vec![len], Op::Slice(ia, start))
    }

    pub fn dot(&self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let value = {
            let na = self.node(a);
            let nb = self.node(b);
            assert_eq!(na.value.len(), nb.value.len(), "dot: length mismatch");
            na.value.iter().zip(&nb.value).map(|(x, y)| x * y).sum()
        };
        self.push(vec![value], vec![1], Op::Dot(ia, ib))
    }

    pub fn sum(&self, a: Var) -> Var {
        let ia = self.check(a);
        let value = self.node(a).value.iter().sum();
        self.push(vec![value], vec![1], Op::Sum(ia))
    }

    /// Reverse-mode pass from a scalar `loss`.
    ///
    /// Every registered parameter appears in the result; parameters the loss
    /// does not depend on get a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients, KernelError> {
        if loss.tape != self.id {
            return Err(KernelError::UntracedNode);
        }
        let nodes = self.nodes.borrow();
        let root = loss.idx;
        if root >= nodes.len() {
            return Err(KernelError::UntracedNode);
        }
        if nodes[root].value.len() != 1 {
            return Err(KernelError::NotScalar {
                len: nodes[root].value.len(),
            });
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![1.0]);

        fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> &'g mut Vec<f64> {
            grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()])
        }

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, &nodes, *a), &g, 1.0);
                    add_into(acc(&mut grads, &nodes, *b), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, &nodes, *a), &g, 1.0);
                    add_into(acc(&mut grads, &nodes, *b), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let ga = acc(&mut grads, &nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * vb[k];
                    }
                    let gb = acc(&mut grads, &nodes, *b);
                    for k in 0..g.len() {
                        gb[k] += g[k] * va[k];
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let ga = acc(&mut grads, &nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] / vb[k];
                    }
                    let gb = acc(&mut grads, &nodes, *b);
                    for k in 0..g.len() {
                        gb[k] -= g[k] * va[k] / (vb[k] * vb[k]);
                    }
                }
                Op::Affine(a, s) => add_into(acc(&mut grads, &nodes, *a), &g, *s),
                Op::MulConst(a, c) => {
                    let ga = acc(&mut grads, &nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * c[k];
                    }
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let ga = acc(&mut grads, &nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k];
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = acc(&mut grads, &nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = acc(&mut grads, &nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::LogSigmoid(a) => {
                    let x = &nodes[*a].value;
                    let ga = acc(&mut grads, &nodes, *a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * sigmoid(-x[k]);
                    }
                }
                Op::LnClamped { a, lo, hi } => {
                    let x = &nodes[*a].value;
                    let ga = acc(&mut grads, &nodes, *a);
                    for k in 0..g.len() {
                        if x[k] >= *lo && x[k] <= *hi {
                            ga[k] += g[k] / x[k];
                        }
                    }
                }
                Op::MatVec(w, x) => {
                    let cols = nodes[*w].shape[1];
                    let (vw, vx) = (&nodes[*w].value, &nodes[*x].value);
                    let gw = acc(&mut grads, &nodes, *w);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            for (dst, &xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(vx) {
                                *dst += gr * xv;
                            }
                        }
                    }
                    let gx = acc(&mut grads, &nodes, *x);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            for (dst, &wv) in gx.iter_mut().zip(&vw[r * cols..(r + 1) * cols]) {
                                *dst += gr * wv;
                            }
                        }
                    }
                }
                Op::MatTVec(m, x) => {
                    let cols = nodes[*m].shape[1];
                    let (vm, vx) = (&nodes[*m].value, &nodes[*x].value);
                    let gm = acc(&mut grads, &nodes, *m);
                    for (r, &xr) in vx.iter().enumerate() {
                        if xr != 0.0 {
                            for (dst, &gc) in gm[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                                *dst += xr * gc;
                            }
                        }
                    }
                    let gx = acc(&mut grads, &nodes, *x);
                    for (r, dst) in gx.iter_mut().enumerate() {
                        *dst += vm[r * cols..(r + 1) * cols]
                            .iter()
                            .zip(&g)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                Op::Row(m, row) => {
                    let cols = nodes[*m].shape[1];
                    let gm = acc(&mut grads, &nodes, *m);
                    add_into(&mut gm[row * cols..(row + 1) * cols], &g, 1.0);
                }
                Op::Index(a, k) => {
                    acc(&mut grads, &nodes, *a)[*k] += g[0];
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = nodes[p].value.len();
                        add_into(acc(&mut grads, &nodes, p), &g[offset..offset + n], 1.0);
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let ga = acc(&mut grads, &nodes, *a);
                    add_into(&mut ga[*start..*start + g.len()], &g, 1.0);
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    add_into(acc(&mut grads, &nodes, *a), vb, g[0]);
                    add_into(acc(&mut grads, &nodes, *b), va, g[0]);
                }
                Op::Sum(a) => {
                    for v in acc(&mut grads, &nodes, *a).iter_mut() {
                        *v += g[0];
                    }
                }
            }
        }

        let mut out = Gradients::default();
        for (name, idx) in self.params.borrow().iter() {
            let shape = nodes[*idx].shape.clone();
            let data = grads[*idx]
                .take()
                .unwrap_or_else(|| vec![0.0; nodes[*idx].value.len()]);
            out.insert(name.clone(), Array::new(shape, data)?);
        }
        Ok(out)
    }
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}
