//! Dense tensors with a dynamically recorded backward graph.
//!
//! A [`Tensor`] is a shared handle to a value buffer plus an optional record
//! of the operation that produced it. Calling [`Tensor::backward`] on a
//! scalar walks the recorded graph in reverse topological order and
//! accumulates gradients additively into every reachable tensor that
//! requires them.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

/// Errors raised by tensor construction and shape-checked operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Two operand shapes that were required to agree did not.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A data buffer did not match the product of the requested shape.
    DataLength { shape: Vec<usize>, len: usize },
    /// An index (class label, gather index) was out of range.
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    /// `backward` was called on a non-scalar tensor.
    NotScalar { shape: Vec<usize> },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            TensorError::DataLength { shape, len } => {
                write!(f, "shape {shape:?} requires {} values, got {len}", shape.iter().product::<usize>())
            }
            TensorError::IndexOutOfRange { op, index, bound } => {
                write!(f, "{op}: index {index} out of range for size {bound}")
            }
            TensorError::NotScalar { shape } => {
                write!(f, "backward requires a scalar output, got shape {shape:?}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

type Result<T> = std::result::Result<T, TensorError>;

/// Gradient contributions for each parent of a node, `None` for parents
/// that do not require gradients.
type GradContribs = Vec<Option<Vec<f64>>>;

struct BackwardOp {
    parents: Vec<Tensor>,
    /// Computes per-parent gradient contributions from the output node and
    /// the parent buffers. Must not mutate anything.
    apply: Box<dyn Fn(&TensorInner, &[&TensorInner]) -> GradContribs>,
}

pub(crate) struct TensorInner {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Option<BackwardOp>,
}

/// A dense multi-dimensional `f64` array participating in a backward graph.
///
/// Cloning a `Tensor` clones the handle, not the buffer; all clones share
/// data and gradient. Graphs are built per forward pass and freed when the
/// last handle to their outputs drops. Not thread-safe by design: one
/// training run owns its tensors.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorInner>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("data", &inner.data)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_inner(inner: TensorInner) -> Tensor {
        Tensor { inner: Rc::new(RefCell::new(inner)) }
    }

    /// Constant leaf tensor (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(TensorError::DataLength { shape: shape.to_vec(), len: data.len() });
        }
        Ok(Tensor::from_inner(TensorInner {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
            op: None,
        }))
    }

    /// Trainable leaf tensor: participates in backward and accumulates grad.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(shape, vec![0.0; numel_of(shape)]).expect("zeros")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).expect("scalar")
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Borrowed view of the value buffer.
    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Value of a scalar (1-element) tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        debug_assert_eq!(inner.data.len(), 1, "item() on non-scalar");
        inner.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrites the value buffer (same length required). Used by optimizers
    /// and target-network syncs; never called on tensors inside a live graph.
    pub fn set_data(&self, data: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    pub(crate) fn add_to_grad(&self, contrib: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        let n = inner.data.len();
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        debug_assert_eq!(grad.len(), contrib.len());
        for (g, c) in grad.iter_mut().zip(contrib) {
            *g += c;
        }
    }

    /// A constant leaf with the same values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::from_inner(TensorInner {
            shape: inner.shape.clone(),
            data: inner.data.clone(),
            grad: None,
            requires_grad: false,
            op: None,
        })
    }

    fn ptr_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode pass from a scalar output. Gradients accumulate
    /// additively into every tensor with `requires_grad` reachable from
    /// `self`; call [`Tensor::zero_grad`] between steps.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.inner.borrow();
            if inner.data.len() != 1 {
                return Err(TensorError::NotScalar { shape: inner.shape.clone() });
            }
        }
        self.add_to_grad(&[1.0]);

        // Iterative DFS postorder; reversed it yields a topological order
        // with every node visited before its parents.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.ptr_id()) {
                continue;
            }
            stack.push((node.clone(), true));
            let inner = node.inner.borrow();
            if let Some(op) = &inner.op {
                for p in &op.parents {
                    if p.inner.borrow().requires_grad && !visited.contains(&p.ptr_id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        for node in order.iter().rev() {
            let contribs: Option<(Vec<Tensor>, GradContribs)> = {
                let inner = node.inner.borrow();
                match (&inner.op, &inner.grad) {
                    (Some(op), Some(_)) => {
                        let parent_refs: Vec<Ref<'_, TensorInner>> =
                            op.parents.iter().map(|p| p.inner.borrow()).collect();
                        let parent_views: Vec<&TensorInner> =
                            parent_refs.iter().map(|r| &**r).collect();
                        let grads = (op.apply)(&inner, &parent_views);
                        Some((op.parents.clone(), grads))
                    }
                    _ => None,
                }
            };
            if let Some((parents, grads)) = contribs {
                for (parent, grad) in parents.iter().zip(grads) {
                    if let Some(g) = grad {
                        parent.add_to_grad(&g);
                    }
                }
            }
        }
        Ok(())
    }

    fn make_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        apply: impl Fn(&TensorInner, &[&TensorInner]) -> GradContribs + 'static,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let op = if requires_grad {
            Some(BackwardOp { parents, apply: Box::new(apply) })
        } else {
            None
        };
        Tensor::from_inner(TensorInner { shape, data, grad: None, requires_grad, op })
    }

    fn check_same_shape(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        let a = self.inner.borrow();
        let b = rhs.inner.borrow();
        if a.shape != b.shape {
            return Err(TensorError::ShapeMismatch { op, lhs: a.shape.clone(), rhs: b.shape.clone() });
        }
        Ok(())
    }

    // ---- elementwise binary ----

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_same_shape(rhs, "add")?;
        let (a, b) = (self.inner.borrow(), rhs.inner.borrow());
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
        let shape = a.shape.clone();
        drop(a);
        drop(b);
        Ok(Tensor::make_op(shape, data, vec![self.clone(), rhs.clone()], |out, parents| {
            let g = out.grad.as_ref().unwrap();
            vec![
                parents[0].requires_grad.then(|| g.clone()),
                parents[1].requires_grad.then(|| g.clone()),
            ]
        }))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_same_shape(rhs, "sub")?;
        let (a, b) = (self.inner.borrow(), rhs.inner.borrow());
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
        let shape = a.shape.clone();
        drop(a);
        drop(b);
        Ok(Tensor::make_op(shape, data, vec![self.clone(), rhs.clone()], |out, parents| {
            let g = out.grad.as_ref().unwrap();
            vec![
                parents[0].requires_grad.then(|| g.clone()),
                parents[1].requires_grad.then(|| g.iter().map(|v| -v).collect()),
            ]
        }))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_same_shape(rhs, "mul")?;
        let (a, b) = (self.inner.borrow(), rhs.inner.borrow());
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
        let shape = a.shape.clone();
        drop(a);
        drop(b);
        Ok(Tensor::make_op(shape, data, vec![self.clone(), rhs.clone()], |out, parents| {
            let g = out.grad.as_ref().unwrap();
            vec![
                parents[0]
                    .requires_grad
                    .then(|| g.iter().zip(&parents[1].data).map(|(gv, y)| gv * y).collect()),
                parents[1]
                    .requires_grad
                    .then(|| g.iter().zip(&parents[0].data).map(|(gv, x)| gv * x).collect()),
            ]
        }))
    }

    // ---- scalar affine ----

    pub fn scale(&self, c: f64) -> Tensor {
        let a = self.inner.borrow();
        let data = a.data.iter().map(|x| x * c).collect();
        let shape = a.shape.clone();
        drop(a);
        Tensor::make_op(shape, data, vec![self.clone()], move |out, _| {
            let g = out.grad.as_ref().unwrap();
            vec![Some(g.iter().map(|v| v * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let a = self.inner.borrow();
        let data = a.data.iter().map(|x| x + c).collect();
        let shape = a.shape.clone();
        drop(a);
        Tensor::make_op(shape, data, vec![self.clone()], |out, _| {
            vec![Some(out.grad.as_ref().unwrap().clone())]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    // ---- activations ----

    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        // derivative from (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let a = self.inner.borrow();
        let data: Vec<f64> = a.data.iter().map(|&x| f(x)).collect();
        let shape = a.shape.clone();
        drop(a);
        Tensor::make_op(shape, data, vec![self.clone()], move |out, parents| {
            let g = out.grad.as_ref().unwrap();
            let x = &parents[0].data;
            let y = &out.data;
            vec![Some(
                g.iter().zip(x.iter().zip(y)).map(|(gv, (&xv, &yv))| gv * df(xv, yv)).collect(),
            )]
        })
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// ELU with alpha = 1.
    pub fn elu(&self) -> Tensor {
        self.unary(
            |x| if x > 0.0 { x } else { x.exp() - 1.0 },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(|x| x.tanh(), |_, y| 1.0 - y * y)
    }

    /// Elementwise absolute value; subgradient 0 at the origin.
    pub fn abs(&self) -> Tensor {
        self.unary(|x| x.abs(), |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    // ---- matrix ops ----

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let inner = self.inner.borrow();
        match inner.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::ShapeMismatch {
                op,
                lhs: inner.shape.clone(),
                rhs: vec![],
            }),
        }
    }

    /// Standard matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let a = self.inner.borrow();
        let b = rhs.inner.borrow();
        let data = matmul_raw(&a.data, &b.data, m, k, n);
        drop(a);
        drop(b);
        Ok(Tensor::make_op(vec![m, n], data, vec![self.clone(), rhs.clone()], move |out, parents| {
            let g = out.grad.as_ref().unwrap();
            let a = &parents[0].data;
            let b = &parents[1].data;
            // dA = g . B^T, dB = A^T . g
            let da = parents[0].requires_grad.then(|| {
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let darow = &mut da[i * k..(i + 1) * k];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        let mut s = 0.0;
                        for j in 0..n {
                            s += grow[j] * brow[j];
                        }
                        darow[p] = s;
                    }
                }
                da
            });
            let db = parents[1].requires_grad.then(|| {
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let arow = &a[i * k..(i + 1) * k];
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let ap = arow[p];
                        if ap == 0.0 {
                            continue;
                        }
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for j in 0..n {
                            dbrow[j] += ap * grow[j];
                        }
                    }
                }
                db
            });
            vec![da, db]
        }))
    }

    /// Adds a `[n]` bias vector to every row of a `[m,n]` matrix.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = self.dims2("add_bias")?;
        {
            let b = bias.inner.borrow();
            if b.shape != [n] {
                return Err(TensorError::ShapeMismatch {
                    op: "add_bias",
                    lhs: vec![m, n],
                    rhs: b.shape.clone(),
                });
            }
        }
        let a = self.inner.borrow();
        let b = bias.inner.borrow();
        let mut data = a.data.clone();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(&b.data) {
                *v += bv;
            }
        }
        drop(a);
        drop(b);
        Ok(Tensor::make_op(vec![m, n], data, vec![self.clone(), bias.clone()], move |out, parents| {
            let g = out.grad.as_ref().unwrap();
            let da = parents[0].requires_grad.then(|| g.clone());
            let db = parents[1].requires_grad.then(|| {
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    for (d, gv) in db.iter_mut().zip(row) {
                        *d += gv;
                    }
                }
                db
            });
            vec![da, db]
        }))
    }

    /// Row-batched vector-matrix product: row `r` of `v` (`[rows,n]`) times
    /// the `[n,h]` matrix stored flat in row `r` of `m` (`[rows,n*h]`),
    /// yielding `[rows,h]`. This is how hypernetwork-generated weights are
    /// applied per sample.
    pub fn batch_vec_mat(&self, mats: &Tensor, h: usize) -> Result<Tensor> {
        let (rows, n) = self.dims2("batch_vec_mat")?;
        let (rows2, nh) = mats.dims2("batch_vec_mat")?;
        if rows != rows2 || nh != n * h {
            return Err(TensorError::ShapeMismatch {
                op: "batch_vec_mat",
                lhs: vec![rows, n],
                rhs: vec![rows2, nh],
            });
        }
        let v = self.inner.borrow();
        let m = mats.inner.borrow();
        let mut data = vec![0.0; rows * h];
        for r in 0..rows {
            let vr = &v.data[r * n..(r + 1) * n];
            let mr = &m.data[r * n * h..(r + 1) * n * h];
            let or = &mut data[r * h..(r + 1) * h];
            for i in 0..n {
                let vi = vr[i];
                let mrow = &mr[i * h..(i + 1) * h];
                for j in 0..h {
                    or[j] += vi * mrow[j];
                }
            }
        }
        drop(v);
        drop(m);
        Ok(Tensor::make_op(vec![rows, h], data, vec![self.clone(), mats.clone()], move |out, parents| {
            let g = out.grad.as_ref().unwrap();
            let v = &parents[0].data;
            let m = &parents[1].data;
            let dv = parents[0].requires_grad.then(|| {
                let mut dv = vec![0.0; rows * n];
                for r in 0..rows {
                    let gr = &g[r * h..(r + 1) * h];
                    let mr = &m[r * n * h..(r + 1) * n * h];
                    let dvr = &mut dv[r * n..(r + 1) * n];
                    for i in 0..n {
                        let mrow = &mr[i * h..(i + 1) * h];
                        let mut s = 0.0;
                        for j in 0..h {
                            s += gr[j] * mrow[j];
                        }
                        dvr[i] = s;
                    }
                }
                dv
            });
            let dm = parents[1].requires_grad.then(|| {
                let mut dm = vec![0.0; rows * n * h];
                for r in 0..rows {
                    let gr = &g[r * h..(r + 1) * h];
                    let vr = &v[r * n..(r + 1) * n];
                    let dmr = &mut dm[r * n * h..(r + 1) * n * h];
                    for i in 0..n {
                        let vi = vr[i];
                        let dmrow = &mut dmr[i * h..(i + 1) * h];
                        for j in 0..h {
                            dmrow[j] = vi * gr[j];
                        }
                    }
                }
                dm
            });
            vec![dv, dm]
        }))
    }

    /// Picks one column per row: `out[r,0] = a[r, idx[r]]`.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (rows, cols) = self.dims2("gather_rows")?;
        if idx.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                lhs: vec![rows, cols],
                rhs: vec![idx.len()],
            });
        }
        for &i in idx {
            if i >= cols {
                return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: i, bound: cols });
            }
        }
        let a = self.inner.borrow();
        let data: Vec<f64> = idx.iter().enumerate().map(|(r, &i)| a.data[r * cols + i]).collect();
        drop(a);
        let idx_owned = idx.to_vec();
        Ok(Tensor::make_op(vec![rows, 1], data, vec![self.clone()], move |out, _| {
            let g = out.grad.as_ref().unwrap();
            let mut da = vec![0.0; rows * cols];
            for (r, &i) in idx_owned.iter().enumerate() {
                da[r * cols + i] += g[r];
            }
            vec![Some(da)]
        }))
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn hcat(parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "hcat of zero tensors");
        let (rows, _) = parts[0].dims2("hcat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2("hcat")?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "hcat",
                    lhs: parts[0].shape(),
                    rhs: p.shape(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = p.inner.borrow();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src.data[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let widths_owned = widths.clone();
        Ok(Tensor::make_op(vec![rows, total], data, parts.to_vec(), move |out, parents| {
            let g = out.grad.as_ref().unwrap();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(parents.len());
            for (p, &w) in parents.iter().zip(&widths_owned) {
                let gp = p.requires_grad.then(|| {
                    let mut dv = vec![0.0; rows * w];
                    for r in 0..rows {
                        dv[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    dv
                });
                grads.push(gp);
                offset += w;
            }
            grads
        }))
    }

    /// First `k` rows of a matrix; backward pads the dropped rows with
    /// zeros. Used to shrink recurrent state as padded episodes expire.
    pub fn slice_rows(&self, k: usize) -> Result<Tensor> {
        let (m, cols) = self.dims2("slice_rows")?;
        if k > m {
            return Err(TensorError::IndexOutOfRange { op: "slice_rows", index: k, bound: m });
        }
        let a = self.inner.borrow();
        let data = a.data[..k * cols].to_vec();
        drop(a);
        Ok(Tensor::make_op(vec![k, cols], data, vec![self.clone()], move |out, _| {
            let g = out.grad.as_ref().unwrap();
            let mut da = vec![0.0; m * cols];
            da[..k * cols].copy_from_slice(g);
            vec![Some(da)]
        }))
    }

    /// Same buffer reinterpreted under a new shape (data copied).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let inner = self.inner.borrow();
        if numel_of(shape) != inner.data.len() {
            return Err(TensorError::DataLength { shape: shape.to_vec(), len: inner.data.len() });
        }
        let data = inner.data.clone();
        drop(inner);
        Ok(Tensor::make_op(shape.to_vec(), data, vec![self.clone()], |out, _| {
            vec![Some(out.grad.as_ref().unwrap().clone())]
        }))
    }

    // ---- reductions ----

    pub fn sum(&self) -> Tensor {
        let a = self.inner.borrow();
        let s: f64 = a.data.iter().sum();
        let n = a.data.len();
        drop(a);
        Tensor::make_op(vec![1], vec![s], vec![self.clone()], move |out, _| {
            let g = out.grad.as_ref().unwrap()[0];
            vec![Some(vec![g; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums each row of a `[m,n]` matrix into a `[m,1]` column.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("sum_rows")?;
        let a = self.inner.borrow();
        let data: Vec<f64> = a.data.chunks(n).map(|row| row.iter().sum()).collect();
        drop(a);
        Ok(Tensor::make_op(vec![m, 1], data, vec![self.clone()], move |out, _| {
            let g = out.grad.as_ref().unwrap();
            let mut da = vec![0.0; m * n];
            for r in 0..m {
                da[r * n..(r + 1) * n].fill(g[r]);
            }
            vec![Some(da)]
        }))
    }

    // ---- softmax family ----

    /// Softmax along the last axis (rows of a matrix, or a whole vector),
    /// stabilized by max subtraction.
    pub fn softmax(&self) -> Tensor {
        let a = self.inner.borrow();
        let width = *a.shape.last().expect("softmax on empty shape");
        let mut data = a.data.clone();
        for row in data.chunks_mut(width) {
            softmax_in_place(row);
        }
        let shape = a.shape.clone();
        drop(a);
        Tensor::make_op(shape, data, vec![self.clone()], move |out, _| {
            let g = out.grad.as_ref().unwrap();
            let p = &out.data;
            let mut dx = vec![0.0; g.len()];
            for r in 0..g.len() / width {
                let gr = &g[r * width..(r + 1) * width];
                let pr = &p[r * width..(r + 1) * width];
                let dot: f64 = gr.iter().zip(pr).map(|(gv, pv)| gv * pv).sum();
                let dr = &mut dx[r * width..(r + 1) * width];
                for j in 0..width {
                    dr[j] = pr[j] * (gr[j] - dot);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Softmax of the negated input.
    pub fn softmin(&self) -> Tensor {
        self.neg().softmax()
    }

    /// Per-row cross-entropy against integer class targets, in log-sum-exp
    /// form: `out[r] = logsumexp(logits[r]) - logits[r][target[r]]`.
    /// Returns a `[rows,1]` column.
    pub fn cross_entropy_rows(&self, targets: &[usize]) -> Result<Tensor> {
        let (rows, cols) = self.dims2("cross_entropy_rows")?;
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy_rows",
                lhs: vec![rows, cols],
                rhs: vec![targets.len()],
            });
        }
        for &t in targets {
            if t >= cols {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy_rows",
                    index: t,
                    bound: cols,
                });
            }
        }
        let a = self.inner.borrow();
        let mut data = Vec::with_capacity(rows);
        for (r, &t) in targets.iter().enumerate() {
            let row = &a.data[r * cols..(r + 1) * cols];
            data.push(log_sum_exp(row) - row[t]);
        }
        drop(a);
        let targets_owned = targets.to_vec();
        Ok(Tensor::make_op(vec![rows, 1], data, vec![self.clone()], move |out, parents| {
            let g = out.grad.as_ref().unwrap();
            let x = &parents[0].data;
            let mut dx = vec![0.0; rows * cols];
            for (r, &t) in targets_owned.iter().enumerate() {
                let row = &x[r * cols..(r + 1) * cols];
                let dr = &mut dx[r * cols..(r + 1) * cols];
                dr.copy_from_slice(row);
                softmax_in_place(dr);
                dr[t] -= 1.0;
                for v in dr.iter_mut() {
                    *v *= g[r];
                }
            }
            vec![Some(dx)]
        }))
    }
}

/// Stabilized in-place softmax of one row.
fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &ap) in arow.iter().enumerate() {
            if ap == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += ap * brow[j];
            }
        }
    }
    out
}

/// Softmax and softmin of the same logits: the softmin of `x` is the
/// softmax of `-x`, so the most probable action under one is the least
/// probable under the other.
pub fn softmax_and_softmin(logits: &Tensor) -> (Tensor, Tensor) {
    (logits.softmax(), logits.softmin())
}

/// Negative log-softmax of one class for a 1-D logit vector.
pub fn cross_entropy(logits: &Tensor, target_index: usize) -> Result<Tensor> {
    let shape = logits.shape();
    let n = *shape.last().unwrap_or(&0);
    if shape.len() != 1 {
        return Err(TensorError::ShapeMismatch { op: "cross_entropy", lhs: shape, rhs: vec![] });
    }
    if target_index >= n {
        return Err(TensorError::IndexOutOfRange { op: "cross_entropy", index: target_index, bound: n });
    }
    let ce = logits.reshape(&[1, n])?.cross_entropy_rows(&[target_index])?;
    ce.reshape(&[1])
}

/// Mean squared error between two same-shape tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let diff = a.sub(b)?;
    Ok(diff.mul(&diff)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    fn p(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::param(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let out = eye.matmul(&m).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projector() {
        let proj = t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let m = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let out = proj.matmul(&m).unwrap();
        assert_eq!(out.to_vec(), vec![5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let (p0, a0) = softmax_and_softmin(&t(&[3], &[0.0, 0.0, 0.0]));
        for v in p0.to_vec().iter().chain(a0.to_vec().iter()) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let (probs, anti) = softmax_and_softmin(&t(&[2], &[2.0f64.ln(), 0.0]));
        let pv = probs.to_vec();
        let av = anti.to_vec();
        assert!((pv[0] - 2.0 / 3.0).abs() < 1e-12 && (pv[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((av[0] - 1.0 / 3.0).abs() < 1e-12 && (av[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_handles_huge_logits() {
        let (probs, anti) = softmax_and_softmin(&t(&[2], &[1e6, -1e6]));
        assert!((probs.to_vec()[0] - 1.0).abs() < 1e-12);
        assert!((anti.to_vec()[1] - 1.0).abs() < 1e-12);
        assert!(probs.to_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_examples() {
        let ce = cross_entropy(&t(&[3], &[0.0, 0.0, 0.0]), 1).unwrap();
        assert!((ce.item() - 3.0f64.ln()).abs() < 1e-12);
        let ce = cross_entropy(&t(&[2], &[10.0, -10.0]), 0).unwrap();
        assert!((ce.item() - (1.0 + (-20.0f64).exp()).ln()).abs() < 1e-15);
        assert!(ce.item() > 0.0 && ce.item() < 3e-9);
        let ce = cross_entropy(&t(&[2], &[0.0, 3.0f64.ln()]), 0).unwrap();
        assert!((ce.item() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_index_error() {
        assert!(cross_entropy(&t(&[3], &[0.0; 3]), 3).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = t(&[2], &[1.0, 2.0]);
        assert_eq!(mse(&a, &a).unwrap().item(), 0.0);
        let b = t(&[2], &[1.0, 4.0]);
        assert_eq!(mse(&a, &b).unwrap().item(), 2.0);
    }

    #[test]
    fn grad_accumulates_across_reuse() {
        // y = x*x + x => dy/dx = 2x + 1
        let x = p(&[1], &[3.0]);
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let x = p(&[2], &[1.0, 2.0]);
        assert!(matches!(x.backward(), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = p(&[1], &[2.0]);
        let y = x.mul(&x).unwrap().detach();
        let z = y.scale(3.0).sum();
        z.backward().unwrap();
        assert!(x.grad().is_none());
    }

    #[test]
    fn two_layer_chain_matches_hand_jacobian() {
        // Scalar chain y = sigmoid(w2 * tanh(w1 * x)): the backward pass must
        // equal the product of the per-op Jacobians computed by hand.
        let (w1v, w2v, xv) = (0.7, -1.3, 0.9);
        let w1 = p(&[1, 1], &[w1v]);
        let w2 = p(&[1, 1], &[w2v]);
        let x = t(&[1, 1], &[xv]);
        let h = x.matmul(&w1).unwrap().tanh();
        let y = h.matmul(&w2).unwrap().sigmoid().sum();
        y.backward().unwrap();

        let hval = (w1v * xv).tanh();
        let yval = 1.0 / (1.0 + (-(w2v * hval)).exp());
        let dy_dw2 = yval * (1.0 - yval) * hval;
        let dy_dw1 = yval * (1.0 - yval) * w2v * (1.0 - hval * hval) * xv;
        assert!((w2.grad().unwrap()[0] - dy_dw2).abs() < 1e-12);
        assert!((w1.grad().unwrap()[0] - dy_dw1).abs() < 1e-12);
    }
}
