//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Tensors form an immutable DAG: every operation allocates a new node that
//! keeps `Rc` handles to its inputs plus a backward closure. Calling
//! [`Tensor::backward`] on a scalar walks the graph in reverse topological
//! order and accumulates gradients into every reachable [`Parameter`].
//!
//! Any non-finite value produced by a forward or backward pass is a hard
//! error naming the producing op. Forward and backward are deterministic:
//! kernels accumulate in a fixed per-element order regardless of threading.

mod check;
mod linalg;

pub use check::{finite_difference_check, FdReport};

#[doc(hidden)]
pub use linalg::matmul_nn as bench_matmul_nn;
#[doc(hidden)]
pub use linalg::matmul_tn as bench_matmul_tn;

use crate::error::{FaorError, Result};
use crate::resample::CompiledTaps;
use crate::scalar::Scalar;
use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Epsilon inside the layer-norm variance square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

type BackwardFn<T> = Box<dyn Fn(&[T], &Node<T>) -> Result<()>>;

struct Node<T: Scalar> {
    id: u64,
    op: &'static str,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    backward_done: Cell<bool>,
}

/// Handle to one node of the computation graph.
#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("op", &self.node.op)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        Err(FaorError::NonFinite { op })
    } else {
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    fn make(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        check_finite(op, &data)?;
        let requires_grad = requires_grad || parents.iter().any(|p| p.node.requires_grad);
        Ok(Self {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                op,
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                parents,
                backward,
                requires_grad,
                backward_done: Cell::new(false),
            }),
        })
    }

    /// Constant leaf (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(FaorError::ShapeMismatch {
                op: "from_vec",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Self::make("leaf", shape.to_vec(), data, vec![], None, false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::make("leaf", shape.to_vec(), vec![T::zero(); n], vec![], None, false)
            .expect("zeros are finite")
    }

    pub fn scalar(v: T) -> Result<Self> {
        Self::from_vec(&[1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    /// Name of the operation that produced this tensor.
    pub fn op_name(&self) -> &'static str {
        self.node.op
    }

    pub fn len(&self) -> usize {
        self.node.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<T> {
        let d = self.node.data.borrow();
        if d.len() != 1 {
            return Err(FaorError::invalid(format!(
                "item() on tensor of {} elements",
                d.len()
            )));
        }
        Ok(d[0])
    }

    /// Leaf copy of this tensor's values, detached from the graph.
    pub fn detach(&self) -> Tensor<T> {
        Self::make(
            "leaf",
            self.node.shape.clone(),
            self.to_vec(),
            vec![],
            None,
            false,
        )
        .expect("detached values already checked")
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Overwrite the values of a leaf tensor (parameter updates).
    pub fn set_data(&self, values: &[T]) -> Result<()> {
        let mut d = self.node.data.borrow_mut();
        if d.len() != values.len() {
            return Err(FaorError::ShapeMismatch {
                op: "set_data",
                expected: vec![d.len()],
                got: vec![values.len()],
            });
        }
        check_finite("set_data", values)?;
        d.copy_from_slice(values);
        Ok(())
    }

    /// Add a gradient contribution. The first contribution is stored by
    /// copy/move without a zeroing pass; later ones accumulate element-wise.
    /// Non-finite gradients surface at the optimizer, which re-checks.
    fn accumulate(&self, contrib: &[T], _op: &'static str) -> Result<()> {
        if !self.node.requires_grad {
            return Ok(());
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            None => *slot = Some(contrib.to_vec()),
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib.iter()) {
                    *a = *a + *b;
                }
            }
        }
        Ok(())
    }

    /// [`Tensor::accumulate`] taking ownership: the common single-consumer
    /// case moves the buffer instead of copying.
    fn accumulate_owned(&self, contrib: Vec<T>, _op: &'static str) -> Result<()> {
        if !self.node.requires_grad {
            return Ok(());
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            None => *slot = Some(contrib),
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib.iter()) {
                    *a = *a + *b;
                }
            }
        }
        Ok(())
    }

    /// Reverse-mode pass from a scalar: populates gradients on every
    /// reachable parameter. A graph can be backpropagated once; build a new
    /// forward pass for the next step.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(FaorError::invalid(format!(
                "backward on non-scalar tensor of shape {:?}",
                self.node.shape
            )));
        }
        if !self.node.requires_grad {
            return Err(FaorError::invalid(
                "backward on a graph with no differentiable leaves",
            ));
        }
        if self.node.backward_done.get() {
            return Err(FaorError::invalid(
                "graph already backpropagated; rebuild the forward pass",
            ));
        }
        self.node.backward_done.set(true);

        // reverse postorder = topological order from loss to leaves
        let mut visited: HashSet<u64> = HashSet::new();
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.node.id) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.node.parents {
                if p.node.requires_grad && !visited.contains(&p.node.id) {
                    stack.push((p.clone(), false));
                }
            }
        }

        *self.node.grad.borrow_mut() = Some(vec![T::one()]);
        for t in order.iter().rev() {
            if let Some(bf) = &t.node.backward {
                // intermediate grads are consumed by the backward fn; only
                // leaves keep theirs
                let grad = t.node.grad.borrow_mut().take();
                let Some(grad) = grad else { continue };
                bf(&grad, &t.node)?;
            }
        }
        Ok(())
    }
}

/// Resolve the broadcast of `b` onto `a`: `b`'s shape (with leading 1s
/// stripped) must be a suffix of `a`'s shape. Returns the suffix length.
fn broadcast_suffix<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<usize> {
    let bs: Vec<usize> = b
        .node
        .shape
        .iter()
        .copied()
        .skip_while(|&d| d == 1)
        .collect();
    let ashape = &a.node.shape;
    if bs.len() > ashape.len() || ashape[ashape.len() - bs.len()..] != bs[..] {
        return Err(FaorError::ShapeMismatch {
            op,
            expected: ashape.clone(),
            got: b.node.shape.clone(),
        });
    }
    Ok(bs.iter().product())
}

impl<T: Scalar> Tensor<T> {
    /// Element-wise sum; `b` broadcasts over leading axes.
    pub fn add(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let blen = broadcast_suffix("add", self, b)?;
        let out: Vec<T> = {
            let da = self.node.data.borrow();
            let db = b.node.data.borrow();
            da.chunks(blen)
                .flat_map(|ch| ch.iter().zip(db.iter()).map(|(&x, &y)| x + y))
                .collect()
        };
        let pa = self.clone();
        let pb = b.clone();
        Tensor::make(
            "add",
            self.node.shape.clone(),
            out,
            vec![self.clone(), b.clone()],
            Some(Box::new(move |g, _| {
                pa.accumulate(g, "add.backward")?;
                if pb.node.requires_grad {
                    let mut gb = vec![T::zero(); blen];
                    for ch in g.chunks(blen) {
                        for (o, &v) in gb.iter_mut().zip(ch.iter()) {
                            *o = *o + v;
                        }
                    }
                    pb.accumulate(&gb, "add.backward")?;
                }
                Ok(())
            })),
            false,
        )
    }

    /// Element-wise difference (same shapes).
    pub fn sub(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        if self.node.shape != b.node.shape {
            return Err(FaorError::ShapeMismatch {
                op: "sub",
                expected: self.node.shape.clone(),
                got: b.node.shape.clone(),
            });
        }
        let out: Vec<T> = {
            let da = self.node.data.borrow();
            let db = b.node.data.borrow();
            da.iter().zip(db.iter()).map(|(&x, &y)| x - y).collect()
        };
        let pa = self.clone();
        let pb = b.clone();
        Tensor::make(
            "sub",
            self.node.shape.clone(),
            out,
            vec![self.clone(), b.clone()],
            Some(Box::new(move |g, _| {
                pa.accumulate(g, "sub.backward")?;
                if pb.node.requires_grad {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    pb.accumulate(&neg, "sub.backward")?;
                }
                Ok(())
            })),
            false,
        )
    }

    /// Element-wise product; `b` broadcasts over leading axes.
    pub fn mul(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let blen = broadcast_suffix("mul", self, b)?;
        let out: Vec<T> = {
            let da = self.node.data.borrow();
            let db = b.node.data.borrow();
            da.chunks(blen)
                .flat_map(|ch| ch.iter().zip(db.iter()).map(|(&x, &y)| x * y))
                .collect()
        };
        let pa = self.clone();
        let pb = b.clone();
        Tensor::make(
            "mul",
            self.node.shape.clone(),
            out,
            vec![self.clone(), b.clone()],
            Some(Box::new(move |g, _| {
                if pa.node.requires_grad {
                    let db = pb.node.data.borrow();
                    let ga: Vec<T> = g
                        .chunks(blen)
                        .flat_map(|ch| ch.iter().zip(db.iter()).map(|(&gv, &bv)| gv * bv))
                        .collect();
                    pa.accumulate(&ga, "mul.backward")?;
                }
                if pb.node.requires_grad {
                    let da = pa.node.data.borrow();
                    let mut gb = vec![T::zero(); blen];
                    for (gch, ach) in g.chunks(blen).zip(da.chunks(blen)) {
                        for ((o, &gv), &av) in gb.iter_mut().zip(gch.iter()).zip(ach.iter()) {
                            *o = *o + gv * av;
                        }
                    }
                    pb.accumulate(&gb, "mul.backward")?;
                }
                Ok(())
            })),
            false,
        )
    }

    /// Multiply by a scalar constant.
    pub fn scale(&self, c: f64) -> Result<Tensor<T>> {
        let cv = T::from_f64(c);
        let out: Vec<T> = self.node.data.borrow().iter().map(|&x| x * cv).collect();
        let pa = self.clone();
        Tensor::make(
            "scale",
            self.node.shape.clone(),
            out,
            vec![self.clone()],
            Some(Box::new(move |g, _| {
                let ga: Vec<T> = g.iter().map(|&v| v * cv).collect();
                pa.accumulate(&ga, "scale.backward")
            })),
            false,
        )
    }

    /// Add a scalar constant.
    pub fn add_scalar(&self, c: f64) -> Result<Tensor<T>> {
        let cv = T::from_f64(c);
        let out: Vec<T> = self.node.data.borrow().iter().map(|&x| x + cv).collect();
        let pa = self.clone();
        Tensor::make(
            "add_scalar",
            self.node.shape.clone(),
            out,
            vec![self.clone()],
            Some(Box::new(move |g, _| pa.accumulate(g, "add_scalar.backward"))),
            false,
        )
    }

    /// 2-D matrix product: (n×k) · (k×m) → (n×m).
    pub fn matmul(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (ashape, bshape) = (&self.node.shape, &b.node.shape);
        if ashape.len() != 2 || bshape.len() != 2 || ashape[1] != bshape[0] {
            return Err(FaorError::ShapeMismatch {
                op: "matmul",
                expected: ashape.clone(),
                got: bshape.clone(),
            });
        }
        let (n, k, m) = (ashape[0], ashape[1], bshape[1]);
        let out = {
            let da = self.node.data.borrow();
            let db = b.node.data.borrow();
            linalg::matmul_nn(&da, &db, n, k, m)
        };
        let pa = self.clone();
        let pb = b.clone();
        Tensor::make(
            "matmul",
            vec![n, m],
            out,
            vec![self.clone(), b.clone()],
            Some(Box::new(move |g, _| {
                if pa.node.requires_grad {
                    let db = pb.node.data.borrow();
                    let ga = linalg::matmul_nt(g, &db, n, m, k);
                    drop(db);
                    pa.accumulate(&ga, "matmul.backward")?;
                }
                if pb.node.requires_grad {
                    let da = pa.node.data.borrow();
                    let gb = linalg::matmul_tn(&da, g, n, k, m);
                    drop(da);
                    pb.accumulate(&gb, "matmul.backward")?;
                }
                Ok(())
            })),
            false,
        )
    }

    /// Fused linear layer: self (n×k) · w (k×m) + bias (m).
    pub fn affine(&self, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (xs, ws) = (&self.node.shape, &w.node.shape);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bias.len() != ws[1] {
            return Err(FaorError::ShapeMismatch {
                op: "affine",
                expected: xs.clone(),
                got: ws.clone(),
            });
        }
        let (n, k, m) = (xs[0], xs[1], ws[1]);
        let out = {
            let dx = self.node.data.borrow();
            let dw = w.node.data.borrow();
            let db = bias.node.data.borrow();
            linalg::matmul_bias(&dx, &dw, &db, n, k, m)
        };
        let px = self.clone();
        let pw = w.clone();
        let pb = bias.clone();
        Tensor::make(
            "affine",
            vec![n, m],
            out,
            vec![self.clone(), w.clone(), bias.clone()],
            Some(Box::new(move |g, _| {
                if px.node.requires_grad {
                    let dw = pw.node.data.borrow();
                    let gx = linalg::matmul_nt(g, &dw, n, m, k);
                    drop(dw);
                    px.accumulate(&gx, "affine.backward")?;
                }
                if pw.node.requires_grad {
                    let dx = px.node.data.borrow();
                    let gw = linalg::matmul_tn(&dx, g, n, k, m);
                    drop(dx);
                    pw.accumulate(&gw, "affine.backward")?;
                }
                if pb.node.requires_grad {
                    let mut gb = vec![T::zero(); m];
                    for grow in g.chunks(m) {
                        for (o, &gv) in gb.iter_mut().zip(grow.iter()) {
                            *o = *o + gv;
                        }
                    }
                    pb.accumulate(&gb, "affine.backward")?;
                }
                Ok(())
            })),
            false,
        )
    }

    /// Fused element-wise multiply-add: self ⊙ a + b (all same shape).
    pub fn mul_add(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if self.node.shape != a.node.shape || self.node.shape != b.node.shape {
            return Err(FaorError::ShapeMismatch {
                op: "mul_add",
                expected: self.node.shape.clone(),
                got: a.node.shape.clone(),
            });
        }
        let out: Vec<T> = {
            let dx = self.node.data.borrow();
            let da = a.node.data.borrow();
            let db = b.node.data.borrow();
            dx.iter()
                .zip(da.iter().zip(db.iter()))
                .map(|(&x, (&av, &bv))| x * av + bv)
                .collect()
        };
        let px = self.clone();
        let pa = a.clone();
        let pb = b.clone();
        Tensor::make(
            "mul_add",
            self.node.shape.clone(),
            out,
            vec![self.clone(), a.clone(), b.clone()],
            Some(Box::new(move |g, _| {
                if px.node.requires_grad {
                    let da = pa.node.data.borrow();
                    let gx: Vec<T> = g.iter().zip(da.iter()).map(|(&gv, &av)| gv * av).collect();
                    drop(da);
                    px.accumulate(&gx, "mul_add.backward")?;
                }
                if pa.node.requires_grad {
                    let dx = px.node.data.borrow();
                    let ga: Vec<T> = g.iter().zip(dx.iter()).map(|(&gv, &xv)| gv * xv).collect();
                    drop(dx);
                    pa.accumulate(&ga, "mul_add.backward")?;
                }
                pb.accumulate(g, "mul_add.backward")
            })),
            false,
        )
    }

    /// Fused selfᵀ · b for 2-D tensors: (n×k)ᵀ · (n×m) → (k×m), without
    /// materializing the transpose.
    pub fn matmul_tn(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (ashape, bshape) = (&self.node.shape, &b.node.shape);
        if ashape.len() != 2 || bshape.len() != 2 || ashape[0] != bshape[0] {
            return Err(FaorError::ShapeMismatch {
                op: "matmul_tn",
                expected: ashape.clone(),
                got: bshape.clone(),
            });
        }
        let (n, k, m) = (ashape[0], ashape[1], bshape[1]);
        let out = {
            let da = self.node.data.borrow();
            let db = b.node.data.borrow();
            linalg::matmul_tn(&da, &db, n, k, m)
        };
        let pa = self.clone();
        let pb = b.clone();
        Tensor::make(
            "matmul_tn",
            vec![k, m],
            out,
            vec![self.clone(), b.clone()],
            Some(Box::new(move |g, _| {
                // C = AᵀB: dA = B·gᵀ, dB = A·g
                if pa.node.requires_grad {
                    let db = pb.node.data.borrow();
                    let ga = linalg::matmul_nt(&db, g, n, m, k);
                    drop(db);
                    pa.accumulate(&ga, "matmul_tn.backward")?;
                }
                if pb.node.requires_grad {
                    let da = pa.node.data.borrow();
                    let gb = linalg::matmul_nn(&da, g, n, k, m);
                    drop(da);
                    pb.accumulate(&gb, "matmul_tn.backward")?;
                }
                Ok(())
            })),
            false,
        )
    }

    /// 2-D transpose.
    pub fn transpose2(&self) -> Result<Tensor<T>> {
        let shape = &self.node.shape;
        if shape.len() != 2 {
            return Err(FaorError::ShapeMismatch {
                op: "transpose2",
                expected: vec![0, 0],
                got: shape.clone(),
            });
        }
        let (n, m) = (shape[0], shape[1]);
        let da = self.node.data.borrow();
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = da[i * m + j];
            }
        }
        drop(da);
        let pa = self.clone();
        Tensor::make(
            "transpose2",
            vec![m, n],
            out,
            vec![self.clone()],
            Some(Box::new(move |g, _| {
                let mut ga = vec![T::zero(); n * m];
                for j in 0..m {
                    for i in 0..n {
                        ga[i * m + j] = g[j * n + i];
                    }
                }
                pa.accumulate(&ga, "transpose2.backward")
            })),
            false,
        )
    }

    /// GELU nonlinearity (tanh approximation). The forward tanh values are
    /// cached for the backward pass.
    pub fn gelu(&self) -> Result<Tensor<T>> {
        let sqrt_2_over_pi = T::from_f64(0.7978845608028654);
        let cubic = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let data = self.node.data.borrow();
        let mut out = vec![T::zero(); data.len()];
        let mut tanhs = vec![T::zero(); data.len()];
        for ((o, th_out), &x) in out.iter_mut().zip(tanhs.iter_mut()).zip(data.iter()) {
            let th = (sqrt_2_over_pi * (x + cubic * x * x * x)).tanh_bulk();
            *th_out = th;
            *o = half * x * (T::one() + th);
        }
        drop(data);
        let pa = self.clone();
        Tensor::make(
            "gelu",
            self.node.shape.clone(),
            out,
            vec![self.clone()],
            Some(Box::new(move |g, _| {
                let da = pa.node.data.borrow();
                let three_cubic = T::from_f64(3.0 * 0.044715);
                let ga: Vec<T> = g
                    .iter()
                    .zip(da.iter().zip(tanhs.iter()))
                    .map(|(&gv, (&x, &th))| {
                        let sech2 = T::one() - th * th;
                        let dinner = sqrt_2_over_pi * (T::one() + three_cubic * x * x);
                        let d = half * (T::one() + th) + half * x * sech2 * dinner;
                        gv * d
                    })
                    .collect();
                drop(da);
                pa.accumulate(&ga, "gelu.backward")
            })),
            false,
        )
    }

    /// Element-wise absolute value; the gradient at 0 is 0.
    pub fn abs(&self) -> Result<Tensor<T>> {
        let out: Vec<T> = self.node.data.borrow().iter().map(|&x| x.abs()).collect();
        let pa = self.clone();
        Tensor::make(
            "abs",
            self.node.shape.clone(),
            out,
            vec![self.clone()],
            Some(Box::new(move |g, _| {
                let da = pa.node.data.borrow();
                let ga: Vec<T> = g
                    .iter()
                    .zip(da.iter())
                    .map(|(&gv, &x)| {
                        if x > T::zero() {
                            gv
                        } else if x < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                drop(da);
                pa.accumulate(&ga, "abs.backward")
            })),
            false,
        )
    }

    /// Sum of all elements (scalar output).
    pub fn sum(&self) -> Result<Tensor<T>> {
        let s = self
            .node
            .data
            .borrow()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let n = self.len();
        let pa = self.clone();
        Tensor::make(
            "sum",
            vec![1],
            vec![s],
            vec![self.clone()],
            Some(Box::new(move |g, _| {
                let ga = vec![g[0]; n];
                pa.accumulate(&ga, "sum.backward")
            })),
            false,
        )
    }

    /// Mean of all elements (scalar output).
    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = self.len();
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Numerically stable softmax along `axis`; slices sum to 1.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = &self.node.shape;
        if axis >= shape.len() {
            return Err(FaorError::invalid(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = T::neg_infinity();
                for s in 0..len {
                    max = max.max(out[base + s * inner]);
                }
                let mut total = T::zero();
                for s in 0..len {
                    let e = (out[base + s * inner] - max).exp();
                    out[base + s * inner] = e;
                    total = total + e;
                }
                for s in 0..len {
                    out[base + s * inner] = out[base + s * inner] / total;
                }
            }
        }
        let pa = self.clone();
        Tensor::make(
            "softmax",
            self.node.shape.clone(),
            out,
            vec![self.clone()],
            Some(Box::new(move |g, node| {
                let y = node.data.borrow();
                let mut ga = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = T::zero();
                        for s in 0..len {
                            dot = dot + g[base + s * inner] * y[base + s * inner];
                        }
                        for s in 0..len {
                            let idx = base + s * inner;
                            ga[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                }
                drop(y);
                pa.accumulate(&ga, "softmax.backward")
            })),
            false,
        )
    }

    /// Concatenate along the last axis.
    pub fn concat_last(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (&self.node.shape, &b.node.shape);
        if sa.len() != sb.len()
            || sa.len() < 1
            || sa[..sa.len() - 1] != sb[..sb.len() - 1]
        {
            return Err(FaorError::ShapeMismatch {
                op: "concat_last",
                expected: sa.clone(),
                got: sb.clone(),
            });
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows: usize = sa[..sa.len() - 1].iter().product();
        let mut out = Vec::with_capacity(rows * (ca + cb));
        {
            let da = self.node.data.borrow();
            let db = b.node.data.borrow();
            for r in 0..rows {
                out.extend_from_slice(&da[r * ca..(r + 1) * ca]);
                out.extend_from_slice(&db[r * cb..(r + 1) * cb]);
            }
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = ca + cb;
        let pa = self.clone();
        let pb = b.clone();
        Tensor::make(
            "concat_last",
            shape,
            out,
            vec![self.clone(), b.clone()],
            Some(Box::new(move |g, _| {
                let c = ca + cb;
                if pa.node.requires_grad {
                    let mut ga = Vec::with_capacity(rows * ca);
                    for r in 0..rows {
                        ga.extend_from_slice(&g[r * c..r * c + ca]);
                    }
                    pa.accumulate(&ga, "concat_last.backward")?;
                }
                if pb.node.requires_grad {
                    let mut gb = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        gb.extend_from_slice(&g[r * c + ca..(r + 1) * c]);
                    }
                    pb.accumulate(&gb, "concat_last.backward")?;
                }
                Ok(())
            })),
            false,
        )
    }

    /// Slice `len` channels starting at `start` along the last axis.
    pub fn narrow_last(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = &self.node.shape;
        let c = *shape.last().ok_or_else(|| FaorError::invalid("narrow on 0-d tensor"))?;
        if start + len > c {
            return Err(FaorError::invalid(format!(
                "narrow {start}..{} beyond {c} channels",
                start + len
            )));
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let mut out = Vec::with_capacity(rows * len);
        {
            let da = self.node.data.borrow();
            for r in 0..rows {
                out.extend_from_slice(&da[r * c + start..r * c + start + len]);
            }
        }
        let mut new_shape = shape.clone();
        *new_shape.last_mut().unwrap() = len;
        let pa = self.clone();
        Tensor::make(
            "narrow_last",
            new_shape,
            out,
            vec![self.clone()],
            Some(Box::new(move |g, _| {
                let mut ga = vec![T::zero(); rows * c];
                for r in 0..rows {
                    ga[r * c + start..r * c + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                pa.accumulate(&ga, "narrow_last.backward")
            })),
            false,
        )
    }

    /// Gather-interpolate rows of a (S×D) tensor into (P×D) using precompiled
    /// taps: the differentiable face of the spherical resampler.
    pub fn gather_resample(&self, taps: Rc<CompiledTaps>) -> Result<Tensor<T>> {
        let shape = &self.node.shape;
        if shape.len() != 2 || shape[0] != taps.n_sources() {
            return Err(FaorError::ShapeMismatch {
                op: "gather_resample",
                expected: vec![taps.n_sources()],
                got: shape.clone(),
            });
        }
        let d = shape[1];
        let p = taps.n_targets();
        let mut out = vec![T::zero(); p * d];
        {
            let da = self.node.data.borrow();
            for (ti, orow) in out.chunks_mut(d).enumerate() {
                for &(src, w) in taps.target(ti) {
                    let wv = T::from_f64(w);
                    let srow = &da[src as usize * d..(src as usize + 1) * d];
                    for (o, &s) in orow.iter_mut().zip(srow.iter()) {
                        *o = *o + wv * s;
                    }
                }
            }
        }
        let pa = self.clone();
        let taps_b = taps.clone();
        Tensor::make(
            "gather_resample",
            vec![p, d],
            out,
            vec![self.clone()],
            Some(Box::new(move |g, _| {
                if !pa.node.requires_grad {
                    return Ok(());
                }
                let s = taps_b.n_sources();
                let mut ga = vec![T::zero(); s * d];
                for (ti, grow) in g.chunks(d).enumerate() {
                    for &(src, w) in taps_b.target(ti) {
                        let wv = T::from_f64(w);
                        let drow = &mut ga[src as usize * d..(src as usize + 1) * d];
                        for (o, &gv) in drow.iter_mut().zip(grow.iter()) {
                            *o = *o + wv * gv;
                        }
                    }
                }
                pa.accumulate(&ga, "gather_resample.backward")
            })),
            false,
        )
    }
}

/// Layer normalization over the last axis followed by a learned affine:
/// gain ⊙ (x − μ)/√(σ² + ε) + bias.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    let c = *shape
        .last()
        .ok_or_else(|| FaorError::invalid("layer_norm on 0-d tensor"))?;
    if c < 1 || gain.len() != c || bias.len() != c {
        return Err(FaorError::ShapeMismatch {
            op: "layer_norm",
            expected: vec![c],
            got: vec![gain.len(), bias.len()],
        });
    }
    let rows = x.len() / c;
    let eps = T::from_f64(LAYER_NORM_EPS);
    let cf = T::from_f64(c as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut inv_sigma = vec![T::zero(); rows];
    let mut means = vec![T::zero(); rows];
    {
        let dx = x.node.data.borrow();
        let dg = gain.node.data.borrow();
        let db = bias.node.data.borrow();
        for r in 0..rows {
            let xr = &dx[r * c..(r + 1) * c];
            let mu = xr.iter().fold(T::zero(), |a, &v| a + v) / cf;
            let var = xr
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mu) * (v - mu))
                / cf;
            let is = T::one() / (var + eps).sqrt();
            means[r] = mu;
            inv_sigma[r] = is;
            let orow = &mut out[r * c..(r + 1) * c];
            for ((o, &xv), (&g, &b)) in orow.iter_mut().zip(xr.iter()).zip(dg.iter().zip(db.iter()))
            {
                *o = g * ((xv - mu) * is) + b;
            }
        }
    }
    let px = x.clone();
    let pg = gain.clone();
    let pb = bias.clone();
    Tensor::make(
        "layer_norm",
        shape.to_vec(),
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        Some(Box::new(move |g, _| {
            let dx = px.node.data.borrow();
            let dg = pg.node.data.borrow();
            let mut gx = vec![T::zero(); dx.len()];
            let mut ggain = vec![T::zero(); c];
            let mut gbias = vec![T::zero(); c];
            for r in 0..rows {
                let xr = &dx[r * c..(r + 1) * c];
                let gr = &g[r * c..(r + 1) * c];
                let mu = means[r];
                let is = inv_sigma[r];
                // dyhat = gain * dy; accumulate gain/bias grads along the way
                let mut sum_dyhat = T::zero();
                let mut sum_dyhat_xhat = T::zero();
                for i in 0..c {
                    let xhat = (xr[i] - mu) * is;
                    let dyhat = dg[i] * gr[i];
                    ggain[i] = ggain[i] + gr[i] * xhat;
                    gbias[i] = gbias[i] + gr[i];
                    sum_dyhat = sum_dyhat + dyhat;
                    sum_dyhat_xhat = sum_dyhat_xhat + dyhat * xhat;
                }
                let m1 = sum_dyhat / cf;
                let m2 = sum_dyhat_xhat / cf;
                let gxr = &mut gx[r * c..(r + 1) * c];
                for i in 0..c {
                    let xhat = (xr[i] - mu) * is;
                    gxr[i] = is * (dg[i] * gr[i] - m1 - xhat * m2);
                }
            }
            drop(dx);
            drop(dg);
            px.accumulate(&gx, "layer_norm.backward")?;
            pg.accumulate(&ggain, "layer_norm.backward")?;
            pb.accumulate(&gbias, "layer_norm.backward")?;
            Ok(())
        })),
        false,
    )
}

/// 3×3 convolution over an (H×W×Cin) tensor producing (H·W × Cout).
/// Columns wrap across the seam when `wrap_cols`, otherwise replicate;
/// rows always replicate (poles).
pub fn conv3x3<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    height: usize,
    width: usize,
    wrap_cols: bool,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ks = kernel.shape();
    if xs.len() != 2 || xs[0] != height * width {
        return Err(FaorError::ShapeMismatch {
            op: "conv3x3",
            expected: vec![height * width],
            got: xs.to_vec(),
        });
    }
    let cin = xs[1];
    if ks != [3, 3, cin, bias.len()] {
        return Err(FaorError::ShapeMismatch {
            op: "conv3x3",
            expected: vec![3, 3, cin, bias.len()],
            got: ks.to_vec(),
        });
    }
    let cout = bias.len();
    let col_at = move |c: isize| -> usize {
        if wrap_cols {
            c.rem_euclid(width as isize) as usize
        } else {
            c.clamp(0, width as isize - 1) as usize
        }
    };
    let row_at = move |r: isize| -> usize { r.clamp(0, height as isize - 1) as usize };
    let mut out = vec![T::zero(); height * width * cout];
    {
        let dx = x.node.data.borrow();
        let dk = kernel.node.data.borrow();
        let db = bias.node.data.borrow();
        for y in 0..height {
            for xcol in 0..width {
                let orow = &mut out[(y * width + xcol) * cout..(y * width + xcol + 1) * cout];
                orow.copy_from_slice(&db);
                for ky in 0..3usize {
                    let sy = row_at(y as isize + ky as isize - 1);
                    for kx in 0..3usize {
                        let sx = col_at(xcol as isize + kx as isize - 1);
                        let xrow = &dx[(sy * width + sx) * cin..(sy * width + sx + 1) * cin];
                        let kbase = (ky * 3 + kx) * cin * cout;
                        for (ci, &xv) in xrow.iter().enumerate() {
                            let krow = &dk[kbase + ci * cout..kbase + (ci + 1) * cout];
                            for (o, &kv) in orow.iter_mut().zip(krow.iter()) {
                                *o = *o + xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    let px = x.clone();
    let pk = kernel.clone();
    let pb = bias.clone();
    Tensor::make(
        "conv3x3",
        vec![height * width, cout],
        out,
        vec![x.clone(), kernel.clone(), bias.clone()],
        Some(Box::new(move |g, _| {
            let dx = px.node.data.borrow();
            let dk = pk.node.data.borrow();
            let need_x = px.node.requires_grad;
            let mut gx = vec![T::zero(); dx.len()];
            let mut gk = vec![T::zero(); dk.len()];
            let mut gb = vec![T::zero(); cout];
            for y in 0..height {
                for xcol in 0..width {
                    let grow = &g[(y * width + xcol) * cout..(y * width + xcol + 1) * cout];
                    for (o, &gv) in gb.iter_mut().zip(grow.iter()) {
                        *o = *o + gv;
                    }
                    for ky in 0..3usize {
                        let sy = row_at(y as isize + ky as isize - 1);
                        for kx in 0..3usize {
                            let sx = col_at(xcol as isize + kx as isize - 1);
                            let xbase = (sy * width + sx) * cin;
                            let kbase = (ky * 3 + kx) * cin * cout;
                            for ci in 0..cin {
                                let xv = dx[xbase + ci];
                                let krow = &dk[kbase + ci * cout..kbase + (ci + 1) * cout];
                                let gkrow = &mut gk[kbase + ci * cout..kbase + (ci + 1) * cout];
                                let mut acc = T::zero();
                                for ((gko, &kv), &gv) in
                                    gkrow.iter_mut().zip(krow.iter()).zip(grow.iter())
                                {
                                    *gko = *gko + xv * gv;
                                    acc = acc + kv * gv;
                                }
                                if need_x {
                                    gx[xbase + ci] = gx[xbase + ci] + acc;
                                }
                            }
                        }
                    }
                }
            }
            drop(dx);
            drop(dk);
            if need_x {
                px.accumulate(&gx, "conv3x3.backward")?;
            }
            pk.accumulate(&gk, "conv3x3.backward")?;
            pb.accumulate(&gb, "conv3x3.backward")?;
            Ok(())
        })),
        false,
    )
}

/// Named trainable tensor.
#[derive(Clone)]
pub struct Parameter<T: Scalar> {
    name: String,
    tensor: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(FaorError::ShapeMismatch {
                op: "Parameter::new",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        let tensor = Tensor::make("parameter", shape.to_vec(), data, vec![], None, true)?;
        Ok(Self {
            name: name.into(),
            tensor,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.tensor.to_vec()
    }

    pub fn set_data(&self, values: &[T]) -> Result<()> {
        self.tensor.set_data(values)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.tensor.grad()
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn param<T: Scalar>(name: &str, shape: &[usize], data: Vec<T>) -> Parameter<T> {
        Parameter::new(name, shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let a = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = eye.matmul(&a).unwrap();
        assert_eq!(out.to_vec(), a.to_vec());
    }

    #[test]
    fn add_broadcast_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a_data: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b_data: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = Tensor::from_vec(&[2, 3, 4], a_data.clone()).unwrap();
        let b = Tensor::from_vec(&[1, 1, 4], b_data.clone()).unwrap();
        let out = a.add(&b).unwrap();
        let got = out.to_vec();
        for h in 0..2 {
            for w in 0..3 {
                for c in 0..4 {
                    let i = (h * 3 + w) * 4 + c;
                    assert_eq!(got[i], a_data[i] + b_data[c]);
                }
            }
        }
        // bias-style broadcast gradient sums over leading axes
        let p = param("b", &[4], b_data.clone());
        let loss = a.add(p.tensor()).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![6.0; 4]);
    }

    #[test]
    fn gelu_at_zero_is_zero() {
        let x = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        assert_eq!(x.gelu().unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn layer_norm_constant_input_returns_bias() {
        let x = Tensor::from_vec(&[2, 3], vec![5.0f64; 6]).unwrap();
        let gain = param("g", &[3], vec![1.0, 1.0, 1.0]);
        let bias = param("b", &[3], vec![0.25, -0.5, 2.0]);
        let out = layer_norm(&x, gain.tensor(), bias.tensor()).unwrap();
        let v = out.to_vec();
        for r in 0..2 {
            assert!((v[r * 3] - 0.25).abs() < 1e-12);
            assert!((v[r * 3 + 1] + 0.5).abs() < 1e-12);
            assert!((v[r * 3 + 2] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_two_point_closed_form() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0f64, -1.0]).unwrap();
        let gain = param("g", &[2], vec![1.0, 1.0]);
        let bias = param("b", &[2], vec![0.0, 0.0]);
        let out = layer_norm(&x, gain.tensor(), bias.tensor()).unwrap();
        let expected = 1.0 / (1.0f64 + LAYER_NORM_EPS).sqrt();
        let v = out.to_vec();
        assert!((v[0] - expected).abs() < 1e-12);
        assert!((v[1] + expected).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_output_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::from_vec(&[5, 8], data).unwrap();
        let gain = param("g", &[8], vec![1.0; 8]);
        let bias = param("b", &[8], vec![0.0; 8]);
        let out = layer_norm(&x, gain.tensor(), bias.tensor()).unwrap();
        let v = out.to_vec();
        for r in 0..5 {
            let mean: f64 = v[r * 8..(r + 1) * 8].iter().sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_uniform_and_peak() {
        let x = Tensor::from_vec(&[4], vec![0.3f64; 4]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        for v in y {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let x = Tensor::from_vec(&[3], vec![0.0f64, 40.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert!((y[1] - 1.0).abs() < 1e-6);
        assert!(y[0] < 1e-6 && y[2] < 1e-6);
    }

    #[test]
    fn softmax_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let data: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x = Tensor::from_vec(&[4], data.clone()).unwrap();
            let y = x.softmax(0).unwrap().to_vec();
            let total: f64 = data.iter().map(|v| v.exp()).sum();
            for (got, v) in y.iter().zip(data.iter()) {
                assert!((got - v.exp() / total).abs() < 1e-10);
            }
            let sum: f64 = y.iter().sum();
            assert!((sum - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_rows_of_matrix() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let y = x.softmax(1).unwrap().to_vec();
        for r in 0..2 {
            let s: f64 = y[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let p = param("x", &[2, 3], vec![0.5f64; 6]);
        let loss = p.tensor().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_l1_gives_scaled_sign() {
        let p = param("x", &[4], vec![1.0f64, -2.0, 0.0, 3.0]);
        let target = Tensor::from_vec(&[4], vec![0.0, 0.0, 0.0, 5.0]).unwrap();
        let loss = p.tensor().sub(&target).unwrap().abs().unwrap().mean().unwrap();
        loss.backward().unwrap();
        let g = p.grad().unwrap();
        assert_eq!(g, vec![0.25, -0.25, 0.0, -0.25]);
    }

    #[test]
    fn backward_requires_scalar_and_single_use() {
        let p = param("x", &[2], vec![1.0f64, 2.0]);
        assert!(p.tensor().backward().is_err()); // non-scalar
        let loss = p.tensor().sum().unwrap();
        loss.backward().unwrap();
        assert!(loss.backward().is_err()); // graph reuse
    }

    #[test]
    fn non_finite_forward_is_error_naming_op() {
        let a = Tensor::from_vec(&[1], vec![1e308f64]).unwrap();
        let b = Tensor::from_vec(&[1], vec![1e308f64]).unwrap();
        match a.mul(&b) {
            Err(FaorError::NonFinite { op }) => assert_eq!(op, "mul"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradients_match_manual() {
        let a = param("a", &[2, 2], vec![1.0f64, 2.0, 3.0, 4.0]);
        let b = param("b", &[2, 2], vec![0.5, -1.0, 2.0, 0.25]);
        let loss = a.tensor().matmul(b.tensor()).unwrap().sum().unwrap();
        loss.backward().unwrap();
        // d/dA sum(AB) = ones · Bᵀ (row sums of B broadcast)
        let ga = a.grad().unwrap();
        assert_eq!(ga, vec![-0.5, 2.25, -0.5, 2.25]);
        let gb = b.grad().unwrap();
        assert_eq!(gb, vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn shared_subgraph_accumulates() {
        // loss = sum(x * x) -> grad 2x even though x appears twice
        let p = param("x", &[3], vec![1.0f64, -2.0, 3.0]);
        let loss = p.tensor().mul(p.tensor()).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn deterministic_forward_backward() {
        let run = || -> (Vec<f64>, Vec<f64>) {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let data: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..35).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let x = Tensor::from_vec(&[12, 5], data).unwrap();
            let p = param("w", &[5, 7], w);
            let loss = x.matmul(p.tensor()).unwrap().gelu().unwrap().mean().unwrap();
            let lv = loss.item().unwrap();
            loss.backward().unwrap();
            (vec![lv], p.grad().unwrap())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1[0].to_bits(), l2[0].to_bits());
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn gather_resample_forward_and_backward() {
        use crate::geometry::{ErpGrid, SphericalCoord};
        use crate::resample::{compile_taps, GridFrame, ResamplerKind};
        let src = ErpGrid::new(2, 4).unwrap();
        let frame = GridFrame::erp(&src);
        let coords = vec![
            SphericalCoord::new(0.2, 0.4).unwrap(),
            SphericalCoord::new(-0.5, -2.5).unwrap(),
        ];
        let taps = Rc::new(compile_taps(&frame, ResamplerKind::Geodesic, &coords));
        let p = param("z", &[8, 2], (0..16).map(|i| i as f64 * 0.1).collect());
        let out = p.tensor().gather_resample(taps.clone()).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        // forward agrees with a direct weighted sum
        let z = p.to_vec();
        let v = out.to_vec();
        for ti in 0..2 {
            for c in 0..2 {
                let mut e = 0.0;
                for &(src_i, w) in taps.target(ti) {
                    e += w * z[src_i as usize * 2 + c];
                }
                assert!((v[ti * 2 + c] - e).abs() < 1e-12);
            }
        }
        // backward scatters the same weights
        let loss = out.sum().unwrap();
        loss.backward().unwrap();
        let g = p.grad().unwrap();
        let mut expected = vec![0.0; 16];
        for ti in 0..2 {
            for &(src_i, w) in taps.target(ti) {
                expected[src_i as usize * 2] += w;
                expected[src_i as usize * 2 + 1] += w;
            }
        }
        for (a, b) in g.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_linear_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = param("w", &[4, 3], w);
        let x_data: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[5, 4], x_data).unwrap();
        let coeff: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cf = Tensor::from_vec(&[5, 3], coeff).unwrap();
        let params = [&p];
        let report = finite_difference_check(
            &params,
            || x.matmul(p.tensor())?.mul(&cf)?.sum(),
            1e-5,
            100,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn finite_difference_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x_data: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xp = param("x", &[4, 6], x_data);
        let gain = param("gain", &[6], (0..6).map(|_| rng.gen_range(0.5..1.5)).collect());
        let bias = param("bias", &[6], (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let coeff: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cf = Tensor::from_vec(&[4, 6], coeff).unwrap();
        let params = [&xp, &gain, &bias];
        let report = finite_difference_check(
            &params,
            || layer_norm(xp.tensor(), gain.tensor(), bias.tensor())?.mul(&cf)?.sum(),
            1e-5,
            200,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn finite_difference_composite_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = param("a", &[3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let b = param("b", &[4, 4], (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let bias = param("c", &[4], (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let coeff: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cf = Tensor::from_vec(&[4, 3], coeff).unwrap();
        let params = [&a, &b, &bias];
        let report = finite_difference_check(
            &params,
            || {
                let h = a.tensor().matmul(b.tensor())?.add(bias.tensor())?;
                let h = h.gelu()?.softmax(1)?;
                h.transpose2()?.mul(&cf)?.sum()
            },
            1e-5,
            200,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn finite_difference_conv3x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, w, cin, cout) = (4, 5, 2, 3);
        let x = param("x", &[h * w, cin], (0..h * w * cin).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let k = param("k", &[3, 3, cin, cout], (0..9 * cin * cout).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let b = param("b", &[cout], (0..cout).map(|_| rng.gen_range(-0.2..0.2)).collect());
        let coeff: Vec<f64> = (0..h * w * cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cf = Tensor::from_vec(&[h * w, cout], coeff).unwrap();
        for wrap in [true, false] {
            let params = [&x, &k, &b];
            let report = finite_difference_check(
                &params,
                || conv3x3(x.tensor(), k.tensor(), b.tensor(), h, w, wrap)?.mul(&cf)?.sum(),
                1e-5,
                200,
                &mut rng,
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-6, "wrap={wrap} rel {}", report.max_rel_err);
        }
    }

    #[test]
    fn concat_and_narrow_roundtrip_gradients() {
        let a = param("a", &[2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = param("b", &[2, 2], vec![-1.0, -2.0, -3.0, -4.0]);
        let cat = a.tensor().concat_last(b.tensor()).unwrap();
        assert_eq!(cat.shape(), &[2, 5]);
        let right = cat.narrow_last(3, 2).unwrap();
        let loss = right.sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0; 6]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 4]);
    }
}
