//! Recording tape for reverse-mode gradient computation.
//!
//! Ops append nodes in creation order, so the record is topologically
//! sorted by construction: every node's inputs precede it. `backward`
//! walks the record once in reverse, calling each node's local-derivative
//! closure, and returns gradients for every grad-enabled leaf. The record
//! is consumed by `backward`.
//!
//! A tape and its variables are confined to one thread of execution;
//! tensors detached from any record move freely between threads.

use std::cell::RefCell;
use std::rc::Rc;

use super::scalar::Scalar;
use super::tensor::{matmul_nt, matmul_raw, matmul_tn, TensorBase};
use crate::error::{CoreError, Result};

/// Values handed to a node's backward closure.
struct BackwardCtx<'a, S: Scalar> {
    /// dLoss/dOutput for this node.
    grad: &'a TensorBase<S>,
    /// The node's saved forward output.
    out: &'a TensorBase<S>,
    /// Parent forward values, in op-argument order.
    parents: Vec<&'a TensorBase<S>>,
    /// Which parents need a gradient at all.
    needs: &'a [bool],
}

type BackwardFn<S> = Box<dyn Fn(&BackwardCtx<'_, S>) -> Vec<Option<TensorBase<S>>>>;

struct Node<S: Scalar> {
    value: TensorBase<S>,
    parents: Vec<usize>,
    grad_enabled: bool,
    backward: Option<BackwardFn<S>>,
}

struct Inner<S: Scalar> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

/// Recording tape. Cloning is cheap and shares the record.
pub struct TapeBase<S: Scalar> {
    inner: Rc<RefCell<Inner<S>>>,
}

impl<S: Scalar> Clone for TapeBase<S> {
    fn clone(&self) -> Self {
        TapeBase {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> Default for TapeBase<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one recorded value.
pub struct VarBase<S: Scalar> {
    tape: TapeBase<S>,
    id: usize,
}

impl<S: Scalar> std::fmt::Debug for VarBase<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<S: Scalar> Clone for VarBase<S> {
    fn clone(&self) -> Self {
        VarBase {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

/// Gradients keyed by leaf variable, produced by `backward`.
#[derive(Debug)]
pub struct GradientsBase<S: Scalar> {
    grads: Vec<Option<TensorBase<S>>>,
}

impl<S: Scalar> GradientsBase<S> {
    pub fn wrt(&self, var: &VarBase<S>) -> Option<&TensorBase<S>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Remove and return the gradient for `var`.
    pub fn take(&mut self, var: &VarBase<S>) -> Option<TensorBase<S>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<S: Scalar> TapeBase<S> {
    pub fn new() -> Self {
        TapeBase {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, other: &TapeBase<S>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Register a leaf. Whether it receives gradients follows the tensor's
    /// own `grad_enabled` flag.
    pub fn leaf(&self, value: TensorBase<S>) -> VarBase<S> {
        let grad_enabled = value.grad_enabled();
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            parents: Vec::new(),
            grad_enabled,
            backward: None,
        });
        VarBase {
            tape: self.clone(),
            id,
        }
    }

    /// Grad-enabled leaf from a borrowed tensor.
    pub fn param(&self, value: &TensorBase<S>) -> VarBase<S> {
        self.leaf(value.clone().with_grad(true))
    }

    /// Leaf that never receives gradients.
    pub fn constant(&self, value: &TensorBase<S>) -> VarBase<S> {
        self.leaf(value.clone().no_grad())
    }

    fn push(
        &self,
        op: &'static str,
        value: TensorBase<S>,
        parents: Vec<usize>,
        backward: BackwardFn<S>,
    ) -> Result<VarBase<S>> {
        if !value.all_finite() {
            return Err(CoreError::NonFinite { op });
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(CoreError::TapeConsumed);
        }
        let grad_enabled = parents.iter().any(|&p| inner.nodes[p].grad_enabled);
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            parents,
            grad_enabled,
            backward: if grad_enabled { Some(backward) } else { None },
        });
        Ok(VarBase {
            tape: self.clone(),
            id,
        })
    }

    /// Reverse pass from a scalar loss. Returns gradients for every
    /// grad-enabled leaf; the record is consumed.
    pub fn backward(&self, loss: &VarBase<S>) -> Result<GradientsBase<S>> {
        if !self.same_tape(&loss.tape) {
            return Err(CoreError::TapeMismatch);
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(CoreError::TapeConsumed);
        }
        inner.consumed = true;
        let loss_shape = inner.nodes[loss.id].value.shape().to_vec();
        if inner.nodes[loss.id].value.numel() != 1 {
            return Err(CoreError::NonScalarLoss { shape: loss_shape });
        }

        let nodes = &inner.nodes;
        let mut grads: Vec<Option<TensorBase<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(TensorBase::filled(loss_shape, S::one()));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(back) = node.backward.as_ref() {
                let parent_vals: Vec<&TensorBase<S>> =
                    node.parents.iter().map(|&p| &nodes[p].value).collect();
                let needs: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].grad_enabled)
                    .collect();
                let ctx = BackwardCtx {
                    grad: &g,
                    out: &node.value,
                    parents: parent_vals,
                    needs: &needs,
                };
                let parent_grads = back(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    if let Some(pg) = pg {
                        match &mut grads[pid] {
                            Some(acc) => acc.add_scaled(&pg, S::one()),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
            }
            // Keep gradients only for grad-enabled leaves.
            if node.parents.is_empty() && node.grad_enabled {
                grads[id] = Some(g);
            }
        }

        Ok(GradientsBase { grads })
    }
}

// ── shape helpers ────────────────────────────────────────────────────

fn mismatch<S: Scalar>(op: &'static str, a: &TensorBase<S>, b: &TensorBase<S>) -> CoreError {
    CoreError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// Interpret a rank-1/2 tensor as (rows, cols) for matmul.
fn as_2d(shape: &[usize], as_row: bool) -> Option<(usize, usize)> {
    match shape.len() {
        1 => {
            if as_row {
                Some((1, shape[0]))
            } else {
                Some((shape[0], 1))
            }
        }
        2 => Some((shape[0], shape[1])),
        _ => None,
    }
}

fn reshaped<S: Scalar>(t: &TensorBase<S>, rows: usize, cols: usize) -> TensorBase<S> {
    TensorBase::from_vec(vec![rows, cols], t.data().to_vec()).expect("numel preserved")
}

impl<S: Scalar> VarBase<S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &TapeBase<S> {
        &self.tape
    }

    /// Clone of the stored forward value.
    pub fn value(&self) -> TensorBase<S> {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id]
            .value
            .shape()
            .to_vec()
    }

    /// Scalar forward value of a one-element variable.
    pub fn item(&self) -> S {
        self.tape.inner.borrow().nodes[self.id].value.item()
    }

    fn with_value<R>(&self, f: impl FnOnce(&TensorBase<S>) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].value)
    }

    fn check_mate(&self, other: &VarBase<S>) -> Result<()> {
        if !self.tape.same_tape(&other.tape) {
            return Err(CoreError::TapeMismatch);
        }
        Ok(())
    }

    // ── elementwise binary ───────────────────────────────────────────

    pub fn add(&self, other: &VarBase<S>) -> Result<VarBase<S>> {
        self.check_mate(other)?;
        let value = self.with_value(|a| {
            other.with_value(|b| {
                if a.shape() != b.shape() {
                    return Err(mismatch("add", a, b));
                }
                let mut out = a.clone();
                out.add_scaled(b, S::one());
                Ok(out)
            })
        })?;
        self.tape.push(
            "add",
            value,
            vec![self.id, other.id],
            Box::new(|ctx| {
                vec![
                    ctx.needs[0].then(|| ctx.grad.clone()),
                    ctx.needs[1].then(|| ctx.grad.clone()),
                ]
            }),
        )
    }

    pub fn sub(&self, other: &VarBase<S>) -> Result<VarBase<S>> {
        self.check_mate(other)?;
        let value = self.with_value(|a| {
            other.with_value(|b| {
                if a.shape() != b.shape() {
                    return Err(mismatch("sub", a, b));
                }
                let mut out = a.clone();
                out.add_scaled(b, -S::one());
                Ok(out)
            })
        })?;
        self.tape.push(
            "sub",
            value,
            vec![self.id, other.id],
            Box::new(|ctx| {
                vec![
                    ctx.needs[0].then(|| ctx.grad.clone()),
                    ctx.needs[1].then(|| {
                        let mut g = ctx.grad.clone();
                        g.scale_in_place(-S::one());
                        g
                    }),
                ]
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &VarBase<S>) -> Result<VarBase<S>> {
        self.check_mate(other)?;
        let value = self.with_value(|a| {
            other.with_value(|b| {
                if a.shape() != b.shape() {
                    return Err(mismatch("mul", a, b));
                }
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| x * y)
                    .collect();
                TensorBase::from_vec(a.shape().to_vec(), data)
            })
        })?;
        self.tape.push(
            "mul",
            value,
            vec![self.id, other.id],
            Box::new(|ctx| {
                let ew = |src: &TensorBase<S>| {
                    let data = ctx
                        .grad
                        .data()
                        .iter()
                        .zip(src.data())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    TensorBase::from_vec(ctx.grad.shape().to_vec(), data).expect("same shape")
                };
                vec![
                    ctx.needs[0].then(|| ew(ctx.parents[1])),
                    ctx.needs[1].then(|| ew(ctx.parents[0])),
                ]
            }),
        )
    }

    /// Matrix product. Rank-1 operands are treated as a row vector on the
    /// left and a column vector on the right; the output drops the
    /// borrowed axis again.
    pub fn matmul(&self, other: &VarBase<S>) -> Result<VarBase<S>> {
        self.check_mate(other)?;
        let value = self.with_value(|a| {
            other.with_value(|b| {
                let (m, ka) = as_2d(a.shape(), true).ok_or_else(|| mismatch("matmul", a, b))?;
                let (kb, n) = as_2d(b.shape(), false).ok_or_else(|| mismatch("matmul", a, b))?;
                if ka != kb {
                    return Err(mismatch("matmul", a, b));
                }
                let out = matmul_raw(&reshaped(a, m, ka), &reshaped(b, kb, n));
                let out_shape: Vec<usize> = match (a.shape().len(), b.shape().len()) {
                    (1, 1) => vec![1],
                    (1, 2) => vec![n],
                    (2, 1) => vec![m],
                    _ => vec![m, n],
                };
                TensorBase::from_vec(out_shape, out.data().to_vec())
            })
        })?;
        self.tape.push(
            "matmul",
            value,
            vec![self.id, other.id],
            Box::new(|ctx| {
                let a = ctx.parents[0];
                let b = ctx.parents[1];
                let (m, k) = as_2d(a.shape(), true).expect("checked in forward");
                let (_, n) = as_2d(b.shape(), false).expect("checked in forward");
                let g2 = reshaped(ctx.grad, m, n);
                let ga = ctx.needs[0].then(|| {
                    let g = matmul_nt(&g2, &reshaped(b, k, n));
                    TensorBase::from_vec(a.shape().to_vec(), g.data().to_vec()).expect("numel")
                });
                let gb = ctx.needs[1].then(|| {
                    let g = matmul_tn(&reshaped(a, m, k), &g2);
                    TensorBase::from_vec(b.shape().to_vec(), g.data().to_vec()).expect("numel")
                });
                vec![ga, gb]
            }),
        )
    }

    /// Add a length-n row vector to every row of an (m×n) matrix.
    pub fn add_rowvec(&self, bias: &VarBase<S>) -> Result<VarBase<S>> {
        self.check_mate(bias)?;
        let value = self.with_value(|a| {
            bias.with_value(|b| {
                if a.shape().len() != 2 || b.shape().len() != 1 || a.cols() != b.numel() {
                    return Err(mismatch("add_rowvec", a, b));
                }
                let n = a.cols();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + b.data()[i % n])
                    .collect();
                TensorBase::from_vec(a.shape().to_vec(), data)
            })
        })?;
        self.tape.push(
            "add_rowvec",
            value,
            vec![self.id, bias.id],
            Box::new(|ctx| {
                let gb = ctx.needs[1].then(|| {
                    let n = ctx.parents[1].numel();
                    let mut acc = vec![S::zero(); n];
                    for (i, &g) in ctx.grad.data().iter().enumerate() {
                        acc[i % n] += g;
                    }
                    TensorBase::vector(acc)
                });
                vec![ctx.needs[0].then(|| ctx.grad.clone()), gb]
            }),
        )
    }

    // ── elementwise unary ────────────────────────────────────────────

    fn unary(
        &self,
        op: &'static str,
        fwd: impl Fn(S) -> S,
        back: impl Fn(&BackwardCtx<'_, S>, usize) -> S + 'static,
    ) -> Result<VarBase<S>> {
        let value = self.with_value(|a| {
            let data = a.data().iter().map(|&x| fwd(x)).collect();
            TensorBase::from_vec(a.shape().to_vec(), data)
        })?;
        self.tape.push(
            op,
            value,
            vec![self.id],
            Box::new(move |ctx| {
                let data = (0..ctx.grad.numel())
                    .map(|i| ctx.grad.data()[i] * back(ctx, i))
                    .collect();
                vec![Some(
                    TensorBase::from_vec(ctx.grad.shape().to_vec(), data).expect("same shape"),
                )]
            }),
        )
    }

    pub fn tanh(&self) -> Result<VarBase<S>> {
        self.unary(
            "tanh",
            |x| x.tanh(),
            |ctx, i| {
                let y = ctx.out.data()[i];
                S::one() - y * y
            },
        )
    }

    pub fn sigmoid(&self) -> Result<VarBase<S>> {
        self.unary(
            "sigmoid",
            |x| {
                // split on sign so exp never overflows
                if x >= S::zero() {
                    S::one() / (S::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (S::one() + e)
                }
            },
            |ctx, i| {
                let y = ctx.out.data()[i];
                y * (S::one() - y)
            },
        )
    }

    pub fn exp(&self) -> Result<VarBase<S>> {
        self.unary("exp", |x| x.exp(), |ctx, i| ctx.out.data()[i])
    }

    pub fn log(&self) -> Result<VarBase<S>> {
        self.unary("log", |x| x.ln(), |ctx, i| S::one() / ctx.parents[0].data()[i])
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: S) -> Result<VarBase<S>> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Result<VarBase<S>> {
        self.scale(-S::one())
    }

    // ── softmax family (last axis, max-subtracted for stability) ──────

    fn rows_last_axis(shape: &[usize]) -> (usize, usize) {
        let cols = *shape.last().expect("non-empty shape");
        (shape.iter().product::<usize>() / cols, cols)
    }

    pub fn softmax(&self) -> Result<VarBase<S>> {
        let value = self.with_value(|a| {
            let (rows, cols) = Self::rows_last_axis(a.shape());
            let mut data = a.data().to_vec();
            for r in 0..rows {
                let row = &mut data[r * cols..(r + 1) * cols];
                let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
                let mut total = S::zero();
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v = *v / total;
                }
            }
            TensorBase::from_vec(a.shape().to_vec(), data)
        })?;
        self.tape.push(
            "softmax",
            value,
            vec![self.id],
            Box::new(|ctx| {
                let (rows, cols) = Self::rows_last_axis(ctx.out.shape());
                let y = ctx.out.data();
                let g = ctx.grad.data();
                let mut out = vec![S::zero(); y.len()];
                for r in 0..rows {
                    let base = r * cols;
                    let mut dot = S::zero();
                    for i in 0..cols {
                        dot += g[base + i] * y[base + i];
                    }
                    for i in 0..cols {
                        out[base + i] = y[base + i] * (g[base + i] - dot);
                    }
                }
                vec![Some(
                    TensorBase::from_vec(ctx.out.shape().to_vec(), out).expect("same shape"),
                )]
            }),
        )
    }

    pub fn log_softmax(&self) -> Result<VarBase<S>> {
        let value = self.with_value(|a| {
            let (rows, cols) = Self::rows_last_axis(a.shape());
            let mut data = a.data().to_vec();
            for r in 0..rows {
                let row = &mut data[r * cols..(r + 1) * cols];
                let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
                let lse = row.iter().map(|&v| (v - m).exp()).sum::<S>().ln() + m;
                for v in row.iter_mut() {
                    *v = *v - lse;
                }
            }
            TensorBase::from_vec(a.shape().to_vec(), data)
        })?;
        self.tape.push(
            "log_softmax",
            value,
            vec![self.id],
            Box::new(|ctx| {
                let (rows, cols) = Self::rows_last_axis(ctx.out.shape());
                let y = ctx.out.data();
                let g = ctx.grad.data();
                let mut out = vec![S::zero(); y.len()];
                for r in 0..rows {
                    let base = r * cols;
                    let gsum: S = g[base..base + cols].iter().cloned().sum();
                    for i in 0..cols {
                        out[base + i] = g[base + i] - y[base + i].exp() * gsum;
                    }
                }
                vec![Some(
                    TensorBase::from_vec(ctx.out.shape().to_vec(), out).expect("same shape"),
                )]
            }),
        )
    }

    /// Reinterpret the value under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<VarBase<S>> {
        let value = self.with_value(|a| {
            let numel: usize = shape.iter().product();
            if numel != a.numel() {
                return Err(CoreError::InvalidArgument(format!(
                    "reshape {:?} -> {:?} changes element count",
                    a.shape(),
                    shape
                )));
            }
            TensorBase::from_vec(shape.clone(), a.data().to_vec())
        })?;
        self.tape.push(
            "reshape",
            value,
            vec![self.id],
            Box::new(|ctx| {
                vec![Some(
                    TensorBase::from_vec(
                        ctx.parents[0].shape().to_vec(),
                        ctx.grad.data().to_vec(),
                    )
                    .expect("numel preserved"),
                )]
            }),
        )
    }

    // ── gathers ──────────────────────────────────────────────────────

    /// Select rows of an (m×n) matrix by index; backward scatter-adds.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<VarBase<S>> {
        let ids = ids.to_vec();
        let value = self.with_value(|a| {
            if a.shape().len() != 2 {
                return Err(CoreError::InvalidArgument(format!(
                    "gather_rows expects a matrix, got shape {:?}",
                    a.shape()
                )));
            }
            let (m, n) = (a.rows(), a.cols());
            let mut data = Vec::with_capacity(ids.len() * n);
            for &i in &ids {
                if i >= m {
                    return Err(CoreError::TokenOutOfRange { id: i, vocab: m });
                }
                data.extend_from_slice(a.row(i));
            }
            TensorBase::from_vec(vec![ids.len(), n], data)
        })?;
        let ids_back = ids.clone();
        self.tape.push(
            "gather_rows",
            value,
            vec![self.id],
            Box::new(move |ctx| {
                let (m, n) = (ctx.parents[0].rows(), ctx.parents[0].cols());
                let mut acc = TensorBase::zeros(vec![m, n]);
                for (r, &i) in ids_back.iter().enumerate() {
                    let gi = &ctx.grad.data()[r * n..(r + 1) * n];
                    let slot = &mut acc.data_mut()[i * n..(i + 1) * n];
                    for (s, &g) in slot.iter_mut().zip(gi) {
                        *s += g;
                    }
                }
                vec![Some(acc)]
            }),
        )
    }

    /// Per-row element pick: out[i] = self[i, ids[i]] for an (m×n) matrix.
    pub fn take_per_row(&self, ids: &[usize]) -> Result<VarBase<S>> {
        let ids = ids.to_vec();
        let value = self.with_value(|a| {
            if a.shape().len() != 2 || ids.len() != a.rows() {
                return Err(CoreError::InvalidArgument(format!(
                    "take_per_row expects a matrix with one index per row, got shape {:?} and {} ids",
                    a.shape(),
                    ids.len()
                )));
            }
            let n = a.cols();
            let mut data = Vec::with_capacity(ids.len());
            for (r, &i) in ids.iter().enumerate() {
                if i >= n {
                    return Err(CoreError::TokenOutOfRange { id: i, vocab: n });
                }
                data.push(a.data()[r * n + i]);
            }
            TensorBase::from_vec(vec![ids.len()], data)
        })?;
        let ids_back = ids.clone();
        self.tape.push(
            "take_per_row",
            value,
            vec![self.id],
            Box::new(move |ctx| {
                let (m, n) = (ctx.parents[0].rows(), ctx.parents[0].cols());
                let mut acc = TensorBase::zeros(vec![m, n]);
                for (r, &i) in ids_back.iter().enumerate() {
                    acc.data_mut()[r * n + i] = ctx.grad.data()[r];
                }
                vec![Some(acc)]
            }),
        )
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn sum(&self) -> Result<VarBase<S>> {
        let value =
            self.with_value(|a| TensorBase::scalar(a.data().iter().cloned().sum::<S>()));
        self.tape.push(
            "sum",
            value,
            vec![self.id],
            Box::new(|ctx| {
                vec![Some(TensorBase::filled(
                    ctx.parents[0].shape().to_vec(),
                    ctx.grad.item(),
                ))]
            }),
        )
    }

    pub fn mean(&self) -> Result<VarBase<S>> {
        let value = self.with_value(|a| {
            let n = S::from_float(a.numel() as f64);
            TensorBase::scalar(a.data().iter().cloned().sum::<S>() / n)
        });
        self.tape.push(
            "mean",
            value,
            vec![self.id],
            Box::new(|ctx| {
                let n = S::from_float(ctx.parents[0].numel() as f64);
                vec![Some(TensorBase::filled(
                    ctx.parents[0].shape().to_vec(),
                    ctx.grad.item() / n,
                ))]
            }),
        )
    }

    /// Sum along the last axis: (m×n) -> (m,).
    pub fn sum_rows(&self) -> Result<VarBase<S>> {
        let value = self.with_value(|a| {
            if a.shape().len() != 2 {
                return Err(CoreError::InvalidArgument(format!(
                    "sum_rows expects a matrix, got shape {:?}",
                    a.shape()
                )));
            }
            let data = (0..a.rows())
                .map(|r| a.row(r).iter().cloned().sum::<S>())
                .collect();
            TensorBase::from_vec(vec![a.rows()], data)
        })?;
        self.tape.push(
            "sum_rows",
            value,
            vec![self.id],
            Box::new(|ctx| {
                let (m, n) = (ctx.parents[0].rows(), ctx.parents[0].cols());
                let mut out = Vec::with_capacity(m * n);
                for r in 0..m {
                    out.extend(std::iter::repeat(ctx.grad.data()[r]).take(n));
                }
                vec![Some(
                    TensorBase::from_vec(vec![m, n], out).expect("numel"),
                )]
            }),
        )
    }

    // ── concat ───────────────────────────────────────────────────────

    /// Concatenate along `axis` (0 or 1). Rank-1 inputs only for axis 0.
    pub fn concat(axis: usize, parts: &[VarBase<S>]) -> Result<VarBase<S>> {
        if parts.is_empty() {
            return Err(CoreError::InvalidArgument("concat of zero tensors".into()));
        }
        let tape = parts[0].tape.clone();
        for p in parts {
            if !tape.same_tape(&p.tape) {
                return Err(CoreError::TapeMismatch);
            }
        }
        let values: Vec<TensorBase<S>> = parts.iter().map(|p| p.value()).collect();
        let rank = values[0].shape().len();
        if axis > 1 || axis >= rank {
            return Err(CoreError::InvalidArgument(format!(
                "concat axis {axis} invalid for rank {rank}"
            )));
        }
        let value = if rank == 1 && axis == 0 {
            let mut data = Vec::new();
            for v in &values {
                if v.shape().len() != 1 {
                    return Err(mismatch("concat", &values[0], v));
                }
                data.extend_from_slice(v.data());
            }
            TensorBase::vector(data)
        } else if axis == 0 {
            let n = values[0].cols();
            let mut data = Vec::new();
            let mut m = 0;
            for v in &values {
                if v.shape().len() != 2 || v.cols() != n {
                    return Err(mismatch("concat", &values[0], v));
                }
                m += v.rows();
                data.extend_from_slice(v.data());
            }
            TensorBase::from_vec(vec![m, n], data)?
        } else {
            let m = values[0].rows();
            let widths: Vec<usize> = values.iter().map(|v| v.cols()).collect();
            for v in &values {
                if v.shape().len() != 2 || v.rows() != m {
                    return Err(mismatch("concat", &values[0], v));
                }
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(m * total);
            for r in 0..m {
                for v in &values {
                    data.extend_from_slice(v.row(r));
                }
            }
            TensorBase::from_vec(vec![m, total], data)?
        };

        let parent_ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.push(
            "concat",
            value,
            parent_ids,
            Box::new(move |ctx| {
                let mut out: Vec<Option<TensorBase<S>>> = Vec::with_capacity(ctx.parents.len());
                if axis == 0 {
                    let mut offset = 0;
                    for (pi, p) in ctx.parents.iter().enumerate() {
                        let len = p.numel();
                        out.push(ctx.needs[pi].then(|| {
                            TensorBase::from_vec(
                                p.shape().to_vec(),
                                ctx.grad.data()[offset..offset + len].to_vec(),
                            )
                            .expect("numel")
                        }));
                        offset += len;
                    }
                } else {
                    let m = ctx.parents[0].rows();
                    let total = ctx.grad.cols();
                    let mut col = 0;
                    for (pi, p) in ctx.parents.iter().enumerate() {
                        let w = p.cols();
                        out.push(ctx.needs[pi].then(|| {
                            let mut data = Vec::with_capacity(m * w);
                            for r in 0..m {
                                let row = &ctx.grad.data()[r * total..(r + 1) * total];
                                data.extend_from_slice(&row[col..col + w]);
                            }
                            TensorBase::from_vec(vec![m, w], data).expect("numel")
                        }));
                        col += w;
                    }
                }
                out
            }),
        )
    }
}
