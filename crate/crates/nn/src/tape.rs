//! Reverse-mode differentiation on an append-only tape.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node holding
//! its value and the handles of its inputs. [`Tape::grad`] walks the nodes
//! backwards, but it builds each adjoint out of ordinary `Var` operations, so
//! the gradients it returns are themselves nodes on the same tape. Calling
//! `grad` again on an expression of those gradients yields second-order
//! derivatives, which is what a gradient penalty on a critic needs.
//!
//! Node handles are indices into the tape and strictly increase, so the graph
//! is acyclic by construction and a reverse index sweep is a valid
//! topological order.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MaskMul(usize, Rc<Tensor>),
    SumRows(usize),
    SumCols(usize),
    SumAll(usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    BroadcastScalar(usize),
    Sqrt(usize),
    Recip(usize),
    ConcatCols(usize, usize),
    SliceCols { x: usize, start: usize },
    PadCols { x: usize, start: usize },
}

impl Op {
    fn parents(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul { a, b, .. } => [Some(a), Some(b)],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulRow(a, b) | ConcatCols(a, b) => {
                [Some(a), Some(b)]
            }
            Scale(a, _) | AddScalar(a) | MaskMul(a, _) | SumRows(a) | SumCols(a) | SumAll(a)
            | BroadcastRows(a) | BroadcastCols(a) | BroadcastScalar(a) | Sqrt(a) | Recip(a) => {
                [Some(a), None]
            }
            SliceCols { x, .. } | PadCols { x, .. } => [Some(x), None],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Append-only record of a computation. One tape serves one training step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input. Gradients flow only into leaves with `requires_grad`.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push_node(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            tracked: requires_grad,
        })
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let tracked = {
            let nodes = self.nodes.borrow();
            op.parents().iter().flatten().any(|&p| nodes[p].tracked)
        };
        self.push_node(Node {
            value: Rc::new(value),
            op,
            tracked,
        })
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The returned handles live on this tape and stay differentiable, so an
    /// expression built from them can be passed to `grad` again. Inputs that
    /// `output` does not depend on receive an untracked zero tensor.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if output.shape() != [1, 1] {
            return Err(NnError::Contract(format!(
                "gradient requested of a non-scalar output with shape {:?}",
                output.shape()
            )));
        }
        let end = output.id + 1;
        let mut is_target = vec![false; end];
        for w in wrt {
            if w.id < end {
                is_target[w.id] = true;
            }
        }

        // A node needs an adjoint only if some gradient target lies beneath it.
        let mut needed = vec![false; end];
        {
            let nodes = self.nodes.borrow();
            for i in 0..end {
                let node = &nodes[i];
                if !node.tracked {
                    continue;
                }
                needed[i] =
                    is_target[i] || node.op.parents().iter().flatten().any(|&p| needed[p]);
            }
        }

        let mut adjoint: Vec<Option<Var<'t>>> = vec![None; end];
        let mut found: Vec<Option<Var<'t>>> = vec![None; end];
        if needed[output.id] {
            adjoint[output.id] = Some(self.constant(Tensor::scalar(1.0)));
        }
        for i in (0..end).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = adjoint[i].take() else {
                continue;
            };
            if is_target[i] {
                found[i] = Some(g);
            }
            let op = self.nodes.borrow()[i].op.clone();
            for (parent, contribution) in self.vjp(i, &op, g)? {
                if !needed[parent] {
                    continue;
                }
                adjoint[parent] = Some(match adjoint[parent].take() {
                    Some(acc) => acc.add(contribution)?,
                    None => contribution,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                found.get(w.id).copied().flatten().unwrap_or_else(|| {
                    let [r, c] = w.shape();
                    self.constant(Tensor::zeros(r, c))
                })
            })
            .collect())
    }

    /// Plain-valued gradients, for callers that do not differentiate again.
    pub fn gradients<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Tensor>> {
        Ok(self
            .grad(output, wrt)?
            .into_iter()
            .map(|g| (*g.value()).clone())
            .collect())
    }

    /// Vector-Jacobian products of node `id` for the adjoint `g`.
    fn vjp<'t>(&'t self, id: usize, op: &Op, g: Var<'t>) -> Result<Vec<(usize, Var<'t>)>> {
        let v = |i| self.var(i);
        Ok(match *op {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (v(a), v(b));
                let (ga, gb) = match (ta, tb) {
                    (false, false) => (g.matmul_t(false, vb, true)?, va.matmul_t(true, g, false)?),
                    (true, false) => (vb.matmul_t(false, g, true)?, va.matmul_t(false, g, false)?),
                    (false, true) => (g.matmul_t(false, vb, false)?, g.matmul_t(true, va, false)?),
                    (true, true) => (vb.matmul_t(true, g, true)?, g.matmul_t(true, va, true)?),
                };
                vec![(a, ga), (b, gb)]
            }
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, g.scale(-1.0))],
            Op::Mul(a, b) => vec![(a, g.mul(v(b))?), (b, g.mul(v(a))?)],
            Op::AddRow(a, r) => vec![(a, g), (r, g.sum_rows())],
            Op::MulRow(a, r) => vec![(a, g.mul_row(v(r))?), (r, g.mul(v(a))?.sum_rows())],
            Op::Scale(a, s) => vec![(a, g.scale(s))],
            Op::AddScalar(a) => vec![(a, g)],
            Op::MaskMul(a, ref m) => vec![(a, g.mask_mul(Rc::clone(m))?)],
            Op::SumRows(a) => vec![(a, g.broadcast_rows(v(a).shape()[0]))],
            Op::SumCols(a) => vec![(a, g.broadcast_cols(v(a).shape()[1]))],
            Op::SumAll(a) => {
                let [r, c] = v(a).shape();
                vec![(a, g.broadcast_scalar(r, c))]
            }
            Op::BroadcastRows(a) => vec![(a, g.sum_rows())],
            Op::BroadcastCols(a) => vec![(a, g.sum_cols())],
            Op::BroadcastScalar(a) => vec![(a, g.sum_all())],
            Op::Sqrt(a) => {
                // d sqrt(x) = 1 / (2 sqrt(x)), expressed through the output.
                let y = v(id);
                vec![(a, g.mul(y.recip().scale(0.5))?)]
            }
            Op::Recip(a) => {
                let y = v(id);
                vec![(a, g.mul(y.mul(y)?)?.scale(-1.0))]
            }
            Op::ConcatCols(a, b) => {
                let ca = v(a).shape()[1];
                let cb = v(b).shape()[1];
                vec![(a, g.slice_cols(0, ca)?), (b, g.slice_cols(ca, ca + cb)?)]
            }
            Op::SliceCols { x, start } => {
                let total = v(x).shape()[1];
                vec![(x, g.pad_cols(start, total)?)]
            }
            Op::PadCols { x, start } => {
                let width = v(x).shape()[1];
                vec![(x, g.slice_cols(start, start + width)?)]
            }
        })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].tracked
    }

    fn same_shape(&self, other: Var<'t>) -> Result<(Rc<Tensor>, Rc<Tensor>)> {
        let (a, b) = (self.value(), other.value());
        a.expect_same_shape(&b)?;
        Ok((a, b))
    }

    fn row_operand(&self, row: Var<'t>) -> Result<(Rc<Tensor>, Rc<Tensor>)> {
        let (a, r) = (self.value(), row.value());
        if r.rows() != 1 || r.cols() != a.cols() {
            return Err(NnError::shape_mismatch(a.shape(), r.shape()));
        }
        Ok((a, r))
    }

    pub fn matmul_t(self, trans_a: bool, other: Var<'t>, trans_b: bool) -> Result<Var<'t>> {
        let out = self.value().matmul_t(trans_a, &other.value(), trans_b)?;
        Ok(self.tape.push(
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta: trans_a,
                tb: trans_b,
            },
        ))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_t(false, other, false)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other)?;
        let out = a.zip_map(&b, |x, y| x + y)?;
        Ok(self.tape.push(out, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other)?;
        let out = a.zip_map(&b, |x, y| x - y)?;
        Ok(self.tape.push(out, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other)?;
        let out = a.zip_map(&b, |x, y| x * y)?;
        Ok(self.tape.push(out, Op::Mul(self.id, other.id)))
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self).expect("a tensor matches its own shape")
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (a, r) = self.row_operand(row)?;
        let mut out = (*a).clone();
        let cols = a.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += r.data()[i % cols];
        }
        Ok(self.tape.push(out, Op::AddRow(self.id, row.id)))
    }

    /// Multiplies every row elementwise by a `1 x cols` row.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (a, r) = self.row_operand(row)?;
        let mut out = (*a).clone();
        let cols = a.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= r.data()[i % cols];
        }
        Ok(self.tape.push(out, Op::MulRow(self.id, row.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let out = self.value().map(|x| x * s);
        self.tape.push(out, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let out = self.value().map(|x| x + s);
        self.tape.push(out, Op::AddScalar(self.id))
    }

    /// Elementwise product with a constant tensor that is not differentiated.
    pub fn mask_mul(self, mask: Rc<Tensor>) -> Result<Var<'t>> {
        let out = self.value().zip_map(&mask, |x, m| x * m)?;
        Ok(self.tape.push(out, Op::MaskMul(self.id, mask)))
    }

    pub fn relu(self) -> Var<'t> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(self, alpha: f64) -> Var<'t> {
        let mask = self.value().map(|x| if x > 0.0 { 1.0 } else { alpha });
        self.mask_mul(Rc::new(mask))
            .expect("mask built from the operand's own shape")
    }

    /// Column sums, `n x c -> 1 x c`.
    pub fn sum_rows(self) -> Var<'t> {
        let out = self.value().sum_rows();
        self.tape.push(out, Op::SumRows(self.id))
    }

    /// Row sums, `n x c -> n x 1`.
    pub fn sum_cols(self) -> Var<'t> {
        let out = self.value().sum_cols();
        self.tape.push(out, Op::SumCols(self.id))
    }

    pub fn sum_all(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push(out, Op::SumAll(self.id))
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Column means, `n x c -> 1 x c`.
    pub fn mean_rows(self) -> Var<'t> {
        let n = self.shape()[0] as f64;
        self.sum_rows().scale(1.0 / n)
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_rows(self, n: usize) -> Var<'t> {
        let v = self.value();
        debug_assert_eq!(v.rows(), 1);
        let mut data = Vec::with_capacity(n * v.cols());
        for _ in 0..n {
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(n, v.cols(), data).expect("sized above");
        self.tape.push(out, Op::BroadcastRows(self.id))
    }

    /// Repeats an `n x 1` column `c` times.
    pub fn broadcast_cols(self, c: usize) -> Var<'t> {
        let v = self.value();
        debug_assert_eq!(v.cols(), 1);
        let data = v
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, c))
            .collect();
        let out = Tensor::new(v.rows(), c, data).expect("sized above");
        self.tape.push(out, Op::BroadcastCols(self.id))
    }

    pub fn broadcast_scalar(self, rows: usize, cols: usize) -> Var<'t> {
        let out = Tensor::filled(rows, cols, self.value().item());
        self.tape.push(out, Op::BroadcastScalar(self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        let out = self.value().map(f64::sqrt);
        self.tape.push(out, Op::Sqrt(self.id))
    }

    /// Elementwise reciprocal. Zero maps to zero so that the derivative of a
    /// square root at the origin is taken as zero instead of infinite.
    pub fn recip(self) -> Var<'t> {
        let out = self.value().map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        self.tape.push(out, Op::Recip(self.id))
    }

    /// Euclidean norm of every row, `n x c -> n x 1`.
    pub fn norm2_rows(self) -> Var<'t> {
        self.square().sum_cols().sqrt()
    }

    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().hstack(&other.value())?;
        Ok(self.tape.push(out, Op::ConcatCols(self.id, other.id)))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start > end || end > v.cols() {
            return Err(NnError::Shape(format!(
                "column range {start}..{end} outside {:?}",
                v.shape()
            )));
        }
        let out = v.slice_cols(start, end);
        Ok(self.tape.push(out, Op::SliceCols { x: self.id, start }))
    }

    /// Embeds the columns at offset `start` of a zero tensor `total` columns wide.
    pub fn pad_cols(self, start: usize, total: usize) -> Result<Var<'t>> {
        let v = self.value();
        if start + v.cols() > total {
            return Err(NnError::Shape(format!(
                "cannot place {:?} at column {start} of a {total}-column tensor",
                v.shape()
            )));
        }
        let mut out = Tensor::zeros(v.rows(), total);
        for r in 0..v.rows() {
            for c in 0..v.cols() {
                out.set(r, start + c, v.get(r, c));
            }
        }
        Ok(self.tape.push(out, Op::PadCols { x: self.id, start }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three_has_gradient_six() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.square();
        let g = tape.gradients(y, &[x]).unwrap();
        assert_eq!(g[0].item(), 6.0);
    }

    #[test]
    fn non_scalar_output_is_a_contract_error() {
        let tape = Tape::new();
        let x = tape.param(Tensor::zeros(2, 2));
        let err = tape.grad(x.square(), &[x]).unwrap_err();
        assert!(matches!(err, NnError::Contract(_)));
    }

    #[test]
    fn second_derivative_of_cube() {
        // f = x^3, f' = 3x^2, f'' = 6x.
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let f = x.square().mul(x).unwrap();
        let df = tape.grad(f, &[x]).unwrap()[0];
        assert_eq!(df.value().item(), 12.0);
        let d2f = tape.grad(df, &[x]).unwrap()[0];
        assert_eq!(d2f.value().item(), 12.0);
    }

    #[test]
    fn unrelated_input_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.0));
        let y = tape.param(Tensor::filled(2, 3, 1.0));
        let g = tape.gradients(x.scale(2.0), &[y]).unwrap();
        assert_eq!(g[0], Tensor::zeros(2, 3));
    }

    #[test]
    fn constants_do_not_receive_gradient_paths() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(5.0));
        let x = tape.param(Tensor::scalar(2.0));
        let y = c.mul(x).unwrap();
        assert!(!c.requires_grad());
        assert!(y.requires_grad());
        assert_eq!(tape.gradients(y, &[x]).unwrap()[0].item(), 5.0);
    }
}
