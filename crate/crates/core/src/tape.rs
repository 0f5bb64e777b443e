//! Reverse-mode automatic differentiation over `Tensor` values.
//!
//! A `Tape` is an append-only list of op records. Node indices grow in
//! construction order, so parents always precede children and the backward
//! sweep is a single reverse iteration. Gradients accumulate by addition when
//! a node fans out.

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    // the constant is not needed by the backward pass but keeps tape dumps
    // self-describing
    AddScalar(NodeId, #[allow(dead_code)] f64),
    MulScalar(NodeId, f64),
    Exp(NodeId),
    Ln(NodeId),
    Square(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Clamp(NodeId, f64, f64),
    MatMul(NodeId, NodeId),
    /// (B x K) + (1 x K), broadcast over rows.
    AddRow(NodeId, NodeId),
    /// (B x K) * (1 x K), broadcast over rows.
    MulRow(NodeId, NodeId),
    /// (B x K) - (B x 1), broadcast over columns.
    SubCol(NodeId, NodeId),
    /// Sum of all elements, 1 x 1.
    Sum(NodeId),
    /// Per-row log-sum-exp, (B x K) -> (B x 1).
    RowLse(NodeId),
    /// Reverse cumulative sum along a row vector: out_i = sum_{j>=i} x_j.
    RevCumsum(NodeId),
    /// Broadcast a 1 x 1 value to rows x cols.
    Expand(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients with respect to the loss, indexed by node. Interior-node slots
/// are consumed during the backward sweep; leaves (and any node nothing flows
/// into) keep theirs.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_check(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (la, lb) = (self.value(a).shape(), self.value(b).shape());
        if la != lb {
            return Err(Error::ShapeMismatch { op, lhs: la, rhs: lb });
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.shape_check("add", a, b)?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.shape_check("sub", a, b)?;
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.shape_check("mul", a, b)?;
        let v = self.value(a).mul_elem(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.shape_check("div", a, b)?;
        let v = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        self.push(Op::AddScalar(a, k), v)
    }

    pub fn mul_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x * k);
        self.push(Op::MulScalar(a, k), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(math::sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(math::softplus);
        self.push(Op::Softplus(a), v)
    }

    /// Clamp to [lo, hi]; gradient passes only where the input is strictly
    /// inside the interval.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add_row(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (ma, mv) = (self.value(a), self.value(v));
        if mv.rows() != 1 || mv.cols() != ma.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: ma.shape(),
                rhs: mv.shape(),
            });
        }
        let mut out = ma.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let x = out.get(r, c) + mv.get(0, c);
                out.set(r, c, x);
            }
        }
        Ok(self.push(Op::AddRow(a, v), out))
    }

    pub fn mul_row(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (ma, mv) = (self.value(a), self.value(v));
        if mv.rows() != 1 || mv.cols() != ma.cols() {
            return Err(Error::ShapeMismatch {
                op: "mul_row",
                lhs: ma.shape(),
                rhs: mv.shape(),
            });
        }
        let mut out = ma.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let x = out.get(r, c) * mv.get(0, c);
                out.set(r, c, x);
            }
        }
        Ok(self.push(Op::MulRow(a, v), out))
    }

    pub fn sub_col(&mut self, a: NodeId, c: NodeId) -> Result<NodeId> {
        let (ma, mc) = (self.value(a), self.value(c));
        if mc.cols() != 1 || mc.rows() != ma.rows() {
            return Err(Error::ShapeMismatch {
                op: "sub_col",
                lhs: ma.shape(),
                rhs: mc.shape(),
            });
        }
        let mut out = ma.clone();
        for r in 0..out.rows() {
            let d = mc.get(r, 0);
            for cix in 0..out.cols() {
                let x = out.get(r, cix) - d;
                out.set(r, cix, x);
            }
        }
        Ok(self.push(Op::SubCol(a, c), out))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn row_lse(&mut self, a: NodeId) -> NodeId {
        let ma = self.value(a);
        let data: Vec<f64> = (0..ma.rows()).map(|r| math::logsumexp(ma.row(r))).collect();
        let v = Tensor::new(ma.rows(), 1, data).expect("row_lse shape");
        self.push(Op::RowLse(a), v)
    }

    pub fn rev_cumsum(&mut self, a: NodeId) -> Result<NodeId> {
        let ma = self.value(a);
        if ma.rows() != 1 {
            return Err(Error::InvalidShape(format!(
                "rev_cumsum expects a row vector, got {}x{}",
                ma.rows(),
                ma.cols()
            )));
        }
        let mut data = ma.data().to_vec();
        let mut acc = 0.0;
        for x in data.iter_mut().rev() {
            acc += *x;
            *x = acc;
        }
        let v = Tensor::new(1, ma.cols(), data)?;
        Ok(self.push(Op::RevCumsum(a), v))
    }

    pub fn expand(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let ma = self.value(a);
        if !ma.is_scalar() {
            return Err(Error::InvalidShape(format!(
                "expand expects a 1x1 input, got {}x{}",
                ma.rows(),
                ma.cols()
            )));
        }
        let v = Tensor::full(rows, cols, ma.item());
        Ok(self.push(Op::Expand(a), v))
    }

    // ---- composite helpers ----

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.mul_scalar(s, 1.0 / n)
    }

    /// Row-wise log-softmax of x / tau.
    pub fn log_softmax_t(&mut self, x: NodeId, tau: f64) -> Result<NodeId> {
        let scaled = self.mul_scalar(x, 1.0 / tau);
        let lse = self.row_lse(scaled);
        self.sub_col(scaled, lse)
    }

    /// Row-wise softmax of x / tau.
    pub fn softmax_t(&mut self, x: NodeId, tau: f64) -> Result<NodeId> {
        let ls = self.log_softmax_t(x, tau)?;
        Ok(self.exp(ls))
    }

    /// Stable log(e^a + e^b) for 1x1 nodes: a + softplus(b - a).
    pub fn lse2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(b, a)?;
        let sp = self.softplus(d);
        self.add(a, sp)
    }

    /// Backward sweep from a scalar loss. Interior gradient slots are
    /// consumed as the sweep passes them; query leaves afterwards.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.rows(), lv.cols()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(idx, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        fn acc(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) -> Result<()> {
            match &mut grads[id.0] {
                Some(t) => t.add_assign(&delta),
                slot => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        }

        let node = &self.nodes[idx];
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, a, g.clone())?;
                acc(grads, b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(grads, a, g.clone())?;
                acc(grads, b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                let da = g.mul_elem(self.value(b))?;
                let db = g.mul_elem(self.value(a))?;
                acc(grads, a, da)?;
                acc(grads, b, db)?;
            }
            Op::Div(a, b) => {
                let vb = self.value(b);
                let da = g.zip_map(vb, "div_bwd", |gi, bi| gi / bi)?;
                // d/db (a/b) = -a / b^2 = -y / b
                let db = g
                    .zip_map(&node.value, "div_bwd", |gi, yi| gi * yi)?
                    .zip_map(vb, "div_bwd", |num, bi| -num / bi)?;
                acc(grads, a, da)?;
                acc(grads, b, db)?;
            }
            Op::Neg(a) => acc(grads, a, g.scale(-1.0))?,
            Op::AddScalar(a, _) => acc(grads, a, g.clone())?,
            Op::MulScalar(a, k) => acc(grads, a, g.scale(k))?,
            Op::Exp(a) => acc(grads, a, g.mul_elem(&node.value)?)?,
            Op::Ln(a) => acc(grads, a, g.zip_map(self.value(a), "ln_bwd", |gi, x| gi / x)?)?,
            Op::Square(a) => {
                let da = g.zip_map(self.value(a), "sq_bwd", |gi, x| gi * 2.0 * x)?;
                acc(grads, a, da)?;
            }
            Op::Relu(a) => {
                let da = g.zip_map(self.value(a), "relu_bwd", |gi, x| if x > 0.0 { gi } else { 0.0 })?;
                acc(grads, a, da)?;
            }
            Op::Sigmoid(a) => {
                let da = g.zip_map(&node.value, "sig_bwd", |gi, y| gi * y * (1.0 - y))?;
                acc(grads, a, da)?;
            }
            Op::Tanh(a) => {
                let da = g.zip_map(&node.value, "tanh_bwd", |gi, y| gi * (1.0 - y * y))?;
                acc(grads, a, da)?;
            }
            Op::Softplus(a) => {
                let da = g.zip_map(self.value(a), "sp_bwd", |gi, x| gi * math::sigmoid(x))?;
                acc(grads, a, da)?;
            }
            Op::Clamp(a, lo, hi) => {
                let da = g.zip_map(self.value(a), "clamp_bwd", |gi, x| {
                    if x > lo && x < hi {
                        gi
                    } else {
                        0.0
                    }
                })?;
                acc(grads, a, da)?;
            }
            Op::MatMul(a, b) => {
                let da = g.matmul_nt(self.value(b))?;
                let db = self.value(a).matmul_tn(g)?;
                acc(grads, a, da)?;
                acc(grads, b, db)?;
            }
            Op::AddRow(a, v) => {
                acc(grads, a, g.clone())?;
                acc(grads, v, g.col_sums())?;
            }
            Op::MulRow(a, v) => {
                let mv = self.value(v);
                let ma = self.value(a);
                let mut da = g.clone();
                for r in 0..da.rows() {
                    for c in 0..da.cols() {
                        let x = da.get(r, c) * mv.get(0, c);
                        da.set(r, c, x);
                    }
                }
                let dv = g.mul_elem(ma)?.col_sums();
                acc(grads, a, da)?;
                acc(grads, v, dv)?;
            }
            Op::SubCol(a, c) => {
                acc(grads, a, g.clone())?;
                acc(grads, c, g.row_sums().scale(-1.0))?;
            }
            Op::Sum(a) => {
                let va = self.value(a);
                acc(grads, a, Tensor::full(va.rows(), va.cols(), g.item()))?;
            }
            Op::RowLse(a) => {
                let va = self.value(a);
                let mut da = Tensor::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let lse = node.value.get(r, 0);
                    let gr = g.get(r, 0);
                    for c in 0..va.cols() {
                        da.set(r, c, gr * (va.get(r, c) - lse).exp());
                    }
                }
                acc(grads, a, da)?;
            }
            Op::RevCumsum(a) => {
                // d out_i / d x_j = [j >= i]  =>  dx = forward cumsum of g
                let mut data = g.data().to_vec();
                let mut run = 0.0;
                for x in data.iter_mut() {
                    run += *x;
                    *x = run;
                }
                acc(grads, a, Tensor::new(1, data.len(), data)?)?;
            }
            Op::Expand(a) => acc(grads, a, Tensor::scalar(g.sum()))?,
        }
        Ok(())
    }
}

/// Result of comparing analytic gradients against central finite differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub non_finite_evals: usize,
    pub n_coords: usize,
}

/// Compare analytic gradients of a scalar-valued tape function against
/// central finite differences at the given points. The closure must be
/// deterministic: inject any noise as fixed values, not fresh draws.
/// Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
pub fn grad_check_multi<F>(f: F, points: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &ids)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.rows(), v.cols()));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &ids)?;
    let base = tape.value(out).clone();
    if !base.is_scalar() {
        return Err(Error::NonScalarLoss(base.rows(), base.cols()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(points)
        .map(|(id, p)| {
            grads
                .wrt(*id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect();

    let mut max_rel_error: f64 = 0.0;
    let mut non_finite_evals = 0;
    let mut n_coords = 0;
    let mut work: Vec<Tensor> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        for i in 0..point.len() {
            n_coords += 1;
            let x0 = point.data()[i];
            work[pi].data_mut()[i] = x0 + h;
            let fp = eval(&work)?;
            work[pi].data_mut()[i] = x0 - h;
            let fm = eval(&work)?;
            work[pi].data_mut()[i] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                non_finite_evals += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            max_rel_error = max_rel_error.max(rel);
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        non_finite_evals,
        n_coords,
    })
}

/// Single-point convenience wrapper around `grad_check_multi`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    grad_check_multi(|tape, ids| f(tape, ids[0]), std::slice::from_ref(point), h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_t_uniform_on_equal_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 3, vec![0.7, 0.7, 0.7]).unwrap());
        for tau in [0.3, 1.0, 5.0] {
            let s = tape.softmax_t(x, tau).unwrap();
            for &v in tape.value(s).data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &Tensor::ones(2, 2));
    }

    #[test]
    fn grad_of_sum_of_squares_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 2, vec![1.0, 2.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn fanout_accumulates() {
        // y = x + x  => dy/dx = 2
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.add(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().item(), 2.0);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(2, 2));
        let y = tape.relu(x);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // backward(sum of losses) == sum of backwards
        let x0 = Tensor::new(1, 3, vec![0.4, -1.2, 2.2]).unwrap();

        let build_a = |tape: &mut Tape, x: NodeId| -> Result<NodeId> {
            let e = tape.exp(x);
            Ok(tape.sum(e))
        };
        let build_b = |tape: &mut Tape, x: NodeId| -> Result<NodeId> {
            let s = tape.sigmoid(x);
            Ok(tape.sum(s))
        };

        let mut t1 = Tape::new();
        let x1 = t1.leaf(x0.clone());
        let la = build_a(&mut t1, x1).unwrap();
        let lb = build_b(&mut t1, x1).unwrap();
        let total = t1.add(la, lb).unwrap();
        let g_total = t1.backward(total).unwrap().wrt(x1).unwrap().clone();

        let mut t2 = Tape::new();
        let x2 = t2.leaf(x0.clone());
        let la2 = build_a(&mut t2, x2).unwrap();
        let ga = t2.backward(la2).unwrap().wrt(x2).unwrap().clone();
        let mut t3 = Tape::new();
        let x3 = t3.leaf(x0);
        let lb3 = build_b(&mut t3, x3).unwrap();
        let gb = t3.backward(lb3).unwrap().wrt(x3).unwrap().clone();

        for i in 0..3 {
            assert!((g_total.data()[i] - ga.data()[i] - gb.data()[i]).abs() < 1e-12);
        }
    }

    fn check<F>(f: F, point: Tensor)
    where
        F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
    {
        let report = grad_check(f, &point, 1e-5).unwrap();
        assert_eq!(report.non_finite_evals, 0);
        assert!(
            report.max_rel_error < 1e-6,
            "max rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn elementwise_ops_pass_grad_check() {
        let p = Tensor::new(1, 4, vec![0.6, -0.4, 1.7, -2.1]).unwrap();
        check(
            |t, x| {
                let e = t.exp(x);
                Ok(t.sum(e))
            },
            p.clone(),
        );
        check(
            |t, x| {
                let s = t.sigmoid(x);
                Ok(t.sum(s))
            },
            p.clone(),
        );
        check(
            |t, x| {
                let s = t.tanh(x);
                Ok(t.sum(s))
            },
            p.clone(),
        );
        check(
            |t, x| {
                let s = t.softplus(x);
                Ok(t.sum(s))
            },
            p.clone(),
        );
        check(
            |t, x| {
                let s = t.square(x);
                Ok(t.sum(s))
            },
            p.clone(),
        );
        check(
            |t, x| {
                let s = t.neg(x);
                let s = t.mul_scalar(s, 1.7);
                let s = t.add_scalar(s, 0.3);
                Ok(t.sum(s))
            },
            p.clone(),
        );
        // ln and div on positive inputs
        let pos = Tensor::new(1, 3, vec![0.5, 1.3, 2.4]).unwrap();
        check(
            |t, x| {
                let l = t.ln(x);
                Ok(t.sum(l))
            },
            pos.clone(),
        );
        check(
            |t, x| {
                let e = t.exp(x);
                let d = t.div(x, e)?;
                Ok(t.sum(d))
            },
            pos,
        );
        // relu away from the kink
        check(
            |t, x| {
                let r = t.relu(x);
                Ok(t.sum(r))
            },
            Tensor::new(1, 4, vec![0.6, -0.4, 1.7, -2.1]).unwrap(),
        );
        // clamp with all inputs strictly interior
        check(
            |t, x| {
                let c = t.clamp(x, -10.0, 10.0);
                let s = t.square(c);
                Ok(t.sum(s))
            },
            p,
        );
    }

    #[test]
    fn structural_ops_pass_grad_check() {
        let m = Tensor::new(2, 3, vec![0.2, -0.7, 1.1, 0.9, 0.4, -1.3]).unwrap();
        let v = Tensor::new(1, 3, vec![0.5, -0.2, 0.8]).unwrap();
        let w = Tensor::new(3, 2, vec![0.3, -0.6, 1.2, 0.1, -0.4, 0.7]).unwrap();

        let report = grad_check_multi(
            |t, ids| {
                let prod = t.matmul(ids[0], ids[2])?;
                let sq = t.square(prod);
                let s1 = t.sum(sq);
                let ar = t.add_row(ids[0], ids[1])?;
                let mr = t.mul_row(ar, ids[1])?;
                let s2 = t.sum(mr);
                t.add(s1, s2)
            },
            &[m.clone(), v, w],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);

        let report = grad_check(
            |t, x| {
                let lse = t.row_lse(x);
                let centered = t.sub_col(x, lse)?;
                let e = t.exp(centered);
                let sq = t.square(e);
                Ok(t.sum(sq))
            },
            &m,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);

        let report = grad_check(
            |t, x| {
                let c = t.rev_cumsum(x)?;
                let sq = t.square(c);
                Ok(t.sum(sq))
            },
            &Tensor::new(1, 4, vec![0.1, 0.4, 0.3, 0.2]).unwrap(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);

        let report = grad_check(
            |t, x| {
                let e = t.expand(x, 3, 2)?;
                let sq = t.square(e);
                Ok(t.sum(sq))
            },
            &Tensor::scalar(0.7),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn two_layer_net_matches_finite_differences() {
        // Random fixed values; loss = sum(relu(x W1 + b1) W2)^2
        let x = Tensor::new(2, 3, vec![0.5, -0.2, 0.8, 1.1, 0.3, -0.6]).unwrap();
        let w1 = Tensor::new(3, 4, vec![
            0.21, -0.45, 0.33, 0.12, 0.64, -0.17, 0.28, -0.52, -0.31, 0.44, 0.09, 0.73,
        ])
        .unwrap();
        let b1 = Tensor::new(1, 4, vec![0.05, -0.1, 0.2, 0.0]).unwrap();
        let w2 = Tensor::new(4, 1, vec![0.9, -0.8, 0.4, 0.6]).unwrap();

        let report = grad_check_multi(
            |t, ids| {
                let xn = t.leaf(x.clone());
                let h = t.matmul(xn, ids[0])?;
                let h = t.add_row(h, ids[1])?;
                let h = t.relu(h);
                let out = t.matmul(h, ids[2])?;
                let sq = t.square(out);
                Ok(t.sum(sq))
            },
            &[w1, b1, w2],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.non_finite_evals, 0);
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }

    #[test]
    fn grad_check_on_sum_of_squares_is_tight() {
        let report = grad_check(
            |t, x| {
                let sq = t.square(x);
                Ok(t.sum(sq))
            },
            &Tensor::new(1, 5, vec![1.0, -2.0, 0.3, 0.0, 4.2]).unwrap(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
    }

    #[test]
    fn replay_with_identical_inputs_is_bit_identical() {
        let build = |tape: &mut Tape| -> NodeId {
            let x = tape.leaf(Tensor::new(1, 3, vec![0.3, -0.8, 1.4]).unwrap());
            let e = tape.exp(x);
            let lse = tape.row_lse(e);
            tape.sum(lse)
        };
        let mut t1 = Tape::new();
        let o1 = build(&mut t1);
        let mut t2 = Tape::new();
        let o2 = build(&mut t2);
        assert_eq!(t1.value(o1).item().to_bits(), t2.value(o2).item().to_bits());
    }
}
