//! Tape-based reverse-mode differentiation over dense rank-2 tensors.
//!
//! A [`Tape`] records eagerly-evaluated ops; [`Tape::backward`] runs one
//! reverse sweep and leaves gradients on the tape. Tapes are single-use and
//! confined to one worker.

mod adam;
mod eigh;
mod ops;

pub use adam::AdamState;
pub use eigh::jacobi_eigh;

use crate::mat::Mat;
use crate::sparse::CsrMatrix;
use crate::{Error, Result};
use std::sync::Arc;

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op {
    Leaf,
    Add { a: usize, b: usize, broadcast_b: bool },
    Scale { a: usize, c: f64 },
    Matmul { a: usize, b: usize },
    Spmm { m: Arc<CsrMatrix>, b: usize },
    Transpose { a: usize },
    Relu { a: usize },
    Sigmoid { a: usize },
    Dropout { a: usize, mask: Vec<f64> },
    RowSoftmax { a: usize },
    CrossEntropy {
        logits: usize,
        softmax: Mat,
        labels: Vec<i32>,
        mask: Vec<bool>,
        normalizer: f64,
    },
    ConcatCols { a: usize, b: usize },
    MeanRows { a: usize, idx: Vec<usize> },
    Sum { a: usize },
    FrobSq { a: usize },
    CosColsDist { a: usize, b: usize },
    EwiseMul { a: usize, b: usize },
    Reshape { a: usize },
    EwiseSqrt { a: usize },
    EwiseRecip { a: usize },
    ScaleByScalar { a: usize, s: usize },
}

struct Node {
    value: Mat,
    grad: Option<Mat>,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
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

    fn push(&mut self, value: Mat, needs_grad: bool, op: Op) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced at tape node {}",
            self.nodes.len()
        );
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a trainable leaf.
    pub fn var(&mut self, value: Mat) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Record a constant leaf; no gradient is ever produced for it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass, if this node required one.
    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].grad.as_ref()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate for every node
    /// with a trainable ancestor; constants get none.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.rows(), lv.cols()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(
        nodes: &[Node],
        grads: &mut [Option<Mat>],
        target: usize,
        contribution: Mat,
    ) {
        if !nodes[target].needs_grad {
            return;
        }
        debug_assert!(contribution.same_shape(&nodes[target].value));
        match &mut grads[target] {
            Some(g) => g.add_scaled(&contribution, 1.0),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        ops::propagate(self, i, g, grads)
    }
}

/// Compare the tape gradient of `f` at `x` against central finite
/// differences. Returns the max relative error over all coordinates.
///
/// `f` must build the same computation whenever it is called (pure).
pub fn finite_diff_check<F>(f: F, x: &Mat, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.var(x.clone());
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    let grad = tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Mat::zeros(x.rows(), x.cols()));

    let eval = |m: &Mat| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.var(m.clone());
        let l = f(&mut t, v)?;
        Ok(t.value(l).at(0, 0))
    };

    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + eps;
        let fp = eval(&probe)?;
        probe.data_mut()[k] = orig - eps;
        let fm = eval(&probe)?;
        probe.data_mut()[k] = orig;
        let fd = (fp - fm) / (2.0 * eps);
        let an = grad.data()[k];
        let denom = fd.abs().max(an.abs()).max(1.0);
        worst = worst.max((fd - an).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
