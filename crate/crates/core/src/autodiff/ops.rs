//! Op recording and pullbacks.

use super::{Node, Op, Tape, Var};
use crate::mat::Mat;
use crate::sparse::CsrMatrix;
use crate::util;
use crate::{Error, Result};
use rand::Rng;
use std::sync::Arc;

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast_b = bv.rows() == 1 && av.rows() > 1 && bv.cols() == av.cols();
        let value = if broadcast_b {
            let mut out = av.clone();
            for i in 0..out.rows() {
                let brow: Vec<f64> = bv.row(0).to_vec();
                for (o, &bb) in out.row_mut(i).iter_mut().zip(&brow) {
                    *o += bb;
                }
            }
            out
        } else {
            av.add(bv)?
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Add { a: a.0, b: b.0, broadcast_b }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scaled(c);
        let needs = self.needs(a);
        self.push(value, needs, Op::Scale { a: a.0, c })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Matmul { a: a.0, b: b.0 }))
    }

    /// Sparse-dense product; the sparse operand is never differentiated.
    pub fn spmm(&mut self, m: &Arc<CsrMatrix>, b: Var) -> Result<Var> {
        let value = m.matmul_dense(self.value(b))?;
        let needs = self.needs(b);
        Ok(self.push(value, needs, Op::Spmm { m: Arc::clone(m), b: b.0 }))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(value, needs, Op::Transpose { a: a.0 })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let needs = self.needs(a);
        self.push(value, needs, Op::Relu { a: a.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let needs = self.needs(a);
        self.push(value, needs, Op::Sigmoid { a: a.0 })
    }

    /// Inverted dropout: entries are kept with probability 1-p and scaled by
    /// 1/(1-p), so evaluation needs no rescaling. Identity when not training.
    pub fn dropout(&mut self, a: Var, p: f64, train_mode: bool, seed: u64) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
        if !train_mode || p == 0.0 {
            return a;
        }
        let mut rng = util::rng(seed, 0xd20);
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let av = self.value(a);
        let mask: Vec<f64> = (0..av.len())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mut value = av.clone();
        for (v, &m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        let needs = self.needs(a);
        self.push(value, needs, Op::Dropout { a: a.0, mask })
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut value = av.clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let needs = self.needs(a);
        self.push(value, needs, Op::RowSoftmax { a: a.0 })
    }

    /// Masked softmax cross-entropy: sum of per-node losses over `mask`,
    /// divided by `normalizer`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[i32],
        mask: &[bool],
        normalizer: f64,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = lv.shape();
        if labels.len() != n || mask.len() != n {
            return Err(Error::invalid(format!(
                "cross_entropy: {n} logits rows but {} labels / {} mask entries",
                labels.len(),
                mask.len()
            )));
        }
        if normalizer <= 0.0 {
            return Err(Error::invalid("cross_entropy normalizer must be positive"));
        }
        let mut softmax = Mat::zeros(n, c);
        let mut total = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut z = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - mx).exp();
                *softmax.at_mut(i, j) = e;
                z += e;
            }
            for j in 0..c {
                *softmax.at_mut(i, j) /= z;
            }
            if mask[i] {
                let y = labels[i];
                if y < 0 || y as usize >= c {
                    return Err(Error::invalid(format!(
                        "cross_entropy: node {i} is masked but has label {y}"
                    )));
                }
                total += z.ln() + mx - row[y as usize];
            }
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Mat::scalar(total / normalizer),
            needs,
            Op::CrossEntropy {
                logits: logits.0,
                softmax,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                normalizer,
            },
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_cols(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::ConcatCols { a: a.0, b: b.0 }))
    }

    /// Mean over the given rows, a 1 x cols result. A single index extracts
    /// that row.
    pub fn mean_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if idx.is_empty() {
            return Err(Error::invalid("mean_rows over an empty index set"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::invalid(format!(
                "mean_rows index {bad} out of range for {} rows",
                av.rows()
            )));
        }
        let value = av.mean_rows(idx);
        let needs = self.needs(a);
        Ok(self.push(value, needs, Op::MeanRows { a: a.0, idx: idx.to_vec() }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, needs, Op::Sum { a: a.0 })
    }

    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).frob_sq());
        let needs = self.needs(a);
        self.push(value, needs, Op::FrobSq { a: a.0 })
    }

    /// Sum over columns of (1 - cosine similarity). A zero-norm column on
    /// either side contributes a fixed 1 with zero gradient.
    pub fn cosine_columns_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.check_same_shape(bv, "cosine_columns_distance")?;
        let mut total = 0.0;
        for j in 0..av.cols() {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for i in 0..av.rows() {
                let (x, y) = (av.at(i, j), bv.at(i, j));
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na.sqrt() * nb.sqrt() < ZERO_NORM_GUARD {
                total += 1.0;
            } else {
                total += 1.0 - dot / (na.sqrt() * nb.sqrt());
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Mat::scalar(total), needs, Op::CosColsDist { a: a.0, b: b.0 }))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::EwiseMul { a: a.0, b: b.0 }))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if av.len() != rows * cols {
            return Err(Error::invalid(format!(
                "reshape {:?} -> ({rows},{cols}) changes length",
                av.shape()
            )));
        }
        let value = av.clone().reshaped(rows, cols);
        let needs = self.needs(a);
        Ok(self.push(value, needs, Op::Reshape { a: a.0 }))
    }

    /// Elementwise square root; inputs must be nonnegative.
    pub fn ewise_sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        let needs = self.needs(a);
        self.push(value, needs, Op::EwiseSqrt { a: a.0 })
    }

    /// Elementwise reciprocal; inputs must be bounded away from zero.
    pub fn ewise_recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::recip);
        let needs = self.needs(a);
        self.push(value, needs, Op::EwiseRecip { a: a.0 })
    }

    /// Broadcast multiply by a 1x1 tensor (tracked scalar).
    pub fn scale_by_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if !sv.is_scalar() {
            return Err(Error::invalid("scale_by_scalar needs a 1x1 scalar"));
        }
        let value = self.value(a).scaled(sv.at(0, 0));
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(value, needs, Op::ScaleByScalar { a: a.0, s: s.0 }))
    }
}

const ZERO_NORM_GUARD: f64 = 1e-300;

pub(super) fn propagate(tape: &Tape, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
    let nodes = &tape.nodes;
    let acc = Tape::accumulate;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add { a, b, broadcast_b } => {
            acc(nodes, grads, *a, g.clone());
            if *broadcast_b {
                let mut gb = Mat::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(nodes, grads, *b, gb);
            } else {
                acc(nodes, grads, *b, g.clone());
            }
        }
        Op::Scale { a, c } => acc(nodes, grads, *a, g.scaled(*c)),
        Op::Matmul { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if nodes[*a].needs_grad {
                let da = g.matmul(&bv.transpose()).expect("shape checked at record");
                acc(nodes, grads, *a, da);
            }
            if nodes[*b].needs_grad {
                let db = av.transpose().matmul(g).expect("shape checked at record");
                acc(nodes, grads, *b, db);
            }
        }
        Op::Spmm { m, b } => {
            if nodes[*b].needs_grad {
                let db = m.t_matmul_dense(g).expect("shape checked at record");
                acc(nodes, grads, *b, db);
            }
        }
        Op::Transpose { a } => acc(nodes, grads, *a, g.transpose()),
        Op::Relu { a } => {
            let av = &nodes[*a].value;
            let da = g
                .zip_map(av, |gx, x| if x > 0.0 { gx } else { 0.0 })
                .expect("same shape");
            acc(nodes, grads, *a, da);
        }
        Op::Sigmoid { a } => {
            let y = &nodes[i].value;
            let da = g.zip_map(y, |gx, s| gx * s * (1.0 - s)).expect("same shape");
            acc(nodes, grads, *a, da);
        }
        Op::Dropout { a, mask } => {
            let mut da = g.clone();
            for (v, &m) in da.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
            acc(nodes, grads, *a, da);
        }
        Op::RowSoftmax { a } => {
            let y = &nodes[i].value;
            let mut da = Mat::zeros(g.rows(), g.cols());
            for r in 0..g.rows() {
                let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(&gx, &yx)| gx * yx).sum();
                for j in 0..g.cols() {
                    *da.at_mut(r, j) = y.at(r, j) * (g.at(r, j) - dot);
                }
            }
            acc(nodes, grads, *a, da);
        }
        Op::CrossEntropy {
            logits,
            softmax,
            labels,
            mask,
            normalizer,
        } => {
            let gs = g.at(0, 0) / normalizer;
            let mut da = Mat::zeros(softmax.rows(), softmax.cols());
            for r in 0..softmax.rows() {
                if !mask[r] {
                    continue;
                }
                let y = labels[r] as usize;
                for j in 0..softmax.cols() {
                    let onehot = if j == y { 1.0 } else { 0.0 };
                    *da.at_mut(r, j) = gs * (softmax.at(r, j) - onehot);
                }
            }
            acc(nodes, grads, *logits, da);
        }
        Op::ConcatCols { a, b } => {
            let ca = nodes[*a].value.cols();
            let cb = nodes[*b].value.cols();
            let mut da = Mat::zeros(g.rows(), ca);
            let mut db = Mat::zeros(g.rows(), cb);
            for r in 0..g.rows() {
                da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
            }
            acc(nodes, grads, *a, da);
            acc(nodes, grads, *b, db);
        }
        Op::MeanRows { a, idx } => {
            let av = &nodes[*a].value;
            let mut da = Mat::zeros(av.rows(), av.cols());
            let w = 1.0 / idx.len() as f64;
            for &r in idx {
                for (o, &gx) in da.row_mut(r).iter_mut().zip(g.row(0)) {
                    *o += w * gx;
                }
            }
            acc(nodes, grads, *a, da);
        }
        Op::Sum { a } => {
            let av = &nodes[*a].value;
            acc(nodes, grads, *a, Mat::filled(av.rows(), av.cols(), g.at(0, 0)));
        }
        Op::FrobSq { a } => {
            let av = &nodes[*a].value;
            acc(nodes, grads, *a, av.scaled(2.0 * g.at(0, 0)));
        }
        Op::CosColsDist { a, b } => {
            let gs = g.at(0, 0);
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let mut da = Mat::zeros(av.rows(), av.cols());
            let mut db = Mat::zeros(bv.rows(), bv.cols());
            for j in 0..av.cols() {
                let (mut dot, mut na2, mut nb2) = (0.0, 0.0, 0.0);
                for r in 0..av.rows() {
                    let (x, y) = (av.at(r, j), bv.at(r, j));
                    dot += x * y;
                    na2 += x * x;
                    nb2 += y * y;
                }
                let (na, nb) = (na2.sqrt(), nb2.sqrt());
                if na * nb < ZERO_NORM_GUARD {
                    continue; // fixed unit penalty, zero gradient
                }
                let inv = 1.0 / (na * nb);
                let cos = dot * inv;
                for r in 0..av.rows() {
                    let (x, y) = (av.at(r, j), bv.at(r, j));
                    *da.at_mut(r, j) = gs * (cos * x / na2 - y * inv);
                    *db.at_mut(r, j) = gs * (cos * y / nb2 - x * inv);
                }
            }
            acc(nodes, grads, *a, da);
            acc(nodes, grads, *b, db);
        }
        Op::EwiseMul { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            if nodes[*a].needs_grad {
                acc(nodes, grads, *a, g.zip_map(bv, |gx, y| gx * y).expect("same shape"));
            }
            if nodes[*b].needs_grad {
                acc(nodes, grads, *b, g.zip_map(av, |gx, x| gx * x).expect("same shape"));
            }
        }
        Op::Reshape { a } => {
            let av = &nodes[*a].value;
            acc(nodes, grads, *a, g.clone().reshaped(av.rows(), av.cols()));
        }
        Op::EwiseSqrt { a } => {
            let y = &nodes[i].value;
            let da = g
                .zip_map(y, |gx, s| if s > 0.0 { 0.5 * gx / s } else { 0.0 })
                .expect("same shape");
            acc(nodes, grads, *a, da);
        }
        Op::EwiseRecip { a } => {
            let y = &nodes[i].value;
            let da = g.zip_map(y, |gx, r| -gx * r * r).expect("same shape");
            acc(nodes, grads, *a, da);
        }
        Op::ScaleByScalar { a, s } => {
            let sv = nodes[*s].value.at(0, 0);
            if nodes[*a].needs_grad {
                acc(nodes, grads, *a, g.scaled(sv));
            }
            if nodes[*s].needs_grad {
                let av = &nodes[*a].value;
                let ds: f64 = g.data().iter().zip(av.data()).map(|(&gx, &x)| gx * x).sum();
                acc(nodes, grads, *s, Mat::scalar(ds));
            }
        }
    }
}
