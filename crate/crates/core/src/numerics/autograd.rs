//! Reverse-mode differentiation over a dynamic tape.
//!
//! A [`Graph`] owns every intermediate value. Nodes are appended in
//! evaluation order, so the reverse sweep is a single backwards walk.
//! Inside the graph all values are matrices `[rows, cols]`; a leaf keeps the
//! shape it was given and is viewed through [`Tensor::as_matrix`].

use super::tensor::{gemm, gemm_strided, row_moments, softmax_in_place};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMask {
    Full,
    /// Query and key tokens must share `index / tokens_per_group`.
    Grouped {
        tokens_per_group: usize,
    },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Silu(Var),
    Ln(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    ConcatCols(Var, Var),
    RepeatRows(Var, usize),
    TileRows(Var, usize),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mat(t: Tensor, rows: usize, cols: usize) -> Tensor {
    t.into_reshape(&[rows, cols]).expect("row/col product matches")
}

fn mat_from(data: Vec<f64>, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("row/col product matches")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.as_matrix()
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::Dimension {
                op,
                lhs: vec![da.0, da.1],
                rhs: vec![db.0, db.1],
            });
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(mat_from(out, m, n), Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        let (r, c) = self.same_dims(op, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(mat_from(data, r, c), rec, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.dims(a);
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        let rg = self.rg(a);
        self.push(mat_from(data, r, c), Op::Scale(a, s), rg)
    }

    fn row_check(&self, op: &'static str, x: Var, row: Var) -> Result<(usize, usize)> {
        let (r, c) = self.dims(x);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != c {
            return Err(Error::Dimension {
                op,
                lhs: vec![r, c],
                rhs: vec![rr, rc],
            });
        }
        Ok((r, c))
    }

    /// `x[i, :] + row` for every row `i`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.row_check("add_row", x, row)?;
        let rv = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (d, &b) in chunk.iter_mut().zip(rv) {
                *d += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(mat_from(data, r, c), Op::AddRow(x, row), rg))
    }

    /// `x[i, :] * row` for every row `i`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.row_check("mul_row", x, row)?;
        let rv = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (d, &b) in chunk.iter_mut().zip(rv) {
                *d *= b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(mat_from(data, r, c), Op::MulRow(x, row), rg))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let data = self.value(x).data().iter().map(|&v| v / (1.0 + (-v).exp())).collect();
        let rg = self.rg(x);
        self.push(mat_from(data, r, c), Op::Silu(x), rg)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("log of non-positive value".into()));
        }
        let (r, c) = self.dims(x);
        let data = self.value(x).data().iter().map(|v| v.ln()).collect();
        let rg = self.rg(x);
        Ok(self.push(mat_from(data, r, c), Op::Ln(x), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        self.push(mat_from(data, r, c), Op::SoftmaxRows(x), rg)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layernorm(&mut self, x: Var, eps: f64) -> Var {
        let (r, c) = self.dims(x);
        let mut data = self.value(x).data().to_vec();
        let mut rstds = Vec::with_capacity(r);
        for row in data.chunks_mut(c) {
            let (mean, rstd) = row_moments(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let rg = self.rg(x);
        self.push(mat_from(data, r, c), Op::LayerNorm { x, rstd: rstds }, rg)
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q: [n, d]`, `k, v: [m, d]`; head `h` uses columns `[h·d/H, (h+1)·d/H)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: AttentionMask) -> Result<Var> {
        let (n, d) = self.dims(q);
        let (m, dk) = self.dims(k);
        let (mv, dv) = self.dims(v);
        if dk != d || dv != d || mv != m {
            return Err(Error::Dimension {
                op: "attention",
                lhs: vec![n, d],
                rhs: vec![m, dk],
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("{d} channels not divisible into {heads} heads")));
        }
        if let AttentionMask::Grouped { tokens_per_group } = mask {
            if n != m || tokens_per_group == 0 || n % tokens_per_group != 0 {
                return Err(Error::Config(format!(
                    "grouped mask needs square attention with groups of {tokens_per_group}"
                )));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; heads * n * m];
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            let p = &mut probs[h * n * m..(h + 1) * n * m];
            let off = h * dh;
            gemm(n, dh, m, &qd[off..], (d, 1), &kd[off..], (1, d), p, false);
            for (i, row) in p.chunks_mut(m).enumerate() {
                for (j, s) in row.iter_mut().enumerate() {
                    *s *= scale;
                    if let AttentionMask::Grouped { tokens_per_group } = mask {
                        if i / tokens_per_group != j / tokens_per_group {
                            *s = f64::NEG_INFINITY;
                        }
                    }
                }
                softmax_in_place(row);
            }
            gemm_strided(n, m, dh, p, (m, 1), &vd[off..], (d, 1), &mut out[off..], d, false);
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(mat_from(out, n, d), Op::Attention { q, k, v, heads, probs }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: vec![ra, ca],
                rhs: vec![rb, cb],
            });
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(mat_from(data, ra, ca + cb), Op::ConcatCols(a, b), rg))
    }

    /// Each row repeated `times` times consecutively: `[r, c] -> [r·times, c]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let (r, c) = self.dims(x);
        let mut data = Vec::with_capacity(r * c * times);
        for i in 0..r {
            let row = self.value(x).row(i);
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        let rg = self.rg(x);
        self.push(mat_from(data, r * times, c), Op::RepeatRows(x, times), rg)
    }

    /// The whole matrix stacked `times` times: `[r, c] -> [times·r, c]`.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * c * times);
        for _ in 0..times {
            data.extend_from_slice(src);
        }
        let rg = self.rg(x);
        self.push(mat_from(data, r * times, c), Op::TileRows(x, times), rg)
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start >= end || end > r {
            return Err(Error::Index { index: end, len: r });
        }
        let data = self.value(x).data()[start * c..end * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(mat_from(data, end - start, c), Op::SliceRows(x, start), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(mat_from(vec![s], 1, 1), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let s = self.value(x).mean();
        let rg = self.rg(x);
        self.push(mat_from(vec![s], 1, 1), Op::Mean(x), rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if !matches!(node.op, Op::Leaf) {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if let Some(t) = g.take() {
                *g = Some(t.into_reshape(node.value.shape()).expect("grad matches value"));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let (r, c) = node.value.as_matrix();
        let gd = g.data();
        let mut acc = |v: Var, t: Tensor| {
            if !self.rg(v) {
                return;
            }
            let (vr, vc) = self.dims(v);
            let t = mat(t, vr, vc);
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &t).expect("grad shapes agree"),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = c;
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, (n, 1), self.value(*b).data(), (1, n), &mut da, false);
                    acc(*a, mat_from(da, m, k));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), (1, k), gd, (n, 1), &mut db, false);
                    acc(*b, mat_from(db, k, n));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    acc(
                        *a,
                        mat_from(gd.iter().zip(bv.data()).map(|(x, y)| x * y).collect(), r, c),
                    );
                }
                if self.rg(*b) {
                    acc(
                        *b,
                        mat_from(gd.iter().zip(av.data()).map(|(x, y)| x * y).collect(), r, c),
                    );
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                if self.rg(*row) {
                    let mut dr = vec![0.0; c];
                    for chunk in gd.chunks(c) {
                        for (d, &v) in dr.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    acc(*row, mat_from(dr, 1, c));
                }
            }
            Op::MulRow(x, row) => {
                let rv = self.value(*row).data();
                if self.rg(*x) {
                    let mut dx = gd.to_vec();
                    for chunk in dx.chunks_mut(c) {
                        for (d, &b) in chunk.iter_mut().zip(rv) {
                            *d *= b;
                        }
                    }
                    acc(*x, mat_from(dx, r, c));
                }
                if self.rg(*row) {
                    let mut dr = vec![0.0; c];
                    for (gc, xc) in gd.chunks(c).zip(self.value(*x).data().chunks(c)) {
                        for j in 0..c {
                            dr[j] += gc[j] * xc[j];
                        }
                    }
                    acc(*row, mat_from(dr, 1, c));
                }
            }
            Op::Silu(x) => {
                let dx = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&gv, &xv)| {
                        let s = 1.0 / (1.0 + (-xv).exp());
                        gv * s * (1.0 + xv * (1.0 - s))
                    })
                    .collect();
                acc(*x, mat_from(dx, r, c));
            }
            Op::Ln(x) => {
                let dx = gd.iter().zip(self.value(*x).data()).map(|(gv, xv)| gv / xv).collect();
                acc(*x, mat_from(dx, r, c));
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &gd[i * c..(i + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, mat_from(dx, r, c));
            }
            Op::LayerNorm { x, rstd } => {
                let y = node.value.data();
                let mut dx = vec![0.0; r * c];
                let inv_c = 1.0 / c as f64;
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &gd[i * c..(i + 1) * c]);
                    let mean_g = gr.iter().sum::<f64>() * inv_c;
                    let mean_gy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() * inv_c;
                    for j in 0..c {
                        dx[i * c + j] = rstd[i] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                acc(*x, mat_from(dx, r, c));
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (n, d) = (r, c);
                let m = self.dims(*k).0;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; n * d];
                let mut dk = vec![0.0; m * d];
                let mut dvv = vec![0.0; m * d];
                let mut dp = vec![0.0; n * m];
                for h in 0..*heads {
                    let p = &probs[h * n * m..(h + 1) * n * m];
                    let off = h * dh;
                    // dV = Pᵀ dO
                    gemm_strided(m, n, dh, p, (1, m), &gd[off..], (d, 1), &mut dvv[off..], d, false);
                    // dP = dO Vᵀ
                    gemm(n, dh, m, &gd[off..], (d, 1), &vd[off..], (1, d), &mut dp, false);
                    for (prow, drow) in p.chunks(m).zip(dp.chunks_mut(m)) {
                        let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                        for (dv, &pv) in drow.iter_mut().zip(prow) {
                            *dv = pv * (*dv - dot) * scale;
                        }
                    }
                    // dQ = dS K, dK = dSᵀ Q
                    gemm_strided(n, m, dh, &dp, (m, 1), &kd[off..], (d, 1), &mut dq[off..], d, false);
                    gemm_strided(m, n, dh, &dp, (1, m), &qd[off..], (d, 1), &mut dk[off..], d, false);
                }
                acc(*q, mat_from(dq, n, d));
                acc(*k, mat_from(dk, m, d));
                acc(*v, mat_from(dvv, m, d));
            }
            Op::ConcatCols(a, b) => {
                let ca = self.dims(*a).1;
                let cb = c - ca;
                let mut da = Vec::with_capacity(r * ca);
                let mut db = Vec::with_capacity(r * cb);
                for row in gd.chunks(c) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                acc(*a, mat_from(da, r, ca));
                acc(*b, mat_from(db, r, cb));
            }
            Op::RepeatRows(x, times) => {
                let xr = r / times;
                let mut dx = vec![0.0; xr * c];
                for (i, row) in gd.chunks(c).enumerate() {
                    let dst = &mut dx[(i / times) * c..(i / times + 1) * c];
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*x, mat_from(dx, xr, c));
            }
            Op::TileRows(x, times) => {
                let xr = r / times;
                let mut dx = vec![0.0; xr * c];
                for tile in gd.chunks(xr * c) {
                    for (d, &v) in dx.iter_mut().zip(tile) {
                        *d += v;
                    }
                }
                acc(*x, mat_from(dx, xr, c));
            }
            Op::SliceRows(x, start) => {
                let (xr, xc) = self.dims(*x);
                let mut dx = vec![0.0; xr * xc];
                dx[start * xc..(start + r) * xc].copy_from_slice(gd);
                acc(*x, mat_from(dx, xr, xc));
            }
            Op::Sum(x) => {
                let (xr, xc) = self.dims(*x);
                acc(*x, Tensor::full(&[xr, xc], gd[0]));
            }
            Op::Mean(x) => {
                let (xr, xc) = self.dims(*x);
                acc(*x, Tensor::full(&[xr, xc], gd[0] / (xr * xc) as f64));
            }
        }
    }
}
