//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar (1x1) node walks the tape in reverse and
//! returns the gradient of that scalar with respect to every node. Parameter
//! gradients are then gathered per [`ParamId`] with [`Grads::params`].
//!
//! The op set is deliberately small: it covers the dense layers, pre-norm
//! self-attention over fixed-length slot sequences, the additive hazard head
//! and the three training objectives used in this crate.

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Mask(Var, Mat),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    StackSlots(Vec<Var>),
    MeanSlots(Var, usize),
    PickSlot(Var, usize, usize),
    AddSlotwise(Var, Var),
    FillRows {
        x: Var,
        fill: Var,
        keep: Vec<bool>,
    },
    Hazard {
        pre: Var,
        active: Mat,
    },
    Bce {
        p: Var,
        coef_pos: Mat,
        coef_neg: Mat,
    },
    BernoulliKl {
        q: Var,
        target: Mat,
        coef: Mat,
    },
    SqErr {
        pred: Var,
        target: Mat,
        row_coef: Vec<f64>,
    },
    Combine(Vec<(Var, f64)>),
    Temper(Var, f64),
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
    params: Vec<(ParamId, usize)>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradients gathered per parameter; `None` for parameters that did not
    /// take part in the computation.
    pub fn params(&self, n_params: usize) -> Vec<Option<Mat>> {
        let mut out: Vec<Option<Mat>> = vec![None; n_params];
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                match &mut out[pid.index()] {
                    Some(acc) => *acc += g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

#[derive(Default)]
pub struct Graph {
    values: Vec<Mat>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][[0, 0]]
    }

    /// A constant: gradients are never propagated into it.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value(id).clone();
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].dot(&self.values[b.0]);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `x + row`, broadcasting a 1xN row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let out = &self.values[x.0] + &self.values[row.0];
        let ng = self.ng(x) || self.ng(row);
        self.push(out, Op::AddRow(x, row), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = &self.values[a.0] + &self.values[b.0];
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = &self.values[a.0] - &self.values[b.0];
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = &self.values[a.0] * c;
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    /// Elementwise product with a fixed mask (used for inverted dropout).
    pub fn mask(&mut self, a: Var, mask: Mat) -> Var {
        assert_eq!(self.values[a.0].dim(), mask.dim(), "mask shape");
        let out = &self.values[a.0] * &mask;
        let ng = self.ng(a);
        self.push(out, Op::Mask(a, mask), ng)
    }

    /// Row-wise layer normalisation with affine `gamma`/`beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = &self.values[x.0];
        let (rows, cols) = xv.dim();
        let mut xhat = Mat::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (c, v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * is;
            }
        }
        let out = &(&xhat * &self.values[gamma.0]) + &self.values[beta.0];
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Multi-head scaled dot-product self-attention. Rows are grouped into
    /// consecutive blocks of `seq` rows; attention never crosses blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq: usize, heads: usize) -> Var {
        let (rows, width) = self.values[q.0].dim();
        assert!(rows % seq == 0 && width % heads == 0, "attention shape");
        let blocks = rows / seq;
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (&self.values[q.0], &self.values[k.0], &self.values[v.0]);
        let mut out = Mat::zeros((rows, width));
        let mut probs = vec![0.0; blocks * heads * seq * seq];
        let mut scores = vec![0.0; seq];
        for b in 0..blocks {
            let base = b * seq;
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..seq {
                    let mut max = f64::NEG_INFINITY;
                    for (j, sc) in scores.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for c in c0..c0 + dh {
                            acc += qv[[base + i, c]] * kv[[base + j, c]];
                        }
                        *sc = acc * scale;
                        max = max.max(*sc);
                    }
                    let mut z = 0.0;
                    for sc in scores.iter_mut() {
                        *sc = (*sc - max).exp();
                        z += *sc;
                    }
                    let off = ((b * heads + h) * seq + i) * seq;
                    for j in 0..seq {
                        let p = scores[j] / z;
                        probs[off + j] = p;
                        for c in c0..c0 + dh {
                            out[[base + i, c]] += p * vv[[base + j, c]];
                        }
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                seq,
                heads,
                probs,
            },
            ng,
        )
    }

    /// Interleave S inputs of shape BxD into a (B*S)xD matrix whose row
    /// `b*S + s` is row `b` of slot `s`.
    pub fn stack_slots(&mut self, slots: &[Var]) -> Var {
        let s = slots.len();
        assert!(s > 0);
        let (b, d) = self.values[slots[0].0].dim();
        let mut out = Mat::zeros((b * s, d));
        for (si, v) in slots.iter().enumerate() {
            let val = &self.values[v.0];
            assert_eq!(val.dim(), (b, d), "stack_slots shape");
            for r in 0..b {
                out.row_mut(r * s + si).assign(&val.row(r));
            }
        }
        let ng = slots.iter().any(|v| self.ng(*v));
        self.push(out, Op::StackSlots(slots.to_vec()), ng)
    }

    /// Mean over each block of `seq` consecutive rows.
    pub fn mean_slots(&mut self, x: Var, seq: usize) -> Var {
        let xv = &self.values[x.0];
        let (rows, d) = xv.dim();
        let blocks = rows / seq;
        let mut out = Mat::zeros((blocks, d));
        for b in 0..blocks {
            let block = xv.slice(s![b * seq..(b + 1) * seq, ..]);
            out.row_mut(b).assign(&block.mean_axis(Axis(0)).unwrap());
        }
        let ng = self.ng(x);
        self.push(out, Op::MeanSlots(x, seq), ng)
    }

    /// Row `slot` of each block of `seq` consecutive rows.
    pub fn pick_slot(&mut self, x: Var, seq: usize, slot: usize) -> Var {
        assert!(slot < seq);
        let xv = &self.values[x.0];
        let blocks = xv.nrows() / seq;
        let idx: Vec<usize> = (0..blocks).map(|b| b * seq + slot).collect();
        let out = xv.select(Axis(0), &idx);
        let ng = self.ng(x);
        self.push(out, Op::PickSlot(x, seq, slot), ng)
    }

    /// Adds an SxD table to every block of S consecutive rows.
    pub fn add_slotwise(&mut self, x: Var, table: Var) -> Var {
        let seq = self.values[table.0].nrows();
        let mut out = self.values[x.0].clone();
        let rows = out.nrows();
        assert!(rows % seq == 0);
        for r in 0..rows {
            let t = self.values[table.0].row(r % seq).to_owned();
            let mut row = out.row_mut(r);
            row += &t;
        }
        let ng = self.ng(x) || self.ng(table);
        self.push(out, Op::AddSlotwise(x, table), ng)
    }

    /// Replaces every row `r` with `keep[r] == false` by the 1xD `fill` row.
    pub fn fill_rows(&mut self, x: Var, fill: Var, keep: Vec<bool>) -> Var {
        let mut out = self.values[x.0].clone();
        assert_eq!(keep.len(), out.nrows());
        let f = self.values[fill.0].row(0).to_owned();
        for (r, k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(r).assign(&f);
            }
        }
        let ng = self.ng(x) || self.ng(fill);
        self.push(out, Op::FillRows { x, fill, keep }, ng)
    }

    /// Additive hazard head. `pre` is Bx(K+1): column 0 feeds the baseline
    /// sigmoid, columns 1..=K feed softplus increments. The output is the
    /// clamped cumulative risk, BxK.
    pub fn hazard(&mut self, pre: Var, eps: f64) -> Var {
        let pv = &self.values[pre.0];
        let (b, k1) = pv.dim();
        let k = k1 - 1;
        let mut out = Mat::zeros((b, k));
        let mut active = Mat::zeros((b, k));
        for r in 0..b {
            let mut acc = sigmoid(pv[[r, 0]]);
            for j in 0..k {
                acc += softplus(pv[[r, j + 1]]);
                let (p, a) = clamp_unit(acc, eps);
                out[[r, j]] = p;
                active[[r, j]] = if a { 1.0 } else { 0.0 };
            }
        }
        let ng = self.ng(pre);
        self.push(out, Op::Hazard { pre, active }, ng)
    }

    /// `sum(coef_pos * -ln p + coef_neg * -ln(1 - p))`, a weighted binary
    /// cross-entropy whose coefficients carry masks and normalisation.
    pub fn bce(&mut self, p: Var, coef_pos: Mat, coef_neg: Mat) -> Var {
        let pv = &self.values[p.0];
        let mut total = 0.0;
        Zip::from(pv).and(&coef_pos).and(&coef_neg).for_each(|&p, &a, &b| {
            if a != 0.0 {
                total -= a * p.ln();
            }
            if b != 0.0 {
                total -= b * (1.0 - p).ln();
            }
        });
        let ng = self.ng(p);
        self.push(
            Mat::from_elem((1, 1), total),
            Op::Bce {
                p,
                coef_pos,
                coef_neg,
            },
            ng,
        )
    }

    /// `sum(coef * KL(Bernoulli(target) || Bernoulli(q)))`.
    pub fn bernoulli_kl(&mut self, q: Var, target: Mat, coef: Mat) -> Var {
        let qv = &self.values[q.0];
        let mut total = 0.0;
        Zip::from(qv).and(&target).and(&coef).for_each(|&q, &t, &c| {
            if c != 0.0 {
                total += c * bernoulli_kl(t, q);
            }
        });
        let ng = self.ng(q);
        self.push(
            Mat::from_elem((1, 1), total),
            Op::BernoulliKl { q, target, coef },
            ng,
        )
    }

    /// `sum_r row_coef[r] * ||pred_r - target_r||^2`.
    pub fn sq_err(&mut self, pred: Var, target: Mat, row_coef: Vec<f64>) -> Var {
        let pv = &self.values[pred.0];
        assert_eq!(pv.dim(), target.dim());
        let mut total = 0.0;
        for (r, &c) in row_coef.iter().enumerate() {
            if c != 0.0 {
                let d: f64 = pv
                    .row(r)
                    .iter()
                    .zip(target.row(r).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                total += c * d;
            }
        }
        let ng = self.ng(pred);
        self.push(
            Mat::from_elem((1, 1), total),
            Op::SqErr {
                pred,
                target,
                row_coef,
            },
            ng,
        )
    }

    /// Linear combination of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut total = 0.0;
        for &(v, c) in terms {
            total += c * self.scalar(v);
        }
        let ng = terms.iter().any(|(v, _)| self.ng(*v));
        self.push(
            Mat::from_elem((1, 1), total),
            Op::Combine(terms.to_vec()),
            ng,
        )
    }

    /// `sigmoid(logit(p) / t)` elementwise: probabilities at temperature `t`.
    pub fn temper(&mut self, p: Var, t: f64) -> Var {
        let out = self.values[p.0].mapv(|p| sigmoid((p / (1.0 - p)).ln() / t));
        let ng = self.ng(p);
        self.push(out, Op::Temper(p, t), ng)
    }

    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.values[loss.0].dim(), (1, 1), "backward needs a scalar");
        let n = self.values.len();
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            if let Op::Param(pid) = self.ops[idx] {
                params.push((pid, idx));
                continue;
            }
            if !self.needs_grad[idx] {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads, params }
    }

    fn backprop_node(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let val = |v: Var| &self.values[v.0];
        match &self.ops[idx] {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.dot(&val(*b).t()));
                }
                if self.ng(*b) {
                    accumulate(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::AddRow(x, row) => {
                if self.ng(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.ng(*row) {
                    accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, -g);
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, g * *c),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let y = &self.values[idx];
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                accumulate(grads, *a, d);
            }
            Op::Mask(a, m) => accumulate(grads, *a, g * m),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.ng(*gamma) {
                    accumulate(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*beta) {
                    accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    let dxhat = g * val(*gamma);
                    let cols = xhat.ncols() as f64;
                    let mut dx = Mat::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = dr.sum();
                        let sum_dx = dr.dot(&xr);
                        let is = inv_std[r];
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = is / cols * (cols * dr[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                seq,
                heads,
                probs,
            } => {
                let (seq, heads) = (*seq, *heads);
                let (rows, width) = g.dim();
                let blocks = rows / seq;
                let dh = width / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let mut dq = Mat::zeros((rows, width));
                let mut dk = Mat::zeros((rows, width));
                let mut dv = Mat::zeros((rows, width));
                let mut dp = vec![0.0; seq];
                for b in 0..blocks {
                    let base = b * seq;
                    for h in 0..heads {
                        let c0 = h * dh;
                        for i in 0..seq {
                            let off = ((b * heads + h) * seq + i) * seq;
                            let p = &probs[off..off + seq];
                            let mut dot = 0.0;
                            for j in 0..seq {
                                let mut acc = 0.0;
                                for c in c0..c0 + dh {
                                    acc += g[[base + i, c]] * vv[[base + j, c]];
                                    dv[[base + j, c]] += p[j] * g[[base + i, c]];
                                }
                                dp[j] = acc;
                                dot += p[j] * acc;
                            }
                            for j in 0..seq {
                                let ds = p[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in c0..c0 + dh {
                                    dq[[base + i, c]] += ds * kv[[base + j, c]];
                                    dk[[base + j, c]] += ds * qv[[base + i, c]];
                                }
                            }
                        }
                    }
                }
                if self.ng(*q) {
                    accumulate(grads, *q, dq);
                }
                if self.ng(*k) {
                    accumulate(grads, *k, dk);
                }
                if self.ng(*v) {
                    accumulate(grads, *v, dv);
                }
            }
            Op::StackSlots(slots) => {
                let s = slots.len();
                let b = g.nrows() / s;
                for (si, sv) in slots.iter().enumerate() {
                    if !self.ng(*sv) {
                        continue;
                    }
                    let mut d = Mat::zeros((b, g.ncols()));
                    for r in 0..b {
                        d.row_mut(r).assign(&g.row(r * s + si));
                    }
                    accumulate(grads, *sv, d);
                }
            }
            Op::PickSlot(x, seq, slot) => {
                let mut d = Mat::zeros(val(*x).dim());
                for b in 0..g.nrows() {
                    d.row_mut(b * seq + slot).assign(&g.row(b));
                }
                accumulate(grads, *x, d);
            }
            Op::MeanSlots(x, seq) => {
                let seq = *seq;
                let mut d = Mat::zeros((g.nrows() * seq, g.ncols()));
                let inv = 1.0 / seq as f64;
                for r in 0..d.nrows() {
                    d.row_mut(r).assign(&(&g.row(r / seq) * inv));
                }
                accumulate(grads, *x, d);
            }
            Op::AddSlotwise(x, table) => {
                if self.ng(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.ng(*table) {
                    let seq = val(*table).nrows();
                    let mut d = Mat::zeros(val(*table).dim());
                    for r in 0..g.nrows() {
                        let mut row = d.row_mut(r % seq);
                        row += &g.row(r);
                    }
                    accumulate(grads, *table, d);
                }
            }
            Op::FillRows { x, fill, keep } => {
                if self.ng(*x) {
                    let mut d = g.clone();
                    for (r, k) in keep.iter().enumerate() {
                        if !k {
                            d.row_mut(r).fill(0.0);
                        }
                    }
                    accumulate(grads, *x, d);
                }
                if self.ng(*fill) {
                    let mut d = Mat::zeros((1, g.ncols()));
                    for (r, k) in keep.iter().enumerate() {
                        if !k {
                            let mut row = d.row_mut(0);
                            row += &g.row(r);
                        }
                    }
                    accumulate(grads, *fill, d);
                }
            }
            Op::Hazard { pre, active } => {
                let pv = val(*pre);
                let (b, k) = active.dim();
                let mut d = Mat::zeros((b, k + 1));
                for r in 0..b {
                    // suffix sums of the active upstream gradient
                    let mut tail = 0.0;
                    for j in (0..k).rev() {
                        tail += g[[r, j]] * active[[r, j]];
                        d[[r, j + 1]] = tail * sigmoid(pv[[r, j + 1]]);
                    }
                    let s = sigmoid(pv[[r, 0]]);
                    d[[r, 0]] = tail * s * (1.0 - s);
                }
                accumulate(grads, *pre, d);
            }
            Op::Bce {
                p,
                coef_pos,
                coef_neg,
            } => {
                let up = g[[0, 0]];
                let mut d = Mat::zeros(coef_pos.dim());
                Zip::from(&mut d)
                    .and(val(*p))
                    .and(coef_pos)
                    .and(coef_neg)
                    .for_each(|d, &p, &a, &b| {
                        let mut v = 0.0;
                        if a != 0.0 {
                            v -= a / p;
                        }
                        if b != 0.0 {
                            v += b / (1.0 - p);
                        }
                        *d = up * v;
                    });
                accumulate(grads, *p, d);
            }
            Op::BernoulliKl { q, target, coef } => {
                let up = g[[0, 0]];
                let mut d = Mat::zeros(coef.dim());
                Zip::from(&mut d)
                    .and(val(*q))
                    .and(target)
                    .and(coef)
                    .for_each(|d, &q, &t, &c| {
                        if c != 0.0 {
                            *d = up * c * (-t / q + (1.0 - t) / (1.0 - q));
                        }
                    });
                accumulate(grads, *q, d);
            }
            Op::SqErr {
                pred,
                target,
                row_coef,
            } => {
                let up = g[[0, 0]];
                let mut d = val(*pred) - target;
                for (r, &c) in row_coef.iter().enumerate() {
                    let f = 2.0 * c * up;
                    d.row_mut(r).mapv_inplace(|x| x * f);
                }
                accumulate(grads, *pred, d);
            }
            Op::Temper(p, t) => {
                let y = &self.values[idx];
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(val(*p))
                    .and(y)
                    .for_each(|d, &p, &q| *d *= q * (1.0 - q) / (t * p * (1.0 - p)));
                accumulate(grads, *p, d);
            }
            Op::Combine(terms) => {
                let up = g[[0, 0]];
                for &(v, c) in terms {
                    if self.ng(v) {
                        accumulate(grads, v, Mat::from_elem((1, 1), up * c));
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, d: Mat) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &d,
        slot @ None => *slot = Some(d),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Clamps into `[eps, 1 - eps]`; the flag is false when the clamp was hit.
pub fn clamp_unit(x: f64, eps: f64) -> (f64, bool) {
    if x < eps {
        (eps, false)
    } else if x > 1.0 - eps {
        (1.0 - eps, false)
    } else {
        (x, true)
    }
}

/// `KL(Bernoulli(p) || Bernoulli(q))` with the `0 ln 0 = 0` convention.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let mut kl = 0.0;
    if p > 0.0 {
        kl += p * (p / q).ln();
    }
    if p < 1.0 {
        kl += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    kl
}
