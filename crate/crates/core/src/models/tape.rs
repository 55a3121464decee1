//! Reverse-mode differentiation over a flat parameter vector.
//!
//! Every forward pass records its nodes on a fresh [`Tape`]; `backward`
//! walks the nodes in reverse and accumulates parameter gradients into a
//! caller-provided flat buffer laid out like the parameters themselves.

pub(crate) type NodeId = usize;

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Location of a parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn row<'a>(&self, params: &'a [f64], r: usize) -> &'a [f64] {
        let start = self.offset + r * self.cols;
        &params[start..start + self.cols]
    }
}

/// GRU weights: input projection `w` (3H x in), recurrent projection `u`
/// (3H x H), input bias `b` and recurrent bias `bu` (3H each). Gate order
/// is reset, update, candidate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GruBlocks {
    pub w: Block,
    pub u: Block,
    pub b: Block,
    pub bu: Block,
}

enum Op {
    Input,
    Embed {
        table: Block,
        row: usize,
    },
    MatVec {
        w: Block,
        x: NodeId,
    },
    AddBias {
        a: NodeId,
        b: Block,
    },
    Concat(Vec<NodeId>),
    Dropout {
        a: NodeId,
        mask: Vec<f64>,
    },
    Gru {
        x: NodeId,
        h: NodeId,
        g: GruBlocks,
    },
    Attention {
        query: NodeId,
        keys: NodeId,
        values: NodeId,
        n: usize,
    },
    LogProbSet {
        logits: NodeId,
        set: Vec<usize>,
    },
    Sum(Vec<NodeId>),
}

struct Node {
    value: Vec<f64>,
    aux: Vec<f64>,
    op: Op,
}

fn slot<'a>(grads: &'a mut [Vec<f64>], nodes: &[Node], target: NodeId) -> &'a mut Vec<f64> {
    let g = &mut grads[target];
    if g.is_empty() {
        *g = vec![0.0; nodes[target].value.len()];
    }
    g
}

pub(crate) struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(512),
        }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0]
    }

    fn push(&mut self, value: Vec<f64>, aux: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, aux, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Vec::new(), Op::Input)
    }

    pub fn embed(&mut self, table: Block, row: usize) -> NodeId {
        let v = table.row(self.params, row).to_vec();
        self.push(v, Vec::new(), Op::Embed { table, row })
    }

    pub fn matvec(&mut self, w: Block, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        debug_assert_eq!(xv.len(), w.cols);
        let y = (0..w.rows)
            .map(|r| dot(w.row(self.params, r), xv))
            .collect();
        self.push(y, Vec::new(), Op::MatVec { w, x })
    }

    pub fn add_bias(&mut self, a: NodeId, b: Block) -> NodeId {
        let bias = &self.params[b.offset..b.offset + b.len()];
        let v = self.nodes[a]
            .value
            .iter()
            .zip(bias)
            .map(|(x, y)| x + y)
            .collect();
        self.push(v, Vec::new(), Op::AddBias { a, b })
    }

    pub fn concat(&mut self, parts: Vec<NodeId>) -> NodeId {
        let mut v = Vec::new();
        for &p in &parts {
            v.extend_from_slice(&self.nodes[p].value);
        }
        self.push(v, Vec::new(), Op::Concat(parts))
    }

    /// Inverted dropout with a precomputed keep mask (entries are 0 or
    /// 1/(1-rate)).
    pub fn dropout(&mut self, a: NodeId, mask: Vec<f64>) -> NodeId {
        let v = self.nodes[a]
            .value
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        self.push(v, Vec::new(), Op::Dropout { a, mask })
    }

    pub fn gru(&mut self, x: NodeId, h: NodeId, g: GruBlocks) -> NodeId {
        let hd = g.u.cols;
        let p = self.params;
        let xv = &self.nodes[x].value;
        let hv = &self.nodes[h].value;
        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        let mut n = vec![0.0; hd];
        let mut ghn = vec![0.0; hd];
        let mut out = vec![0.0; hd];
        for i in 0..hd {
            let gx_r = dot(g.w.row(p, i), xv) + p[g.b.offset + i];
            let gh_r = dot(g.u.row(p, i), hv) + p[g.bu.offset + i];
            r[i] = sigmoid(gx_r + gh_r);
            let gx_z = dot(g.w.row(p, hd + i), xv) + p[g.b.offset + hd + i];
            let gh_z = dot(g.u.row(p, hd + i), hv) + p[g.bu.offset + hd + i];
            z[i] = sigmoid(gx_z + gh_z);
        }
        for i in 0..hd {
            let gx_n = dot(g.w.row(p, 2 * hd + i), xv) + p[g.b.offset + 2 * hd + i];
            ghn[i] = dot(g.u.row(p, 2 * hd + i), hv) + p[g.bu.offset + 2 * hd + i];
            n[i] = (gx_n + r[i] * ghn[i]).tanh();
            out[i] = (1.0 - z[i]) * n[i] + z[i] * hv[i];
        }
        let mut aux = r;
        aux.extend_from_slice(&z);
        aux.extend_from_slice(&n);
        aux.extend_from_slice(&ghn);
        self.push(out, aux, Op::Gru { x, h, g })
    }

    /// Dot-product attention of `query` (d) over `n` rows of `keys` (n x d),
    /// returning the weighted sum of the rows of `values` (n x dv).
    pub fn attention(&mut self, query: NodeId, keys: NodeId, values: NodeId, n: usize) -> NodeId {
        let q = &self.nodes[query].value;
        let k = &self.nodes[keys].value;
        let v = &self.nodes[values].value;
        let d = q.len();
        let dv = v.len() / n;
        let scores: Vec<f64> = (0..n).map(|j| dot(q, &k[j * d..(j + 1) * d])).collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let mut ctx = vec![0.0; dv];
        for (j, a) in weights.iter().enumerate() {
            axpy(*a, &v[j * dv..(j + 1) * dv], &mut ctx);
        }
        self.push(
            ctx,
            weights,
            Op::Attention {
                query,
                keys,
                values,
                n,
            },
        )
    }

    /// `log sum_{t in set} softmax(logits)_t`, a scalar.
    pub fn log_prob_set(&mut self, logits: NodeId, set: Vec<usize>) -> NodeId {
        let l = &self.nodes[logits].value;
        let all = log_sum_exp(l.iter().copied());
        let sub = log_sum_exp(set.iter().map(|&t| l[t]));
        self.push(vec![sub - all], Vec::new(), Op::LogProbSet { logits, set })
    }

    pub fn sum(&mut self, parts: Vec<NodeId>) -> NodeId {
        let v = parts.iter().map(|&p| self.nodes[p].value[0]).sum();
        self.push(vec![v], Vec::new(), Op::Sum(parts))
    }

    /// Back-propagates `seed * d(root)` into `param_grad`.
    pub fn backward(&self, root: NodeId, seed: f64, param_grad: &mut [f64]) {
        debug_assert_eq!(param_grad.len(), self.params.len());
        let p = self.params;
        let mut grads: Vec<Vec<f64>> = self.nodes[..=root].iter().map(|_| Vec::new()).collect();
        grads[root] = vec![seed; self.nodes[root].value.len()];
        for id in (0..=root).rev() {
            let g = std::mem::take(&mut grads[id]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Embed { table, row } => {
                    let start = table.offset + row * table.cols;
                    axpy(1.0, &g, &mut param_grad[start..start + table.cols]);
                }
                Op::MatVec { w, x } => {
                    let xv = &self.nodes[*x].value;
                    let gx = slot(&mut grads, &self.nodes, *x);
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        axpy(*gr, w.row(p, r), gx);
                        let start = w.offset + r * w.cols;
                        axpy(*gr, xv, &mut param_grad[start..start + w.cols]);
                    }
                }
                Op::AddBias { a, b } => {
                    axpy(1.0, &g, &mut param_grad[b.offset..b.offset + b.len()]);
                    let ga = slot(&mut grads, &self.nodes, *a);
                    axpy(1.0, &g, ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &part in parts {
                        let len = self.nodes[part].value.len();
                        let gp = slot(&mut grads, &self.nodes, part);
                        axpy(1.0, &g[off..off + len], gp);
                        off += len;
                    }
                }
                Op::Dropout { a, mask } => {
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for ((gi, m), out) in g.iter().zip(mask).zip(ga.iter_mut()) {
                        *out += gi * m;
                    }
                }
                Op::Gru { x, h, g: gb } => {
                    let hd = gb.u.cols;
                    let xv = &self.nodes[*x].value;
                    let hv = &self.nodes[*h].value;
                    let (r, rest) = node.aux.split_at(hd);
                    let (z, rest) = rest.split_at(hd);
                    let (n, ghn) = rest.split_at(hd);
                    let mut dgx = vec![0.0; 3 * hd];
                    let mut dgh = vec![0.0; 3 * hd];
                    let gh = slot(&mut grads, &self.nodes, *h);
                    for i in 0..hd {
                        let dn = g[i] * (1.0 - z[i]);
                        let dz = g[i] * (hv[i] - n[i]);
                        gh[i] += g[i] * z[i];
                        let dn_pre = dn * (1.0 - n[i] * n[i]);
                        let dr = dn_pre * ghn[i];
                        let dr_pre = dr * r[i] * (1.0 - r[i]);
                        let dz_pre = dz * z[i] * (1.0 - z[i]);
                        dgx[i] = dr_pre;
                        dgx[hd + i] = dz_pre;
                        dgx[2 * hd + i] = dn_pre;
                        dgh[i] = dr_pre;
                        dgh[hd + i] = dz_pre;
                        dgh[2 * hd + i] = dn_pre * r[i];
                    }
                    axpy(
                        1.0,
                        &dgx,
                        &mut param_grad[gb.b.offset..gb.b.offset + 3 * hd],
                    );
                    axpy(
                        1.0,
                        &dgh,
                        &mut param_grad[gb.bu.offset..gb.bu.offset + 3 * hd],
                    );
                    for (row, d) in dgh.iter().enumerate() {
                        axpy(*d, gb.u.row(p, row), gh);
                        let start = gb.u.offset + row * gb.u.cols;
                        axpy(*d, hv, &mut param_grad[start..start + gb.u.cols]);
                    }
                    let gxn = slot(&mut grads, &self.nodes, *x);
                    for (row, d) in dgx.iter().enumerate() {
                        axpy(*d, gb.w.row(p, row), gxn);
                        let start = gb.w.offset + row * gb.w.cols;
                        axpy(*d, xv, &mut param_grad[start..start + gb.w.cols]);
                    }
                }
                Op::Attention {
                    query,
                    keys,
                    values,
                    n,
                } => {
                    let n = *n;
                    let a = &node.aux;
                    let q = &self.nodes[*query].value;
                    let k = &self.nodes[*keys].value;
                    let v = &self.nodes[*values].value;
                    let d = q.len();
                    let dv = v.len() / n;
                    let da: Vec<f64> = (0..n).map(|j| dot(&v[j * dv..(j + 1) * dv], &g)).collect();
                    let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                    let gv = slot(&mut grads, &self.nodes, *values);
                    for j in 0..n {
                        axpy(a[j], &g, &mut gv[j * dv..(j + 1) * dv]);
                    }
                    let ds: Vec<f64> = a
                        .iter()
                        .zip(&da)
                        .map(|(aj, daj)| aj * (daj - mean))
                        .collect();
                    let gk = slot(&mut grads, &self.nodes, *keys);
                    for j in 0..n {
                        axpy(ds[j], q, &mut gk[j * d..(j + 1) * d]);
                    }
                    let gq = slot(&mut grads, &self.nodes, *query);
                    for j in 0..n {
                        axpy(ds[j], &k[j * d..(j + 1) * d], gq);
                    }
                }
                Op::LogProbSet { logits, set } => {
                    let l = &self.nodes[*logits].value;
                    let all = log_sum_exp(l.iter().copied());
                    let sub = log_sum_exp(set.iter().map(|&t| l[t]));
                    let gl = slot(&mut grads, &self.nodes, *logits);
                    for (i, li) in l.iter().enumerate() {
                        gl[i] -= g[0] * (li - all).exp();
                    }
                    for &t in set {
                        gl[t] += g[0] * (l[t] - sub).exp();
                    }
                }
                Op::Sum(parts) => {
                    for &part in parts {
                        let gp = slot(&mut grads, &self.nodes, part);
                        gp[0] += g[0];
                    }
                }
            }
        }
    }
}
