//! A small reverse-mode autodiff tape over f64 vectors.
//!
//! One tape records the forward pass of a single example. Parameter-bearing
//! ops (`linear`, `conv1d`, `param`) read weights straight out of the
//! [`ParamStore`] and, on the backward pass, scatter their gradients into a
//! flat buffer laid out like the store.

use super::params::{BlockId, ParamStore};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    tin: usize,
    tout: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(BlockId),
    Linear { x: Var, w: BlockId, b: BlockId, inp: usize, out: usize },
    Conv1d { x: Var, w: BlockId, b: BlockId, s: ConvShape },
    Upsample { x: Var, ch: usize, tin: usize, tout: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Tanh(Var),
    Exp(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Concat(Var, Var),
    Slice { x: Var, start: usize },
    KlGauss { qm: Var, qlv: Var, pm: Var, plv: Var },
    GaussLogLik { x: Var, mu: Var, lv: Var },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(128),
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, block: BlockId) -> Var {
        let value = self.params.get(block).to_vec();
        self.push(value, Op::Param(block))
    }

    /// y = W x + b with W stored row-major as [out, inp].
    pub fn linear(&mut self, x: Var, w: BlockId, b: BlockId) -> Var {
        let shape = &self.params.block(w).shape;
        let (out, inp) = (shape[0], shape[1]);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), inp, "linear input length");
        let wv = self.params.get(w);
        let bv = self.params.get(b);
        let value = (0..out)
            .map(|o| {
                let row = &wv[o * inp..(o + 1) * inp];
                bv[o] + row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        self.push(value, Op::Linear { x, w, b, inp, out })
    }

    /// 1D convolution. `x` is channel-major [cin, tin]; W is [cout, cin, k].
    pub fn conv1d(&mut self, x: Var, w: BlockId, b: BlockId, stride: usize, pad: usize) -> Var {
        let shape = &self.params.block(w).shape;
        let (cout, cin, k) = (shape[0], shape[1], shape[2]);
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len() % cin, 0, "conv input channels");
        let tin = xv.len() / cin;
        let tout = (tin + 2 * pad - k) / stride + 1;
        let s = ConvShape {
            cin,
            cout,
            k,
            stride,
            pad,
            tin,
            tout,
        };
        let wv = self.params.get(w);
        let bv = self.params.get(b);
        let mut value = vec![0.0; cout * tout];
        for co in 0..cout {
            let yrow = &mut value[co * tout..(co + 1) * tout];
            yrow.fill(bv[co]);
            for ci in 0..cin {
                let xrow = &xv[ci * tin..(ci + 1) * tin];
                let wk = &wv[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                for (t, y) in yrow.iter_mut().enumerate() {
                    let base = (t * stride) as isize - pad as isize;
                    for (j, &wj) in wk.iter().enumerate() {
                        let src = base + j as isize;
                        if src >= 0 && (src as usize) < tin {
                            *y += wj * xrow[src as usize];
                        }
                    }
                }
            }
        }
        self.push(value, Op::Conv1d { x, w, b, s })
    }

    /// Nearest-neighbour upsampling of a [ch, tin] map to [ch, tout].
    pub fn upsample(&mut self, x: Var, ch: usize, tout: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let tin = xv.len() / ch;
        let mut value = vec![0.0; ch * tout];
        for c in 0..ch {
            for t in 0..tout {
                value[c * tout + t] = xv[c * tin + Self::up_src(t, tin, tout)];
            }
        }
        self.push(value, Op::Upsample { x, ch, tin, tout })
    }

    fn up_src(t: usize, tin: usize, tout: usize) -> usize {
        (t * tin / tout).min(tin - 1)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "elementwise length mismatch");
        let value = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        self.push(value, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { x: a, lo, hi })
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        value.extend_from_slice(&self.nodes[b.0].value);
        self.push(value, Op::Concat(a, b))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[a.0].value[start..start + len].to_vec();
        self.push(value, Op::Slice { x: a, start })
    }

    /// KL(N(qm, e^qlv) || N(pm, e^plv)) summed over dimensions.
    pub fn kl_gauss(&mut self, qm: Var, qlv: Var, pm: Var, plv: Var) -> Var {
        let kl = super::gaussian::kl_diag(
            &self.nodes[qm.0].value,
            &self.nodes[qlv.0].value,
            &self.nodes[pm.0].value,
            &self.nodes[plv.0].value,
        );
        self.push(vec![kl], Op::KlGauss { qm, qlv, pm, plv })
    }

    /// Sum over dimensions of log N(x; mu, e^lv).
    pub fn gauss_loglik(&mut self, x: Var, mu: Var, lv: Var) -> Var {
        let (xv, mv, lvv) = (&self.nodes[x.0].value, &self.nodes[mu.0].value, &self.nodes[lv.0].value);
        let ll = xv
            .iter()
            .zip(mv)
            .zip(lvv)
            .map(|((&x, &m), &l)| -0.5 * (LN_2PI + l + (x - m).powi(2) * (-l).exp()))
            .sum();
        self.push(vec![ll], Op::GaussLogLik { x, mu, lv })
    }

    /// Back-propagate from scalar outputs, each weighted by its coefficient,
    /// adding parameter gradients into `grad` (same layout as the store).
    pub fn backward(&self, seeds: &[(Var, f64)], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|_| Vec::new()).collect();
        let mut top = 0;
        for &(v, c) in seeds {
            let slot = &mut adj[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; self.nodes[v.0].value.len()];
            }
            slot[0] += c;
            top = top.max(v.0 + 1);
        }

        fn acc<'a>(adj: &'a mut [Vec<f64>], nodes: &[Node], v: Var) -> &'a mut [f64] {
            let slot = &mut adj[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; nodes[v.0].value.len()];
            }
            slot
        }

        for i in (0..top).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            let nodes = &self.nodes;
            match node.op {
                Op::Constant => {}
                Op::Param(block) => {
                    let off = self.params.block(block).offset;
                    for (dst, &gi) in grad[off..off + g.len()].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                }
                Op::Linear { x, w, b, inp, out } => {
                    let xv = &nodes[x.0].value;
                    let wv = self.params.get(w);
                    let (woff, boff) = (self.params.block(w).offset, self.params.block(b).offset);
                    for o in 0..out {
                        let go = g[o];
                        if go == 0.0 {
                            continue;
                        }
                        grad[boff + o] += go;
                        let gw = &mut grad[woff + o * inp..woff + (o + 1) * inp];
                        for (gwi, &xi) in gw.iter_mut().zip(xv) {
                            *gwi += go * xi;
                        }
                    }
                    let gx = acc(&mut adj, nodes, x);
                    for o in 0..out {
                        let go = g[o];
                        if go == 0.0 {
                            continue;
                        }
                        let row = &wv[o * inp..(o + 1) * inp];
                        for (gxi, &wi) in gx.iter_mut().zip(row) {
                            *gxi += go * wi;
                        }
                    }
                }
                Op::Conv1d { x, w, b, s } => {
                    let xv = &nodes[x.0].value;
                    let wv = self.params.get(w);
                    let (woff, boff) = (self.params.block(w).offset, self.params.block(b).offset);
                    let mut gx = vec![0.0; xv.len()];
                    for co in 0..s.cout {
                        let grow = &g[co * s.tout..(co + 1) * s.tout];
                        grad[boff + co] += grow.iter().sum::<f64>();
                        for ci in 0..s.cin {
                            let xrow = &xv[ci * s.tin..(ci + 1) * s.tin];
                            let gxrow = &mut gx[ci * s.tin..(ci + 1) * s.tin];
                            let widx = (co * s.cin + ci) * s.k;
                            for (t, &gt) in grow.iter().enumerate() {
                                if gt == 0.0 {
                                    continue;
                                }
                                let base = (t * s.stride) as isize - s.pad as isize;
                                for j in 0..s.k {
                                    let src = base + j as isize;
                                    if src >= 0 && (src as usize) < s.tin {
                                        let src = src as usize;
                                        grad[woff + widx + j] += gt * xrow[src];
                                        gxrow[src] += gt * wv[widx + j];
                                    }
                                }
                            }
                        }
                    }
                    for (d, v) in acc(&mut adj, nodes, x).iter_mut().zip(gx) {
                        *d += v;
                    }
                }
                Op::Upsample { x, ch, tin, tout } => {
                    let gx = acc(&mut adj, nodes, x);
                    for c in 0..ch {
                        for t in 0..tout {
                            gx[c * tin + Self::up_src(t, tin, tout)] += g[c * tout + t];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (d, &gi) in acc(&mut adj, nodes, a).iter_mut().zip(&g) {
                        *d += gi;
                    }
                    for (d, &gi) in acc(&mut adj, nodes, b).iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(gi, y)| gi * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(gi, x)| gi * x).collect();
                    for (d, v) in acc(&mut adj, nodes, a).iter_mut().zip(ga) {
                        *d += v;
                    }
                    for (d, v) in acc(&mut adj, nodes, b).iter_mut().zip(gb) {
                        *d += v;
                    }
                }
                Op::Scale(a, c) => {
                    for (d, &gi) in acc(&mut adj, nodes, a).iter_mut().zip(&g) {
                        *d += c * gi;
                    }
                }
                Op::Silu(a) => {
                    let av = &nodes[a.0].value;
                    let local: Vec<f64> = av
                        .iter()
                        .zip(&g)
                        .map(|(&x, gi)| {
                            let s = sigmoid(x);
                            gi * s * (1.0 + x * (1.0 - s))
                        })
                        .collect();
                    for (d, v) in acc(&mut adj, nodes, a).iter_mut().zip(local) {
                        *d += v;
                    }
                }
                Op::Tanh(a) => {
                    for ((d, &gi), &y) in acc(&mut adj, nodes, a).iter_mut().zip(&g).zip(&node.value) {
                        *d += gi * (1.0 - y * y);
                    }
                }
                Op::Exp(a) => {
                    for ((d, &gi), &y) in acc(&mut adj, nodes, a).iter_mut().zip(&g).zip(&node.value) {
                        *d += gi * y;
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = &nodes[x.0].value;
                    let local: Vec<f64> = xv
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gi)| if (lo..=hi).contains(&v) { gi } else { 0.0 })
                        .collect();
                    for (d, v) in acc(&mut adj, nodes, x).iter_mut().zip(local) {
                        *d += v;
                    }
                }
                Op::Concat(a, b) => {
                    let na = nodes[a.0].value.len();
                    for (d, &gi) in acc(&mut adj, nodes, a).iter_mut().zip(&g[..na]) {
                        *d += gi;
                    }
                    for (d, &gi) in acc(&mut adj, nodes, b).iter_mut().zip(&g[na..]) {
                        *d += gi;
                    }
                }
                Op::Slice { x, start } => {
                    let gx = acc(&mut adj, nodes, x);
                    for (d, &gi) in gx[start..start + g.len()].iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::KlGauss { qm, qlv, pm, plv } => {
                    let g0 = g[0];
                    let (qmv, qlvv, pmv, plvv) = (
                        &nodes[qm.0].value,
                        &nodes[qlv.0].value,
                        &nodes[pm.0].value,
                        &nodes[plv.0].value,
                    );
                    let n = qmv.len();
                    let (mut d_qm, mut d_qlv, mut d_pm, mut d_plv) =
                        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                    for i in 0..n {
                        let inv_p = (-plvv[i]).exp();
                        let diff = qmv[i] - pmv[i];
                        let qvar = qlvv[i].exp();
                        d_qm[i] = g0 * diff * inv_p;
                        d_pm[i] = -d_qm[i];
                        d_qlv[i] = g0 * 0.5 * (qvar * inv_p - 1.0);
                        d_plv[i] = g0 * 0.5 * (1.0 - (qvar + diff * diff) * inv_p);
                    }
                    for (v, d) in [(qm, d_qm), (qlv, d_qlv), (pm, d_pm), (plv, d_plv)] {
                        for (dst, x) in acc(&mut adj, nodes, v).iter_mut().zip(d) {
                            *dst += x;
                        }
                    }
                }
                Op::GaussLogLik { x, mu, lv } => {
                    let g0 = g[0];
                    let (xv, mv, lvv) = (&nodes[x.0].value, &nodes[mu.0].value, &nodes[lv.0].value);
                    let n = xv.len();
                    let (mut d_x, mut d_mu, mut d_lv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                    for i in 0..n {
                        let inv = (-lvv[i]).exp();
                        let r = xv[i] - mv[i];
                        d_mu[i] = g0 * r * inv;
                        d_x[i] = -d_mu[i];
                        d_lv[i] = g0 * -0.5 * (1.0 - r * r * inv);
                    }
                    for (v, d) in [(x, d_x), (mu, d_mu), (lv, d_lv)] {
                        for (dst, val) in acc(&mut adj, nodes, v).iter_mut().zip(d) {
                            *dst += val;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` over every parameter.
    fn numeric_grad(store: &ParamStore, f: &dyn Fn(&ParamStore) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let mut s = store.clone();
        (0..store.len())
            .map(|i| {
                let orig = s.data()[i];
                s.data_mut()[i] = orig + h;
                let up = f(&s);
                s.data_mut()[i] = orig - h;
                let down = f(&s);
                s.data_mut()[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut k = 0u64;
        let mut next = move || {
            k += 1;
            ((crate::rng::mix(k) >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let cw = store.add("cw", &[2, 1, 3], &mut next);
        let cb = store.add("cb", &[2], &mut next);
        let dw = store.add("dw", &[2, 2, 3], &mut next);
        let db = store.add("db", &[2], &mut next);
        let lw = store.add("lw", &[4, 6], &mut next);
        let lb = store.add("lb", &[4], &mut next);
        let pv = store.add("pv", &[2], &mut next);

        let f = |s: &ParamStore| -> (f64, Vec<f64>) {
            let mut t = Tape::new(s);
            let x = t.constant(vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9, 0.05]);
            let c = t.conv1d(x, cw, cb, 1, 1);
            let c = t.silu(c);
            let d = t.conv1d(c, dw, db, 2, 1); // [2, 4]
            let u = t.upsample(d, 2, 7);
            let u = t.tanh(u);
            let head = t.slice(u, 2, 6);
            let h = t.linear(head, lw, lb);
            let p = t.param(pv);
            let qm = t.slice(h, 0, 2);
            let qlv_raw = t.slice(h, 2, 2);
            let qlv = t.clamp(qlv_raw, -8.0, 4.0);
            let pm = t.scale(p, 0.5);
            let e = t.exp(p);
            let plv = t.mul(e, qm);
            let kl = t.kl_gauss(qm, qlv, pm, plv);
            let xs = t.constant(vec![0.1, -0.2, 0.3, 0.4]);
            let both = t.concat(qm, pm);
            let sum = t.add(both, h);
            let lv = t.constant(vec![0.1, -0.3, 0.2, 0.0]);
            let ll = t.gauss_loglik(xs, sum, lv);
            let total = 0.7 * t.scalar(kl) - 1.3 * t.scalar(ll);
            let mut grad = vec![0.0; s.len()];
            t.backward(&[(kl, 0.7), (ll, -1.3)], &mut grad);
            (total, grad)
        };
        let (_, analytic) = f(&store);
        let numeric = numeric_grad(&store, &|s| f(s).0);
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "param {i}: analytic {a} numeric {n}");
        }
    }
}
