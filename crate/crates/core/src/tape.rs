//! Reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] with a seed gradient for one node propagates adjoints
//! to every node that depends on a trainable leaf.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Sparse row combination: output row `i` is `sum(w * input[r])` over `rows[i]`.
pub type RowWeights = Vec<Vec<(usize, f64)>>;

const ATTENTION_EPS: f64 = 1e-6;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Elu(Var),
    Gather(Var, Vec<usize>),
    SegmentMax { x: Var, argmax: Array2<usize> },
    Combine(Var, RowWeights),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    TemporalMix { w: Var, x: Var, groups: usize },
    Reshape(Var),
    LinearAttention(Box<AttentionCache>),
}

struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    phi_q: Array2<f64>,
    phi_k: Array2<f64>,
    kv: Array2<f64>,
    k_sum: Vec<f64>,
    den: Vec<f64>,
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// The positive feature map `elu(x) + 1`.
#[inline]
pub fn elu_plus_one(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// Adds a 1×C bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let value = self.value(x) + self.value(bias);
        let ng = self.needs(x) || self.needs(bias);
        self.push(value, Op::AddBias(x, bias), ng)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(elu);
        let ng = self.needs(x);
        self.push(value, Op::Elu(x), ng)
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let src = self.value(x);
        let mut value = Array2::zeros((rows.len(), src.ncols()));
        for (mut out, &r) in value.rows_mut().into_iter().zip(&rows) {
            out.assign(&src.row(r));
        }
        let ng = self.needs(x);
        self.push(value, Op::Gather(x, rows), ng)
    }

    /// Column-wise maximum over contiguous row segments `offsets[s]..offsets[s+1]`.
    /// Ties resolve to the first row.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Var {
        let src = self.value(x);
        let segs = offsets.len() - 1;
        let cols = src.ncols();
        let mut value = Array2::zeros((segs, cols));
        let mut argmax = Array2::zeros((segs, cols));
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            assert!(hi > lo, "empty segment in segment_max");
            for c in 0..cols {
                let mut best = lo;
                let mut best_v = src[[lo, c]];
                for r in lo + 1..hi {
                    let v = src[[r, c]];
                    if v > best_v {
                        best_v = v;
                        best = r;
                    }
                }
                value[[s, c]] = best_v;
                argmax[[s, c]] = best;
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::SegmentMax { x, argmax }, ng)
    }

    pub fn combine_rows(&mut self, x: Var, weights: RowWeights) -> Var {
        let src = self.value(x);
        let mut value = Array2::zeros((weights.len(), src.ncols()));
        for (mut out, ws) in value.rows_mut().into_iter().zip(&weights) {
            for &(r, w) in ws {
                out.scaled_add(w, &src.row(r));
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::Combine(x, weights), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols: row counts differ");
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::ConcatCols(a, b), ng)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_rows: column counts differ");
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::ConcatRows(a, b), ng)
    }

    /// `x` holds `groups` stacked blocks of T rows; each block is left-multiplied by the T×T matrix `w`.
    pub fn temporal_mix(&mut self, w: Var, x: Var, groups: usize) -> Var {
        let wv = self.value(w);
        let xv = self.value(x);
        let t = wv.nrows();
        assert_eq!(xv.nrows(), groups * t, "temporal_mix: row count mismatch");
        let mut value = Array2::zeros(xv.dim());
        for g in 0..groups {
            let block = wv.dot(&xv.slice(s![g * t..(g + 1) * t, ..]));
            value.slice_mut(s![g * t..(g + 1) * t, ..]).assign(&block);
        }
        let ng = self.needs(w) || self.needs(x);
        self.push(value, Op::TemporalMix { w, x, groups }, ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(x);
        let flat: Vec<f64> = src.iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("reshape: element count mismatch");
        let ng = self.needs(x);
        self.push(value, Op::Reshape(x), ng)
    }

    /// Kernelized linear attention with feature map `elu(x) + 1`:
    /// `out_i = phi(q_i) (sum_j phi(k_j)^T v_j) / (phi(q_i) . sum_j phi(k_j) + 1e-6)`.
    pub fn linear_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let phi_q = self.value(q).mapv(elu_plus_one);
        let phi_k = self.value(k).mapv(elu_plus_one);
        if phi_q.iter().chain(phi_k.iter()).any(|&x| !(x > 0.0)) {
            return Err(Error::Numeric("attention kernel produced a non-positive feature".into()));
        }
        let vv = self.value(v);
        if phi_k.nrows() != vv.nrows() {
            return Err(Error::arg("attention keys and values differ in length"));
        }
        let kv = phi_k.t().dot(vv);
        let k_sum: Vec<f64> = phi_k.sum_axis(Axis(0)).to_vec();
        let num = phi_q.dot(&kv);
        let den: Vec<f64> = phi_q
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&k_sum).map(|(a, b)| a * b).sum::<f64>() + ATTENTION_EPS)
            .collect();
        let mut value = num;
        for (mut row, d) in value.rows_mut().into_iter().zip(&den) {
            row /= *d;
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        let cache = AttentionCache {
            q,
            k,
            v,
            phi_q,
            phi_k,
            kv,
            k_sum,
            den,
        };
        Ok(self.push(value, Op::LinearAttention(Box::new(cache)), ng))
    }

    /// Propagates `seed = d loss / d root` back through the tape.
    pub fn backward(&self, root: Var, seed: Array2<f64>) -> Gradients {
        assert_eq!(seed.dim(), self.value(root).dim(), "seed shape must match root");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn accumulate_view(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: ArrayView2<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g.to_owned()),
        }
    }

    fn propagate(&self, node: &Node, g: Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let ga = g.dot(&self.value(*b).t());
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let gb = self.value(*a).t().dot(&g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate_view(grads, *a, g.view());
                self.accumulate(grads, *b, g);
            }
            Op::AddBias(x, b) => {
                if self.needs(*b) {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *b, gb);
                }
                self.accumulate(grads, *x, g);
            }
            Op::Elu(x) => {
                let mut gx = g;
                Zip::from(&mut gx)
                    .and(self.value(*x))
                    .for_each(|gi, &xi| *gi *= elu_grad(xi));
                self.accumulate(grads, *x, gx);
            }
            Op::Gather(x, rows) => {
                if self.needs(*x) {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (gr, &r) in g.rows().into_iter().zip(rows) {
                        let mut dst = gx.row_mut(r);
                        dst += &gr;
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::SegmentMax { x, argmax } => {
                let mut gx = Array2::zeros(self.value(*x).dim());
                for ((s, c), &r) in argmax.indexed_iter() {
                    gx[[r, c]] += g[[s, c]];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Combine(x, weights) => {
                let mut gx = Array2::zeros(self.value(*x).dim());
                for (gr, ws) in g.rows().into_iter().zip(weights) {
                    for &(r, w) in ws {
                        gx.row_mut(r).scaled_add(w, &gr);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).ncols();
                self.accumulate_view(grads, *a, g.slice(s![.., ..ca]));
                self.accumulate_view(grads, *b, g.slice(s![.., ca..]));
            }
            Op::ConcatRows(a, b) => {
                let ra = self.value(*a).nrows();
                self.accumulate_view(grads, *a, g.slice(s![..ra, ..]));
                self.accumulate_view(grads, *b, g.slice(s![ra.., ..]));
            }
            Op::TemporalMix { w, x, groups } => {
                let wv = self.value(*w);
                let xv = self.value(*x);
                let t = wv.nrows();
                if self.needs(*w) {
                    let mut gw = Array2::zeros(wv.dim());
                    for gi in 0..*groups {
                        let rows = s![gi * t..(gi + 1) * t, ..];
                        gw += &g.slice(rows).dot(&xv.slice(rows).t());
                    }
                    self.accumulate(grads, *w, gw);
                }
                if self.needs(*x) {
                    let mut gx = Array2::zeros(xv.dim());
                    for gi in 0..*groups {
                        let rows = s![gi * t..(gi + 1) * t, ..];
                        gx.slice_mut(rows).assign(&wv.t().dot(&g.slice(rows)));
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Reshape(x) => {
                let dim = self.value(*x).dim();
                let flat: Vec<f64> = g.iter().copied().collect();
                let gx = Array2::from_shape_vec(dim, flat).expect("reshape backward");
                self.accumulate(grads, *x, gx);
            }
            Op::LinearAttention(c) => self.attention_backward(c, &node.value, g, grads),
        }
    }

    fn attention_backward(
        &self,
        c: &AttentionCache,
        out: &Array2<f64>,
        g: Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
    ) {
        // out_i = num_i / den_i with num = phi_q kv and den = phi_q . k_sum + eps.
        let mut d_num = g;
        let mut d_den = vec![0.0; c.den.len()];
        for (i, (mut row, out_row)) in d_num.rows_mut().into_iter().zip(out.rows()).enumerate() {
            let dot: f64 = row.iter().zip(out_row.iter()).map(|(a, b)| a * b).sum();
            d_den[i] = -dot / c.den[i];
            row /= c.den[i];
        }
        let mut d_phi_q = d_num.dot(&c.kv.t());
        for (mut row, dd) in d_phi_q.rows_mut().into_iter().zip(&d_den) {
            row.iter_mut().zip(&c.k_sum).for_each(|(r, z)| *r += dd * z);
        }
        let d_kv = c.phi_q.t().dot(&d_num);
        let mut d_ksum = vec![0.0; c.k_sum.len()];
        for (row, dd) in c.phi_q.rows().into_iter().zip(&d_den) {
            d_ksum.iter_mut().zip(row.iter()).for_each(|(acc, p)| *acc += dd * p);
        }
        let vv = self.value(c.v);
        if self.needs(c.q) {
            Zip::from(&mut d_phi_q)
                .and(self.value(c.q))
                .for_each(|gq, &x| *gq *= elu_grad(x));
            self.accumulate(grads, c.q, d_phi_q);
        }
        if self.needs(c.k) {
            let mut d_phi_k = vv.dot(&d_kv.t());
            for mut row in d_phi_k.rows_mut() {
                row.iter_mut().zip(&d_ksum).for_each(|(r, z)| *r += z);
            }
            Zip::from(&mut d_phi_k)
                .and(self.value(c.k))
                .for_each(|gk, &x| *gk *= elu_grad(x));
            self.accumulate(grads, c.k, d_phi_k);
        }
        if self.needs(c.v) {
            let d_v = c.phi_k.dot(&d_kv);
            self.accumulate(grads, c.v, d_v);
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.5..1.5))
    }

    /// Checks d(sum(out * probe))/d(leaf) against central differences for every leaf entry.
    fn check<F>(leaves: Vec<Array2<f64>>, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|l| tape.param(l.clone())).collect();
        let out = build(&mut tape, &vars);
        let probe = random(&mut rng, tape.value(out).nrows(), tape.value(out).ncols());
        let grads = tape.backward(out, probe.clone());
        let eval = |ls: &[Array2<f64>]| -> f64 {
            let mut t = Tape::new();
            let vs: Vec<Var> = ls.iter().map(|l| t.param(l.clone())).collect();
            let o = build(&mut t, &vs);
            (t.value(o) * &probe).sum()
        };
        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(vars[li]).cloned().unwrap_or_else(|| Array2::zeros(leaf.dim()));
            for idx in 0..leaf.len() {
                let (r, c) = (idx / leaf.ncols(), idx % leaf.ncols());
                let mut up = leaves.clone();
                up[li][[r, c]] += h;
                let mut dn = leaves.clone();
                dn[li][[r, c]] -= h;
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                let a = analytic[[r, c]];
                assert!((fd - a).abs() <= 1e-6 * (1.0 + fd.abs()), "leaf {li} [{r},{c}]: fd {fd} vs {a}");
            }
        }
    }

    #[test]
    fn dense_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 5, 3);
        let w = random(&mut rng, 3, 4);
        let b = random(&mut rng, 1, 4);
        check(vec![x, w, b], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let z = t.add_bias(m, v[2]);
            let e = t.elu(z);
            let c = t.concat_cols(e, v[0]);
            let s = t.add(c, c);
            let s = t.concat_rows(s, s);
            t.reshape(s, 14, 5)
        });
    }

    #[test]
    fn sparse_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 6, 3);
        check(vec![x], |t, v| {
            let g = t.gather_rows(v[0], vec![0, 2, 2, 5, 1, 3, 4]);
            let m = t.segment_max(g, &[0, 3, 5, 7]);
            t.combine_rows(m, vec![vec![(0, 0.3), (2, 0.7)], vec![(1, 1.0)], vec![(0, -2.0), (1, 0.5), (2, 0.25)]])
        });
    }

    #[test]
    fn temporal_mix_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&mut rng, 4, 4);
        let x = random(&mut rng, 12, 2);
        check(vec![w, x], |t, v| t.temporal_mix(v[0], v[1], 3));
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random(&mut rng, 6, 3);
        let k = random(&mut rng, 4, 3);
        let v = random(&mut rng, 4, 3);
        check(vec![q, k, v], |t, vs| t.linear_attention(vs[0], vs[1], vs[2]).unwrap());
        let q = random(&mut rng, 5, 2);
        let kv = random(&mut rng, 3, 2);
        check(vec![q, kv], |t, vs| t.linear_attention(vs[0], vs[1], vs[1]).unwrap());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Array2::ones((2, 2)));
        let p = t.param(Array2::ones((2, 2)));
        let o = t.matmul(c, p);
        let g = t.backward(o, Array2::ones((2, 2)));
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap(), &Array2::from_elem((2, 2), 2.0));
    }
}
