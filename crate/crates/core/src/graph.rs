//! Reverse-mode autodiff over a flat tape of matrix operations.
//!
//! Every forward pass builds a fresh `Graph`; parameters enter as named
//! leaves and `backward` returns their gradients keyed by name. The op set
//! is exactly what the model needs, nothing more.

use crate::mat::Mat;
use std::collections::HashMap;

/// Probabilities are clamped to this floor inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Const,
    Param(String),
    /// Columns gathered from rows of an embedding table (table never enters
    /// the tape; the gradient is scattered back under `name`).
    Embed {
        name: String,
        table_shape: (usize, usize),
        ids: Vec<usize>,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    /// Broadcast-add a column vector to every column of a matrix.
    AddCol(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LogClamped(Var),
    /// Softmax over the entries of a row or column vector; masked entries
    /// are excluded from the normalization and produce exactly 0.
    Softmax {
        x: Var,
        mask: Vec<bool>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Sum(Var),
    SelectCol(Var, usize),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Gradients keyed by parameter-group name.
#[derive(Default, Clone, Debug)]
pub struct Grads {
    map: HashMap<String, Mat>,
}

impl Grads {
    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.map.get(name)
    }

    pub fn insert(&mut self, name: &str, mat: Mat) {
        self.map.insert(name.to_string(), mat);
    }

    pub fn add(&mut self, name: &str, delta: Mat) {
        match self.map.get_mut(name) {
            Some(m) => m.add_assign(&delta),
            None => {
                self.map.insert(name.to_string(), delta);
            }
        }
    }

    /// Sums another gradient set into this one.
    pub fn accumulate(&mut self, other: &Grads) {
        for (name, mat) in &other.map {
            self.add(name, mat.clone());
        }
    }

    pub fn scale(&mut self, s: f64) {
        for mat in self.map.values_mut() {
            mat.scale_assign(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(|m| m.is_finite())
    }

    /// First group holding a non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut names: Vec<&String> = self.map.keys().collect();
        names.sort();
        names
            .into_iter()
            .find(|n| !self.map[*n].is_finite())
            .cloned()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() expects a 1x1 node");
        m.get(0, 0)
    }

    /// Flattened value of a row- or column-vector node.
    pub fn vector(&self, v: Var) -> Vec<f64> {
        self.value(v).to_flat_vec()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Const)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Mat::zeros(rows, cols))
    }

    /// Named parameter leaf; its gradient is collected under `name`.
    pub fn param(&mut self, name: &str, value: &Mat) -> Var {
        self.push(value.clone(), Op::Param(name.to_string()))
    }

    /// Gathers `ids` rows of `table` as columns of a dxT matrix. The
    /// gradient is scattered into a full table-shaped matrix under `name`.
    pub fn embed(&mut self, name: &str, table: &Mat, ids: &[usize]) -> Var {
        let d = table.cols();
        let mut value = Mat::zeros(d, ids.len());
        for (t, &id) in ids.iter().enumerate() {
            assert!(id < table.rows(), "embedding id {} out of range", id);
            for q in 0..d {
                value.set(q, t, table.get(id, q));
            }
        }
        self.push(
            value,
            Op::Embed {
                name: name.to_string(),
                table_shape: table.shape(),
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    /// a is rxc, b is rx1; adds b to every column of a.
    pub fn add_col(&mut self, a: Var, b: Var) -> Var {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(mb.cols(), 1, "add_col expects a column vector");
        assert_eq!(ma.rows(), mb.rows(), "add_col row mismatch");
        let value = Mat::from_fn(ma.rows(), ma.cols(), |i, j| ma.get(i, j) + mb.get(i, 0));
        self.push(value, Op::AddCol(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    /// Elementwise ln(max(x, LOG_FLOOR)).
    pub fn log_clamped(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(LOG_FLOOR).ln());
        self.push(value, Op::LogClamped(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        self.softmax_masked(a, &vec![true; n])
    }

    /// Softmax over unmasked entries of a vector node; masked entries get 0.
    pub fn softmax_masked(&mut self, a: Var, mask: &[bool]) -> Var {
        let m = self.value(a);
        assert!(
            m.rows() == 1 || m.cols() == 1,
            "softmax expects a vector shape, got {}x{}",
            m.rows(),
            m.cols()
        );
        assert_eq!(mask.len(), m.len(), "softmax mask length mismatch");
        assert!(
            mask.iter().any(|&b| b),
            "softmax over a fully masked vector"
        );
        let xs = m.data();
        let max = xs
            .iter()
            .zip(mask)
            .filter(|(_, &keep)| keep)
            .map(|(&x, _)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0.0; xs.len()];
        let mut denom = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            if mask[i] {
                let e = (x - max).exp();
                out[i] = e;
                denom += e;
            }
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
        let value = Mat::from_vec(m.rows(), m.cols(), out);
        self.push(
            value,
            Op::Softmax {
                x: a,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            for i in 0..m.rows() {
                for j in 0..cols {
                    value.set(off + i, j, m.get(i, j));
                }
            }
            off += m.rows();
        }
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                for j in 0..m.cols() {
                    value.set(i, off + j, m.get(i, j));
                }
            }
            off += m.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    /// Column `j` of a matrix node, as an rx1 node.
    pub fn select_col(&mut self, a: Var, j: usize) -> Var {
        let m = self.value(a);
        assert!(j < m.cols(), "select_col index {} out of range", j);
        let value = Mat::col_from(&m.col(j));
        self.push(value, Op::SelectCol(a, j))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Reverse sweep from a scalar root; returns parameter gradients.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward root must be scalar"
        );
        let mut gbuf: Vec<Option<Mat>> = Vec::new();
        gbuf.resize_with(root.0 + 1, || None);
        gbuf[root.0] = Some(Mat::filled(1, 1, 1.0));
        let mut grads = Grads::default();

        for idx in (0..=root.0).rev() {
            let Some(g) = gbuf[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Const => {}
                Op::Param(name) => grads.add(name, g),
                Op::Embed {
                    name,
                    table_shape,
                    ids,
                } => {
                    let mut delta = Mat::zeros(table_shape.0, table_shape.1);
                    for (t, &id) in ids.iter().enumerate() {
                        for q in 0..table_shape.1 {
                            let cur = delta.get(id, q);
                            delta.set(id, q, cur + g.get(q, t));
                        }
                    }
                    grads.add(name, delta);
                }
                Op::MatMul(a, b) => {
                    let (ma, mb) = (self.value(*a), self.value(*b));
                    acc(&mut gbuf, a.0, g.matmul(&mb.transpose()));
                    acc(&mut gbuf, b.0, ma.transpose().matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut gbuf, a.0, g.clone());
                    acc(&mut gbuf, b.0, g);
                }
                Op::AddCol(a, b) => {
                    let mut db = Mat::zeros(g.rows(), 1);
                    for i in 0..g.rows() {
                        let mut s = 0.0;
                        for j in 0..g.cols() {
                            s += g.get(i, j);
                        }
                        db.set(i, 0, s);
                    }
                    acc(&mut gbuf, a.0, g);
                    acc(&mut gbuf, b.0, db);
                }
                Op::Sub(a, b) => {
                    acc(&mut gbuf, a.0, g.clone());
                    acc(&mut gbuf, b.0, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (ma, mb) = (self.value(*a), self.value(*b));
                    acc(&mut gbuf, a.0, g.zip_map(mb, |gi, bi| gi * bi));
                    acc(&mut gbuf, b.0, g.zip_map(ma, |gi, ai| gi * ai));
                }
                Op::Scale(a, s) => acc(&mut gbuf, a.0, g.map(|x| x * s)),
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    acc(&mut gbuf, a.0, g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi)));
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    acc(
                        &mut gbuf,
                        a.0,
                        g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi)),
                    );
                }
                Op::LogClamped(a) => {
                    let x = self.value(*a);
                    acc(
                        &mut gbuf,
                        a.0,
                        g.zip_map(x, |gi, xi| if xi > LOG_FLOOR { gi / xi } else { 0.0 }),
                    );
                }
                Op::Softmax { x, mask } => {
                    let y = &self.nodes[idx].value;
                    let mut dot = 0.0;
                    for i in 0..y.len() {
                        if mask[i] {
                            dot += g.data()[i] * y.data()[i];
                        }
                    }
                    let mut dx = Mat::zeros(y.rows(), y.cols());
                    for i in 0..y.len() {
                        if mask[i] {
                            dx.data_mut()[i] = y.data()[i] * (g.data()[i] - dot);
                        }
                    }
                    acc(&mut gbuf, x.0, dx);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pr = self.value(p).rows();
                        let mut dp = Mat::zeros(pr, g.cols());
                        for i in 0..pr {
                            for j in 0..g.cols() {
                                dp.set(i, j, g.get(off + i, j));
                            }
                        }
                        acc(&mut gbuf, p.0, dp);
                        off += pr;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut dp = Mat::zeros(g.rows(), pc);
                        for i in 0..g.rows() {
                            for j in 0..pc {
                                dp.set(i, j, g.get(i, off + j));
                            }
                        }
                        acc(&mut gbuf, p.0, dp);
                        off += pc;
                    }
                }
                Op::Transpose(a) => acc(&mut gbuf, a.0, g.transpose()),
                Op::Sum(a) => {
                    let m = self.value(*a);
                    acc(&mut gbuf, a.0, Mat::filled(m.rows(), m.cols(), g.get(0, 0)));
                }
                Op::SelectCol(a, j) => {
                    let m = self.value(*a);
                    let mut dp = Mat::zeros(m.rows(), m.cols());
                    for i in 0..m.rows() {
                        dp.set(i, *j, g.get(i, 0));
                    }
                    acc(&mut gbuf, a.0, dp);
                }
            }
        }
        grads
    }
}

fn acc(gbuf: &mut [Option<Mat>], idx: usize, delta: Mat) {
    match &mut gbuf[idx] {
        Some(m) => m.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(sum of f(x)) / dx for a single input.
    fn check_unary(build: impl Fn(&mut Graph, Var) -> Var, rows: usize, cols: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.5..1.5));
        let eps = 1e-5;

        let loss = |x: &Mat| {
            let mut g = Graph::new();
            let xv = g.param("x", x);
            let y = build(&mut g, xv);
            let s = g.sum(y);
            g.scalar(s)
        };

        let mut g = Graph::new();
        let xv = g.param("x", &x0);
        let y = build(&mut g, xv);
        let s = g.sum(y);
        let grads = g.backward(s);
        let analytic = grads.get("x").unwrap();

        for i in 0..rows {
            for j in 0..cols {
                let mut xp = x0.clone();
                xp.set(i, j, x0.get(i, j) + eps);
                let mut xm = x0.clone();
                xm.set(i, j, x0.get(i, j) - eps);
                let num = (loss(&xp) - loss(&xm)) / (2.0 * eps);
                let ana = analytic.get(i, j);
                let denom = ana.abs().max(num.abs()).max(1e-6);
                assert!(
                    (ana - num).abs() / denom < 1e-5,
                    "grad mismatch at ({},{}): analytic {} vs numeric {}",
                    i,
                    j,
                    ana,
                    num
                );
            }
        }
    }

    #[test]
    fn tanh_gradient() {
        check_unary(|g, x| g.tanh(x), 3, 2, 1);
    }

    #[test]
    fn sigmoid_gradient() {
        check_unary(|g, x| g.sigmoid(x), 3, 2, 2);
    }

    #[test]
    fn softmax_gradient() {
        check_unary(|g, x| {
            let s = g.softmax(x);
            let t = g.tanh(s);
            g.mul(s, t)
        }, 1, 5, 3);
    }

    #[test]
    fn masked_softmax_gradient_and_zeros() {
        let mask = vec![true, false, true, true, false];
        check_unary(
            move |g, x| {
                let s = g.softmax_masked(x, &[true, false, true, true, false]);
                let t = g.tanh(s);
                g.mul(s, t)
            },
            1,
            5,
            4,
        );
        let mut g = Graph::new();
        let x = g.constant(Mat::row_from(&[3.0, 100.0, 1.0, -2.0, 50.0]));
        let s = g.softmax_masked(x, &mask);
        let v = g.vector(s);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[4], 0.0);
        let total: f64 = v.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_chain_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let other = Mat::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        check_unary(
            move |g, x| {
                let o = g.constant(other.clone());
                let p = g.matmul(x, o);
                g.tanh(p)
            },
            2,
            4,
            6,
        );
    }

    #[test]
    fn composite_ops_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = Mat::from_fn(3, 1, |_, _| rng.gen_range(-1.0..1.0));
        check_unary(
            move |g, x| {
                let bv = g.constant(b.clone());
                let a = g.add_col(x, bv);
                let t = g.transpose(a);
                let m = g.matmul(a, t);
                let sc = g.scale(m, 0.5);
                let neg = g.sub(sc, m);
                g.mul(neg, sc)
            },
            3,
            3,
            8,
        );
    }

    #[test]
    fn log_clamped_gradient_and_floor() {
        check_unary(
            |g, x| {
                let s = g.softmax(x);
                g.log_clamped(s)
            },
            1,
            4,
            9,
        );
        let mut g = Graph::new();
        let x = g.constant(Mat::row_from(&[0.0, 1.0]));
        let l = g.log_clamped(x);
        assert!((g.value(l).get(0, 0) - LOG_FLOOR.ln()).abs() < 1e-12);
        assert_eq!(g.value(l).get(0, 1), 0.0);
    }

    #[test]
    fn concat_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let other = Mat::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        check_unary(
            move |g, x| {
                let o = g.constant(other.clone());
                let r = g.concat_rows(&[x, o]);
                let c = g.concat_cols(&[r, r]);
                g.tanh(c)
            },
            2,
            2,
            12,
        );
    }

    #[test]
    fn select_col_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let other = Mat::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0));
        check_unary(
            move |g, x| {
                let c = g.select_col(x, 1);
                let o = g.constant(other.clone());
                let p = g.matmul(c, o);
                g.tanh(p)
            },
            3,
            4,
            14,
        );
    }

    #[test]
    fn embed_scatters_gradients_to_rows() {
        let table = Mat::from_vec(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let mut g = Graph::new();
        let e = g.embed("emb", &table, &[2, 1, 2]);
        assert_eq!(g.value(e).shape(), (2, 3));
        assert_eq!(g.value(e).get(0, 0), 3.0);
        assert_eq!(g.value(e).get(1, 1), 2.0);
        let s = g.sum(e);
        let grads = g.backward(s);
        let ge = grads.get("emb").unwrap();
        // Row 2 used twice, row 1 once, row 0 never.
        assert_eq!(ge.row(0), &[0.0, 0.0]);
        assert_eq!(ge.row(1), &[1.0, 1.0]);
        assert_eq!(ge.row(2), &[2.0, 2.0]);
    }

    #[test]
    fn param_reused_twice_accumulates() {
        let x = Mat::from_vec(1, 1, vec![3.0]);
        let mut g = Graph::new();
        let p = g.param("p", &x);
        let y = g.mul(p, p); // y = p^2, dy/dp = 2p = 6
        let s = g.sum(y);
        let grads = g.backward(s);
        assert!((grads.get("p").unwrap().get(0, 0) - 6.0).abs() < 1e-12);
    }
}
