//! News-comment co-attention: affinity matrix, dual attention maps,
//! attention values over sentences and comments, and the attended summary
//! vectors.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mat::Mat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// W_l couples the two sequences; W_a/W_c project them into a shared
/// k-dimensional attention space scored by w_ha/w_hc.
#[derive(Clone, Debug, PartialEq)]
pub struct CoAttentionParams {
    pub w_l: Mat,
    pub w_a: Mat,
    pub w_c: Mat,
    pub w_ha: Mat,
    pub w_hc: Mat,
}

impl CoAttentionParams {
    pub fn init(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let two_d = 2 * d;
        let bound = 1.0 / (two_d as f64).sqrt();
        let mut mat = |rows, cols| Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound));
        CoAttentionParams {
            w_l: mat(two_d, two_d),
            w_a: mat(k, two_d),
            w_c: mat(k, two_d),
            w_ha: mat(k, 1),
            w_hc: mat(k, 1),
        }
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> CoAttnVars {
        CoAttnVars {
            w_l: g.param(&format!("{}.w_l", prefix), &self.w_l),
            w_a: g.param(&format!("{}.w_a", prefix), &self.w_a),
            w_c: g.param(&format!("{}.w_c", prefix), &self.w_c),
            w_ha: g.param(&format!("{}.w_ha", prefix), &self.w_ha),
            w_hc: g.param(&format!("{}.w_hc", prefix), &self.w_hc),
        }
    }
}

#[derive(Clone, Copy)]
pub struct CoAttnVars {
    pub w_l: Var,
    pub w_a: Var,
    pub w_c: Var,
    pub w_ha: Var,
    pub w_hc: Var,
}

/// F = tanh(C^T W_l A), the M x N comment-sentence affinity matrix.
pub fn affinity(g: &mut Graph, c: Var, a: Var, w_l: Var) -> Result<Var> {
    let two_d = g.value(a).rows();
    if g.value(c).rows() != two_d || g.value(w_l).shape() != (two_d, two_d) {
        return Err(Error::Shape(format!(
            "affinity shapes disagree: A {:?}, C {:?}, W_l {:?}",
            g.value(a).shape(),
            g.value(c).shape(),
            g.value(w_l).shape()
        )));
    }
    let ct = g.transpose(c);
    let ct_wl = g.matmul(ct, w_l);
    let raw = g.matmul(ct_wl, a);
    Ok(g.tanh(raw))
}

/// H_a = tanh(W_a A + (W_c C) F); H_c = tanh(W_c C + (W_a A) F^T).
pub fn attention_maps(
    g: &mut Graph,
    a: Var,
    c: Var,
    f: Var,
    w_a: Var,
    w_c: Var,
) -> Result<(Var, Var)> {
    let (m, n) = g.value(f).shape();
    if g.value(a).cols() != n || g.value(c).cols() != m {
        return Err(Error::Shape(format!(
            "attention maps shapes disagree: A {:?}, C {:?}, F {:?}",
            g.value(a).shape(),
            g.value(c).shape(),
            g.value(f).shape()
        )));
    }
    let wa_a = g.matmul(w_a, a);
    let wc_c = g.matmul(w_c, c);
    let coupled_a = g.matmul(wc_c, f);
    let pre_a = g.add(wa_a, coupled_a);
    let h_a = g.tanh(pre_a);
    let f_t = g.transpose(f);
    let coupled_c = g.matmul(wa_a, f_t);
    let pre_c = g.add(wc_c, coupled_c);
    let h_c = g.tanh(pre_c);
    Ok((h_a, h_c))
}

/// v_a = softmax(w_ha^T H_a); v_c = softmax(w_hc^T H_c).
pub fn attention_values(
    g: &mut Graph,
    h_a: Var,
    h_c: Var,
    w_ha: Var,
    w_hc: Var,
) -> Result<(Var, Var)> {
    if g.value(w_ha).rows() != g.value(h_a).rows() || g.value(w_hc).rows() != g.value(h_c).rows() {
        return Err(Error::Shape(
            "attention scoring vectors do not match the map size".into(),
        ));
    }
    let wa_t = g.transpose(w_ha);
    let logits_a = g.matmul(wa_t, h_a);
    let v_a = g.softmax(logits_a);
    let wc_t = g.transpose(w_hc);
    let logits_c = g.matmul(wc_t, h_c);
    let v_c = g.softmax(logits_c);
    Ok((v_a, v_c))
}

/// A_hat = sum_i v_a[i] a_i; C_hat = sum_j v_c[j] c_j.
pub fn attend(g: &mut Graph, a: Var, c: Var, v_a: Var, v_c: Var) -> Result<(Var, Var)> {
    if g.value(v_a).cols() != g.value(a).cols() || g.value(v_c).cols() != g.value(c).cols() {
        return Err(Error::Shape("attention weights do not match columns".into()));
    }
    let va_t = g.transpose(v_a);
    let a_hat = g.matmul(a, va_t);
    let vc_t = g.transpose(v_c);
    let c_hat = g.matmul(c, vc_t);
    Ok((a_hat, c_hat))
}

/// Full co-attention output, including the concatenated joint vector.
pub struct CoAttentionOutput {
    pub a_hat: Var,
    pub c_hat: Var,
    /// [A_hat; C_hat], a 4d x 1 vector.
    pub joint: Var,
    pub v_a_var: Var,
    pub v_c_var: Var,
    pub v_a: Vec<f64>,
    pub v_c: Vec<f64>,
    pub affinity: Mat,
}

/// Chains affinity -> attention maps -> attention values -> attend.
pub fn coattend(g: &mut Graph, params: &CoAttnVars, a: Var, c: Var) -> Result<CoAttentionOutput> {
    let f = affinity(g, c, a, params.w_l)?;
    let (h_a, h_c) = attention_maps(g, a, c, f, params.w_a, params.w_c)?;
    let (v_a_var, v_c_var) = attention_values(g, h_a, h_c, params.w_ha, params.w_hc)?;
    let (a_hat, c_hat) = attend(g, a, c, v_a_var, v_c_var)?;
    let joint = g.concat_rows(&[a_hat, c_hat]);
    Ok(CoAttentionOutput {
        a_hat,
        c_hat,
        joint,
        v_a_var,
        v_c_var,
        v_a: g.vector(v_a_var),
        v_c: g.vector(v_c_var),
        affinity: g.value(f).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_mat(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| r.gen_range(-0.9..0.9))
    }

    #[test]
    fn affinity_of_zero_comments_is_zero() {
        let mut g = Graph::new();
        let a = g.constant(Mat::filled(4, 3, 0.5));
        let c = g.zeros(4, 2);
        let w_l = g.constant(Mat::filled(4, 4, 0.3));
        let f = affinity(&mut g, c, a, w_l).unwrap();
        assert!(g.value(f).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn affinity_scalar_case_matches_tanh_of_one() {
        let mut g = Graph::new();
        let a = g.constant(Mat::col_from(&[1.0, 0.0]));
        let c = g.constant(Mat::col_from(&[1.0, 0.0]));
        let w_l = g.constant(Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let f = affinity(&mut g, c, a, w_l).unwrap();
        assert_eq!(g.value(f).shape(), (1, 1));
        assert!((g.value(f).get(0, 0) - 1.0f64.tanh()).abs() < 1e-12);
        assert!((g.value(f).get(0, 0) - 0.76159).abs() < 1e-5);
    }

    #[test]
    fn affinity_matches_triple_loop_oracle() {
        let mut r = rng(1);
        let (two_d, m, n) = (4, 3, 2);
        let a_m = rand_mat(two_d, n, &mut r);
        let c_m = rand_mat(two_d, m, &mut r);
        let w_m = rand_mat(two_d, two_d, &mut r);
        let mut g = Graph::new();
        let a = g.constant(a_m.clone());
        let c = g.constant(c_m.clone());
        let w = g.constant(w_m.clone());
        let f = affinity(&mut g, c, a, w).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..two_d {
                    for q in 0..two_d {
                        s += c_m.get(p, i) * w_m.get(p, q) * a_m.get(q, j);
                    }
                }
                assert!(
                    (g.value(f).get(i, j) - s.tanh()).abs() < 1e-12,
                    "entry ({},{})",
                    i,
                    j
                );
            }
        }
    }

    #[test]
    fn zero_affinity_decouples_attention_maps() {
        let mut r = rng(2);
        let (two_d, k, m, n) = (4, 3, 2, 3);
        let a_m = rand_mat(two_d, n, &mut r);
        let wa_m = rand_mat(k, two_d, &mut r);
        let wc_m = rand_mat(k, two_d, &mut r);
        let mut g = Graph::new();
        let a = g.constant(a_m.clone());
        let c = g.constant(rand_mat(two_d, m, &mut r));
        let f = g.zeros(m, n);
        let w_a = g.constant(wa_m.clone());
        let w_c = g.constant(wc_m);
        let (h_a, _) = attention_maps(&mut g, a, c, f, w_a, w_c).unwrap();
        let expect = wa_m.matmul(&a_m).map(f64::tanh);
        for i in 0..k {
            for j in 0..n {
                assert!((g.value(h_a).get(i, j) - expect.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_parameters_give_zero_maps() {
        let mut r = rng(3);
        let mut g = Graph::new();
        let a = g.constant(rand_mat(4, 3, &mut r));
        let c = g.constant(rand_mat(4, 2, &mut r));
        let f = g.constant(rand_mat(2, 3, &mut r));
        let w_a = g.zeros(3, 4);
        let w_c = g.zeros(3, 4);
        let (h_a, h_c) = attention_maps(&mut g, a, c, f, w_a, w_c).unwrap();
        assert!(g.value(h_a).data().iter().all(|&x| x == 0.0));
        assert!(g.value(h_c).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn attention_maps_match_formula_oracle() {
        let mut r = rng(4);
        let (two_d, k, m, n) = (4, 3, 3, 2);
        let a_m = rand_mat(two_d, n, &mut r);
        let c_m = rand_mat(two_d, m, &mut r);
        let f_m = rand_mat(m, n, &mut r);
        let wa_m = rand_mat(k, two_d, &mut r);
        let wc_m = rand_mat(k, two_d, &mut r);

        let mut g = Graph::new();
        let a = g.constant(a_m.clone());
        let c = g.constant(c_m.clone());
        let f = g.constant(f_m.clone());
        let w_a = g.constant(wa_m.clone());
        let w_c = g.constant(wc_m.clone());
        let (h_a, h_c) = attention_maps(&mut g, a, c, f, w_a, w_c).unwrap();

        let mut ha_exp = wa_m.matmul(&a_m);
        ha_exp.add_assign(&wc_m.matmul(&c_m).matmul(&f_m));
        let ha_exp = ha_exp.map(f64::tanh);
        let mut hc_exp = wc_m.matmul(&c_m);
        hc_exp.add_assign(&wa_m.matmul(&a_m).matmul(&f_m.transpose()));
        let hc_exp = hc_exp.map(f64::tanh);
        for i in 0..k {
            for j in 0..n {
                assert!((g.value(h_a).get(i, j) - ha_exp.get(i, j)).abs() < 1e-12);
            }
            for j in 0..m {
                assert!((g.value(h_c).get(i, j) - hc_exp.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_columns_give_uniform_attention() {
        let k = 3;
        let n = 4;
        let col: Vec<f64> = vec![0.3, -0.2, 0.7];
        let mut g = Graph::new();
        let h_a = g.constant(Mat::from_fn(k, n, |i, _| col[i]));
        let h_c = g.constant(Mat::from_fn(k, 2, |i, _| col[i]));
        let mut r = rng(5);
        let w_ha = g.constant(rand_mat(k, 1, &mut r));
        let w_hc = g.constant(rand_mat(k, 1, &mut r));
        let (v_a, _) = attention_values(&mut g, h_a, h_c, w_ha, w_hc).unwrap();
        for &v in &g.vector(v_a) {
            assert!((v - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_attention_is_one() {
        let mut r = rng(6);
        let mut g = Graph::new();
        let h_a = g.constant(rand_mat(3, 1, &mut r));
        let h_c = g.constant(rand_mat(3, 2, &mut r));
        let w_ha = g.constant(rand_mat(3, 1, &mut r));
        let w_hc = g.constant(rand_mat(3, 1, &mut r));
        let (v_a, _) = attention_values(&mut g, h_a, h_c, w_ha, w_hc).unwrap();
        assert_eq!(g.vector(v_a), vec![1.0]);
    }

    #[test]
    fn attention_values_match_softmax_oracle() {
        let mut r = rng(7);
        let (k, n, m) = (3, 4, 2);
        let ha_m = rand_mat(k, n, &mut r);
        let hc_m = rand_mat(k, m, &mut r);
        let wha_m = rand_mat(k, 1, &mut r);
        let whc_m = rand_mat(k, 1, &mut r);
        let mut g = Graph::new();
        let h_a = g.constant(ha_m.clone());
        let h_c = g.constant(hc_m);
        let w_ha = g.constant(wha_m.clone());
        let w_hc = g.constant(whc_m);
        let (v_a, _) = attention_values(&mut g, h_a, h_c, w_ha, w_hc).unwrap();

        let logits: Vec<f64> = (0..n)
            .map(|j| (0..k).map(|i| wha_m.get(i, 0) * ha_m.get(i, j)).sum())
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        let got = g.vector(v_a);
        for j in 0..n {
            assert!((got[j] - exps[j] / z).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_attention_selects_a_column() {
        let mut r = rng(8);
        let a_m = rand_mat(4, 3, &mut r);
        let mut g = Graph::new();
        let a = g.constant(a_m.clone());
        let c = g.constant(rand_mat(4, 2, &mut r));
        let v_a = g.constant(Mat::row_from(&[0.0, 1.0, 0.0]));
        let v_c = g.constant(Mat::row_from(&[0.5, 0.5]));
        let (a_hat, _) = attend(&mut g, a, c, v_a, v_c).unwrap();
        for q in 0..4 {
            assert_eq!(g.value(a_hat).get(q, 0), a_m.get(q, 1));
        }
    }

    #[test]
    fn uniform_attention_is_column_mean() {
        let mut r = rng(9);
        let a_m = rand_mat(4, 3, &mut r);
        let mut g = Graph::new();
        let a = g.constant(a_m.clone());
        let c = g.constant(rand_mat(4, 2, &mut r));
        let third = 1.0 / 3.0;
        let v_a = g.constant(Mat::row_from(&[third, third, third]));
        let v_c = g.constant(Mat::row_from(&[0.5, 0.5]));
        let (a_hat, _) = attend(&mut g, a, c, v_a, v_c).unwrap();
        for q in 0..4 {
            let mean = (a_m.get(q, 0) + a_m.get(q, 1) + a_m.get(q, 2)) / 3.0;
            assert!((g.value(a_hat).get(q, 0) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn attend_matches_summation_oracle() {
        let mut r = rng(10);
        let a_m = rand_mat(4, 3, &mut r);
        let c_m = rand_mat(4, 2, &mut r);
        let va = [0.2, 0.5, 0.3];
        let vc = [0.6, 0.4];
        let mut g = Graph::new();
        let a = g.constant(a_m.clone());
        let c = g.constant(c_m.clone());
        let v_a = g.constant(Mat::row_from(&va));
        let v_c = g.constant(Mat::row_from(&vc));
        let (a_hat, c_hat) = attend(&mut g, a, c, v_a, v_c).unwrap();
        for q in 0..4 {
            let ea: f64 = (0..3).map(|i| va[i] * a_m.get(q, i)).sum();
            let ec: f64 = (0..2).map(|j| vc[j] * c_m.get(q, j)).sum();
            assert!((g.value(a_hat).get(q, 0) - ea).abs() < 1e-12);
            assert!((g.value(c_hat).get(q, 0) - ec).abs() < 1e-12);
        }
    }

    #[test]
    fn coattend_degenerate_single_columns() {
        let mut r = rng(11);
        let params = CoAttentionParams::init(2, 3, &mut r);
        let a_m = rand_mat(4, 1, &mut r);
        let c_m = rand_mat(4, 1, &mut r);
        let mut g = Graph::new();
        let bound = params.bind(&mut g, "co");
        let a = g.constant(a_m.clone());
        let c = g.constant(c_m.clone());
        let out = coattend(&mut g, &bound, a, c).unwrap();
        assert_eq!(out.v_a, vec![1.0]);
        assert_eq!(out.v_c, vec![1.0]);
        for q in 0..4 {
            assert_eq!(g.value(out.a_hat).get(q, 0), a_m.get(q, 0));
            assert_eq!(g.value(out.c_hat).get(q, 0), c_m.get(q, 0));
        }
        assert_eq!(g.value(out.joint).shape(), (8, 1));
    }

    #[test]
    fn coattend_equals_chained_sub_operations() {
        let mut r = rng(12);
        let params = CoAttentionParams::init(2, 3, &mut r);
        let a_m = rand_mat(4, 3, &mut r);
        let c_m = rand_mat(4, 2, &mut r);

        let mut g = Graph::new();
        let bound = params.bind(&mut g, "co");
        let a = g.constant(a_m.clone());
        let c = g.constant(c_m.clone());
        let out = coattend(&mut g, &bound, a, c).unwrap();

        let f = affinity(&mut g, c, a, bound.w_l).unwrap();
        let (h_a, h_c) = attention_maps(&mut g, a, c, f, bound.w_a, bound.w_c).unwrap();
        let (v_a, v_c) = attention_values(&mut g, h_a, h_c, bound.w_ha, bound.w_hc).unwrap();
        let (a_hat, c_hat) = attend(&mut g, a, c, v_a, v_c).unwrap();

        assert_eq!(out.v_a, g.vector(v_a));
        assert_eq!(out.v_c, g.vector(v_c));
        assert_eq!(g.value(out.a_hat), g.value(a_hat));
        assert_eq!(g.value(out.c_hat), g.value(c_hat));
    }

    #[test]
    fn role_transposition_swaps_outputs() {
        let mut r = rng(13);
        let params = CoAttentionParams::init(2, 3, &mut r);
        let a_m = rand_mat(4, 3, &mut r);
        let c_m = rand_mat(4, 2, &mut r);

        let mut g = Graph::new();
        let bound = params.bind(&mut g, "co");
        let a = g.constant(a_m.clone());
        let c = g.constant(c_m.clone());
        let out = coattend(&mut g, &bound, a, c).unwrap();

        let swapped = CoAttentionParams {
            w_l: params.w_l.transpose(),
            w_a: params.w_c.clone(),
            w_c: params.w_a.clone(),
            w_ha: params.w_hc.clone(),
            w_hc: params.w_ha.clone(),
        };
        let mut g2 = Graph::new();
        let bound2 = swapped.bind(&mut g2, "co");
        let a2 = g2.constant(c_m);
        let c2 = g2.constant(a_m);
        let out2 = coattend(&mut g2, &bound2, a2, c2).unwrap();

        for (x, y) in out.v_a.iter().zip(out2.v_c.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in out.v_c.iter().zip(out2.v_a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        for q in 0..4 {
            assert!(
                (g.value(out.a_hat).get(q, 0) - g2.value(out2.c_hat).get(q, 0)).abs() < 1e-12
            );
            assert!(
                (g.value(out.c_hat).get(q, 0) - g2.value(out2.a_hat).get(q, 0)).abs() < 1e-12
            );
        }
    }

    #[test]
    fn permuting_comments_permutes_weights_and_keeps_c_hat() {
        let mut r = rng(14);
        let params = CoAttentionParams::init(2, 3, &mut r);
        let a_m = rand_mat(4, 3, &mut r);
        let c_m = rand_mat(4, 3, &mut r);
        let perm = [2usize, 0, 1];
        let c_perm = Mat::from_fn(4, 3, |i, j| c_m.get(i, perm[j]));

        let mut g = Graph::new();
        let bound = params.bind(&mut g, "co");
        let a = g.constant(a_m.clone());
        let c = g.constant(c_m);
        let out = coattend(&mut g, &bound, a, c).unwrap();

        let mut g2 = Graph::new();
        let bound2 = params.bind(&mut g2, "co");
        let a2 = g2.constant(a_m);
        let c2 = g2.constant(c_perm);
        let out2 = coattend(&mut g2, &bound2, a2, c2).unwrap();

        for j in 0..3 {
            assert!((out2.v_c[j] - out.v_c[perm[j]]).abs() < 1e-12);
        }
        for q in 0..4 {
            assert!(
                (g.value(out.c_hat).get(q, 0) - g2.value(out2.c_hat).get(q, 0)).abs() < 1e-12
            );
        }
    }

    #[test]
    fn weights_are_probability_vectors() {
        for seed in 0..20u64 {
            let mut r = rng(1000 + seed);
            let params = CoAttentionParams::init(3, 4, &mut r);
            let n = 1 + (seed as usize % 4);
            let m = 1 + ((seed as usize * 7) % 5);
            let a_m = rand_mat(6, n, &mut r);
            let c_m = rand_mat(6, m, &mut r);
            let mut g = Graph::new();
            let bound = params.bind(&mut g, "co");
            let a = g.constant(a_m);
            let c = g.constant(c_m);
            let out = coattend(&mut g, &bound, a, c).unwrap();
            let sum_a: f64 = out.v_a.iter().sum();
            let sum_c: f64 = out.v_c.iter().sum();
            assert!((sum_a - 1.0).abs() < 1e-6);
            assert!((sum_c - 1.0).abs() < 1e-6);
            assert!(out.v_a.iter().all(|&v| v >= 0.0));
            assert!(out.v_c.iter().all(|&v| v >= 0.0));
            assert!(out.affinity.data().iter().all(|&x| (-1.0..=1.0).contains(&x)));
        }
    }
}
