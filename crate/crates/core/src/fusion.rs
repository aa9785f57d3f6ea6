//! Evidence fusion: KL inconsistency loss between the two evidence
//! representations, the softmax classifier, and the joint loss.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mat::Mat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Classifier weights over [joint; A'] plus the projection taking A' into
/// the joint comparison space for the KL term.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub w_p: Mat,
    pub b_p: Mat,
    pub proj: Mat,
}

impl FusionParams {
    pub fn init(d: usize, k_top: usize, rng: &mut ChaCha8Rng) -> Self {
        let joint = 4 * d;
        let evidence = 2 * d * k_top;
        let wb = 1.0 / ((joint + evidence) as f64).sqrt();
        let pb = 1.0 / (evidence as f64).sqrt();
        FusionParams {
            w_p: Mat::from_fn(2, joint + evidence, |_, _| rng.gen_range(-wb..wb)),
            b_p: Mat::zeros(2, 1),
            proj: Mat::from_fn(joint, evidence, |_, _| rng.gen_range(-pb..pb)),
        }
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> FusionVars {
        FusionVars {
            w_p: g.param(&format!("{}.w_p", prefix), &self.w_p),
            b_p: g.param(&format!("{}.b_p", prefix), &self.b_p),
            proj: g.param(&format!("{}.proj", prefix), &self.proj),
        }
    }
}

#[derive(Clone, Copy)]
pub struct FusionVars {
    pub w_p: Var,
    pub b_p: Var,
    pub proj: Var,
}

/// The two softmax-normalized sides of the KL term plus its value.
pub struct KlOut {
    pub kl: Var,
    pub p_side: Var,
    pub q_side: Var,
}

/// KL divergence between two softmax-normalized logit vectors:
/// sum_q p[q] ln(p[q] / q[q]), with p the first argument.
pub fn kl_divergence(g: &mut Graph, p_logits: Var, q_logits: Var) -> Result<KlOut> {
    if g.value(p_logits).shape() != g.value(q_logits).shape() {
        return Err(Error::Shape(format!(
            "KL sides disagree: {:?} vs {:?}",
            g.value(p_logits).shape(),
            g.value(q_logits).shape()
        )));
    }
    let p = g.softmax(p_logits);
    let q = g.softmax(q_logits);
    let log_p = g.log_clamped(p);
    let log_q = g.log_clamped(q);
    let diff = g.sub(log_p, log_q);
    let terms = g.mul(p, diff);
    let kl = g.sum(terms);
    Ok(KlOut {
        kl,
        p_side: p,
        q_side: q,
    })
}

/// Inconsistency loss: D_KL(softmax(P a') || softmax(joint)).
pub fn inconsistency_loss(g: &mut Graph, proj: Var, a_prime: Var, joint: Var) -> Result<KlOut> {
    let (q_rows, q_cols) = g.value(proj).shape();
    if g.value(a_prime).shape() != (q_cols, 1) {
        return Err(Error::Shape(format!(
            "evidence vector is {:?}, projection expects {}x1",
            g.value(a_prime).shape(),
            q_cols
        )));
    }
    if g.value(joint).shape() != (q_rows, 1) {
        return Err(Error::Shape(format!(
            "joint vector is {:?}, projection produces {}x1",
            g.value(joint).shape(),
            q_rows
        )));
    }
    let p_logits = g.matmul(proj, a_prime);
    kl_divergence(g, p_logits, joint)
}

/// p = softmax(W_p [joint; a'] + b_p), a two-point distribution.
pub fn classify(g: &mut Graph, w_p: Var, b_p: Var, joint: Var, a_prime: Var) -> Result<Var> {
    let input = g.concat_rows(&[joint, a_prime]);
    let (rows, cols) = g.value(w_p).shape();
    if rows != 2 || cols != g.value(input).rows() {
        return Err(Error::Shape(format!(
            "classifier is {}x{}, input has {} rows",
            rows,
            cols,
            g.value(input).rows()
        )));
    }
    let z = g.matmul(w_p, input);
    let logits = g.add(z, b_p);
    Ok(g.softmax(logits))
}

/// Cross entropy -ln p[y] for a binary label.
pub fn cross_entropy(g: &mut Graph, p: Var, label: u8) -> Result<Var> {
    if label > 1 {
        return Err(Error::Validation(format!(
            "label must be 0 or 1, got {}",
            label
        )));
    }
    if g.value(p).shape() != (2, 1) {
        return Err(Error::Shape(format!(
            "class distribution must be 2x1, got {:?}",
            g.value(p).shape()
        )));
    }
    let onehot = g.constant(Mat::row_from(&[
        if label == 0 { 1.0 } else { 0.0 },
        if label == 1 { 1.0 } else { 0.0 },
    ]));
    let log_p = g.log_clamped(p);
    let picked = g.matmul(onehot, log_p);
    Ok(g.scale(picked, -1.0))
}

/// total = beta * kl + ce.
pub fn joint_loss(g: &mut Graph, kl: Var, ce: Var, beta: f64) -> Var {
    let weighted = g.scale(kl, beta);
    g.add(weighted, ce)
}

/// Scalar loss components of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub kl: f64,
    pub ce: f64,
    pub beta: f64,
    pub total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn logits_for(dist: &[f64]) -> Mat {
        Mat::col_from(&dist.iter().map(|&p| p.ln()).collect::<Vec<_>>())
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mut g = Graph::new();
        let p = g.constant(logits_for(&[0.3, 0.7]));
        let q = g.constant(logits_for(&[0.3, 0.7]));
        let out = kl_divergence(&mut g, p, q).unwrap();
        assert!(g.scalar(out.kl).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_hand_value() {
        // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = 0.51083 nats.
        let mut g = Graph::new();
        let p = g.constant(logits_for(&[0.5, 0.5]));
        let q = g.constant(logits_for(&[0.9, 0.1]));
        let out = kl_divergence(&mut g, p, q).unwrap();
        assert!((g.scalar(out.kl) - 0.51083).abs() < 1e-5);
    }

    #[test]
    fn kl_matches_summation_oracle() {
        let mut r = rng(1);
        for _ in 0..50 {
            let q_dim = 8;
            let pl = Mat::from_fn(q_dim, 1, |_, _| r.gen_range(-2.0..2.0));
            let ql = Mat::from_fn(q_dim, 1, |_, _| r.gen_range(-2.0..2.0));
            let mut g = Graph::new();
            let p = g.constant(pl.clone());
            let q = g.constant(ql.clone());
            let out = kl_divergence(&mut g, p, q).unwrap();

            let softmax = |m: &Mat| {
                let mx = m.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = m.data().iter().map(|&x| (x - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|x| x / z).collect::<Vec<_>>()
            };
            let ps = softmax(&pl);
            let qs = softmax(&ql);
            let expect: f64 = ps
                .iter()
                .zip(qs.iter())
                .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
                .sum();
            assert!((g.scalar(out.kl) - expect).abs() < 1e-10);
            assert!(g.scalar(out.kl) >= -1e-12, "KL must be non-negative");
        }
    }

    #[test]
    fn inconsistency_loss_flows_through_projection() {
        let mut r = rng(2);
        let (d, k_top) = (2, 2);
        let params = FusionParams::init(d, k_top, &mut r);
        let mut g = Graph::new();
        let bound = params.bind(&mut g, "fus");
        let a_prime = g.constant(Mat::from_fn(2 * d * k_top, 1, |_, _| r.gen_range(-1.0..1.0)));
        let joint = g.constant(Mat::from_fn(4 * d, 1, |_, _| r.gen_range(-1.0..1.0)));
        let out = inconsistency_loss(&mut g, bound.proj, a_prime, joint).unwrap();
        assert!(g.scalar(out.kl) >= 0.0);
        let p_sum: f64 = g.vector(out.p_side).iter().sum();
        assert!((p_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let mut g = Graph::new();
        let w_p = g.zeros(2, 6);
        let b_p = g.zeros(2, 1);
        let joint = g.constant(Mat::col_from(&[0.4, -0.1]));
        let a_prime = g.constant(Mat::col_from(&[0.7, 0.2, -0.6, 0.1]));
        let p = classify(&mut g, w_p, b_p, joint, a_prime).unwrap();
        let v = g.vector(p);
        assert!((v[0] - 0.5).abs() < 1e-12);
        assert!((v[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn biased_classifier_saturates() {
        let mut g = Graph::new();
        let w_p = g.zeros(2, 4);
        let b_p = g.constant(Mat::col_from(&[10.0, -10.0]));
        let joint = g.constant(Mat::col_from(&[0.4, -0.1]));
        let a_prime = g.constant(Mat::col_from(&[0.7, 0.2]));
        let p = classify(&mut g, w_p, b_p, joint, a_prime).unwrap();
        let v = g.vector(p);
        assert!((v[0] - 1.0).abs() < 1e-8);
        assert!(v[1] < 1e-8);
    }

    #[test]
    fn classifier_matches_formula_oracle() {
        let mut r = rng(3);
        let joint_m = Mat::from_fn(4, 1, |_, _| r.gen_range(-1.0..1.0));
        let ap_m = Mat::from_fn(4, 1, |_, _| r.gen_range(-1.0..1.0));
        let w_m = Mat::from_fn(2, 8, |_, _| r.gen_range(-0.5..0.5));
        let b_m = Mat::from_fn(2, 1, |_, _| r.gen_range(-0.5..0.5));

        let mut g = Graph::new();
        let w_p = g.constant(w_m.clone());
        let b_p = g.constant(b_m.clone());
        let joint = g.constant(joint_m.clone());
        let a_prime = g.constant(ap_m.clone());
        let p = classify(&mut g, w_p, b_p, joint, a_prime).unwrap();

        let mut input: Vec<f64> = Vec::new();
        input.extend_from_slice(joint_m.data());
        input.extend_from_slice(ap_m.data());
        let z: Vec<f64> = (0..2)
            .map(|i| {
                b_m.get(i, 0)
                    + input
                        .iter()
                        .enumerate()
                        .map(|(j, &x)| w_m.get(i, j) * x)
                        .sum::<f64>()
            })
            .collect();
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|&x| (x - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        let got = g.vector(p);
        assert!((got[0] - e[0] / s).abs() < 1e-12);
        assert!((got[1] - e[1] / s).abs() < 1e-12);
        assert!((got[0] + got[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_of_perfect_prediction_is_zero() {
        let mut g = Graph::new();
        let p = g.constant(Mat::col_from(&[1.0, 0.0]));
        let ce = cross_entropy(&mut g, p, 0).unwrap();
        assert!(g.scalar(ce).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_of_uniform_is_ln_two() {
        let mut g = Graph::new();
        let p = g.constant(Mat::col_from(&[0.5, 0.5]));
        for label in [0u8, 1u8] {
            let ce = cross_entropy(&mut g, p, label).unwrap();
            assert!((g.scalar(ce) - 2.0f64.ln()).abs() < 1e-12);
            assert!((g.scalar(ce) - 0.69315).abs() < 1e-5);
        }
    }

    #[test]
    fn cross_entropy_penalizes_wrong_confidence() {
        let mut g = Graph::new();
        let p = g.constant(Mat::col_from(&[0.9, 0.1]));
        let ce = cross_entropy(&mut g, p, 1).unwrap();
        assert!((g.scalar(ce) - 2.30259).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_never_infinite() {
        let mut g = Graph::new();
        let p = g.constant(Mat::col_from(&[1.0, 0.0]));
        let ce = cross_entropy(&mut g, p, 1).unwrap();
        assert!(g.scalar(ce).is_finite());
    }

    #[test]
    fn joint_loss_is_linear_in_beta() {
        let mut g = Graph::new();
        let kl = g.constant(Mat::from_vec(1, 1, vec![0.5]));
        let ce = g.constant(Mat::from_vec(1, 1, vec![0.7]));
        let t0 = joint_loss(&mut g, kl, ce, 0.0);
        assert!((g.scalar(t0) - 0.7).abs() < 1e-12);
        let t1 = joint_loss(&mut g, kl, ce, 1.0);
        assert!((g.scalar(t1) - 1.2).abs() < 1e-12);
        let kl2 = g.constant(Mat::from_vec(1, 1, vec![0.4]));
        let ce2 = g.constant(Mat::from_vec(1, 1, vec![0.1]));
        let t2 = joint_loss(&mut g, kl2, ce2, 0.5);
        assert!((g.scalar(t2) - 0.3).abs() < 1e-12);
    }
}
