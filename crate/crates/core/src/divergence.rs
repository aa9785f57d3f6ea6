//! Divergence selection: score similarity between the original article and
//! each relevant article, then keep the top-K most divergent as concrete
//! evidence.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mat::Mat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Activation applied to the similarity projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(&self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(v),
            Activation::Sigmoid => g.sigmoid(v),
            Activation::Identity => v,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Validation(format!("unknown activation \"{}\"", other))),
        }
    }
}

/// Affine projections scoring the article (W, b) and each relevant article
/// (W_r, b_r) into a shared h-dimensional space.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceParams {
    pub w: Mat,
    pub b: Mat,
    pub w_r: Mat,
    pub b_r: Mat,
}

impl DivergenceParams {
    pub fn init(d: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        let two_d = 2 * d;
        let bound = 1.0 / (two_d as f64).sqrt();
        DivergenceParams {
            w: Mat::from_fn(h, two_d, |_, _| rng.gen_range(-bound..bound)),
            b: Mat::zeros(h, 1),
            w_r: Mat::from_fn(h, two_d, |_, _| rng.gen_range(-bound..bound)),
            b_r: Mat::zeros(h, 1),
        }
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> DivergenceVars {
        DivergenceVars {
            w: g.param(&format!("{}.w", prefix), &self.w),
            b: g.param(&format!("{}.b", prefix), &self.b),
            w_r: g.param(&format!("{}.w_r", prefix), &self.w_r),
            b_r: g.param(&format!("{}.b_r", prefix), &self.b_r),
        }
    }
}

#[derive(Clone, Copy)]
pub struct DivergenceVars {
    pub w: Var,
    pub b: Var,
    pub w_r: Var,
    pub b_r: Var,
}

/// Softmax similarity weights over the relevant pool; smaller means more
/// divergent from the original article.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityVector {
    pub values: Vec<f64>,
}

/// Indices of the K most divergent articles (ascending divergence rank)
/// plus their concatenated pooled vectors, zero-padded to length 2dK.
pub struct SelectedEvidence {
    pub indices: Vec<usize>,
    pub a_prime: Var,
}

/// Arithmetic mean over unmasked columns.
pub fn pool(g: &mut Graph, hidden: Var, mask: &[bool]) -> Result<Var> {
    let t_len = g.value(hidden).cols();
    if mask.len() != t_len {
        return Err(Error::Shape(format!(
            "pool mask length {} does not match {} columns",
            mask.len(),
            t_len
        )));
    }
    let count = mask.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(Error::DegenerateInput(
            "pooling over a fully masked sequence".into(),
        ));
    }
    let w = Mat::from_fn(t_len, 1, |t, _| {
        if mask[t] {
            1.0 / count as f64
        } else {
            0.0
        }
    });
    let wv = g.constant(w);
    Ok(g.matmul(hidden, wv))
}

/// Like [`pool`], but a fully masked sequence pools to the zero vector
/// (the degenerate all-PAD unit must flow through the pipeline).
pub fn pool_or_zero(g: &mut Graph, hidden: Var, mask: &[bool]) -> Var {
    if mask.iter().any(|&b| b) {
        pool(g, hidden, mask).expect("mask checked non-empty")
    } else {
        let rows = g.value(hidden).rows();
        g.zeros(rows, 1)
    }
}

/// u = phi(W a + b); u_r = phi(W_r a'_r + b_r); S = softmax over r of u . u_r.
pub fn similarity_scores(
    g: &mut Graph,
    params: &DivergenceVars,
    phi: Activation,
    a_pooled: Var,
    relevant_pooled: &[Var],
) -> Result<(Var, SimilarityVector)> {
    if relevant_pooled.is_empty() {
        return Err(Error::DegenerateInput("no relevant articles to score".into()));
    }
    let two_d = g.value(a_pooled).rows();
    if g.value(params.w).cols() != two_d {
        return Err(Error::Shape(format!(
            "similarity projection expects {} inputs, got {}",
            g.value(params.w).cols(),
            two_d
        )));
    }
    let wa = g.matmul(params.w, a_pooled);
    let pre_u = g.add(wa, params.b);
    let u = phi.apply(g, pre_u);
    let u_t = g.transpose(u);

    let mut logits = Vec::with_capacity(relevant_pooled.len());
    for &r_pooled in relevant_pooled {
        if g.value(r_pooled).rows() != two_d {
            return Err(Error::Shape("relevant vector size mismatch".into()));
        }
        let wr = g.matmul(params.w_r, r_pooled);
        let pre_ur = g.add(wr, params.b_r);
        let u_r = phi.apply(g, pre_ur);
        logits.push(g.matmul(u_t, u_r));
    }
    let logits_row = g.concat_cols(&logits);
    let s_var = g.softmax(logits_row);
    let values = g.vector(s_var);
    Ok((s_var, SimilarityVector { values }))
}

/// Returns the K indices with the smallest similarity (ties broken by lower
/// index). If fewer than K articles exist, all of them are selected.
pub fn select_top_k_divergent(s: &SimilarityVector, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Validation("top-K selection requires K >= 1".into()));
    }
    let mut order: Vec<usize> = (0..s.values.len()).collect();
    order.sort_by(|&a, &b| {
        s.values[a]
            .partial_cmp(&s.values[b])
            .expect("similarity values are finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// Concatenates the selected pooled vectors in ascending-divergence order,
/// zero-padding to length 2dK when fewer than K were available.
pub fn gather_evidence(
    g: &mut Graph,
    relevant_pooled: &[Var],
    indices: &[usize],
    k: usize,
    two_d: usize,
) -> SelectedEvidence {
    let mut parts: Vec<Var> = indices.iter().map(|&i| relevant_pooled[i]).collect();
    if indices.len() < k {
        parts.push(g.zeros((k - indices.len()) * two_d, 1));
    }
    let a_prime = g.concat_rows(&parts);
    SelectedEvidence {
        indices: indices.to_vec(),
        a_prime,
    }
}
