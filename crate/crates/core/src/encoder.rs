//! Input encoding: token embedding, bidirectional LSTM, and word-level
//! attention pooling. One encoder stack serves news sentences, comments,
//! and relevant articles alike.

use crate::corpus::PAD_INDEX;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mat::Mat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Gate parameters of one LSTM direction with input and hidden size d.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_i: Mat,
    pub w_f: Mat,
    pub w_o: Mat,
    pub w_g: Mat,
    pub u_i: Mat,
    pub u_f: Mat,
    pub u_o: Mat,
    pub u_g: Mat,
    pub b_i: Mat,
    pub b_f: Mat,
    pub b_o: Mat,
    pub b_g: Mat,
}

impl LstmParams {
    /// Uniform init in [-1/sqrt(d), 1/sqrt(d)]; forget-gate bias starts at 1.
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        let mut mat = |rows, cols| Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound));
        LstmParams {
            w_i: mat(d, d),
            w_f: mat(d, d),
            w_o: mat(d, d),
            w_g: mat(d, d),
            u_i: mat(d, d),
            u_f: mat(d, d),
            u_o: mat(d, d),
            u_g: mat(d, d),
            b_i: Mat::zeros(d, 1),
            b_f: Mat::filled(d, 1, 1.0),
            b_o: Mat::zeros(d, 1),
            b_g: Mat::zeros(d, 1),
        }
    }

    pub fn zeros(d: usize) -> Self {
        LstmParams {
            w_i: Mat::zeros(d, d),
            w_f: Mat::zeros(d, d),
            w_o: Mat::zeros(d, d),
            w_g: Mat::zeros(d, d),
            u_i: Mat::zeros(d, d),
            u_f: Mat::zeros(d, d),
            u_o: Mat::zeros(d, d),
            u_g: Mat::zeros(d, d),
            b_i: Mat::zeros(d, 1),
            b_f: Mat::zeros(d, 1),
            b_o: Mat::zeros(d, 1),
            b_g: Mat::zeros(d, 1),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_i.rows()
    }

    pub fn mats(&self) -> [(&'static str, &Mat); 12] {
        [
            ("w_i", &self.w_i),
            ("w_f", &self.w_f),
            ("w_o", &self.w_o),
            ("w_g", &self.w_g),
            ("u_i", &self.u_i),
            ("u_f", &self.u_f),
            ("u_o", &self.u_o),
            ("u_g", &self.u_g),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
            ("b_g", &self.b_g),
        ]
    }

    pub fn mats_mut(&mut self) -> [(&'static str, &mut Mat); 12] {
        [
            ("w_i", &mut self.w_i),
            ("w_f", &mut self.w_f),
            ("w_o", &mut self.w_o),
            ("w_g", &mut self.w_g),
            ("u_i", &mut self.u_i),
            ("u_f", &mut self.u_f),
            ("u_o", &mut self.u_o),
            ("u_g", &mut self.u_g),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_o", &mut self.b_o),
            ("b_g", &mut self.b_g),
        ]
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> LstmVars {
        LstmVars {
            d: self.hidden_size(),
            w_i: g.param(&format!("{}.w_i", prefix), &self.w_i),
            w_f: g.param(&format!("{}.w_f", prefix), &self.w_f),
            w_o: g.param(&format!("{}.w_o", prefix), &self.w_o),
            w_g: g.param(&format!("{}.w_g", prefix), &self.w_g),
            u_i: g.param(&format!("{}.u_i", prefix), &self.u_i),
            u_f: g.param(&format!("{}.u_f", prefix), &self.u_f),
            u_o: g.param(&format!("{}.u_o", prefix), &self.u_o),
            u_g: g.param(&format!("{}.u_g", prefix), &self.u_g),
            b_i: g.param(&format!("{}.b_i", prefix), &self.b_i),
            b_f: g.param(&format!("{}.b_f", prefix), &self.b_f),
            b_o: g.param(&format!("{}.b_o", prefix), &self.b_o),
            b_g: g.param(&format!("{}.b_g", prefix), &self.b_g),
        }
    }
}

/// Independent forward- and backward-direction parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct BiRecurrentParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiRecurrentParams {
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        BiRecurrentParams {
            fwd: LstmParams::init(d, rng),
            bwd: LstmParams::init(d, rng),
        }
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> BiLstmVars {
        BiLstmVars {
            fwd: self.fwd.bind(g, &format!("{}.fwd", prefix)),
            bwd: self.bwd.bind(g, &format!("{}.bwd", prefix)),
        }
    }
}

/// Word-attention parameters: projection W_w, bias b_w, context vector u_w.
#[derive(Clone, Debug, PartialEq)]
pub struct WordAttentionParams {
    pub w: Mat,
    pub b: Mat,
    pub u: Mat,
}

impl WordAttentionParams {
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let two_d = 2 * d;
        let bound = 1.0 / (two_d as f64).sqrt();
        WordAttentionParams {
            w: Mat::from_fn(two_d, two_d, |_, _| rng.gen_range(-bound..bound)),
            b: Mat::zeros(two_d, 1),
            u: Mat::from_fn(two_d, 1, |_, _| rng.gen_range(-bound..bound)),
        }
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> WordAttnVars {
        WordAttnVars {
            w: g.param(&format!("{}.w", prefix), &self.w),
            b: g.param(&format!("{}.b", prefix), &self.b),
            u: g.param(&format!("{}.u", prefix), &self.u),
        }
    }
}

#[derive(Clone, Copy)]
pub struct LstmVars {
    pub d: usize,
    pub w_i: Var,
    pub w_f: Var,
    pub w_o: Var,
    pub w_g: Var,
    pub u_i: Var,
    pub u_f: Var,
    pub u_o: Var,
    pub u_g: Var,
    pub b_i: Var,
    pub b_f: Var,
    pub b_o: Var,
    pub b_g: Var,
}

#[derive(Clone, Copy)]
pub struct BiLstmVars {
    pub fwd: LstmVars,
    pub bwd: LstmVars,
}

#[derive(Clone, Copy)]
pub struct WordAttnVars {
    pub w: Var,
    pub b: Var,
    pub u: Var,
}

/// One encoder stack bound onto a graph.
#[derive(Clone, Copy)]
pub struct EncoderVars {
    pub lstm: BiLstmVars,
    pub attn: WordAttnVars,
}

/// Contextual hidden vectors (2d x T) plus the non-PAD mask.
#[derive(Clone)]
pub struct EncodedText {
    pub hidden: Var,
    pub mask: Vec<bool>,
}

/// Looks up token embeddings as columns of a d x T matrix. The table's PAD
/// row stays zero, so PAD positions embed to zero columns.
pub fn embed_tokens(g: &mut Graph, name: &str, table: &Mat, ids: &[usize]) -> Result<Var> {
    for &id in ids {
        if id >= table.rows() {
            return Err(Error::Bounds {
                index: id,
                size: table.rows(),
            });
        }
    }
    Ok(g.embed(name, table, ids))
}

fn gate_pre(g: &mut Graph, w: Var, u: Var, b: Var, x: Var, h: Var) -> Var {
    let wx = g.matmul(w, x);
    let uh = g.matmul(u, h);
    let s = g.add(wx, uh);
    g.add(s, b)
}

fn lstm_step(g: &mut Graph, p: &LstmVars, x: Var, h: Var, c: Var) -> (Var, Var) {
    let pre_i = gate_pre(g, p.w_i, p.u_i, p.b_i, x, h);
    let pre_f = gate_pre(g, p.w_f, p.u_f, p.b_f, x, h);
    let pre_o = gate_pre(g, p.w_o, p.u_o, p.b_o, x, h);
    let pre_g = gate_pre(g, p.w_g, p.u_g, p.b_g, x, h);
    let i = g.sigmoid(pre_i);
    let f = g.sigmoid(pre_f);
    let o = g.sigmoid(pre_o);
    let cand = g.tanh(pre_g);
    let fc = g.mul(f, c);
    let ig = g.mul(i, cand);
    let c_new = g.add(fc, ig);
    let tc = g.tanh(c_new);
    let h_new = g.mul(o, tc);
    (h_new, c_new)
}

/// Runs the forward direction left-to-right and the backward direction
/// right-to-left over the non-PAD positions, concatenating the two hidden
/// states per position. PAD positions come out as zero columns.
pub fn bi_recurrent_encode(
    g: &mut Graph,
    lstm: &BiLstmVars,
    x: Var,
    mask: &[bool],
) -> Result<EncodedText> {
    let (d_in, t_len) = g.value(x).shape();
    let d = lstm.fwd.d;
    if t_len == 0 {
        return Err(Error::Shape("encoder input must have T >= 1".into()));
    }
    if mask.len() != t_len {
        return Err(Error::Shape(format!(
            "mask length {} does not match sequence length {}",
            mask.len(),
            t_len
        )));
    }
    if d_in != d {
        return Err(Error::Shape(format!(
            "embedding size {} does not match the recurrent input size {}",
            d_in, d
        )));
    }

    let active: Vec<usize> = (0..t_len).filter(|&t| mask[t]).collect();

    let mut fwd_states: Vec<Option<Var>> = vec![None; t_len];
    let mut h = g.zeros(d, 1);
    let mut c = g.zeros(d, 1);
    for &t in &active {
        let xt = g.select_col(x, t);
        let (h2, c2) = lstm_step(g, &lstm.fwd, xt, h, c);
        h = h2;
        c = c2;
        fwd_states[t] = Some(h);
    }

    let mut bwd_states: Vec<Option<Var>> = vec![None; t_len];
    let mut h = g.zeros(d, 1);
    let mut c = g.zeros(d, 1);
    for &t in active.iter().rev() {
        let xt = g.select_col(x, t);
        let (h2, c2) = lstm_step(g, &lstm.bwd, xt, h, c);
        h = h2;
        c = c2;
        bwd_states[t] = Some(h);
    }

    let mut cols = Vec::with_capacity(t_len);
    for t in 0..t_len {
        match (fwd_states[t], bwd_states[t]) {
            (Some(f), Some(b)) => cols.push(g.concat_rows(&[f, b])),
            _ => cols.push(g.zeros(2 * d, 1)),
        }
    }
    let hidden = g.concat_cols(&cols);
    Ok(EncodedText {
        hidden,
        mask: mask.to_vec(),
    })
}

/// Attention-pooled vector plus the attention weights over positions.
pub struct WordAttnOut {
    pub pooled: Var,
    pub alpha_var: Var,
    pub alphas: Vec<f64>,
}

/// u_t = tanh(W_w h_t + b_w); alpha = softmax over non-PAD t of u_t . u_w;
/// output = sum_t alpha_t h_t. PAD positions get alpha_t = 0.
pub fn word_attention(g: &mut Graph, wa: &WordAttnVars, enc: &EncodedText) -> Result<WordAttnOut> {
    if !enc.mask.iter().any(|&b| b) {
        return Err(Error::DegenerateInput(
            "word attention over a fully masked sequence".into(),
        ));
    }
    let two_d = g.value(enc.hidden).rows();
    if g.value(wa.w).shape() != (two_d, two_d) {
        return Err(Error::Shape(format!(
            "attention projection is {:?}, hidden size is {}",
            g.value(wa.w).shape(),
            two_d
        )));
    }
    let wh = g.matmul(wa.w, enc.hidden);
    let pre = g.add_col(wh, wa.b);
    let u = g.tanh(pre);
    let uw_t = g.transpose(wa.u);
    let logits = g.matmul(uw_t, u);
    let alpha_var = g.softmax_masked(logits, &enc.mask);
    let alpha_t = g.transpose(alpha_var);
    let pooled = g.matmul(enc.hidden, alpha_t);
    let alphas = g.vector(alpha_var);
    Ok(WordAttnOut {
        pooled,
        alpha_var,
        alphas,
    })
}

/// One encoded unit (sentence, comment, or relevant article).
pub struct UnitEncoding {
    pub text: EncodedText,
    pub pooled: Var,
    pub alphas: Vec<f64>,
}

/// Embeds and encodes one token sequence, pooling with word attention.
/// A fully-PAD unit encodes to zeros with zero attention weights.
pub fn encode_unit(
    g: &mut Graph,
    table: &Mat,
    table_name: &str,
    enc: &EncoderVars,
    ids: &[usize],
) -> Result<UnitEncoding> {
    let mask: Vec<bool> = ids.iter().map(|&t| t != PAD_INDEX).collect();
    let d = enc.lstm.fwd.d;
    if !mask.iter().any(|&b| b) {
        let t_len = ids.len().max(1);
        let hidden = g.zeros(2 * d, t_len);
        return Ok(UnitEncoding {
            text: EncodedText {
                hidden,
                mask: vec![false; t_len],
            },
            pooled: g.zeros(2 * d, 1),
            alphas: vec![0.0; t_len],
        });
    }
    let x = embed_tokens(g, table_name, table, ids)?;
    let text = bi_recurrent_encode(g, &enc.lstm, x, &mask)?;
    let attn = word_attention(g, &enc.attn, &text)?;
    Ok(UnitEncoding {
        text,
        pooled: attn.pooled,
        alphas: attn.alphas,
    })
}

/// Sentence-level article matrix A (2d x N), the word-level concatenation
/// (2d x N*n), and the per-sentence word-attention weights.
pub struct ArticleEncoding {
    pub a_sent: Var,
    pub a_word: Var,
    pub word_mask: Vec<bool>,
    pub alphas: Vec<Vec<f64>>,
}

pub fn encode_article(
    g: &mut Graph,
    table: &Mat,
    table_name: &str,
    enc: &EncoderVars,
    sentences: &[Vec<usize>],
) -> Result<ArticleEncoding> {
    if sentences.is_empty() {
        return Err(Error::DegenerateInput("article with no sentences".into()));
    }
    let mut sent_cols = Vec::with_capacity(sentences.len());
    let mut word_parts = Vec::with_capacity(sentences.len());
    let mut word_mask = Vec::new();
    let mut alphas = Vec::with_capacity(sentences.len());
    for ids in sentences {
        let unit = encode_unit(g, table, table_name, enc, ids)?;
        sent_cols.push(unit.pooled);
        word_mask.extend_from_slice(&unit.text.mask);
        word_parts.push(unit.text.hidden);
        alphas.push(unit.alphas);
    }
    Ok(ArticleEncoding {
        a_sent: g.concat_cols(&sent_cols),
        a_word: g.concat_cols(&word_parts),
        word_mask,
        alphas,
    })
}

/// Comment matrix C (2d x M) of attention-pooled comment vectors.
pub struct CommentsEncoding {
    pub c_mat: Var,
    pub alphas: Vec<Vec<f64>>,
}

pub fn encode_comments(
    g: &mut Graph,
    table: &Mat,
    table_name: &str,
    enc: &EncoderVars,
    comments: &[Vec<usize>],
) -> Result<CommentsEncoding> {
    if comments.is_empty() {
        return Err(Error::DegenerateInput("empty comment set".into()));
    }
    let mut cols = Vec::with_capacity(comments.len());
    let mut alphas = Vec::with_capacity(comments.len());
    for ids in comments {
        let unit = encode_unit(g, table, table_name, enc, ids)?;
        cols.push(unit.pooled);
        alphas.push(unit.alphas);
    }
    Ok(CommentsEncoding {
        c_mat: g.concat_cols(&cols),
        alphas,
    })
}

/// Word-level encodings of each relevant article, kept for pooling in the
/// divergence stage.
pub fn encode_relevant(
    g: &mut Graph,
    table: &Mat,
    table_name: &str,
    enc: &EncoderVars,
    relevant: &[Vec<usize>],
) -> Result<Vec<EncodedText>> {
    if relevant.is_empty() {
        return Err(Error::DegenerateInput("empty relevant-news set".into()));
    }
    let mut out = Vec::with_capacity(relevant.len());
    for ids in relevant {
        let mask: Vec<bool> = ids.iter().map(|&t| t != PAD_INDEX).collect();
        if !mask.iter().any(|&b| b) {
            let d = enc.lstm.fwd.d;
            let t_len = ids.len().max(1);
            out.push(EncodedText {
                hidden: g.zeros(2 * d, t_len),
                mask: vec![false; t_len],
            });
            continue;
        }
        let x = embed_tokens(g, table_name, table, ids)?;
        out.push(bi_recurrent_encode(g, &enc.lstm, x, &mask)?);
    }
    Ok(out)
}
