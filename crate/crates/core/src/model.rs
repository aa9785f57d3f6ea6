//! Model assembly: all learnable parameter groups, seeded initialization,
//! and the per-example forward pass for every ablation variant.

use crate::coattention::{self, CoAttentionParams};
use crate::corpus::{mix_seed, IndexedExample, LabeledExample, Limits, Vocabulary};
use crate::divergence::{self, Activation, DivergenceParams};
use crate::encoder::{self, BiRecurrentParams, EncoderVars, WordAttentionParams};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionParams, LossBreakdown};
use crate::graph::{Grads, Graph, Var};
use crate::mat::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const EMBEDDING_GROUP: &str = "embedding";

/// Which component is stripped away, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationVariant {
    /// The complete model.
    Full,
    /// No relevant-news branch; the classifier sees the co-attended pair
    /// only and the KL term is zero.
    NoR,
    /// No comments; the classifier sees the pooled article plus selected
    /// evidence, and the KL term compares against the duplicated pooled
    /// article.
    NoC,
    /// Co-attention replaced by uniform attention (column means).
    NoCa,
    /// Inconsistency loss disabled (beta forced to 0).
    NoIl,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::NoR,
        AblationVariant::NoC,
        AblationVariant::NoCa,
        AblationVariant::NoIl,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoR => "no_r",
            AblationVariant::NoC => "no_c",
            AblationVariant::NoCa => "no_ca",
            AblationVariant::NoIl => "no_il",
        }
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationVariant::Full),
            "no_r" => Ok(AblationVariant::NoR),
            "no_c" => Ok(AblationVariant::NoC),
            "no_ca" => Ok(AblationVariant::NoCa),
            "no_il" => Ok(AblationVariant::NoIl),
            other => Err(Error::Validation(format!(
                "unknown variant \"{}\" (expected full|no_r|no_c|no_ca|no_il)",
                other
            ))),
        }
    }
}

/// Model dimensions and fixed hyperparameters stored with a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding size; each LSTM direction also uses d, so hidden vectors
    /// have size 2d.
    pub d: usize,
    /// Co-attention map size k.
    pub attn_k: usize,
    /// Similarity projection size h.
    pub sim_h: usize,
    /// Number of divergent relevant articles kept as evidence.
    pub top_k: usize,
    /// Weight of the KL consistency term in the joint loss.
    pub beta: f64,
    /// Activation of the similarity projections.
    pub phi: Activation,
    pub limits: Limits,
    /// One encoder stack shared across the three text channels, or one per
    /// channel.
    pub shared_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 32,
            attn_k: 32,
            sim_h: 32,
            top_k: 5,
            beta: 1.0,
            phi: Activation::Tanh,
            limits: Limits::default(),
            shared_encoder: true,
        }
    }
}

const CHANNEL_PREFIXES: [&str; 3] = ["lstm_news", "lstm_comments", "lstm_relevant"];
const SHARED_PREFIX: &str = "lstm";

/// All learnable parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// V x d word vectors; row 0 is the PAD row, fixed at zero and never
    /// receiving gradient (PAD positions are skipped by the encoder).
    pub embedding: Mat,
    /// One shared stack, or one per channel (news, comments, relevant).
    pub encoders: Vec<BiRecurrentParams>,
    pub word_attn: WordAttentionParams,
    pub coattn: CoAttentionParams,
    pub diverg: DivergenceParams,
    pub fusion: FusionParams,
}

impl ModelParams {
    pub fn init(vocab_size: usize, config: &ModelConfig, seed: u64) -> Self {
        let d = config.d;
        let mut emb_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "init.embedding", 0));
        let mut embedding = Mat::from_fn(vocab_size, d, |_, _| emb_rng.gen_range(-0.1..0.1));
        for q in 0..d {
            embedding.set(crate::corpus::PAD_INDEX, q, 0.0);
        }
        let encoders = if config.shared_encoder {
            let mut r = ChaCha8Rng::seed_from_u64(mix_seed(seed, "init.lstm", 0));
            vec![BiRecurrentParams::init(d, &mut r)]
        } else {
            (0..3)
                .map(|i| {
                    let mut r = ChaCha8Rng::seed_from_u64(mix_seed(seed, "init.lstm", i as u64));
                    BiRecurrentParams::init(d, &mut r)
                })
                .collect()
        };
        let mut wa_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "init.word_attn", 0));
        let mut co_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "init.coattn", 0));
        let mut dv_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "init.diverg", 0));
        let mut fu_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "init.fusion", 0));
        ModelParams {
            embedding,
            encoders,
            word_attn: WordAttentionParams::init(d, &mut wa_rng),
            coattn: CoAttentionParams::init(d, config.attn_k, &mut co_rng),
            diverg: DivergenceParams::init(d, config.sim_h, &mut dv_rng),
            fusion: FusionParams::init(d, config.top_k, &mut fu_rng),
        }
    }

    fn encoder_prefix(&self, idx: usize) -> &'static str {
        if self.encoders.len() == 1 {
            SHARED_PREFIX
        } else {
            CHANNEL_PREFIXES[idx]
        }
    }

    /// Parameter groups in a fixed, stable order.
    pub fn visit(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = vec![(EMBEDDING_GROUP.to_string(), &self.embedding)];
        for (i, enc) in self.encoders.iter().enumerate() {
            let prefix = self.encoder_prefix(i);
            for (dir, p) in [("fwd", &enc.fwd), ("bwd", &enc.bwd)] {
                for (name, mat) in p.mats() {
                    out.push((format!("{}.{}.{}", prefix, dir, name), mat));
                }
            }
        }
        for (name, mat) in [
            ("word_attn.w", &self.word_attn.w),
            ("word_attn.b", &self.word_attn.b),
            ("word_attn.u", &self.word_attn.u),
            ("coattn.w_l", &self.coattn.w_l),
            ("coattn.w_a", &self.coattn.w_a),
            ("coattn.w_c", &self.coattn.w_c),
            ("coattn.w_ha", &self.coattn.w_ha),
            ("coattn.w_hc", &self.coattn.w_hc),
            ("diverg.w", &self.diverg.w),
            ("diverg.b", &self.diverg.b),
            ("diverg.w_r", &self.diverg.w_r),
            ("diverg.b_r", &self.diverg.b_r),
            ("fusion.w_p", &self.fusion.w_p),
            ("fusion.b_p", &self.fusion.b_p),
            ("fusion.proj", &self.fusion.proj),
        ] {
            out.push((name.to_string(), mat));
        }
        out
    }

    pub fn visit_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let shared = self.encoders.len() == 1;
        let mut out: Vec<(String, &mut Mat)> =
            vec![(EMBEDDING_GROUP.to_string(), &mut self.embedding)];
        for (i, enc) in self.encoders.iter_mut().enumerate() {
            let prefix = if shared { SHARED_PREFIX } else { CHANNEL_PREFIXES[i] };
            for (dir, p) in [("fwd", &mut enc.fwd), ("bwd", &mut enc.bwd)] {
                for (name, mat) in p.mats_mut() {
                    out.push((format!("{}.{}.{}", prefix, dir, name), mat));
                }
            }
        }
        for (name, mat) in [
            ("word_attn.w", &mut self.word_attn.w),
            ("word_attn.b", &mut self.word_attn.b),
            ("word_attn.u", &mut self.word_attn.u),
            ("coattn.w_l", &mut self.coattn.w_l),
            ("coattn.w_a", &mut self.coattn.w_a),
            ("coattn.w_c", &mut self.coattn.w_c),
            ("coattn.w_ha", &mut self.coattn.w_ha),
            ("coattn.w_hc", &mut self.coattn.w_hc),
            ("diverg.w", &mut self.diverg.w),
            ("diverg.b", &mut self.diverg.b),
            ("diverg.w_r", &mut self.diverg.w_r),
            ("diverg.b_r", &mut self.diverg.b_r),
            ("fusion.w_p", &mut self.fusion.w_p),
            ("fusion.b_p", &mut self.fusion.b_p),
            ("fusion.proj", &mut self.fusion.proj),
        ] {
            out.push((name.to_string(), mat));
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.visit().into_iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.visit_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn all_finite(&self) -> bool {
        self.visit().iter().all(|(_, m)| m.is_finite())
    }
}

/// Everything the forward pass exposes, for losses, metrics, and
/// explanations alike.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// (p_true, p_fake), summing to 1.
    pub p: [f64; 2],
    pub predicted: u8,
    pub loss: LossBreakdown,
    /// Sentence attention weights (uniform for the uniform-attention
    /// variant; empty never).
    pub v_a: Vec<f64>,
    /// Comment attention weights; empty when comments are ablated.
    pub v_c: Vec<f64>,
    /// Similarity of each relevant article to the original news; empty
    /// when the relevant branch is ablated.
    pub s: Vec<f64>,
    /// Indices of the selected most-divergent articles, ascending rank.
    pub selected: Vec<usize>,
    pub sentence_alphas: Vec<Vec<f64>>,
    pub comment_alphas: Vec<Vec<f64>>,
    /// Both sides of the KL term after softmax normalization.
    pub kl_p: Vec<f64>,
    pub kl_q: Vec<f64>,
}

/// Parameters plus the vocabulary and configuration they were built for.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub config: ModelConfig,
}

impl Model {
    pub fn init(vocab: Vocabulary, config: ModelConfig, seed: u64) -> Model {
        let params = ModelParams::init(vocab.len(), &config, seed);
        Model {
            params,
            vocab,
            config,
        }
    }

    pub fn encode(&self, ex: &LabeledExample) -> IndexedExample {
        self.vocab.encode_example(ex, &self.config.limits)
    }

    pub fn forward(&self, ex: &IndexedExample, variant: AblationVariant) -> Result<ForwardPass> {
        let mut g = Graph::new();
        let (_, fp) = self.build(&mut g, ex, variant)?;
        Ok(fp)
    }

    pub fn forward_backward(
        &self,
        ex: &IndexedExample,
        variant: AblationVariant,
    ) -> Result<(ForwardPass, Grads)> {
        let mut g = Graph::new();
        let (total, fp) = self.build(&mut g, ex, variant)?;
        let grads = g.backward(total);
        Ok((fp, grads))
    }

    fn build(
        &self,
        g: &mut Graph,
        ex: &IndexedExample,
        variant: AblationVariant,
    ) -> Result<(Var, ForwardPass)> {
        use AblationVariant::*;
        let cfg = &self.config;
        let d = cfg.d;
        let two_d = 2 * d;
        if ex.sentences.is_empty() {
            return Err(Error::DegenerateInput(format!(
                "example {} has no sentences",
                ex.id
            )));
        }
        if self.params.embedding.cols() != d {
            return Err(Error::Shape(format!(
                "embedding size {} does not match configured d={}",
                self.params.embedding.cols(),
                d
            )));
        }

        let attn = self.params.word_attn.bind(g, "word_attn");
        let enc_stack = |g: &mut Graph, slot: usize| -> EncoderVars {
            let idx = if self.params.encoders.len() == 1 { 0 } else { slot };
            let lstm = self.params.encoders[idx].bind(g, self.params.encoder_prefix(idx));
            EncoderVars { lstm, attn }
        };

        // News channel.
        let news_enc = enc_stack(g, 0);
        let art = encoder::encode_article(
            g,
            &self.params.embedding,
            EMBEDDING_GROUP,
            &news_enc,
            &ex.sentences,
        )?;
        let n_sent = ex.sentences.len();
        let a_pool = divergence::pool_or_zero(g, art.a_word, &art.word_mask);

        // Comment channel.
        let com = if variant == NoC {
            None
        } else {
            let comments_enc = if self.params.encoders.len() == 1 {
                news_enc
            } else {
                enc_stack(g, 1)
            };
            Some(encoder::encode_comments(
                g,
                &self.params.embedding,
                EMBEDDING_GROUP,
                &comments_enc,
                &ex.comments,
            )?)
        };

        // Relevant channel plus divergence selection.
        let (a_prime, s_values, selected) = if variant == NoR {
            (g.zeros(two_d * cfg.top_k, 1), Vec::new(), Vec::new())
        } else {
            let rel_enc = if self.params.encoders.len() == 1 {
                news_enc
            } else {
                enc_stack(g, 2)
            };
            let texts = encoder::encode_relevant(
                g,
                &self.params.embedding,
                EMBEDDING_GROUP,
                &rel_enc,
                &ex.relevant,
            )?;
            let pooled: Vec<Var> = texts
                .iter()
                .map(|t| divergence::pool_or_zero(g, t.hidden, &t.mask))
                .collect();
            let div_vars = self.params.diverg.bind(g, "diverg");
            let (_, sims) = divergence::similarity_scores(g, &div_vars, cfg.phi, a_pool, &pooled)?;
            let indices = divergence::select_top_k_divergent(&sims, cfg.top_k)?;
            let ev = divergence::gather_evidence(g, &pooled, &indices, cfg.top_k, two_d);
            (ev.a_prime, sims.values, ev.indices)
        };

        // Joint representation per variant.
        let uniform = |g: &mut Graph, mat: Var| {
            let cols = g.value(mat).cols();
            let w = g.constant(Mat::filled(cols, 1, 1.0 / cols as f64));
            g.matmul(mat, w)
        };
        let (joint_cls, joint_kl, v_a, v_c, comment_alphas) = match variant {
            Full | NoIl | NoR => {
                let com = com.as_ref().expect("comments encoded");
                let co_vars = self.params.coattn.bind(g, "coattn");
                let co = coattention::coattend(g, &co_vars, art.a_sent, com.c_mat)?;
                (co.joint, co.joint, co.v_a, co.v_c, com.alphas.clone())
            }
            NoCa => {
                let com = com.as_ref().expect("comments encoded");
                let a_hat = uniform(g, art.a_sent);
                let c_hat = uniform(g, com.c_mat);
                let joint = g.concat_rows(&[a_hat, c_hat]);
                let m = g.value(com.c_mat).cols();
                (
                    joint,
                    joint,
                    vec![1.0 / n_sent as f64; n_sent],
                    vec![1.0 / m as f64; m],
                    com.alphas.clone(),
                )
            }
            NoC => {
                let pad = g.zeros(two_d, 1);
                let joint_cls = g.concat_rows(&[a_pool, pad]);
                let joint_kl = g.concat_rows(&[a_pool, a_pool]);
                (
                    joint_cls,
                    joint_kl,
                    vec![1.0 / n_sent as f64; n_sent],
                    Vec::new(),
                    Vec::new(),
                )
            }
        };

        // Fusion.
        let fus = self.params.fusion.bind(g, "fusion");
        let (kl_var, kl_p, kl_q) = if variant == NoR {
            (g.zeros(1, 1), Vec::new(), Vec::new())
        } else {
            let out = fusion::inconsistency_loss(g, fus.proj, a_prime, joint_kl)?;
            (out.kl, g.vector(out.p_side), g.vector(out.q_side))
        };
        let p_var = fusion::classify(g, fus.w_p, fus.b_p, joint_cls, a_prime)?;
        let ce_var = fusion::cross_entropy(g, p_var, ex.label)?;
        let beta = if variant == NoIl { 0.0 } else { cfg.beta };
        let total = fusion::joint_loss(g, kl_var, ce_var, beta);

        let p_vec = g.vector(p_var);
        let fp = ForwardPass {
            p: [p_vec[0], p_vec[1]],
            predicted: u8::from(p_vec[1] > p_vec[0]),
            loss: LossBreakdown {
                kl: g.scalar(kl_var),
                ce: g.scalar(ce_var),
                beta,
                total: g.scalar(total),
            },
            v_a,
            v_c,
            s: s_values,
            selected,
            sentence_alphas: art.alphas,
            comment_alphas,
            kl_p,
            kl_q,
        };
        Ok((total, fp))
    }
}
