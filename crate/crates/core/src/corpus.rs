//! Dataset loading, validation, splitting, synthesis, and vocabulary.
//!
//! The on-disk format is JSON-lines, one record per line:
//! `{"id": str, "text": str | [str], "label": 0|1, "comments": [str], "relevant": [str]}`
//! Missing `comments`/`relevant` keys are treated as empty lists.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Derives a named sub-seed so every pipeline stage draws from its own
/// deterministic stream (FNV-1a over seed, tag, salt).
pub fn mix_seed(seed: u64, tag: &str, salt: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in seed.to_le_bytes() {
        eat(b);
    }
    for b in tag.bytes() {
        eat(b);
    }
    for b in salt.to_le_bytes() {
        eat(b);
    }
    h
}

/// Truncation limits: at most N sentences of n tokens, M comments of m
/// tokens, and R relevant articles of l tokens.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct Limits {
    pub max_sentences: usize,
    pub sentence_tokens: usize,
    pub max_comments: usize,
    pub comment_tokens: usize,
    pub max_relevant: usize,
    pub relevant_tokens: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_sentences: 10,
            sentence_tokens: 30,
            max_comments: 20,
            comment_tokens: 30,
            max_relevant: 30,
            relevant_tokens: 50,
        }
    }
}

/// One news article with its comment thread, relevant-news pool, and label
/// (0 = true, 1 = fake). All text is tokenized and truncated.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub comments: Vec<Vec<String>>,
    pub relevant: Vec<Vec<String>>,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Table-style dataset statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub records: usize,
    pub true_news: usize,
    pub fake_news: usize,
    pub comments: usize,
    pub avg_relevant: f64,
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let records = dataset.examples.len();
    let fake_news = dataset.examples.iter().filter(|e| e.label == 1).count();
    let comments = dataset.examples.iter().map(|e| e.comments.len()).sum();
    let relevant: usize = dataset.examples.iter().map(|e| e.relevant.len()).sum();
    DatasetStats {
        records,
        true_news: records - fake_news,
        fake_news,
        comments,
        avg_relevant: if records == 0 {
            0.0
        } else {
            relevant as f64 / records as f64
        },
    }
}

/// Lowercases, splits on Unicode whitespace, and strips leading/trailing
/// punctuation; empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| c.is_ascii_punctuation());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Splits raw text into sentences on `.`, `!`, `?`, then tokenizes each;
/// empty sentences are dropped.
pub fn segment_sentences(text: &str) -> Vec<Vec<String>> {
    text.split(['.', '!', '?'])
        .map(tokenize)
        .filter(|s| !s.is_empty())
        .collect()
}

fn validation_at(line: usize, msg: &str) -> Error {
    Error::Validation(format!("line {}: {}", line, msg))
}

fn parse_record(line_no: usize, line: &str, limits: &Limits) -> Result<LabeledExample> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    let obj = value
        .as_object()
        .ok_or_else(|| validation_at(line_no, "record must be a JSON object"))?;

    let id = obj
        .get("id")
        .and_then(|v| v.as_str())
        .ok_or_else(|| validation_at(line_no, "missing or non-string \"id\""))?
        .to_string();
    if id.is_empty() {
        return Err(validation_at(line_no, "empty \"id\""));
    }

    let label = match obj.get("label") {
        None => return Err(validation_at(line_no, "missing \"label\"")),
        Some(v) => match v.as_u64() {
            Some(0) => 0u8,
            Some(1) => 1u8,
            _ => return Err(validation_at(line_no, "label must be 0 or 1")),
        },
    };

    let mut sentences: Vec<Vec<String>> = match obj.get("text") {
        None => return Err(validation_at(line_no, "missing \"text\"")),
        Some(serde_json::Value::String(s)) => segment_sentences(s),
        Some(serde_json::Value::Array(items)) => {
            let mut out = Vec::new();
            for item in items {
                let s = item.as_str().ok_or_else(|| {
                    validation_at(line_no, "\"text\" array entries must be strings")
                })?;
                let toks = tokenize(s);
                if !toks.is_empty() {
                    out.push(toks);
                }
            }
            out
        }
        Some(_) => {
            return Err(validation_at(
                line_no,
                "\"text\" must be a string or an array of strings",
            ))
        }
    };
    if sentences.is_empty() {
        return Err(validation_at(line_no, "missing \"text\""));
    }

    let string_list = |key: &str| -> Result<Vec<Vec<String>>> {
        match obj.get(key) {
            None | Some(serde_json::Value::Null) => Ok(Vec::new()),
            Some(serde_json::Value::Array(items)) => {
                let mut out = Vec::new();
                for item in items {
                    let s = item.as_str().ok_or_else(|| {
                        validation_at(line_no, &format!("\"{}\" entries must be strings", key))
                    })?;
                    let toks = tokenize(s);
                    if !toks.is_empty() {
                        out.push(toks);
                    }
                }
                Ok(out)
            }
            Some(_) => Err(validation_at(
                line_no,
                &format!("\"{}\" must be an array of strings", key),
            )),
        }
    };
    let mut comments = string_list("comments")?;
    let mut relevant = string_list("relevant")?;

    sentences.truncate(limits.max_sentences);
    for s in sentences.iter_mut() {
        s.truncate(limits.sentence_tokens);
    }
    comments.truncate(limits.max_comments);
    for c in comments.iter_mut() {
        c.truncate(limits.comment_tokens);
    }
    relevant.truncate(limits.max_relevant);
    for r in relevant.iter_mut() {
        r.truncate(limits.relevant_tokens);
    }

    Ok(LabeledExample {
        id,
        sentences,
        comments,
        relevant,
        label,
    })
}

/// Loads a JSON-lines dataset, validating and truncating every record.
pub fn load_dataset(path: &Path, limits: &Limits) -> Result<Dataset> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_dataset_str(&content, limits)
}

/// Same as [`load_dataset`] but over an in-memory string.
pub fn load_dataset_str(content: &str, limits: &Limits) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_record(i + 1, line, limits)?;
        if !seen.insert(ex.id.clone()) {
            return Err(validation_at(i + 1, &format!("duplicate id \"{}\"", ex.id)));
        }
        examples.push(ex);
    }
    Ok(Dataset {
        examples,
        split_tag: SplitTag::All,
    })
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    text: Vec<String>,
    label: u8,
    comments: Vec<String>,
    relevant: Vec<String>,
}

/// Serializes a dataset back to the JSON-lines schema.
pub fn dataset_to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for ex in &dataset.examples {
        let rec = OutRecord {
            id: &ex.id,
            text: ex.sentences.iter().map(|s| s.join(" ")).collect(),
            label: ex.label,
            comments: ex.comments.iter().map(|c| c.join(" ")).collect(),
            relevant: ex.relevant.iter().map(|r| r.join(" ")).collect(),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("serialize record"));
    }
    out
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_jsonl(dataset)).map_err(|e| Error::io(path, e))
}

fn largest_remainder(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let mut sizes = [0usize; 3];
    let mut fracs = [(0.0f64, 0usize); 3];
    let mut assigned = 0;
    for (s, &r) in ratios.iter().enumerate() {
        let exact = total as f64 * r;
        sizes[s] = exact.floor() as usize;
        fracs[s] = (exact - exact.floor(), s);
        assigned += sizes[s];
    }
    // Hand out the remainder by largest fractional part, lower index first.
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for k in 0..(total - assigned) {
        sizes[fracs[k % 3].1] += 1;
    }
    sizes
}

/// Stratified three-way split. Shuffling is a deterministic function of
/// `seed`; per-split class proportions stay within one example per class of
/// the global proportions.
pub fn split_dataset(
    dataset: &Dataset,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|&r| r <= 0.0) {
        return Err(Error::Validation("split ratios must be positive".into()));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split ratios must sum to 1, got {}",
            total
        )));
    }

    let n = dataset.examples.len();
    let global = largest_remainder(n, &ratios);

    // Per class: shuffle indices and compute floor allocations.
    let mut classes: Vec<u8> = dataset.examples.iter().map(|e| e.label).collect::<HashSet<_>>().into_iter().collect();
    classes.sort();
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    for &c in &classes {
        let mut idxs: Vec<usize> = (0..n).filter(|&i| dataset.examples[i].label == c).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "split.class", c as u64));
        idxs.shuffle(&mut rng);
        by_class.push(idxs);
    }

    let mut base = vec![[0usize; 3]; classes.len()];
    let mut extras = vec![0usize; classes.len()];
    for (ci, idxs) in by_class.iter().enumerate() {
        let nc = idxs.len();
        let mut used = 0;
        for s in 0..3 {
            base[ci][s] = (nc as f64 * ratios[s]).floor() as usize;
            used += base[ci][s];
        }
        extras[ci] = nc - used;
    }
    let mut deficit = [0usize; 3];
    for s in 0..3 {
        let have: usize = base.iter().map(|b| b[s]).sum();
        deficit[s] = global[s] - have.min(global[s]);
    }
    // Place leftovers one at a time where the residual need is largest,
    // respecting the global split sizes.
    while extras.iter().any(|&e| e > 0) {
        let mut best: Option<(f64, usize, usize)> = None;
        for ci in 0..classes.len() {
            if extras[ci] == 0 {
                continue;
            }
            for s in 0..3 {
                if deficit[s] == 0 {
                    continue;
                }
                let need = by_class[ci].len() as f64 * ratios[s] - base[ci][s] as f64;
                let better = match best {
                    None => true,
                    Some((bn, bs, bc)) => {
                        need > bn + 1e-12 || ((need - bn).abs() <= 1e-12 && (s, ci) < (bs, bc))
                    }
                };
                if better {
                    best = Some((need, s, ci));
                }
            }
        }
        let (_, s, ci) = best.expect("leftover placement always has a slot");
        base[ci][s] += 1;
        extras[ci] -= 1;
        deficit[s] -= 1;
    }

    let mut split_indices: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (ci, idxs) in by_class.iter().enumerate() {
        let mut off = 0;
        for s in 0..3 {
            split_indices[s].extend_from_slice(&idxs[off..off + base[ci][s]]);
            off += base[ci][s];
        }
    }
    let tags = [SplitTag::Train, SplitTag::Val, SplitTag::Test];
    let mut out: Vec<Dataset> = Vec::new();
    for (s, idxs) in split_indices.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "split.order", s as u64));
        idxs.shuffle(&mut rng);
        out.push(Dataset {
            examples: idxs.iter().map(|&i| dataset.examples[i].clone()).collect(),
            split_tag: tags[s],
        });
    }
    let test = out.pop().unwrap();
    let val = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok((train, val, test))
}

/// Configuration for the synthetic corpus generator.
///
/// Fake examples plant exactly one claim token in one sentence; a majority
/// of their comments carry the paired refutation token, as does a majority
/// of their relevant articles (which also restate the topic). True news
/// contains topic tokens only. `noise` is the fraction of comment/relevant
/// slots replaced by pure noise, capped so the majorities above always
/// hold.
///
/// The noise distribution for comments and relevant articles includes
/// stray refutations of unrelated claims in both classes, so bare token
/// presence does not give the label away: only the pairing of a refutation
/// with the claim actually made in the article does.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SynthConfig {
    /// Size of the noise-token pool.
    pub vocab_size: usize,
    pub topic_tokens: usize,
    pub claim_pairs: usize,
    pub num_examples: usize,
    pub comments_per: usize,
    pub relevant_per: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 120,
            topic_tokens: 8,
            claim_pairs: 6,
            num_examples: 100,
            comments_per: 4,
            relevant_per: 4,
            noise: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Validation(format!(
                "noise fraction must be in [0, 1], got {}",
                self.noise
            )));
        }
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("topic_tokens", self.topic_tokens),
            ("claim_pairs", self.claim_pairs),
            ("num_examples", self.num_examples),
            ("comments_per", self.comments_per),
            ("relevant_per", self.relevant_per),
        ] {
            if v == 0 {
                return Err(Error::Validation(format!("{} must be >= 1", name)));
            }
        }
        Ok(())
    }
}

/// Majority of slots must keep the signal: noisy slots are capped below
/// half.
fn noisy_count(count: usize, noise: f64) -> usize {
    let cap = (count.saturating_sub(1)) / 2;
    ((noise * count as f64).round() as usize).min(cap)
}

fn noisy_slots(rng: &mut ChaCha8Rng, count: usize, noise: f64) -> HashSet<usize> {
    let wanted = noisy_count(count, noise);
    let mut slots: Vec<usize> = (0..count).collect();
    slots.shuffle(rng);
    slots.into_iter().take(wanted).collect()
}

/// Base probability that a unit picks up a stray refutation of some
/// unrelated claim. True examples receive extra strays so that the
/// expected refutation-token count matches across classes and only the
/// claim-refutation pairing carries the label.
const STRAY_REFUTE_P: f64 = 0.15;

/// Generates a labeled dataset with a planted signal that requires pairing
/// comment-side refutations with the claim made in the article.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let refuting_comments =
        config.comments_per - noisy_count(config.comments_per, config.noise);
    let refuting_relevant =
        config.relevant_per - noisy_count(config.relevant_per, config.noise);
    // Per-unit stray rates. The relevant channel is fully count-balanced
    // between classes; the comment channel keeps a reduced gap so that
    // attending to genuinely refuting comments stays rewarding.
    let stray_fake = STRAY_REFUTE_P;
    let stray_true_comment =
        (stray_fake + 0.5 * refuting_comments as f64 / config.comments_per as f64).min(0.95);
    let stray_true_relevant =
        (stray_fake + refuting_relevant as f64 / config.relevant_per as f64).min(0.95);

    let mut examples = Vec::with_capacity(config.num_examples);
    for i in 0..config.num_examples {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, "synth", i as u64));
        let label = (i % 2 == 1) as u8;
        let topic = rng.gen_range(0..config.topic_tokens);
        let pair = rng.gen_range(0..config.claim_pairs);
        let topic_tok = format!("topic{}", topic);
        let claim_tok = format!("claim{}", pair);
        let refute_tok = format!("refute{}", pair);

        let filler = |rng: &mut ChaCha8Rng, len: usize, with_topic: bool| -> Vec<String> {
            (0..len)
                .map(|_| {
                    if with_topic && rng.gen_bool(0.35) {
                        topic_tok.clone()
                    } else {
                        format!("w{:03}", rng.gen_range(0..config.vocab_size))
                    }
                })
                .collect()
        };
        // Off-topic chatter: refutations of claims nobody made here.
        let pairs = config.claim_pairs;
        let stray = |rng: &mut ChaCha8Rng, unit: &mut Vec<String>, p: f64| {
            if rng.gen_bool(p) {
                let other = format!("refute{}", rng.gen_range(0..pairs));
                let pos = rng.gen_range(0..=unit.len());
                unit.insert(pos, other);
            }
        };

        let n_sent = rng.gen_range(8..=10);
        let claim_sent = rng.gen_range(0..n_sent);
        let mut sentences = Vec::with_capacity(n_sent);
        for s in 0..n_sent {
            let len = rng.gen_range(14..=18);
            let mut sent = filler(&mut rng, len, true);
            if label == 1 && s == claim_sent {
                let pos = rng.gen_range(0..=sent.len());
                sent.insert(pos, claim_tok.clone());
            }
            sentences.push(sent);
        }

        // Comments that engage with the article quote a few of its words;
        // refuting comments quote the claim sentence itself.
        let quote = |rng: &mut ChaCha8Rng, unit: &mut [String], source: &[String]| {
            let usable: Vec<&String> = source.iter().filter(|t| !t.starts_with("claim")).collect();
            for slot in 0..3.min(unit.len()) {
                unit[slot] = usable[rng.gen_range(0..usable.len())].clone();
            }
        };
        let mut comments = Vec::with_capacity(config.comments_per);
        if label == 1 {
            let noisy = noisy_slots(&mut rng, config.comments_per, config.noise);
            for j in 0..config.comments_per {
                let len = rng.gen_range(8..=14);
                let refuting = !noisy.contains(&j);
                let mut c = filler(&mut rng, len, refuting);
                if refuting {
                    quote(&mut rng, &mut c, &sentences[claim_sent]);
                }
                stray(&mut rng, &mut c, stray_fake);
                if refuting {
                    let pos = rng.gen_range(0..=c.len());
                    c.insert(pos, refute_tok.clone());
                }
                comments.push(c);
            }
        } else {
            for _ in 0..config.comments_per {
                let len = rng.gen_range(8..=14);
                let pure_noise = rng.gen_bool(config.noise.min(1.0));
                let mut c = filler(&mut rng, len, !pure_noise);
                if !pure_noise {
                    let src = rng.gen_range(0..sentences.len());
                    quote(&mut rng, &mut c, &sentences[src]);
                }
                stray(&mut rng, &mut c, stray_true_comment);
                comments.push(c);
            }
        }

        let mut relevant = Vec::with_capacity(config.relevant_per);
        if label == 1 {
            let noisy = noisy_slots(&mut rng, config.relevant_per, config.noise);
            for j in 0..config.relevant_per {
                let len = rng.gen_range(12..=16);
                let restating = !noisy.contains(&j);
                let mut r = filler(&mut rng, len, restating);
                if restating {
                    r[0] = topic_tok.clone();
                }
                stray(&mut rng, &mut r, stray_fake);
                if restating {
                    let pos = rng.gen_range(0..=r.len());
                    r.insert(pos, refute_tok.clone());
                }
                relevant.push(r);
            }
        } else {
            for _ in 0..config.relevant_per {
                let len = rng.gen_range(12..=16);
                let pure_noise = rng.gen_bool(config.noise.min(1.0));
                let mut r = filler(&mut rng, len, !pure_noise);
                if !pure_noise {
                    r[0] = topic_tok.clone();
                }
                stray(&mut rng, &mut r, stray_true_relevant);
                relevant.push(r);
            }
        }

        examples.push(LabeledExample {
            id: format!("synth-{:05}", i),
            sentences,
            comments,
            relevant,
            label,
        });
    }
    Ok(Dataset {
        examples,
        split_tag: SplitTag::All,
    })
}

/// Token-to-index mapping with PAD at 0 and UNK at 1.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD_TOKEN || tokens[UNK_INDEX] != UNK_TOKEN {
            return Err(Error::Validation(
                "vocabulary must start with the PAD and UNK tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary token \"{}\"",
                    t
                )));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK_INDEX)
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps an example's tokens to padded index sequences. Examples without
    /// comments or relevant articles get a single all-PAD unit so every
    /// pipeline branch has input to run on.
    pub fn encode_example(&self, ex: &LabeledExample, limits: &Limits) -> IndexedExample {
        let enc_units = |units: &[Vec<String>], max_units: usize, max_tokens: usize| {
            units
                .iter()
                .take(max_units)
                .map(|u| {
                    u.iter()
                        .take(max_tokens)
                        .map(|t| self.lookup(t))
                        .collect::<Vec<usize>>()
                })
                .collect::<Vec<_>>()
        };
        let sentences = enc_units(&ex.sentences, limits.max_sentences, limits.sentence_tokens);
        let mut comments = enc_units(&ex.comments, limits.max_comments, limits.comment_tokens);
        if comments.is_empty() {
            comments.push(vec![PAD_INDEX; limits.comment_tokens.max(1)]);
        }
        let mut relevant = enc_units(&ex.relevant, limits.max_relevant, limits.relevant_tokens);
        if relevant.is_empty() {
            relevant.push(vec![PAD_INDEX; limits.relevant_tokens.max(1)]);
        }
        IndexedExample {
            id: ex.id.clone(),
            label: ex.label,
            sentences,
            comments,
            relevant,
        }
    }
}

/// An example mapped to vocabulary indices, ready for encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexedExample {
    pub id: String,
    pub label: u8,
    pub sentences: Vec<Vec<usize>>,
    pub comments: Vec<Vec<usize>>,
    pub relevant: Vec<Vec<usize>>,
}

/// Builds the vocabulary: tokens with frequency >= `min_freq`, ranked by
/// frequency then lexicographically, truncated to `max_size - 2`, with PAD
/// and UNK prepended.
pub fn build_vocabulary(dataset: &Dataset, min_freq: usize, max_size: usize) -> Result<Vocabulary> {
    if dataset.examples.is_empty() {
        return Err(Error::Validation(
            "cannot build a vocabulary from an empty dataset".into(),
        ));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ex in &dataset.examples {
        for unit in ex
            .sentences
            .iter()
            .chain(ex.comments.iter())
            .chain(ex.relevant.iter())
        {
            for tok in unit {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(max_size.saturating_sub(2));

    let mut tokens = Vec::with_capacity(ranked.len() + 2);
    tokens.push(PAD_TOKEN.to_string());
    tokens.push(UNK_TOKEN.to_string());
    tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}
