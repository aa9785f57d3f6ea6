//! Explanation extraction and rendering: the attention weights and selected
//! divergent evidence behind one prediction, exported as JSON or as a
//! static HTML page with weight-shaded text.

use crate::error::{Error, Result};
use crate::model::{AblationVariant, ForwardPass, Model};
use crate::corpus::LabeledExample;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedText {
    pub text: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevantEntry {
    pub text: String,
    pub similarity: f64,
    pub selected: bool,
}

/// Everything a reviewer needs to audit one verdict. All numbers are
/// copied from a single forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationRecord {
    pub id: String,
    pub label: u8,
    pub p_fake: f64,
    /// News sentences in article order, weighted by v_a.
    pub sentences: Vec<WeightedText>,
    /// Word weights (alpha) of the highest-weighted sentence.
    pub top_sentence_words: Vec<WeightedText>,
    /// Comments ranked by v_c, descending.
    pub comments: Vec<WeightedText>,
    /// Relevant articles ranked by similarity, ascending (most divergent
    /// first), with the selected evidence flagged.
    pub relevant: Vec<RelevantEntry>,
}

/// Runs one forward pass and bundles its intermediates with the texts.
pub fn extract_explanation(
    model: &Model,
    example: &LabeledExample,
    variant: AblationVariant,
) -> Result<ExplanationRecord> {
    let indexed = model.encode(example);
    let fp = model.forward(&indexed, variant)?;
    Ok(assemble(model, example, &fp))
}

fn truncated_units(units: &[Vec<String>], max_units: usize, max_tokens: usize) -> Vec<Vec<String>> {
    units
        .iter()
        .take(max_units)
        .map(|u| u.iter().take(max_tokens).cloned().collect())
        .collect()
}

fn assemble(model: &Model, example: &LabeledExample, fp: &ForwardPass) -> ExplanationRecord {
    let limits = &model.config.limits;
    let sent_tokens = truncated_units(
        &example.sentences,
        limits.max_sentences,
        limits.sentence_tokens,
    );
    let comment_tokens = truncated_units(
        &example.comments,
        limits.max_comments,
        limits.comment_tokens,
    );
    let relevant_tokens = truncated_units(
        &example.relevant,
        limits.max_relevant,
        limits.relevant_tokens,
    );

    let sentences: Vec<WeightedText> = sent_tokens
        .iter()
        .zip(fp.v_a.iter())
        .map(|(toks, &w)| WeightedText {
            text: toks.join(" "),
            weight: w,
        })
        .collect();

    // Word weights of the argmax-v_a sentence (ties to the lower index).
    let top_idx = fp
        .v_a
        .iter()
        .enumerate()
        .rev()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &w)| {
            if w >= acc.1 {
                (i, w)
            } else {
                acc
            }
        })
        .0;
    let top_sentence_words = match (sent_tokens.get(top_idx), fp.sentence_alphas.get(top_idx)) {
        (Some(toks), Some(alphas)) => toks
            .iter()
            .zip(alphas.iter())
            .map(|(t, &w)| WeightedText {
                text: t.clone(),
                weight: w,
            })
            .collect(),
        _ => Vec::new(),
    };

    let mut comments: Vec<WeightedText> = comment_tokens
        .iter()
        .zip(fp.v_c.iter())
        .map(|(toks, &w)| WeightedText {
            text: toks.join(" "),
            weight: w,
        })
        .collect();
    // Stable sort keeps the original order among exact ties.
    comments.sort_by(|a, b| b.weight.partial_cmp(&a.weight).expect("finite weights"));

    let mut relevant: Vec<RelevantEntry> = fp
        .s
        .iter()
        .enumerate()
        .map(|(r, &sim)| RelevantEntry {
            text: relevant_tokens.get(r).map(|t| t.join(" ")).unwrap_or_default(),
            similarity: sim,
            selected: fp.selected.contains(&r),
        })
        .collect();
    relevant.sort_by(|a, b| a.similarity.partial_cmp(&b.similarity).expect("finite"));

    ExplanationRecord {
        id: example.id.clone(),
        label: fp.predicted,
        p_fake: fp.p[1],
        sentences,
        top_sentence_words,
        comments,
        relevant,
    }
}

/// Formats with six significant digits, plain notation where reasonable.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return "0".to_string();
    }
    if x == 0.0 {
        return "0.000000".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = 5 - exp;
    if (0..=17).contains(&decimals) {
        format!("{:.*}", decimals as usize, x)
    } else {
        format!("{:.5e}", x)
    }
}

fn esc_json(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

/// Deterministic JSON with fixed key order and 6-significant-digit numbers.
pub fn export_json(record: &ExplanationRecord) -> String {
    let mut out = String::new();
    out.push_str("{\"id\": \"");
    out.push_str(&esc_json(&record.id));
    out.push_str("\", \"prediction\": {\"label\": ");
    let _ = write!(out, "{}", record.label);
    out.push_str(", \"p_fake\": ");
    out.push_str(&fmt_sig6(record.p_fake));
    out.push_str("}, \"sentences\": [");
    for (i, s) in record.sentences.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(
            out,
            "{{\"text\": \"{}\", \"weight\": {}}}",
            esc_json(&s.text),
            fmt_sig6(s.weight)
        );
    }
    out.push_str("], \"top_sentence_words\": [");
    for (i, w) in record.top_sentence_words.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(
            out,
            "{{\"token\": \"{}\", \"weight\": {}}}",
            esc_json(&w.text),
            fmt_sig6(w.weight)
        );
    }
    out.push_str("], \"comments\": [");
    for (i, c) in record.comments.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(
            out,
            "{{\"text\": \"{}\", \"weight\": {}}}",
            esc_json(&c.text),
            fmt_sig6(c.weight)
        );
    }
    out.push_str("], \"relevant\": [");
    for (i, r) in record.relevant.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(
            out,
            "{{\"text\": \"{}\", \"similarity\": {}, \"selected\": {}}}",
            esc_json(&r.text),
            fmt_sig6(r.similarity),
            r.selected
        );
    }
    out.push_str("]}");
    out
}

/// Parses [`export_json`] output back into a record.
pub fn parse_json(text: &str) -> Result<ExplanationRecord> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Validation("explanation must be a JSON object".into()))?;
    let get_str = |v: &serde_json::Value, key: &str| -> Result<String> {
        v.get(key)
            .and_then(|x| x.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Validation(format!("missing string field \"{}\"", key)))
    };
    let get_f64 = |v: &serde_json::Value, key: &str| -> Result<f64> {
        v.get(key)
            .and_then(|x| x.as_f64())
            .ok_or_else(|| Error::Validation(format!("missing numeric field \"{}\"", key)))
    };
    let id = obj
        .get("id")
        .and_then(|x| x.as_str())
        .ok_or_else(|| Error::Validation("missing \"id\"".into()))?
        .to_string();
    let pred = obj
        .get("prediction")
        .ok_or_else(|| Error::Validation("missing \"prediction\"".into()))?;
    let label = pred
        .get("label")
        .and_then(|x| x.as_u64())
        .filter(|&l| l <= 1)
        .ok_or_else(|| Error::Validation("prediction label must be 0 or 1".into()))? as u8;
    let p_fake = get_f64(pred, "p_fake")?;

    let list = |key: &str| -> Result<Vec<serde_json::Value>> {
        obj.get(key)
            .and_then(|x| x.as_array())
            .cloned()
            .ok_or_else(|| Error::Validation(format!("missing array \"{}\"", key)))
    };
    let mut sentences = Vec::new();
    for v in list("sentences")? {
        sentences.push(WeightedText {
            text: get_str(&v, "text")?,
            weight: get_f64(&v, "weight")?,
        });
    }
    let mut top_sentence_words = Vec::new();
    for v in list("top_sentence_words")? {
        top_sentence_words.push(WeightedText {
            text: get_str(&v, "token")?,
            weight: get_f64(&v, "weight")?,
        });
    }
    let mut comments = Vec::new();
    for v in list("comments")? {
        comments.push(WeightedText {
            text: get_str(&v, "text")?,
            weight: get_f64(&v, "weight")?,
        });
    }
    let mut relevant = Vec::new();
    for v in list("relevant")? {
        relevant.push(RelevantEntry {
            text: get_str(&v, "text")?,
            similarity: get_f64(&v, "similarity")?,
            selected: v
                .get("selected")
                .and_then(|x| x.as_bool())
                .ok_or_else(|| Error::Validation("missing \"selected\" flag".into()))?,
        });
    }
    Ok(ExplanationRecord {
        id,
        label,
        p_fake,
        sentences,
        top_sentence_words,
        comments,
        relevant,
    })
}

fn esc_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Affine map of weight onto opacity with the maximum weight at full
/// intensity.
fn opacity(weight: f64, max_weight: f64) -> f64 {
    const FLOOR: f64 = 0.08;
    if max_weight <= 0.0 {
        FLOOR
    } else {
        FLOOR + (1.0 - FLOOR) * (weight / max_weight)
    }
}

fn shaded_span(text: &str, weight: f64, max_weight: f64, hue: &str) -> String {
    format!(
        "<span data-w=\"{}\" style=\"background-color: rgba({},{:.3});\">{}</span>",
        fmt_sig6(weight),
        hue,
        opacity(weight, max_weight),
        esc_html(text)
    )
}

/// Writes a dependency-free static page: sentences shaded by v_a, the top
/// sentence's words shaded by alpha, comments listed by v_c, and the
/// selected relevant news with 1-S divergence scores.
pub fn render_html(record: &ExplanationRecord, path: &Path) -> Result<()> {
    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = write!(html, "<title>Explanation {}</title>\n", esc_html(&record.id));
    html.push_str("</head>\n<body style=\"font-family: sans-serif; max-width: 60em; margin: 2em auto; line-height: 1.7;\">\n");
    let verdict = if record.label == 1 { "FAKE" } else { "TRUE" };
    let _ = write!(
        html,
        "<h1>Example {}</h1>\n<p>Verdict: <strong>{}</strong> (p_fake = {})</p>\n",
        esc_html(&record.id),
        verdict,
        fmt_sig6(record.p_fake)
    );

    html.push_str("<h2>News sentences</h2>\n<p>");
    let max_va = record
        .sentences
        .iter()
        .map(|s| s.weight)
        .fold(0.0_f64, f64::max);
    for s in &record.sentences {
        html.push_str(&shaded_span(&s.text, s.weight, max_va, "250,160,60"));
        html.push(' ');
    }
    html.push_str("</p>\n");

    html.push_str("<h2>Top sentence, word by word</h2>\n<p>");
    let max_alpha = record
        .top_sentence_words
        .iter()
        .map(|w| w.weight)
        .fold(0.0_f64, f64::max);
    for w in &record.top_sentence_words {
        html.push_str(&shaded_span(&w.text, w.weight, max_alpha, "235,80,60"));
        html.push(' ');
    }
    html.push_str("</p>\n");

    html.push_str("<h2>Comments by attention</h2>\n<ol>\n");
    let max_vc = record
        .comments
        .iter()
        .map(|c| c.weight)
        .fold(0.0_f64, f64::max);
    for c in &record.comments {
        let _ = write!(
            html,
            "<li>{}</li>\n",
            shaded_span(&c.text, c.weight, max_vc, "90,150,250")
        );
    }
    html.push_str("</ol>\n");

    html.push_str("<h2>Selected divergent relevant news</h2>\n<ol>\n");
    for r in record.relevant.iter().filter(|r| r.selected) {
        let _ = write!(
            html,
            "<li data-s=\"{}\">{} <em>(divergence {})</em></li>\n",
            fmt_sig6(r.similarity),
            esc_html(&r.text),
            fmt_sig6(1.0 - r.similarity)
        );
    }
    html.push_str("</ol>\n</body>\n</html>\n");

    std::fs::write(path, html).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> ExplanationRecord {
        ExplanationRecord {
            id: "ex-1".into(),
            label: 1,
            p_fake: 0.875,
            sentences: vec![
                WeightedText {
                    text: "one sentence".into(),
                    weight: 1.0 / 3.0,
                },
                WeightedText {
                    text: "another one".into(),
                    weight: 2.0 / 3.0,
                },
            ],
            top_sentence_words: vec![
                WeightedText {
                    text: "another".into(),
                    weight: 0.25,
                },
                WeightedText {
                    text: "one".into(),
                    weight: 0.75,
                },
            ],
            comments: vec![WeightedText {
                text: "a comment".into(),
                weight: 1.0,
            }],
            relevant: vec![
                RelevantEntry {
                    text: "divergent news".into(),
                    similarity: 0.2,
                    selected: true,
                },
                RelevantEntry {
                    text: "similar news".into(),
                    similarity: 0.8,
                    selected: false,
                },
            ],
        }
    }

    #[test]
    fn one_third_serializes_with_six_digits() {
        assert_eq!(fmt_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_sig6(0.5), "0.500000");
        assert_eq!(fmt_sig6(0.0), "0.000000");
    }

    #[test]
    fn tiny_weights_keep_six_significant_digits() {
        let s = fmt_sig6(1.23456789e-7);
        assert_eq!(s, "0.000000123457");
        let parsed: f64 = s.parse().unwrap();
        assert!((parsed - 1.23457e-7).abs() < 1e-12);
    }

    #[test]
    fn export_is_deterministic() {
        let rec = sample_record();
        assert_eq!(export_json(&rec), export_json(&rec));
    }

    #[test]
    fn export_parse_round_trip_at_six_digits() {
        let rec = sample_record();
        let text = export_json(&rec);
        let back = parse_json(&text).unwrap();
        assert_eq!(back.id, rec.id);
        assert_eq!(back.label, rec.label);
        assert_eq!(fmt_sig6(back.p_fake), fmt_sig6(rec.p_fake));
        assert_eq!(back.sentences.len(), rec.sentences.len());
        for (a, b) in back.sentences.iter().zip(rec.sentences.iter()) {
            assert_eq!(a.text, b.text);
            assert_eq!(fmt_sig6(a.weight), fmt_sig6(b.weight));
        }
        let again = export_json(&back);
        assert_eq!(text, again, "second round trip is byte-identical");
    }

    #[test]
    fn exported_keys_follow_schema_order() {
        let text = export_json(&sample_record());
        let id_pos = text.find("\"id\"").unwrap();
        let pred_pos = text.find("\"prediction\"").unwrap();
        let sent_pos = text.find("\"sentences\"").unwrap();
        let words_pos = text.find("\"top_sentence_words\"").unwrap();
        let comments_pos = text.find("\"comments\"").unwrap();
        let relevant_pos = text.find("\"relevant\"").unwrap();
        assert!(id_pos < pred_pos);
        assert!(pred_pos < sent_pos);
        assert!(sent_pos < words_pos);
        assert!(words_pos < comments_pos);
        assert!(comments_pos < relevant_pos);
        assert!(text.contains("\"p_fake\": 0.875000"));
    }

    #[test]
    fn html_shades_only_selected_relevant_and_orders_by_weight() {
        let rec = sample_record();
        let dir = std::env::temp_dir().join("emif-explain-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ex1.html");
        render_html(&rec, &path).unwrap();
        let html = std::fs::read_to_string(&path).unwrap();
        assert_eq!(html.matches("<li data-s=").count(), 1, "one selected entry");
        assert!(html.contains("divergence 0.800000"));
        // The darkest sentence is the argmax of v_a: full opacity 1.000.
        let first = html.find("data-w=\"0.333333\"").unwrap();
        let snippet = &html[first..first + 120];
        assert!(snippet.contains("rgba(250,160,60,0.540)"), "{}", snippet);
        let second = html.find("data-w=\"0.666667\"").unwrap();
        let snippet2 = &html[second..second + 120];
        assert!(snippet2.contains("rgba(250,160,60,1.000)"), "{}", snippet2);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn uniform_weights_shade_equally() {
        let mut rec = sample_record();
        rec.sentences = vec![
            WeightedText {
                text: "a".into(),
                weight: 0.5,
            },
            WeightedText {
                text: "b".into(),
                weight: 0.5,
            },
        ];
        let dir = std::env::temp_dir().join("emif-explain-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("uniform.html");
        render_html(&rec, &path).unwrap();
        let html = std::fs::read_to_string(&path).unwrap();
        assert_eq!(html.matches("rgba(250,160,60,1.000)").count(), 2);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn json_escapes_are_valid() {
        let mut rec = sample_record();
        rec.sentences[0].text = "quote \" backslash \\ tab\t".into();
        let text = export_json(&rec);
        let back = parse_json(&text).unwrap();
        assert_eq!(back.sentences[0].text, rec.sentences[0].text);
    }
}
