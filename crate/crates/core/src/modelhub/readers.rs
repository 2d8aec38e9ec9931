//! Deterministic stand-in readers for each answer format.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::text::{char_slice, distinct_content_tokens, is_stopword, sentences, tokenize, tokenize_with_offsets};

pub const MAX_SPAN_TOKENS: usize = 5;
/// Distance decay for extractive scoring: `exp(-d / SPAN_DECAY)`.
pub const SPAN_DECAY: f64 = 5.0;
pub const NEGATION_CUES: [&str; 5] = ["not", "no", "never", "cannot", "none"];

/// A character-offset answer span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub text: String,
    pub start_char: usize,
    pub end_char: usize,
    pub score: f64,
}

fn require_text(field: &str, value: &str) -> Result<(), ModelError> {
    if value.trim().is_empty() {
        return Err(ModelError::InvalidPayload(format!("{field} must be non-empty")));
    }
    Ok(())
}

/// Ranks candidate spans of 1..=5 context tokens that start and end on a
/// non-stopword and contain no question content token. A span scores
/// `sum over question content tokens q found in the context of exp(-d/5)`,
/// with `d` the token distance from the closest occurrence of `q` to the
/// nearer span boundary. Ties: shorter span, then earlier start.
pub fn read_extractive(question: &str, context: &str, topk: usize) -> Result<Vec<Span>, ModelError> {
    require_text("question", question)?;
    require_text("context", context)?;
    if topk == 0 {
        return Err(ModelError::InvalidPayload("topk must be >= 1".into()));
    }
    let q_content = distinct_content_tokens(question);
    let tokens = tokenize_with_offsets(context);

    let mut occurrences: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in tokens.iter().enumerate() {
        if q_content.contains(&t.text) {
            occurrences.entry(t.text.as_str()).or_default().push(i);
        }
    }
    let blocked: Vec<bool> = tokens.iter().map(|t| q_content.contains(&t.text)).collect();

    struct Candidate {
        start: usize,
        end: usize,
        score: f64,
    }
    let mut candidates = Vec::new();
    for start in 0..tokens.len() {
        if is_stopword(&tokens[start].text) {
            continue;
        }
        for end in start..tokens.len().min(start + MAX_SPAN_TOKENS) {
            if blocked[end] {
                break;
            }
            if is_stopword(&tokens[end].text) {
                continue;
            }
            let score = occurrences
                .values()
                .map(|positions| {
                    let d = positions.iter().map(|&p| p.abs_diff(start).min(p.abs_diff(end))).min().unwrap_or(0);
                    (-(d as f64) / SPAN_DECAY).exp()
                })
                .sum();
            candidates.push(Candidate { start, end, score });
        }
    }
    candidates.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then((a.end - a.start).cmp(&(b.end - b.start))).then(a.start.cmp(&b.start))
    });
    Ok(candidates
        .into_iter()
        .take(topk)
        .map(|c| {
            let (start_char, end_char) = (tokens[c.start].start, tokens[c.end].end);
            Span { text: char_slice(context, start_char, end_char).to_string(), start_char, end_char, score: c.score }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "yes",
            Label::No => "no",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalOutput {
    pub label: Label,
    pub scores: BTreeMap<Label, f64>,
}

fn overlap(q_content: &BTreeSet<String>, sentence: &str) -> usize {
    let tokens: BTreeSet<String> = tokenize(sentence).into_iter().collect();
    q_content.intersection(&tokens).count()
}

/// Index and overlap of the first sentence with maximal overlap.
fn best_sentence(q_content: &BTreeSet<String>, sentences: &[&str]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for (i, s) in sentences.iter().enumerate() {
        let o = overlap(q_content, s);
        if best.is_none_or(|(_, b)| o > b) {
            best = Some((i, o));
        }
    }
    best
}

pub fn negation_cues(sentence: &str) -> usize {
    let tokens = tokenize(sentence).into_iter().filter(|t| NEGATION_CUES.contains(&t.as_str())).count();
    let lower = sentence.to_lowercase();
    tokens + lower.matches("n't").count() + lower.matches("n\u{2019}t").count()
}

/// Yes/no from the parity of negation cues in the best-overlapping sentence.
pub fn read_categorical(question: &str, context: &str) -> Result<CategoricalOutput, ModelError> {
    require_text("question", question)?;
    require_text("context", context)?;
    let q_content = distinct_content_tokens(question);
    let sents = sentences(context);
    let (idx, overlap) = best_sentence(&q_content, &sents).expect("non-empty context has a sentence");
    let label = if negation_cues(sents[idx]) % 2 == 1 { Label::No } else { Label::Yes };
    let chosen = if q_content.is_empty() { 0.5 } else { 0.5 + 0.5 * overlap as f64 / q_content.len() as f64 };
    let other = if label == Label::Yes { Label::No } else { Label::Yes };
    let scores = BTreeMap::from([(label, chosen), (other, 1.0 - chosen)]);
    Ok(CategoricalOutput { label, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionScore {
    pub option: String,
    pub score: f64,
}

/// Scores each option by the share of its content tokens found in the
/// question or context.
pub fn read_multichoice(question: &str, context: &str, options: &[String]) -> Result<Vec<OptionScore>, ModelError> {
    if options.len() < 2 {
        return Err(ModelError::TooFewOptions(options.len()));
    }
    let evidence: BTreeSet<String> = tokenize(question).into_iter().chain(tokenize(context)).collect();
    let mut ranked: Vec<(usize, OptionScore)> = options
        .iter()
        .enumerate()
        .map(|(i, option)| {
            let content = distinct_content_tokens(option);
            let score = if content.is_empty() {
                0.0
            } else {
                content.iter().filter(|t| evidence.contains(*t)).count() as f64 / content.len() as f64
            };
            (i, OptionScore { option: option.clone(), score })
        })
        .collect();
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().map(|(_, o)| o).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractiveOutput {
    pub text: String,
    pub score: f64,
}

/// Returns the best-overlapping sentence across all contexts.
pub fn read_abstractive(question: &str, contexts: &[String]) -> Result<AbstractiveOutput, ModelError> {
    if !contexts.iter().any(|c| !c.trim().is_empty()) {
        return Err(ModelError::InvalidPayload("at least one non-empty context is required".into()));
    }
    let q_content = distinct_content_tokens(question);
    let mut best: Option<(&str, usize)> = None;
    for c in contexts {
        for s in sentences(c) {
            let o = overlap(&q_content, s);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((s, o));
            }
        }
    }
    let (text, overlap) = best.expect("a non-empty context has a sentence");
    let score = if q_content.is_empty() { 0.0 } else { overlap as f64 / q_content.len() as f64 };
    Ok(AbstractiveOutput { text: text.to_string(), score })
}

/// Last whitespace-separated word of the question, verbatim.
pub fn echo_last_word(question: &str) -> AbstractiveOutput {
    AbstractiveOutput { text: question.split_whitespace().last().unwrap_or("").to_string(), score: 1.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent brute force: enumerate every (start, len) window, filter by
    /// the candidate rules, score each question token by scanning all positions.
    fn enumerate_spans(question: &str, context: &str) -> Vec<(String, f64, usize, usize)> {
        let q: Vec<String> = distinct_content_tokens(question).into_iter().collect();
        let toks = tokenize_with_offsets(context);
        let mut out = Vec::new();
        for s in 0..toks.len() {
            for len in 1..=5 {
                let e = s + len - 1;
                if e >= toks.len() {
                    continue;
                }
                let window = &toks[s..=e];
                if is_stopword(&window[0].text) || is_stopword(&window[len - 1].text) {
                    continue;
                }
                if window.iter().any(|t| q.contains(&t.text)) {
                    continue;
                }
                let mut score = 0.0;
                for qt in &q {
                    let mut best = usize::MAX;
                    for (p, t) in toks.iter().enumerate() {
                        if &t.text == qt {
                            let d = (p as i64 - s as i64).abs().min((p as i64 - e as i64).abs()) as usize;
                            best = best.min(d);
                        }
                    }
                    if best != usize::MAX {
                        score += (-(best as f64) / 5.0).exp();
                    }
                }
                out.push((char_slice(context, window[0].start, window[len - 1].end).to_string(), score, len, s));
            }
        }
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
        out
    }

    #[test]
    fn tiny_purple_box() {
        let c = "There is a tiny purple box in the room.";
        let q = "What size is the box?";
        let oracle = enumerate_spans(q, c);
        assert_eq!(oracle[0].0, "purple");
        assert_eq!(oracle[1].0, "tiny purple");
        assert_eq!(oracle[0].1, oracle[1].1);
        assert!((oracle[0].1 - (-0.2f64).exp()).abs() < 1e-15);

        let spans = read_extractive(q, c, 50).unwrap();
        assert_eq!(spans[0].text, "purple");
        let got: Vec<(String, f64)> = spans.iter().map(|s| (s.text.clone(), s.score)).collect();
        let want: Vec<(String, f64)> = oracle.iter().map(|o| (o.0.clone(), o.1)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn capital_of_france() {
        let c = "The capital of France is Paris.";
        let q = "What is the capital of France?";
        let spans = read_extractive(q, c, 5).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].text, "Paris");
        assert_eq!(enumerate_spans(q, c).len(), 1);
        let expected = (-4.0f64 / 5.0).exp() + (-2.0f64 / 5.0).exp();
        assert!((spans[0].score - expected).abs() < 1e-12);
    }

    #[test]
    fn no_question_overlap_falls_back_to_short_then_early() {
        let spans = read_extractive("Who won?", "Red green blue", 3).unwrap();
        let texts: Vec<_> = spans.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["Red", "green", "blue"]);
        assert!(spans.iter().all(|s| s.score == 0.0));
    }

    #[test]
    fn no_candidates_is_empty() {
        assert!(read_extractive("Where is the box?", "the box is in the", 3).unwrap().is_empty());
    }

    #[test]
    fn offsets_recover_text_with_unicode() {
        let c = "Ünïcode café ✓ naïve résumé, Zürich.";
        for s in read_extractive("Which city?", c, 20).unwrap() {
            assert_eq!(char_slice(c, s.start_char, s.end_char), s.text);
            assert!(s.start_char < s.end_char && s.end_char <= c.chars().count());
        }
    }

    #[test]
    fn categorical_examples() {
        let q = "Is the sky green?";
        let no = read_categorical(q, "The sky is not green.").unwrap();
        assert_eq!(no.label, Label::No);
        assert_eq!(no.scores[&Label::No], 1.0);
        let yes = read_categorical(q, "The sky is green.").unwrap();
        assert_eq!(yes.label, Label::Yes);
        let zero = read_categorical(q, "Bananas are yellow.").unwrap();
        assert_eq!(zero.label, Label::Yes);
        assert_eq!(zero.scores[&Label::Yes], 0.5);
        assert_eq!(zero.scores[&Label::No], 0.5);
    }

    #[test]
    fn categorical_picks_best_sentence_and_counts_contractions() {
        let out = read_categorical("Is the sky green?", "Grass isn't blue. The sky isn't green.").unwrap();
        assert_eq!(out.label, Label::No);
        assert_eq!(out.scores[&Label::No], 1.0);
        assert_eq!(negation_cues("It is not never so."), 2);
    }

    #[test]
    fn multichoice_examples() {
        let opts: Vec<String> = ["blue", "red", "green"].map(String::from).to_vec();
        let ranked = read_multichoice("What color is the sky?", "The sky is blue.", &opts).unwrap();
        assert_eq!(ranked[0], OptionScore { option: "blue".into(), score: 1.0 });
        assert_eq!(ranked[1].option, "red");
        assert_eq!(ranked[2].option, "green");
        assert_eq!(ranked[2].score, 0.0);

        let permuted: Vec<String> = ["green", "blue", "red"].map(String::from).to_vec();
        let again = read_multichoice("What color is the sky?", "The sky is blue.", &permuted).unwrap();
        for o in &again {
            assert_eq!(o.score, ranked.iter().find(|r| r.option == o.option).unwrap().score);
        }
        assert_eq!(read_multichoice("q", "c", &opts[..1]).unwrap_err(), ModelError::TooFewOptions(1));
    }

    #[test]
    fn abstractive_examples() {
        let q = "What is the capital of France?";
        let contexts = vec![
            "Berlin is in Germany. Rome is old.".to_string(),
            "France is large. Paris is the capital of France.".to_string(),
        ];
        let out = read_abstractive(q, &contexts).unwrap();
        assert_eq!(out.text, "Paris is the capital of France.");
        assert_eq!(out.score, 1.0);

        let only = read_abstractive(q, &["Nothing relevant here".to_string()]).unwrap();
        assert_eq!(only.text, "Nothing relevant here");

        let none = read_abstractive(q, &["Cats purr. Dogs bark.".to_string(), "Fish swim.".to_string()]).unwrap();
        assert_eq!(none, AbstractiveOutput { text: "Cats purr.".into(), score: 0.0 });
    }
}
