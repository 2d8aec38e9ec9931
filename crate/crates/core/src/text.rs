//! Tokenization shared by the retrieval indexes, the stub readers and the
//! behavioural test generators.
//!
//! Tokens are maximal runs of alphanumeric characters, lowercased. Offsets are
//! counted in Unicode scalar values of the original string.

use std::collections::BTreeSet;

/// Fixed stopword list used to derive "content tokens".
pub const STOPWORDS: [&str; 28] = [
    "a", "an", "the", "is", "are", "was", "were", "be", "what", "who", "when", "where", "which",
    "how", "why", "of", "in", "on", "at", "to", "and", "or", "did", "do", "does", "it", "this",
    "that",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased token text.
    pub text: String,
    /// First character (inclusive).
    pub start: usize,
    /// Last character (exclusive).
    pub end: usize,
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Lowercased alphanumeric runs, in order, duplicates kept.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|t| t.text).collect()
}

pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut pos = 0;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if current.is_empty() {
                start = pos;
            }
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(Token { text: current.to_lowercase(), start, end: pos });
            current.clear();
        }
        pos += 1;
    }
    if !current.is_empty() {
        tokens.push(Token { text: current.to_lowercase(), start, end: pos });
    }
    tokens
}

/// Tokens minus stopwords, in order, duplicates kept.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

pub fn distinct_content_tokens(text: &str) -> BTreeSet<String> {
    content_tokens(text).into_iter().collect()
}

/// Splits text into trimmed, non-empty sentences. A sentence ends at `.`, `!`
/// or `?` followed by whitespace (or the end of input), or at a line break.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((idx, ch)) = iter.next() {
        let next_is_boundary = match iter.peek() {
            None => true,
            Some(&(_, next)) => next.is_whitespace(),
        };
        let end = if ch == '\n' {
            Some(idx)
        } else if matches!(ch, '.' | '!' | '?') && next_is_boundary {
            Some(idx + ch.len_utf8())
        } else {
            None
        };
        if let Some(end) = end {
            push_trimmed(&mut out, &text[start..end]);
            start = idx + ch.len_utf8();
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, piece: &'a str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece);
    }
}

/// Substring by character offsets. Out-of-range offsets are clamped.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let byte_at = |n: usize| text.char_indices().nth(n).map(|(b, _)| b).unwrap_or(text.len());
    let (start, end) = (byte_at(start), byte_at(end));
    if start >= end {
        ""
    } else {
        &text[start..end]
    }
}
