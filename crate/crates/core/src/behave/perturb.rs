use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::BehaveError;
use crate::text::{is_stopword, tokenize_with_offsets};

/// Shortest word a typo may target.
pub const MIN_TYPO_WORD_CHARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Typo,
    Replace,
}

/// A seeded question perturbation.
///
/// `typo` params: optional `word` (pin the target word) and `position` (pin
/// the first of the two swapped characters). `replace` params: required
/// `lexicon`, an object mapping words to their substitutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub kind: GeneratorKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub seed: u64,
}

impl Generator {
    pub fn typo(seed: u64) -> Self {
        Generator { kind: GeneratorKind::Typo, params: BTreeMap::new(), seed }
    }

    pub fn replace<'a>(lexicon: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let lexicon: serde_json::Map<String, Value> =
            lexicon.into_iter().map(|(k, v)| (k.to_string(), Value::from(v))).collect();
        Generator {
            kind: GeneratorKind::Replace,
            params: BTreeMap::from([("lexicon".to_string(), Value::Object(lexicon))]),
            seed: 0,
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    /// Checks params without applying the generator.
    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            GeneratorKind::Typo => {
                if self.params.get("word").is_some_and(|w| !w.is_string()) {
                    return Err("typo `word` must be a string".into());
                }
                if self.params.get("position").is_some_and(|p| !p.is_u64()) {
                    return Err("typo `position` must be a non-negative integer".into());
                }
            }
            GeneratorKind::Replace => {
                self.lexicon()?;
            }
        }
        Ok(())
    }

    fn lexicon(&self) -> Result<Vec<(String, String)>, String> {
        let Some(Value::Object(map)) = self.params.get("lexicon") else {
            return Err("replace generators need a `lexicon` object".into());
        };
        let mut pairs = Vec::with_capacity(map.len());
        for (k, v) in map {
            let v = v.as_str().ok_or_else(|| format!("lexicon value for `{k}` must be a string"))?;
            if k.is_empty() {
                return Err("lexicon keys must be non-empty".into());
            }
            pairs.push((k.clone(), v.to_string()));
        }
        // Longest key first so multi-word keys win over their prefixes.
        pairs.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then(a.0.cmp(&b.0)));
        Ok(pairs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    pub perturbed: String,
    /// `(original, replacement)` pairs in order of first occurrence.
    pub highlight: Vec<(String, String)>,
}

pub fn apply_perturbation(question: &str, generator: &Generator) -> Result<Perturbation, BehaveError> {
    generator.validate().map_err(BehaveError::InvalidGenerator)?;
    match generator.kind {
        GeneratorKind::Typo => typo(question, generator),
        GeneratorKind::Replace => Ok(replace(question, &generator.lexicon().map_err(BehaveError::InvalidGenerator)?)),
    }
}

fn typo(question: &str, generator: &Generator) -> Result<Perturbation, BehaveError> {
    let pinned_word = generator.params.get("word").and_then(Value::as_str).map(str::to_lowercase);
    let eligible: Vec<_> = tokenize_with_offsets(question)
        .into_iter()
        .filter(|t| t.end - t.start >= MIN_TYPO_WORD_CHARS && !is_stopword(&t.text))
        .filter(|t| pinned_word.as_ref().is_none_or(|w| &t.text == w))
        .collect();
    if eligible.is_empty() {
        return Err(BehaveError::NoEligibleWord(question.to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(generator.seed);
    let target = &eligible[rng.random_range(0..eligible.len())];
    let len = target.end - target.start;
    let position = match generator.params.get("position").and_then(Value::as_u64) {
        Some(p) if (p as usize) + 1 < len => p as usize,
        Some(p) => {
            return Err(BehaveError::InvalidGenerator(format!("position {p} out of range for a {len}-character word")))
        }
        None => rng.random_range(0..len - 1),
    };

    let mut chars: Vec<char> = question.chars().collect();
    let original: String = chars[target.start..target.end].iter().collect();
    chars.swap(target.start + position, target.start + position + 1);
    let replaced: String = chars[target.start..target.end].iter().collect();
    Ok(Perturbation { perturbed: chars.into_iter().collect(), highlight: vec![(original, replaced)] })
}

fn replace(question: &str, lexicon: &[(String, String)]) -> Perturbation {
    let chars: Vec<char> = question.chars().collect();
    let keys: Vec<(Vec<char>, &str, &str)> =
        lexicon.iter().map(|(k, v)| (k.chars().collect(), k.as_str(), v.as_str())).collect();
    let mut out = String::with_capacity(question.len());
    let mut highlight: Vec<(String, String)> = Vec::new();
    let mut i = 0;
    'scan: while i < chars.len() {
        let at_boundary = i == 0 || !chars[i - 1].is_alphanumeric();
        if at_boundary {
            for (key, k, v) in &keys {
                let end = i + key.len();
                let fits = end <= chars.len() && chars[i..end] == key[..];
                if fits && (end == chars.len() || !chars[end].is_alphanumeric()) {
                    out.push_str(v);
                    let pair = (k.to_string(), v.to_string());
                    if !highlight.contains(&pair) {
                        highlight.push(pair);
                    }
                    i = end;
                    continue 'scan;
                }
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    Perturbation { perturbed: out, highlight }
}
