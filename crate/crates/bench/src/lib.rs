//! Seeded fixtures shared by the benchmarks.

use qahub_core::datastore::{DenseIndex, DenseParams, SparseIndex};
use qahub_core::modelhub::hash_embed_one;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: &[&str] = &[
    "river", "market", "stone", "bridge", "harvest", "winter", "lantern", "copper", "village", "forest", "tower",
    "merchant", "festival", "harbor", "valley", "mill", "orchard", "library", "council", "garden", "canal", "temple",
    "meadow", "quarry", "ferry", "granary", "signal", "archive", "pasture", "foundry",
];

/// `n` synthetic documents of 20 to 60 words.
pub fn corpus(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(20..60);
            let words: Vec<&str> = (0..len).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect();
            (format!("d{i:06}"), words.join(" "))
        })
        .collect()
}

pub fn sparse(docs: &[(String, String)]) -> SparseIndex {
    SparseIndex::build(docs.iter().map(|(i, t)| (i.as_str(), t.as_str())), Default::default()).unwrap()
}

pub fn dense(docs: &[(String, String)], params: &DenseParams) -> DenseIndex {
    let items = docs.iter().map(|(i, t)| (i.clone(), hash_embed_one(t, params.dim))).collect();
    DenseIndex::build(items, params, "hash-embed").unwrap()
}

/// A paragraph of `sentences` sentences with one planted answer.
pub fn paragraph(sentences: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sentences + 1);
    for _ in 0..sentences {
        let len = rng.random_range(6..14);
        let words: Vec<&str> = (0..len).map(|_| *VOCAB.choose(&mut rng).unwrap()).collect();
        out.push(words.join(" ") + ".");
    }
    out.insert(sentences / 2, "Velmora is the capital of Trastania.".to_string());
    out.join(" ")
}
