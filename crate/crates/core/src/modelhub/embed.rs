//! Feature-hashing embedder.
//!
//! Each token adds `+1` or `-1` at coordinate `h_index(token) mod dim`, with
//! the sign taken from the top bit of `h_sign(token)`. Both hashes are 64-bit
//! FNV-1a over the token's UTF-8 bytes with the offset bases below. The sum is
//! L2-normalized.

use crate::text::tokenize;

pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
/// Offset basis for the coordinate hash (the standard FNV-1a basis).
pub const INDEX_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
/// Offset basis for the sign hash.
pub const SIGN_OFFSET_BASIS: u64 = 0x9e37_79b9_7f4a_7c15;

pub const MIN_DIM: usize = 8;

pub fn fnv1a(bytes: &[u8], basis: u64) -> u64 {
    bytes.iter().fold(basis, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Embeds one text. Texts without tokens map to the zero vector.
///
/// If every signed contribution cancels, the unsigned bucket counts are used
/// instead so non-empty texts always get a unit vector.
pub fn hash_embed_one(text: &str, dim: usize) -> Vec<f32> {
    assert!(dim >= MIN_DIM, "hash embedding dim must be >= {MIN_DIM}");
    let tokens = tokenize(text);
    let mut acc = vec![0f64; dim];
    for t in &tokens {
        let idx = (fnv1a(t.as_bytes(), INDEX_OFFSET_BASIS) % dim as u64) as usize;
        let sign = if (fnv1a(t.as_bytes(), SIGN_OFFSET_BASIS) as i64) < 0 { -1.0 } else { 1.0 };
        acc[idx] += sign;
    }
    if !tokens.is_empty() && acc.iter().all(|&x| x == 0.0) {
        for t in &tokens {
            acc[(fnv1a(t.as_bytes(), INDEX_OFFSET_BASIS) % dim as u64) as usize] += 1.0;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    acc.iter().map(|x| (x / norm) as f32).collect()
}

pub fn hash_embed(texts: &[String], dim: usize) -> Vec<Vec<f32>> {
    texts.iter().map(|t| hash_embed_one(t, dim)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a(b"", INDEX_OFFSET_BASIS), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a", INDEX_OFFSET_BASIS), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar", INDEX_OFFSET_BASIS), 0x85944171f73967e8);
    }

    #[test]
    fn empty_text_is_zero() {
        assert!(hash_embed_one("", 64).iter().all(|&x| x == 0.0));
        assert!(hash_embed_one(" ?! ", 64).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn repetition_does_not_change_direction() {
        assert_eq!(hash_embed_one("cat", 64), hash_embed_one("cat cat", 64));
        let batch = hash_embed(&["cat".into(), "cat".into()], 64);
        assert_eq!(batch[0], batch[1]);
        assert!((norm(&batch[0]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_text_has_unit_cosine() {
        let a = hash_embed_one("identical text", 64);
        let dot: f64 = a.iter().map(|&x| x as f64 * x as f64).sum();
        assert!((dot - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn unit_norm_for_any_tokenized_text(s in "[a-z ]{0,40}", dim in 8usize..300) {
            let v = hash_embed_one(&s, dim);
            prop_assert_eq!(v.len(), dim);
            if tokenize(&s).is_empty() {
                prop_assert!(v.iter().all(|&x| x == 0.0));
            } else {
                prop_assert!((norm(&v) - 1.0).abs() < 1e-6);
            }
        }
    }
}
