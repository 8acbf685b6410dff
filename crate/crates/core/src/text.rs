//! Whitespace tokenization for text responses.
//!
//! Text produced by generators is split on Unicode whitespace; each word maps
//! to a stable id by hashing it into a fixed-size vocabulary, so the same word
//! always gets the same id regardless of processing order.

use sha2::{Digest, Sha256};

use crate::types::TokenSequence;

/// Default size of the hashed vocabulary used for text responses.
pub const DEFAULT_HASH_VOCAB: usize = 4096;

/// Count of whitespace-delimited words.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Stable id of a single word within a vocabulary of `vocab` entries.
pub fn word_id(word: &str, vocab: usize) -> u32 {
    assert!(vocab > 0, "vocabulary must be non-empty");
    let digest = Sha256::digest(word.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(head) % vocab as u64) as u32
}

/// Tokenizes `text` into a [`TokenSequence`] that keeps the surface string.
pub fn tokenize(text: &str, vocab: usize) -> TokenSequence {
    TokenSequence {
        tokens: text.split_whitespace().map(|w| word_id(w, vocab)).collect(),
        text: Some(text.to_string()),
    }
}

/// Byte length of the prefix of `text` that ends right after its `k`-th word.
///
/// Leading whitespace is included; whitespace after the `k`-th word is not.
/// Returns `None` when the text has fewer than `k` words.
pub fn word_prefix_len(text: &str, k: usize) -> Option<usize> {
    if k == 0 {
        return Some(0);
    }
    let mut seen = 0;
    let mut in_word = false;
    for (idx, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_word {
                seen += 1;
                if seen == k {
                    return Some(idx);
                }
            }
            in_word = false;
        } else {
            in_word = true;
        }
    }
    if in_word && seen + 1 == k {
        Some(text.len())
    } else {
        None
    }
}

/// The prefix of `text` spanning its first `k` words.
pub fn word_prefix(text: &str, k: usize) -> Option<&str> {
    word_prefix_len(text, k).map(|n| &text[..n])
}
