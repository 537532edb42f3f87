//! Tokenization shared by chunking, BM25 and the reference encoder.
//!
//! A token is a maximal run of non-whitespace characters, NFC-normalized.

use unicode_normalization::UnicodeNormalization;

/// A token and the half-open char range it occupies in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.nfc().collect()).collect()
}

/// Like [`tokenize`], keeping char offsets into the original text.
pub fn tokenize_spanned(text: &str) -> Vec<SpannedToken> {
    let mut out = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for (idx, ch) in text.chars().enumerate() {
        if ch.is_whitespace() {
            if let Some((start, raw)) = current.take() {
                out.push(SpannedToken { text: raw.nfc().collect(), char_start: start, char_end: idx });
            }
        } else {
            current.get_or_insert_with(|| (idx, String::new())).1.push(ch);
        }
    }
    if let Some((start, raw)) = current {
        let end = start + raw.chars().count();
        out.push(SpannedToken { text: raw.nfc().collect(), char_start: start, char_end: end });
    }
    out
}
