use serde::{Deserialize, Serialize};

use super::{CorpusError, DocId, Document, Mention};
use crate::text::tokenize_spanned;

pub const MAX_CHUNK_TOKENS: usize = 100;

/// A hyperlink inside an article, as a half-open char span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub entity: String,
    pub start: usize,
    pub end: usize,
}

/// One line of `articles.jsonl`: pre-extracted article text with its links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub entity: String,
    pub text: String,
    #[serde(default)]
    pub links: Vec<Link>,
}

/// Cuts an article into chunks of exactly [`MAX_CHUNK_TOKENS`] tokens plus a
/// final remainder, converting char-span links into token-offset mentions.
///
/// A link straddling a chunk boundary is attached to the chunk holding its
/// first token and clipped to that chunk's end.
pub fn chunk_article(article: &str, text: &str, links: &[Link]) -> Result<Vec<Document>, CorpusError> {
    let tokens = tokenize_spanned(text);
    let char_len = text.chars().count();
    let invalid = |l: &Link| CorpusError::InvalidSpan {
        article: article.to_string(),
        entity: l.entity.clone(),
        start: l.start,
        end: l.end,
    };

    // token ranges per link; links are sorted and non-overlapping
    let mut spans = Vec::with_capacity(links.len());
    let mut prev_end = 0;
    let mut cursor = 0;
    for l in links {
        if l.start >= l.end || l.end > char_len || l.start < prev_end {
            return Err(invalid(l));
        }
        prev_end = l.end;
        while cursor < tokens.len() && tokens[cursor].char_end <= l.start {
            cursor += 1;
        }
        if cursor == tokens.len() || tokens[cursor].char_start >= l.end {
            return Err(invalid(l));
        }
        let first = cursor;
        let mut last = first;
        while last + 1 < tokens.len() && tokens[last + 1].char_start < l.end {
            last += 1;
        }
        spans.push((l.entity.clone(), first, last + 1));
    }

    let mut docs: Vec<Document> = tokens
        .chunks(MAX_CHUNK_TOKENS)
        .enumerate()
        .map(|(i, chunk)| Document {
            id: DocId::new(article, i as u32),
            text: chunk.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" "),
            tokens: chunk.len(),
            mentions: Vec::new(),
        })
        .collect();
    for (entity, first, end) in spans {
        let c = first / MAX_CHUNK_TOKENS;
        let offset = c * MAX_CHUNK_TOKENS;
        let doc = &mut docs[c];
        doc.mentions.push(Mention { entity, start: first - offset, end: end.min(offset + doc.tokens) - offset });
    }
    Ok(docs)
}
