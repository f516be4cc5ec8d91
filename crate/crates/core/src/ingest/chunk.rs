use serde::{Deserialize, Serialize};

use super::tokenize::{tokenize, CharIndex, CharSpan};
use super::{Document, IngestError};
use crate::util::short_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingPolicy {
    pub chunk_tokens: usize,
    pub overlap_tokens: usize,
}

impl Default for ChunkingPolicy {
    fn default() -> Self {
        Self { chunk_tokens: 1000, overlap_tokens: 150 }
    }
}

impl ChunkingPolicy {
    pub fn new(chunk_tokens: usize, overlap_tokens: usize) -> Result<Self, IngestError> {
        let policy = Self { chunk_tokens, overlap_tokens };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.chunk_tokens == 0 || self.overlap_tokens >= self.chunk_tokens {
            return Err(IngestError::InvalidPolicy { chunk: self.chunk_tokens, overlap: self.overlap_tokens });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_tokens - self.overlap_tokens
    }

    /// `[start, end)` token windows for a document of `total` tokens.
    pub fn windows(&self, total: usize) -> Vec<TokenSpan> {
        let mut out = Vec::new();
        if total == 0 {
            return out;
        }
        let mut start = 0;
        loop {
            let end = (start + self.chunk_tokens).min(total);
            out.push(TokenSpan { start, end });
            if end == total {
                return out;
            }
            start += self.stride();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub seq_no: usize,
    pub token_span: TokenSpan,
    pub char_span: CharSpan,
    pub text: String,
}

pub fn chunk_id_for(doc_id: &str, seq_no: usize, char_span: CharSpan) -> String {
    short_hash(&[
        doc_id.as_bytes(),
        &(seq_no as u64).to_le_bytes(),
        &(char_span.start as u64).to_le_bytes(),
        &(char_span.end as u64).to_le_bytes(),
    ])
}

/// Splits a document into overlapping token windows. The final window may be
/// shorter than `chunk_tokens`; every token lands in at least one chunk.
pub fn chunk_document(doc: &Document, policy: &ChunkingPolicy) -> Result<Vec<Chunk>, IngestError> {
    policy.validate()?;
    let tokens = tokenize(&doc.text);
    let index = CharIndex::new(&doc.text);
    let chunks = policy
        .windows(tokens.len())
        .into_iter()
        .enumerate()
        .map(|(seq_no, span)| {
            let char_span = CharSpan::new(tokens.tokens[span.start].span.start, tokens.tokens[span.end - 1].span.end);
            Chunk {
                chunk_id: chunk_id_for(&doc.doc_id, seq_no, char_span),
                doc_id: doc.doc_id.clone(),
                seq_no,
                token_span: span,
                char_span,
                text: index.slice(char_span).to_string(),
            }
        })
        .collect();
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{load_document, DocFormat};

    fn doc_of(tokens: usize) -> Document {
        let text = (0..tokens).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        load_document(text.as_bytes(), DocFormat::Plain, "mem://doc").unwrap()
    }

    #[test]
    fn two_thousand_tokens_three_chunks() {
        let chunks = chunk_document(&doc_of(2000), &ChunkingPolicy::default()).unwrap();
        let starts: Vec<_> = chunks.iter().map(|c| c.token_span.start).collect();
        assert_eq!(starts, [0, 850, 1700]);
        assert_eq!(chunks.last().unwrap().token_span.end, 2000);
        // ceil((T - C) / (C - O)) + 1
        assert_eq!(chunks.len(), (2000usize - 1000).div_ceil(850) + 1);
    }

    #[test]
    fn short_doc_single_chunk() {
        let doc = doc_of(500);
        let chunks = chunk_document(&doc, &ChunkingPolicy::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_span, TokenSpan { start: 0, end: 500 });
        assert_eq!(chunks[0].text, doc.text);
    }

    #[test]
    fn exact_multiple_has_no_redundant_tail() {
        let chunks = chunk_document(&doc_of(1850), &ChunkingPolicy::default()).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| (c.token_span.start, c.token_span.end)).collect();
        assert_eq!(spans, [(0, 1000), (850, 1850)]);
    }

    #[test]
    fn chunk_text_matches_char_span() {
        let doc = load_document("Ünïcode  text, with   gaps.\nNext line!".as_bytes(), DocFormat::Plain, "m").unwrap();
        let chunks = chunk_document(&doc, &ChunkingPolicy::new(3, 1).unwrap()).unwrap();
        let idx = CharIndex::new(&doc.text);
        for c in &chunks {
            assert_eq!(c.text, idx.slice(c.char_span));
        }
        assert_eq!(chunks[0].text, "Ünïcode  text,");
    }

    #[test]
    fn invalid_policy_rejected() {
        assert!(ChunkingPolicy::new(10, 10).is_err());
        assert!(ChunkingPolicy::new(0, 0).is_err());
        let bad = ChunkingPolicy { chunk_tokens: 5, overlap_tokens: 7 };
        assert!(chunk_document(&doc_of(10), &bad).is_err());
    }

    #[test]
    fn ids_are_deterministic() {
        let a = chunk_document(&doc_of(3000), &ChunkingPolicy::default()).unwrap();
        let b = chunk_document(&doc_of(3000), &ChunkingPolicy::default()).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<_> = a.iter().map(|c| &c.chunk_id).collect();
        ids.dedup();
        assert_eq!(ids.len(), a.len());
    }
}
