//! Deterministic whitespace + punctuation tokenizer.
//!
//! Text is split on unicode whitespace; each resulting piece then has its
//! leading and trailing punctuation peeled off, one token per punctuation
//! character. Interior punctuation ("e.g", "1.2M", "don't") stays attached.
//! Spans are expressed in characters, not bytes.

use serde::{Deserialize, Serialize};

/// Half-open `[start, end)` range of character offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub span: CharSpan,
}

impl Token {
    /// True when every character of the surface is punctuation or a symbol.
    pub fn is_punct(&self) -> bool {
        self.surface.chars().all(is_punct)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.tokens.iter()
    }

    /// Lower-cased surfaces of the non-punctuation tokens.
    pub fn content_terms(&self) -> Vec<String> {
        self.tokens
            .iter()
            .filter(|t| !t.is_punct())
            .map(|t| t.surface.to_lowercase())
            .collect()
    }
}

pub fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

pub fn tokenize(text: &str) -> TokenSequence {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        split_piece(&chars, start, i, &mut tokens);
    }
    TokenSequence { tokens }
}

fn split_piece(chars: &[char], start: usize, end: usize, out: &mut Vec<Token>) {
    let mut lead = start;
    while lead < end && is_punct(chars[lead]) {
        lead += 1;
    }
    if lead == end {
        for p in start..end {
            out.push(single(chars, p));
        }
        return;
    }
    let mut trail = end;
    while trail > lead && is_punct(chars[trail - 1]) {
        trail -= 1;
    }
    for p in start..lead {
        out.push(single(chars, p));
    }
    out.push(Token {
        surface: chars[lead..trail].iter().collect(),
        span: CharSpan::new(lead, trail),
    });
    for p in trail..end {
        out.push(single(chars, p));
    }
}

fn single(chars: &[char], p: usize) -> Token {
    Token {
        surface: chars[p].to_string(),
        span: CharSpan::new(p, p + 1),
    }
}

/// Lower-cased, punctuation-free terms of `text`. This is the term unit used by
/// the lexical index and by every overlap measure.
pub fn content_terms(text: &str) -> Vec<String> {
    tokenize(text).content_terms()
}

/// Maps character offsets to byte offsets for one string.
pub struct CharIndex<'a> {
    text: &'a str,
    offsets: Vec<usize>,
}

impl<'a> CharIndex<'a> {
    pub fn new(text: &'a str) -> Self {
        let mut offsets: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        offsets.push(text.len());
        Self { text, offsets }
    }

    pub fn char_len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn slice(&self, span: CharSpan) -> &'a str {
        &self.text[self.offsets[span.start]..self.offsets[span.end]]
    }
}
