//! Rule-based sentence splitting.
//!
//! A sentence ends at a run of `.`, `!` or `?` (optionally followed by closing
//! quotes/brackets and by citation markers such as `[2][3]`) when the next
//! non-space character is upper-case or the text ends. A `.` that closes a
//! known abbreviation never ends a sentence.

use std::ops::Range;

/// Abbreviations that do not end a sentence (compared case-insensitively).
pub const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "cf.", "al.", "approx.", "no.", "nos.", "art.", "sec.", "secs.", "para.", "fig.",
    "p.", "pp.", "vol.", "ch.", "inc.", "ltd.", "co.", "corp.", "llc.", "plc.", "dept.", "mr.", "mrs.", "ms.", "dr.",
    "prof.", "st.", "jr.", "sr.", "u.s.", "u.k.", "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.",
    "sept.", "oct.", "nov.", "dec.",
];

const TERMINATORS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

/// Byte ranges of the sentences in `text`, trimmed of surrounding whitespace.
pub fn sentence_spans(text: &str) -> Vec<Range<usize>> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < text.len() {
        let c = text[i..].chars().next().unwrap();
        if !TERMINATORS.contains(&c) {
            i += c.len_utf8();
            continue;
        }
        let mut j = i;
        while let Some(c) = text[j..].chars().next().filter(|c| TERMINATORS.contains(c)) {
            j += c.len_utf8();
        }
        while let Some(c) = text[j..].chars().next().filter(|c| CLOSERS.contains(c) && !text[j..].starts_with('[')) {
            j += c.len_utf8();
        }
        let end = skip_markers(text, j);
        let rest = &text[end..];
        let next = rest.trim_start();
        let boundary = if next.is_empty() {
            true
        } else {
            rest.len() != next.len()
                && next.chars().next().is_some_and(char::is_uppercase)
                && !(c == '.' && j - i == 1 && is_abbreviation(&text[start..j]))
        };
        if boundary {
            push_trimmed(text, start, end, &mut spans);
            start = end;
        }
        i = end.max(j).max(i + 1);
        debug_assert!(i <= bytes.len());
    }
    push_trimmed(text, start, text.len(), &mut spans);
    spans
}

/// Advances past any whitespace-separated `[n]` markers starting at `pos`.
fn skip_markers(text: &str, mut pos: usize) -> usize {
    loop {
        let rest = &text[pos..];
        let trimmed = rest.trim_start();
        let Some(body) = trimmed.strip_prefix('[') else { return pos };
        let digits = body.bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 || body.as_bytes().get(digits) != Some(&b']') {
            return pos;
        }
        pos += (rest.len() - trimmed.len()) + 1 + digits + 1;
    }
}

fn is_abbreviation(sentence_so_far: &str) -> bool {
    let word = sentence_so_far.rsplit(char::is_whitespace).next().unwrap_or("");
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<Range<usize>>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail < slice.len() {
        out.push(start + lead..end - trail);
    }
}

pub fn split_sentences(text: &str) -> Vec<String> {
    sentence_spans(text).into_iter().map(|r| text[r].to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sentences() {
        assert_eq!(split_sentences("A is true. B is false."), ["A is true.", "B is false."]);
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(split_sentences("See No. 5 of the lease."), ["See No. 5 of the lease."]);
        assert_eq!(
            split_sentences("Acme Inc. Reported growth. Then stopped."),
            ["Acme Inc. Reported growth.", "Then stopped."]
        );
        assert_eq!(split_sentences("Use e.g. Rust here."), ["Use e.g. Rust here."]);
    }

    #[test]
    fn empty_and_blank() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n ").is_empty());
    }

    #[test]
    fn lowercase_continuation_is_not_a_boundary() {
        assert_eq!(split_sentences("Version 2.0 shipped. then more"), ["Version 2.0 shipped. then more"]);
    }

    #[test]
    fn question_and_exclamation_runs() {
        assert_eq!(split_sentences("Really?! Yes. Done"), ["Really?!", "Yes.", "Done"]);
    }

    #[test]
    fn citation_markers_stay_with_their_sentence() {
        assert_eq!(
            split_sentences("Fact A. [1][2] Fact B. [3] Fact C."),
            ["Fact A. [1][2]", "Fact B. [3]", "Fact C."]
        );
        assert_eq!(split_sentences("Rent is due monthly. [1]"), ["Rent is due monthly. [1]"]);
    }

    #[test]
    fn closing_quote_after_terminator() {
        assert_eq!(split_sentences("He said \"Stop.\" Then left."), ["He said \"Stop.\"", "Then left."]);
    }

    #[test]
    fn unicode_text() {
        assert_eq!(split_sentences("Ça va. Été chaud!"), ["Ça va.", "Été chaud!"]);
    }
}
