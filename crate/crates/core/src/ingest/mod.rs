//! Source normalization and token-window chunking.

mod chunk;
mod markup;
mod tokenize;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::{chunk_document, Chunk, ChunkingPolicy, TokenSpan};
pub use markup::{decode_entities, normalize_lines, strip_html, strip_markdown};
pub use tokenize::{content_terms, is_punct, tokenize, CharIndex, CharSpan, Token, TokenSequence};

use crate::util::short_hash;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source is not valid UTF-8: {0}")]
    Decode(#[from] std::string::FromUtf8Error),
    #[error("document {0:?} has no text after normalization")]
    EmptyDocument(String),
    #[error("row {row} has {found} values, header has {expected}")]
    ArityMismatch { row: usize, expected: usize, found: usize },
    #[error("table has no data rows")]
    EmptyTable,
    #[error("row template references unknown column {0:?}")]
    UnknownColumn(String),
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid chunking policy: overlap {overlap} must be below chunk size {chunk}")]
    InvalidPolicy { chunk: usize, overlap: usize },
    #[error("unknown document format {0:?}")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocFormat {
    Plain,
    Markdown,
    Html,
    /// CSV with a header row; rows are rendered as sentences.
    Table,
}

impl DocFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            DocFormat::Plain => "plain",
            DocFormat::Markdown => "markdown",
            DocFormat::Html => "html",
            DocFormat::Table => "table",
        }
    }
}

impl fmt::Display for DocFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plain" | "text" | "txt" => Ok(DocFormat::Plain),
            "markdown" | "md" => Ok(DocFormat::Markdown),
            "html" | "htm" => Ok(DocFormat::Html),
            "table" | "csv" => Ok(DocFormat::Table),
            _ => Err(IngestError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source_uri: String,
    pub format: DocFormat,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// One line of an ingestion manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub uri: String,
    pub format: DocFormat,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Stable document id derived from the source location.
pub fn doc_id_for(source_uri: &str) -> String {
    short_hash(&[source_uri.as_bytes()])
}

pub fn load_document(bytes: &[u8], format: DocFormat, source_uri: &str) -> Result<Document, IngestError> {
    let raw = String::from_utf8(bytes.to_vec())?;
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(&raw);
    let text = match format {
        DocFormat::Plain => raw.to_string(),
        DocFormat::Markdown => strip_markdown(raw),
        DocFormat::Html => strip_html(raw),
        DocFormat::Table => {
            let (header, rows) = parse_csv(raw)?;
            render_rows(&header, &rows, None)?
        }
    };
    if text.trim().is_empty() {
        return Err(IngestError::EmptyDocument(source_uri.to_string()));
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("format".to_string(), format.to_string());
    metadata.insert("source_uri".to_string(), source_uri.to_string());
    Ok(Document {
        doc_id: doc_id_for(source_uri),
        source_uri: source_uri.to_string(),
        format,
        text,
        metadata,
    })
}

/// Splits CSV text into a header and data rows. Row arity is checked later.
pub fn parse_csv(raw: &str) -> Result<(Vec<String>, Vec<Vec<String>>), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Renders table rows as one natural-language sentence per row.
///
/// Without a template each row becomes `"col1: v1; col2: v2."`. A template
/// uses `{column}` placeholders, e.g. `"{name} reported ARR of {arr}."`.
pub fn serialize_rows(
    header: &[String],
    rows: &[Vec<String>],
    template: Option<&str>,
) -> Result<Document, IngestError> {
    let text = render_rows(header, rows, template)?;
    let source_uri = format!("table:{}", short_hash(&[text.as_bytes()]));
    let mut metadata = BTreeMap::new();
    metadata.insert("format".to_string(), DocFormat::Table.to_string());
    metadata.insert("rows".to_string(), rows.len().to_string());
    Ok(Document {
        doc_id: doc_id_for(&source_uri),
        source_uri,
        format: DocFormat::Table,
        text,
        metadata,
    })
}

fn render_rows(header: &[String], rows: &[Vec<String>], template: Option<&str>) -> Result<String, IngestError> {
    if rows.is_empty() {
        return Err(IngestError::EmptyTable);
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(IngestError::ArityMismatch { row: i, expected: header.len(), found: row.len() });
        }
    }
    if let Some(t) = template {
        check_template(t, header)?;
    }
    let lines: Vec<String> = rows
        .iter()
        .map(|row| match template {
            None => {
                let fields: Vec<String> = header.iter().zip(row).map(|(h, v)| format!("{h}: {v}")).collect();
                format!("{}.", fields.join("; "))
            }
            Some(t) => header
                .iter()
                .zip(row)
                .fold(t.to_string(), |acc, (h, v)| acc.replace(&format!("{{{h}}}"), v)),
        })
        .collect();
    Ok(lines.join("\n"))
}

fn check_template(template: &str, header: &[String]) -> Result<(), IngestError> {
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        let name = &after[..close];
        if !header.iter().any(|h| h == name) {
            return Err(IngestError::UnknownColumn(name.to_string()));
        }
        rest = &after[close + 1..];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn plain_passes_through() {
        let doc = load_document(b"Hello world", DocFormat::Plain, "mem://a").unwrap();
        assert_eq!(doc.text, "Hello world");
        assert_eq!(doc.metadata["format"], "plain");
        assert_eq!(doc.metadata["source_uri"], "mem://a");
    }

    #[test]
    fn html_is_stripped() {
        let doc = load_document(b"<p>Tax is due.</p>", DocFormat::Html, "mem://b").unwrap();
        assert_eq!(doc.text, "Tax is due.");
    }

    #[test]
    fn empty_and_invalid_sources() {
        assert!(matches!(load_document(b"", DocFormat::Plain, "x"), Err(IngestError::EmptyDocument(_))));
        assert!(matches!(
            load_document(b"<div> </div>", DocFormat::Html, "x"),
            Err(IngestError::EmptyDocument(_))
        ));
        assert!(matches!(load_document(&[0xff, 0xfe, 0x41], DocFormat::Plain, "x"), Err(IngestError::Decode(_))));
    }

    #[test]
    fn doc_id_is_stable() {
        let a = load_document(b"abc", DocFormat::Plain, "file:///a.txt").unwrap();
        let b = load_document(b"abc", DocFormat::Plain, "file:///a.txt").unwrap();
        assert_eq!(a.doc_id, b.doc_id);
        assert_ne!(a.doc_id, doc_id_for("file:///b.txt"));
    }

    #[test]
    fn default_row_sentence() {
        let doc = serialize_rows(&s(&["name", "arr"]), &[s(&["Acme", "1.2M"])], None).unwrap();
        assert_eq!(doc.text, "name: Acme; arr: 1.2M.");
    }

    #[test]
    fn row_errors() {
        assert!(matches!(serialize_rows(&s(&["a"]), &[], None), Err(IngestError::EmptyTable)));
        assert!(matches!(
            serialize_rows(&s(&["a", "b"]), &[s(&["1", "2", "3"])], None),
            Err(IngestError::ArityMismatch { row: 0, expected: 2, found: 3 })
        ));
        assert!(matches!(
            serialize_rows(&s(&["a"]), &[s(&["1"])], Some("{zzz}")),
            Err(IngestError::UnknownColumn(_))
        ));
    }

    #[test]
    fn templated_rows() {
        let doc = serialize_rows(
            &s(&["name", "arr"]),
            &[s(&["Acme", "1.2M"]), s(&["Beta", "3M"])],
            Some("{name} reported ARR of {arr}."),
        )
        .unwrap();
        assert_eq!(doc.text, "Acme reported ARR of 1.2M.\nBeta reported ARR of 3M.");
    }

    #[test]
    fn csv_table_document() {
        let doc = load_document(b"name,arr\nAcme,1.2M\nBeta, 3M\n", DocFormat::Table, "db://t").unwrap();
        assert_eq!(doc.text, "name: Acme; arr: 1.2M.\nname: Beta; arr: 3M.");
        assert!(matches!(
            load_document(b"name,arr\nAcme\n", DocFormat::Table, "db://t"),
            Err(IngestError::ArityMismatch { .. })
        ));
        assert!(matches!(load_document(b"name,arr\n", DocFormat::Table, "db://t"), Err(IngestError::EmptyTable)));
    }

    #[test]
    fn manifest_line() {
        let e: ManifestEntry = serde_json::from_str(r#"{"uri":"a.md","format":"markdown"}"#).unwrap();
        assert_eq!(e.format, DocFormat::Markdown);
        assert!(e.metadata.is_empty());
    }
}
