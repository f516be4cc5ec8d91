//! Binary snapshot format.
//!
//! ```text
//! "DRK1"                      magic
//! u32  format version
//! u32  section count
//! count × (u32 tag, u64 len)  section table
//! section payloads            in table order
//! u64  checksum               first 8 bytes (LE) of SHA-256 over everything above
//! ```
//!
//! All integers are little-endian; floats are stored as their IEEE-754 bit
//! patterns so a round trip is bit-exact.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::bm25::{Bm25Index, Bm25Params, Posting};
use super::hnsw::{HnswGraph, HnswParams};
use super::{HybridIndex, IndexError};
use crate::ingest::{CharSpan, Chunk, TokenSpan};

pub const MAGIC: &[u8; 4] = b"DRK1";
pub const FORMAT_VERSION: u32 = 1;

const SEC_PARAMS: u32 = 1;
const SEC_POSTINGS: u32 = 2;
const SEC_VECTORS: u32 = 3;
const SEC_GRAPH: u32 = 4;
const SEC_CHUNKS: u32 = 5;

const HEADER_LEN: usize = 12;
const NO_ENTRY: u32 = u32::MAX;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| malformed("unexpected end of section"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, IndexError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn len(&mut self) -> Result<usize, IndexError> {
        usize::try_from(self.u64()?).map_err(|_| malformed("length out of range"))
    }
    /// An element or byte count; can never exceed what is left to read.
    fn count(&mut self) -> Result<usize, IndexError> {
        let n = self.len()?;
        if n > self.buf.len() - self.pos {
            return Err(malformed("count exceeds section size"));
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, IndexError> {
        let n = self.count()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("invalid utf-8"))
    }
    fn finish(&self) -> Result<(), IndexError> {
        if self.pos != self.buf.len() {
            return Err(malformed("trailing bytes in section"));
        }
        Ok(())
    }
}

fn malformed(msg: &str) -> IndexError {
    IndexError::Malformed(msg.to_string())
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn encode(index: &HybridIndex) -> Vec<u8> {
    let sections = [
        (SEC_PARAMS, encode_params(index)),
        (SEC_POSTINGS, encode_postings(&index.bm25)),
        (SEC_VECTORS, encode_vectors(&index.hnsw)),
        (SEC_GRAPH, encode_graph(&index.hnsw)),
        (SEC_CHUNKS, encode_chunks(&index.chunks)),
    ];
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(sections.len() as u32);
    for (tag, body) in &sections {
        w.u32(*tag);
        w.u64(body.len() as u64);
    }
    for (_, body) in &sections {
        w.buf.extend_from_slice(body);
    }
    let sum = checksum(&w.buf);
    w.u64(sum);
    w.buf
}

fn encode_params(index: &HybridIndex) -> Vec<u8> {
    let mut w = Writer::default();
    w.f64(index.bm25_params.k1);
    w.f64(index.bm25_params.b);
    let h = index.hnsw.params();
    w.len(h.m);
    w.len(h.ef_construction);
    w.len(h.ef_search);
    w.u64(h.seed);
    w.len(index.dim.unwrap_or(0));
    w.buf
}

fn encode_postings(bm25: &Bm25Index) -> Vec<u8> {
    let mut w = Writer::default();
    let mut terms: Vec<&String> = bm25.postings.keys().collect();
    terms.sort();
    w.len(terms.len());
    for term in terms {
        let list = &bm25.postings[term];
        w.str(term);
        w.len(list.len());
        for p in list {
            w.u32(p.doc);
            w.u32(p.tf);
        }
    }
    w.len(bm25.doc_lengths.len());
    for &dl in &bm25.doc_lengths {
        w.u32(dl);
    }
    w.buf
}

fn encode_vectors(g: &HnswGraph) -> Vec<u8> {
    let mut w = Writer::default();
    w.len(g.vectors.len());
    for &x in &g.vectors {
        w.f64(x);
    }
    w.buf
}

fn encode_graph(g: &HnswGraph) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(g.entry.unwrap_or(NO_ENTRY));
    w.len(g.max_level);
    w.len(g.links.len());
    for layers in &g.links {
        w.len(layers.len());
        for list in layers {
            w.len(list.len());
            for &nb in list {
                w.u32(nb);
            }
        }
    }
    w.buf
}

fn encode_chunks(chunks: &[Chunk]) -> Vec<u8> {
    let mut w = Writer::default();
    w.len(chunks.len());
    for c in chunks {
        w.str(&c.chunk_id);
        w.str(&c.doc_id);
        w.len(c.seq_no);
        w.len(c.token_span.start);
        w.len(c.token_span.end);
        w.len(c.char_span.start);
        w.len(c.char_span.end);
        w.str(&c.text);
    }
    w.buf
}

pub fn decode(bytes: &[u8]) -> Result<HybridIndex, IndexError> {
    if bytes.len() < HEADER_LEN + 8 {
        return Err(IndexError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(IndexError::ChecksumMismatch);
    }
    if &body[..4] != MAGIC {
        return Err(IndexError::VersionMismatch(String::from_utf8_lossy(&body[..4]).into_owned()));
    }
    let mut r = Reader::new(&body[4..]);
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(IndexError::VersionMismatch(format!("format version {version}")));
    }
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        table.push((r.u32()?, r.count()?));
    }
    let mut sections: HashMap<u32, &[u8]> = HashMap::new();
    for (tag, len) in table {
        sections.insert(tag, r.take(len)?);
    }
    r.finish()?;
    let section = |tag: u32| sections.get(&tag).copied().ok_or_else(|| malformed("missing section"));

    let mut r = Reader::new(section(SEC_PARAMS)?);
    let bm25_params = Bm25Params { k1: r.f64()?, b: r.f64()? };
    let hnsw_params = HnswParams { m: r.len()?, ef_construction: r.len()?, ef_search: r.len()?, seed: r.u64()? };
    let dim = r.len()?;
    r.finish()?;

    let mut r = Reader::new(section(SEC_POSTINGS)?);
    let mut bm25 = Bm25Index::new();
    for _ in 0..r.count()? {
        let term = r.str()?;
        let n = r.count()?;
        let mut list = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            list.push(Posting { doc: r.u32()?, tf: r.u32()? });
        }
        bm25.postings.insert(term, list);
    }
    for _ in 0..r.count()? {
        let dl = r.u32()?;
        bm25.doc_lengths.push(dl);
        bm25.total_len += dl as u64;
    }
    r.finish()?;

    let mut graph = HnswGraph::new(hnsw_params, dim);
    let mut r = Reader::new(section(SEC_VECTORS)?);
    for _ in 0..r.count()? {
        graph.vectors.push(r.f64()?);
    }
    r.finish()?;

    let mut r = Reader::new(section(SEC_GRAPH)?);
    let entry = r.u32()?;
    graph.entry = (entry != NO_ENTRY).then_some(entry);
    graph.max_level = r.len()?;
    for _ in 0..r.count()? {
        let mut layers = Vec::new();
        for _ in 0..r.count()? {
            let mut list = Vec::new();
            for _ in 0..r.count()? {
                list.push(r.u32()?);
            }
            layers.push(list);
        }
        graph.links.push(layers);
    }
    r.finish()?;

    let mut r = Reader::new(section(SEC_CHUNKS)?);
    let mut chunks = Vec::new();
    for _ in 0..r.count()? {
        let chunk_id = r.str()?;
        let doc_id = r.str()?;
        let seq_no = r.len()?;
        let token_span = TokenSpan { start: r.len()?, end: r.len()? };
        let char_span = CharSpan { start: r.len()?, end: r.len()? };
        let text = r.str()?;
        chunks.push(Chunk { chunk_id, doc_id, seq_no, token_span, char_span, text });
    }
    r.finish()?;

    HybridIndex::from_parts(bm25_params, (dim > 0).then_some(dim), chunks, bm25, graph)
}

pub fn save(index: &HybridIndex, path: &Path) -> Result<(), IndexError> {
    let bytes = encode(index);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<HybridIndex, IndexError> {
    decode(&fs::read(path)?)
}
