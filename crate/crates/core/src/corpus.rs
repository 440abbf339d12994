//! Documents, segmentation, vocabulary and bag-of-words features.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of segments per document.
pub const DEFAULT_SEGMENTS: usize = 20;

/// Splits text into lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn from_text(doc_id: impl Into<String>, text: &str) -> Self {
        Self {
            doc_id: doc_id.into(),
            tokens: tokenize(text),
        }
    }
}

/// A document cut into exactly `B` contiguous token blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedDocument {
    pub doc_id: String,
    pub segments: Vec<Vec<String>>,
}

impl SegmentedDocument {
    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.segments.iter().flatten()
    }
}

/// Splits a document into `segments` contiguous blocks whose lengths differ
/// by at most one. The first `len % segments` blocks carry the extra token.
pub fn segment_document(doc: &Document, segments: usize) -> Result<SegmentedDocument> {
    if segments == 0 {
        return Err(Error::invalid("segment count must be at least 1"));
    }
    let len = doc.tokens.len();
    let base = len / segments;
    let extra = len % segments;
    let mut out = Vec::with_capacity(segments);
    let mut start = 0;
    for i in 0..segments {
        let size = base + usize::from(i < extra);
        out.push(doc.tokens[start..start + size].to_vec());
        start += size;
    }
    debug_assert_eq!(start, len);
    Ok(SegmentedDocument {
        doc_id: doc.doc_id.clone(),
        segments: out,
    })
}

/// Term index with document frequencies.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    num_docs: usize,
}

impl Vocabulary {
    /// Vocabulary size `W`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn doc_freq(&self, index: usize) -> usize {
        self.doc_freq[index]
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }
}

/// Indexes terms in first-appearance order; document frequency counts each
/// document once regardless of how many segments contain the term.
pub fn build_vocabulary(corpus: &[SegmentedDocument]) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary over an empty corpus"));
    }
    let mut index = HashMap::new();
    let mut terms = Vec::new();
    let mut doc_freq: Vec<usize> = Vec::new();
    for doc in corpus {
        let mut seen = HashSet::new();
        for tok in doc.tokens() {
            let id = *index.entry(tok.clone()).or_insert_with(|| {
                terms.push(tok.clone());
                doc_freq.push(0);
                terms.len() - 1
            });
            if seen.insert(id) {
                doc_freq[id] += 1;
            }
        }
    }
    Ok(Vocabulary {
        index,
        terms,
        doc_freq,
        num_docs: corpus.len(),
    })
}

/// Sparse vector with entries sorted by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut sum = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    sum += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        sum
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Cosine similarity; zero when either vector is zero.
    pub fn cosine(&self, other: &SparseVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }

    /// Returns `self + scale * other`.
    pub fn add_scaled(&self, other: &SparseVector, scale: f64) -> SparseVector {
        let mut dense = self.to_dense();
        for &(i, v) in &other.entries {
            dense[i] += scale * v;
        }
        SparseVector::from_dense(&dense)
    }

    pub fn normalized(&self) -> SparseVector {
        let norm = self.norm();
        if norm == 0.0 {
            return self.clone();
        }
        SparseVector {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, v)| (i, v / norm)).collect(),
        }
    }
}

/// TF-IDF features of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub doc_index: usize,
    pub segment_index: usize,
    pub weights: SparseVector,
}

/// TF-IDF weights `tf(t) * ln(1 + N / df(t))`, L2-normalized. Tokens missing
/// from the vocabulary are ignored.
pub fn featurize(tokens: &[String], vocab: &Vocabulary, corpus_size: usize) -> SparseVector {
    let mut tf: HashMap<usize, usize> = HashMap::new();
    for tok in tokens {
        if let Some(id) = vocab.index_of(tok) {
            *tf.entry(id).or_default() += 1;
        }
    }
    let mut entries: Vec<(usize, f64)> = tf
        .into_iter()
        .map(|(id, count)| {
            let idf = (1.0 + corpus_size as f64 / vocab.doc_freq(id) as f64).ln();
            (id, count as f64 * idf)
        })
        .collect();
    entries.sort_unstable_by_key(|&(i, _)| i);
    SparseVector {
        dim: vocab.len(),
        entries,
    }
    .normalized()
}

/// Features of every segment of every document, ordered document-major.
pub fn featurize_segments(corpus: &[SegmentedDocument], vocab: &Vocabulary) -> Vec<SegmentFeatures> {
    corpus
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| {
            doc.segments.iter().enumerate().map(move |(s, seg)| SegmentFeatures {
                doc_index: d,
                segment_index: s,
                weights: featurize(seg, vocab, corpus.len()),
            })
        })
        .collect()
}

/// Whole-document TF-IDF vectors, used by the lexical baselines.
pub fn featurize_documents(corpus: &[SegmentedDocument], vocab: &Vocabulary) -> Vec<SparseVector> {
    corpus
        .iter()
        .map(|doc| {
            let tokens: Vec<String> = doc.tokens().cloned().collect();
            featurize(&tokens, vocab, corpus.len())
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    doc_id: String,
    text: String,
}

/// Reads a line-delimited JSON corpus of `{"doc_id", "text"}` records.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !ids.insert(rec.doc_id.clone()) {
            return Err(parse_err(format!("duplicate doc_id {:?}", rec.doc_id)));
        }
        docs.push(Document::from_text(rec.doc_id, &rec.text));
    }
    Ok(docs)
}

/// Writes documents as `{"doc_id", "text"}` lines, joining tokens by spaces.
pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in docs {
        let rec = CorpusRecord {
            doc_id: doc.doc_id.clone(),
            text: doc.tokens.join(" "),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::from_text(id, text)
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Leaning Tower, Pisa!"), ["leaning", "tower", "pisa"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A a A"), ["a", "a", "a"]);
    }

    #[test]
    fn even_split() {
        let text: Vec<String> = (0..40).map(|i| format!("t{i}")).collect();
        let d = doc("d", &text.join(" "));
        let s = segment_document(&d, 20).unwrap();
        assert_eq!(s.segments.len(), 20);
        assert!(s.segments.iter().all(|b| b.len() == 2));
    }

    #[test]
    fn empty_doc_gives_empty_blocks() {
        let s = segment_document(&doc("d", ""), DEFAULT_SEGMENTS).unwrap();
        assert_eq!(s.segments.len(), 20);
        assert!(s.segments.iter().all(Vec::is_empty));
    }

    #[test]
    fn zero_segments_rejected() {
        assert!(segment_document(&doc("d", "a b"), 0).is_err());
    }

    #[test]
    fn uneven_split_is_ceil_then_floor() {
        let s = segment_document(&doc("d", "a b c d e f g"), 3).unwrap();
        let lens: Vec<usize> = s.segments.iter().map(Vec::len).collect();
        assert_eq!(lens, [3, 2, 2]);
    }

    #[test]
    fn vocabulary_examples() {
        let corpus = vec![
            segment_document(&doc("a", "x y"), 2).unwrap(),
            segment_document(&doc("b", "y z"), 2).unwrap(),
        ];
        let v = build_vocabulary(&corpus).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.doc_freq(v.index_of("y").unwrap()), 2);
        assert_eq!(v.doc_freq(v.index_of("x").unwrap()), 1);

        let disjoint = vec![
            segment_document(&doc("a", "p q r"), 1).unwrap(),
            segment_document(&doc("b", "s t"), 1).unwrap(),
        ];
        assert_eq!(build_vocabulary(&disjoint).unwrap().len(), 5);
        assert!(build_vocabulary(&[]).is_err());
    }

    #[test]
    fn repeated_term_in_one_document_counts_once() {
        let corpus = vec![segment_document(&doc("a", "x x x x"), 4).unwrap()];
        let v = build_vocabulary(&corpus).unwrap();
        assert_eq!(v.doc_freq(0), 1);
    }

    #[test]
    fn featurize_examples() {
        let corpus = vec![
            segment_document(&doc("a", "x y w"), 1).unwrap(),
            segment_document(&doc("b", "x y z"), 1).unwrap(),
        ];
        let v = build_vocabulary(&corpus).unwrap();
        assert_eq!(featurize(&[], &v, 2).nnz(), 0);

        let one = featurize(&tokenize("w"), &v, 2);
        assert_eq!(one.nnz(), 1);
        assert!((one.norm() - 1.0).abs() < 1e-12);

        // x and y share df = 2, so the ratio is the tf ratio.
        let f = featurize(&tokenize("x x y"), &v, 2);
        let dense = f.to_dense();
        let (x, y) = (dense[v.index_of("x").unwrap()], dense[v.index_of("y").unwrap()]);
        assert!((x / y - 2.0).abs() < 1e-12);
        assert!((f.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_vocabulary_tokens_are_ignored() {
        let corpus = vec![segment_document(&doc("a", "x"), 1).unwrap()];
        let v = build_vocabulary(&corpus).unwrap();
        assert_eq!(featurize(&tokenize("q r s"), &v, 1).nnz(), 0);
    }

    #[test]
    fn corpus_file_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let docs = vec![doc("a", "hello world"), doc("b", "")];
        write_corpus(&path, &docs).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), docs);

        std::fs::write(&path, "{\"doc_id\":\"a\",\"text\":\"x\"}\n{\"doc_id\":\"a\",\"text\":\"y\"}\n").unwrap();
        let err = read_corpus(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    proptest! {
        #[test]
        fn segmentation_is_a_partition(len in 0usize..200, b in 1usize..40) {
            let tokens: Vec<String> = (0..len).map(|i| format!("w{}", i % 7)).collect();
            let d = Document { doc_id: "d".into(), tokens: tokens.clone() };
            let s = segment_document(&d, b).unwrap();
            prop_assert_eq!(s.segments.len(), b);
            let joined: Vec<String> = s.tokens().cloned().collect();
            prop_assert_eq!(joined, tokens);
            let max = s.segments.iter().map(Vec::len).max().unwrap();
            let min = s.segments.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn featurize_is_scale_free(words in proptest::collection::vec(0usize..6, 1..20)) {
            let tokens: Vec<String> = words.iter().map(|w| format!("w{w}")).collect();
            let corpus = vec![
                segment_document(&Document { doc_id: "a".into(), tokens: tokens.clone() }, 2).unwrap(),
                segment_document(&Document { doc_id: "b".into(), tokens: (0..6).map(|w| format!("w{w}")).collect() }, 2).unwrap(),
            ];
            let v = build_vocabulary(&corpus).unwrap();
            let doubled: Vec<String> = tokens.iter().flat_map(|t| [t.clone(), t.clone()]).collect();
            let (f1, f2) = (featurize(&tokens, &v, 2), featurize(&doubled, &v, 2));
            prop_assert_eq!(f1.dim, v.len());
            for (a, b) in f1.to_dense().iter().zip(f2.to_dense()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
