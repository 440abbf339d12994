//! The global representation of a corpus and the search state built on it.
//!
//! A [`GlobalRep`] is a `C x B x n` tensor: one row per document, one column
//! per segment position, `n` channels of compressed features. The search
//! state overwrites every segment of an already-retrieved document with
//! [`SENTINEL`], so the history is visible directly in the tensor.

use std::collections::BTreeSet;

use crate::embed::Embedding;
use crate::error::{Error, Result};

/// Value written into every channel of a visited document. Normalized
/// embeddings live in `[-1, 1]`, so this is never a live value.
pub const SENTINEL: f64 = -2.0;

/// Default pooled grid fed to the networks.
pub const DEFAULT_GRID: (usize, usize) = (32, 20);

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRep {
    docs: usize,
    segments: usize,
    dim: usize,
    values: Vec<f64>,
    /// `doc_order[row]` is the corpus index of the document in that row.
    doc_order: Vec<usize>,
    /// Inverse of `doc_order`.
    row_of: Vec<usize>,
}

impl GlobalRep {
    pub fn docs(&self) -> usize {
        self.docs
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn doc_order(&self) -> &[usize] {
        &self.doc_order
    }

    pub fn row_of(&self, doc: usize) -> usize {
        self.row_of[doc]
    }

    /// The `B x n` block of a row.
    pub fn row(&self, row: usize) -> &[f64] {
        let width = self.segments * self.dim;
        &self.values[row * width..(row + 1) * width]
    }

    /// The `B x n` block of a document, wherever it is stacked.
    pub fn doc_block(&self, doc: usize) -> &[f64] {
        self.row(self.row_of[doc])
    }

    /// Sum over segments of a document's vectors.
    pub fn segment_sum(&self, doc: usize) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for seg in self.doc_block(doc).chunks(self.dim) {
            for (s, v) in sum.iter_mut().zip(seg) {
                *s += v;
            }
        }
        sum
    }
}

/// Stacks the embedding rows of `docs` documents (`segments` each, document
/// major) so that row `i` holds document `doc_order[i]`.
pub fn build_global_rep(
    emb: &Embedding,
    docs: usize,
    segments: usize,
    doc_order: &[usize],
) -> Result<GlobalRep> {
    if emb.rows() != docs * segments {
        return Err(Error::Shape(format!(
            "embedding has {} rows, expected {docs} x {segments}",
            emb.rows()
        )));
    }
    let mut row_of = vec![usize::MAX; docs];
    if doc_order.len() != docs {
        return Err(Error::Shape("doc_order length differs from document count".into()));
    }
    for (row, &doc) in doc_order.iter().enumerate() {
        if doc >= docs || row_of[doc] != usize::MAX {
            return Err(Error::invalid("doc_order is not a permutation"));
        }
        row_of[doc] = row;
    }
    let dim = emb.dim();
    let mut values = Vec::with_capacity(docs * segments * dim);
    for &doc in doc_order {
        for seg in 0..segments {
            values.extend_from_slice(emb.row(doc * segments + seg));
        }
    }
    Ok(GlobalRep {
        docs,
        segments,
        dim,
        values,
        doc_order: doc_order.to_vec(),
        row_of,
    })
}

/// The state `s_t`: the representation with visited documents masked.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    rep: GlobalRep,
    visited: BTreeSet<usize>,
    t: usize,
}

impl SearchState {
    pub fn new(rep: GlobalRep) -> Self {
        Self {
            rep,
            visited: BTreeSet::new(),
            t: 1,
        }
    }

    pub fn rep(&self) -> &GlobalRep {
        &self.rep
    }

    pub fn visited(&self) -> &BTreeSet<usize> {
        &self.visited
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Returns the next state: `t + 1`, `docs` added to the visited set and
    /// their rows overwritten with the sentinel.
    pub fn mark_visited(&self, docs: &[usize]) -> Result<SearchState> {
        if let Some(&bad) = docs.iter().find(|&&d| d >= self.rep.docs) {
            return Err(Error::invalid(format!(
                "document {bad} outside corpus of {}",
                self.rep.docs
            )));
        }
        let mut next = self.clone();
        next.t += 1;
        let width = next.rep.segments * next.rep.dim;
        for &doc in docs {
            if next.visited.insert(doc) {
                let row = next.rep.row_of[doc];
                next.rep.values[row * width..(row + 1) * width].fill(SENTINEL);
            }
        }
        Ok(next)
    }
}

/// A fixed-size `rows x cols x n` tensor for the networks.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledState {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

fn bin(i: usize, bins: usize, len: usize) -> (usize, usize) {
    let start = i * len / bins;
    let end = ((i + 1) * len / bins).max(start + 1);
    (start, end.min(len))
}

/// Adaptive average pooling of the state onto a `rows x cols` grid. Bin `i`
/// along an axis of length `L` covers `floor(i L / rows) .. floor((i+1) L /
/// rows)`, widened to one element when that range is empty.
pub fn pool_state(state: &SearchState, rows: usize, cols: usize) -> Result<PooledState> {
    let rep = &state.rep;
    if rep.docs == 0 || rows == 0 || cols == 0 {
        return Err(Error::invalid("pooling needs a non-empty state and grid"));
    }
    let n = rep.dim;
    let mut values = vec![0.0; rows * cols * n];
    for r in 0..rows {
        let (r0, r1) = bin(r, rows, rep.docs);
        for c in 0..cols {
            let (c0, c1) = bin(c, cols, rep.segments);
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            let out = &mut values[(r * cols + c) * n..(r * cols + c + 1) * n];
            for row in r0..r1 {
                let block = rep.row(row);
                for seg in c0..c1 {
                    for (o, v) in out.iter_mut().zip(&block[seg * n..(seg + 1) * n]) {
                        *o += v;
                    }
                }
            }
            for o in out.iter_mut() {
                *o /= count;
            }
        }
    }
    Ok(PooledState {
        rows,
        cols,
        channels: n,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(docs: usize, segments: usize, dim: usize) -> Embedding {
        let coords = (0..docs * segments * dim)
            .map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0)
            .collect();
        Embedding::new(dim, coords).unwrap()
    }

    fn identity(c: usize) -> Vec<usize> {
        (0..c).collect()
    }

    #[test]
    fn single_document_rep() {
        let e = emb(1, 20, 3);
        let rep = build_global_rep(&e, 1, 20, &[0]).unwrap();
        assert_eq!(rep.values(), e.coords());
    }

    #[test]
    fn toy_corpus_shape() {
        let rep = build_global_rep(&emb(5, 20, 3), 5, 20, &identity(5)).unwrap();
        assert_eq!((rep.docs(), rep.segments(), rep.dim()), (5, 20, 3));
        assert_eq!(rep.values().len(), 5 * 20 * 3);
    }

    #[test]
    fn reversed_order_permutes_rows() {
        let e = emb(4, 3, 2);
        let a = build_global_rep(&e, 4, 3, &identity(4)).unwrap();
        let b = build_global_rep(&e, 4, 3, &[3, 2, 1, 0]).unwrap();
        for doc in 0..4 {
            assert_eq!(a.doc_block(doc), b.doc_block(doc));
            assert_eq!(b.row(3 - doc), a.row(doc));
        }
    }

    #[test]
    fn shape_and_order_errors() {
        let e = emb(4, 3, 2);
        assert!(build_global_rep(&e, 4, 2, &identity(4)).is_err());
        assert!(build_global_rep(&e, 4, 3, &[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn marking_examples() {
        let rep = build_global_rep(&emb(5, 4, 3), 5, 4, &identity(5)).unwrap();
        let s = SearchState::new(rep);
        let empty = s.mark_visited(&[]).unwrap();
        assert_eq!(empty.t(), 2);
        assert_eq!(empty.rep(), s.rep());

        let once = s.mark_visited(&[2]).unwrap();
        let twice = once.mark_visited(&[2]).unwrap();
        assert_eq!(once.rep(), twice.rep());

        let both = s.mark_visited(&[1, 3]).unwrap();
        let sentinels = both.rep().values().iter().filter(|&&v| v == SENTINEL).count();
        assert_eq!(sentinels, 2 * 4 * 3);
        assert!(s.mark_visited(&[5]).is_err());
    }

    #[test]
    fn pooling_identity_and_constants() {
        let rep = build_global_rep(&emb(4, 5, 3), 4, 5, &identity(4)).unwrap();
        let s = SearchState::new(rep.clone());
        assert_eq!(pool_state(&s, 4, 5).unwrap().values, rep.values());

        let constant = Embedding::new(2, vec![0.25; 6 * 4 * 2]).unwrap();
        let s = SearchState::new(build_global_rep(&constant, 6, 4, &identity(6)).unwrap());
        let pooled = pool_state(&s, 32, 20).unwrap();
        assert!(pooled.values.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn pooling_averages_row_pairs() {
        let e = emb(4, 3, 2);
        let rep = build_global_rep(&e, 4, 3, &identity(4)).unwrap();
        let pooled = pool_state(&SearchState::new(rep.clone()), 2, 3).unwrap();
        for r in 0..2 {
            for k in 0..6 {
                let expect = (rep.row(2 * r)[k] + rep.row(2 * r + 1)[k]) / 2.0;
                assert!((pooled.values[r * 6 + k] - expect).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn marking_leaves_unvisited_rows_untouched(marks in proptest::collection::btree_set(0usize..8, 0..8)) {
            let rep = build_global_rep(&emb(8, 4, 3), 8, 4, &[5, 2, 7, 0, 1, 6, 3, 4]).unwrap();
            let s = SearchState::new(rep.clone());
            let docs: Vec<usize> = marks.iter().copied().collect();
            let next = s.mark_visited(&docs).unwrap();
            for doc in 0..8 {
                if marks.contains(&doc) {
                    prop_assert!(next.rep().doc_block(doc).iter().all(|&v| v == SENTINEL));
                } else {
                    prop_assert_eq!(next.rep().doc_block(doc), rep.doc_block(doc));
                    prop_assert!(next.rep().doc_block(doc).iter().all(|&v| v != SENTINEL));
                }
            }
        }

        #[test]
        fn stacking_order_preserves_row_multiset(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut order = identity(6);
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let e = emb(6, 3, 2);
            let a = build_global_rep(&e, 6, 3, &identity(6)).unwrap();
            let b = build_global_rep(&e, 6, 3, &order).unwrap();
            let mut ra: Vec<Vec<f64>> = (0..6).map(|r| a.row(r).to_vec()).collect();
            let mut rb: Vec<Vec<f64>> = (0..6).map(|r| b.row(r).to_vec()).collect();
            ra.sort_by(|x, y| x.partial_cmp(y).unwrap());
            rb.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assert_eq!(ra, rb);
        }
    }
}
