//! Linear segment scoring, top-k selection and two lexical baselines.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::SparseVector;
use crate::error::{Error, Result};
use crate::state::GlobalRep;

/// Default results per iteration.
pub const DEFAULT_K: usize = 5;

/// Default weight of the feedback centroid in the query update.
pub const DEFAULT_FEEDBACK_WEIGHT: f64 = 0.75;

/// Scores every document (indexed by corpus position) as the dot product of
/// the action with the sum of the document's segment vectors.
pub fn score_documents(action: &[f64], rep: &GlobalRep) -> Result<Vec<f64>> {
    if action.len() != rep.dim() {
        return Err(Error::Shape(format!(
            "action has {} components, representation has {}",
            action.len(),
            rep.dim()
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("action is not finite"));
    }
    Ok((0..rep.docs())
        .map(|doc| rep.segment_sum(doc).iter().zip(action).map(|(s, a)| s * a).sum())
        .collect())
}

/// The batch returned at one iteration, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub t: usize,
    pub doc_indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RetrievedSet {
    pub fn len(&self) -> usize {
        self.doc_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_indices.is_empty()
    }
}

fn rank_candidates(t: usize, scores: &[f64], candidates: impl Iterator<Item = usize>, k: usize) -> RetrievedSet {
    let mut ranked: Vec<usize> = candidates.collect();
    // partial_cmp so that 0.0 and -0.0 tie; scores are finite.
    ranked.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ranked.truncate(k);
    RetrievedSet {
        t,
        scores: ranked.iter().map(|&d| scores[d]).collect(),
        doc_indices: ranked,
    }
}

/// The `k` best unvisited documents, ties broken by ascending index. Returns
/// fewer than `k` when fewer remain.
pub fn top_k_unvisited(t: usize, scores: &[f64], visited: &BTreeSet<usize>, k: usize) -> Result<RetrievedSet> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(rank_candidates(t, scores, (0..scores.len()).filter(|d| !visited.contains(d)), k))
}

/// The `k` best documents with no visited filter, used when duplicates are
/// allowed.
pub fn top_k_any(t: usize, scores: &[f64], k: usize) -> Result<RetrievedSet> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(rank_candidates(t, scores, 0..scores.len(), k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Static,
    RelevanceFeedback,
}

/// A lexical ranker over whole-document TF-IDF vectors.
///
/// The static kind ranks by cosine to the fixed query. The feedback kind
/// ranks by cosine to `q + alpha * centroid(relevant feedback vectors)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub kind: BaselineKind,
    query: SparseVector,
    alpha: f64,
    memory: Vec<SparseVector>,
}

impl Baseline {
    pub fn new(kind: BaselineKind, query: SparseVector, alpha: f64) -> Result<Self> {
        if query.nnz() == 0 {
            return Err(Error::invalid("query has no known terms"));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::invalid("feedback weight must be finite and non-negative"));
        }
        Ok(Self {
            kind,
            query,
            alpha,
            memory: Vec::new(),
        })
    }

    /// Stores the vector of a relevant feedback passage. Ignored by the
    /// static kind.
    pub fn remember(&mut self, relevant: SparseVector) {
        if self.kind == BaselineKind::RelevanceFeedback {
            self.memory.push(relevant);
        }
    }

    pub fn memory(&self) -> &[SparseVector] {
        &self.memory
    }

    /// The query currently used for ranking.
    pub fn current_query(&self) -> SparseVector {
        if self.memory.is_empty() || self.alpha == 0.0 {
            return self.query.clone();
        }
        let mut centroid = SparseVector::zeros(self.query.dim);
        for v in &self.memory {
            centroid = centroid.add_scaled(v, 1.0);
        }
        self.query.add_scaled(&centroid, self.alpha / self.memory.len() as f64)
    }

    pub fn scores(&self, docs: &[SparseVector]) -> Vec<f64> {
        let q = self.current_query();
        docs.iter().map(|d| q.cosine(d)).collect()
    }

    pub fn rank(&self, t: usize, docs: &[SparseVector], visited: &BTreeSet<usize>, k: usize) -> Result<RetrievedSet> {
        top_k_unvisited(t, &self.scores(docs), visited, k)
    }
}

/// Cosine ranking against a fixed query with visited documents removed.
pub fn baseline_static_rank(
    t: usize,
    query: &SparseVector,
    docs: &[SparseVector],
    visited: &BTreeSet<usize>,
    k: usize,
) -> Result<RetrievedSet> {
    Baseline::new(BaselineKind::Static, query.clone(), 0.0)?.rank(t, docs, visited, k)
}

/// Cosine ranking against the query moved toward the centroid of the
/// relevant feedback seen so far.
pub fn baseline_relevance_feedback(
    t: usize,
    query: &SparseVector,
    feedback: &[SparseVector],
    alpha: f64,
    docs: &[SparseVector],
    visited: &BTreeSet<usize>,
    k: usize,
) -> Result<RetrievedSet> {
    let mut b = Baseline::new(BaselineKind::RelevanceFeedback, query.clone(), alpha)?;
    for v in feedback {
        b.remember(v.clone());
    }
    b.rank(t, docs, visited, k)
}
