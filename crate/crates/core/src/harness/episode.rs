//! Topic assets, the search environment and the episode loop.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{sample_action, AgentParams, Environment};
use crate::corpus::{
    build_vocabulary, featurize, featurize_documents, featurize_segments, segment_document, tokenize, Document,
    SegmentFeatures, SegmentedDocument, SparseVector, Vocabulary,
};
use crate::embed::{compress, Compressor, Embedding, TsneConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_session, MetricConfig, MetricSeries};
use crate::retrieval::{score_documents, top_k_any, top_k_unvisited, Baseline, BaselineKind, RetrievedSet};
use crate::sim::{give_feedback, reward, Feedback, TopicGroundTruth};
use crate::state::{build_global_rep, pool_state, GlobalRep, SearchState};

/// A topic's collection with its lexical features, before compression.
#[derive(Debug, Clone)]
pub struct TopicData {
    pub topic: TopicGroundTruth,
    pub docs: Vec<SegmentedDocument>,
    pub vocab: Vocabulary,
    pub segment_features: Vec<SegmentFeatures>,
    pub doc_vectors: Vec<SparseVector>,
}

impl TopicData {
    pub fn new(docs: &[Document], topic: TopicGroundTruth, segments: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::invalid(format!("topic {} has an empty collection", topic.topic_id)));
        }
        let docs: Vec<SegmentedDocument> = docs.iter().map(|d| segment_document(d, segments)).collect::<Result<_>>()?;
        let vocab = build_vocabulary(&docs)?;
        let segment_features = featurize_segments(&docs, &vocab);
        let doc_vectors = featurize_documents(&docs, &vocab);
        Ok(Self {
            topic,
            docs,
            vocab,
            segment_features,
            doc_vectors,
        })
    }

    pub fn segments(&self) -> usize {
        self.docs[0].segments.len()
    }

    pub fn embed(&self, compressor: Compressor, tsne: &TsneConfig) -> Result<Embedding> {
        compress(&self.segment_features, compressor, tsne)
    }
}

/// Everything an episode needs for one topic and one compressor.
#[derive(Debug, Clone)]
pub struct TopicAssets {
    pub data: TopicData,
    pub compressor: Compressor,
    pub rep: GlobalRep,
    pub doc_ids: Vec<String>,
    /// Raw grade of each document, by corpus position.
    pub ratings: Vec<i32>,
    pub query: SparseVector,
    /// Lexical vector of each relevant document's judgment passage.
    pub passages: Vec<Option<SparseVector>>,
}

impl TopicAssets {
    pub fn new(data: TopicData, compressor: Compressor, embedding: &Embedding) -> Result<Self> {
        let n = data.docs.len();
        let rep = build_global_rep(embedding, n, data.segments(), &(0..n).collect::<Vec<_>>())?;
        let doc_ids: Vec<String> = data.docs.iter().map(|d| d.doc_id.clone()).collect();
        let ratings = doc_ids.iter().map(|id| data.topic.rating(id)).collect();
        let query = featurize(&tokenize(&data.topic.query), &data.vocab, n);
        let passages = doc_ids
            .iter()
            .map(|id| {
                data.topic
                    .judgment(id)
                    .filter(|r| r.rating > 0)
                    .and_then(|r| r.passage.as_deref())
                    .map(|p| featurize(&tokenize(p), &data.vocab, n))
            })
            .collect();
        Ok(Self {
            data,
            compressor,
            rep,
            doc_ids,
            ratings,
            query,
            passages,
        })
    }

    pub fn topic(&self) -> &TopicGroundTruth {
        &self.data.topic
    }

    pub fn docs(&self) -> usize {
        self.doc_ids.len()
    }
}

/// Episode settings shared by every searcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSettings {
    pub iterations: usize,
    pub k: usize,
    pub grid: (usize, usize),
    pub allow_duplicates: bool,
}

/// Environment state: the masked representation plus the set of documents
/// returned so far.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub search: SearchState,
    pub history: BTreeSet<usize>,
}

/// The search task for one topic as an [`Environment`].
pub struct SearchEnv<'a> {
    pub assets: &'a TopicAssets,
    pub settings: EpisodeSettings,
}

/// Outcome of submitting one batch.
#[derive(Debug, Clone)]
pub struct Transition {
    pub next: EnvState,
    pub reward: f64,
    pub feedback: Feedback,
}

impl<'a> SearchEnv<'a> {
    pub fn new(assets: &'a TopicAssets, settings: EpisodeSettings) -> Self {
        Self { assets, settings }
    }

    /// Ranks documents by the linear segment score of `action` on the marked
    /// representation, so visited documents score through the sentinel.
    pub fn select(&self, state: &EnvState, action: &[f64]) -> Result<RetrievedSet> {
        let scores = score_documents(action, state.search.rep())?;
        let t = state.search.t();
        if self.settings.allow_duplicates {
            top_k_any(t, &scores, self.settings.k)
        } else {
            top_k_unvisited(t, &scores, &state.history, self.settings.k)
        }
    }

    /// Gets feedback on a batch, computes the reward and marks the batch
    /// visited.
    pub fn submit(&self, state: &EnvState, batch: &RetrievedSet) -> Result<Transition> {
        let ids: Vec<&str> = batch.doc_indices.iter().map(|&d| self.assets.doc_ids[d].as_str()).collect();
        let feedback = give_feedback(self.assets.topic(), &ids);
        let history: HashSet<String> = state.history.iter().map(|&d| self.assets.doc_ids[d].clone()).collect();
        let r = reward(&feedback, &history);
        let mut next_history = state.history.clone();
        next_history.extend(batch.doc_indices.iter().copied());
        Ok(Transition {
            next: EnvState {
                search: state.search.mark_visited(&batch.doc_indices)?,
                history: next_history,
            },
            reward: r,
            feedback,
        })
    }
}

impl Environment for SearchEnv<'_> {
    type State = EnvState;

    fn reset(&self) -> EnvState {
        EnvState {
            search: SearchState::new(self.assets.rep.clone()),
            history: BTreeSet::new(),
        }
    }

    fn observe(&self, state: &EnvState) -> Result<Vec<f64>> {
        Ok(pool_state(&state.search, self.settings.grid.0, self.settings.grid.1)?.values)
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<(EnvState, f64)> {
        let batch = self.select(state, action)?;
        let tr = self.submit(state, &batch)?;
        Ok((tr.next, tr.reward))
    }

    fn horizon(&self) -> usize {
        self.settings.iterations
    }

    fn grid(&self) -> (usize, usize, usize) {
        (self.settings.grid.0, self.settings.grid.1, self.assets.rep.dim())
    }
}

/// A system that chooses each iteration's batch.
pub trait Searcher {
    fn name(&self) -> &str;

    /// Returns the batch and, for agents, the action that produced it.
    fn choose(&mut self, env: &SearchEnv, state: &EnvState, rng: &mut dyn rand::RngCore)
        -> Result<(RetrievedSet, Option<Vec<f64>>)>;

    /// Receives the judgments of the last batch.
    fn observe(&mut self, _env: &SearchEnv, _batch: &RetrievedSet, _feedback: &Feedback) {}
}

/// The trained policy, sampling a fresh action each iteration.
pub struct AgentSearcher<'p> {
    pub name: String,
    pub params: &'p AgentParams,
}

impl Searcher for AgentSearcher<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, env: &SearchEnv, state: &EnvState, mut rng: &mut dyn rand::RngCore)
        -> Result<(RetrievedSet, Option<Vec<f64>>)> {
        let obs = env.observe(state)?;
        let (mean, _) = self.params.act(&obs)?;
        let action = sample_action(&mean, &self.params.log_std, &mut rng)?.action;
        Ok((env.select(state, &action)?, Some(action)))
    }
}

/// Lexical ranking, optionally updated from relevant feedback passages.
pub struct BaselineSearcher {
    pub name: String,
    pub baseline: Baseline,
}

impl BaselineSearcher {
    pub fn new(kind: BaselineKind, assets: &TopicAssets, feedback_weight: f64) -> Result<Self> {
        let name = match kind {
            BaselineKind::Static => "static",
            BaselineKind::RelevanceFeedback => "rf",
        };
        Ok(Self {
            name: name.into(),
            baseline: Baseline::new(kind, assets.query.clone(), feedback_weight)?,
        })
    }
}

impl Searcher for BaselineSearcher {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, env: &SearchEnv, state: &EnvState, _rng: &mut dyn rand::RngCore)
        -> Result<(RetrievedSet, Option<Vec<f64>>)> {
        let batch = self
            .baseline
            .rank(state.search.t(), &env.assets.data.doc_vectors, &state.history, env.settings.k)?;
        Ok((batch, None))
    }

    fn observe(&mut self, env: &SearchEnv, batch: &RetrievedSet, feedback: &Feedback) {
        for (&doc, entry) in batch.doc_indices.iter().zip(&feedback.entries) {
            if entry.rating > 0 {
                if let Some(p) = &env.assets.passages[doc] {
                    self.baseline.remember(p.clone());
                }
            }
        }
    }
}

/// Uniformly random unvisited documents.
pub struct RandomSearcher;

impl Searcher for RandomSearcher {
    fn name(&self) -> &str {
        "random"
    }

    fn choose(&mut self, env: &SearchEnv, state: &EnvState, rng: &mut dyn rand::RngCore)
        -> Result<(RetrievedSet, Option<Vec<f64>>)> {
        let pool: Vec<usize> = (0..env.assets.docs()).filter(|d| !state.history.contains(d)).collect();
        let take = env.settings.k.min(pool.len());
        let picks: Vec<usize> = sample(rng, pool.len(), take).into_iter().map(|i| pool[i]).collect();
        Ok((
            RetrievedSet {
                t: state.search.t(),
                scores: vec![0.0; picks.len()],
                doc_indices: picks,
            },
            None,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDoc {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
    pub rating: i32,
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: usize,
    /// Documents returned before this iteration, in corpus order.
    pub visited: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Vec<f64>>,
    pub retrieved: Vec<LoggedDoc>,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub log: Vec<LogEntry>,
    pub total_reward: f64,
    pub metrics: MetricSeries,
}

impl EpisodeResult {
    pub fn lists(&self) -> Vec<Vec<String>> {
        lists_of(&self.log)
    }
}

pub fn lists_of(log: &[LogEntry]) -> Vec<Vec<String>> {
    log.iter().map(|e| e.retrieved.iter().map(|d| d.doc_id.clone()).collect()).collect()
}

/// Runs `settings.iterations` rounds of choose, judge, reward and mark.
pub fn run_episode(
    env: &SearchEnv,
    searcher: &mut dyn Searcher,
    metrics: &MetricConfig,
    rng: &mut impl Rng,
) -> Result<EpisodeResult> {
    let mut state = env.reset();
    let mut log = Vec::with_capacity(env.settings.iterations);
    let mut total_reward = 0.0;
    for _ in 0..env.settings.iterations {
        let (batch, action) = searcher.choose(env, &state, rng)?;
        let tr = env.submit(&state, &batch)?;
        searcher.observe(env, &batch, &tr.feedback);
        log.push(LogEntry {
            t: state.search.t(),
            visited: state.history.iter().map(|&d| env.assets.doc_ids[d].clone()).collect(),
            action,
            retrieved: batch
                .doc_indices
                .iter()
                .zip(&batch.scores)
                .enumerate()
                .map(|(rank, (&d, &score))| LoggedDoc {
                    doc_id: env.assets.doc_ids[d].clone(),
                    score,
                    rank: rank + 1,
                    rating: env.assets.ratings[d],
                })
                .collect(),
            reward: tr.reward,
        });
        total_reward += tr.reward;
        state = tr.next;
    }
    let metrics = evaluate_session(&lists_of(&log), env.assets.topic(), metrics)?;
    Ok(EpisodeResult {
        log,
        total_reward,
        metrics,
    })
}

pub fn write_episode_log(path: impl AsRef<Path>, log: &[LogEntry]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episode_log(path: impl AsRef<Path>) -> Result<Vec<LogEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut log = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        log.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(log)
}
