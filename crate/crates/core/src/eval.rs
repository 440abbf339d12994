//! Session metrics over the cumulative retrieval history.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::TopicGroundTruth;

/// Log bases of the session discount: `b` within an iteration, `bq` across
/// iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub b: f64,
    pub bq: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { b: 2.0, bq: 4.0 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 1.0 && self.bq > 1.0) {
            return Err(Error::invalid("log bases must exceed 1"));
        }
        Ok(())
    }

    /// Discount weight of rank `j` at iteration `i`, both 1-based.
    pub fn slot_weight(&self, i: usize, j: usize) -> f64 {
        1.0 / ((1.0 + (j as f64).log(self.b)) * (1.0 + (i as f64).log(self.bq)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// 0 when nothing was retrieved; see `precision_defined`.
    pub precision: f64,
    pub recall: f64,
    pub precision_defined: bool,
}

fn is_relevant(topic: &TopicGroundTruth, doc: &str) -> bool {
    topic.rating(doc) > 0
}

/// Precision and recall of a set of retrieved documents.
pub fn precision_recall<S: AsRef<str>>(retrieved: &HashSet<S>, topic: &TopicGroundTruth) -> Result<PrecisionRecall>
where
    S: std::hash::Hash + Eq,
{
    let relevant_total = topic.relevant_count();
    if relevant_total == 0 {
        return Err(Error::Undefined(format!("topic {} has no relevant documents", topic.topic_id)));
    }
    let hits = retrieved.iter().filter(|d| is_relevant(topic, d.as_ref())).count() as f64;
    let precision_defined = !retrieved.is_empty();
    Ok(PrecisionRecall {
        precision: if precision_defined { hits / retrieved.len() as f64 } else { 0.0 },
        recall: hits / relevant_total as f64,
        precision_defined,
    })
}

/// Fraction of the topic's subtopics covered by a retrieved relevant
/// document.
pub fn aspect_recall<S: AsRef<str>>(retrieved: &HashSet<S>, topic: &TopicGroundTruth) -> Result<f64>
where
    S: std::hash::Hash + Eq,
{
    if topic.subtopics.is_empty() {
        return Err(Error::invalid("topic has no subtopics"));
    }
    let covered: HashSet<u32> = retrieved
        .iter()
        .filter_map(|d| topic.judgment(d.as_ref()))
        .filter(|r| r.rating > 0)
        .flat_map(|r| r.subtopics.iter().copied())
        .collect();
    Ok(covered.len() as f64 / topic.subtopics.len() as f64)
}

/// Session DCG of ranked lists. A document contributes only at its first
/// retrieval; negative grades count as 0.
pub fn sdcg<S: AsRef<str>>(lists: &[Vec<S>], topic: &TopicGroundTruth, config: &MetricConfig) -> f64 {
    let mut seen = HashSet::new();
    let mut total = 0.0;
    for (i, list) in lists.iter().enumerate() {
        for (j, doc) in list.iter().enumerate() {
            let doc = doc.as_ref();
            if seen.insert(doc) {
                total += topic.rating(doc).max(0) as f64 * config.slot_weight(i + 1, j + 1);
            }
        }
    }
    total
}

/// Best achievable session DCG for lists of the given lengths: the largest
/// grades paired with the largest slot weights.
pub fn ideal_sdcg(lengths: &[usize], topic: &TopicGroundTruth, config: &MetricConfig) -> f64 {
    let mut weights: Vec<f64> = lengths
        .iter()
        .enumerate()
        .flat_map(|(i, &len)| (1..=len).map(move |j| config.slot_weight(i + 1, j)))
        .collect();
    weights.sort_by(|a, b| b.total_cmp(a));
    let mut grades: Vec<f64> = topic.ratings().iter().filter(|r| r.rating > 0).map(|r| r.rating as f64).collect();
    grades.sort_by(|a, b| b.total_cmp(a));
    weights.iter().zip(&grades).map(|(w, g)| w * g).sum()
}

/// Session DCG normalized by the ideal arrangement into the same slots; 0
/// when the ideal is 0.
pub fn nsdcg<S: AsRef<str>>(lists: &[Vec<S>], topic: &TopicGroundTruth, config: &MetricConfig) -> Result<f64> {
    config.validate()?;
    let lengths: Vec<usize> = lists.iter().map(Vec::len).collect();
    let ideal = ideal_sdcg(&lengths, topic, config);
    if ideal == 0.0 {
        return Ok(0.0);
    }
    Ok((sdcg(lists, topic, config) / ideal).min(1.0))
}

/// Share of a batch already returned at an earlier iteration.
pub fn duplicate_rate<S: AsRef<str>>(batch: &[S], history: &HashSet<String>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Undefined("duplicate rate of an empty batch".into()));
    }
    let dup = batch.iter().filter(|d| history.contains(d.as_ref())).count();
    Ok(dup as f64 / batch.len() as f64)
}

/// Metrics at every iteration `t = 1..T`, each computed over iterations
/// `1..=t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub precision: Vec<f64>,
    pub precision_defined: Vec<bool>,
    pub recall: Vec<f64>,
    pub aspect_recall: Vec<f64>,
    pub nsdcg: Vec<f64>,
    pub duplicate_rate: Vec<f64>,
    /// Precision of the batch of iteration `t` alone.
    pub batch_precision: Vec<f64>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.recall.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recall.is_empty()
    }
}

pub fn evaluate_session<S: AsRef<str>>(
    lists: &[Vec<S>],
    topic: &TopicGroundTruth,
    config: &MetricConfig,
) -> Result<MetricSeries> {
    config.validate()?;
    let mut series = MetricSeries::default();
    let mut history: HashSet<String> = HashSet::new();
    for t in 0..lists.len() {
        let batch = &lists[t];
        series
            .duplicate_rate
            .push(if batch.is_empty() { 0.0 } else { duplicate_rate(batch, &history)? });
        let batch_hits = batch.iter().filter(|d| is_relevant(topic, d.as_ref())).count();
        series
            .batch_precision
            .push(if batch.is_empty() { 0.0 } else { batch_hits as f64 / batch.len() as f64 });
        history.extend(batch.iter().map(|d| d.as_ref().to_string()));
        let pr = precision_recall(&history, topic)?;
        series.precision.push(pr.precision);
        series.precision_defined.push(pr.precision_defined);
        series.recall.push(pr.recall);
        series.aspect_recall.push(aspect_recall(&history, topic)?);
        series.nsdcg.push(nsdcg(&lists[..=t], topic, config)?);
    }
    Ok(series)
}
