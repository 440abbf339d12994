//! End-to-end experiments: topic preparation, training, evaluation and
//! reporting.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! checkpoints/{topic}-{compressor}.ckpt
//! training/{topic}-{compressor}.jsonl
//! logs/{system}/{topic}-s{seed}.jsonl
//! images/{system}/{topic}-s{seed}.ppm
//! metrics.jsonl
//! summary.csv
//! duplicates.csv
//! report.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::episode::{
    run_episode, write_episode_log, AgentSearcher, BaselineSearcher, EpisodeResult, EpisodeSettings, LogEntry,
    RandomSearcher, SearchEnv, Searcher, TopicAssets, TopicData,
};
use super::synth::generate_synthetic_topic;
use super::viz::export_exploration_image;
use crate::agent::train::evaluation_seed;
use crate::agent::{config_hash, save_checkpoint, train, AgentParams, BatchStats};
use crate::corpus::Document;
use crate::embed::{Compressor, Embedding};
use crate::error::{Error, Result};
use crate::retrieval::BaselineKind;
use crate::seed::rng_for;
use crate::sim::TopicGroundTruth;

/// A topic with assets for both compressors.
#[derive(Debug, Clone)]
pub struct PreparedTopic {
    pub index: usize,
    pub tsne: TopicAssets,
    pub svd: TopicAssets,
}

impl PreparedTopic {
    pub fn from_embeddings(index: usize, data: TopicData, tsne: &Embedding, svd: &Embedding) -> Result<Self> {
        Ok(Self {
            index,
            tsne: TopicAssets::new(data.clone(), Compressor::Tsne, tsne)?,
            svd: TopicAssets::new(data, Compressor::Svd, svd)?,
        })
    }

    pub fn topic_id(&self) -> &str {
        &self.tsne.topic().topic_id
    }

    pub fn assets(&self, compressor: Compressor) -> &TopicAssets {
        match compressor {
            Compressor::Tsne => &self.tsne,
            Compressor::Svd => &self.svd,
        }
    }
}

/// Generates the configured synthetic topics.
pub fn generate_topics(config: &ExperimentConfig) -> Result<Vec<(Vec<Document>, TopicGroundTruth)>> {
    (0..config.topics).map(|i| generate_synthetic_topic(&config.topic_spec(i))).collect()
}

/// Segments, featurizes and compresses one topic with both compressors.
pub fn prepare_topic(index: usize, docs: &[Document], topic: TopicGroundTruth, config: &ExperimentConfig) -> Result<PreparedTopic> {
    let data = TopicData::new(docs, topic, config.segments)?;
    let tsne_config = config.tsne_for(index);
    let tsne = data.embed(Compressor::Tsne, &tsne_config)?;
    let svd = data.embed(Compressor::Svd, &tsne_config)?;
    PreparedTopic::from_embeddings(index, data, &tsne, &svd)
}

pub fn prepare_topics(config: &ExperimentConfig) -> Result<Vec<PreparedTopic>> {
    config.validate()?;
    generate_topics(config)?
        .into_iter()
        .enumerate()
        .map(|(i, (docs, topic))| prepare_topic(i, &docs, topic, config))
        .collect()
}

/// Systems compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Agent,
    AgentSvd,
    /// The agent trained on the previous topic, run on this one.
    AgentHeldout,
    Static,
    Rf,
    Random,
}

impl System {
    pub const ALL: [System; 6] = [
        System::Agent,
        System::AgentSvd,
        System::AgentHeldout,
        System::Static,
        System::Rf,
        System::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::Agent => "agent",
            System::AgentSvd => "agent-svd",
            System::AgentHeldout => "agent-heldout",
            System::Static => "static",
            System::Rf => "rf",
            System::Random => "random",
        }
    }

    pub fn is_agent(self) -> bool {
        matches!(self, System::Agent | System::AgentSvd | System::AgentHeldout)
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub topic_id: String,
    pub compressor: Compressor,
    pub params: AgentParams,
    pub best_mean_return: f64,
    pub curve: Vec<BatchStats>,
}

fn settings(config: &ExperimentConfig) -> EpisodeSettings {
    EpisodeSettings {
        iterations: config.iterations,
        k: config.k,
        grid: (config.grid_rows, config.grid_cols),
        allow_duplicates: config.allow_duplicates,
    }
}

/// Hash of the configuration without the output directory and the
/// command-line compressor choice, so that identical experiments written to
/// different places agree.
pub fn experiment_hash(config: &ExperimentConfig) -> Result<[u8; 32]> {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    c.compressor = Compressor::default();
    config_hash(&c)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(out: &Path, topic_id: &str, compressor: Compressor) -> PathBuf {
    out.join("checkpoints").join(format!("{topic_id}-{compressor}.ckpt"))
}

/// Trains one agent per topic and compressor, writing checkpoints and
/// training curves when `out` is given.
pub fn train_agents(
    topics: &[PreparedTopic],
    compressors: &[Compressor],
    config: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<Vec<TrainedAgent>> {
    let hash = experiment_hash(config)?;
    let mut agents = Vec::new();
    for topic in topics {
        for &compressor in compressors {
            let env = SearchEnv::new(topic.assets(compressor), settings(config));
            let outcome = train(&env, &config.ppo_for(topic.index, compressor))?;
            let agent = TrainedAgent {
                topic_id: topic.topic_id().to_string(),
                compressor,
                params: outcome.best,
                best_mean_return: outcome.best_mean_return,
                curve: outcome.curve,
            };
            if let Some(out) = out {
                create_dir(&out.join("checkpoints"))?;
                create_dir(&out.join("training"))?;
                save_checkpoint(checkpoint_path(out, &agent.topic_id, compressor), &agent.params, &hash)?;
                write_jsonl(
                    &out.join("training").join(format!("{}-{compressor}.jsonl", agent.topic_id)),
                    &agent.curve,
                )?;
            }
            agents.push(agent);
        }
    }
    Ok(agents)
}

/// One evaluation episode.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub system: System,
    pub topic_id: String,
    pub seed_index: usize,
    pub relevant_total: usize,
    pub result: EpisodeResult,
}

/// One line of `metrics.jsonl`: metrics of one episode at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub system: System,
    pub topic_id: String,
    pub seed: usize,
    pub t: usize,
    pub precision: f64,
    pub recall: f64,
    pub aspect_recall: f64,
    pub nsdcg: f64,
    pub duplicate_rate: f64,
    pub batch_precision: f64,
    pub reward: f64,
    /// Relevant documents not yet returned after this iteration.
    pub relevant_remaining: usize,
}

impl EpisodeRecord {
    pub fn rows(&self) -> Vec<MetricRow> {
        let m = &self.result.metrics;
        (0..m.len())
            .map(|i| MetricRow {
                system: self.system,
                topic_id: self.topic_id.clone(),
                seed: self.seed_index,
                t: i + 1,
                precision: m.precision[i],
                recall: m.recall[i],
                aspect_recall: m.aspect_recall[i],
                nsdcg: m.nsdcg[i],
                duplicate_rate: m.duplicate_rate[i],
                batch_precision: m.batch_precision[i],
                reward: self.result.log[i].reward,
                relevant_remaining: self.relevant_total - (m.recall[i] * self.relevant_total as f64).round() as usize,
            })
            .collect()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.result.log
    }
}

fn find_agent<'a>(agents: &'a [TrainedAgent], topic_id: &str, compressor: Compressor) -> Option<&'a AgentParams> {
    agents
        .iter()
        .find(|a| a.topic_id == topic_id && a.compressor == compressor)
        .map(|a| &a.params)
}

/// Runs `eval_seeds` episodes of every available system on every topic.
/// All systems of a topic share the seed stream of each seed index.
pub fn evaluate_systems(
    topics: &[PreparedTopic],
    agents: &[TrainedAgent],
    config: &ExperimentConfig,
) -> Result<Vec<EpisodeRecord>> {
    let mut records = Vec::new();
    for (pos, topic) in topics.iter().enumerate() {
        let previous = &topics[(pos + topics.len() - 1) % topics.len()];
        for system in System::ALL {
            let (assets, params) = match system {
                System::Agent => (&topic.tsne, find_agent(agents, topic.topic_id(), Compressor::Tsne)),
                System::AgentSvd => (&topic.svd, find_agent(agents, topic.topic_id(), Compressor::Svd)),
                System::AgentHeldout => {
                    if !config.heldout || topics.len() < 2 {
                        continue;
                    }
                    (&topic.tsne, find_agent(agents, previous.topic_id(), Compressor::Tsne))
                }
                _ => (&topic.tsne, None),
            };
            if system.is_agent() && params.is_none() {
                continue;
            }
            let env = SearchEnv::new(assets, settings(config));
            for s in 0..config.eval_seeds {
                let mut searcher: Box<dyn Searcher + '_> = match system {
                    System::Agent | System::AgentSvd | System::AgentHeldout => Box::new(AgentSearcher {
                        name: system.name().into(),
                        params: params.expect("checked above"),
                    }),
                    System::Static => Box::new(BaselineSearcher::new(BaselineKind::Static, assets, config.feedback_weight)?),
                    System::Rf => Box::new(BaselineSearcher::new(
                        BaselineKind::RelevanceFeedback,
                        assets,
                        config.feedback_weight,
                    )?),
                    System::Random => Box::new(RandomSearcher),
                };
                let mut rng = rng_for(evaluation_seed(config.seed, s as u64), &[topic.index as u64]);
                let result = run_episode(&env, searcher.as_mut(), &config.metrics, &mut rng)?;
                records.push(EpisodeRecord {
                    system,
                    topic_id: topic.topic_id().to_string(),
                    seed_index: s,
                    relevant_total: assets.topic().relevant_count(),
                    result,
                });
            }
        }
    }
    Ok(records)
}

pub fn log_path(out: &Path, system: System, topic_id: &str, seed: usize) -> PathBuf {
    out.join("logs").join(system.name()).join(format!("{topic_id}-s{seed}.jsonl"))
}

pub fn image_path(out: &Path, system: System, topic_id: &str, seed: usize) -> PathBuf {
    out.join("images").join(system.name()).join(format!("{topic_id}-s{seed}.ppm"))
}

/// Writes episode logs and `metrics.jsonl`.
pub fn write_episodes(out: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut rows = Vec::new();
    for r in records {
        let path = log_path(out, r.system, &r.topic_id, r.seed_index);
        create_dir(path.parent().expect("log path has a parent"))?;
        write_episode_log(&path, r.log())?;
        rows.extend(r.rows());
    }
    write_jsonl(&out.join("metrics.jsonl"), &rows)
}

/// Writes an exploration image for every agent episode.
pub fn write_images(out: &Path, records: &[EpisodeRecord], topics: &[PreparedTopic]) -> Result<()> {
    for r in records.iter().filter(|r| r.system.is_agent()) {
        let topic = topics
            .iter()
            .find(|t| t.topic_id() == r.topic_id)
            .ok_or_else(|| Error::invalid(format!("unknown topic {}", r.topic_id)))?;
        let path = image_path(out, r.system, &r.topic_id, r.seed_index);
        create_dir(path.parent().expect("image path has a parent"))?;
        export_exploration_image(r.log(), topic.tsne.topic(), &topic.tsne.doc_ids, &path)?;
    }
    Ok(())
}

pub fn read_metric_rows(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Mean curves of one system across topics and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system: System,
    pub episodes: usize,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub aspect_recall: Vec<f64>,
    pub nsdcg: Vec<f64>,
    pub duplicate_rate: Vec<f64>,
    pub mean_episode_reward: f64,
}

impl SystemSummary {
    pub fn last(values: &[f64]) -> f64 {
        values.last().copied().unwrap_or(0.0)
    }

    /// Mean duplicate rate over iterations `2..=T`.
    pub fn mean_duplicate_rate_after_first(&self) -> f64 {
        let rest = &self.duplicate_rate[1.min(self.duplicate_rate.len())..];
        if rest.is_empty() {
            0.0
        } else {
            rest.iter().sum::<f64>() / rest.len() as f64
        }
    }
}

/// Episodes whose batch precision dropped below `low` while at least `k`
/// relevant documents were still unreturned, and how many of them later
/// returned a batch with precision above `high`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub system: System,
    pub episodes: usize,
    pub qualifying: usize,
    pub recovered: usize,
}

impl RecoveryStats {
    pub fn rate(&self) -> Option<f64> {
        (self.qualifying > 0).then(|| self.recovered as f64 / self.qualifying as f64)
    }
}

pub const RECOVERY_LOW: f64 = 0.2;
pub const RECOVERY_HIGH: f64 = 0.5;

/// Classifies one episode's rows (ordered by `t`): `None` when it never
/// qualifies, otherwise whether it recovered after its first drop.
pub fn episode_recovery(rows: &[&MetricRow], k: usize) -> Option<bool> {
    let drop = rows
        .iter()
        .position(|r| r.batch_precision < RECOVERY_LOW && r.relevant_remaining >= k && r.t < rows.len())?;
    Some(rows[drop + 1..].iter().any(|r| r.batch_precision > RECOVERY_HIGH))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub topic_id: String,
    pub compressor: Compressor,
    pub best_mean_return: f64,
    pub first_mean_return: f64,
    pub last_mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub allow_duplicates: bool,
    pub iterations: usize,
    pub k: usize,
    pub systems: Vec<SystemSummary>,
    pub recovery: Vec<RecoveryStats>,
    pub training: Vec<TrainingSummary>,
}

impl ExperimentReport {
    pub fn system(&self, system: System) -> Option<&SystemSummary> {
        self.systems.iter().find(|s| s.system == system)
    }

    pub fn recovery(&self, system: System) -> Option<&RecoveryStats> {
        self.recovery.iter().find(|s| s.system == system)
    }
}

/// Aggregates metric rows into per-system curves and recovery counts.
pub fn aggregate(
    rows: &[MetricRow],
    training: Vec<TrainingSummary>,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let mut by_episode: BTreeMap<(System, String, usize), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        by_episode.entry((r.system, r.topic_id.clone(), r.seed)).or_default().push(r);
    }
    let mut systems = Vec::new();
    let mut recovery = Vec::new();
    for system in System::ALL {
        let episodes: Vec<&Vec<&MetricRow>> =
            by_episode.iter().filter(|((s, _, _), _)| *s == system).map(|(_, v)| v).collect();
        if episodes.is_empty() {
            continue;
        }
        let t_max = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let mean_at = |f: fn(&MetricRow) -> f64| -> Vec<f64> {
            (1..=t_max)
                .map(|t| {
                    let vals: Vec<f64> = episodes.iter().flat_map(|e| e.iter().filter(|r| r.t == t).map(|r| f(r))).collect();
                    vals.iter().sum::<f64>() / vals.len().max(1) as f64
                })
                .collect()
        };
        let mean_reward = episodes.iter().map(|e| e.iter().map(|r| r.reward).sum::<f64>()).sum::<f64>() / episodes.len() as f64;
        systems.push(SystemSummary {
            system,
            episodes: episodes.len(),
            precision: mean_at(|r| r.precision),
            recall: mean_at(|r| r.recall),
            aspect_recall: mean_at(|r| r.aspect_recall),
            nsdcg: mean_at(|r| r.nsdcg),
            duplicate_rate: mean_at(|r| r.duplicate_rate),
            mean_episode_reward: mean_reward,
        });
        let mut stats = RecoveryStats {
            system,
            episodes: episodes.len(),
            qualifying: 0,
            recovered: 0,
        };
        for e in &episodes {
            let mut ordered = (*e).clone();
            ordered.sort_by_key(|r| r.t);
            if let Some(rec) = episode_recovery(&ordered, config.k) {
                stats.qualifying += 1;
                stats.recovered += usize::from(rec);
            }
        }
        recovery.push(stats);
    }
    Ok(ExperimentReport {
        config_hash: hex(&experiment_hash(config)?),
        allow_duplicates: config.allow_duplicates,
        iterations: config.iterations,
        k: config.k,
        systems,
        recovery,
        training,
    })
}

impl TrainingSummary {
    pub fn from_curve(topic_id: &str, compressor: Compressor, best_mean_return: f64, curve: &[BatchStats]) -> Self {
        Self {
            topic_id: topic_id.to_string(),
            compressor,
            best_mean_return,
            first_mean_return: curve.first().map_or(0.0, |b| b.mean_return),
            last_mean_return: curve.last().map_or(0.0, |b| b.mean_return),
        }
    }
}

pub fn training_summaries(agents: &[TrainedAgent]) -> Vec<TrainingSummary> {
    agents
        .iter()
        .map(|a| TrainingSummary::from_curve(&a.topic_id, a.compressor, a.best_mean_return, &a.curve))
        .collect()
}

/// Writes `summary.csv`, `duplicates.csv` and `report.json`.
pub fn write_report(out: &Path, report: &ExperimentReport) -> Result<()> {
    create_dir(out)?;
    let mut summary = String::from("system,t,precision,recall,aspect_recall,nsdcg,duplicate_rate\n");
    for s in &report.systems {
        for t in 0..s.recall.len() {
            let _ = writeln!(
                summary,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.system,
                t + 1,
                s.precision[t],
                s.recall[t],
                s.aspect_recall[t],
                s.nsdcg[t],
                s.duplicate_rate[t]
            );
        }
    }
    let path = out.join("summary.csv");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;

    let t_max = report.systems.iter().map(|s| s.duplicate_rate.len()).max().unwrap_or(0);
    let mut dup = String::from("system");
    for t in 1..=t_max {
        let _ = write!(dup, ",t={t}");
    }
    dup.push('\n');
    for s in &report.systems {
        dup.push_str(s.system.name());
        for d in &s.duplicate_rate {
            let _ = write!(dup, ",{:.1}%", d * 100.0);
        }
        dup.push('\n');
    }
    let path = out.join("duplicates.csv");
    std::fs::write(&path, dup).map_err(|e| Error::io(&path, e))?;

    let path = out.join("report.json");
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Everything produced by [`run_experiment_with`].
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub agents: Vec<TrainedAgent>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Trains, evaluates and reports on already prepared topics, writing every
/// artifact under `config.output_dir`.
pub fn run_experiment_with(topics: &[PreparedTopic], config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    let out = config.output_dir.as_path();
    create_dir(out)?;
    let agents = train_agents(topics, &[Compressor::Tsne, Compressor::Svd], config, Some(out))?;
    let episodes = evaluate_systems(topics, &agents, config)?;
    write_episodes(out, &episodes)?;
    write_images(out, &episodes, topics)?;
    let rows: Vec<MetricRow> = episodes.iter().flat_map(EpisodeRecord::rows).collect();
    let report = aggregate(&rows, training_summaries(&agents), config)?;
    write_report(out, &report)?;
    Ok(ExperimentRun {
        report,
        agents,
        episodes,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    let topics = prepare_topics(config)?;
    run_experiment_with(&topics, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: usize, bp: f64, remaining: usize) -> MetricRow {
        MetricRow {
            system: System::Agent,
            topic_id: "x".into(),
            seed: 0,
            t,
            precision: 0.0,
            recall: 0.0,
            aspect_recall: 0.0,
            nsdcg: 0.0,
            duplicate_rate: 0.0,
            batch_precision: bp,
            reward: 0.0,
            relevant_remaining: remaining,
        }
    }

    #[test]
    fn recovery_classification() {
        let ep = |v: &[(f64, usize)]| -> Vec<MetricRow> { v.iter().enumerate().map(|(i, &(b, r))| row(i + 1, b, r)).collect() };
        let check = |rows: Vec<MetricRow>| episode_recovery(&rows.iter().collect::<Vec<_>>(), 5);
        assert_eq!(check(ep(&[(0.6, 20), (0.4, 18), (0.8, 14)])), None);
        assert_eq!(check(ep(&[(0.0, 20), (0.2, 19), (0.6, 16)])), Some(true));
        assert_eq!(check(ep(&[(0.0, 20), (0.4, 18), (0.4, 16)])), Some(false));
        // Nothing left to find: a low batch is not a mistake.
        assert_eq!(check(ep(&[(1.0, 4), (0.0, 4), (0.0, 4)])), None);
        // A drop at the last iteration leaves no chance to recover.
        assert_eq!(check(ep(&[(0.6, 20), (0.6, 18), (0.0, 18)])), None);
    }

    #[test]
    fn system_names() {
        for s in System::ALL {
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.name()));
        }
    }
}
