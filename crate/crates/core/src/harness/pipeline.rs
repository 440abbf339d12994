//! File-based stages behind the command-line tool. Each stage reads what
//! the previous one wrote under `output_dir`:
//!
//! ```text
//! gen    corpus/{topic}.jsonl, ground_truth.jsonl
//! embed  embeddings/{topic}-{compressor}.emb
//! train  checkpoints/, training/
//! eval   logs/, metrics.jsonl
//! report summary.csv, duplicates.csv, report.json
//! viz    images/
//! ```

use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::episode::{read_episode_log, TopicData};
use super::experiment::{
    aggregate, checkpoint_path, evaluate_systems, experiment_hash, generate_topics, image_path, log_path,
    read_metric_rows, train_agents, write_episodes, write_report, ExperimentReport,
    PreparedTopic, System, TrainedAgent, TrainingSummary,
};
use super::viz::export_exploration_image;
use crate::agent::{load_checkpoint, BatchStats};
use crate::corpus::{read_corpus, write_corpus};
use crate::embed::{read_embedding_cache, write_embedding_cache, Compressor};
use crate::error::{Error, Result};
use crate::sim::{load_ground_truth, write_ground_truth, TopicGroundTruth};

pub const ALL_COMPRESSORS: [Compressor; 2] = [Compressor::Tsne, Compressor::Svd];

pub fn corpus_path(out: &Path, topic_id: &str) -> PathBuf {
    out.join("corpus").join(format!("{topic_id}.jsonl"))
}

pub fn ground_truth_path(out: &Path) -> PathBuf {
    out.join("ground_truth.jsonl")
}

pub fn embedding_path(out: &Path, topic_id: &str, compressor: Compressor) -> PathBuf {
    out.join("embeddings").join(format!("{topic_id}-{compressor}.emb"))
}

fn create_parent(path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn selected(config: &ExperimentConfig, topic: Option<&str>) -> Result<Vec<(usize, String)>> {
    let all: Vec<(usize, String)> = config.topic_ids().into_iter().enumerate().collect();
    match topic {
        None => Ok(all),
        Some(id) => {
            let one: Vec<_> = all.into_iter().filter(|(_, t)| t == id).collect();
            if one.is_empty() {
                return Err(Error::invalid(format!("unknown topic {id:?}")));
            }
            Ok(one)
        }
    }
}

/// Writes the synthetic collections and their judgments.
pub fn gen_stage(config: &ExperimentConfig, topic: Option<&str>) -> Result<Vec<String>> {
    config.validate()?;
    let out = &config.output_dir;
    let wanted = selected(config, topic)?;
    let generated = generate_topics(config)?;
    let mut truths = Vec::new();
    for (index, id) in &wanted {
        let (docs, truth) = &generated[*index];
        let path = corpus_path(out, id);
        create_parent(&path)?;
        write_corpus(&path, docs)?;
        truths.push(truth.clone());
    }
    let gt = ground_truth_path(out);
    create_parent(&gt)?;
    write_ground_truth(&gt, &truths)?;
    Ok(wanted.into_iter().map(|(_, id)| id).collect())
}

fn load_topic_data(config: &ExperimentConfig, topic: Option<&str>) -> Result<Vec<(usize, TopicData)>> {
    let out = &config.output_dir;
    let truths: Vec<TopicGroundTruth> = load_ground_truth(ground_truth_path(out))?;
    let mut loaded = Vec::new();
    for (index, id) in selected(config, topic)? {
        let Some(truth) = truths.iter().find(|t| t.topic_id == id) else {
            if topic.is_some() {
                return Err(Error::invalid(format!("topic {id} missing from ground truth; run gen")));
            }
            continue;
        };
        let docs = read_corpus(corpus_path(out, &id))?;
        loaded.push((index, TopicData::new(&docs, truth.clone(), config.segments)?));
    }
    if loaded.is_empty() {
        return Err(Error::invalid("no topics found; run gen"));
    }
    Ok(loaded)
}

/// Compresses every topic's segments and writes the embedding caches.
pub fn embed_stage(config: &ExperimentConfig, topic: Option<&str>, compressors: &[Compressor]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (index, data) in load_topic_data(config, topic)? {
        for &c in compressors {
            let emb = data.embed(c, &config.tsne_for(index))?;
            let path = embedding_path(&config.output_dir, &data.topic.topic_id, c);
            create_parent(&path)?;
            write_embedding_cache(&path, &emb, data.segments())?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Rebuilds prepared topics from the corpus, judgments and both caches.
pub fn load_prepared(config: &ExperimentConfig, topic: Option<&str>) -> Result<Vec<PreparedTopic>> {
    let mut topics = Vec::new();
    for (index, data) in load_topic_data(config, topic)? {
        let mut embs = Vec::new();
        for c in ALL_COMPRESSORS {
            let path = embedding_path(&config.output_dir, &data.topic.topic_id, c);
            if !path.exists() {
                return Err(Error::invalid(format!("missing {}; run embed", path.display())));
            }
            let (emb, segments) = read_embedding_cache(&path)?;
            if segments != data.segments() {
                return Err(Error::Shape(format!("{} has {segments} segments per document", path.display())));
            }
            embs.push(emb);
        }
        topics.push(PreparedTopic::from_embeddings(index, data, &embs[0], &embs[1])?);
    }
    Ok(topics)
}

pub fn train_stage(config: &ExperimentConfig, topic: Option<&str>, compressors: &[Compressor]) -> Result<Vec<TrainedAgent>> {
    let topics = load_prepared(config, topic)?;
    train_agents(&topics, compressors, config, Some(&config.output_dir))
}

/// Loads every checkpoint present for the given topics. Checkpoints written
/// under a different configuration are rejected.
pub fn load_agents(config: &ExperimentConfig, topics: &[PreparedTopic]) -> Result<Vec<TrainedAgent>> {
    let hash = experiment_hash(config)?;
    let mut agents = Vec::new();
    for t in topics {
        for c in ALL_COMPRESSORS {
            let path = checkpoint_path(&config.output_dir, t.topic_id(), c);
            if !path.exists() {
                continue;
            }
            let (params, stored) = load_checkpoint(&path)?;
            if stored != hash {
                return Err(Error::Config(format!(
                    "{} was trained under a different configuration",
                    path.display()
                )));
            }
            agents.push(TrainedAgent {
                topic_id: t.topic_id().to_string(),
                compressor: c,
                params,
                best_mean_return: f64::NAN,
                curve: Vec::new(),
            });
        }
    }
    Ok(agents)
}

/// Runs every system over the evaluation seeds and writes logs and
/// `metrics.jsonl`. Returns the number of episodes.
pub fn eval_stage(config: &ExperimentConfig, topic: Option<&str>) -> Result<usize> {
    let topics = load_prepared(config, topic)?;
    let agents = load_agents(config, &topics)?;
    if agents.is_empty() {
        return Err(Error::invalid("no checkpoints found; run train"));
    }
    let records = evaluate_systems(&topics, &agents, config)?;
    write_episodes(&config.output_dir, &records)?;
    Ok(records.len())
}

fn read_training_summaries(config: &ExperimentConfig) -> Result<Vec<TrainingSummary>> {
    let mut summaries = Vec::new();
    for id in config.topic_ids() {
        for c in ALL_COMPRESSORS {
            let path = config.output_dir.join("training").join(format!("{id}-{c}.jsonl"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let curve = text
                .lines()
                .enumerate()
                .map(|(i, l)| {
                    serde_json::from_str::<BatchStats>(l).map_err(|e| Error::Parse {
                        path: path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let best = curve.iter().map(|b| b.mean_return).fold(f64::NEG_INFINITY, f64::max);
            summaries.push(TrainingSummary::from_curve(&id, c, best, &curve));
        }
    }
    Ok(summaries)
}

/// Aggregates `metrics.jsonl` and the training curves into the report files.
pub fn report_stage(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let rows = read_metric_rows(config.output_dir.join("metrics.jsonl"))?;
    let report = aggregate(&rows, read_training_summaries(config)?, config)?;
    write_report(&config.output_dir, &report)?;
    Ok(report)
}

/// Renders an image for every agent episode log found on disk.
pub fn viz_stage(config: &ExperimentConfig, topic: Option<&str>) -> Result<Vec<PathBuf>> {
    let out = &config.output_dir;
    let mut written = Vec::new();
    for (_, data) in load_topic_data(config, topic)? {
        let doc_ids: Vec<String> = data.docs.iter().map(|d| d.doc_id.clone()).collect();
        for system in System::ALL.into_iter().filter(|s| s.is_agent()) {
            for seed in 0..config.eval_seeds {
                let log = log_path(out, system, &data.topic.topic_id, seed);
                if !log.exists() {
                    continue;
                }
                let entries = read_episode_log(&log)?;
                let path = image_path(out, system, &data.topic.topic_id, seed);
                create_parent(&path)?;
                export_exploration_image(&entries, &data.topic, &doc_ids, &path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
