//! Experiment orchestration: configuration, synthetic topics, episodes,
//! experiments and exploration images.

pub mod config;
pub mod episode;
pub mod experiment;
pub mod pipeline;
pub mod synth;
pub mod viz;

pub use config::ExperimentConfig;
pub use episode::{
    read_episode_log, run_episode, write_episode_log, AgentSearcher, BaselineSearcher, EnvState, EpisodeResult,
    EpisodeSettings, LogEntry, LoggedDoc, RandomSearcher, SearchEnv, Searcher, TopicAssets, TopicData,
};
pub use experiment::{
    aggregate, evaluate_systems, generate_topics, prepare_topic, prepare_topics, run_experiment, run_experiment_with,
    train_agents, write_report, EpisodeRecord, ExperimentReport, ExperimentRun, MetricRow, PreparedTopic,
    RecoveryStats, System, SystemSummary, TrainedAgent,
};
pub use synth::{generate_synthetic_topic, SyntheticTopicSpec};
pub use viz::{export_exploration_image, render_exploration_image};
