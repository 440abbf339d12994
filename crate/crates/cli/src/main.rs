use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use corpus_explore::embed::Compressor;
use corpus_explore::harness::experiment::{ExperimentReport, System};
use corpus_explore::harness::pipeline::{self, ALL_COMPRESSORS};
use corpus_explore::harness::{run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "corpus-explore", version, about = "Corpus-level exploration for dynamic search")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment configuration. Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict the stage to one topic id, e.g. syn-00.
    #[arg(long, global = true)]
    topic: Option<String>,
    /// Compressor for `embed` and `train`. Both are processed when omitted.
    #[arg(long, global = true)]
    compressor: Option<Compressor>,
    #[arg(long, global = true)]
    allow_duplicates: bool,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic collections and judgments.
    Gen,
    /// Compress segment features and write embedding caches.
    Embed,
    /// Train one agent per topic and compressor.
    Train,
    /// Run agents and baselines, writing episode logs and metrics.
    Eval,
    /// Aggregate metrics into summary tables.
    Report,
    /// Render exploration heatmaps from the agent logs.
    Viz,
    /// Every stage in memory, then the report and images.
    Run,
    /// Print the effective configuration.
    Config,
}

impl Global {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(c) = self.compressor {
            config.compressor = c;
        }
        if self.allow_duplicates {
            config.allow_duplicates = true;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }

    fn compressors(&self) -> Vec<Compressor> {
        match self.compressor {
            Some(c) => vec![c],
            None => ALL_COMPRESSORS.to_vec(),
        }
    }
}

fn print_report(report: &ExperimentReport) {
    println!(
        "{:<14} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "system", "P@T", "R@T", "AR@T", "nsDCG@T", "dup%", "recovery"
    );
    for s in &report.systems {
        let recovery = report
            .recovery(s.system)
            .and_then(|r| r.rate().map(|x| format!("{}/{} {:.2}", r.recovered, r.qualifying, x)))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<14} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.2} {:>9}",
            s.system.name(),
            last(&s.precision),
            last(&s.recall),
            last(&s.aspect_recall),
            last(&s.nsdcg),
            100.0 * s.mean_duplicate_rate_after_first(),
            recovery
        );
    }
}

fn last(v: &[f64]) -> f64 {
    v.last().copied().unwrap_or(0.0)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = cli.global.load()?;
    let topic = cli.global.topic.as_deref();
    let out = config.output_dir.display().to_string();
    match cli.command {
        Command::Gen => {
            let ids = pipeline::gen_stage(&config, topic)?;
            println!("generated {} topics under {out}", ids.len());
        }
        Command::Embed => {
            let written = pipeline::embed_stage(&config, topic, &cli.global.compressors())?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Train => {
            let agents = pipeline::train_stage(&config, topic, &cli.global.compressors())?;
            for a in agents {
                let first = a.curve.first().map_or(0.0, |b| b.mean_return);
                println!(
                    "{} {:<4} return {:.3} -> best {:.3}",
                    a.topic_id, a.compressor, first, a.best_mean_return
                );
            }
        }
        Command::Eval => {
            let n = pipeline::eval_stage(&config, topic)?;
            println!("{n} episodes written to {out}/logs");
        }
        Command::Report => print_report(&pipeline::report_stage(&config)?),
        Command::Viz => {
            let written = pipeline::viz_stage(&config, topic)?;
            println!("{} images written", written.len());
        }
        Command::Run => {
            let run = run_experiment(&config)?;
            print_report(&run.report);
            let agent = run.report.system(System::Agent).map(|s| s.episodes).unwrap_or(0);
            println!("{agent} agent episodes; artifacts in {out}");
        }
        Command::Config => print!("{}", config.to_toml_string()?),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "corpus-explore",
            "train",
            "--seed",
            "99",
            "--compressor",
            "svd",
            "--allow-duplicates",
            "--out",
            "/tmp/x",
        ])
        .unwrap();
        let config = cli.global.load().unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.compressor, Compressor::Svd);
        assert!(config.allow_duplicates);
        assert_eq!(cli.global.compressors(), vec![Compressor::Svd]);
        assert!(Cli::try_parse_from(["corpus-explore", "embed", "--compressor", "pca"]).is_err());
    }
}
