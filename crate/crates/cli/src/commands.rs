use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use geotrack::corpus::{
    generate_synthetic, parse_hurdat2, sample_pairs, stratified_split, write_hurdat2,
    SplitManifest, SplitSet,
};
use geotrack::evalkit::{aggregate_folds, comparison_table, evaluate, predict, report_csv};
use geotrack::geograph::build_graph;
use geotrack::nets::{gradcheck, Variant};
use geotrack::trainer::{fit_with, kfold, prepare, stream, Checkpoint};
use geotrack::Trajectory;
use serde::Serialize;

use crate::config::{Overrides, RunConfig};
use crate::prefix::read_prefix;
use crate::Command;

/// JSON artifact wrapper carrying the resolved configuration.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    config: &'a RunConfig,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_artifact<T: Serialize>(config: &RunConfig, name: &str, body: T) -> Result<()> {
    let artifact = Artifact {
        config,
        seed: config.seed,
        body,
    };
    write(&config.out, name, serde_json::to_string_pretty(&artifact)?)
}

fn load_corpus(config: &RunConfig) -> Result<Vec<Trajectory>> {
    let path = config.corpus_path()?;
    let text =
        fs::read_to_string(path).with_context(|| format!("reading corpus {}", path.display()))?;
    let parsed = parse_hurdat2(&text).with_context(|| format!("parsing {}", path.display()))?;
    if parsed.dropped_short > 0 {
        log::warn!(
            "dropped {} storms with fewer than two fixes",
            parsed.dropped_short
        );
    }
    Ok(parsed.trajectories)
}

fn load_split(
    config: &RunConfig,
    corpus: &[Trajectory],
    manifest: Option<&Path>,
) -> Result<SplitSet> {
    match manifest {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let manifest: SplitManifest = serde_json::from_str(&text)?;
            Ok(SplitSet::from_manifest(&manifest, corpus)?)
        }
        None => Ok(stratified_split(corpus, config.split, config.seed)?),
    }
}

pub fn run(command: Command, config_path: Option<&Path>, overrides: Overrides) -> Result<ExitCode> {
    let config = RunConfig::load(config_path)?.resolve(overrides)?;
    fs::create_dir_all(&config.out)
        .with_context(|| format!("creating {}", config.out.display()))?;
    write(
        &config.out,
        "resolved_config.json",
        serde_json::to_string_pretty(&config)?,
    )?;

    match command {
        Command::Prepare => {
            let corpus = load_corpus(&config)?;
            let split = load_split(&config, &corpus, None)?;
            let manifest = split.manifest();
            for w in &manifest.warnings {
                log::warn!("{w}");
            }
            write(
                &config.out,
                "split.json",
                serde_json::to_string_pretty(&manifest)?,
            )?;
            println!(
                "{} storms: {} train, {} val, {} test (manifest {})",
                corpus.len(),
                manifest.train.len(),
                manifest.val.len(),
                manifest.test.len(),
                manifest.hash()
            );
        }
        Command::BuildGraph { split } => {
            let corpus = load_corpus(&config)?;
            let split = load_split(&config, &corpus, split.as_deref())?;
            let mut graph = build_graph(&split.train);
            graph.built_from = split.manifest().hash();
            let stats = graph.stats();
            write(
                &config.out,
                "graph.json",
                serde_json::to_string(&graph.to_record())?,
            )?;
            #[derive(Serialize)]
            struct Body {
                stats: geotrack::geograph::GraphStats,
                graph_hash: String,
            }
            write_artifact(
                &config,
                "graph_stats.json",
                Body {
                    stats: stats.clone(),
                    graph_hash: graph.hash(),
                },
            )?;
            println!(
                "{} nodes, {} edges, {} self-loops",
                stats.nodes, stats.edges, stats.self_loops
            );
        }
        Command::Train { split } => {
            let corpus = load_corpus(&config)?;
            let split = load_split(&config, &corpus, split.as_deref())?;
            let data = prepare(&split, &config.train)?;
            let mut history = String::new();
            let checkpoint = fit_with(&data, &config.train, &config.model, |record| {
                history.push_str(&serde_json::to_string(record).expect("record serializes"));
                history.push('\n');
            })?;
            write(&config.out, "history.jsonl", history)?;
            write(&config.out, "checkpoint.json", checkpoint.to_json()?)?;
            let h = &checkpoint.history;
            println!(
                "best epoch {} of {} (val loss {:.6}, {:?})",
                h.best_epoch,
                h.epochs.len(),
                h.best_val_loss(),
                h.stop_reason
            );
        }
        Command::Evaluate { checkpoint, split } => {
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let corpus = load_corpus(&config)?;
            let split = load_split(&config, &corpus, split.as_deref())?;
            let pairs = sample_pairs(
                &split.test,
                checkpoint.train.pairs_per_trajectory,
                stream::derive(config.seed, stream::TEST_PAIRS),
            )?;
            let report = evaluate(&checkpoint, &pairs)?;
            write(&config.out, "report.csv", report_csv(&report))?;
            write_artifact(&config, "report.json", &report)?;
            print!("{}", report_csv(&report));
        }
        Command::Crossval => {
            let corpus = load_corpus(&config)?;
            #[derive(Serialize)]
            struct Body {
                summaries: Vec<geotrack::evalkit::FoldSummary>,
                folds: Vec<geotrack::evalkit::BucketReport>,
            }
            let mut body = Body {
                summaries: Vec::new(),
                folds: Vec::new(),
            };
            for variant in Variant::ALL {
                let model = geotrack::nets::ModelConfig {
                    variant,
                    ..config.model.clone()
                };
                let runs = kfold(&corpus, &config.kfold, &config.train, &model)?;
                let reports: Vec<_> = runs.into_iter().map(|r| r.report).collect();
                body.summaries.push(aggregate_folds(&reports)?);
                body.folds.extend(reports);
            }
            let table = comparison_table(&body.summaries);
            write(&config.out, "comparison.md", &table)?;
            write_artifact(&config, "crossval.json", &body)?;
            print!("{table}");
        }
        Command::Predict { checkpoint, prefix } => {
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let prefix = read_prefix(&prefix)?;
            let next = predict(&checkpoint, &prefix)?;
            println!("{},{}", next.lat, next.lon);
        }
        Command::Synth => {
            let s = &config.synth;
            let corpus =
                generate_synthetic(s.trajectories, s.latent_nodes, s.noise_sigma, config.seed)?;
            write(
                &config.out,
                "synthetic.hurdat2",
                write_hurdat2(&corpus.trajectories),
            )?;
            #[derive(Serialize)]
            struct Body<'a> {
                latent: &'a geotrack::corpus::LatentGraph,
                walks: &'a [Vec<usize>],
            }
            write_artifact(
                &config,
                "latent.json",
                Body {
                    latent: &corpus.latent,
                    walks: &corpus.walks,
                },
            )?;
            println!(
                "{} trajectories on a {}-node latent graph",
                corpus.trajectories.len(),
                corpus.latent.nodes.len()
            );
        }
        Command::Gradcheck => {
            let outcomes = gradcheck::run_suite(config.seed)?;
            for o in &outcomes {
                println!(
                    "{} {:<32} max rel err {:.3e} (< {:.0e}, {} coords, worst {})",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.max_rel_err,
                    o.tolerance,
                    o.coordinates,
                    o.worst
                );
            }
            write_artifact(
                &config,
                "gradcheck.json",
                serde_json::json!({ "checks": outcomes }),
            )?;
            if outcomes.iter().any(|o| !o.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
