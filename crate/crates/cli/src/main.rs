//! `linkwalk` — train, run, and evaluate the collective entity linker.
//!
//! Subcommands: `build-kb`, `train`, `link`, `eval`, `sweep`. Diagnostics go
//! to stderr; data (predictions, reports, CSV) goes to stdout.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use linkwalk_core::infer::{link_corpus, LinkOptions};
use linkwalk_core::train::train_with;
use linkwalk_core::{
    checkpoint, load_corpus, load_kb, micro_f1, Config, EmbeddingTable, Prediction,
    TransitionMode,
};

#[derive(Parser)]
#[command(name = "linkwalk", version, about = "Collective entity linking over a knowledge-base graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and index a KB file, writing the normalized form.
    #[command(name = "build-kb")]
    BuildKb { raw: PathBuf, out: PathBuf },
    /// Train a model as described by a config file.
    Train {
        config: PathBuf,
        /// Override a config key, e.g. `--set seed=3` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Link a corpus with a trained checkpoint, one JSON line per mention.
    Link {
        checkpoint: PathBuf,
        corpus: PathBuf,
        /// Knowledge base the checkpoint was trained against.
        #[arg(long)]
        kb: PathBuf,
        /// Random-walk layers (defaults to the checkpoint config).
        #[arg(long)]
        k: Option<usize>,
        /// Restart weight (defaults to the checkpoint config).
        #[arg(long)]
        lambda: Option<f64>,
        /// Transition mode: full, link_only, learned.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Score a prediction file against a corpus.
    Eval {
        predictions: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        kb: PathBuf,
    },
    /// Train and evaluate over the configured (k, lambda, gamma) grid,
    /// emitting one CSV row per cell.
    Sweep {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildKb { raw, out } => build_kb(&raw, &out),
        Command::Train { config, overrides } => train_cmd(&config, &overrides),
        Command::Link {
            checkpoint,
            corpus,
            kb,
            k,
            lambda,
            mode,
        } => link_cmd(&checkpoint, &corpus, &kb, k, lambda, mode.as_deref()),
        Command::Eval {
            predictions,
            corpus,
            kb,
        } => eval_cmd(&predictions, &corpus, &kb),
        Command::Sweep { config, overrides } => sweep_cmd(&config, &overrides),
    }
}

fn load_config(path: &PathBuf, overrides: &[String]) -> anyhow::Result<Config> {
    let mut config = Config::from_file(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    for spec in overrides {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {spec:?}"))?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn build_kb(raw: &PathBuf, out: &PathBuf) -> anyhow::Result<()> {
    let kb = load_kb(raw).with_context(|| format!("loading KB {}", raw.display()))?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    for page in kb.pages() {
        let record = serde_json::json!({
            "type": "page",
            "id": page.id,
            "title": page.title.join(" "),
            "text": page.body.join(" "),
            "outlinks": page.outlinks.iter().collect::<Vec<_>>(),
        });
        writeln!(w, "{record}")?;
    }
    for surface in kb.alias_surfaces() {
        let cands: Vec<serde_json::Value> = kb
            .candidate_priors(surface)
            .iter()
            .map(|(id, p)| serde_json::json!([id, p]))
            .collect();
        let record = serde_json::json!({
            "type": "alias",
            "surface": surface,
            "candidates": cands,
        });
        writeln!(w, "{record}")?;
    }
    w.flush()?;
    eprintln!(
        "indexed {} pages, {} aliases ({} dangling outlinks dropped, {} dangling alias candidates dropped)",
        kb.total_entities(),
        kb.alias_surfaces().len(),
        kb.dangling_outlinks,
        kb.dangling_candidates,
    );
    Ok(())
}

fn train_cmd(config_path: &PathBuf, overrides: &[String]) -> anyhow::Result<()> {
    let config = load_config(config_path, overrides)?;
    let kb = load_kb(config.kb_path()?)?;
    let corpus = load_corpus(config.corpus_path()?, &kb)?;
    let embeddings = EmbeddingTable::from_file_seeded(config.embeddings_path()?, config.seed)?;
    let checkpoint_path = config.checkpoint_path()?.to_path_buf();
    let log_path = config
        .log
        .clone()
        .unwrap_or_else(|| checkpoint_path.with_extension("log"));
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);

    eprintln!(
        "training on {} documents ({} mentions, {} dropped)",
        corpus.documents.len(),
        corpus.stats.retained(),
        corpus.stats.dropped_mentions
    );
    let outcome = train_with(&corpus, &kb, embeddings, &config, |record, params, opt| {
        checkpoint::save(&checkpoint_path, params, opt, &config)?;
        let line = serde_json::to_string(record)
            .map_err(|e| linkwalk_core::Error::Input(e.to_string()))?;
        writeln!(log_file, "{line}")?;
        eprintln!(
            "phase {} epoch {:>3}: loss {:.6} train_f1 {}",
            record.phase,
            record.epoch,
            record.loss,
            record
                .train_f1
                .map_or("n/a".to_string(), |f| format!("{f:.4}")),
        );
        Ok(())
    })?;
    log_file.flush()?;
    eprintln!(
        "done: {} epochs, checkpoint at {}",
        outcome.log.len(),
        checkpoint_path.display()
    );
    Ok(())
}

fn link_cmd(
    checkpoint_path: &PathBuf,
    corpus_path: &PathBuf,
    kb_path: &PathBuf,
    k: Option<usize>,
    lambda: Option<f64>,
    mode: Option<&str>,
) -> anyhow::Result<()> {
    let (params, _opt, config) = checkpoint::load(checkpoint_path)?;
    let kb = load_kb(kb_path)?;
    let corpus = load_corpus(corpus_path, &kb)?;
    let opts = LinkOptions {
        k: k.unwrap_or(config.k),
        lambda: lambda.unwrap_or(config.lambda),
        mode: mode
            .map(TransitionMode::parse)
            .transpose()?
            .unwrap_or(config.mode),
        dims: config.encoding_dims(),
        walk_candidates: config.walk_candidates,
    };
    let predictions = link_corpus(&params, &kb, &corpus, &opts)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for pred in &predictions {
        let line =
            serde_json::to_string(pred).map_err(|e| linkwalk_core::Error::Input(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    eprintln!(
        "linked {} mentions across {} documents (k={}, lambda={}, mode={})",
        predictions.len(),
        corpus.documents.len(),
        opts.k,
        opts.lambda,
        opts.mode.as_str()
    );
    Ok(())
}

fn eval_cmd(predictions: &PathBuf, corpus_path: &PathBuf, kb_path: &PathBuf) -> anyhow::Result<()> {
    let kb = load_kb(kb_path)?;
    let corpus = load_corpus(corpus_path, &kb)?;
    let file = std::fs::File::open(predictions)
        .with_context(|| format!("opening predictions {}", predictions.display()))?;
    let mut preds: Vec<Prediction> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pred: Prediction = serde_json::from_str(&line)
            .map_err(|e| anyhow!("bad prediction at line {}: {e}", idx + 1))?;
        preds.push(pred);
    }
    let report = micro_f1(&preds, &corpus)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!(
        "micro_f1 {} over {} mentions ({} correct, gold recall {})",
        report
            .micro_f1
            .map_or("null".to_string(), |f| format!("{f:.4}")),
        report.total,
        report.correct,
        report
            .gold_recall
            .map_or("null".to_string(), |f| format!("{f:.4}")),
    );
    Ok(())
}

fn sweep_cmd(config_path: &PathBuf, overrides: &[String]) -> anyhow::Result<()> {
    let base = load_config(config_path, overrides)?;
    let kb = load_kb(base.kb_path()?)?;
    let corpus = load_corpus(base.corpus_path()?, &kb)?;
    let validation = load_corpus(base.validation_path()?, &kb)?;
    let embeddings_path = base.embeddings_path()?.to_path_buf();

    let mut cells: Vec<(usize, f64, f64)> = Vec::new();
    for &k in &base.sweep_k {
        for &l in &base.sweep_lambda {
            for &g in &base.sweep_gamma {
                cells.push((k, l, g));
            }
        }
    }

    eprintln!("sweeping {} grid cells", cells.len());
    let mut rows: Vec<Option<String>> = vec![None; cells.len()];
    std::thread::scope(|scope| -> anyhow::Result<()> {
        let mut handles = Vec::new();
        for (ci, &(k, lambda, gamma)) in cells.iter().enumerate() {
            let base = &base;
            let kb = &kb;
            let corpus = &corpus;
            let validation = &validation;
            let embeddings_path = &embeddings_path;
            handles.push((
                ci,
                scope.spawn(move || -> anyhow::Result<String> {
                    let mut config = base.clone();
                    config.k = k;
                    config.lambda = lambda;
                    config.gamma = gamma;
                    let embeddings =
                        EmbeddingTable::from_file_seeded(embeddings_path, config.seed)?;
                    let outcome =
                        train_with(corpus, kb, embeddings, &config, |_, _, _| Ok(()))?;
                    let opts = LinkOptions {
                        k,
                        lambda,
                        mode: config.mode,
                        dims: config.encoding_dims(),
                        walk_candidates: config.walk_candidates,
                    };
                    let preds = link_corpus(&outcome.params, kb, validation, &opts)?;
                    let report = micro_f1(&preds, validation)?;
                    let f1 = report
                        .micro_f1
                        .map_or("nan".to_string(), |f| format!("{f:.6}"));
                    Ok(format!("{k},{lambda},{gamma},{f1}"))
                }),
            ));
        }
        for (ci, handle) in handles {
            let row = handle
                .join()
                .map_err(|_| anyhow!("sweep cell panicked"))??;
            rows[ci] = Some(row);
        }
        Ok(())
    })?;

    println!("k,lambda,gamma,micro_f1");
    for row in rows {
        println!("{}", row.expect("all cells computed"));
    }
    Ok(())
}
