use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use invrank::dataset::{
    assign_fold, load_corpus_from, Corpus, Label, LabeledDataset, Record, NUM_FOLDS,
};
use invrank::embeddings::{build_embedder, Embedder, ProviderKind};
use invrank::evalharness::{
    evaluate_problem, EvalContext, EvalMetrics, EvalProblem, Permutations, Report, ReportFormat,
    Strategy,
};
use invrank::llm_client::{generate_until, CannedChat, ChatBackend, RemoteChat};
use invrank::ranker::{
    model_file_name, rank, save_model, train, write_training_log, FoldModels, RankedList,
};
use invrank::sygus::{InvariantCandidate, Problem, Source};
use invrank::verifier::{dedup, verify_candidate, Solver, Verdict};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::{Cli, Command, GlobalOpts, ProviderArg};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
/// The command finished but some solver verdict was Unknown.
pub const EXIT_UNKNOWN: u8 = 2;

fn exit_code(any_unknown: bool) -> u8 {
    if any_unknown {
        EXIT_UNKNOWN
    } else {
        EXIT_OK
    }
}

fn configure(g: &GlobalOpts) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(g.config.as_deref())?;
    if let Some(s) = &g.solver {
        cfg.solver.solver_path = s.clone();
    }
    if let Some(p) = g.provider {
        cfg.provider.kind = match p {
            ProviderArg::Remote => ProviderKind::Remote,
            ProviderArg::Local => ProviderKind::LocalHash,
            ProviderArg::Tfidf => ProviderKind::Tfidf,
        };
    }
    if let Some(ks) = &g.ks {
        cfg.ks = ks.clone();
    }
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<u8> {
    let cfg = configure(&cli.global)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            bail!("--jobs must be positive");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let timings = cli.global.timings;
    pool.install(|| match &cli.command {
        Command::Parse => cmd_parse(&cfg),
        Command::Verify => cmd_verify(&cfg, timings),
        Command::Dedup => cmd_dedup(&cfg),
        Command::Embed => cmd_embed(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Rank { problem } => cmd_rank(&cfg, problem.as_deref()),
        Command::Eval { strategy } => {
            cmd_eval(&cfg, strategy.as_deref().unwrap_or(&Strategy::ALL), timings)
        }
        Command::Generate { problem, source } => cmd_generate(&cfg, problem.as_deref(), *source),
    })
}

fn corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    let c = load_corpus_from(&cfg.paths.problems, &cfg.paths.candidates)?;
    if c.problems.is_empty() {
        bail!("no problems found in {}", cfg.paths.problems.display());
    }
    Ok(c)
}

fn solver(cfg: &PipelineConfig) -> Solver {
    Solver::new(cfg.solver.clone())
}

/// The configured embedder; `None` for the TF-IDF provider. Remote vectors
/// are cached on disk.
fn embedder(cfg: &PipelineConfig) -> Result<Option<Box<dyn Embedder>>> {
    if cfg.provider.kind == ProviderKind::Tfidf {
        return Ok(None);
    }
    let mut p = cfg.provider.clone();
    if p.kind == ProviderKind::Remote && p.cache_dir.is_none() {
        p.cache_dir = Some(cfg.paths.cache.clone());
    }
    Ok(Some(build_embedder(&p)?))
}

fn require_embedder(cfg: &PipelineConfig) -> Result<Box<dyn Embedder>> {
    embedder(cfg)?.ok_or_else(|| anyhow!("this command needs an embedding provider, not tfidf"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_parse(cfg: &PipelineConfig) -> Result<u8> {
    let c = corpus(cfg)?;
    let total: usize = c.candidates.values().map(Vec::len).sum();
    for p in &c.problems {
        println!(
            "{}\tfold {}\t{} candidates",
            p.id,
            assign_fold(&p.id)?,
            c.candidates_for(&p.id).len()
        );
    }
    println!("{} problems, {} candidates", c.problems.len(), total);
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &PipelineConfig, timings: bool) -> Result<u8> {
    let c = corpus(cfg)?;
    let s = solver(cfg);
    let per_problem: Vec<Vec<Record>> = c
        .problems
        .par_iter()
        .map(|p| {
            c.candidates_for(&p.id)
                .iter()
                .map(|cand| {
                    let started = Instant::now();
                    let v = verify_candidate(p, cand, &s)
                        .with_context(|| format!("verifying {}", cand.id))?;
                    let mut r = Record::new(cand, &v);
                    if timings {
                        r.verify_us = Some(started.elapsed().as_micros() as u64);
                    }
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let records: Vec<Record> = per_problem.into_iter().flatten().collect();
    let unknown = records.iter().filter(|r| r.label == Label::Unknown).count();
    let verified = records.iter().filter(|r| r.label == Label::Pos).count();
    let ds = LabeledDataset::new(records)?;
    if let Some(dir) = cfg.paths.dataset.parent() {
        create_dir(dir)?;
    }
    ds.save(&cfg.paths.dataset)?;
    eprintln!(
        "{} candidates, {verified} verified, {unknown} unknown",
        ds.records.len()
    );
    println!("{}", cfg.paths.dataset.display());
    Ok(exit_code(unknown > 0))
}

fn cmd_dedup(cfg: &PipelineConfig) -> Result<u8> {
    let c = corpus(cfg)?;
    let s = solver(cfg);
    let rows: Vec<String> = c
        .problems
        .par_iter()
        .map(|p| {
            let cands = c.candidates_for(&p.id);
            let d = dedup(cands, &s).with_context(|| format!("deduplicating {}", p.id))?;
            let kept: Vec<&str> = d.kept.iter().map(|k| k.id.as_str()).collect();
            Ok(format!(
                "{},{},{},{},{}\n",
                p.id,
                cands.len(),
                d.kept.len(),
                d.calls,
                kept.join(";")
            ))
        })
        .collect::<Result<_>>()?;
    let path = cfg.paths.reports.join("dedup.csv");
    write_file(
        &path,
        &(String::from("problem,candidates,kept,calls,kept_ids\n") + &rows.concat()),
    )?;
    println!("{}", path.display());
    Ok(EXIT_OK)
}

fn cmd_embed(cfg: &PipelineConfig) -> Result<u8> {
    let c = corpus(cfg)?;
    let e = require_embedder(cfg)?;
    let counts: Vec<usize> = c
        .problems
        .par_iter()
        .map(|p| {
            let mut texts = vec![p.raw_text.as_str()];
            texts.extend(c.candidates_for(&p.id).iter().map(|k| k.raw_text.as_str()));
            e.embed(&texts)
                .with_context(|| format!("embedding {}", p.id))?;
            Ok(texts.len())
        })
        .collect::<Result<_>>()?;
    eprintln!(
        "embedded {} texts with {}",
        counts.iter().sum::<usize>(),
        e.tag()
    );
    if cfg.provider.kind == ProviderKind::Remote {
        println!(
            "{}",
            cfg.provider
                .cache_dir
                .as_ref()
                .unwrap_or(&cfg.paths.cache)
                .display()
        );
    }
    Ok(EXIT_OK)
}

fn labeled(cfg: &PipelineConfig, c: &Corpus) -> Result<LabeledDataset> {
    let ds = LabeledDataset::load(&cfg.paths.dataset).with_context(|| {
        format!(
            "loading dataset (run `verify` first): {}",
            cfg.paths.dataset.display()
        )
    })?;
    Ok(ds.with_problems(&c.problems))
}

fn cmd_train(cfg: &PipelineConfig) -> Result<u8> {
    let c = corpus(cfg)?;
    let ds = labeled(cfg, &c)?;
    let e = require_embedder(cfg)?;
    let models: Vec<_> = (0..NUM_FOLDS)
        .into_par_iter()
        .map(|fold| {
            train(&ds, fold, &cfg.hyperparams, e.as_ref())
                .with_context(|| format!("training fold {fold}"))
        })
        .collect::<Result<_>>()?;
    create_dir(&cfg.paths.models)?;
    for (fold, m) in (0..NUM_FOLDS).zip(&models) {
        let path = cfg.paths.models.join(model_file_name(fold));
        save_model(&m.net, &path)?;
        write_training_log(
            &m.epoch_losses,
            &cfg.paths.models.join(format!("train-fold{fold}.csv")),
        )?;
        println!("{}", path.display());
    }
    Ok(EXIT_OK)
}

fn selected<'a>(c: &'a Corpus, only: Option<&str>) -> Result<Vec<&'a Problem>> {
    match only {
        Some(id) => Ok(vec![c
            .problem(id)
            .ok_or_else(|| anyhow!("unknown problem `{id}`"))?]),
        None => Ok(c.problems.iter().collect()),
    }
}

#[derive(Serialize)]
struct RankOutput<'a> {
    problem: &'a str,
    fold: u8,
    model: String,
    ranking: &'a RankedList,
}

fn cmd_rank(cfg: &PipelineConfig, only: Option<&str>) -> Result<u8> {
    let c = corpus(cfg)?;
    let e = require_embedder(cfg)?;
    let models = FoldModels::load_dir(&cfg.paths.models)?;
    let problems = selected(&c, only)?;
    let paths: Vec<PathBuf> = problems
        .par_iter()
        .map(|p| {
            let cands = c.candidates_for(&p.id);
            let fold = assign_fold(&p.id)?;
            let net = models.for_problem(&p.id)?;
            let rl = rank(Some(net), p, cands, e.as_ref())
                .with_context(|| format!("ranking {}", p.id))?;
            let out = RankOutput {
                problem: &p.id,
                fold,
                model: model_file_name(fold),
                ranking: &rl,
            };
            let path = cfg
                .paths
                .reports
                .join("rank")
                .join(format!("{}.json", p.id));
            write_file(&path, &(serde_json::to_string_pretty(&out)? + "\n"))?;
            Ok(path)
        })
        .collect::<Result<_>>()?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(EXIT_OK)
}

fn cmd_eval(cfg: &PipelineConfig, strategies: &[Strategy], timings: bool) -> Result<u8> {
    let c = corpus(cfg)?;
    let ds = labeled(cfg, &c)?;
    let problems: Vec<EvalProblem> = c
        .problems
        .iter()
        .map(|p| EvalProblem::from_dataset(p.clone(), c.candidates_for(&p.id).to_vec(), &ds))
        .collect::<Result<_, _>>()?;
    let needs_embedder = strategies
        .iter()
        .any(|s| matches!(s, Strategy::RawEmbedding | Strategy::Irank));
    let e = if needs_embedder {
        Some(require_embedder(cfg)?)
    } else {
        None
    };
    let models = if strategies.contains(&Strategy::Irank) {
        let m = FoldModels::load_dir(&cfg.paths.models)?;
        if m.folds().next().is_none() {
            bail!(
                "no trained models in {} (run `train` first)",
                cfg.paths.models.display()
            );
        }
        Some(m)
    } else {
        None
    };
    let ctx = EvalContext {
        embedder: e.as_deref(),
        models: models.as_ref(),
        ks: cfg.ks.clone(),
        permutations: Permutations::Sampled {
            count: cfg.permutations,
            seed: cfg.seed,
        },
        timings,
    };
    let mut report = Report::new(&cfg.ks);
    let mut any_unknown = false;
    for &s in strategies {
        let per_problem = problems
            .par_iter()
            .map(|ep| evaluate_problem(s, ep, &ctx))
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("strategy {s}"))?;
        let m = EvalMetrics::new(per_problem, &cfg.ks);
        any_unknown |= m.any_unknown();
        report.push(s, m.aggregate);
    }
    for f in [
        ReportFormat::Json,
        ReportFormat::Csv,
        ReportFormat::Markdown,
    ] {
        let path = cfg.paths.reports.join(format!("eval.{}", f.extension()));
        write_file(&path, &report.render(f))?;
        println!("{}", path.display());
    }
    Ok(exit_code(any_unknown))
}

/// Replaces the problem's `<source>-<k>.inv` files with `cands`.
fn write_candidates(dir: &Path, source: Source, cands: &[&InvariantCandidate]) -> Result<()> {
    create_dir(dir)?;
    let prefix = format!("{source}-");
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if name.starts_with(&prefix) && name.ends_with(".inv") {
            fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
        }
    }
    for c in cands {
        let path = dir.join(format!("{prefix}{}.inv", c.generation_index));
        write_file(&path, &(c.raw_text.clone() + "\n"))?;
    }
    Ok(())
}

fn cmd_generate(cfg: &PipelineConfig, only: Option<&str>, source: Source) -> Result<u8> {
    let problems: Vec<Problem> = match only {
        Some(id) => {
            let path = cfg.paths.problems.join(format!("{id}.sl"));
            vec![invrank::sygus::load_problem(&path)?]
        }
        // candidates may not exist yet, so only the problems are loaded
        None => load_corpus_from(&cfg.paths.problems, Path::new(""))?.problems,
    };
    let s = solver(cfg);
    let backoff = Duration::from_millis(cfg.chat.backoff_ms);
    let lines: Vec<(String, bool)> = problems
        .par_iter()
        .map(|p| {
            let backend: Box<dyn ChatBackend> = match &cfg.paths.responses {
                Some(root) => Box::new(CannedChat::new(root, &p.id)?),
                None => Box::new(RemoteChat::new(cfg.chat.clone())?),
            };
            let g = generate_until(p, &cfg.budget, backend.as_ref(), &s, source, backoff)
                .with_context(|| format!("generating for {}", p.id))?;
            let cands: Vec<&InvariantCandidate> = g.candidates.iter().map(|(c, _)| c).collect();
            write_candidates(&cfg.paths.candidates.join(&p.id), source, &cands)?;
            let unknown = g
                .candidates
                .iter()
                .any(|(_, v)| matches!(v.verdict, Verdict::Unknown { .. }));
            let mut line = String::new();
            write!(
                line,
                "{}\t{} samples\t{} candidates\t{}",
                p.id,
                g.attempts,
                g.candidates.len(),
                if g.found_verified() {
                    "verified"
                } else {
                    "none verified"
                }
            )?;
            Ok((line, unknown))
        })
        .collect::<Result<_>>()?;
    for (l, _) in &lines {
        println!("{l}");
    }
    Ok(exit_code(lines.iter().any(|(_, u)| *u)))
}
