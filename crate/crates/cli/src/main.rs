mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use decker_core::gateway::{ChatBackend, RemoteBackend, RemoteConfig, ScriptedBackend};
use decker_core::harness::{batch_runner, exact_sim, framework_similarity, jaccard_sim, run_single, CaseResult};
use decker_core::knowledge::{self, cases_to_json, EditMemory, EditRecord, MultiHopCase, RelationFrame};
use decker_core::resolve::{DecisionRoute, FillRoute};
use decker_core::retrieval::{Embedder, HashEmbedder, RemoteEmbedder, ScriptedEmbedder};
use decker_core::synth::{generate_cases, generate_kg, CaseSetSpec, OracleBackend, SynthKG};

use settings::{BackendKind, DatasetFormat, EmbedderKind, Settings, DEFAULT_REPORT};

#[derive(Parser)]
#[command(name = "decker", version, about = "Multi-hop question answering over edited facts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a case file (or a synthetic case set with the oracle backend).
    Run(Settings),
    /// Answer one question against inline edits and print the fill trace.
    Edit(EditArgs),
    /// Score two relation frames position by position.
    Similarity(SimilarityArgs),
    /// Write a synthetic case file.
    Gen(GenArgs),
}

#[derive(clap::Args)]
struct EditArgs {
    #[arg(long)]
    question: String,
    /// Edit as JSON: {"subject", "relation_prompt", "target_true", "target_new"}.
    #[arg(long = "edit")]
    edits: Vec<String>,
    /// JSON list of edits.
    #[arg(long)]
    edits_file: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Exact,
    Jaccard,
}

#[derive(clap::Args)]
struct SimilarityArgs {
    /// JSON list of relations, or one relation per line.
    first: PathBuf,
    second: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    sim: SimKind,
}

#[derive(clap::Args)]
struct GenArgs {
    /// Seeds both the world and the case draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    cases: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    hops: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    max_edits: usize,
    #[arg(long, default_value_t = 10)]
    group_size: usize,
    #[arg(long, default_value_t = 60)]
    kg_entities: usize,
    #[arg(long, default_value_t = 8)]
    kg_relations: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn world(s: &Settings) -> Result<SynthKG> {
    let (seed, entities, relations) = s.kg_shape();
    Ok(generate_kg(seed, entities, relations)?)
}

fn backend(s: &Settings) -> Result<Box<dyn ChatBackend>> {
    s.check()?;
    Ok(match s.backend_kind() {
        BackendKind::Remote => {
            let url = s.backend_url.clone().unwrap_or_default();
            let model = s.model.clone().unwrap_or_else(|| "default".into());
            let config = RemoteConfig::new(url, model).with_api_key_env(s.api_key_env());
            Box::new(RemoteBackend::new(config)?)
        }
        BackendKind::Scripted => {
            let path = s.fixtures.as_deref().unwrap_or(Path::new(""));
            Box::new(ScriptedBackend::from_file(path)?)
        }
        BackendKind::Oracle => {
            let seed = s.kg_seed.unwrap_or(0);
            let mut oracle = OracleBackend::new(world(s)?, s.fault_rate.unwrap_or(0.0), seed)?;
            if let Some(mode) = s.fault_mode {
                oracle = oracle.with_fault_mode(mode);
            }
            Box::new(oracle)
        }
    })
}

fn embedder(s: &Settings) -> Result<Box<dyn Embedder>> {
    Ok(match s.embedder.unwrap_or(EmbedderKind::Hash) {
        EmbedderKind::Hash => Box::new(HashEmbedder::new(
            s.embedder_dim.unwrap_or(HashEmbedder::DEFAULT_DIM),
            HashEmbedder::DEFAULT_PROBES,
        )),
        EmbedderKind::Remote => {
            let Some(url) = &s.embedder_url else {
                bail!("the remote embedder needs --embedder-url");
            };
            let key = std::env::var(s.api_key_env()).ok().filter(|k| !k.is_empty());
            Box::new(RemoteEmbedder::new(url.clone(), s.embedder_dim.unwrap_or(1024), key)?)
        }
        EmbedderKind::Scripted => {
            let Some(path) = &s.embedder_fixtures else {
                bail!("the scripted embedder needs --embedder-fixtures");
            };
            Box::new(ScriptedEmbedder::from_file(path)?)
        }
    })
}

fn load_dataset(s: &Settings) -> Result<Vec<MultiHopCase>> {
    match &s.dataset {
        Some(path) => {
            let set = match s.dataset_format.unwrap_or(DatasetFormat::Canonical) {
                DatasetFormat::Canonical => knowledge::load_cases(path)?,
                DatasetFormat::Mquake => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    knowledge::mquake::parse(&text)?
                }
            };
            if !set.flagged.is_empty() {
                log::warn!("{} cases have gold hops that do not chain", set.flagged.len());
            }
            Ok(set.cases)
        }
        None if s.backend_kind() == BackendKind::Oracle => {
            let spec = s.case_spec();
            Ok(generate_cases(&world(s)?, &spec)?.into_iter().map(|c| c.case).collect())
        }
        None => bail!("--dataset is required unless --backend oracle"),
    }
}

fn cmd_run(flags: &Settings) -> Result<()> {
    let s = Settings::resolve(flags)?;
    let config = s.run_config()?;
    let cases = load_dataset(&s)?;
    let llm = backend(&s)?;
    let emb = embedder(&s)?;
    let report = batch_runner(&cases, &config, llm.as_ref(), emb.as_ref())?;
    let out = s.report.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_REPORT));
    report.write(&out)?;
    if let Some(trace) = &s.trace {
        report.write_trace(trace)?;
    }
    println!(
        "accuracy {:.4} ({}/{}) report {}",
        report.accuracy,
        report.correct,
        report.total,
        out.display()
    );
    Ok(())
}

fn parse_edits(args: &EditArgs) -> Result<Vec<EditRecord>> {
    let mut records = Vec::new();
    if let Some(path) = &args.edits_file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let list: Vec<EditRecord> =
            serde_json::from_str(&text).with_context(|| format!("parsing edits in {}", path.display()))?;
        records.extend(list);
    }
    for raw in &args.edits {
        records.push(serde_json::from_str(raw).with_context(|| format!("malformed edit {raw}"))?);
    }
    Ok(records)
}

fn print_trace(result: &CaseResult) {
    let Some(rewrite) = result.rewrites.first() else {
        return;
    };
    let chosen = rewrite.selected.unwrap_or(0);
    let Some(line) = result.trace.iter().find(|t| t.sample_index == chosen) else {
        if let Some(e) = &rewrite.error {
            println!("error: {e}");
        }
        return;
    };
    if let Some(path) = &line.masked_path {
        println!("masked path:\n{path}");
    }
    if let Some(filled) = &line.filled {
        println!("fills:");
        for r in &filled.fill_log {
            let route = match r.route {
                FillRoute::Edit => "edit",
                FillRoute::Llm => "llm",
            };
            let decided = match r.decision.route {
                DecisionRoute::Thresholds => "thresholds",
                DecisionRoute::LlmFallback => "llm-judge",
            };
            let score = r
                .decision
                .top_hit
                .map(|h| format!("edit #{} score {:.4}", h.edit_index, h.score))
                .unwrap_or_else(|| "no hit".into());
            println!("  {:<10} {route:<4} {decided:<10} {score}  -> {}", r.tag.to_string(), r.entity);
        }
    }
    if let Some(e) = &line.error {
        println!("error: {e}");
    }
}

fn cmd_edit(args: &EditArgs) -> Result<()> {
    let s = Settings::resolve(&args.settings)?;
    let config = s.run_config()?;
    let edits = parse_edits(args)?
        .iter()
        .map(EditRecord::to_edit)
        .collect::<Result<Vec<_>, _>>()?;
    let memory = EditMemory::from_edits(&edits);
    let llm = backend(&s)?;
    let emb = embedder(&s)?;
    let result = run_single(&args.question, &memory, emb.as_ref(), llm.as_ref(), &config)?;
    print_trace(&result);
    match &result.answer {
        Some(a) => println!("answer: {a}"),
        None => println!("answer: (none)"),
    }
    Ok(())
}

fn read_frame(path: &Path) -> Result<RelationFrame> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        let list: Vec<String> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(RelationFrame(list));
    }
    Ok(RelationFrame(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
    ))
}

fn cmd_similarity(args: &SimilarityArgs) -> Result<()> {
    let (a, b) = (read_frame(&args.first)?, read_frame(&args.second)?);
    let score = match args.sim {
        SimKind::Exact => framework_similarity(&a, &b, exact_sim),
        SimKind::Jaccard => framework_similarity(&a, &b, jaccard_sim),
    };
    println!("{score}");
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let kg = generate_kg(args.seed, args.kg_entities, args.kg_relations)?;
    let spec = CaseSetSpec {
        count: args.cases,
        hops: args.hops.clone(),
        max_edits: args.max_edits,
        group_size: args.group_size,
        seed: args.seed,
    };
    let cases: Vec<MultiHopCase> = generate_cases(&kg, &spec)?.into_iter().map(|c| c.case).collect();
    let json = cases_to_json(&cases);
    match &args.out {
        Some(path) => {
            std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {} cases to {}", cases.len(), path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(s) => cmd_run(s),
        Command::Edit(a) => cmd_edit(a),
        Command::Similarity(a) => cmd_similarity(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
