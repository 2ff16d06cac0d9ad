//! End-to-end runs over case sets: sampling, filling, selection, batching
//! and reporting.

mod metrics;

pub use metrics::{
    direct_frame, exact_sim, extract_frame, framework_similarity, jaccard_sim, multi_hop_accuracy,
    parse_relations, split_steps,
};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::gateway::{ChatBackend, ChatRequest};
use crate::knowledge::{Edit, EditMemory, MatchMode, MultiHopCase};
use crate::mask_path::parse_masked_path;
use crate::prompts;
use crate::resolve::{resolve_path, ConflictConfig, FillRoute, FilledPath, ResolveContext};
use crate::retrieval::{EditIndex, Embedder};
use crate::seeding::derive_seed;
use crate::selection::{filter_top_half, ki_score, select_answer, trace_from_response, Candidate, SampleConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One greedy path, no filtering or type checks.
    #[default]
    Base,
    /// Best-of-N sampling with entropy filtering and type-check selection.
    Bon,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Mode::Base),
            "bon" => Ok(Mode::Bon),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Which side of each edit goes into the memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    #[default]
    Edited,
    /// The facts the edits replace, for pre-edit reference runs.
    Original,
}

impl std::str::FromStr for MemoryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edited" => Ok(MemoryMode::Edited),
            "original" => Ok(MemoryMode::Original),
            other => Err(format!("unknown memory mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub conflict: ConflictConfig,
    pub sample: SampleConfig,
    pub edit_batch_size: usize,
    pub parallelism: usize,
    pub retrieval_k: usize,
    pub match_mode: MatchMode,
    /// Try every rewrite even after one is answered correctly.
    pub all_rewrites: bool,
    /// Count the answer entity in the type-check score.
    pub ki_include_answer: bool,
    pub memory: MemoryMode,
    pub seed: u64,
    pub generation_max_tokens: usize,
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Base,
            conflict: ConflictConfig::default(),
            sample: SampleConfig::default(),
            edit_batch_size: 1,
            parallelism: 4,
            retrieval_k: 2,
            match_mode: MatchMode::Contain,
            all_rewrites: false,
            ki_include_answer: true,
            memory: MemoryMode::Edited,
            seed: 0,
            generation_max_tokens: 512,
            record_timing: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.edit_batch_size == 0 {
            return bad("edit_batch_size must be at least 1");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.retrieval_k < 2 {
            return bad("retrieval_k must be at least 2");
        }
        if self.sample.n == 0 {
            return bad("n must be at least 1");
        }
        if !(self.sample.keep_fraction > 0.0 && self.sample.keep_fraction <= 1.0) {
            return bad("keep_fraction must be in (0, 1]");
        }
        if !(self.sample.top_p > 0.0 && self.sample.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.sample.temperature <= 0.0 {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

/// Per-sample outcome as shown in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub sample_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rpp_score: Option<f64>,
    pub kept: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ki_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub routes: Vec<FillRoute>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteResult {
    pub rewrite_index: usize,
    pub question: String,
    pub answer: Option<String>,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
    pub candidates: Vec<CandidateSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One line of the optional trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub case_id: String,
    pub rewrite_index: usize,
    pub sample_index: usize,
    pub masked_path: Option<String>,
    pub rpp_score: Option<f64>,
    pub kept: bool,
    pub ki_score: Option<f64>,
    pub filled: Option<FilledPath>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub answer: Option<String>,
    pub correct: bool,
    pub rewrites: Vec<RewriteResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub backend: String,
    pub embedder: String,
    pub config: RunConfig,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
    pub cases: Vec<CaseResult>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Writes one JSON line per candidate.
    pub fn write_trace(&self, path: &Path) -> Result<(), HarnessError> {
        let io = |source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for line in self.cases.iter().flat_map(|c| &c.trace) {
            let json = serde_json::to_string(line).expect("trace serializes");
            writeln!(out, "{json}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Memory, index, models and settings shared by the cases of one batch.
#[derive(Clone, Copy)]
pub struct CaseContext<'a> {
    pub memory: &'a EditMemory,
    pub index: &'a EditIndex,
    pub embedder: &'a dyn Embedder,
    pub llm: &'a dyn ChatBackend,
    pub config: &'a RunConfig,
}

impl<'a> CaseContext<'a> {
    fn resolver(&self) -> ResolveContext<'a> {
        ResolveContext {
            memory: self.memory,
            index: self.index,
            embedder: self.embedder,
            llm: self.llm,
            conflict: self.config.conflict,
            retrieval_k: self.config.retrieval_k,
        }
    }
}

pub fn sample_seed(master: u64, case_id: &str, rewrite: usize, sample: usize) -> u64 {
    derive_seed(master, &[case_id, &rewrite.to_string(), &sample.to_string()])
}

fn generation_request(question: &str, sample: usize, seed: u64, config: &RunConfig) -> ChatRequest {
    let messages = prompts::generation_messages(question);
    let req = if sample == 0 {
        ChatRequest::greedy(messages)
    } else {
        ChatRequest::nucleus(messages, config.sample.top_p, config.sample.temperature, seed)
    };
    let req = req.with_max_tokens(config.generation_max_tokens);
    match config.mode {
        Mode::Bon => req.with_logprobs(config.sample.logprobs_k),
        Mode::Base => req,
    }
}

/// Generates and parses one sample. Errors are rendered to strings.
fn sample_path(question: &str, sample: usize, seed: u64, ctx: &CaseContext<'_>) -> Result<Candidate, String> {
    let req = generation_request(question, sample, seed, ctx.config);
    let reply = ctx.llm.complete(&req).map_err(|e| e.to_string())?;
    let path = parse_masked_path(&reply.text).map_err(|e| format!("unparseable path: {e}"))?;
    Ok(Candidate::new(sample, path, trace_from_response(&reply)))
}

fn fill(candidate: &mut Candidate, ctx: &CaseContext<'_>) {
    match resolve_path(&candidate.masked, &ctx.resolver()) {
        Ok(filled) => candidate.filled = Some(filled),
        Err(e) => candidate.fill_error = Some(e.to_string()),
    }
}

struct Attempt {
    answer: Option<String>,
    selected: Option<usize>,
    candidates: Vec<(usize, Result<Candidate, String>, bool)>,
    error: Option<String>,
}

fn attempt_base(question: &str, case_id: &str, rewrite: usize, ctx: &CaseContext<'_>) -> Attempt {
    let mut candidates = Vec::new();
    let mut chosen = None;
    for sample in 0..2 {
        let seed = sample_seed(ctx.config.seed, case_id, rewrite, sample);
        match sample_path(question, sample, seed, ctx) {
            Ok(c) => {
                chosen = Some(c);
                break;
            }
            Err(e) => candidates.push((sample, Err(e), false)),
        }
    }
    let Some(mut c) = chosen else {
        let error = candidates.iter().filter_map(|(_, r, _)| r.as_ref().err()).next_back().cloned();
        return Attempt { answer: None, selected: None, candidates, error };
    };
    fill(&mut c, ctx);
    let answer = c.filled.as_ref().map(|f| f.answer.clone());
    let error = c.fill_error.clone();
    let selected = answer.as_ref().map(|_| c.sample_index);
    candidates.push((c.sample_index, Ok(c), true));
    Attempt { answer, selected, candidates, error }
}

fn attempt_bon(question: &str, case_id: &str, rewrite: usize, ctx: &CaseContext<'_>) -> Attempt {
    let config = ctx.config;
    let sampled: Vec<(usize, Result<Candidate, String>)> = (0..config.sample.n)
        .into_par_iter()
        .map(|i| (i, sample_path(question, i, sample_seed(config.seed, case_id, rewrite, i), ctx)))
        .collect();
    let mut failed = Vec::new();
    let mut parsed = Vec::new();
    for (i, r) in sampled {
        match r {
            Ok(c) => parsed.push(c),
            Err(e) => failed.push((i, Err(e), false)),
        }
    }
    let mut kept = filter_top_half(parsed.clone(), config.sample.keep_fraction);
    let kept_idx: Vec<usize> = kept.iter().map(|c| c.sample_index).collect();
    let dropped: Vec<Candidate> = parsed
        .into_iter()
        .filter(|c| !kept_idx.contains(&c.sample_index))
        .collect();

    kept.par_iter_mut().for_each(|c| {
        fill(c, ctx);
        if let Some(f) = &c.filled {
            c.ki_score = Some(ki_score(f, ctx.llm, config.ki_include_answer));
        }
    });
    let (answer, selected, error) = match select_answer(&kept) {
        Ok((answer, c)) => (Some(answer), Some(c.sample_index), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    let mut candidates: Vec<(usize, Result<Candidate, String>, bool)> = failed;
    candidates.extend(kept.into_iter().map(|c| (c.sample_index, Ok(c), true)));
    candidates.extend(dropped.into_iter().map(|c| (c.sample_index, Ok(c), false)));
    candidates.sort_by_key(|(i, _, _)| *i);
    Attempt { answer, selected, candidates, error }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Runs every rewrite of a case (stopping at the first correct one unless
/// configured otherwise). The case is correct if any rewrite is.
pub fn run_case(case: &MultiHopCase, ctx: &CaseContext<'_>) -> CaseResult {
    let started = Instant::now();
    let mut rewrites = Vec::new();
    let mut trace = Vec::new();
    let mut answer = None;
    let mut correct = false;

    for (r, question) in case.rewrites.iter().enumerate() {
        let attempt = match ctx.config.mode {
            Mode::Base => attempt_base(question, &case.case_id, r, ctx),
            Mode::Bon => attempt_bon(question, &case.case_id, r, ctx),
        };
        let ok = attempt
            .answer
            .as_deref()
            .is_some_and(|a| case.is_correct(a, ctx.config.match_mode));
        let mut summaries = Vec::new();
        for (i, cand, kept) in attempt.candidates {
            let (summary, line) = match cand {
                Ok(c) => (
                    CandidateSummary {
                        sample_index: i,
                        masked_path: Some(c.masked.render()),
                        rpp_score: finite(c.rpp_score),
                        kept,
                        ki_score: c.ki_score,
                        answer: c.filled.as_ref().map(|f| f.answer.clone()),
                        routes: c.filled.as_ref().map(FilledPath::routes).unwrap_or_default(),
                        error: c.fill_error.clone(),
                    },
                    TraceLine {
                        case_id: case.case_id.clone(),
                        rewrite_index: r,
                        sample_index: i,
                        masked_path: Some(c.masked.render()),
                        rpp_score: finite(c.rpp_score),
                        kept,
                        ki_score: c.ki_score,
                        filled: c.filled,
                        error: c.fill_error,
                    },
                ),
                Err(e) => (
                    CandidateSummary {
                        sample_index: i,
                        masked_path: None,
                        rpp_score: None,
                        kept,
                        ki_score: None,
                        answer: None,
                        routes: Vec::new(),
                        error: Some(e.clone()),
                    },
                    TraceLine {
                        case_id: case.case_id.clone(),
                        rewrite_index: r,
                        sample_index: i,
                        masked_path: None,
                        rpp_score: None,
                        kept,
                        ki_score: None,
                        filled: None,
                        error: Some(e),
                    },
                ),
            };
            summaries.push(summary);
            trace.push(line);
        }
        rewrites.push(RewriteResult {
            rewrite_index: r,
            question: question.clone(),
            answer: attempt.answer.clone(),
            correct: ok,
            selected: attempt.selected,
            candidates: summaries,
            error: attempt.error,
        });
        if !correct {
            answer = attempt.answer;
        }
        correct |= ok;
        if correct && !ctx.config.all_rewrites {
            break;
        }
    }

    let error = if rewrites.iter().all(|r| r.answer.is_none()) {
        rewrites.iter().rev().find_map(|r| r.error.clone())
    } else {
        None
    };
    CaseResult {
        case_id: case.case_id.clone(),
        answer,
        correct,
        rewrites,
        error,
        elapsed_ms: ctx
            .config
            .record_timing
            .then(|| started.elapsed().as_secs_f64() * 1e3),
        trace,
    }
}

/// The edits a batch's memory is built from.
pub fn batch_edits(batch: &[MultiHopCase], mode: MemoryMode) -> Vec<Edit> {
    batch
        .iter()
        .flat_map(|c| &c.edits)
        .map(|e| match mode {
            MemoryMode::Edited => e.clone(),
            MemoryMode::Original => e.reverted(),
        })
        .collect()
}

/// Runs all cases in edit batches of `config.edit_batch_size`; each batch
/// shares one memory holding the union of its cases' edits.
pub fn batch_runner(
    cases: &[MultiHopCase],
    config: &RunConfig,
    llm: &dyn ChatBackend,
    embedder: &dyn Embedder,
) -> Result<Report, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    let mut results = Vec::with_capacity(cases.len());
    for (b, batch) in cases.chunks(config.edit_batch_size).enumerate() {
        let edits = batch_edits(batch, config.memory);
        let memory = EditMemory::from_edits(&edits);
        let index = EditIndex::build(&memory, embedder)?;
        log::info!("batch {b}: {} cases, {} edits in memory", batch.len(), memory.len());
        let ctx = CaseContext {
            memory: &memory,
            index: &index,
            embedder,
            llm,
            config,
        };
        let batch_results: Vec<CaseResult> = pool.install(|| batch.par_iter().map(|c| run_case(c, &ctx)).collect());
        results.extend(batch_results);
    }

    let correct = results.iter().filter(|r| r.correct).count();
    let accuracy = if results.is_empty() {
        0.0
    } else {
        multi_hop_accuracy(&results)?
    };
    Ok(Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        backend: llm.name().to_string(),
        embedder: embedder.name().to_string(),
        config: config.clone(),
        total: results.len(),
        correct,
        accuracy,
        elapsed_ms: config
            .record_timing
            .then(|| started.elapsed().as_secs_f64() * 1e3),
        cases: results,
    })
}

/// Runs one question against a memory, with no gold answer.
pub fn run_single(
    question: &str,
    memory: &EditMemory,
    embedder: &dyn Embedder,
    llm: &dyn ChatBackend,
    config: &RunConfig,
) -> Result<CaseResult, HarnessError> {
    let index = EditIndex::build(memory, embedder)?;
    let case = MultiHopCase {
        case_id: "single".into(),
        rewrites: vec![question.to_string()],
        original_answer: String::new(),
        edited_answer: String::new(),
        answer_aliases: Vec::new(),
        edits: Vec::new(),
        gold_hops: None,
    };
    let ctx = CaseContext {
        memory,
        index: &index,
        embedder,
        llm,
        config,
    };
    Ok(run_case(&case, &ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatResponse, ScriptedBackend};
    use crate::retrieval::HashEmbedder;

    fn case(rewrites: &[&str], gold: &str) -> MultiHopCase {
        MultiHopCase {
            case_id: "c".into(),
            rewrites: rewrites.iter().map(|s| s.to_string()).collect(),
            original_answer: "old".into(),
            edited_answer: gold.into(),
            answer_aliases: vec![],
            edits: vec![],
            gold_hops: None,
        }
    }

    fn scripted(answers: &[(&str, Option<&str>)]) -> ScriptedBackend {
        let mut b = ScriptedBackend::new();
        for (q, a) in answers {
            let req = ChatRequest::greedy(prompts::generation_messages(q)).with_max_tokens(512);
            match a {
                Some(a) => {
                    let sentence = format!("The thing of {q} is [MASK ANS].");
                    b.insert_request(
                        &req,
                        ChatResponse::text(format!("[STEP] {sentence}\n[CATEGORY]\n[MASK ANS] [thing]")),
                    );
                    let fill = ChatRequest::greedy(prompts::fill_messages("thing", &sentence)).with_max_tokens(32);
                    b.insert_request(&fill, ChatResponse::text(*a));
                }
                None => b.insert_request(&req, ChatResponse::text("no masks here")),
            }
        }
        b
    }

    fn run(c: &MultiHopCase, llm: &dyn ChatBackend, config: &RunConfig) -> CaseResult {
        let memory = EditMemory::new();
        let embedder = HashEmbedder::default();
        let index = EditIndex::build(&memory, &embedder).unwrap();
        run_case(c, &CaseContext { memory: &memory, index: &index, embedder: &embedder, llm, config })
    }

    #[test]
    fn any_rewrite_counts() {
        let llm = scripted(&[("q1", Some("wrong")), ("q2", Some("right")), ("q3", Some("wrong"))]);
        let c = case(&["q1", "q2", "q3"], "right");
        let r = run(&c, &llm, &RunConfig::default());
        assert!(r.correct);
        assert_eq!(r.rewrites.len(), 2);
        assert_eq!(r.answer.as_deref(), Some("right"));
        let all = RunConfig { all_rewrites: true, ..RunConfig::default() };
        let r = run(&c, &llm, &all);
        assert!(r.correct);
        assert_eq!(r.rewrites.len(), 3);
        assert_eq!(r.answer.as_deref(), Some("right"));
    }

    #[test]
    fn all_errors_are_incorrect() {
        let llm = scripted(&[("q1", None), ("q2", None)]);
        let r = run(&case(&["q1", "q2"], "x"), &llm, &RunConfig::default());
        assert!(!r.correct);
        assert!(r.error.is_some());
        // greedy then one nucleus retry per rewrite
        assert_eq!(r.rewrites[0].candidates.len(), 2);
    }

    #[test]
    fn config_checks() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig { edit_batch_size: 0, ..RunConfig::default() };
        assert!(matches!(bad.validate(), Err(HarnessError::Config(_))));
        let bad = RunConfig { retrieval_k: 1, ..RunConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn batch_memories_are_unions() {
        let mk = |i: usize| {
            let mut c = case(&["q"], "x");
            c.case_id = format!("c{i}");
            c.edits = vec![Edit::from_template("The capital of {} is", &format!("country_{i:03}"), "a", "b").unwrap()];
            c
        };
        let cases: Vec<MultiHopCase> = (0..300).map(mk).collect();
        let batches: Vec<usize> = cases.chunks(100).map(|b| EditMemory::from_edits(&batch_edits(b, MemoryMode::Edited)).len()).collect();
        assert_eq!(batches, vec![100, 100, 100]);
        let one: Vec<usize> = cases[..3].chunks(1).map(|b| batch_edits(b, MemoryMode::Edited).len()).collect();
        assert_eq!(one, vec![1, 1, 1]);
        let rev = batch_edits(&cases[..1], MemoryMode::Original);
        assert_eq!(rev[0].edited.object, "a");
    }
}
