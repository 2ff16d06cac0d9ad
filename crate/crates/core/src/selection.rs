//! Uncertainty filtering and best-of-N answer selection.
//!
//! Sampled masked paths are ranked by the negative mean predictive entropy of
//! their tokens; the better half is filled, and the filled path whose
//! entities most often match their hinted types supplies the answer.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, SelectionError};
use crate::gateway::{yes_no_probability, ChatBackend, ChatRequest, ChatResponse, TokenLogprob, YES_NO_MIN_ALTERNATIVES};
use crate::mask_path::{GenerationTrace, MaskedPath};
use crate::prompts;
use crate::resolve::FilledPath;

const MASS_TOLERANCE: f64 = 1e-9;

/// `-Σ p ln p` in nats over the given outcomes. Zero probabilities contribute
/// nothing.
pub fn predictive_entropy(probs: &[f64]) -> Result<f64, SelectionError> {
    let mut total = 0.0;
    for &p in probs {
        if p < 0.0 || p.is_nan() {
            return Err(SelectionError::NegativeProbability(p));
        }
        total += p;
    }
    if total > 1.0 + MASS_TOLERANCE {
        return Err(SelectionError::MassAboveOne(total));
    }
    // compensated sum: large supports of near-equal terms drift otherwise
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for &p in probs.iter().filter(|&&p| p > 0.0) {
        let term = -p * p.ln();
        let t = sum + term;
        carry += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    Ok(sum + carry)
}

/// Entropy of one generated token's distribution.
///
/// With a full distribution the alternatives are used as given. With a top-k
/// slice, the unlisted mass `1 - Σ top-k` is treated as a single extra
/// outcome, which underestimates the true entropy.
pub fn token_entropy(record: &TokenLogprob, full_distribution: bool) -> f64 {
    let mut seen: Vec<&str> = Vec::with_capacity(record.alternatives.len() + 1);
    let mut probs: Vec<f64> = Vec::with_capacity(record.alternatives.len() + 2);
    for (token, lp) in record
        .alternatives
        .iter()
        .map(|a| (a.token.as_str(), a.logprob))
        .chain(std::iter::once((record.token.as_str(), record.logprob)))
    {
        if !seen.contains(&token) {
            seen.push(token);
            probs.push(lp.exp());
        }
    }
    let mass: f64 = probs.iter().sum();
    if mass > 1.0 {
        probs.iter_mut().for_each(|p| *p /= mass);
    } else if !full_distribution {
        probs.push(1.0 - mass);
    }
    predictive_entropy(&probs).unwrap_or(0.0)
}

pub fn trace_from_response(response: &ChatResponse) -> GenerationTrace {
    let records = response.token_logprobs.as_deref().unwrap_or(&[]);
    GenerationTrace {
        tokens: records.iter().map(|r| r.token.clone()).collect(),
        per_token_entropy: records
            .iter()
            .map(|r| token_entropy(r, response.full_distribution))
            .collect(),
        has_full_distribution: response.full_distribution,
    }
}

/// Negative mean per-token entropy; 0 is the most certain possible path.
pub fn rpp_score(trace: &GenerationTrace) -> Result<f64, SelectionError> {
    if trace.per_token_entropy.is_empty() {
        return Err(SelectionError::EmptyTrace);
    }
    let n = trace.per_token_entropy.len() as f64;
    Ok(-trace.per_token_entropy.iter().sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub n: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub keep_fraction: f64,
    /// Alternatives requested per generated token.
    pub logprobs_k: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n: 6,
            top_p: 0.95,
            temperature: 1.2,
            keep_fraction: 0.5,
            logprobs_k: 20,
        }
    }
}

/// One sampled masked path and its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// 0 is the greedy sample.
    pub sample_index: usize,
    pub masked: MaskedPath,
    pub trace: GenerationTrace,
    pub rpp_score: f64,
    pub filled: Option<FilledPath>,
    pub ki_score: Option<f64>,
    pub fill_error: Option<String>,
}

impl Candidate {
    pub fn new(sample_index: usize, masked: MaskedPath, trace: GenerationTrace) -> Self {
        let rpp_score = rpp_score(&trace).unwrap_or(f64::NEG_INFINITY);
        Candidate {
            sample_index,
            masked,
            trace,
            rpp_score,
            filled: None,
            ki_score: None,
            fill_error: None,
        }
    }
}

fn by_rpp(a: &Candidate, b: &Candidate) -> Ordering {
    b.rpp_score
        .total_cmp(&a.rpp_score)
        .then(a.sample_index.cmp(&b.sample_index))
}

/// Number of candidates kept out of `n`: `ceil(n * keep_fraction)`, at least one.
pub fn keep_count(n: usize, keep_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((n as f64 * keep_fraction).ceil() as usize).clamp(1, n)
}

/// Keeps the highest-RPP candidates, returned in sample order.
pub fn filter_top_half(mut candidates: Vec<Candidate>, keep_fraction: f64) -> Vec<Candidate> {
    let keep = keep_count(candidates.len(), keep_fraction);
    candidates.sort_by(by_rpp);
    candidates.truncate(keep);
    candidates.sort_by_key(|c| c.sample_index);
    candidates
}

pub fn ki_request(entity: &str, category: &str) -> ChatRequest {
    ChatRequest::greedy(prompts::type_check_messages(entity, category))
        .with_logprobs(YES_NO_MIN_ALTERNATIVES)
        .with_max_tokens(1)
}

/// 1 when the model prefers "yes" to "no" for the entity having the type.
pub fn ki_judge(entity: &str, category: &str, llm: &dyn ChatBackend) -> u8 {
    match yes_no_probability(llm, &ki_request(entity, category)) {
        Ok(yn) => u8::from(yn.is_yes()),
        Err(GatewayError::NeitherTokenFound) => 0,
        Err(e) => {
            log::warn!("type judgment for {entity:?} failed: {e}");
            0
        }
    }
}

/// Mean type-match judgment over the filled entities.
pub fn ki_score(filled: &FilledPath, llm: &dyn ChatBackend, include_answer: bool) -> f64 {
    let judged: Vec<(&str, &str)> = filled
        .fill_log
        .iter()
        .filter(|r| include_answer || !r.tag.is_answer())
        .map(|r| (r.entity.as_str(), r.category.as_str()))
        .collect();
    let judged = if judged.is_empty() {
        filled
            .fill_log
            .iter()
            .map(|r| (r.entity.as_str(), r.category.as_str()))
            .collect()
    } else {
        judged
    };
    if judged.is_empty() {
        return 0.0;
    }
    let hits: u32 = judged
        .par_iter()
        .map(|(e, c)| u32::from(ki_judge(e, c, llm)))
        .sum();
    f64::from(hits) / judged.len() as f64
}

/// Picks the filled candidate with the highest KI score; ties go to the
/// higher RPP score, then the lower sample index.
pub fn select_answer(candidates: &[Candidate]) -> Result<(String, &Candidate), SelectionError> {
    candidates
        .iter()
        .filter(|c| c.filled.is_some())
        .min_by(|a, b| {
            let ki = |c: &Candidate| c.ki_score.unwrap_or(f64::NEG_INFINITY);
            ki(b).total_cmp(&ki(a)).then_with(|| by_rpp(a, b))
        })
        .map(|c| {
            let answer = c.filled.as_ref().map(|f| f.answer.clone()).unwrap_or_default();
            (answer, c)
        })
        .ok_or(SelectionError::AllCandidatesFailed)
}
