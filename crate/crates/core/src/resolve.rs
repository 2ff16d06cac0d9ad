//! Conflict detection against the edit memory and stepwise filling of
//! masked paths.

use serde::{Deserialize, Serialize};

use crate::error::FillError;
use crate::gateway::{reply_is_yes, ChatBackend, ChatRequest};
use crate::knowledge::{Edit, EditMemory};
use crate::mask_path::{strip_mask, MaskTag, MaskedPath, TypeHint};
use crate::prompts;
use crate::retrieval::{build_query, EditIndex, Embedder, RetrievalHit};

/// Thresholds on the top retrieval score and on the gap to the runner-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ConflictConfig {
    fn default() -> Self {
        ConflictConfig {
            alpha: 1.5,
            beta: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRoute {
    Thresholds,
    LlmFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictDecision {
    pub is_edited: bool,
    pub route: DecisionRoute,
    pub top_hit: Option<RetrievalHit>,
    pub alpha_holds: bool,
    pub beta_holds: bool,
}

/// Decides whether the masked step is affected by the top retrieved edit.
///
/// With scores `s1 >= s2` (a missing runner-up counts as `-inf`), the
/// threshold verdict is accepted when `s1 > alpha` and `s1 - s2 > beta`
/// agree. Otherwise the LLM is asked whether the top edit's original fact
/// supports filling the step; support means the step conflicts with the edit.
/// A failed LLM call counts as no conflict.
pub fn detect_conflict(
    hits: &[RetrievalHit],
    step_text: &str,
    config: &ConflictConfig,
    memory: &EditMemory,
    llm: &dyn ChatBackend,
) -> ConflictDecision {
    let Some(top) = hits.first().copied() else {
        return ConflictDecision {
            is_edited: false,
            route: DecisionRoute::Thresholds,
            top_hit: None,
            alpha_holds: false,
            beta_holds: false,
        };
    };
    let second = hits.get(1).map_or(f64::NEG_INFINITY, |h| h.score);
    let alpha_holds = top.score > config.alpha;
    let beta_holds = top.score - second > config.beta;
    if alpha_holds == beta_holds {
        return ConflictDecision {
            is_edited: alpha_holds,
            route: DecisionRoute::Thresholds,
            top_hit: Some(top),
            alpha_holds,
            beta_holds,
        };
    }
    let is_edited = match memory.get(top.edit_index) {
        Some(edit) => judge_support(edit, step_text, llm),
        None => {
            log::warn!("hit {} outside memory of {}", top.edit_index, memory.len());
            false
        }
    };
    ConflictDecision {
        is_edited,
        route: DecisionRoute::LlmFallback,
        top_hit: Some(top),
        alpha_holds,
        beta_holds,
    }
}

fn judge_support(edit: &Edit, step_text: &str, llm: &dyn ChatBackend) -> bool {
    let request = ChatRequest::greedy(prompts::conflict_messages(&edit.original_statement, step_text))
        .with_max_tokens(4);
    match llm.complete(&request) {
        Ok(reply) => reply_is_yes(&reply.text),
        Err(e) => {
            log::warn!("conflict judgment failed, keeping parametric fill: {e}");
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillRoute {
    Edit,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillRecord {
    pub tag: MaskTag,
    pub entity: String,
    pub category: String,
    pub route: FillRoute,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_edit: Option<usize>,
    pub decision: ConflictDecision,
    pub query: String,
}

/// Loop state while filling one path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FillState {
    pub bindings: Vec<(MaskTag, String)>,
    pub last_filled: Option<String>,
    pub answer: Option<String>,
}

impl FillState {
    pub fn bind(&mut self, tag: &MaskTag, entity: &str) {
        self.bindings.push((tag.clone(), entity.to_string()));
        self.last_filled = Some(entity.to_string());
        if tag.is_answer() {
            self.answer = Some(entity.to_string());
        }
    }

    pub fn binding(&self, tag: &MaskTag) -> Option<&str> {
        self.bindings
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, e)| e.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledPath {
    pub steps: Vec<String>,
    pub bindings: Vec<(MaskTag, String)>,
    pub answer: String,
    pub fill_log: Vec<FillRecord>,
}

impl FilledPath {
    pub fn routes(&self) -> Vec<FillRoute> {
        self.fill_log.iter().map(|r| r.route).collect()
    }
}

/// Binds `tag` to the edited object of `edit`.
pub fn fill_from_edit(state: &mut FillState, path: &MaskedPath, tag: &MaskTag, edit: &Edit) -> MaskedPath {
    let entity = edit.edited.object.as_str();
    state.bind(tag, entity);
    path.substitute(tag, entity)
}

/// Cleans an LLM fill reply: first line only, trailing punctuation removed.
pub fn clean_fill_reply(reply: &str) -> String {
    let line = reply.trim().lines().next().unwrap_or("");
    line.trim()
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim()
        .to_string()
}

/// Asks the LLM to fill `tag` in `step_text` with an entity of the hinted type.
pub fn fill_from_llm(
    state: &mut FillState,
    path: &MaskedPath,
    tag: &MaskTag,
    hint: &TypeHint,
    step_text: &str,
    llm: &dyn ChatBackend,
) -> Result<MaskedPath, FillError> {
    let request = ChatRequest::greedy(prompts::fill_messages(&hint.category, step_text)).with_max_tokens(32);
    let reply = llm.complete(&request)?;
    let entity = clean_fill_reply(&reply.text);
    if entity.is_empty() {
        return Err(FillError::EmptyReply(tag.clone()));
    }
    state.bind(tag, &entity);
    Ok(path.substitute(tag, &entity))
}

/// Everything needed to resolve paths against one edit memory.
#[derive(Clone, Copy)]
pub struct ResolveContext<'a> {
    pub memory: &'a EditMemory,
    pub index: &'a EditIndex,
    pub embedder: &'a dyn Embedder,
    pub llm: &'a dyn ChatBackend,
    pub conflict: ConflictConfig,
    /// Number of hits retrieved per query (at least 2).
    pub retrieval_k: usize,
}

/// Fills a masked path step by step until `[MASK ANS]` is bound.
pub fn resolve_path(path: &MaskedPath, ctx: &ResolveContext<'_>) -> Result<FilledPath, FillError> {
    let mut state = FillState::default();
    let mut current = path.clone();
    let mut log = Vec::new();

    for j in 0..current.steps().len() {
        let step = current.steps()[j].clone();
        // bound tags are substituted away, so any remaining tag is unresolved
        let Some(tag) = step.tags().first().cloned() else {
            continue;
        };
        let hint = path
            .hint(&tag)
            .cloned()
            .ok_or_else(|| FillError::MissingHint(tag.clone()))?;
        let stripped = strip_mask(&step, &tag)?;
        let query = build_query(&stripped, state.last_filled.as_deref())?;
        let hits = ctx.index.search(ctx.embedder, &query, ctx.retrieval_k.max(2))?;
        let decision = detect_conflict(&hits, step.text(), &ctx.conflict, ctx.memory, ctx.llm);

        let edit = decision
            .is_edited
            .then(|| decision.top_hit.and_then(|h| ctx.memory.get(h.edit_index).map(|e| (h, e))))
            .flatten();
        let (next, route, source_edit) = match edit {
            Some((hit, edit)) => (
                fill_from_edit(&mut state, &current, &tag, edit),
                FillRoute::Edit,
                Some(hit.edit_index),
            ),
            None => (
                fill_from_llm(&mut state, &current, &tag, &hint, step.text(), ctx.llm)?,
                FillRoute::Llm,
                None,
            ),
        };
        current = next;
        log.push(FillRecord {
            tag: tag.clone(),
            entity: state.last_filled.clone().unwrap_or_default(),
            category: hint.category.clone(),
            route,
            source_edit,
            decision,
            query,
        });
        if tag.is_answer() {
            break;
        }
    }

    let answer = state.answer.clone().ok_or(FillError::UnreachableAnswer)?;
    Ok(FilledPath {
        steps: current.step_texts(),
        bindings: state.bindings,
        answer,
        fill_log: log,
    })
}
