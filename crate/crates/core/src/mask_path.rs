//! Masked reasoning paths.
//!
//! Surface format, one `[STEP]` per reasoning step followed by a category
//! block:
//!
//! ```text
//! [STEP] Plainfield Town Hall is located in the country of [MASK 1].
//! [STEP] The capital of [MASK 1] is [MASK ANS].
//! [CATEGORY]
//! [MASK 1] [country]
//! [MASK ANS] [city]
//! ```
//!
//! Tags are matched case-insensitively and with loose interior whitespace,
//! then rewritten to their canonical surface form.

use std::collections::HashSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::ParseError;
use crate::gateway::ChatMessage;
use crate::prompts;

static TAG_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\[\s*mask\s+([a-z0-9]+)\s*\]").unwrap());
static STEP_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\[\s*step\s*\]").unwrap());
static CATEGORY_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\[\s*category\s*\]").unwrap());
static HINT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\[\s*mask\s+([a-z0-9]+)\s*\]\s*\[([^\[\]\n]*)\]").unwrap()
});

/// A placeholder for an entity still to be determined.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum MaskTag {
    /// `[MASK k]`. Identifiers are alphanumeric and stored uppercase.
    Id(String),
    /// `[MASK ANS]`, the final answer.
    Answer,
}

impl MaskTag {
    pub fn numbered(k: usize) -> Self {
        MaskTag::Id(k.to_string())
    }

    fn from_id(id: &str) -> Self {
        let id = id.to_uppercase();
        if id == "ANS" {
            MaskTag::Answer
        } else {
            MaskTag::Id(id)
        }
    }

    pub fn surface(&self) -> String {
        self.to_string()
    }

    pub fn is_answer(&self) -> bool {
        matches!(self, MaskTag::Answer)
    }
}

impl fmt::Display for MaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskTag::Id(id) => write!(f, "[MASK {id}]"),
            MaskTag::Answer => f.write_str("[MASK ANS]"),
        }
    }
}

impl From<MaskTag> for String {
    fn from(tag: MaskTag) -> String {
        tag.to_string()
    }
}

impl TryFrom<String> for MaskTag {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        let caps = TAG_RE
            .captures(&s)
            .filter(|c| c.get(0).map(|m| m.as_str().len()) == Some(s.trim().len()))
            .ok_or_else(|| format!("not a mask tag: {s:?}"))?;
        Ok(MaskTag::from_id(&caps[1]))
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One reasoning step; `tags` lists tag occurrences left to right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedStep {
    text: String,
    tags: Vec<MaskTag>,
}

impl MaskedStep {
    /// Canonicalizes tag surface forms and whitespace.
    pub fn new(raw: &str) -> Self {
        let canonical = TAG_RE.replace_all(raw, |c: &regex::Captures<'_>| {
            MaskTag::from_id(&c[1]).surface()
        });
        Self::from_canonical(collapse_ws(&canonical))
    }

    fn from_canonical(text: String) -> Self {
        let tags = TAG_RE
            .captures_iter(&text)
            .map(|c| MaskTag::from_id(&c[1]))
            .collect();
        MaskedStep { text, tags }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tags(&self) -> &[MaskTag] {
        &self.tags
    }

    pub fn contains(&self, tag: &MaskTag) -> bool {
        self.tags.contains(tag)
    }

    fn has_unidentified_mask(&self) -> bool {
        self.text.to_lowercase().matches("[mask").count() > self.tags.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeHint {
    pub tag: MaskTag,
    pub category: String,
}

/// An ordered list of masked steps with one category hint per tag.
///
/// Paths built by [`parse_masked_path`] or [`MaskedPath::new`] are valid;
/// [`MaskedPath::substitute`] yields partially resolved paths that keep the
/// original hints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedPath {
    steps: Vec<MaskedStep>,
    hints: Vec<TypeHint>,
}

impl MaskedPath {
    /// Validates and builds a path. Hints are reordered by first occurrence
    /// of their tag; hints for tags absent from every step are dropped.
    pub fn new(steps: Vec<MaskedStep>, hints: Vec<TypeHint>) -> Result<Self, ParseError> {
        for (i, step) in steps.iter().enumerate() {
            if step.has_unidentified_mask() {
                return Err(ParseError::UnidentifiedMask { step: i });
            }
        }
        if steps.iter().all(|s| s.tags.is_empty()) {
            return Err(ParseError::NoMasks);
        }
        let last_answer = steps
            .iter()
            .rposition(|s| s.contains(&MaskTag::Answer))
            .ok_or(ParseError::MissingAnswerTag)?;
        if last_answer != steps.len() - 1 {
            return Err(ParseError::AnswerTagNotLast);
        }

        let mut order: Vec<MaskTag> = Vec::new();
        for (i, step) in steps.iter().enumerate() {
            let mut fresh = 0;
            for tag in &step.tags {
                if !order.contains(tag) {
                    order.push(tag.clone());
                    fresh += 1;
                }
            }
            if fresh > 1 {
                return Err(ParseError::MultipleNewTags { step: i });
            }
        }

        let mut ordered = Vec::with_capacity(order.len());
        for tag in &order {
            let mut categories = hints
                .iter()
                .filter(|h| &h.tag == tag)
                .map(|h| h.category.trim())
                .filter(|c| !c.is_empty());
            let first = categories
                .next()
                .ok_or_else(|| ParseError::UnhintedTag(tag.clone()))?;
            if categories.any(|c| !c.eq_ignore_ascii_case(first)) {
                return Err(ParseError::ConflictingHints(tag.clone()));
            }
            ordered.push(TypeHint {
                tag: tag.clone(),
                category: first.to_string(),
            });
        }
        Ok(MaskedPath {
            steps,
            hints: ordered,
        })
    }

    pub fn steps(&self) -> &[MaskedStep] {
        &self.steps
    }

    pub fn hints(&self) -> &[TypeHint] {
        &self.hints
    }

    pub fn hint(&self, tag: &MaskTag) -> Option<&TypeHint> {
        self.hints.iter().find(|h| &h.tag == tag)
    }

    /// Tags in order of first occurrence.
    pub fn tags(&self) -> Vec<MaskTag> {
        let mut seen = HashSet::new();
        self.steps
            .iter()
            .flat_map(|s| s.tags.iter())
            .filter(|t| seen.insert((*t).clone()))
            .cloned()
            .collect()
    }

    pub fn is_resolved(&self) -> bool {
        self.steps.iter().all(|s| s.tags.is_empty())
    }

    /// Replaces every occurrence of `tag` with `entity`. An absent tag or an
    /// empty entity leaves the path unchanged.
    pub fn substitute(&self, tag: &MaskTag, entity: &str) -> MaskedPath {
        let entity = entity.trim();
        if entity.is_empty() {
            return self.clone();
        }
        let surface = tag.surface();
        let steps = self
            .steps
            .iter()
            .map(|step| {
                if step.contains(tag) {
                    MaskedStep::from_canonical(collapse_ws(&step.text.replace(&surface, entity)))
                } else {
                    step.clone()
                }
            })
            .collect();
        MaskedPath {
            steps,
            hints: self.hints.clone(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str("[STEP] ");
            out.push_str(&step.text);
            out.push('\n');
        }
        out.push_str("[CATEGORY]");
        for hint in &self.hints {
            out.push('\n');
            out.push_str(&format!("{} [{}]", hint.tag, hint.category));
        }
        out
    }

    pub fn step_texts(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.text.clone()).collect()
    }
}

impl fmt::Display for MaskedPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn parse_masked_path(raw: &str) -> Result<MaskedPath, ParseError> {
    if !raw.to_lowercase().contains("[mask") {
        return Err(ParseError::NoMasks);
    }
    let (body, block) = match CATEGORY_RE.find(raw) {
        Some(m) => (&raw[..m.start()], Some(&raw[m.end()..])),
        None => (raw, None),
    };
    let mut pieces = STEP_RE.split(body);
    // text before the first [STEP] is preamble
    pieces.next();
    let steps: Vec<MaskedStep> = pieces
        .map(MaskedStep::new)
        .filter(|s| !s.text.is_empty())
        .collect();
    if steps.is_empty() {
        return Err(ParseError::NoSteps);
    }
    let block = block.ok_or(ParseError::MissingCategoryBlock)?;
    let hints = HINT_RE
        .captures_iter(block)
        .map(|c| TypeHint {
            tag: MaskTag::from_id(&c[1]),
            category: collapse_ws(&c[2]),
        })
        .collect();
    MaskedPath::new(steps, hints)
}

/// `text` with every mask tag removed and whitespace collapsed.
pub fn remove_tags(text: &str) -> String {
    TAG_RE
        .replace_all(text, " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Removes `tag` from the step and collapses whitespace.
pub fn strip_mask(step: &MaskedStep, tag: &MaskTag) -> Result<String, ParseError> {
    if !step.contains(tag) {
        return Err(ParseError::TagAbsent(tag.clone()));
    }
    Ok(collapse_ws(&step.text.replace(&tag.surface(), "")))
}

pub fn build_generation_prompt(question: &str) -> Result<Vec<ChatMessage>, ParseError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(ParseError::EmptyQuestion);
    }
    Ok(prompts::generation_messages(question))
}

/// Token-level record of a masked path generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub tokens: Vec<String>,
    /// Predictive entropy of each token's distribution, in nats.
    pub per_token_entropy: Vec<f64>,
    pub has_full_distribution: bool,
}

impl GenerationTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
