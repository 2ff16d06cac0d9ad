//! Facts, edits, edit memories and multi-hop cases.
//!
//! Entities are compared case-insensitively after whitespace normalization;
//! dataset strings disagree on casing often enough that exact comparison
//! misclassifies chains.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::KnowledgeError;

/// Lowercases and collapses runs of whitespace into single spaces.
pub fn normalize_entity(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn entities_eq(a: &str, b: &str) -> bool {
    normalize_entity(a) == normalize_entity(b)
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A knowledge triple `(subject, relation, object)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Fact {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Result<Self, KnowledgeError> {
        let fact = Fact {
            subject: subject.into().trim().to_string(),
            relation: relation.into().trim().to_string(),
            object: object.into().trim().to_string(),
        };
        fact.validate()?;
        Ok(fact)
    }

    pub fn validate(&self) -> Result<(), KnowledgeError> {
        for (name, value) in [
            ("subject", &self.subject),
            ("relation", &self.relation),
            ("object", &self.object),
        ] {
            if value.trim().is_empty() {
                return Err(KnowledgeError::EmptyField(name));
            }
        }
        Ok(())
    }
}

/// Placeholders accepted for the subject slot of a relation template.
const SUBJECT_SLOTS: [&str; 2] = ["{s}", "{}"];

fn subject_slot(template: &str) -> Result<&'static str, KnowledgeError> {
    let found: Vec<&'static str> = SUBJECT_SLOTS
        .iter()
        .copied()
        .filter(|slot| template.contains(slot))
        .collect();
    let count: usize = found.iter().map(|slot| template.matches(slot).count()).sum();
    match (found.first(), count) {
        (Some(slot), 1) => Ok(slot),
        (_, 0) => Err(KnowledgeError::Template(format!(
            "no subject placeholder in {template:?}"
        ))),
        _ => Err(KnowledgeError::Template(format!(
            "more than one subject placeholder in {template:?}"
        ))),
    }
}

/// Renders a relation template with its subject filled in, without an object.
pub fn render_relation(template: &str, subject: &str) -> Result<String, KnowledgeError> {
    let slot = subject_slot(template)?;
    Ok(collapse_ws(&template.replacen(slot, subject.trim(), 1)))
}

/// Renders the edited and original facts of an edit as sentences.
///
/// The template carries exactly one subject placeholder (`{s}` or `{}`); the
/// object is appended after a single space. Returns `(statement,
/// original_statement)`.
pub fn edit_to_statement(
    template: &str,
    subject: &str,
    original_object: &str,
    edited_object: &str,
) -> Result<(String, String), KnowledgeError> {
    let head = render_relation(template, subject)?;
    let statement = collapse_ws(&format!("{head} {}", edited_object.trim()));
    let original = collapse_ws(&format!("{head} {}", original_object.trim()));
    Ok((statement, original))
}

/// An edited fact paired with the fact it replaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub original: Fact,
    pub edited: Fact,
    /// Sentence form of the edited fact; this is what gets retrieved.
    pub statement: String,
    pub original_statement: String,
}

impl Edit {
    pub fn new(
        original: Fact,
        edited: Fact,
        statement: impl Into<String>,
        original_statement: impl Into<String>,
    ) -> Result<Self, KnowledgeError> {
        original.validate()?;
        edited.validate()?;
        if !entities_eq(&original.subject, &edited.subject) {
            return Err(KnowledgeError::EditMismatch(format!(
                "subject {:?} vs {:?}",
                original.subject, edited.subject
            )));
        }
        if !entities_eq(&original.relation, &edited.relation) {
            return Err(KnowledgeError::EditMismatch(format!(
                "relation {:?} vs {:?}",
                original.relation, edited.relation
            )));
        }
        if entities_eq(&original.object, &edited.object) {
            return Err(KnowledgeError::EditMismatch(format!(
                "object unchanged ({:?})",
                edited.object
            )));
        }
        Ok(Edit {
            original,
            edited,
            statement: statement.into(),
            original_statement: original_statement.into(),
        })
    }

    /// Builds an edit from a relation template such as `"The capital of {} is"`.
    /// The template doubles as the relation string of both facts.
    pub fn from_template(
        template: &str,
        subject: &str,
        target_true: &str,
        target_new: &str,
    ) -> Result<Self, KnowledgeError> {
        let (statement, original_statement) =
            edit_to_statement(template, subject, target_true, target_new)?;
        Edit::new(
            Fact::new(subject, template, target_true)?,
            Fact::new(subject, template, target_new)?,
            statement,
            original_statement,
        )
    }

    /// The same edit with original and edited sides swapped. A memory built
    /// from reverted edits holds the original facts.
    pub fn reverted(&self) -> Edit {
        Edit {
            original: self.edited.clone(),
            edited: self.original.clone(),
            statement: self.original_statement.clone(),
            original_statement: self.statement.clone(),
        }
    }

    fn key(&self) -> (String, String) {
        (
            normalize_entity(&self.edited.subject),
            normalize_entity(&self.edited.relation),
        )
    }
}

/// The retrievable corpus of edits: one object per `(subject, relation)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditMemory {
    edits: Vec<Edit>,
    #[serde(skip)]
    id_by_statement: HashMap<String, usize>,
}

impl EditMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edits<'a>(edits: impl IntoIterator<Item = &'a Edit>) -> Self {
        let mut memory = EditMemory::new();
        for edit in edits {
            memory.insert(edit.clone());
        }
        memory
    }

    /// Inserts an edit and returns its index.
    ///
    /// Identical statements are stored once. A later edit for an already
    /// edited `(subject, relation)` replaces the earlier one in place.
    pub fn insert(&mut self, edit: Edit) -> usize {
        if let Some(&idx) = self.id_by_statement.get(&edit.statement) {
            if self.edits[idx] == edit {
                return idx;
            }
        }
        let key = edit.key();
        if let Some(idx) = self.edits.iter().position(|e| e.key() == key) {
            log::warn!(
                "edit {:?} overrides earlier edit {:?} for the same subject and relation",
                edit.statement,
                self.edits[idx].statement
            );
            self.id_by_statement.remove(&self.edits[idx].statement);
            self.id_by_statement.insert(edit.statement.clone(), idx);
            self.edits[idx] = edit;
            return idx;
        }
        let idx = self.edits.len();
        self.id_by_statement.insert(edit.statement.clone(), idx);
        self.edits.push(edit);
        idx
    }

    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    pub fn get(&self, idx: usize) -> Option<&Edit> {
        self.edits.get(idx)
    }

    pub fn index_of(&self, statement: &str) -> Option<usize> {
        self.id_by_statement.get(statement).copied()
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn statements(&self) -> impl Iterator<Item = &str> {
        self.edits.iter().map(|e| e.statement.as_str())
    }
}

/// True iff every hop's object is the next hop's subject.
pub fn chain_check(hops: &[Fact]) -> bool {
    hops.windows(2)
        .all(|pair| entities_eq(&pair[0].object, &pair[1].subject))
}

/// How a final answer is compared against the gold answer and its aliases.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Normalized gold string contained in the normalized answer.
    #[default]
    Contain,
    Exact,
}

impl std::str::FromStr for MatchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contain" => Ok(MatchMode::Contain),
            "exact" => Ok(MatchMode::Exact),
            other => Err(format!("unknown match mode {other:?}")),
        }
    }
}

pub fn answer_matches(answer: &str, gold: &str, aliases: &[String], mode: MatchMode) -> bool {
    let answer = normalize_entity(answer);
    if answer.is_empty() {
        return false;
    }
    std::iter::once(gold)
        .chain(aliases.iter().map(String::as_str))
        .map(normalize_entity)
        .filter(|g| !g.is_empty())
        .any(|g| match mode {
            MatchMode::Contain => answer.contains(&g),
            MatchMode::Exact => answer == g,
        })
}

/// The ordered relations underlying a reasoning path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationFrame(pub Vec<String>);

impl RelationFrame {
    pub fn relations(&self) -> &[String] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// An edit as it appears in the canonical case file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub subject: String,
    pub relation_prompt: String,
    pub target_true: String,
    pub target_new: String,
}

impl EditRecord {
    pub fn to_edit(&self) -> Result<Edit, KnowledgeError> {
        Edit::from_template(
            &self.relation_prompt,
            &self.subject,
            &self.target_true,
            &self.target_new,
        )
    }

    pub fn from_edit(edit: &Edit) -> Self {
        EditRecord {
            subject: edit.edited.subject.clone(),
            relation_prompt: edit.edited.relation.clone(),
            target_true: edit.original.object.clone(),
            target_new: edit.edited.object.clone(),
        }
    }
}

/// One evaluation question with its paraphrases, edits and gold answers.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHopCase {
    pub case_id: String,
    pub rewrites: Vec<String>,
    pub original_answer: String,
    pub edited_answer: String,
    pub answer_aliases: Vec<String>,
    pub edits: Vec<Edit>,
    pub gold_hops: Option<Vec<Fact>>,
}

impl MultiHopCase {
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        if self.rewrites.is_empty() || self.rewrites.iter().all(|q| q.trim().is_empty()) {
            return Err(KnowledgeError::Case {
                case_id: self.case_id.clone(),
                reason: "no question rewrites".into(),
            });
        }
        if let Some(hops) = &self.gold_hops {
            if !chain_check(hops) {
                return Err(KnowledgeError::Case {
                    case_id: self.case_id.clone(),
                    reason: "gold hops do not chain".into(),
                });
            }
        }
        Ok(())
    }

    pub fn is_correct(&self, answer: &str, mode: MatchMode) -> bool {
        answer_matches(answer, &self.edited_answer, &self.answer_aliases, mode)
    }

    pub fn to_record(&self) -> CaseRecord {
        CaseRecord {
            case_id: self.case_id.clone(),
            rewrites: self.rewrites.clone(),
            original_answer: self.original_answer.clone(),
            edited_answer: self.edited_answer.clone(),
            answer_aliases: if self.answer_aliases.is_empty() {
                None
            } else {
                Some(self.answer_aliases.clone())
            },
            edits: self.edits.iter().map(EditRecord::from_edit).collect(),
            gold_hops: self.gold_hops.clone(),
        }
    }
}

/// Serialized form of a [`MultiHopCase`] in the canonical case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub rewrites: Vec<String>,
    pub original_answer: String,
    pub edited_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_aliases: Option<Vec<String>>,
    pub edits: Vec<EditRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_hops: Option<Vec<Fact>>,
}

impl CaseRecord {
    pub fn into_case(self) -> Result<MultiHopCase, KnowledgeError> {
        let edits = self
            .edits
            .iter()
            .map(EditRecord::to_edit)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| KnowledgeError::Case {
                case_id: self.case_id.clone(),
                reason: e.to_string(),
            })?;
        Ok(MultiHopCase {
            case_id: self.case_id,
            rewrites: self.rewrites,
            original_answer: self.original_answer,
            edited_answer: self.edited_answer,
            answer_aliases: self.answer_aliases.unwrap_or_default(),
            edits,
            gold_hops: self.gold_hops,
        })
    }
}

/// Cases loaded from a file. Cases whose gold hops fail [`chain_check`] are
/// kept but listed in `flagged`.
#[derive(Debug, Clone, Default)]
pub struct CaseSet {
    pub cases: Vec<MultiHopCase>,
    pub flagged: Vec<String>,
}

impl CaseSet {
    fn from_cases(cases: Vec<MultiHopCase>) -> Result<Self, KnowledgeError> {
        let mut flagged = Vec::new();
        for case in &cases {
            if case.rewrites.is_empty() {
                return Err(KnowledgeError::Case {
                    case_id: case.case_id.clone(),
                    reason: "no question rewrites".into(),
                });
            }
            if let Err(e) = case.validate() {
                log::warn!("{e}");
                flagged.push(case.case_id.clone());
            }
        }
        Ok(CaseSet { cases, flagged })
    }
}

pub fn parse_cases(json: &str) -> Result<CaseSet, KnowledgeError> {
    let records: Vec<CaseRecord> = serde_json::from_str(json)?;
    let cases = records
        .into_iter()
        .map(CaseRecord::into_case)
        .collect::<Result<Vec<_>, _>>()?;
    CaseSet::from_cases(cases)
}

pub fn load_cases(path: &Path) -> Result<CaseSet, KnowledgeError> {
    let text = std::fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_cases(&text)
}

pub fn cases_to_json(cases: &[MultiHopCase]) -> String {
    let records: Vec<CaseRecord> = cases.iter().map(MultiHopCase::to_record).collect();
    serde_json::to_string_pretty(&records).expect("case records serialize")
}

/// Adapter for the public MQuAKE files (`MQuAKE-CF-3k-v2.json`, `MQuAKE-T.json`).
pub mod mquake {
    use super::*;

    #[derive(Debug, Deserialize)]
    struct Target {
        str: String,
    }

    #[derive(Debug, Deserialize)]
    struct RequestedRewrite {
        prompt: String,
        subject: String,
        target_new: Target,
        target_true: Target,
    }

    #[derive(Debug, Default, Deserialize)]
    struct Orig {
        #[serde(default)]
        new_triples_labeled: Vec<Vec<String>>,
    }

    #[derive(Debug, Deserialize)]
    struct Item {
        case_id: serde_json::Value,
        requested_rewrite: Vec<RequestedRewrite>,
        questions: Vec<String>,
        answer: String,
        new_answer: String,
        #[serde(default)]
        new_answer_alias: Vec<String>,
        #[serde(default)]
        orig: Orig,
    }

    fn convert(item: Item) -> Result<MultiHopCase, KnowledgeError> {
        let case_id = match &item.case_id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let edits = item
            .requested_rewrite
            .iter()
            .map(|rw| {
                Edit::from_template(&rw.prompt, &rw.subject, &rw.target_true.str, &rw.target_new.str)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| KnowledgeError::Case {
                case_id: case_id.clone(),
                reason: e.to_string(),
            })?;
        let hops = item
            .orig
            .new_triples_labeled
            .iter()
            .filter(|t| t.len() == 3)
            .map(|t| Fact::new(&t[0], &t[1], &t[2]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MultiHopCase {
            case_id,
            rewrites: item.questions,
            original_answer: item.answer,
            edited_answer: item.new_answer,
            answer_aliases: item.new_answer_alias,
            edits,
            gold_hops: if hops.is_empty() { None } else { Some(hops) },
        })
    }

    pub fn parse(json: &str) -> Result<CaseSet, KnowledgeError> {
        let items: Vec<Item> = serde_json::from_str(json)?;
        let cases = items
            .into_iter()
            .map(convert)
            .collect::<Result<Vec<_>, _>>()?;
        CaseSet::from_cases(cases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statement_from_table_template() {
        let (s, o) = edit_to_statement(
            "The chairperson of {s} is",
            "Palestine Liberation Organization",
            "Mahmoud Abbas",
            "Regina Ip",
        )
        .unwrap();
        assert_eq!(s, "The chairperson of Palestine Liberation Organization is Regina Ip");
        assert_eq!(o, "The chairperson of Palestine Liberation Organization is Mahmoud Abbas");

        let (s, _) =
            edit_to_statement("{s} works in the field of", "Regina Ip", "politician", "basketball player")
                .unwrap();
        assert_eq!(s, "Regina Ip works in the field of basketball player");
    }

    #[test]
    fn statement_appends_object_and_normalizes_spaces() {
        let (s, _) = edit_to_statement("  The  head of {}  is ", "Y", "W", "X").unwrap();
        assert!(s.ends_with(" X"));
        assert_eq!(s, "The head of Y is X");
    }

    #[test]
    fn statement_requires_one_placeholder() {
        assert!(matches!(
            edit_to_statement("The head of is", "Y", "W", "X"),
            Err(KnowledgeError::Template(_))
        ));
        assert!(matches!(
            edit_to_statement("{} and {s}", "Y", "W", "X"),
            Err(KnowledgeError::Template(_))
        ));
    }

    #[test]
    fn chain_check_cases() {
        let f = |s: &str, r: &str, o: &str| Fact::new(s, r, o).unwrap();
        assert!(chain_check(&[f("A", "r1", "B"), f("B", "r2", "C")]));
        assert!(!chain_check(&[f("A", "r1", "B"), f("C", "r2", "D")]));
        assert!(chain_check(&[]));
        assert!(chain_check(&[f("A", "r1", " b "), f("B", "r2", "C")]));
    }

    #[test]
    fn edit_rejects_mismatched_sides() {
        let a = Fact::new("A", "r", "B").unwrap();
        assert!(Edit::new(a.clone(), Fact::new("Z", "r", "C").unwrap(), "", "").is_err());
        assert!(Edit::new(a.clone(), Fact::new("A", "q", "C").unwrap(), "", "").is_err());
        assert!(Edit::new(a.clone(), Fact::new("a", "r", "b").unwrap(), "", "").is_err());
        assert!(Edit::new(a, Fact::new("A", "r", "C").unwrap(), "", "").is_ok());
        assert!(Fact::new(" ", "r", "o").is_err());
    }

    #[test]
    fn memory_insert_is_idempotent_and_last_wins() {
        let e1 = Edit::from_template("The capital of {} is", "X", "a", "b").unwrap();
        let e2 = Edit::from_template("The mayor of {} is", "X", "a", "b").unwrap();
        let e3 = Edit::from_template("The capital of {} is", "x", "a", "c").unwrap();
        let mut m = EditMemory::new();
        assert_eq!(m.insert(e1.clone()), 0);
        assert_eq!(m.insert(e1.clone()), 0);
        assert_eq!(m.insert(e2), 1);
        assert_eq!(m.len(), 2);
        assert_eq!(m.insert(e3.clone()), 0);
        assert_eq!(m.len(), 2);
        assert_eq!(m.get(0), Some(&e3));
        assert_eq!(m.index_of(&e3.statement), Some(0));
        assert_eq!(m.index_of(&e1.statement), None);
    }

    #[test]
    fn answer_matching_modes() {
        let aliases = vec!["USA".to_string()];
        assert!(answer_matches("It is the  United States.", "united states", &[], MatchMode::Contain));
        assert!(!answer_matches("It is the United States.", "united states", &[], MatchMode::Exact));
        assert!(answer_matches("usa", "United States", &aliases, MatchMode::Exact));
        assert!(!answer_matches("", "x", &[], MatchMode::Contain));
    }

    #[test]
    fn case_file_roundtrip_and_flagging() {
        let json = r#"[
          {"case_id": "c1", "rewrites": ["Q?"], "original_answer": "a", "edited_answer": "b",
           "edits": [{"subject": "S", "relation_prompt": "The r of {} is", "target_true": "a", "target_new": "b"}],
           "gold_hops": [{"subject": "S", "relation": "r", "object": "b"}]},
          {"case_id": "c2", "rewrites": ["Q2?"], "original_answer": "a", "edited_answer": "b",
           "edits": [],
           "gold_hops": [{"subject": "S", "relation": "r", "object": "b"},
                         {"subject": "T", "relation": "r", "object": "c"}]}
        ]"#;
        let set = parse_cases(json).unwrap();
        assert_eq!(set.cases.len(), 2);
        assert_eq!(set.flagged, vec!["c2".to_string()]);
        assert_eq!(set.cases[0].edits[0].statement, "The r of S is b");
        let again = parse_cases(&cases_to_json(&set.cases)).unwrap();
        assert_eq!(again.cases, set.cases);
    }

    #[test]
    fn mquake_adapter_maps_fields() {
        let json = r#"[{
            "case_id": 7,
            "requested_rewrite": [{"prompt": "The chairperson of {} is", "subject": "PLO",
               "target_new": {"str": "Regina Ip", "id": "Q1"}, "target_true": {"str": "Mahmoud Abbas", "id": "Q2"},
               "relation_id": "P488"}],
            "questions": ["q1", "q2", "q3"],
            "answer": "politician", "answer_alias": [],
            "new_answer": "basketball player", "new_answer_alias": ["hoops player"],
            "orig": {"new_triples_labeled": [["PLO", "chairperson", "Regina Ip"],
                                             ["Regina Ip", "occupation", "basketball player"]]}
        }]"#;
        let set = mquake::parse(json).unwrap();
        let case = &set.cases[0];
        assert_eq!(case.case_id, "7");
        assert_eq!(case.rewrites.len(), 3);
        assert_eq!(case.edits[0].statement, "The chairperson of PLO is Regina Ip");
        assert!(case.is_correct("hoops player", MatchMode::Exact));
        assert!(set.flagged.is_empty());
    }
}
