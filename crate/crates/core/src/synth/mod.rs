//! Synthetic knowledge graphs, multi-hop edit cases over them, and an oracle
//! chat backend that answers prompts from the graph.

mod oracle;

pub use oracle::{FaultMode, OracleBackend};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::LazyLock;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::SynthError;
use crate::knowledge::{chain_check, Edit, Fact, MultiHopCase};
use crate::resolve::FilledPath;
use crate::seeding::derive_seed;

/// A functional relation with a single-word keyword used in every surface
/// form. Domain and range types always differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub keyword: &'static str,
    pub domain: &'static str,
    pub range: &'static str,
}

impl RelationSpec {
    /// Relation template with a `{}` subject slot, used as the relation string
    /// of facts and edits.
    pub fn template(&self) -> String {
        format!("The {} of {{}} is", self.keyword)
    }
}

pub const CATALOG: [RelationSpec; 10] = [
    RelationSpec { keyword: "citizenship", domain: "person", range: "country" },
    RelationSpec { keyword: "capital", domain: "country", range: "city" },
    RelationSpec { keyword: "mayor", domain: "city", range: "person" },
    RelationSpec { keyword: "employer", domain: "person", range: "company" },
    RelationSpec { keyword: "headquarters", domain: "company", range: "city" },
    RelationSpec { keyword: "ceo", domain: "company", range: "person" },
    RelationSpec { keyword: "currency", domain: "country", range: "currency" },
    RelationSpec { keyword: "birthplace", domain: "person", range: "city" },
    RelationSpec { keyword: "founder", domain: "company", range: "person" },
    RelationSpec { keyword: "continent", domain: "country", range: "continent" },
];

/// Category names a generated path may use for each entity type. The first
/// entry is the type name itself.
pub const TYPE_SYNONYMS: [(&str, [&str; 3]); 6] = [
    ("person", ["person", "human", "individual"]),
    ("country", ["country", "nation", "sovereign state"]),
    ("city", ["city", "town", "municipality"]),
    ("company", ["company", "organization", "business"]),
    ("currency", ["currency", "monetary unit", "money"]),
    ("continent", ["continent", "landmass", "continental region"]),
];

/// Resolves a category name (type name or synonym) to its type.
pub fn category_type(category: &str) -> Option<&'static str> {
    let c = category.trim().to_lowercase();
    TYPE_SYNONYMS
        .iter()
        .find(|(_, names)| names.contains(&c.as_str()))
        .map(|(ty, _)| *ty)
}

/// Surface forms of one reasoning step; `{kw}`, `{s}` and `{o}` are the
/// relation keyword, subject and object.
pub const STEP_PHRASINGS: [&str; 4] = [
    "The {kw} of {s} is {o}.",
    "{s} has {kw} {o}.",
    "The {kw} associated with {s} is {o}.",
    "For {s}, the {kw} is {o}.",
];

pub fn render_step(phrasing: usize, keyword: &str, subject: &str, object: &str) -> String {
    STEP_PHRASINGS[phrasing % STEP_PHRASINGS.len()]
        .replace("{kw}", keyword)
        .replace("{s}", subject)
        .replace("{o}", object)
}

static ENTITY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[a-z]+_\d{3,}\b").expect("entity regex"));
static KEYWORD: LazyLock<Regex> = LazyLock::new(|| {
    let kws: Vec<&str> = CATALOG.iter().map(|r| r.keyword).collect();
    Regex::new(&format!(r"(?i)\b({})\b", kws.join("|"))).expect("keyword regex")
});

/// Synthetic entity names appearing in `text`, in order.
pub fn entities_in(text: &str) -> Vec<&str> {
    ENTITY.find_iter(text).map(|m| m.as_str()).collect()
}

/// Relation keywords appearing in `text`, in order, lowercased.
pub fn keywords_in(text: &str) -> Vec<String> {
    KEYWORD
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

pub fn relation_by_keyword(keyword: &str) -> Option<&'static RelationSpec> {
    CATALOG.iter().find(|r| r.keyword.eq_ignore_ascii_case(keyword))
}

/// Reads `(relation, subject, object)` from a step sentence in any of the
/// [`STEP_PHRASINGS`]. The object is absent while still masked.
pub fn parse_step(text: &str) -> Option<(&'static RelationSpec, String, Option<String>)> {
    let kw = keywords_in(text).into_iter().next()?;
    let rel = relation_by_keyword(&kw)?;
    let ents = entities_in(text);
    let subject = ents.first()?.to_string();
    Some((rel, subject, ents.get(1).map(|s| s.to_string())))
}

/// Hops read back from a filled path's step sentences, or `None` when a step
/// does not parse.
pub fn filled_hops(filled: &FilledPath) -> Option<Vec<Fact>> {
    filled
        .steps
        .iter()
        .map(|step| {
            let (rel, subject, object) = parse_step(step)?;
            Fact::new(subject, rel.template(), object?).ok()
        })
        .collect()
}

/// A seeded world of typed entities and total functional relations.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthKG {
    pub seed: u64,
    relations: Vec<RelationSpec>,
    /// entity name → type
    entities: BTreeMap<String, &'static str>,
    /// (subject, relation keyword) → object
    facts: BTreeMap<(String, String), String>,
}

impl SynthKG {
    pub fn relations(&self) -> &[RelationSpec] {
        &self.relations
    }

    pub fn relation(&self, keyword: &str) -> Option<&RelationSpec> {
        self.relations.iter().find(|r| r.keyword.eq_ignore_ascii_case(keyword))
    }

    pub fn types(&self) -> Vec<&'static str> {
        let set: BTreeSet<&'static str> = self.entities.values().copied().collect();
        set.into_iter().collect()
    }

    pub fn entity_type(&self, name: &str) -> Option<&'static str> {
        self.entities.get(name.trim()).copied()
    }

    pub fn entities_of(&self, ty: &str) -> Vec<&str> {
        self.entities
            .iter()
            .filter(|(_, t)| **t == ty)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn object(&self, subject: &str, keyword: &str) -> Option<&str> {
        self.facts
            .get(&(subject.trim().to_string(), keyword.to_lowercase()))
            .map(String::as_str)
    }

    pub fn facts(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.facts
            .iter()
            .map(|((s, r), o)| (s.as_str(), r.as_str(), o.as_str()))
    }

    pub fn fact_count(&self) -> usize {
        self.facts.len()
    }

    /// Types from which a walk of exactly `hops` relations can start.
    fn walk_starts(&self, hops: usize) -> Vec<BTreeSet<&'static str>> {
        // starts[k] = types that begin a walk of k more hops
        let mut starts = vec![self.types().into_iter().collect::<BTreeSet<_>>()];
        for k in 1..=hops {
            let next: BTreeSet<&'static str> = self
                .relations
                .iter()
                .filter(|r| starts[k - 1].contains(r.range))
                .map(|r| r.domain)
                .collect();
            starts.push(next);
        }
        starts
    }
}

/// Builds a world whose first `n_relations` catalog relations are total on
/// their domain type. Entities are spread evenly over the types involved.
pub fn generate_kg(seed: u64, n_entities: usize, n_relations: usize) -> Result<SynthKG, SynthError> {
    if n_relations == 0 || n_relations > CATALOG.len() {
        return Err(SynthError::Infeasible(format!(
            "relation count must be in 1..={}, got {n_relations}",
            CATALOG.len()
        )));
    }
    let relations: Vec<RelationSpec> = CATALOG[..n_relations].to_vec();
    let mut types: Vec<&'static str> = Vec::new();
    for r in &relations {
        for ty in [r.domain, r.range] {
            if !types.contains(&ty) {
                types.push(ty);
            }
        }
    }
    let per_type = n_entities / types.len();
    if per_type < 2 {
        return Err(SynthError::Infeasible(format!(
            "{n_entities} entities cannot give {} types two entities each",
            types.len()
        )));
    }
    let extra = n_entities % types.len();
    let mut entities = BTreeMap::new();
    for (i, ty) in types.iter().enumerate() {
        let count = per_type + usize::from(i < extra);
        for idx in 0..count {
            entities.insert(format!("{ty}_{idx:03}"), *ty);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut facts = BTreeMap::new();
    let mut kg = SynthKG {
        seed,
        relations,
        entities,
        facts: BTreeMap::new(),
    };
    for r in &kg.relations {
        let objects = kg.entities_of(r.range);
        for subject in kg.entities_of(r.domain) {
            let object = objects.choose(&mut rng).expect("at least two entities per type");
            facts.insert((subject.to_string(), r.keyword.to_string()), object.to_string());
        }
    }
    kg.facts = facts;
    Ok(kg)
}

/// A generated case together with its gold chains.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCase {
    pub case: MultiHopCase,
    pub hop_count: usize,
    pub pre_edit_hops: Vec<Fact>,
    pub post_edit_hops: Vec<Fact>,
}

pub const QUESTION_FORMS: [&str; 3] = [
    "What is the {chain} of {e}?",
    "Tell me the {chain} of {e}.",
    "Which entity is the {chain} of {e}?",
];

/// Question rewrites for a relation chain starting at `start`.
pub fn render_questions(keywords: &[&str], start: &str) -> Vec<String> {
    let chain = keywords
        .iter()
        .rev()
        .copied()
        .collect::<Vec<_>>()
        .join(" of the ");
    QUESTION_FORMS
        .iter()
        .map(|f| f.replace("{chain}", &chain).replace("{e}", start))
        .collect()
}

/// Reads the relation chain (first hop first) and start entity back from a
/// question.
pub fn parse_question(question: &str) -> Option<(Vec<&'static RelationSpec>, String)> {
    let start = entities_in(question).into_iter().next()?.to_string();
    let mut rels: Vec<&'static RelationSpec> = keywords_in(question)
        .iter()
        .map(|k| relation_by_keyword(k))
        .collect::<Option<_>>()?;
    if rels.is_empty() {
        return None;
    }
    rels.reverse();
    Some((rels, start))
}

type PairKey = (String, String);

struct Draft {
    start: String,
    keywords: Vec<&'static str>,
    pre: Vec<(String, String, String)>,
    post: Vec<(String, String, String)>,
    /// (subject, keyword, original object, new object)
    edits: Vec<(String, String, String, String)>,
}

impl Draft {
    fn unedited_post_pairs(&self) -> Vec<PairKey> {
        let edited: HashSet<PairKey> = self.edits.iter().map(|e| (e.0.clone(), e.1.clone())).collect();
        self.post
            .iter()
            .map(|(s, r, _)| (s.clone(), r.clone()))
            .filter(|k| !edited.contains(k))
            .collect()
    }
}

fn choose_other<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], not: &str) -> &'a str {
    let others: Vec<&str> = pool.iter().copied().filter(|e| *e != not).collect();
    others.choose(rng).copied().expect("at least two entities per type")
}

fn draw(
    kg: &SynthKG,
    hops: usize,
    n_edits: usize,
    positions: Option<&[usize]>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Draft>, SynthError> {
    let starts = kg.walk_starts(hops);
    let start_types: Vec<&'static str> = starts[hops].iter().copied().collect();
    let Some(&ty) = start_types.choose(rng) else {
        return Err(SynthError::NoChain { hops });
    };
    let start = kg.entities_of(ty).choose(rng).expect("typed entities").to_string();

    let mut keywords = Vec::with_capacity(hops);
    let mut cur = ty;
    for k in 1..=hops {
        let options: Vec<&RelationSpec> = kg
            .relations
            .iter()
            .filter(|r| r.domain == cur && starts[hops - k].contains(r.range))
            .collect();
        let rel = options.choose(rng).expect("walk_starts guarantees a continuation");
        keywords.push(rel.keyword);
        cur = rel.range;
    }

    let positions: Vec<usize> = match positions {
        Some(p) => p.to_vec(),
        None if n_edits == 0 => Vec::new(),
        None => {
            let mut on_chain = 1;
            for _ in 1..n_edits {
                if on_chain < hops && rng.random_bool(0.75) {
                    on_chain += 1;
                }
            }
            let mut p = rand::seq::index::sample(rng, hops, on_chain).into_vec();
            p.sort_unstable();
            p
        }
    };

    let walk = |edits: &[(String, String, String, String)]| -> Vec<(String, String, String)> {
        let mut s = start.clone();
        let mut out = Vec::with_capacity(hops);
        for kw in &keywords {
            let o = edits
                .iter()
                .find(|e| e.0 == s && e.1 == *kw)
                .map(|e| e.3.clone())
                .unwrap_or_else(|| kg.object(&s, kw).expect("total relation").to_string());
            out.push((s.clone(), kw.to_string(), o.clone()));
            s = o;
        }
        out
    };
    let pre = walk(&[]);

    let mut edits: Vec<(String, String, String, String)> = Vec::new();
    let mut s = start.clone();
    for (k, kw) in keywords.iter().enumerate() {
        let o = kg.object(&s, kw).expect("total relation").to_string();
        if positions.contains(&k) {
            let range = kg.relation(kw).expect("known relation").range;
            let new = choose_other(rng, &kg.entities_of(range), &o).to_string();
            edits.push((s.clone(), kw.to_string(), o, new.clone()));
            s = new;
        } else {
            s = o;
        }
    }
    let post = walk(&edits);

    // a revisited pair would make the walk depend on hop order
    let post_pairs: HashSet<PairKey> = post.iter().map(|(s, r, _)| (s.clone(), r.clone())).collect();
    if post_pairs.len() != post.len() || edits.len() != positions.len() {
        return Ok(None);
    }

    let pre_pairs: HashSet<PairKey> = pre.iter().map(|(s, r, _)| (s.clone(), r.clone())).collect();
    let off_chain = n_edits.saturating_sub(positions.len());
    let all_facts: Vec<(&str, &str, &str)> = kg.facts().collect();
    for _ in 0..off_chain {
        let free: Vec<&(&str, &str, &str)> = all_facts
            .iter()
            .filter(|(s, r, _)| {
                let key = (s.to_string(), r.to_string());
                !post_pairs.contains(&key)
                    && !pre_pairs.contains(&key)
                    && !edits.iter().any(|e| e.0 == *s && e.1 == *r)
            })
            .collect();
        let Some(&&(s, r, o)) = free.choose(rng) else {
            return Ok(None);
        };
        let range = kg.relation(r).expect("known relation").range;
        let new = choose_other(rng, &kg.entities_of(range), o).to_string();
        edits.push((s.to_string(), r.to_string(), o.to_string(), new));
    }

    let changed = pre.last().map(|h| &h.2) != post.last().map(|h| &h.2);
    if n_edits > 0 && !changed {
        return Ok(None);
    }
    Ok(Some(Draft {
        start,
        keywords,
        pre,
        post,
        edits,
    }))
}

fn to_facts(hops: &[(String, String, String)]) -> Result<Vec<Fact>, SynthError> {
    hops.iter()
        .map(|(s, kw, o)| {
            let rel = relation_by_keyword(kw).expect("catalog keyword");
            Ok(Fact::new(s.as_str(), rel.template(), o.as_str())?)
        })
        .collect()
}

fn finish(draft: Draft, case_id: String, hops: usize) -> Result<SynthCase, SynthError> {
    let edits = draft
        .edits
        .iter()
        .map(|(s, kw, o, new)| {
            let rel = relation_by_keyword(kw).expect("catalog keyword");
            Ok(Edit::from_template(&rel.template(), s, o, new)?)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    let pre_edit_hops = to_facts(&draft.pre)?;
    let post_edit_hops = to_facts(&draft.post)?;
    debug_assert!(chain_check(&pre_edit_hops) && chain_check(&post_edit_hops));
    let case = MultiHopCase {
        case_id,
        rewrites: render_questions(&draft.keywords, &draft.start),
        original_answer: pre_edit_hops.last().expect("hops ≥ 1").object.clone(),
        edited_answer: post_edit_hops.last().expect("hops ≥ 1").object.clone(),
        answer_aliases: Vec::new(),
        edits,
        gold_hops: Some(post_edit_hops.clone()),
    };
    Ok(SynthCase {
        case,
        hop_count: hops,
        pre_edit_hops,
        post_edit_hops,
    })
}

const MAX_DRAWS: usize = 500;

fn check_args(hops: usize, n_edits: usize) -> Result<(), SynthError> {
    if hops == 0 {
        return Err(SynthError::InvalidArgument("hops must be at least 1".into()));
    }
    if n_edits > hops {
        return Err(SynthError::InvalidArgument(format!(
            "{n_edits} edits exceed {hops} hops"
        )));
    }
    Ok(())
}

/// Samples a `hops`-long chain and edits `n_edits` facts, at least one on the
/// chain. With zero edits the pre- and post-edit answers coincide.
pub fn generate_case(kg: &SynthKG, hops: usize, n_edits: usize, seed: u64) -> Result<SynthCase, SynthError> {
    check_args(hops, n_edits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        if let Some(d) = draw(kg, hops, n_edits, None, &mut rng)? {
            return finish(d, format!("synth-{seed}"), hops);
        }
    }
    Err(SynthError::Infeasible(format!(
        "no {hops}-hop case with {n_edits} edits after {MAX_DRAWS} draws"
    )))
}

/// Like [`generate_case`] with the edited hops given explicitly (0-based).
pub fn generate_case_at(kg: &SynthKG, hops: usize, positions: &[usize], seed: u64) -> Result<SynthCase, SynthError> {
    check_args(hops, positions.len())?;
    if positions.iter().any(|&p| p >= hops) {
        return Err(SynthError::InvalidArgument(format!("edit position beyond {hops} hops")));
    }
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        if let Some(d) = draw(kg, hops, sorted.len(), Some(&sorted), &mut rng)? {
            return finish(d, format!("synth-{seed}"), hops);
        }
    }
    Err(SynthError::Infeasible(format!(
        "no {hops}-hop case with edits at {positions:?} after {MAX_DRAWS} draws"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSetSpec {
    pub count: usize,
    pub hops: Vec<usize>,
    pub max_edits: usize,
    /// Cases are made mutually consistent within consecutive groups of this
    /// size, matching the edit batch they will share.
    pub group_size: usize,
    pub seed: u64,
}

impl Default for CaseSetSpec {
    fn default() -> Self {
        CaseSetSpec {
            count: 200,
            hops: vec![2, 3, 4],
            max_edits: 3,
            group_size: 10,
            seed: 0,
        }
    }
}

#[derive(Default)]
struct Registry {
    edited: HashMap<PairKey, String>,
    fixed: HashSet<PairKey>,
}

impl Registry {
    fn accepts(&self, d: &Draft) -> bool {
        let edits_ok = d.edits.iter().all(|(s, r, _, new)| {
            let key = (s.clone(), r.clone());
            !self.fixed.contains(&key) && self.edited.get(&key).is_none_or(|o| o == new)
        });
        edits_ok
            && d.unedited_post_pairs()
                .iter()
                .all(|k| !self.edited.contains_key(k))
    }

    fn add(&mut self, d: &Draft) {
        for (s, r, _, new) in &d.edits {
            self.edited.insert((s.clone(), r.clone()), new.clone());
        }
        self.fixed.extend(d.unedited_post_pairs());
    }
}

/// Generates cases such that, within each group, no case's edit rewrites a
/// fact another case's post-edit chain relies on.
pub fn generate_cases(kg: &SynthKG, spec: &CaseSetSpec) -> Result<Vec<SynthCase>, SynthError> {
    if spec.hops.is_empty() || spec.group_size == 0 {
        return Err(SynthError::InvalidArgument("hops and group size must be nonempty".into()));
    }
    for &h in &spec.hops {
        check_args(h, 0)?;
        if kg.walk_starts(h)[h].is_empty() {
            return Err(SynthError::NoChain { hops: h });
        }
    }
    let mut out = Vec::with_capacity(spec.count);
    let mut registry = Registry::default();
    for i in 0..spec.count {
        if i % spec.group_size == 0 {
            registry = Registry::default();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &["case", &i.to_string()]));
        let hops = *spec.hops.choose(&mut rng).expect("nonempty hops");
        let n_edits = rng.random_range(1..=spec.max_edits.clamp(1, hops));
        let mut accepted = None;
        for _ in 0..MAX_DRAWS {
            if let Some(d) = draw(kg, hops, n_edits, None, &mut rng)? {
                if registry.accepts(&d) {
                    accepted = Some(d);
                    break;
                }
            }
        }
        let d = accepted.ok_or_else(|| {
            SynthError::Infeasible(format!("case {i}: no consistent {hops}-hop draw"))
        })?;
        registry.add(&d);
        out.push(finish(d, format!("synth-{i:04}"), hops)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg() -> SynthKG {
        generate_kg(7, 60, 8).unwrap()
    }

    #[test]
    fn world_shape() {
        let kg = kg();
        assert_eq!(kg.entity_count(), 60);
        assert_eq!(kg.types(), vec!["city", "company", "country", "currency", "person"]);
        assert_eq!(kg.entities_of("person").len(), 12);
        // every relation total on its domain
        for r in kg.relations() {
            for s in kg.entities_of(r.domain) {
                let o = kg.object(s, r.keyword).unwrap();
                assert_eq!(kg.entity_type(o), Some(r.range));
            }
        }
        assert_eq!(kg.fact_count(), 12 * 8);
        assert_eq!(generate_kg(7, 60, 8).unwrap(), kg);
    }

    #[test]
    fn minimal_and_infeasible_worlds() {
        let kg = generate_kg(1, 4, 1).unwrap();
        assert_eq!(kg.fact_count(), 2);
        assert!(matches!(generate_kg(1, 3, 1), Err(SynthError::Infeasible(_))));
        assert!(matches!(generate_kg(1, 60, 0), Err(SynthError::Infeasible(_))));
        assert!(matches!(generate_case(&kg, 2, 1, 0), Err(SynthError::NoChain { hops: 2 })));
    }

    #[test]
    fn seeds_give_different_worlds() {
        let mut identical = 0;
        for a in 0..100u64 {
            let x = generate_kg(a, 60, 8).unwrap();
            let y = generate_kg(a + 1000, 60, 8).unwrap();
            if x.facts == y.facts {
                identical += 1;
            }
        }
        assert_eq!(identical, 0);
    }

    fn brute_walk(kg: &SynthKG, case: &SynthCase) -> Vec<Fact> {
        let overlay: HashMap<(String, String), String> = case
            .case
            .edits
            .iter()
            .map(|e| ((e.edited.subject.clone(), e.edited.relation.clone()), e.edited.object.clone()))
            .collect();
        let mut subject = case.pre_edit_hops[0].subject.clone();
        let mut out = Vec::new();
        for hop in &case.pre_edit_hops {
            let kw = keywords_in(&hop.relation)[0].clone();
            let object = overlay
                .get(&(subject.clone(), hop.relation.clone()))
                .cloned()
                .unwrap_or_else(|| kg.object(&subject, &kw).unwrap().to_string());
            out.push(Fact::new(subject.clone(), hop.relation.clone(), object.clone()).unwrap());
            subject = object;
        }
        out
    }

    #[test]
    fn post_chain_matches_brute_force_rewalk() {
        let kg = kg();
        for seed in 0..200 {
            let hops = 2 + (seed as usize % 3);
            let n_edits = 1 + (seed as usize % hops);
            let c = generate_case(&kg, hops, n_edits, seed).unwrap();
            assert_eq!(c.case.edits.len(), n_edits);
            assert!(chain_check(&c.pre_edit_hops) && chain_check(&c.post_edit_hops));
            assert_eq!(c.post_edit_hops, brute_walk(&kg, &c));
            assert_ne!(c.case.original_answer, c.case.edited_answer);
            assert_eq!(c.case.rewrites.len(), 3);
        }
    }

    #[test]
    fn first_hop_edit_follows_new_object() {
        let kg = kg();
        let c = generate_case_at(&kg, 2, &[0], 3).unwrap();
        let e = &c.case.edits[0];
        assert_eq!(c.post_edit_hops[0].object, e.edited.object);
        let kw = &keywords_in(&c.post_edit_hops[1].relation)[0];
        assert_eq!(c.case.edited_answer, kg.object(&e.edited.object, kw).unwrap());
    }

    #[test]
    fn zero_edits_keep_the_answer() {
        let c = generate_case(&kg(), 3, 0, 5).unwrap();
        assert!(c.case.edits.is_empty());
        assert_eq!(c.case.original_answer, c.case.edited_answer);
    }

    #[test]
    fn four_hops_with_edits_at_one_three_four() {
        let c = generate_case_at(&kg(), 4, &[0, 2, 3], 11).unwrap();
        assert_eq!(c.case.edits.len(), 3);
        for (i, hop) in c.post_edit_hops.iter().enumerate() {
            let edited = c.case.edits.iter().any(|e| e.edited == *hop);
            assert_eq!(edited, [0, 2, 3].contains(&i), "hop {i}");
        }
        assert!(chain_check(&c.post_edit_hops));
    }

    #[test]
    fn questions_parse_back() {
        let qs = render_questions(&["citizenship", "capital"], "person_003");
        assert_eq!(qs[0], "What is the capital of the citizenship of person_003?");
        for q in &qs {
            let (rels, start) = parse_question(q).unwrap();
            assert_eq!(rels.iter().map(|r| r.keyword).collect::<Vec<_>>(), ["citizenship", "capital"]);
            assert_eq!(start, "person_003");
        }
    }

    #[test]
    fn step_phrasings_parse_back() {
        for p in 0..STEP_PHRASINGS.len() {
            let text = render_step(p, "currency", "country_002", "currency_001");
            let (rel, s, o) = parse_step(&text).unwrap();
            assert_eq!((rel.keyword, s.as_str(), o.as_deref()), ("currency", "country_002", Some("currency_001")));
            let masked = render_step(p, "mayor", "city_004", "[MASK 2]");
            let (rel, s, o) = parse_step(&masked).unwrap();
            assert_eq!((rel.keyword, s.as_str(), o), ("mayor", "city_004", None));
        }
    }

    #[test]
    fn case_sets_are_consistent_within_groups() {
        let kg = kg();
        let spec = CaseSetSpec { count: 60, seed: 9, ..CaseSetSpec::default() };
        let cases = generate_cases(&kg, &spec).unwrap();
        assert_eq!(cases, generate_cases(&kg, &spec).unwrap());
        for group in cases.chunks(spec.group_size) {
            let mut edited: HashMap<(String, String), String> = HashMap::new();
            for c in group {
                for e in &c.case.edits {
                    let key = (e.edited.subject.clone(), e.edited.relation.clone());
                    if let Some(prev) = edited.insert(key, e.edited.object.clone()) {
                        assert_eq!(prev, e.edited.object);
                    }
                }
            }
            for c in group {
                for hop in &c.post_edit_hops {
                    if let Some(o) = edited.get(&(hop.subject.clone(), hop.relation.clone())) {
                        assert_eq!(o, &hop.object, "{} crosses another case's edit", c.case.case_id);
                    }
                }
            }
        }
    }

    #[test]
    fn bad_arguments() {
        let kg = kg();
        assert!(matches!(generate_case(&kg, 2, 3, 0), Err(SynthError::InvalidArgument(_))));
        assert!(matches!(generate_case(&kg, 0, 0, 0), Err(SynthError::InvalidArgument(_))));
        assert!(matches!(generate_case_at(&kg, 2, &[5], 0), Err(SynthError::InvalidArgument(_))));
    }
}
