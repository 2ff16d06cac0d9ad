use serde::{Deserialize, Serialize};

use super::{category_type, keywords_in, parse_question, parse_step, render_step, SynthKG, TYPE_SYNONYMS};
use crate::error::GatewayError;
use crate::gateway::{canonical_key, Alternative, ChatBackend, ChatRequest, ChatResponse, Decoding, TokenLogprob};
use crate::mask_path::MaskTag;
use crate::prompts;
use crate::seeding::{derive_seed, unit_draw};

/// Which entities a faulty fill returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultMode {
    /// A wrong entity of the hinted type.
    #[default]
    SameType,
    /// An entity of some other type.
    CrossType,
}

impl std::str::FromStr for FaultMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "same-type" => Ok(FaultMode::SameType),
            "cross-type" => Ok(FaultMode::CrossType),
            other => Err(format!("unknown fault mode {other:?}")),
        }
    }
}

/// Answers the pipeline's prompts from a synthetic world's pre-edit facts.
///
/// Replies are a pure function of the request and the oracle seed. Greedy
/// generation renders the gold masked path in canonical wording; nucleus
/// samples vary wording, category names and confidence, and are now and then
/// malformed.
pub struct OracleBackend {
    kg: SynthKG,
    fault_rate: f64,
    fault_mode: FaultMode,
    seed: u64,
}

const GREEDY_CONFIDENCE: f64 = 0.97;
const MALFORMED_RATE: f64 = 0.1;
const MALFORMED_CONFIDENCE: f64 = 0.35;
const JUDGE_CONFIDENCE: f64 = 0.9;

impl OracleBackend {
    pub fn new(kg: SynthKG, fault_rate: f64, seed: u64) -> Result<Self, GatewayError> {
        if !(0.0..1.0).contains(&fault_rate) {
            return Err(GatewayError::InvalidRequest(format!(
                "fault rate {fault_rate} outside [0, 1)"
            )));
        }
        Ok(OracleBackend {
            kg,
            fault_rate,
            fault_mode: FaultMode::SameType,
            seed,
        })
    }

    pub fn with_fault_mode(mut self, mode: FaultMode) -> Self {
        self.fault_mode = mode;
        self
    }

    pub fn kg(&self) -> &SynthKG {
        &self.kg
    }

    fn pick<'a>(&self, pool: &[&'a str], labels: &[&str]) -> Option<&'a str> {
        if pool.is_empty() {
            return None;
        }
        Some(pool[(derive_seed(self.seed, labels) % pool.len() as u64) as usize])
    }

    fn generate(&self, question: &str, decoding: &Decoding) -> Result<ChatResponse, GatewayError> {
        let (rels, start) = parse_question(question)
            .ok_or_else(|| GatewayError::Protocol(format!("oracle cannot parse question {question:?}")))?;
        let sample = match decoding {
            Decoding::Greedy => None,
            Decoding::Nucleus { seed, .. } => Some(seed.unwrap_or(0).to_string()),
        };
        let draw = |label: &str, i: usize| -> u64 {
            match &sample {
                Some(s) => derive_seed(self.seed, &["gen", s, question, label, &i.to_string()]),
                None => 0,
            }
        };
        let tags: Vec<MaskTag> = (0..rels.len())
            .map(|i| {
                if i + 1 == rels.len() {
                    MaskTag::Answer
                } else {
                    MaskTag::numbered(i + 1)
                }
            })
            .collect();
        let mut text = String::new();
        for (i, rel) in rels.iter().enumerate() {
            let subject = if i == 0 { start.clone() } else { tags[i - 1].to_string() };
            let phrasing = draw("phrasing", i) as usize;
            text.push_str("[STEP] ");
            text.push_str(&render_step(phrasing, rel.keyword, &subject, &tags[i].to_string()));
            text.push('\n');
        }
        let malformed = sample.is_some() && unit_draw(draw("malformed", 0), &[]) < MALFORMED_RATE;
        if !malformed {
            text.push_str("[CATEGORY]");
            for (i, rel) in rels.iter().enumerate() {
                let names = TYPE_SYNONYMS
                    .iter()
                    .find(|(ty, _)| *ty == rel.range)
                    .map(|(_, names)| names.as_slice())
                    .unwrap_or(&[]);
                let name = names
                    .get(draw("category", i) as usize % names.len().max(1))
                    .copied()
                    .unwrap_or(rel.range);
                text.push_str(&format!("\n{} [{name}]", tags[i]));
            }
        }
        let confidence = match &sample {
            None => GREEDY_CONFIDENCE,
            Some(_) if malformed => MALFORMED_CONFIDENCE,
            Some(_) => 0.55 + 0.4 * unit_draw(draw("confidence", 0), &[]),
        };
        Ok(with_distribution(text, confidence))
    }

    /// The entity a fill prompt asks for, before any fault.
    fn true_fill(&self, category: &str, sentence: &str) -> String {
        if let Some((rel, subject, _)) = parse_step(sentence) {
            if let Some(o) = self.kg.relation(rel.keyword).and_then(|_| self.kg.object(&subject, rel.keyword)) {
                return o.to_string();
            }
        }
        let ty = category_type(category);
        let pool = match ty {
            Some(t) => self.kg.entities_of(t),
            None => self.kg.entities_of(self.kg.types()[0]),
        };
        self.pick(&pool, &["unknown", category, sentence])
            .unwrap_or("unknown")
            .to_string()
    }

    fn fill(&self, category: &str, sentence: &str) -> ChatResponse {
        let truth = self.true_fill(category, sentence);
        let u = unit_draw(self.seed, &["fault", category, sentence]);
        let answer = if u < self.fault_rate {
            let truth_type = self.kg.entity_type(&truth);
            let pool: Vec<&str> = match self.fault_mode {
                FaultMode::SameType => truth_type
                    .map(|t| self.kg.entities_of(t))
                    .unwrap_or_default()
                    .into_iter()
                    .filter(|e| *e != truth)
                    .collect(),
                FaultMode::CrossType => self
                    .kg
                    .types()
                    .into_iter()
                    .filter(|t| Some(*t) != truth_type)
                    .flat_map(|t| self.kg.entities_of(t))
                    .collect(),
            };
            self.pick(&pool, &["wrong", category, sentence])
                .map(str::to_string)
                .unwrap_or(truth)
        } else {
            truth
        };
        with_distribution(answer, GREEDY_CONFIDENCE)
    }

    fn supports(&self, fact: &str, sentence: &str) -> bool {
        match (parse_step(fact), parse_step(sentence)) {
            (Some((r1, s1, _)), Some((r2, s2, _))) => r1.keyword == r2.keyword && s1 == s2,
            _ => false,
        }
    }

    fn type_matches(&self, entity: &str, category: &str) -> bool {
        match (self.kg.entity_type(entity), category_type(category)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    fn extract(&self, steps_json: &str) -> Result<ChatResponse, GatewayError> {
        let steps: Vec<String> = serde_json::from_str(steps_json)
            .map_err(|e| GatewayError::Protocol(format!("extraction turn is not a JSON list: {e}")))?;
        let relations: Vec<String> = steps
            .iter()
            .map(|s| keywords_in(s).into_iter().next().unwrap_or_else(|| "unknown".into()))
            .collect();
        let text = serde_json::json!({ "relations": relations }).to_string();
        Ok(ChatResponse::text(text))
    }
}

/// A reply whose every whitespace-delimited token has probability `c` and two
/// alternatives sharing the rest.
fn with_distribution(text: String, c: f64) -> ChatResponse {
    let rest = ((1.0 - c) / 2.0).ln();
    let tokens = text
        .split_inclusive(char::is_whitespace)
        .map(|tok| TokenLogprob {
            token: tok.to_string(),
            logprob: c.ln(),
            alternatives: vec![
                Alternative { token: tok.to_string(), logprob: c.ln() },
                Alternative { token: "<alt1>".into(), logprob: rest },
                Alternative { token: "<alt2>".into(), logprob: rest },
            ],
        })
        .collect();
    ChatResponse {
        text,
        token_logprobs: Some(tokens),
        full_distribution: true,
    }
}

fn yes_no(yes: bool) -> ChatResponse {
    let (tok, other) = if yes { ("Yes", "No") } else { ("No", "Yes") };
    ChatResponse {
        text: tok.into(),
        token_logprobs: Some(vec![TokenLogprob {
            token: tok.into(),
            logprob: JUDGE_CONFIDENCE.ln(),
            alternatives: vec![
                Alternative { token: tok.into(), logprob: JUDGE_CONFIDENCE.ln() },
                Alternative { token: other.into(), logprob: (1.0 - JUDGE_CONFIDENCE).ln() },
            ],
        }]),
        full_distribution: true,
    }
}

fn fields<'a>(turn: &'a str, keys: &[&str]) -> Result<Vec<&'a str>, GatewayError> {
    prompts::turn_fields(turn, keys)
        .ok_or_else(|| GatewayError::Protocol(format!("unexpected prompt turn {turn:?}")))
}

impl ChatBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let system = request.messages.first().map(|m| m.content.as_str()).unwrap_or("");
        let turn = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        log::trace!("oracle request {}", canonical_key(&request.messages, &request.decoding));
        match system {
            prompts::GENERATION_SYSTEM => {
                let q = fields(turn, &["Question"])?[0];
                self.generate(q, &request.decoding)
            }
            prompts::FILL_SYSTEM => {
                let f = fields(turn, &["Type of the masked entity", "Sentence"])?;
                let category = f[0].strip_suffix('.').unwrap_or(f[0]);
                Ok(self.fill(category, f[1]))
            }
            prompts::CONFLICT_SYSTEM => {
                let f = fields(turn, &["Fact", "Sentence"])?;
                Ok(yes_no(self.supports(f[0], f[1])))
            }
            prompts::TYPE_CHECK_SYSTEM => {
                let f = fields(turn, &["Entity", "Assigned Type"])?;
                Ok(yes_no(self.type_matches(f[0], f[1])))
            }
            prompts::EXTRACTION_SYSTEM => self.extract(turn),
            _ => Err(GatewayError::Protocol(
                "oracle does not recognize the prompt".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{yes_no_probability, ChatMessage};
    use crate::mask_path::parse_masked_path;
    use crate::selection::{ki_request, trace_from_response};
    use crate::synth::generate_kg;

    fn oracle(rate: f64) -> OracleBackend {
        OracleBackend::new(generate_kg(7, 60, 8).unwrap(), rate, 1).unwrap()
    }

    #[test]
    fn greedy_path_is_gold_and_parses() {
        let o = oracle(0.0);
        let q = "What is the capital of the citizenship of person_003?";
        let reply = o.complete(&ChatRequest::greedy(prompts::generation_messages(q))).unwrap();
        assert_eq!(
            reply.text,
            "[STEP] The citizenship of person_003 is [MASK 1].\n[STEP] The capital of [MASK 1] is [MASK ANS].\n[CATEGORY]\n[MASK 1] [country]\n[MASK ANS] [city]"
        );
        let path = parse_masked_path(&reply.text).unwrap();
        assert_eq!(path.render(), reply.text);
        let trace = trace_from_response(&reply);
        let c = GREEDY_CONFIDENCE;
        let h = -(c * c.ln() + (1.0 - c) * ((1.0 - c) / 2.0).ln());
        assert!(trace.per_token_entropy.iter().all(|e| (e - h).abs() < 1e-12));
    }

    #[test]
    fn nucleus_samples_vary_and_mostly_parse() {
        let o = oracle(0.0);
        let q = "What is the mayor of the capital of the citizenship of person_001?";
        let mut texts = std::collections::BTreeSet::new();
        let mut parsed = 0;
        for seed in 0..40 {
            let r = o
                .complete(&ChatRequest::nucleus(prompts::generation_messages(q), 0.95, 1.2, seed))
                .unwrap();
            parsed += usize::from(parse_masked_path(&r.text).is_ok());
            texts.insert(r.text);
        }
        assert!(texts.len() > 20);
        assert!((28..40).contains(&parsed), "{parsed}");
    }

    #[test]
    fn fills_follow_pre_edit_facts() {
        let o = oracle(0.0);
        let truth = o.kg().object("person_003", "citizenship").unwrap().to_string();
        let req = ChatRequest::greedy(prompts::fill_messages("country", "The citizenship of person_003 is [MASK 1]."));
        assert_eq!(o.complete(&req).unwrap().text, truth);
        let req = ChatRequest::greedy(prompts::fill_messages("nation", "person_003 has citizenship [MASK 1]."));
        assert_eq!(o.complete(&req).unwrap().text, truth);
    }

    #[test]
    fn faults_follow_the_mode() {
        let same = oracle(0.9);
        let cross = oracle(0.9).with_fault_mode(FaultMode::CrossType);
        let (mut wrong_same, mut wrong_cross) = (0, 0);
        for i in 0..12 {
            let subject = format!("person_{i:03}");
            let truth = same.kg().object(&subject, "citizenship").unwrap().to_string();
            let sentence = format!("The citizenship of {subject} is [MASK 1].");
            let req = ChatRequest::greedy(prompts::fill_messages("country", &sentence));
            let a = same.complete(&req).unwrap().text;
            if a != truth {
                wrong_same += 1;
                assert_eq!(same.kg().entity_type(&a), Some("country"));
            }
            let b = cross.complete(&req).unwrap().text;
            if b != truth {
                wrong_cross += 1;
                assert_ne!(cross.kg().entity_type(&b), Some("country"));
            }
        }
        assert!(wrong_same >= 6 && wrong_cross >= 6);
    }

    #[test]
    fn judgments() {
        let o = oracle(0.0);
        let yn = yes_no_probability(&o, &ki_request("country_002", "nation")).unwrap();
        assert!(yn.is_yes());
        let yn = yes_no_probability(&o, &ki_request("city_002", "country")).unwrap();
        assert!(!yn.is_yes());
        let req = |fact: &str, s: &str| ChatRequest::greedy(prompts::conflict_messages(fact, s));
        let yes = o
            .complete(&req("The capital of country_001 is city_004.", "For country_001, the capital is [MASK ANS]."))
            .unwrap();
        assert_eq!(yes.text, "Yes");
        let no = o
            .complete(&req("The capital of country_002 is city_004.", "The capital of country_001 is [MASK ANS]."))
            .unwrap();
        assert_eq!(no.text, "No");
    }

    #[test]
    fn extraction_and_unknown_prompts() {
        let o = oracle(0.0);
        let steps = vec!["The capital of country_001 is city_002.".to_string(), "city_002 has mayor person_001.".to_string()];
        let r = o.complete(&ChatRequest::greedy(prompts::extraction_messages(&steps))).unwrap();
        assert_eq!(r.text, r#"{"relations":["capital","mayor"]}"#);
        let bad = ChatRequest::greedy(vec![ChatMessage::system("hello"), ChatMessage::user("x")]);
        assert!(matches!(o.complete(&bad), Err(GatewayError::Protocol(_))));
        assert!(OracleBackend::new(generate_kg(7, 60, 8).unwrap(), 1.0, 0).is_err());
    }
}
