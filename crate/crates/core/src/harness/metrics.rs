use serde_json::Value;

use crate::error::HarnessError;
use crate::gateway::{ChatBackend, ChatRequest};
use crate::knowledge::RelationFrame;
use crate::mask_path::{remove_tags, MaskedPath};
use crate::prompts;

use super::CaseResult;

/// Fraction of cases answered correctly.
pub fn multi_hop_accuracy(results: &[CaseResult]) -> Result<f64, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::Empty);
    }
    let correct = results.iter().filter(|r| r.correct).count();
    Ok(correct as f64 / results.len() as f64)
}

/// Position-wise similarity of two relation lists, the shorter padded with
/// zeros: `Σ_{i < min(n, m)} sim(r1[i], r2[i]) / max(n, m)`. Two empty frames
/// score 1.
pub fn framework_similarity(r1: &RelationFrame, r2: &RelationFrame, sim: impl Fn(&str, &str) -> f64) -> f64 {
    let (a, b) = (r1.relations(), r2.relations());
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    let total: f64 = a.iter().zip(b).map(|(x, y)| sim(x, y)).sum();
    total / longest as f64
}

fn norm_tokens(s: &str) -> Vec<String> {
    let mut t: Vec<String> = s
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    t.sort();
    t.dedup();
    t
}

/// 1 when the relations match after case and whitespace normalization.
pub fn exact_sim(a: &str, b: &str) -> f64 {
    let n = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    f64::from(u8::from(n(a) == n(b)))
}

/// Jaccard overlap of lowercased word sets; two empty strings score 1.
pub fn jaccard_sim(a: &str, b: &str) -> f64 {
    let (ta, tb) = (norm_tokens(a), norm_tokens(b));
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let inter = ta.iter().filter(|t| tb.contains(t)).count();
    let union = ta.len() + tb.len() - inter;
    inter as f64 / union as f64
}

/// Relations read straight off a masked path: each step with its mask tags
/// removed. Bindings play no part, so pre- and post-edit runs of the same
/// path give the same frame.
pub fn direct_frame(path: &MaskedPath) -> RelationFrame {
    RelationFrame(
        path.steps()
            .iter()
            .map(|s| {
                remove_tags(s.text())
                    .trim_end_matches(['.', ',', ';', ':'])
                    .trim()
                    .to_string()
            })
            .collect(),
    )
}

/// Step sentences of a path text: `[STEP]`-delimited when marked (any
/// `[CATEGORY]` block dropped), otherwise one sentence per line or period.
pub fn split_steps(path_text: &str) -> Vec<String> {
    let body = match path_text.find("[CATEGORY]") {
        Some(i) => &path_text[..i],
        None => path_text,
    };
    let parts: Vec<&str> = if body.contains("[STEP]") {
        body.split("[STEP]").skip(1).collect()
    } else {
        body.split_inclusive(['.', '\n']).collect()
    };
    parts
        .into_iter()
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty() && p != ".")
        .collect()
}

/// Reads the relation list out of an extraction reply: a JSON object with a
/// `relations` list, possibly wrapped in other text, or a bare list.
pub fn parse_relations(reply: &str) -> Result<Vec<String>, HarnessError> {
    let bad = || HarnessError::Extraction(format!("no relation list in reply {reply:?}"));
    let value: Value = [('{', '}'), ('[', ']')]
        .iter()
        .find_map(|(open, close)| {
            let start = reply.find(*open)?;
            let end = reply.rfind(*close)?;
            (end > start)
                .then(|| serde_json::from_str::<Value>(&reply[start..=end]).ok())
                .flatten()
        })
        .ok_or_else(bad)?;
    let list = match &value {
        Value::Object(map) => map.get("relations").and_then(Value::as_array),
        Value::Array(items) => Some(items),
        _ => None,
    }
    .ok_or_else(bad)?;
    list.iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(bad))
        .collect()
}

/// Asks the model for one relation per step of `path_text`.
pub fn extract_frame(path_text: &str, llm: &dyn ChatBackend) -> Result<RelationFrame, HarnessError> {
    let steps = split_steps(path_text);
    if steps.is_empty() {
        return Ok(RelationFrame(Vec::new()));
    }
    let reply = llm.complete(&ChatRequest::greedy(prompts::extraction_messages(&steps)))?;
    let relations = parse_relations(&reply.text)?;
    if relations.len() != steps.len() {
        return Err(HarnessError::Extraction(format!(
            "{} relations for {} steps",
            relations.len(),
            steps.len()
        )));
    }
    Ok(RelationFrame(relations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatResponse, ScriptedBackend};
    use crate::mask_path::parse_masked_path;
    use proptest::prelude::*;

    fn frame(xs: &[&str]) -> RelationFrame {
        RelationFrame(xs.iter().map(|s| s.to_string()).collect())
    }

    fn result(correct: bool) -> CaseResult {
        CaseResult {
            case_id: String::new(),
            answer: None,
            correct,
            rewrites: vec![],
            error: None,
            elapsed_ms: None,
            trace: vec![],
        }
    }

    #[test]
    fn accuracy_examples() {
        let r: Vec<CaseResult> = [true, false, false, true].into_iter().map(result).collect();
        assert_eq!(multi_hop_accuracy(&r).unwrap(), 0.5);
        assert_eq!(multi_hop_accuracy(&[result(true), result(true)]).unwrap(), 1.0);
        assert!(matches!(multi_hop_accuracy(&[]), Err(HarnessError::Empty)));
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(framework_similarity(&frame(&["a"]), &frame(&["a"]), exact_sim), 1.0);
        assert_eq!(framework_similarity(&frame(&["a", "b"]), &frame(&["a"]), exact_sim), 0.5);
        let cross = |x: &str, y: &str| if x == y { 1.0 } else { 0.2 };
        assert!((framework_similarity(&frame(&["a", "b"]), &frame(&["b", "a"]), cross) - 0.2).abs() < 1e-15);
        assert_eq!(framework_similarity(&frame(&[]), &frame(&[]), exact_sim), 1.0);
        assert_eq!(framework_similarity(&frame(&[]), &frame(&["a"]), exact_sim), 0.0);
        assert_eq!(jaccard_sim("located in country", "country located"), 2.0 / 3.0);
    }

    #[test]
    fn frames_from_paths() {
        let p = parse_masked_path(
            "[STEP] Ellie Kemper is a citizen of [MASK 1].\n[STEP] The capital of [MASK 1] is [MASK ANS].\n[CATEGORY]\n[MASK 1] [country]\n[MASK ANS] [city]",
        )
        .unwrap();
        assert_eq!(direct_frame(&p), frame(&["Ellie Kemper is a citizen of", "The capital of is"]));
        let filled = p.substitute(&crate::mask_path::MaskTag::numbered(1), "United States");
        assert_eq!(direct_frame(&p), direct_frame(&parse_masked_path(&p.render()).unwrap()));
        assert_ne!(direct_frame(&filled), direct_frame(&p));
    }

    #[test]
    fn extraction_with_fixture() {
        let text = "[STEP] Ellie Kemper is a citizen of [MASK 1].\n[STEP] The capital of [MASK 1] is [MASK ANS].\n[CATEGORY]\n[MASK 1] [country]\n[MASK ANS] [city]";
        let steps = split_steps(text);
        assert_eq!(steps, vec!["Ellie Kemper is a citizen of [MASK 1].", "The capital of [MASK 1] is [MASK ANS]."]);
        let mut llm = ScriptedBackend::new();
        llm.insert_request(
            &ChatRequest::greedy(prompts::extraction_messages(&steps)),
            ChatResponse::text(r#"{"relations": ["located in country", "capital of"]}"#),
        );
        assert_eq!(extract_frame(text, &llm).unwrap(), frame(&["located in country", "capital of"]));
        assert_eq!(extract_frame("", &llm).unwrap(), frame(&[]));
        assert_eq!(llm.call_count(), 1);

        let mut short = ScriptedBackend::new();
        short.insert_request(
            &ChatRequest::greedy(prompts::extraction_messages(&steps)),
            ChatResponse::text(r#"{"relations": ["one"]}"#),
        );
        assert!(matches!(extract_frame(text, &short), Err(HarnessError::Extraction(_))));
        assert!(parse_relations("nothing").is_err());
        assert_eq!(parse_relations("Sure: [\"a\"]").unwrap(), vec!["a"]);
    }

    fn eq2_oracle(a: &[String], b: &[String], sim: &dyn Fn(&str, &str) -> f64) -> f64 {
        let n = a.len();
        let m = b.len();
        if n == 0 && m == 0 {
            return 1.0;
        }
        let mut padded_a: Vec<Option<&String>> = a.iter().map(Some).collect();
        let mut padded_b: Vec<Option<&String>> = b.iter().map(Some).collect();
        while padded_a.len() < padded_b.len() {
            padded_a.push(None);
        }
        while padded_b.len() < padded_a.len() {
            padded_b.push(None);
        }
        let mut s = 0.0;
        for i in 0..padded_a.len() {
            if let (Some(x), Some(y)) = (padded_a[i], padded_b[i]) {
                s += sim(x, y);
            }
        }
        s / padded_a.len() as f64
    }

    proptest! {
        #[test]
        fn similarity_matches_padding_oracle(
            a in prop::collection::vec("[a-c]{1,2}( [a-c]{1,2})?", 0..7),
            b in prop::collection::vec("[a-c]{1,2}( [a-c]{1,2})?", 0..7),
        ) {
            let (fa, fb) = (RelationFrame(a.clone()), RelationFrame(b.clone()));
            let got = framework_similarity(&fa, &fb, jaccard_sim);
            prop_assert!((got - eq2_oracle(&a, &b, &jaccard_sim)).abs() < 1e-12);
            prop_assert!((got - framework_similarity(&fb, &fa, jaccard_sim)).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&got));
            prop_assert_eq!(framework_similarity(&fa, &fa, exact_sim), 1.0);
        }
    }
}
