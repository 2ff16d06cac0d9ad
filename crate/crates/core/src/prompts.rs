//! Prompt templates: masked path generation, conflict judgment, entity
//! filling, type matching and relation extraction. Each few-shot template is
//! a system prompt followed by alternating user/assistant exemplars.

use crate::gateway::ChatMessage;

pub const GENERATION_SYSTEM: &str = "Generate a detailed chain of thought with each reasoning step labeled as [STEP]. Replace any specific knowledge, entities, dates, or locations that are not in the text of question with [MASK]. Focus only on the logical steps and flow. And then include the category of each [MASK *] in order in the chain of thought as [CATEGORY], to clarify the type of entity that should be filled in.";

pub const GENERATION_SHOTS: [(&str, &str); 5] = [
    (
        "Question: What is the capital of the country where Plainfield Town Hall is located?",
        "[STEP] Plainfield Town Hall is located in the country of [MASK 1].\n[STEP] The capital of [MASK 1] is [MASK ANS].\n[CATEGORY]\n[MASK 1] [country]\n[MASK ANS] [city]",
    ),
    (
        "Question: In which country is the company that created Nissan 200SX located?",
        "[STEP] Nissan 200SX was created by [MASK 1].\n[STEP] [MASK 1] is located in the country of [MASK ANS].\n[CATEGORY]\n[MASK 1] [company]\n[MASK ANS] [country]",
    ),
    (
        "Question: Which continent is the country where the director of \"My House Husband: Ikaw Na!\" was educated located in?",
        "[STEP] The director of \"My House Husband: Ikaw Na!\" is [MASK 1].\n[STEP] [MASK 1] was educated at [MASK 2].\n[STEP] [MASK 2] is located in the country of [MASK 3].\n[STEP] [MASK 3] is located in the continent of [MASK ANS].\n[CATEGORY]\n[MASK 1] [person]\n[MASK 2] [school]\n[MASK 3] [country]\n[MASK ANS] [continent]",
    ),
    (
        "Question: Who is the spouse of the US president?",
        "[STEP] The US president is [MASK 1]. [STEP] The spouse of [MASK 1] is [MASK ANS].\n[CATEGORY]\n[MASK 1] [person]\n[MASK ANS] [person]",
    ),
    (
        "Question: Who has ownership of the developer of the Chevrolet Corvette (C4)?",
        "[STEP] The developer of Chevrolet Corvette (C4) is [MASK 1].\n[STEP] [MASK 1] is owned by [MASK ANS].\n[CATEGORY]\n[MASK 1] [company]\n[MASK ANS] [person]",
    ),
];

pub const CONFLICT_SYSTEM: &str = "Determine whether the provided Fact sentence supports filling the MASKed part in the given Sentence. Only output Yes or No.";

pub const CONFLICT_SHOTS: [(&str, &str, &str); 5] = [
    ("Club Nouveau is a group.", "Club Nouveau originated from [MASK 1].", "No"),
    ("Paris is the capital of France.", "The capital of France is [MASK ANS].", "Yes"),
    (
        "The Venus de Milo is located in the Louvre Museum.",
        "The Mona Lisa is located in the [MASK 2] Museum.",
        "No",
    ),
    (
        "The first person to get to the South Pole is Roald Amundsen.",
        "The first person to walk on the moon was [MASK 3].",
        "No",
    ),
    (
        "The Python programming language was created by Guido van Rossum.",
        "The creator of Python is [MASK 1].",
        "Yes",
    ),
];

pub const FILL_SYSTEM: &str = "Given the first masked entity without any analysis. The answer you give must match the given type.";

pub const FILL_SHOTS: [(&str, &str, &str); 5] = [
    ("country", "Club Nouveau originated from [MASK 1].", "United States"),
    (
        "country",
        "The country where the creator of the Chevrolet Corvette (C4) is located is [MASK ANS].",
        "United States",
    ),
    ("place", "The Mona Lisa is located in the [MASK 2] Museum.", "Louvre"),
    ("person", "The first person to walk on the moon was [MASK 3].", "Neil Armstrong"),
    ("person", "The creator of Python is [MASK 1].", "Guido van Rossum"),
];

pub const TYPE_CHECK_SYSTEM: &str = "You are given an entity along with its supposed types. Your task is to determine whether the entity matches the type it has been assigned. Only output Yes or No. Yes if the entity matches the type, No otherwise.";

pub const TYPE_CHECK_SHOTS: [(&str, &str, &str); 5] = [
    ("New York", "country", "No"),
    ("Apple Inc.", "company", "Yes"),
    ("Steve Jobs", "city", "No"),
    ("baseball", "position", "No"),
    ("USD", "currency", "Yes"),
];

pub const EXTRACTION_SYSTEM: &str = "Extract the relation from the knowledge triples (subject, relation, object) involved in each sentence, and return a list of relations that is equal in length to the given list of sentences. You only need to provide a JSON structure that contains one key relations, whose value is the list of relations.";

pub fn question_turn(question: &str) -> String {
    format!("Question: {question}")
}

pub fn conflict_turn(fact: &str, sentence: &str) -> String {
    format!("Fact: {fact}\nSentence: {sentence}")
}

pub fn fill_turn(category: &str, sentence: &str) -> String {
    format!("Type of the masked entity: {category}.\nSentence: {sentence}")
}

pub fn type_check_turn(entity: &str, category: &str) -> String {
    format!("Entity: {entity}\nAssigned Type: {category}")
}

fn few_shot(system: &str, shots: impl IntoIterator<Item = (String, String)>, query: String) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(system)];
    for (user, assistant) in shots {
        messages.push(ChatMessage::user(user));
        messages.push(ChatMessage::assistant(assistant));
    }
    messages.push(ChatMessage::user(query));
    messages
}

pub fn generation_messages(question: &str) -> Vec<ChatMessage> {
    few_shot(
        GENERATION_SYSTEM,
        GENERATION_SHOTS.iter().map(|(u, a)| (u.to_string(), a.to_string())),
        question_turn(question),
    )
}

pub fn conflict_messages(fact: &str, sentence: &str) -> Vec<ChatMessage> {
    few_shot(
        CONFLICT_SYSTEM,
        CONFLICT_SHOTS
            .iter()
            .map(|(f, s, a)| (conflict_turn(f, s), a.to_string())),
        conflict_turn(fact, sentence),
    )
}

pub fn fill_messages(category: &str, sentence: &str) -> Vec<ChatMessage> {
    few_shot(
        FILL_SYSTEM,
        FILL_SHOTS
            .iter()
            .map(|(c, s, a)| (fill_turn(c, s), a.to_string())),
        fill_turn(category, sentence),
    )
}

pub fn type_check_messages(entity: &str, category: &str) -> Vec<ChatMessage> {
    few_shot(
        TYPE_CHECK_SYSTEM,
        TYPE_CHECK_SHOTS
            .iter()
            .map(|(e, c, a)| (type_check_turn(e, c), a.to_string())),
        type_check_turn(entity, category),
    )
}

/// The user turn is a JSON list of step sentences.
pub fn extraction_messages(steps: &[String]) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(EXTRACTION_SYSTEM),
        ChatMessage::user(serde_json::to_string(steps).expect("strings serialize")),
    ]
}

/// Splits a few-shot user turn of the form `"Key: value\nKey2: value2"` back
/// into its values. Used by backends that interpret prompts structurally.
pub fn turn_fields<'a>(turn: &'a str, keys: &[&str]) -> Option<Vec<&'a str>> {
    let mut out = Vec::with_capacity(keys.len());
    let mut lines = turn.lines();
    for key in keys {
        let line = lines.next()?;
        out.push(line.strip_prefix(key)?.strip_prefix(": ")?);
    }
    Some(out)
}
