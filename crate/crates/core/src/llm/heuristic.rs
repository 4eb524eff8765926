//! Rule-based replies for the mock provider when no fixture matches.
//!
//! The rules are crude but deterministic: sentences are split on
//! terminal punctuation, entity candidates are maximal runs of content
//! words, and relations link consecutive entities in a sentence using the
//! words between them.

use once_cell::sync::Lazy;
use regex::Regex;
use serde_json::{json, Value};

use super::{ChatRequest, TemplateId};
use crate::corpus::detect_cross_references;
use crate::section_id::SectionId;

const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "after",
    "all",
    "also",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "been",
    "before",
    "being",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "do",
    "does",
    "done",
    "during",
    "each",
    "either",
    "except",
    "for",
    "from",
    "has",
    "have",
    "how",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "least",
    "made",
    "may",
    "more",
    "must",
    "no",
    "not",
    "of",
    "on",
    "one",
    "or",
    "other",
    "over",
    "paragraph",
    "paragraphs",
    "section",
    "shall",
    "should",
    "so",
    "such",
    "than",
    "that",
    "the",
    "their",
    "them",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "under",
    "until",
    "upon",
    "used",
    "using",
    "was",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "will",
    "with",
    "within",
    "would",
];

const MAX_PHRASE: usize = 3;

fn is_stopword(word: &str) -> bool {
    STOPWORDS
        .binary_search(&word.to_lowercase().as_str())
        .is_ok()
}

static LEVEL_TOKEN: Lazy<Regex> = Lazy::new(|| Regex::new(r"\([A-Za-z0-9]{1,6}\)").unwrap());

/// Word tokens; paragraph designators like "(a)" or "(iv)" are skipped.
fn words(text: &str) -> Vec<String> {
    LEVEL_TOKEN
        .replace_all(text, " ")
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .filter(|w| w.chars().any(|c| c.is_alphabetic()))
        .map(str::to_string)
        .collect()
}

/// Splits on line breaks and on `.`, `?`, `!` or `;` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut current = String::new();
        let chars: Vec<char> = line.chars().collect();
        for (i, &c) in chars.iter().enumerate() {
            current.push(c);
            let terminal = matches!(c, '.' | '?' | '!' | ';');
            let at_break = chars.get(i + 1).is_none_or(|n| n.is_whitespace());
            // "1926.651" or "e.g." keep going: require whitespace after the mark
            if terminal && at_break && chars.get(i + 1).is_some() {
                push_trimmed(&mut out, &current);
                current.clear();
            }
        }
        push_trimmed(&mut out, &current);
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// Maximal runs of content words, longest runs split into chunks.
pub(crate) fn noun_phrases(text: &str) -> Vec<String> {
    let mut phrases: Vec<String> = Vec::new();
    let mut run: Vec<String> = Vec::new();
    let flush = |run: &mut Vec<String>, phrases: &mut Vec<String>| {
        for chunk in run.chunks(MAX_PHRASE) {
            let p = chunk.join(" ");
            if p.chars().count() > 2 && !phrases.iter().any(|q| q.eq_ignore_ascii_case(&p)) {
                phrases.push(p);
            }
        }
        run.clear();
    };
    for sentence in split_sentences(text) {
        for w in words(&sentence) {
            if is_stopword(&w) || w.chars().all(|c| c.is_ascii_digit() || c == '-') {
                flush(&mut run, &mut phrases);
            } else {
                run.push(w);
            }
        }
        flush(&mut run, &mut phrases);
    }
    phrases
}

fn snake(words: &[String]) -> String {
    words
        .iter()
        .map(|w| w.to_lowercase().replace(['-', '\''], "_"))
        .collect::<Vec<_>>()
        .join("_")
}

/// Links consecutive entity mentions in each sentence.
pub(crate) fn link_entities(sentences: &[String], entities: &[String]) -> Vec<Value> {
    let mut triples = Vec::new();
    for sentence in sentences {
        let lower = sentence.to_lowercase();
        let mut hits: Vec<(usize, usize, &String)> = Vec::new();
        for e in entities {
            let needle = e.to_lowercase();
            if let Some(pos) = find_word(&lower, &needle) {
                hits.push((pos, needle.len(), e));
            }
        }
        hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        // drop mentions overlapping an earlier, longer one
        let mut kept: Vec<(usize, usize, &String)> = Vec::new();
        for hit in hits {
            if let Some((p, len, _)) = kept.last() {
                if hit.0 < p + len {
                    continue;
                }
            }
            kept.push(hit);
        }
        for pair in kept.windows(2) {
            let (p0, l0, h) = pair[0];
            let (p1, _, t) = pair[1];
            if h.eq_ignore_ascii_case(t) {
                continue;
            }
            let between = &lower[p0 + l0..p1];
            let ws: Vec<String> = words(between)
                .into_iter()
                .filter(|w| {
                    !matches!(
                        w.as_str(),
                        "the" | "a" | "an" | "and" | "or" | "shall" | "be"
                    )
                })
                .take(3)
                .collect();
            let relation = if ws.is_empty() {
                "related_to".to_string()
            } else {
                snake(&ws)
            };
            triples.push(json!({"head": h, "relation": relation, "tail": t}));
        }
    }
    triples
}

fn find_word(haystack: &str, needle: &str) -> Option<usize> {
    let mut start = 0;
    while let Some(i) = haystack[start..].find(needle) {
        let pos = start + i;
        let before = haystack[..pos].chars().next_back();
        let after = haystack[pos + needle.len()..].chars().next();
        if !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric) {
            return Some(pos);
        }
        start = pos + needle.len().max(1);
    }
    None
}

fn slot<'a>(request: &'a ChatRequest, name: &str) -> &'a str {
    request.slots.get(name).map(String::as_str).unwrap_or("")
}

fn entity_names(raw: &str) -> Vec<String> {
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Array(items)) => items
            .iter()
            .filter_map(|v| match v {
                Value::String(s) => Some(s.clone()),
                Value::Object(o) => o.get("name").and_then(Value::as_str).map(str::to_string),
                _ => None,
            })
            .collect(),
        _ => raw
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
    }
}

fn labelled(names: Vec<String>) -> Value {
    Value::Array(
        names
            .into_iter()
            .map(|n| json!({"name": n, "label": "Concept"}))
            .collect(),
    )
}

/// Section ids listed in a synthesis prompt, one `### <id>` header each.
fn listed_sections(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| l.strip_prefix("### "))
        .map(|id| id.trim().to_string())
        .collect()
}

pub(crate) fn respond(request: &ChatRequest) -> Value {
    match request.template {
        TemplateId::ContentPrune => json!({"sentences": split_sentences(slot(request, "text"))}),
        TemplateId::EntityExtract => {
            let sentences = slot(request, "sentences");
            let host = SectionId::parse(slot(request, "section_id")).ok();
            let references: Vec<String> = detect_cross_references(sentences, host.as_ref())
                .iter()
                .map(ToString::to_string)
                .collect();
            json!({"entities": labelled(noun_phrases(sentences)), "references": references})
        }
        TemplateId::EntityValidate => {
            let original = slot(request, "original").to_lowercase();
            let names = entity_names(slot(request, "entities"))
                .into_iter()
                .filter(|n| find_word(&original, &n.to_lowercase()).is_some())
                .collect();
            json!({"entities": labelled(names)})
        }
        TemplateId::RelationExtract => {
            let entities = entity_names(slot(request, "entities"));
            let sentences = split_sentences(slot(request, "sentences"));
            json!({"triples": link_entities(&sentences, &entities)})
        }
        TemplateId::RelationValidate => {
            let triples = serde_json::from_str::<Value>(slot(request, "triples"))
                .ok()
                .filter(Value::is_array)
                .unwrap_or_else(|| json!([]));
            json!({"triples": triples})
        }
        TemplateId::QueryDecompose => {
            let question = slot(request, "question");
            let entities = noun_phrases(question);
            let triples = link_entities(&split_sentences(question), &entities);
            json!({"entities": entities, "triples": triples})
        }
        TemplateId::AnswerSynthesize => {
            let ids = listed_sections(slot(request, "sections"));
            let summary = if ids.is_empty() {
                "No relevant provisions were supplied.".to_string()
            } else {
                format!("The question is addressed by {}.", ids.join(", "))
            };
            json!({"relevant": ids, "summary": summary})
        }
    }
}
