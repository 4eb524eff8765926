//! Pattern-based cross-reference detection.
//!
//! Recognized forms:
//! - absolute: `1926.502(b)(3)`, `§1926.502(k)`, `§§ 1926.451(b)(2)(i) and (ii)`
//! - section-relative: `paragraph (b)(2)(i) of this section`,
//!   `paragraphs (b)(2) and (b)(3)`, `paragraph (c) of §1926.452`
//!
//! Continuations joined by `and`, `or`, commas, `through` and `to` inherit
//! the leading levels of the reference before them. `through` ranges over a
//! single level are expanded.

use once_cell::sync::Lazy;
use regex::Regex;

use crate::section_id::{Depth, Level, SectionId};

static ABSOLUTE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?:§+\s*)?(\d{3,4})\.(\d{1,4})((?:\([A-Za-z0-9]{1,6}\))*)").unwrap());
static RELATIVE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)\bparagraphs?\s+((?:\([A-Za-z0-9]{1,6}\))+)").unwrap());
static CONTINUATION: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)^\s*(,\s*and|,\s*or|,|and|or|through|to|-|–)\s*(?:paragraphs?\s+)?((?:\([A-Za-z0-9]{1,6}\))+)")
        .unwrap()
});
static OF_SECTION: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)^\s*of\s+(?:§+\s*)?(\d{3,4})\.(\d{1,4})\b").unwrap());
static OF_THIS_SECTION: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)^\s*of\s+this\s+section\b").unwrap());
static UNRESOLVED: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)\bthis\s+(paragraph|subpart|part)\b").unwrap());
static TOKEN: Lazy<Regex> = Lazy::new(|| Regex::new(r"\(([A-Za-z0-9]{1,6})\)").unwrap());

const MAX_RANGE: u32 = 50;

/// Finds every section reference in `body`. Section-relative forms are
/// resolved against `host`; without a host they are skipped.
pub fn detect_cross_references(body: &str, host: Option<&SectionId>) -> Vec<SectionId> {
    let mut found: Vec<(usize, SectionId)> = Vec::new();
    let mut consumed: Vec<(usize, usize)> = Vec::new();

    for m in RELATIVE.captures_iter(body) {
        let whole = m.get(0).unwrap();
        let tokens = tokens(&m[1]);
        let (chain, mut end) = continuations(body, whole.end());
        let base = if let Some(of) = OF_SECTION.captures(&body[end..]) {
            let part = of[1].parse().ok();
            let section = of[2].parse().ok();
            end += of.get(0).unwrap().end();
            part.zip(section)
                .map(|(p, s)| SectionId::from_parts(p, s, Vec::new()))
        } else {
            if let Some(of) = OF_THIS_SECTION.find(&body[end..]) {
                end += of.end();
            }
            host.map(SectionId::base)
        };
        consumed.push((whole.start(), end));
        let Some(base) = base else {
            log::debug!(
                "skipping relative reference {:?} without a host section",
                whole.as_str()
            );
            continue;
        };
        let first = build(&base, &[], &tokens);
        resolve_chain(first, &base, &chain, whole.start(), &mut found);
    }

    for m in ABSOLUTE.captures_iter(body) {
        let whole = m.get(0).unwrap();
        if consumed
            .iter()
            .any(|&(s, e)| whole.start() < e && s < whole.end())
        {
            continue;
        }
        let preceded = body[..whole.start()]
            .chars()
            .next_back()
            .is_some_and(|c| c.is_ascii_digit() || c == '.');
        let followed = body[whole.end()..]
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_digit());
        if preceded || followed {
            continue;
        }
        let (Ok(part), Ok(section)) = (m[1].parse::<u32>(), m[2].parse::<u32>()) else {
            continue;
        };
        let base = SectionId::from_parts(part, section, Vec::new());
        let first = build(&base, &[], &tokens(&m[3]));
        let (chain, _) = continuations(body, whole.end());
        resolve_chain(first, &base, &chain, whole.start(), &mut found);
    }

    for m in UNRESOLVED.find_iter(body) {
        log::debug!("unresolved relative reference {:?}", m.as_str());
    }

    found.sort_by_key(|(at, _)| *at);
    let mut out: Vec<SectionId> = Vec::new();
    for (_, id) in found {
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

struct Continuation {
    through: bool,
    tokens: Vec<String>,
}

fn continuations(body: &str, mut end: usize) -> (Vec<Continuation>, usize) {
    let mut chain = Vec::new();
    while let Some(c) = CONTINUATION.captures(&body[end..]) {
        let connector = c[1].to_ascii_lowercase();
        chain.push(Continuation {
            through: matches!(connector.as_str(), "through" | "to" | "-" | "–"),
            tokens: tokens(&c[2]),
        });
        end += c.get(0).unwrap().end();
    }
    (chain, end)
}

fn tokens(s: &str) -> Vec<String> {
    TOKEN.captures_iter(s).map(|c| c[1].to_string()).collect()
}

fn build(base: &SectionId, prefix: &[Level], tokens: &[String]) -> Option<SectionId> {
    let mut levels = prefix.to_vec();
    for token in tokens {
        levels.push(Level::at_position(levels.len(), token)?);
    }
    if levels.len() > Depth::Extended.max_levels() {
        return None;
    }
    Some(SectionId::from_parts(base.part(), base.section(), levels))
}

fn resolve_chain(
    first: Option<SectionId>,
    base: &SectionId,
    chain: &[Continuation],
    at: usize,
    found: &mut Vec<(usize, SectionId)>,
) {
    let Some(mut prev) = first else {
        log::debug!("unparseable reference near byte {at}");
        return;
    };
    found.push((at, prev.clone()));
    for (i, cont) in chain.iter().enumerate() {
        let offset = at + i + 1;
        let Some((position, next)) = attach(base, &prev, &cont.tokens) else {
            log::debug!("cannot attach continuation {:?} to {prev}", cont.tokens);
            continue;
        };
        if cont.through && cont.tokens.len() == 1 {
            for id in expand_range(&prev, &next, position) {
                found.push((offset, id));
            }
        }
        found.push((offset, next.clone()));
        prev = next;
    }
}

/// Places continuation tokens at the level position whose ordinal is
/// closest to the previous reference's level there.
fn attach(base: &SectionId, prev: &SectionId, tokens: &[String]) -> Option<(usize, SectionId)> {
    let levels = prev.levels();
    let last = levels.len().saturating_sub(1);
    let mut best: Option<(u32, usize, SectionId)> = None;
    for position in 0..=last {
        let Some(candidate) = build(base, &levels[..position], tokens) else {
            continue;
        };
        let Some(new_ord) = candidate.levels().get(position).and_then(Level::ordinal) else {
            continue;
        };
        let old_ord = levels.get(position).and_then(Level::ordinal).unwrap_or(0);
        let distance = new_ord.abs_diff(old_ord);
        // ties go to the deeper position
        if best.as_ref().is_none_or(|(d, _, _)| distance <= *d) {
            best = Some((distance, position, candidate));
        }
    }
    best.map(|(_, p, id)| (p, id))
}

fn expand_range(from: &SectionId, to: &SectionId, position: usize) -> Vec<SectionId> {
    let (Some(a), Some(b)) = (from.levels().get(position), to.levels().get(position)) else {
        return Vec::new();
    };
    if a.kind() != b.kind() || from.depth() != position + 1 || to.depth() != position + 1 {
        return Vec::new();
    }
    let (Some(lo), Some(hi)) = (a.ordinal(), b.ordinal()) else {
        return Vec::new();
    };
    if hi <= lo + 1 || hi - lo > MAX_RANGE {
        return Vec::new();
    }
    let prefix = &from.levels()[..position];
    (lo + 1..hi)
        .filter_map(|n| {
            let mut levels = prefix.to_vec();
            levels.push(Level::from_ordinal(a.kind(), n)?);
            Some(SectionId::from_parts(from.part(), from.section(), levels))
        })
        .collect()
}
