//! Section identifiers of the form `1926.451(b)(2)(i)`.
//!
//! A section id is a part number, a section number and an ordered list of
//! paragraph levels. Level kinds are fixed by position: lowercase letter,
//! arabic number, lowercase roman numeral and, in [`Depth::Extended`] mode,
//! an uppercase letter and an uppercase roman numeral.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed section id {raw:?}: {reason}")]
pub struct MalformedId {
    pub raw: String,
    pub reason: String,
}

impl MalformedId {
    fn new(raw: &str, reason: impl Into<String>) -> Self {
        Self {
            raw: raw.to_string(),
            reason: reason.into(),
        }
    }
}

/// How deep paragraph nesting may go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depth {
    /// letter, number, roman
    #[default]
    Strict,
    /// adds uppercase letter and uppercase roman below the roman level
    Extended,
}

impl Depth {
    pub fn max_levels(self) -> usize {
        match self {
            Depth::Strict => 3,
            Depth::Extended => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelKind {
    Letter,
    Number,
    Roman,
    UpperLetter,
    UpperRoman,
}

impl LevelKind {
    /// Kind expected at a zero-based level position.
    pub fn at(position: usize) -> Option<LevelKind> {
        const ORDER: [LevelKind; 5] = [
            LevelKind::Letter,
            LevelKind::Number,
            LevelKind::Roman,
            LevelKind::UpperLetter,
            LevelKind::UpperRoman,
        ];
        ORDER.get(position).copied()
    }

    fn normalize(self, token: &str) -> Option<String> {
        match self {
            LevelKind::Letter => {
                let t = token.to_ascii_lowercase();
                is_letter_token(&t).then_some(t)
            }
            LevelKind::UpperLetter => {
                let t = token.to_ascii_uppercase();
                is_letter_token(&t.to_ascii_lowercase()).then_some(t)
            }
            LevelKind::Number => {
                let ok = !token.is_empty()
                    && token.bytes().all(|b| b.is_ascii_digit())
                    && !(token.len() > 1 && token.starts_with('0'))
                    && token != "0";
                ok.then(|| token.to_string())
            }
            LevelKind::Roman => {
                let t = token.to_ascii_lowercase();
                roman_value(&t).map(|_| t)
            }
            LevelKind::UpperRoman => {
                let t = token.to_ascii_lowercase();
                roman_value(&t).map(|_| t.to_ascii_uppercase())
            }
        }
    }
}

/// One paragraph level token, already normalized for its kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Level {
    kind: LevelKind,
    token: String,
}

impl Level {
    pub fn kind(&self) -> LevelKind {
        self.kind
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    /// Builds the level at `position`, normalizing case.
    pub fn at_position(position: usize, token: &str) -> Option<Level> {
        let kind = LevelKind::at(position)?;
        kind.normalize(token).map(|token| Level { kind, token })
    }

    /// Ordinal value of the token within its kind (a=1, ii=2, 7=7).
    pub fn ordinal(&self) -> Option<u32> {
        match self.kind {
            LevelKind::Number => self.token.parse().ok(),
            LevelKind::Roman | LevelKind::UpperRoman => {
                roman_value(&self.token.to_ascii_lowercase())
            }
            LevelKind::Letter | LevelKind::UpperLetter => {
                let lower = self.token.to_ascii_lowercase();
                let first = lower.bytes().next()?;
                // aa, bb ... continue after z
                Some((lower.len() as u32 - 1) * 26 + u32::from(first - b'a') + 1)
            }
        }
    }

    /// Inverse of [`Level::ordinal`].
    pub fn from_ordinal(kind: LevelKind, ordinal: u32) -> Option<Level> {
        if ordinal == 0 {
            return None;
        }
        let token = match kind {
            LevelKind::Number => ordinal.to_string(),
            LevelKind::Roman => to_roman(ordinal)?,
            LevelKind::UpperRoman => to_roman(ordinal)?.to_ascii_uppercase(),
            LevelKind::Letter | LevelKind::UpperLetter => {
                let repeat = ((ordinal - 1) / 26 + 1) as usize;
                let ch = (b'a' + ((ordinal - 1) % 26) as u8) as char;
                let t: String = std::iter::repeat_n(ch, repeat).collect();
                if kind == LevelKind::UpperLetter {
                    t.to_ascii_uppercase()
                } else {
                    t
                }
            }
        };
        Some(Level { kind, token })
    }
}

// CFR letters run a..z and then aa, bb, ...
fn is_letter_token(t: &str) -> bool {
    let mut bytes = t.bytes();
    match bytes.next() {
        Some(first) if first.is_ascii_lowercase() => bytes.all(|b| b == first),
        _ => false,
    }
}

static ROMAN: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"^m{0,3}(cm|cd|d?c{0,3})(xc|xl|l?x{0,3})(ix|iv|v?i{0,3})$").unwrap());

pub(crate) fn roman_value(t: &str) -> Option<u32> {
    if t.is_empty() || !ROMAN.is_match(t) {
        return None;
    }
    let digit = |c: char| match c {
        'i' => 1,
        'v' => 5,
        'x' => 10,
        'l' => 50,
        'c' => 100,
        'd' => 500,
        'm' => 1000,
        _ => 0,
    };
    let values: Vec<u32> = t.chars().map(digit).collect();
    let mut total = 0;
    for (i, v) in values.iter().enumerate() {
        match values.get(i + 1) {
            Some(next) if next > v => total -= *v as i64,
            _ => total += *v as i64,
        }
    }
    Some(total as u32)
}

fn to_roman(mut n: u32) -> Option<String> {
    if n == 0 || n >= 4000 {
        return None;
    }
    const TABLE: [(u32, &str); 13] = [
        (1000, "m"),
        (900, "cm"),
        (500, "d"),
        (400, "cd"),
        (100, "c"),
        (90, "xc"),
        (50, "l"),
        (40, "xl"),
        (10, "x"),
        (9, "ix"),
        (5, "v"),
        (4, "iv"),
        (1, "i"),
    ];
    let mut out = String::new();
    for (value, sym) in TABLE {
        while n >= value {
            out.push_str(sym);
            n -= value;
        }
    }
    Some(out)
}

/// Canonical identifier of one provision.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SectionId {
    part: u32,
    section: u32,
    levels: Vec<Level>,
    canonical: String,
}

impl SectionId {
    /// Parses with the default strict depth of three levels.
    pub fn parse(raw: &str) -> Result<SectionId, MalformedId> {
        SectionId::parse_with(raw, Depth::Strict)
    }

    pub fn parse_with(raw: &str, depth: Depth) -> Result<SectionId, MalformedId> {
        let compact: String = raw
            .trim()
            .trim_start_matches('§')
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        if compact.is_empty() {
            return Err(MalformedId::new(raw, "empty input"));
        }
        let (head, tail) = match compact.find('(') {
            Some(i) => compact.split_at(i),
            None => (compact.as_str(), ""),
        };
        let (part, section) = head
            .split_once('.')
            .ok_or_else(|| MalformedId::new(raw, "expected <part>.<section>"))?;
        let part =
            parse_number(part).ok_or_else(|| MalformedId::new(raw, "missing part number"))?;
        let section =
            parse_number(section).ok_or_else(|| MalformedId::new(raw, "missing section number"))?;

        let mut levels = Vec::new();
        let mut rest = tail;
        while !rest.is_empty() {
            let inner = rest
                .strip_prefix('(')
                .ok_or_else(|| MalformedId::new(raw, "bad parenthesization"))?;
            let close = inner
                .find(')')
                .ok_or_else(|| MalformedId::new(raw, "unclosed parenthesis"))?;
            let token = &inner[..close];
            if token.is_empty() {
                return Err(MalformedId::new(raw, "empty level token"));
            }
            if token.contains('(') {
                return Err(MalformedId::new(raw, "bad parenthesization"));
            }
            let position = levels.len();
            if position >= depth.max_levels() {
                return Err(MalformedId::new(
                    raw,
                    format!("more than {} levels", depth.max_levels()),
                ));
            }
            let level = Level::at_position(position, token).ok_or_else(|| {
                MalformedId::new(
                    raw,
                    format!(
                        "level {} token {token:?} is not a {:?}",
                        position + 1,
                        LevelKind::at(position).unwrap()
                    ),
                )
            })?;
            levels.push(level);
            rest = &inner[close + 1..];
        }
        Ok(SectionId::from_parts(part, section, levels))
    }

    /// Assembles an id from already-normalized parts.
    pub fn from_parts(part: u32, section: u32, levels: Vec<Level>) -> SectionId {
        let mut canonical = format!("{part}.{section}");
        for level in &levels {
            canonical.push('(');
            canonical.push_str(&level.token);
            canonical.push(')');
        }
        SectionId {
            part,
            section,
            levels,
            canonical,
        }
    }

    pub fn part(&self) -> u32 {
        self.part
    }

    pub fn section(&self) -> u32 {
        self.section
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn canonical_text(&self) -> &str {
        &self.canonical
    }

    /// Drops the deepest level; `None` for a bare `<part>.<section>`.
    pub fn parent_of(&self) -> Option<SectionId> {
        if self.levels.is_empty() {
            return None;
        }
        let mut levels = self.levels.clone();
        levels.pop();
        Some(SectionId::from_parts(self.part, self.section, levels))
    }

    /// The level-free `<part>.<section>` id.
    pub fn base(&self) -> SectionId {
        SectionId::from_parts(self.part, self.section, Vec::new())
    }

    /// Ancestors from the direct parent up to the base id.
    pub fn ancestors(&self) -> Vec<SectionId> {
        let mut out = Vec::with_capacity(self.levels.len());
        let mut cur = self.parent_of();
        while let Some(id) = cur {
            cur = id.parent_of();
            out.push(id);
        }
        out
    }

    /// True when `self` is `other` or one of its ancestors.
    pub fn contains(&self, other: &SectionId) -> bool {
        self.part == other.part
            && self.section == other.section
            && self.levels.len() <= other.levels.len()
            && self.levels.iter().zip(&other.levels).all(|(a, b)| a == b)
    }

    /// Appends one level token at the next position.
    pub fn child(&self, token: &str, depth: Depth) -> Option<SectionId> {
        if self.levels.len() >= depth.max_levels() {
            return None;
        }
        let level = Level::at_position(self.levels.len(), token)?;
        let mut levels = self.levels.clone();
        levels.push(level);
        Some(SectionId::from_parts(self.part, self.section, levels))
    }
}

fn parse_number(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Parses with the default strict depth.
pub fn parse_section_id(raw: &str) -> Result<SectionId, MalformedId> {
    SectionId::parse(raw)
}

pub fn parent_of(id: &SectionId) -> Option<SectionId> {
    id.parent_of()
}

impl fmt::Display for SectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

impl FromStr for SectionId {
    type Err = MalformedId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SectionId::parse_with(s, Depth::Extended)
    }
}

impl PartialOrd for SectionId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SectionId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical.cmp(&other.canonical)
    }
}

// Compact form: the canonical string.
impl Serialize for SectionId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical)
    }
}

impl<'de> Deserialize<'de> for SectionId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        SectionId::parse_with(&raw, Depth::Extended).map_err(serde::de::Error::custom)
    }
}

/// Full field-by-field form used in `corpus.json`.
pub mod expanded {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Expanded {
        part: u32,
        section: u32,
        levels: Vec<String>,
        canonical_text: String,
    }

    pub fn serialize<S: Serializer>(id: &SectionId, serializer: S) -> Result<S::Ok, S::Error> {
        Expanded {
            part: id.part,
            section: id.section,
            levels: id.levels.iter().map(|l| l.token.clone()).collect(),
            canonical_text: id.canonical.clone(),
        }
        .serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<SectionId, D::Error> {
        let e = Expanded::deserialize(deserializer)?;
        let id = SectionId::parse_with(&e.canonical_text, Depth::Extended)
            .map_err(serde::de::Error::custom)?;
        let levels: Vec<&str> = id.levels.iter().map(|l| l.token()).collect();
        if id.part != e.part || id.section != e.section || levels != e.levels {
            return Err(serde::de::Error::custom(format!(
                "section id fields disagree with canonical_text {:?}",
                e.canonical_text
            )));
        }
        Ok(id)
    }
}
