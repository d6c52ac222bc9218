use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::canonical_combining_class;

use crate::error::{Error, Result};

const VIRAMA: char = '\u{09CD}';
const ZWNJ: char = '\u{200C}';
const ZWJ: char = '\u{200D}';

/// One recognition class: an independent letter, a dependent sign, or a
/// consonant conjunct.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Grapheme(String);

impl Grapheme {
    pub fn new(s: impl Into<String>) -> Result<Self> {
        let s = s.into();
        if s.is_empty() {
            return Err(Error::InvalidConfig("grapheme must be non-empty".into()));
        }
        Ok(Self(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn codepoints(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.chars().map(|c| c as u32)
    }
}

impl fmt::Display for Grapheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Grapheme {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<Grapheme> for String {
    fn from(g: Grapheme) -> String {
        g.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CharClass {
    Consonant,
    Virama,
    /// Nukta and any other mark with a nonzero combining class.
    Combining,
    VowelSign,
    /// Spacing or non-reordering marks (candrabindu, anusvara, visarga).
    Mark,
    Joiner,
    NonJoiner,
    Independent,
}

pub(crate) fn classify(c: char) -> CharClass {
    match c {
        '\u{0995}'..='\u{09B9}' | '\u{09CE}' | '\u{09DC}' | '\u{09DD}' | '\u{09DF}' | '\u{09F0}' | '\u{09F1}' => {
            CharClass::Consonant
        }
        VIRAMA => CharClass::Virama,
        '\u{09BE}'..='\u{09C4}'
        | '\u{09C7}'
        | '\u{09C8}'
        | '\u{09CB}'
        | '\u{09CC}'
        | '\u{09D7}'
        | '\u{09E2}'
        | '\u{09E3}' => CharClass::VowelSign,
        '\u{0981}'..='\u{0983}' | '\u{09FE}' => CharClass::Mark,
        ZWJ => CharClass::Joiner,
        ZWNJ => CharClass::NonJoiner,
        c if canonical_combining_class(c) != 0 => CharClass::Combining,
        _ => CharClass::Independent,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Open {
    None,
    /// Consonant cluster; `joining` is set right after a virama.
    Cluster {
        joining: bool,
    },
    Single,
}

/// Splits a normalized label into graphemes. Consonants joined by virama fuse
/// into one cluster; dependent vowel signs and spacing marks stand alone.
pub fn extract_graphemes(label: &str) -> Vec<Grapheme> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut open = Open::None;

    let flush = |cur: &mut String, out: &mut Vec<Grapheme>| {
        if !cur.is_empty() {
            out.push(Grapheme(std::mem::take(cur)));
        }
    };

    for c in label.chars() {
        match classify(c) {
            CharClass::Consonant => {
                if open != (Open::Cluster { joining: true }) {
                    flush(&mut cur, &mut out);
                }
                cur.push(c);
                open = Open::Cluster { joining: false };
            }
            CharClass::Virama => {
                // An orphan virama stays with whatever precedes it.
                cur.push(c);
                open = match open {
                    Open::Cluster { .. } => Open::Cluster { joining: true },
                    _ => Open::Single,
                };
            }
            CharClass::Combining | CharClass::Joiner => {
                cur.push(c);
                if open == Open::None {
                    open = Open::Single;
                }
            }
            CharClass::NonJoiner => {
                cur.push(c);
                open = match open {
                    Open::Cluster { .. } => Open::Cluster { joining: false },
                    _ => Open::Single,
                };
            }
            CharClass::VowelSign | CharClass::Mark | CharClass::Independent => {
                flush(&mut cur, &mut out);
                cur.push(c);
                open = Open::Single;
            }
        }
    }
    flush(&mut cur, &mut out);
    out
}

pub fn join_graphemes(graphemes: &[Grapheme]) -> String {
    graphemes.iter().map(Grapheme::as_str).collect()
}

pub(crate) fn is_consonant(c: char) -> bool {
    classify(c) == CharClass::Consonant
}
