use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, IoContext, Result};

const DEFAULT_RULES: &str = include_str!("../../data/normalization_rules.tsv");

/// Upper bound on compose/rewrite passes. Each pass is length non-increasing
/// for well-formed tables so a fixpoint is reached long before this.
const MAX_PASSES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub from: Vec<char>,
    pub to: Vec<char>,
}

/// Editable table of visually-identical spellings and their canonical form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTable {
    // Sorted longest `from` first so matching is leftmost-longest.
    rules: Vec<Rule>,
}

impl Default for RuleTable {
    fn default() -> Self {
        Self::parse(DEFAULT_RULES, Path::new("<builtin>")).expect("builtin rule table is valid")
    }
}

fn parse_codepoints(field: &str) -> Option<Vec<char>> {
    field
        .split_whitespace()
        .map(|hex| {
            u32::from_str_radix(hex.trim_start_matches("U+"), 16)
                .ok()
                .and_then(char::from_u32)
        })
        .collect()
}

fn format_codepoints(chars: &[char]) -> String {
    chars
        .iter()
        .map(|c| format!("{:04X}", *c as u32))
        .collect::<Vec<_>>()
        .join(" ")
}

impl RuleTable {
    pub fn new(mut rules: Vec<Rule>) -> Result<Self> {
        for rule in &rules {
            if rule.from.is_empty() {
                return Err(Error::InvalidConfig("normalization rule with empty source".into()));
            }
            let to: String = rule.to.iter().collect();
            if to.nfc().collect::<String>() != to {
                return Err(Error::InvalidConfig(format!(
                    "normalization target {} is not in composed form",
                    format_codepoints(&rule.to)
                )));
            }
        }
        rules.sort_by(|a, b| b.from.len().cmp(&a.from.len()).then_with(|| a.from.cmp(&b.from)));
        rules.dedup_by(|a, b| a.from == b.from);
        Ok(Self { rules })
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut rules = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                message: message.to_string(),
            };
            let (from, to) = line
                .split_once('\t')
                .ok_or_else(|| err("expected two tab-separated fields"))?;
            let from = parse_codepoints(from).ok_or_else(|| err("bad source codepoints"))?;
            let to = parse_codepoints(to).ok_or_else(|| err("bad target codepoints"))?;
            rules.push(Rule { from, to });
        }
        Self::new(rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::parse(&text, path)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# from_codepoints\tto_codepoints\n");
        for rule in &self.rules {
            out.push_str(&format_codepoints(&rule.from));
            out.push('\t');
            out.push_str(&format_codepoints(&rule.to));
            out.push('\n');
        }
        out
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    fn rewrite(&self, chars: &[char]) -> Vec<char> {
        let mut out = Vec::with_capacity(chars.len());
        let mut i = 0;
        'outer: while i < chars.len() {
            for rule in &self.rules {
                if chars[i..].starts_with(&rule.from) {
                    out.extend_from_slice(&rule.to);
                    i += rule.from.len();
                    continue 'outer;
                }
            }
            out.push(chars[i]);
            i += 1;
        }
        out
    }

    /// Canonically composes `raw` and rewrites every table match, repeating
    /// until nothing changes.
    pub fn normalize(&self, raw: &str) -> String {
        let mut current: String = raw.nfc().collect();
        for _ in 0..MAX_PASSES {
            let chars: Vec<char> = current.chars().collect();
            let next: String = self.rewrite(&chars).into_iter().collect::<String>().nfc().collect();
            if next == current {
                break;
            }
            current = next;
        }
        current
    }
}

fn default_table() -> &'static RuleTable {
    static TABLE: OnceLock<RuleTable> = OnceLock::new();
    TABLE.get_or_init(RuleTable::default)
}

/// Normalizes with the built-in rule table.
pub fn normalize_text(raw: &str) -> String {
    default_table().normalize(raw)
}
