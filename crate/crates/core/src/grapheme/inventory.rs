use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::segment::{extract_graphemes, Grapheme};
use crate::error::{Error, IoContext, Result};

/// Fraction of the largest class support below which a class is minor.
pub const MINOR_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub grapheme: Grapheme,
    pub support: u64,
}

/// Ordered grapheme classes with corpus supports. A class's index is its
/// position in `entries`. Blank is never part of an inventory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "InventoryRepr", into = "InventoryRepr")]
pub struct GraphemeInventory {
    entries: Vec<InventoryEntry>,
    lookup: HashMap<Grapheme, usize>,
    pub source_tag: String,
}

#[derive(Serialize, Deserialize)]
struct InventoryRepr {
    source_tag: String,
    entries: Vec<InventoryEntry>,
}

impl From<InventoryRepr> for GraphemeInventory {
    fn from(r: InventoryRepr) -> Self {
        Self::from_ordered(r.entries, r.source_tag)
    }
}

impl From<GraphemeInventory> for InventoryRepr {
    fn from(inv: GraphemeInventory) -> Self {
        Self {
            source_tag: inv.source_tag,
            entries: inv.entries,
        }
    }
}

impl PartialEq for GraphemeInventory {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.source_tag == other.source_tag
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinorMajor {
    pub minor: BTreeSet<Grapheme>,
    pub major: BTreeSet<Grapheme>,
}

impl GraphemeInventory {
    /// Takes entries in their final index order. Duplicate graphemes keep the
    /// first occurrence.
    pub fn from_ordered(entries: Vec<InventoryEntry>, source_tag: impl Into<String>) -> Self {
        let mut lookup = HashMap::with_capacity(entries.len());
        let mut kept = Vec::with_capacity(entries.len());
        for e in entries {
            if !lookup.contains_key(&e.grapheme) {
                lookup.insert(e.grapheme.clone(), kept.len());
                kept.push(e);
            }
        }
        Self {
            entries: kept,
            lookup,
            source_tag: source_tag.into(),
        }
    }

    /// Orders by descending support, then codepoint order.
    pub fn from_counts(counts: impl IntoIterator<Item = (Grapheme, u64)>, source_tag: impl Into<String>) -> Self {
        let mut merged: BTreeMap<Grapheme, u64> = BTreeMap::new();
        for (g, n) in counts {
            *merged.entry(g).or_default() += n;
        }
        let mut entries: Vec<InventoryEntry> = merged
            .into_iter()
            .map(|(grapheme, support)| InventoryEntry { grapheme, support })
            .collect();
        entries.sort_by(|a, b| b.support.cmp(&a.support).then_with(|| a.grapheme.cmp(&b.grapheme)));
        Self::from_ordered(entries, source_tag)
    }

    /// Counts every grapheme occurrence across normalized labels.
    pub fn build<S: AsRef<str>>(labels: impl IntoIterator<Item = S>, source_tag: impl Into<String>) -> Self {
        let counts = labels
            .into_iter()
            .flat_map(|l| extract_graphemes(l.as_ref()))
            .map(|g| (g, 1u64));
        Self::from_counts(counts, source_tag)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[InventoryEntry] {
        &self.entries
    }

    pub fn grapheme(&self, index: usize) -> Option<&Grapheme> {
        self.entries.get(index).map(|e| &e.grapheme)
    }

    pub fn index_of(&self, g: &Grapheme) -> Option<usize> {
        self.lookup.get(g).copied()
    }

    pub fn contains(&self, g: &Grapheme) -> bool {
        self.lookup.contains_key(g)
    }

    pub fn support_of(&self, g: &Grapheme) -> u64 {
        self.index_of(g).map_or(0, |i| self.entries[i].support)
    }

    pub fn total_support(&self) -> u64 {
        self.entries.iter().map(|e| e.support).sum()
    }

    pub fn graphemes(&self) -> impl Iterator<Item = &Grapheme> {
        self.entries.iter().map(|e| &e.grapheme)
    }

    pub fn grapheme_set(&self) -> BTreeSet<Grapheme> {
        self.graphemes().cloned().collect()
    }

    /// Class indices for a grapheme sequence, or the first unknown grapheme.
    pub fn encode(&self, graphemes: &[Grapheme]) -> std::result::Result<Vec<usize>, Grapheme> {
        graphemes
            .iter()
            .map(|g| self.index_of(g).ok_or_else(|| g.clone()))
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<Grapheme> {
        indices.iter().filter_map(|&i| self.grapheme(i).cloned()).collect()
    }

    /// A class is minor iff its support is strictly below 10% of the largest
    /// support.
    pub fn split_minor_major(&self) -> Result<MinorMajor> {
        let max = self
            .entries
            .iter()
            .map(|e| e.support)
            .max()
            .ok_or(Error::EmptyInventory)?;
        let threshold = MINOR_FRACTION * max as f64;
        let (minor, major) = self
            .entries
            .iter()
            .map(|e| (e.grapheme.clone(), (e.support as f64) < threshold))
            .partition::<Vec<_>, _>(|(_, is_minor)| *is_minor);
        Ok(MinorMajor {
            minor: minor.into_iter().map(|(g, _)| g).collect(),
            major: major.into_iter().map(|(g, _)| g).collect(),
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", e.grapheme, i, e.support));
        }
        out
    }

    pub fn parse_tsv(text: &str, origin: &Path, source_tag: impl Into<String>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [g, idx, support] = fields[..] else {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let grapheme = Grapheme::new(g).map_err(|e| err(e.to_string()))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad index {idx:?}")))?;
            let support: u64 = support.parse().map_err(|_| err(format!("bad support {support:?}")))?;
            if idx != entries.len() {
                return Err(err(format!("index {idx} out of sequence, expected {}", entries.len())));
            }
            if !seen.insert(grapheme.clone()) {
                return Err(err(format!("duplicate grapheme {grapheme:?}")));
            }
            entries.push(InventoryEntry { grapheme, support });
        }
        Ok(Self::from_ordered(entries, source_tag))
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).at(path)
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::parse_tsv(&text, path, path.display().to_string())
    }
}

/// Union of the two class sets with summed supports, re-ordered.
pub fn merge_inventories(a: &GraphemeInventory, b: &GraphemeInventory) -> GraphemeInventory {
    let counts = a
        .entries
        .iter()
        .chain(&b.entries)
        .map(|e| (e.grapheme.clone(), e.support));
    let tag = match (a.source_tag.is_empty(), b.source_tag.is_empty()) {
        (false, false) => format!("{}+{}", a.source_tag, b.source_tag),
        (false, true) => a.source_tag.clone(),
        _ => b.source_tag.clone(),
    };
    GraphemeInventory::from_counts(counts, tag)
}
