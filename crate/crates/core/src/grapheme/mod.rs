//! Label normalization, grapheme-cluster extraction and class inventories.

mod inventory;
mod normalize;
mod segment;

pub use inventory::{merge_inventories, GraphemeInventory, InventoryEntry, MinorMajor, MINOR_FRACTION};
pub use normalize::{normalize_text, Rule, RuleTable};
pub use segment::{extract_graphemes, join_graphemes, Grapheme};

pub(crate) use segment::is_consonant as segment_class_is_consonant;
