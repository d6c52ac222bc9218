//! JSON-lines word manifests and in-memory word samples.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::grapheme::{extract_graphemes, normalize_text, Grapheme, GraphemeInventory};
use crate::synthgen::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestLine {
    image_path: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitTag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordRecord {
    /// Resolved against the manifest directory.
    pub image_path: PathBuf,
    /// Normalized label.
    pub label: String,
    pub graphemes: Vec<Grapheme>,
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordDatasetManifest {
    pub root: PathBuf,
    pub records: Vec<WordRecord>,
    /// Hex SHA-256 of the manifest bytes.
    pub checksum: String,
}

impl WordDatasetManifest {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.label.as_str())
    }

    pub fn inventory(&self, tag: &str) -> GraphemeInventory {
        GraphemeInventory::build(self.labels(), tag)
    }

    /// Loads every image, in record order.
    pub fn load_samples(&self) -> Result<Vec<WordSample>> {
        self.records
            .iter()
            .map(|r| {
                Ok(WordSample {
                    image: GrayImage::load(&r.image_path)?,
                    label: r.label.clone(),
                    graphemes: r.graphemes.clone(),
                })
            })
            .collect()
    }
}

/// Parses a manifest. Labels are normalized and segmented; relative image
/// paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<WordDatasetManifest> {
    let text = fs::read_to_string(path).at(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let label = normalize_text(&parsed.label);
        if label.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty label".into(),
            });
        }
        let image_path = root.join(&parsed.image_path);
        if !image_path.is_file() {
            missing.push(image_path.clone());
        }
        records.push(WordRecord {
            image_path,
            graphemes: extract_graphemes(&label),
            label,
            split: parsed.split,
        });
    }
    if !missing.is_empty() {
        return Err(Error::MissingImages(missing));
    }
    Ok(WordDatasetManifest {
        root,
        records,
        checksum: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

/// A word image with its normalized label and grapheme sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct WordSample {
    pub image: GrayImage,
    pub label: String,
    pub graphemes: Vec<Grapheme>,
}

impl WordSample {
    pub fn new(image: GrayImage, raw_label: &str) -> Self {
        let label = normalize_text(raw_label);
        Self {
            image,
            graphemes: extract_graphemes(&label),
            label,
        }
    }
}

/// Writes PNGs under `dir/images` and `dir/manifest.jsonl`; returns the
/// manifest path.
pub fn write_word_dataset(dir: &Path, samples: &[WordSample]) -> Result<PathBuf> {
    write_tagged(dir, samples.iter().map(|s| (s, None)))
}

/// Like [`write_word_dataset`], tagging `train` records before `test` ones.
pub fn write_split_word_dataset(dir: &Path, train: &[WordSample], test: &[WordSample]) -> Result<PathBuf> {
    write_tagged(
        dir,
        train
            .iter()
            .map(|s| (s, Some(SplitTag::Train)))
            .chain(test.iter().map(|s| (s, Some(SplitTag::Test)))),
    )
}

fn write_tagged<'a>(dir: &Path, samples: impl Iterator<Item = (&'a WordSample, Option<SplitTag>)>) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).at(&images)?;
    let path = dir.join("manifest.jsonl");
    let mut out = Vec::new();
    for (i, (s, split)) in samples.enumerate() {
        let rel = format!("images/{i:06}.png");
        s.image.save_png(&dir.join(&rel))?;
        let line = ManifestLine {
            image_path: rel,
            label: s.label.clone(),
            split,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?).at(&path)?;
    }
    fs::write(&path, out).at(&path)?;
    Ok(path)
}

/// Seeded train/validation partition: `val_fraction` of the indices (at
/// least one when `n > 1`) go to validation. Returned index lists are sorted.
pub fn split_train_val(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    if n > 1 && val_fraction > 0.0 {
        n_val = n_val.clamp(1, n - 1);
    }
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(dir: &Path, lines: &[&str]) -> PathBuf {
        fs::create_dir_all(dir.join("img")).unwrap();
        for name in ["a.png", "b.png", "c.png"] {
            GrayImage::new(4, 8).save_png(&dir.join("img").join(name)).unwrap();
        }
        let path = dir.join("m.jsonl");
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn well_formed_manifest_loads_stably() {
        let dir = tempfile::tempdir().unwrap();
        let path = dataset(
            dir.path(),
            &[
                r#"{"image_path": "img/a.png", "label": "কো"}"#,
                r#"{"image_path": "img/b.png", "label": "প্রভৃতি"}"#,
                r#"{"image_path": "img/c.png", "label": "ab", "split": "test"}"#,
            ],
        );
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.records[0].label, "কো");
        assert_eq!(m.records[1].graphemes.len(), 5);
        assert_eq!(m.records[2].split, Some(SplitTag::Test));
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn bad_line_is_reported_with_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dataset(
            dir.path(),
            &[
                r#"{"image_path": "img/a.png", "label": "x"}"#,
                "{not json",
                r#"{"image_path": "img/b.png", "label": "y"}"#,
            ],
        );
        match load_manifest(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_images_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dataset(
            dir.path(),
            &[
                r#"{"image_path": "img/zz.png", "label": "x"}"#,
                r#"{"image_path": "img/yy.png", "label": "y"}"#,
            ],
        );
        match load_manifest(&path) {
            Err(Error::MissingImages(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (t, v) = split_train_val(100, 0.1, 3);
        assert_eq!((t.len(), v.len()), (90, 10));
        assert!(t.iter().all(|i| !v.contains(i)));
        assert_eq!(split_train_val(100, 0.1, 3), (t, v));
        assert_eq!(split_train_val(1, 0.1, 0).1.len(), 0);
    }

    #[test]
    fn word_dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![
            WordSample::new(GrayImage::new(4, 8), "কখ"),
            WordSample::new(GrayImage::new(4, 8), "গ"),
        ];
        let path = write_word_dataset(dir.path(), &samples).unwrap();
        let back = load_manifest(&path).unwrap().load_samples().unwrap();
        assert_eq!(back, samples);
    }
}
