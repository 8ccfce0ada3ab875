//! Tokenization, label indexing, stratified splitting, class weights and
//! padded batch assembly.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::contact::{decode_pairs, encode_pairs, ContactError, ContactMap};

/// Residue alphabet; token `k + 1` is `ALPHABET[k]`, token 0 is padding.
pub const ALPHABET: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
pub const PAD: usize = 0;
pub const VOCAB_SIZE: usize = 21;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("unknown residue {ch:?} at position {pos}")]
    UnknownResidue { ch: char, pos: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("entry {id}: sequence length {seq} differs from contact map size {map}")]
    LengthMismatch { id: String, seq: usize, map: usize },
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("unknown superfamily {0:?}")]
    UnknownSuperfamily(String),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Contact(#[from] ContactError),
}

pub fn tokenize(sequence: &str) -> Result<Vec<usize>, DatasetError> {
    sequence
        .chars()
        .enumerate()
        .map(|(pos, ch)| {
            ALPHABET
                .iter()
                .position(|&a| a as char == ch)
                .map(|k| k + 1)
                .ok_or(DatasetError::UnknownResidue { ch, pos })
        })
        .collect()
}

/// Bijection between superfamily identifiers and contiguous class indices,
/// assigned in lexicographic order of the identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelIndex {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl LabelIndex {
    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut names: Vec<String> = ids.into_iter().map(|s| s.as_ref().to_string()).collect();
        names.sort();
        names.dedup();
        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self { names, lookup }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn name_of(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    /// `superfamily_id \t index` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.names.iter().enumerate() {
            let _ = writeln!(out, "{n}\t{i}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, DatasetError> {
        let mut names = Vec::new();
        for (k, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let bad = |reason: &str| DatasetError::Format {
                line: k + 1,
                reason: reason.to_string(),
            };
            let (name, idx) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected two tab-separated fields"))?;
            let idx: usize = idx.trim().parse().map_err(|_| bad("bad class index"))?;
            if idx != names.len() {
                return Err(bad("class indices must be contiguous from 0"));
            }
            names.push(name.to_string());
        }
        let index = Self::from_ids(&names);
        if index.names != names {
            return Err(DatasetError::Format {
                line: 0,
                reason: "label file is not sorted or has duplicates".into(),
            });
        }
        Ok(index)
    }

    /// SHA-256 of the TSV form, hex encoded. Stored in checkpoints.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// One processed chain slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub id: String,
    pub superfamily: String,
    pub sequence: String,
    pub contact_map: ContactMap,
    pub label: usize,
}

/// Processed entries file: `entry_id \t superfamily_id \t sequence \t i-j,...`.
pub fn write_entries(entries: &[Entry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            e.id,
            e.superfamily,
            e.sequence,
            encode_pairs(&e.contact_map)
        );
    }
    out
}

/// Reads a processed entries file; labels are resolved through `labels`.
pub fn read_entries(text: &str, labels: &LabelIndex) -> Result<Vec<Entry>, DatasetError> {
    let mut out = Vec::new();
    for (k, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(DatasetError::Format {
                line: k + 1,
                reason: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        tokenize(fields[2])?;
        let n = fields[2].len();
        let label = labels
            .index_of(fields[1])
            .ok_or_else(|| DatasetError::UnknownSuperfamily(fields[1].to_string()))?;
        out.push(Entry {
            id: fields[0].to_string(),
            superfamily: fields[1].to_string(),
            sequence: fields[2].to_string(),
            contact_map: decode_pairs(n, fields[3])?,
            label,
        });
    }
    Ok(out)
}

/// Superfamily identifiers appearing in a processed entries file.
pub fn superfamilies_in(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| l.split('\t').nth(1))
        .map(str::to_string)
        .collect()
}

/// One row of the dataset index:
/// `entry_id \t pdb_path \t chain_id \t res_start \t res_end \t superfamily_id`.
/// A `-` in both range columns selects the whole chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexRecord {
    pub entry_id: String,
    pub pdb_path: String,
    pub chain_id: char,
    pub residue_range: Option<(i32, i32)>,
    pub superfamily: String,
}

pub fn parse_index(text: &str) -> Result<Vec<IndexRecord>, DatasetError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| DatasetError::Format {
            line: k + 1,
            reason,
        };
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let mut chain = f[2].chars();
        let chain_id = match (chain.next(), chain.next()) {
            (Some(c), None) => c,
            _ => return Err(bad(format!("chain id {:?} must be one character", f[2]))),
        };
        let residue_range = match (f[3], f[4]) {
            ("-", "-") => None,
            (a, b) => {
                let a = a
                    .parse()
                    .map_err(|_| bad(format!("bad residue start {a:?}")))?;
                let b = b
                    .parse()
                    .map_err(|_| bad(format!("bad residue end {b:?}")))?;
                Some((a, b))
            }
        };
        out.push(IndexRecord {
            entry_id: f[0].to_string(),
            pdb_path: f[1].to_string(),
            chain_id,
            residue_range,
            superfamily: f[5].to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val_of_rest: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val_of_rest: 0.5,
        }
    }
}

impl SplitFractions {
    /// `(train, val, test)` counts for a class of size `n`.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        if n == 0 {
            return (0, 0, 0);
        }
        let train = ((self.train * n as f64).floor() as usize).clamp(1, n);
        let rest = n - train;
        let val = (self.val_of_rest * rest as f64).floor() as usize;
        (train, val, rest - val)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Per class index: `[train, val, test]` counts.
    pub class_counts: BTreeMap<usize, [usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(format!(
                "unknown split {other:?} (expected train, val or test)"
            )),
        }
    }
}

impl SplitManifest {
    pub fn ids(&self, which: SplitName) -> &[String] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    /// Entries of one split, in manifest order.
    pub fn select<'a>(&self, which: SplitName, entries: &'a [Entry]) -> Vec<&'a Entry> {
        let by_id: HashMap<&str, &Entry> = entries.iter().map(|e| (e.id.as_str(), e)).collect();
        self.ids(which)
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).copied())
            .collect()
    }
}

/// Per-class stratified split of `(id, label)` pairs. Classes are visited in
/// ascending label order; members of a class are shuffled with a generator
/// seeded from `seed` and cut by [`SplitFractions::counts`].
pub fn stratified_split_ids(
    items: &[(String, usize)],
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitManifest, DatasetError> {
    if items.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (id, label) in items {
        by_class.entry(*label).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = SplitManifest {
        seed,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        class_counts: BTreeMap::new(),
    };
    for (label, mut members) in by_class {
        members.shuffle(&mut rng);
        let (tr, va, te) = fractions.counts(members.len());
        manifest
            .train
            .extend(members[..tr].iter().map(|s| s.to_string()));
        manifest
            .val
            .extend(members[tr..tr + va].iter().map(|s| s.to_string()));
        manifest
            .test
            .extend(members[tr + va..].iter().map(|s| s.to_string()));
        manifest.class_counts.insert(label, [tr, va, te]);
    }
    Ok(manifest)
}

pub fn stratified_split(
    entries: &[Entry],
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitManifest, DatasetError> {
    let items: Vec<(String, usize)> = entries.iter().map(|e| (e.id.clone(), e.label)).collect();
    stratified_split_ids(&items, fractions, seed)
}

/// Balanced class weights `N / (C * n_c)`; classes absent from `labels` get 0.
pub fn compute_class_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .into_iter()
        .map(|c| {
            if c == 0 {
                0.0
            } else {
                n / (classes as f64 * c as f64)
            }
        })
        .collect()
}

/// Class sizes over a set of entries.
pub fn class_sizes(entries: &[Entry], classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; classes];
    for e in entries {
        counts[e.label] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Attention restricted to contacting residue pairs.
    #[default]
    Contact,
    /// Unrestricted attention over valid positions (sequence only).
    Full,
}

impl FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contact" => Ok(Self::Contact),
            "full" => Ok(Self::Full),
            other => Err(format!(
                "unknown attention mode {other:?} (expected contact or full)"
            )),
        }
    }
}

/// Padded model input for `batch` samples of width `width`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub batch: usize,
    pub width: usize,
    /// `batch × width` token ids, 0 for padding.
    pub tokens: Vec<usize>,
    /// `batch × width`, true at padded positions.
    pub key_padding_mask: Vec<bool>,
    /// `batch × width × width`, true where query `i` may not attend key `j`.
    pub attention_masks: Vec<bool>,
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl EncodedBatch {
    pub fn token(&self, b: usize, t: usize) -> usize {
        self.tokens[b * self.width + t]
    }

    pub fn masked(&self, b: usize, i: usize, j: usize) -> bool {
        self.attention_masks[(b * self.width + i) * self.width + j]
    }

    /// Per-sample `width × width` disallow matrix combining the attention
    /// mask with the key-padding mask.
    pub fn combined_mask(&self) -> Vec<bool> {
        let w = self.width;
        let mut out = self.attention_masks.clone();
        for b in 0..self.batch {
            for i in 0..w {
                for j in 0..w {
                    if self.key_padding_mask[b * w + j] {
                        out[(b * w + i) * w + j] = true;
                    }
                }
            }
        }
        out
    }
}

/// Pads, truncates (leading `max_len` residues) and builds masks.
pub fn batch_encode(
    entries: &[&Entry],
    max_len: usize,
    mode: AttentionMode,
) -> Result<EncodedBatch, DatasetError> {
    if entries.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    for e in entries {
        if e.sequence.len() != e.contact_map.len() {
            return Err(DatasetError::LengthMismatch {
                id: e.id.clone(),
                seq: e.sequence.len(),
                map: e.contact_map.len(),
            });
        }
    }
    let batch = entries.len();
    let width = entries
        .iter()
        .map(|e| e.sequence.len().min(max_len))
        .max()
        .unwrap_or(0);
    let mut tokens = vec![PAD; batch * width];
    let mut key_padding_mask = vec![true; batch * width];
    let mut attention_masks = vec![true; batch * width * width];
    let mut lengths = Vec::with_capacity(batch);
    for (b, e) in entries.iter().enumerate() {
        let toks = tokenize(&e.sequence)?;
        let n = toks.len().min(max_len);
        lengths.push(n);
        tokens[b * width..b * width + n].copy_from_slice(&toks[..n]);
        key_padding_mask[b * width..b * width + n]
            .iter_mut()
            .for_each(|m| *m = false);
        let block = &mut attention_masks[b * width * width..(b + 1) * width * width];
        for i in 0..n {
            for j in 0..n {
                block[i * width + j] = match mode {
                    AttentionMode::Full => false,
                    AttentionMode::Contact => !e.contact_map.contains(i, j),
                };
            }
        }
    }
    Ok(EncodedBatch {
        batch,
        width,
        tokens,
        key_padding_mask,
        attention_masks,
        labels: entries.iter().map(|e| e.label).collect(),
        lengths,
    })
}
