//! Shot datasets and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * shots text: UTF-8, one bit-string per line, first character is qubit 1;
//! * counts: a JSON object mapping bit-strings to positive integer counts,
//!   keys written in lexicographic order.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::bits::BitString;
use crate::error::{Error, Result};

/// Immutable collection of equal-width shots with a cached count table.
///
/// Distinct strings are kept sorted; `row_of_shot[i]` is the index of shot
/// `i` in that sorted list.
#[derive(Clone, Debug)]
pub struct ShotDataset {
    n: usize,
    shots: Vec<BitString>,
    distinct: Arc<[BitString]>,
    multiplicity: Arc<[u64]>,
    row_of_shot: Arc<[u32]>,
}

impl PartialEq for ShotDataset {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.shots == other.shots
    }
}

impl ShotDataset {
    pub fn new(shots: Vec<BitString>) -> Result<Self> {
        let first = shots.first().ok_or(Error::EmptyDataset)?;
        let n = first.len();
        if n == 0 {
            return Err(Error::parse(Some(1), "zero-width bit-string"));
        }
        for (i, s) in shots.iter().enumerate() {
            if s.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    found: s.len(),
                    line: Some(i + 1),
                });
            }
        }

        let mut table: BTreeMap<&BitString, u64> = BTreeMap::new();
        for s in &shots {
            *table.entry(s).or_default() += 1;
        }
        let distinct: Vec<BitString> = table.keys().map(|s| (*s).clone()).collect();
        let multiplicity: Vec<u64> = table.values().copied().collect();
        let index: HashMap<&BitString, u32> = distinct
            .iter()
            .enumerate()
            .map(|(i, s)| (s, i as u32))
            .collect();
        let row_of_shot: Vec<u32> = shots.iter().map(|s| index[s]).collect();

        Ok(ShotDataset {
            n,
            distinct: distinct.into(),
            multiplicity: multiplicity.into(),
            row_of_shot: row_of_shot.into(),
            shots,
        })
    }

    /// Expands a count table into shots, keys in lexicographic order.
    pub fn from_counts<I>(counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (BitString, u64)>,
    {
        let sorted: BTreeMap<BitString, u64> = counts.into_iter().fold(BTreeMap::new(), |mut m, (k, c)| {
            *m.entry(k).or_default() += c;
            m
        });
        let mut shots = Vec::new();
        for (s, c) in sorted {
            if c == 0 {
                return Err(Error::parse(None, format!("count for {s} must be positive")));
            }
            shots.extend(std::iter::repeat_n(s, c as usize));
        }
        ShotDataset::new(shots)
    }

    /// Number of qubits per shot.
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of shots `S`.
    #[inline]
    pub fn len(&self) -> usize {
        self.shots.len()
    }

    /// Always false; construction rejects empty datasets.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn shots(&self) -> &[BitString] {
        &self.shots
    }

    pub fn shot(&self, i: usize) -> &BitString {
        &self.shots[i]
    }

    /// Distinct observed strings in lexicographic order.
    pub fn distinct(&self) -> &[BitString] {
        &self.distinct
    }

    /// Occurrence count of each entry of [`distinct`](Self::distinct).
    pub fn multiplicities(&self) -> &[u64] {
        &self.multiplicity
    }

    /// Index into [`distinct`](Self::distinct) for every shot.
    pub fn row_of_shot(&self) -> &[u32] {
        &self.row_of_shot
    }

    pub(crate) fn shared_rows(&self) -> (Arc<[u32]>, Arc<[u64]>) {
        (self.row_of_shot.clone(), self.multiplicity.clone())
    }

    pub fn count_of(&self, s: &BitString) -> u64 {
        self.distinct
            .binary_search(s)
            .map(|i| self.multiplicity[i])
            .unwrap_or(0)
    }

    pub fn counts(&self) -> BTreeMap<BitString, u64> {
        self.distinct
            .iter()
            .cloned()
            .zip(self.multiplicity.iter().copied())
            .collect()
    }

    /// Draws `m` shots without replacement, preserving their original order.
    pub fn subsample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<ShotDataset> {
        if m == 0 || m > self.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot subsample {m} shots from a dataset of {}",
                self.len()
            )));
        }
        let mut picked = index::sample(rng, self.len(), m).into_vec();
        picked.sort_unstable();
        ShotDataset::new(picked.into_iter().map(|i| self.shots[i].clone()).collect())
    }
}

pub fn parse_shots_text(text: &str) -> Result<ShotDataset> {
    let mut shots = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let s: BitString = line.parse().map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(Some(line_no), message),
            other => other,
        })?;
        match width {
            None => width = Some(s.len()),
            Some(w) if w != s.len() => {
                return Err(Error::Dimension {
                    expected: w,
                    found: s.len(),
                    line: Some(line_no),
                })
            }
            _ => {}
        }
        shots.push(s);
    }
    ShotDataset::new(shots)
}

pub fn load_shots_text(path: impl AsRef<Path>) -> Result<ShotDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_shots_text(&text)
}

pub fn parse_counts(text: &str) -> Result<ShotDataset> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::parse(Some(e.line()), e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| Error::parse(None, "counts file must be a JSON object"))?;
    if object.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut width = None;
    let mut counts = Vec::with_capacity(object.len());
    for (key, v) in object {
        let s: BitString = key.parse().map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(None, format!("key {key:?}: {message}")),
            other => other,
        })?;
        match width {
            None => width = Some(s.len()),
            Some(w) if w != s.len() => {
                return Err(Error::Dimension {
                    expected: w,
                    found: s.len(),
                    line: None,
                })
            }
            _ => {}
        }
        let c = v
            .as_u64()
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::parse(None, format!("count for {key:?} must be a positive integer, got {v}")))?;
        counts.push((s, c));
    }
    ShotDataset::from_counts(counts)
}

pub fn load_counts(path: impl AsRef<Path>) -> Result<ShotDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_counts(&text)
}

/// Counts table as pretty JSON with sorted keys and a trailing newline.
pub fn counts_to_json(dataset: &ShotDataset) -> String {
    let table: BTreeMap<String, u64> = dataset
        .distinct()
        .iter()
        .zip(dataset.multiplicities())
        .map(|(s, &c)| (s.to_string(), c))
        .collect();
    let mut out = serde_json::to_string_pretty(&table).expect("string map always serializes");
    out.push('\n');
    out
}

pub fn save_counts(dataset: &ShotDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, counts_to_json(dataset)).map_err(|e| Error::io(path, e))
}

pub fn shots_to_text(dataset: &ShotDataset) -> String {
    let mut out = String::with_capacity(dataset.len() * (dataset.n() + 1));
    for s in dataset.shots() {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    out
}

pub fn save_shots_text(dataset: &ShotDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, shots_to_text(dataset)).map_err(|e| Error::io(path, e))
}

/// Loads either format: a `.json` extension, or content starting with `{`,
/// selects the counts reader.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<ShotDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || text.trim_start().starts_with('{');
    if is_json {
        parse_counts(&text)
    } else {
        parse_shots_text(&text)
    }
}

/// Writes counts JSON for a `.json` path and shots text otherwise.
pub fn save_dataset(dataset: &ShotDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        save_counts(dataset, path)
    } else {
        save_shots_text(dataset, path)
    }
}
