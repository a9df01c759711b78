//! Feature files: `"HATF"`, `u16` version, `u8` space tag (0 = feature space,
//! 1 = semantic space), `u32` dim, `u32` count, then per record `u32`
//! identity, `u32` frame and `dim` floats. Little-endian.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::DataError;
use crate::codec::{read_file, write_file, FormatError, Reader, Writer};

pub const FEATURE_MAGIC: &[u8; 4] = b"HATF";
pub const FEATURE_VERSION: u16 = 1;

/// Which embedding a store holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Space {
    /// Hallucination feature space.
    Feature,
    /// Semantic descriptor space used for snippet retrieval.
    Semantic,
}

impl Space {
    fn tag(self) -> u8 {
        match self {
            Space::Feature => 0,
            Space::Semantic => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, FormatError> {
        match tag {
            0 => Ok(Space::Feature),
            1 => Ok(Space::Semantic),
            tag => Err(FormatError::UnknownTag { what: "space", tag }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub identity: u32,
    pub frame: u32,
    pub values: Vec<f32>,
}

/// A flat list of embedded instances, grouped by identity with frames in
/// ascending order inside each group.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    pub space: Space,
    pub dim: usize,
    pub records: Vec<Record>,
}

/// One instance with both embeddings, as consumed by the tracker and audit.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub identity: u32,
    pub frame: u32,
    pub feature: Vec<f32>,
    pub semantic: Option<Vec<f32>>,
}

impl FeatureStore {
    pub fn new(space: Space, dim: usize, records: Vec<Record>) -> Result<Self, DataError> {
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != dim {
                return Err(DataError::Dimension {
                    what: "feature record",
                    expected: dim,
                    found: r.values.len(),
                });
            }
            if r.values.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { record: i });
            }
        }
        Ok(Self { space, dim, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record indices grouped by identity, each group in storage order.
    pub fn snippets(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut out: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            out.entry(r.identity).or_default().push(i);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(FEATURE_MAGIC, FEATURE_VERSION);
        w.u8(self.space.tag());
        w.u32(self.dim as u32);
        w.u32(self.records.len() as u32);
        for r in &self.records {
            w.u32(r.identity);
            w.u32(r.frame);
            w.f32s(&r.values);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::open(bytes, FEATURE_MAGIC, FEATURE_VERSION)?;
        let space = Space::from_tag(r.u8()?)?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let identity = r.u32()?;
            let frame = r.u32()?;
            let values = r.f32s(dim)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::NonFinite {
                    what: format!("record {i}"),
                });
            }
            records.push(Record { identity, frame, values });
        }
        r.finish()?;
        Ok(Self { space, dim, records })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Reads a store and checks it against an expected space and dimension.
    pub fn read_expecting(path: &Path, space: Space, dim: usize) -> Result<Self, DataError> {
        let store = Self::read(path)?;
        if store.space != space {
            return Err(DataError::WrongSpace {
                expected: space,
                found: store.space,
            });
        }
        if store.dim != dim {
            return Err(DataError::Format(FormatError::Dimension {
                expected: dim,
                found: store.dim,
            }));
        }
        Ok(store)
    }
}

/// Joins a feature-space store with an optional semantic store on
/// `(identity, frame)`.
pub fn join_instances(features: &FeatureStore, semantic: Option<&FeatureStore>) -> Result<Vec<Instance>, DataError> {
    let sem: Option<BTreeMap<(u32, u32), &Vec<f32>>> =
        semantic.map(|s| s.records.iter().map(|r| ((r.identity, r.frame), &r.values)).collect());
    features
        .records
        .iter()
        .map(|r| {
            let semantic = match &sem {
                None => None,
                Some(map) => Some(
                    map.get(&(r.identity, r.frame))
                        .map(|v| (*v).clone())
                        .ok_or(DataError::MissingSemantic {
                            identity: r.identity,
                            frame: r.frame,
                        })?,
                ),
            };
            Ok(Instance {
                identity: r.identity,
                frame: r.frame,
                feature: r.values.clone(),
                semantic,
            })
        })
        .collect()
}

/// Plain-text `key = value` sidecar, one entry per line, in the given order.
pub fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<(), FormatError> {
    let mut text = String::new();
    for (k, v) in entries {
        let _ = writeln!(text, "{k} = {v}");
    }
    write_file(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>, FormatError> {
    let text = String::from_utf8_lossy(&read_file(path)?).into_owned();
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}
