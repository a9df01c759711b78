//! Selective deformation transfer: per-snippet mean descriptors, exact
//! ranking against an exemplar descriptor, and assembly of the transfer pair
//! set from the top-ranked snippets.
//!
//! Index files: `"HATI"`, `u16` version, `u32` count, `u32` descriptor dim,
//! then per snippet `u32` id, `u32` instance count and the descriptor floats.
//! Little-endian.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant, SystemTime};

use rand::seq::index;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{read_file, write_file, FormatError, Reader, Writer};
use crate::dataio::{build_dt, FeatureStore, PairRef, Record};
use crate::rng;

pub const INDEX_MAGIC: &[u8; 4] = b"HATI";
pub const INDEX_VERSION: u16 = 1;

/// Default number of retrieved snippets.
pub const DEFAULT_TOP: usize = 2000;
/// Default number of pairs in the transfer set.
pub const DEFAULT_PAIR_BUDGET: usize = 10_000;

#[derive(Debug, Error)]
pub enum SdtError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("snippet id {0} appears more than once")]
    DuplicateId(u32),
    #[error("snippet {0} has no instances")]
    EmptySnippet(u32),
    #[error("descriptor dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("the snippet index is empty")]
    EmptyIndex,
    #[error("top = {top} is outside 1..={count} (index holds {count} snippets)")]
    TopOutOfRange { top: usize, count: usize },
    #[error("snippet {0} is not in the instance store")]
    UnknownSnippet(u32),
    #[error("no selected snippet yields a pair within {window} frames; lower the retrieval count or disable selection")]
    NoPairs { window: u32 },
}

/// Mean semantic descriptor of one snippet.
#[derive(Clone, Debug, PartialEq)]
pub struct SnippetDescriptor {
    pub id: u32,
    pub descriptor: Vec<f32>,
    pub count: u32,
}

/// Elementwise mean of equal-length vectors, accumulated in `f64`.
pub fn snippet_descriptor(instances: &[impl AsRef<[f32]>]) -> Option<Vec<f32>> {
    let dim = instances.first()?.as_ref().len();
    let mut acc = vec![0.0f64; dim];
    for v in instances {
        for (a, x) in acc.iter_mut().zip(v.as_ref()) {
            *a += *x as f64;
        }
    }
    let n = instances.len() as f64;
    Some(acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Immutable collection of snippet descriptors ordered by id.
#[derive(Clone, Debug)]
pub struct SnippetIndex {
    descriptors: Vec<SnippetDescriptor>,
    dim: usize,
    /// SHA-256 of the build input.
    pub source_hash: [u8; 32],
    /// Wall-clock build time; not persisted.
    pub built_at: SystemTime,
}

impl PartialEq for SnippetIndex {
    fn eq(&self, other: &Self) -> bool {
        self.descriptors == other.descriptors && self.dim == other.dim
    }
}

/// One ranked snippet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ranked {
    pub id: u32,
    pub distance: f64,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

impl SnippetIndex {
    /// Builds descriptors for `(id, instance vectors)` groups. Every vector
    /// must share one dimension.
    pub fn build<V: AsRef<[f32]>>(snippets: &[(u32, Vec<V>)]) -> Result<Self, SdtError> {
        let mut seen = BTreeSet::new();
        let mut dim = None;
        let mut hasher = Sha256::new();
        let mut descriptors = Vec::with_capacity(snippets.len());
        for (id, inst) in snippets {
            if !seen.insert(*id) {
                return Err(SdtError::DuplicateId(*id));
            }
            let d = *dim.get_or_insert_with(|| inst.first().map_or(0, |v| v.as_ref().len()));
            for v in inst {
                if v.as_ref().len() != d {
                    return Err(SdtError::Dimension {
                        expected: d,
                        found: v.as_ref().len(),
                    });
                }
            }
            let descriptor = snippet_descriptor(inst).ok_or(SdtError::EmptySnippet(*id))?;
            descriptors.push(SnippetDescriptor {
                id: *id,
                descriptor,
                count: inst.len() as u32,
            });
        }
        descriptors.sort_by_key(|d| d.id);
        let mut order: Vec<usize> = (0..snippets.len()).collect();
        order.sort_by_key(|&i| snippets[i].0);
        for i in order {
            hasher.update(snippets[i].0.to_le_bytes());
            hasher.update((snippets[i].1.len() as u32).to_le_bytes());
            for v in &snippets[i].1 {
                for x in v.as_ref() {
                    hasher.update(x.to_le_bytes());
                }
            }
        }
        Ok(Self {
            descriptors,
            dim: dim.unwrap_or(0),
            source_hash: hasher.finalize().into(),
            built_at: SystemTime::now(),
        })
    }

    /// One snippet per identity of a semantic-space store.
    pub fn from_store(store: &FeatureStore) -> Result<Self, SdtError> {
        let groups: Vec<(u32, Vec<&[f32]>)> = store
            .snippets()
            .into_iter()
            .map(|(id, idx)| (id, idx.iter().map(|&i| store.records[i].values.as_slice()).collect()))
            .collect();
        Self::build(&groups)
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn descriptors(&self) -> &[SnippetDescriptor] {
        &self.descriptors
    }

    pub fn source_hash_hex(&self) -> String {
        self.source_hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The `top` snippets nearest to `exemplar` in ascending Euclidean
    /// distance; exact ties go to the smaller id.
    pub fn rank(&self, exemplar: &[f32], top: usize) -> Result<Vec<Ranked>, SdtError> {
        if self.descriptors.is_empty() {
            return Err(SdtError::EmptyIndex);
        }
        if exemplar.len() != self.dim {
            return Err(SdtError::Dimension {
                expected: self.dim,
                found: exemplar.len(),
            });
        }
        if top == 0 || top > self.descriptors.len() {
            return Err(SdtError::TopOutOfRange {
                top,
                count: self.descriptors.len(),
            });
        }
        let mut scored: Vec<(f64, u32)> = self
            .descriptors
            .iter()
            .map(|d| (sq_dist(exemplar, &d.descriptor), d.id))
            .collect();
        let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if top < scored.len() {
            scored.select_nth_unstable_by(top - 1, cmp);
            scored.truncate(top);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(d, id)| Ranked {
                id,
                distance: d.sqrt(),
            })
            .collect())
    }

    /// [`SnippetIndex::rank`] with its wall-clock duration.
    pub fn timed_rank(&self, exemplar: &[f32], top: usize) -> Result<(Vec<Ranked>, Duration), SdtError> {
        let start = Instant::now();
        let r = self.rank(exemplar, top)?;
        Ok((r, start.elapsed()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(INDEX_MAGIC, INDEX_VERSION);
        w.u32(self.descriptors.len() as u32);
        w.u32(self.dim as u32);
        for d in &self.descriptors {
            w.u32(d.id);
            w.u32(d.count);
            w.f32s(&d.descriptor);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::open(bytes, INDEX_MAGIC, INDEX_VERSION)?;
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut descriptors = Vec::with_capacity(count.min(1 << 20));
        let mut last = None;
        for i in 0..count {
            let id = r.u32()?;
            let n = r.u32()?;
            let descriptor = r.f32s(dim)?;
            if last.is_some_and(|l| l >= id) {
                return Err(FormatError::Shape {
                    what: format!("snippet record {i}: id {id} out of order"),
                });
            }
            if n == 0 {
                return Err(FormatError::Shape {
                    what: format!("snippet {id}: zero instances"),
                });
            }
            if descriptor.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::NonFinite {
                    what: format!("snippet {id}"),
                });
            }
            last = Some(id);
            descriptors.push(SnippetDescriptor {
                id,
                descriptor,
                count: n,
            });
        }
        r.finish()?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        Ok(Self {
            descriptors,
            dim,
            source_hash: hasher.finalize().into(),
            built_at: SystemTime::now(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Same-identity pairs within `window` frames from the `selected` snippets
/// of `records`. When more than `budget` pairs exist, `budget` of them are
/// drawn uniformly without replacement; the result keeps store order.
pub fn assemble_ds(
    records: &[Record],
    selected: &[u32],
    window: u32,
    budget: usize,
    seed: u64,
) -> Result<Vec<PairRef>, SdtError> {
    let wanted: BTreeSet<u32> = selected.iter().copied().collect();
    let present: BTreeSet<u32> = records.iter().map(|r| r.identity).collect();
    if let Some(missing) = wanted.iter().find(|id| !present.contains(id)) {
        return Err(SdtError::UnknownSnippet(*missing));
    }
    let subset: Vec<usize> = (0..records.len())
        .filter(|&i| wanted.contains(&records[i].identity))
        .collect();
    let sub_records: Vec<Record> = subset
        .iter()
        .map(|&i| Record {
            identity: records[i].identity,
            frame: records[i].frame,
            values: Vec::new(),
        })
        .collect();
    let mut pairs: Vec<PairRef> = build_dt(&sub_records, window)
        .into_iter()
        .map(|p| PairRef {
            first: subset[p.first],
            second: subset[p.second],
        })
        .collect();
    if pairs.is_empty() {
        return Err(SdtError::NoPairs { window });
    }
    if pairs.len() > budget {
        let mut r = rng::stream(seed, 30);
        let mut keep = index::sample(&mut r, pairs.len(), budget).into_vec();
        keep.sort_unstable();
        pairs = keep.into_iter().map(|i| pairs[i]).collect();
    }
    Ok(pairs)
}

/// Total order used by [`SnippetIndex::rank`], exposed for oracles.
pub fn ranking_order(a: &Ranked, b: &Ranked) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn index(rows: &[(u32, Vec<Vec<f32>>)]) -> SnippetIndex {
        SnippetIndex::build(rows).unwrap()
    }

    #[test]
    fn descriptor_is_mean() {
        assert_eq!(snippet_descriptor(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(snippet_descriptor(&[vec![0.5, -1.5]]).unwrap(), vec![0.5, -1.5]);
        let v = vec![0.1f32, 0.7, -0.3];
        assert_eq!(snippet_descriptor(&vec![v.clone(); 7]).unwrap(), v);
        assert!(snippet_descriptor(&Vec::<Vec<f32>>::new()).is_none());
    }

    #[test]
    fn build_errors() {
        let dup = vec![(1, vec![vec![0.0f32]]), (1, vec![vec![1.0]])];
        assert!(matches!(SnippetIndex::build(&dup), Err(SdtError::DuplicateId(1))));
        let empty: Vec<(u32, Vec<Vec<f32>>)> = vec![(3, vec![])];
        assert!(matches!(SnippetIndex::build(&empty), Err(SdtError::EmptySnippet(3))));
        let ragged = vec![(0, vec![vec![0.0f32, 1.0]]), (1, vec![vec![1.0]])];
        assert!(matches!(SnippetIndex::build(&ragged), Err(SdtError::Dimension { .. })));
    }

    #[test]
    fn empty_index_refuses_queries() {
        let idx = index(&[]);
        assert!(idx.is_empty());
        assert!(matches!(idx.rank(&[], 1), Err(SdtError::EmptyIndex)));
    }

    #[test]
    fn ranking_example() {
        // Distances 3, 1, 2 from the origin.
        let idx = index(&[(0, vec![vec![3.0]]), (1, vec![vec![1.0]]), (2, vec![vec![-2.0]])]);
        let ids: Vec<u32> = idx.rank(&[0.0], 3).unwrap().iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![1, 2, 0]);
        assert!(matches!(idx.rank(&[0.0], 4), Err(SdtError::TopOutOfRange { top: 4, count: 3 })));
        assert!(matches!(idx.rank(&[0.0], 0), Err(SdtError::TopOutOfRange { .. })));
        assert!(matches!(idx.rank(&[0.0, 1.0], 1), Err(SdtError::Dimension { .. })));
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let idx = index(&[(9, vec![vec![1.0]]), (4, vec![vec![-1.0]]), (6, vec![vec![1.0]])]);
        let ids: Vec<u32> = idx.rank(&[0.0], 3).unwrap().iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![4, 6, 9]);
        let top1 = idx.rank(&[0.0], 1).unwrap();
        assert_eq!(top1[0].id, 4);
    }

    #[test]
    fn exemplar_equal_to_descriptor() {
        let idx = index(&[(0, vec![vec![1.0, 2.0]]), (5, vec![vec![0.25, -4.0]])]);
        let r = idx.rank(&[0.25, -4.0], 1).unwrap();
        assert_eq!(r, vec![Ranked { id: 5, distance: 0.0 }]);
    }

    #[test]
    fn index_bytes_round_trip() {
        let rows = vec![(2, vec![vec![1.0f32, 0.5], vec![0.0, 0.5]]), (0, vec![vec![3.0, 3.0]])];
        let a = index(&rows);
        let b = index(&rows);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.source_hash, b.source_hash);
        let back = SnippetIndex::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), a.to_bytes());
        let mut bad = a.to_bytes();
        bad[0] = b'X';
        assert!(matches!(SnippetIndex::from_bytes(&bad), Err(FormatError::BadMagic { .. })));
    }

    fn recs(spec: &[(u32, u32)]) -> Vec<Record> {
        spec.iter()
            .map(|&(identity, frame)| Record {
                identity,
                frame,
                values: vec![],
            })
            .collect()
    }

    #[test]
    fn window_excludes_far_frames() {
        let r = recs(&[(0, 0), (0, 25), (1, 0), (1, 5)]);
        assert!(matches!(assemble_ds(&r, &[0], 20, 10, 0), Err(SdtError::NoPairs { .. })));
        let p = assemble_ds(&r, &[0, 1], 20, 10, 0).unwrap();
        assert_eq!(p, vec![PairRef { first: 2, second: 3 }]);
        assert!(matches!(assemble_ds(&r, &[7], 20, 10, 0), Err(SdtError::UnknownSnippet(7))));
    }

    #[test]
    fn budget_subsamples_deterministically() {
        let spec: Vec<(u32, u32)> = (0..4).flat_map(|i| (0..10).map(move |f| (i, f))).collect();
        let r = recs(&spec);
        let all = assemble_ds(&r, &[0, 1, 2, 3], 20, usize::MAX, 0).unwrap();
        assert_eq!(all.len(), 4 * 45);
        let a = assemble_ds(&r, &[0, 1, 2, 3], 20, 50, 3).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, assemble_ds(&r, &[0, 1, 2, 3], 20, 50, 3).unwrap());
        assert!(a.iter().all(|p| all.contains(p)));
    }

    proptest! {
        #[test]
        fn ranking_is_sorted_prefix(vals in proptest::collection::vec(-3i8..3, 1..60), q in -3i8..3, top in 1usize..60) {
            let rows: Vec<(u32, Vec<Vec<f32>>)> = vals.iter().enumerate().map(|(i, v)| (i as u32 * 3, vec![vec![*v as f32]])).collect();
            let idx = index(&rows);
            let top = top.min(rows.len());
            let r = idx.rank(&[q as f32], top).unwrap();
            prop_assert_eq!(r.len(), top);
            for w in r.windows(2) {
                prop_assert!(ranking_order(&w[0], &w[1]) == Ordering::Less);
            }
            let full = idx.rank(&[q as f32], rows.len()).unwrap();
            prop_assert_eq!(&full[..top], &r[..]);
        }

        #[test]
        fn translation_invariant(vals in proptest::collection::vec(-20i16..20, 2..40), q in -20i16..20, shift in -50i16..50) {
            // Integer-valued inputs keep the shifted distances exact.
            let rows: Vec<(u32, Vec<Vec<f32>>)> = vals.iter().enumerate().map(|(i, v)| (i as u32, vec![vec![*v as f32]])).collect();
            let shifted: Vec<(u32, Vec<Vec<f32>>)> = vals.iter().enumerate().map(|(i, v)| (i as u32, vec![vec![(*v + shift) as f32]])).collect();
            let a: Vec<u32> = index(&rows).rank(&[q as f32], rows.len()).unwrap().iter().map(|r| r.id).collect();
            let b: Vec<u32> = index(&shifted).rank(&[(q + shift) as f32], rows.len()).unwrap().iter().map(|r| r.id).collect();
            prop_assert_eq!(a, b);
        }
    }
}
