//! Same-identity pairs within a frame window, and quadruplets pairing them
//! across identities.

use rand::Rng as _;

use super::store::Record;
use super::DataError;
use crate::rng;

/// Two records of one identity, `first` no later than `second`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairRef {
    pub first: usize,
    pub second: usize,
}

/// A source pair supplying the deformation and a target pair of a
/// different identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadRef {
    pub source: PairRef,
    pub target: PairRef,
}

/// All same-identity record pairs whose frame indices differ by at most
/// `window`, ordered by identity group then by position.
pub fn build_dt(records: &[Record], window: u32) -> Vec<PairRef> {
    let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.identity).or_default().push(i);
    }
    let mut out = Vec::new();
    for idx in groups.values() {
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                let (fi, fj) = (records[i].frame, records[j].frame);
                if fi.abs_diff(fj) <= window {
                    let (first, second) = if fi <= fj { (i, j) } else { (j, i) };
                    out.push(PairRef { first, second });
                }
            }
        }
    }
    out
}

/// Draws `count` quadruplets: the source pair uniformly from `pairs`, the
/// target uniformly among pairs of a different identity.
pub fn build_dq(records: &[Record], pairs: &[PairRef], count: usize, seed: u64) -> Result<Vec<QuadRef>, DataError> {
    let identity = |p: &PairRef| records[p.first].identity;
    let first = pairs.first().ok_or(DataError::SingleIdentity)?;
    if pairs.iter().all(|p| identity(p) == identity(first)) {
        return Err(DataError::SingleIdentity);
    }
    let mut r = rng::stream(seed, 7);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let source = pairs[r.random_range(0..pairs.len())];
        let target = loop {
            let t = pairs[r.random_range(0..pairs.len())];
            if identity(&t) != identity(&source) {
                break t;
            }
        };
        out.push(QuadRef { source, target });
    }
    Ok(out)
}
