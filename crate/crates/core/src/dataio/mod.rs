//! Feature stores, the synthetic source world and pair construction.

mod pairs;
mod store;
mod world;

pub use pairs::{build_dq, build_dt, PairRef, QuadRef};
pub use store::{
    join_instances, read_manifest, write_manifest, FeatureStore, Instance, Record, Space, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use world::{
    gen_world, oracle_transfer, Cluster, Deformation, Family, FamilyMix, LatentMap, MapActivation,
    Snippet, SyntheticWorld, WorldConfig,
};

use crate::codec::FormatError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("record {record} contains a non-finite value")]
    NonFinite { record: usize },
    #[error("expected a {expected:?}-space store, found {found:?}")]
    WrongSpace { expected: Space, found: Space },
    #[error("no semantic descriptor for identity {identity} frame {frame}")]
    MissingSemantic { identity: u32, frame: u32 },
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown deformation family `{0}` (expected translation, rotation, scaling, composite or mixed)")]
    UnknownFamily(String),
    #[error("quadruplets need pairs from at least two identities")]
    SingleIdentity,
    #[error("records {first} and {second} are not an ordered pair of one snippet")]
    NotAPair { first: usize, second: usize },
}
