//! Adversarial hallucinator: losses, offline training, sample generation and
//! the nearest-real-instance audit.

pub mod losses;
mod train;

pub use losses::{
    adv_loss_discriminator, adv_loss_generator, discriminate, dr_loss, gradient_penalty, overall_generator_loss,
    reconstruction_loss, GeneratorPass,
};
pub use train::{
    evaluate_dr, train_from, train_offline, AdversarialTrainer, QuadBatch, QuadrupletSampler, StepLosses,
    TrainConfig, TrainOutcome, TrainRecord, TrainReport,
};

use thiserror::Error;

use crate::dataio::{DataError, Instance};
use crate::nets::{HallucinatorModel, NetError};
use crate::numgrad::{Graph, Mat, NumError};

#[derive(Debug, Error)]
pub enum HalError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { iteration: usize, what: &'static str },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("quadruplets need pairs from at least two identities")]
    SingleIdentity,
    #[error("audit pool is empty")]
    EmptyPool,
}

/// A deformation-source pair of identity `a` and a transfer-target pair of a
/// different identity `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadruplet {
    pub xa1: Vec<f32>,
    pub xa2: Vec<f32>,
    pub xb1: Vec<f32>,
    pub xb2: Vec<f32>,
    pub identity_a: u32,
    pub identity_b: u32,
}

/// `Dₑ([Eₙ([x1, x2]), exemplar])`.
pub fn hallucinate(g: &HallucinatorModel, x1: &[f32], x2: &[f32], exemplar: &[f32]) -> Result<Vec<f32>, HalError> {
    let z = g.encode(x1, x2)?;
    Ok(g.decode(&z, exemplar)?)
}

/// Batched [`hallucinate`] over matching rows.
pub fn hallucinate_rows(g: &HallucinatorModel, x1: &Mat, x2: &Mat, exemplar: &Mat) -> Result<Mat, HalError> {
    let d = g.feature_dim();
    for m in [x1, x2, exemplar] {
        if m.cols != d {
            return Err(HalError::Dimension {
                what: "hallucinate input",
                expected: d,
                found: m.cols,
            });
        }
    }
    let mut graph = Graph::new();
    let bound = g.bind(&mut graph, false);
    let a = graph.constant_mat(x1.clone());
    let b = graph.constant_mat(x2.clone());
    let e = graph.constant_mat(exemplar.clone());
    let z = bound.encode(&mut graph, a, b)?;
    let out = bound.decode(&mut graph, z, e)?;
    Ok(graph.value(out).clone())
}

/// Nearest pool member of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditMatch {
    pub sample: usize,
    /// Index into the pool.
    pub instance: usize,
    pub identity: u32,
    pub frame: u32,
    pub distance: f64,
}

/// Exact Euclidean nearest neighbor of every sample; ties go to the lowest
/// pool index.
pub fn nearest_real_audit(samples: &[Vec<f32>], pool: &[Instance]) -> Result<Vec<AuditMatch>, HalError> {
    let first = pool.first().ok_or(HalError::EmptyPool)?;
    let d = first.feature.len();
    if let Some(bad) = pool.iter().find(|p| p.feature.len() != d) {
        return Err(HalError::Dimension {
            what: "audit pool feature",
            expected: d,
            found: bad.feature.len(),
        });
    }
    samples
        .iter()
        .enumerate()
        .map(|(si, s)| {
            if s.len() != d {
                return Err(HalError::Dimension {
                    what: "audit sample",
                    expected: d,
                    found: s.len(),
                });
            }
            let mut best = (f64::INFINITY, 0usize);
            for (pi, p) in pool.iter().enumerate() {
                let dist: f64 = s
                    .iter()
                    .zip(&p.feature)
                    .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                    .sum();
                if dist < best.0 {
                    best = (dist, pi);
                }
            }
            let p = &pool[best.1];
            Ok(AuditMatch {
                sample: si,
                instance: best.1,
                identity: p.identity,
                frame: p.frame,
                distance: best.0.sqrt(),
            })
        })
        .collect()
}
