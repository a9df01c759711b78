//! Adversarial deformation hallucination for tracking-by-detection.

pub mod cli;
pub mod codec;
pub mod dataio;
pub mod hallucinator;
pub mod nets;
pub mod numgrad;
pub mod rng;
pub mod sdt;
pub mod tracker;
