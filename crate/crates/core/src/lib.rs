//! Audio source classification with per-source spectral dictionaries.
//!
//! The pipeline:
//!
//! 1. [`features`] turns audio into L2-normalized magnitude-STFT frames.
//! 2. [`dictlearn`] picks, for each source, a fixed number of training
//!    frames as dictionary atoms. A frame is accepted only when its cosine
//!    similarity to the atoms already chosen for the source, and to every
//!    atom of the sources learned before it, stays under a threshold.
//! 3. [`solver`] fits a frame as a non-negative combination of atoms by
//!    minimizing the generalized KL divergence with an active-set Newton
//!    method.
//! 4. [`classify`] turns the fits into per-source scores (SDR, count of
//!    non-zero weights, sum of weights) and accumulates SDR over a stream.
//! 5. [`corpus`] splits corpora, runs evaluations and writes reports.
//!
//! ```
//! use sparsedict::classify::{Classifier, StreamState};
//! use sparsedict::corpus::{split_signals, synth, train, SplitPosition};
//! use sparsedict::dictlearn::LearnConfig;
//! use sparsedict::features::FramingConfig;
//! use sparsedict::solver::SolverConfig;
//!
//! let sources: Vec<_> = synth::six_source_set(3.0, 1)
//!     .into_iter()
//!     .take(2)
//!     .map(|(label, spec)| (label, synth::generate_synthetic(&spec, 16_000).unwrap()))
//!     .collect();
//! let split = split_signals(&sources, 1.0, SplitPosition::TailTest, &FramingConfig::default())?;
//! let learn = LearnConfig { n_atoms: 20, ..LearnConfig::default() };
//! let (dict, _) = train(&split, &learn)?;
//!
//! let classifier = Classifier::new(dict, SolverConfig::default())?;
//! let mut stream = StreamState::new(2, 6)?;
//! for frame in &split.sources[1].test.frames {
//!     if let Some(scores) = classifier.score(frame)? {
//!         stream.update(&scores.sdr)?;
//!     }
//! }
//! assert_eq!(stream.prediction(), 1);
//! # Ok::<(), sparsedict::Error>(())
//! ```

pub mod classify;
pub mod config;
pub mod corpus;
pub mod dictlearn;
mod error;
pub mod features;
pub mod oracle;
pub mod solver;
pub mod store;
pub mod wav;

pub use error::{Error, Result};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/dictionaries.md")]
    mod dictionaries {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/classification.md")]
    mod classification {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
