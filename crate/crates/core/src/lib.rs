//! Speaker-embedding variability spaces for asynchronous voice anonymization.
//!
//! An embedding set is summarized by the eigendecomposition of its
//! covariance ([`VariabilitySpace`]). Removing the coefficients of a
//! contiguous block of eigen-dimensions ([`SubspaceSpec`]) yields a
//! pseudo-speaker embedding; [`eval`] measures how much that obscures
//! cosine-scored speaker verification.
//!
//! ```
//! use varspace::{modify, SubspaceSpec, VariabilitySpace};
//!
//! let space = VariabilitySpace::fit_vectors(&[
//!     [2.0, 0.1, 0.0],
//!     [-2.0, 0.0, 0.1],
//!     [1.0, -0.1, 0.0],
//!     [-1.0, 0.0, -0.1],
//! ])?;
//! // Drop the dominant direction.
//! let (x, report) = modify(&space, &[1.0, 1.0, 1.0], &SubspaceSpec::primary(1))?;
//! assert_eq!(report.zeroed, vec![1]);
//! assert!(x[0].abs() < 0.1);
//! # Ok::<(), varspace::Error>(())
//! ```

pub mod embeddings;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod space;
pub mod subspace;
pub mod synth;

pub use embeddings::{Embedding, EmbeddingFormat, EmbeddingSet};
pub use error::{Category, Error, Result};
pub use eval::{
    build_enrollment, compute_eer, cosine, run_sweep, score_trials, EerResult, Label,
    ScoredTrials, SweepOptions, SweepResult, SweepRow, Trial, TrialList,
};
pub use linalg::{covariance, eig_sym, Matrix, SymmetricEigen};
pub use space::{detect_turning, DeltaSpectrum, TurningConfig, TurningPoint, TurningStrength, VariabilitySpace};
pub use subspace::{modify, modify_batch, modify_with, Direction, Family, ModificationReport, ModifyOptions, SubspaceSpec};
pub use synth::PopulationConfig;

// The guide's code listings run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/variability-space.md")]
    mod variability_space {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/subspaces.md")]
    mod subspaces {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
