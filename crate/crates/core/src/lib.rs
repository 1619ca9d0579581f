//! Multimodal, fully automatic registration of histology-style image pairs.
//!
//! The pipeline mirrors a five-step procedure: preprocessing, robust initial
//! similarity alignment with automatic failure detection, four concurrent
//! nonrigid refinement engines (missing-data-aware local affine, intensity
//! Demons, MIND Demons, thin plate spline interpolation of feature matches),
//! automatic selection of the best candidate by masked MIND SSD, and
//! landmark-based evaluation.
//!
//! Entry points:
//! - [`pipeline::run_pair`] / [`pipeline::run_batch`] for end-to-end runs;
//! - the individual modules ([`preprocess`], [`initial_align`], [`nonrigid`],
//!   [`decision`], [`evaluation`]) for direct use of each stage.

pub mod decision;
pub mod error;
pub mod evaluation;
pub mod imgcore;
pub mod initial_align;
pub mod nonrigid;
pub mod pipeline;
pub mod preprocess;
pub mod synth;

pub use decision::{select_best, MethodKind, RegistrationResult};
pub use error::{RegError, Result};
pub use imgcore::{Affine2D, BinaryMask, DisplacementField, Image, Interp};
pub use initial_align::{InitialAlignmentResult, Keypoint, MatchSet};
pub use nonrigid::{DemonsParams, LocalAffineParams, TpsModel};
pub use pipeline::{PairRecord, PipelineConfig};
pub use preprocess::{PreprocessedPair, ResolutionPolicy};
