//! Harmonic Gaussian-process priors for polyphonic pitch detection.
//!
//! Each pitch is described by a Matérn spectral mixture (MSM) kernel, a sum of
//! exponentially damped cosines whose spectral density is a mixture of
//! Lorentzian pairs. Kernels are learnt from isolated notes by greedily fitting
//! Lorentzians to the magnitude spectrum ([`spectral_fit`]). A polyphonic
//! recording is then explained as a sum of sources, each the product of an
//! activation envelope and a quasi-periodic component process, and the
//! activations are inferred with sparse variational inference ([`vgp`],
//! [`models`]). The per-pitch activation curves are thresholded into a
//! piano-roll ([`pipeline`]).
//!
//! ```text
//! isolated notes -> magnitude FT -> Lorentzian fit -> MSM kernels
//! mixture audio  -> windowed variational fit -> activations -> piano-roll
//! ```

// `!(x > 0.0)` deliberately rejects NaN alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod error;
pub mod fixtures;
pub mod kernels;
pub(crate) mod linalg;
pub mod models;
pub mod pipeline;
pub mod quadrature;
pub mod spectral_fit;
pub mod vgp;

pub use audio::{AudioClip, GroundTruthRoll};
pub use error::{Error, Result};
pub use kernels::{GramMatrix, KernelFile, LorentzianComponent, MsmKernel};
pub use models::{ModelKind, ModelSpec, SourceDecomposition};
pub use pipeline::{EvalResult, LearningMode, PianoRoll, TranscribeConfig, TranscriptionMode};
pub use quadrature::GaussHermiteRule;
pub use spectral_fit::{FitReport, MagnitudeSpectrum};
pub use vgp::{ElboBreakdown, InducingSet, MarginalMoments, VariationalGaussian, VariationalState};
