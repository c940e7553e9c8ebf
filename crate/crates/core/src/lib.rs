//! Effective span dimension (ESD) toolkit.
//!
//! The crate computes the ESD and span profile of a signal with respect to a
//! spectrum, evaluates spectral estimators in the sequence model, simulates
//! over-parameterized gradient flow that learns the spectrum, and reduces
//! linear regression, RKHS regression and deep linear networks to the
//! sequence model so that the same quantities can be tracked there.

pub mod deepnet;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod linreg;
pub mod opgf;
pub mod rkhs;
pub mod rng;
pub mod seqcore;
pub mod stats;

pub use error::{Error, Result};
pub use seqcore::{
    esd, sort_spectrum, span_profile, tradeoff_h, SeqInstance, SignalVector, SortedSpectrum,
};
