//! Photoreceptor-layer segmentation with Monte-Carlo dropout uncertainty.
//!
//! The crate is organised bottom-up:
//!
//! * [`engine`]: tensors, differentiable ops with hand-written backward
//!   passes, Adam.
//! * [`model`]: U-Net, U2-Net and BU-Net built from the engine.
//! * [`bayes`]: Monte-Carlo dropout inference and uncertainty maps.
//! * [`postprocess`]: Otsu binarisation and A-scan disruption scores.
//! * [`metrics`]: Dice, precision/recall AUC, regression, evaluation reports.
//! * [`data`]: synthetic OCT-like volumes, splits and file formats.
//! * [`train`]: the training loop with plateau learning-rate schedule.
//! * [`cli`]: the `uncertseg` command line.

pub mod bayes;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngState;
