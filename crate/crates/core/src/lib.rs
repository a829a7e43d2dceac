//! Exact outcome statistics and CHSH optimization for Bell tests fed by a
//! multimode spontaneous-parametric-down-conversion source and measured with
//! lossy, dark-count-prone threshold detectors.
//!
//! The layers build on each other:
//!
//! * [`model`]: source, detector and analyser parameters, the coupling matrix
//!   and its 2×2 singular value decomposition;
//! * [`probabilities`]: closed-form no-click probabilities for every subset
//!   of the four detectors (finite mode count and Poisson limit);
//! * [`distribution`]: click-pattern distributions by Möbius inversion,
//!   outcome binnings, CHSH and CH values;
//! * [`optimizer`]: multi-start simplex search over source, settings, mode
//!   count and binning, efficiency curves and the critical efficiency;
//! * [`oracle`]: an independent truncated-Fock-space evaluation used to
//!   verify the closed forms;
//! * [`cli`]: the `spdc-chsh` command-line front end and its file formats.

pub mod cli;
pub mod distribution;
pub mod error;
pub mod model;
pub mod nelder_mead;
pub mod optimizer;
pub mod oracle;
pub mod probabilities;
pub mod verify;

pub use distribution::{BinningStrategy, ChshResult, ClickPattern, JointDistribution};
pub use error::{ModelError, Result};
pub use model::{DetectorParams, ExperimentConfig, MeasurementSetting, SourceParams, ValidatedConfig};
pub use optimizer::{ModePolicy, OptimizationProblem, OptimizationResult};
pub use probabilities::{Detector, DetectorSubset, NoClickTable};
