//! Continual learning with sharpness-aware experience replay.
//!
//! The crate bundles a small dense MLP with exact gradients ([`model`]), a
//! reservoir replay memory ([`replay`]), the step strategies ER, ER-SAM,
//! DER++, DER++-SAM and MGSER-SAM ([`optim`]), task streams for the task-,
//! class- and domain-incremental scenarios ([`scenarios`]), the ACC / Forget
//! metrics ([`metrics`]) and an experiment harness ([`harness`]).
//!
//! ```
//! use mgser::harness::{run_experiment, ExperimentConfig, DatasetSource, SyntheticSpec};
//! use mgser::optim::Method;
//!
//! let cfg = ExperimentConfig {
//!     method: Method::MgserSam,
//!     seeds: vec![0],
//!     hidden: vec![32],
//!     dataset: DatasetSource::Synthetic(SyntheticSpec {
//!         per_class: 40,
//!         test_per_class: 20,
//!         ..SyntheticSpec::default()
//!     }),
//!     ..ExperimentConfig::default()
//! };
//! let report = run_experiment(&cfg).unwrap();
//! assert!(report.acc.mean > 0.0);
//! assert_eq!(report.backward_passes, 2 * report.steps);
//! ```

pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod replay;
pub mod rng;
pub mod scenarios;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Activation, GradVector, LossBreakdown, Model, Objective};
pub use tensor::Tensor2;
