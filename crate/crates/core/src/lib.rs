//! Privacy-preserving location obfuscation, trained adversarially.
//!
//! The crate treats location privacy as a game between two players: a noise
//! *generator* that perturbs a user's true location, and an identity
//! *classifier* that tries to re-identify the user from the perturbed report.
//! Training the generator to minimize the mutual information between user
//! identity and the classifier's output, subject to an expected-distortion
//! budget, produces mechanisms that degrade a strong adversary's accuracy
//! toward chance while staying useful.
//!
//! Module map:
//! - [`model`]: probability tables, datasets, regions, joints and posteriors.
//! - [`info`]: entropy, mutual information, cross entropy, batch estimators
//!   with analytic gradients.
//! - [`mechanisms`]: planar Laplace noise and tabular channels.
//! - [`neural`]: a small feed-forward network core (Glorot init, backprop,
//!   Adam) with finite-difference gradient checking.
//! - [`adversarial`]: the alternating training loop with classifier resets.
//! - [`evaluation`]: grid-based Bayes-error estimation, accuracy/F1,
//!   empirical distortion.
//! - [`oracle`]: exact optima on tiny instances, for calibration and demos.
//! - [`data`]: synthetic cluster data and check-in file ingestion.
//! - [`seeds`]: deterministic fan-out of a master seed into named streams.

pub mod adversarial;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod info;
pub mod mechanisms;
pub mod model;
pub mod neural;
pub mod oracle;
pub mod seeds;

pub use error::{Error, Result};
