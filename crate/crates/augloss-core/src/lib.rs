//! Robust-loss training with consistency-regularized data augmentation.
//!
//! The crate bundles everything needed to study how tunable robust loss
//! families interact with AugMix-style augmentation when train labels are
//! noisy and test features are corrupted:
//!
//! - [`loss`]: CE, focal, NCE+RCE and alpha loss families, the
//!   Jensen-Shannon consistency regularizer, the combined training
//!   objective, and analytic logit gradients for all of them.
//! - [`noise`]: label-flip transition matrices (symmetric, asymmetric
//!   CIFAR-10, superclass), noisy-label sampling, and empirical
//!   transition estimation.
//! - [`augment`]: the stochastic chain-and-mix augmenter producing
//!   `(orig, aug1, aug2)` tuples.
//! - [`corrupt`]: a registry of test-time feature corruptions with five
//!   severity levels, used to build corrupted test suites.
//! - [`model`] / [`train`]: a small MLP classifier with SGD + Nesterov
//!   momentum, cosine-annealed learning rate, and deterministic seeded
//!   training on augmented tuples.
//! - [`eval`]: clean error, per-corruption errors, mCE, multi-seed
//!   aggregation, and hyperparameter grid search.
//! - [`data`]: CIFAR-10 binary loading plus a self-contained synthetic
//!   glyph dataset for offline experiments.
//!
//! Every operation is deterministic given its seed; training runs are
//! bitwise reproducible in a single-threaded run.

pub mod augment;
pub mod corrupt;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod loss;
pub mod model;
pub mod noise;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use image::ImageTensor;
pub use loss::{LossFamily, LossSpec, Posterior, PosteriorTuple};
pub use noise::{LabelSet, SuperclassPartition, TransitionMatrix};
