//! Multi-order state-space pooling for multiple-instance learning on
//! whole-slide feature bags.
//!
//! A bag of instance features is projected, padded to a perfect-square
//! length, and read in several orders (original, flipped, grid-transposed).
//! Each order runs through a stack of selective state-space blocks whose
//! scan has three interchangeable evaluations ([`ssd`]). Branch outputs are
//! realigned, fused, pooled by a tanh-gated softmax selection, and
//! classified ([`model`]). Gradients are hand-written and checked against
//! finite differences ([`training`]).
//!
//! ```
//! use mamba2mil::data::FeatureBag;
//! use mamba2mil::model::{predict_proba, ModelConfig, ModelParams};
//! use mamba2mil::numerics::Matrix;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
//! let cfg = ModelConfig::tiny();
//! let params = ModelParams::init(&cfg, &mut rng).unwrap();
//! let bag = FeatureBag::new("slide-1", 0, Matrix::random_uniform(7, cfg.input_dim, 1.0, &mut rng));
//! let probs = predict_proba(&bag, &params, &cfg).unwrap();
//! assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! ```

// `!(x < tol)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod seq_transform;
pub mod ssd;
pub mod training;

pub use error::{Error, Result};
