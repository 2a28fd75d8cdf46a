//! Desk-scale simulator of Vertical Federated Learning with model splitting.
//!
//! The crate wires four pieces together:
//!
//! - [`nn`]: a small dense-network engine with exact gradients,
//! - [`vfl`]: the split-training protocol (participants hold feature shards
//!   and bottom models, the server holds labels and the top model),
//! - [`adversary`]: a clean-label backdoor attacker that infers labels from
//!   auxiliary data, places a trigger by saliency, and learns bounded poison
//!   noise by projected gradient descent,
//! - [`defense`]: server-side countermeasures (Gaussian noise on embeddings
//!   and per-class isolation-forest filtering),
//!
//! driven by a config-based experiment [`harness`] with a CLI.
//!
//! ```
//! use rand::SeedableRng;
//! use vflsim::nn::{DenseNet, Matrix};
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let net = DenseNet::new(&[4, 16, 3], &mut rng).unwrap();
//! let batch = Matrix::zeros(2, 4);
//! let trace = net.forward(&batch).unwrap();
//! assert_eq!(trace.output().cols(), 3);
//! ```

pub mod adversary;
pub mod data;
pub mod defense;
mod error;
pub mod harness;
pub mod nn;
pub mod vfl;

pub use error::{Error, Result};
