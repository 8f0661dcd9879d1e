//! Kolmogorov-Arnold network layers (AddKAN, MultKAN, LeanKAN) with exact
//! reverse-mode gradients, plus a KAN-ODE training pipeline.
//!
//! Every activation is a sum of Gaussian radial basis functions on a fixed
//! grid over `[-1, 1]` plus a weighted Swish term. Layer inputs are squashed
//! into that range by a per-layer normalizer, so no re-gridding is needed.
//!
//! ```
//! use leankan::{LayerKind, Network, NormalizerKind, Template};
//!
//! let net = Network::from_template(
//!     2,
//!     2,
//!     &Template::LeanSecond { hidden: 5, n_mu: 3 },
//!     4,
//!     NormalizerKind::Tanh,
//!     true,
//!     7,
//! )
//! .unwrap();
//! assert_eq!(net.total_parameters(), 100);
//! let (z, _cache) = net.forward(&[1.0, 1.0]).unwrap();
//! assert_eq!(z.len(), 2);
//! # let _ = LayerKind::Add;
//! ```

pub mod adam;
pub mod basis;
pub mod error;
pub mod gradcheck;
pub mod kanode;
pub mod layer;
pub mod model_io;
pub mod network;
pub mod toy;
pub mod training;

pub use adam::AdamState;
pub use basis::{GridSpec, NormalizerKind};
pub use error::{Error, Result};
pub use kanode::{OdeData, Trajectory};
pub use layer::{Layer, LayerCache, LayerKind, LayerSpec};
pub use network::{NetCache, Network, ParamVector, Template};
pub use training::{Dataset, EpochRecord, LossTrace};
