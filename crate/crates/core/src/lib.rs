//! Disentangled liveness representation learning for domain-generalized face
//! anti-spoofing.
//!
//! Three encoders share a convolutional stem. The liveness encoder feeds a
//! cosine-prototype classifier, the content encoder a transposed-convolution
//! decoder and the domain encoder a small domain classifier. Confusion losses
//! push each auxiliary feature away from the classifiers it should not
//! inform. Only the liveness encoder and classifier are used for scoring.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
