//! Bottleneck-feature speaker verification: MFCC front end, training targets,
//! a small neural-network engine with a family of training objectives,
//! GMM-UBM and i-vector/PLDA back ends, and evaluation metrics.

pub mod binio;
pub mod bottleneck;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod gmm;
pub mod ivector;
pub mod losses;
pub mod net;
pub mod pipeline;
pub mod targets;

pub use error::{Error, Result};
