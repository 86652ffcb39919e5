//! Minimax noise-transfer-function design for delta-sigma modulators.

pub mod error;
pub mod lmi;
pub mod sdp;
pub mod lti;
pub mod ntf;
pub mod stability;
pub mod sim;
pub mod metrics;
pub mod io;

pub use error::{Error, Result};
