//! Training-free multi-class anomaly detection by retrieval over a memory
//! bank of patch embeddings.

pub mod anomaly_map;
pub mod error;
pub mod feature_io;
pub mod memory_bank;
pub mod metrics;
pub mod retrieval;
pub mod theory;

pub use error::{Error, Result};
