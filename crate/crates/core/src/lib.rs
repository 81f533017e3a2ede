pub mod benchrel;
pub mod biomet;
pub mod cli;
pub mod embs;
pub mod embset;
pub mod error;
pub mod leakage;
pub mod pairsample;
pub mod report;
pub mod rng;
pub mod sections;
pub mod simkern;
pub mod verify;

pub use embset::{EmbeddingSet, SampleMeta};
pub use error::{Error, Result};
