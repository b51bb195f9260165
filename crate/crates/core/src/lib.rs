pub mod brr;
pub mod config;
pub mod error;
pub mod export;
pub mod perplexity;
pub mod policy;
pub mod psd;
pub mod reward;
pub mod simulator;
pub mod stats;

pub use error::{DipoError, Result};
