pub mod autodiff;
pub mod branch;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod metrics;
pub mod nn;
pub mod operator;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod train;
pub mod trunk;

pub use error::{Result, StoneError};
