pub mod augment;
pub mod cod;
pub mod compressor;
pub mod config;
pub mod corpus;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod features;
pub mod fusion;
pub mod harness;
pub mod llm;
pub mod model;
pub mod nn;
pub mod synth;

pub use error::{Error, Result};
