pub mod config;
pub mod error;
pub mod eval;
pub mod geom;
pub mod imgio;
pub mod matching;
pub mod mintree;
pub mod pipeline;
pub mod skeleton;
pub mod synth;
pub mod tracker;
pub mod vesselmap;

pub use error::{Error, Result};
