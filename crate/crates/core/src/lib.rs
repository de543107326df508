pub mod bodymodel;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod objective;
pub mod pipeline;
pub mod regressor;
pub mod rotations;
pub mod synthdata;
pub mod temporal;

pub use error::{Error, Result};
