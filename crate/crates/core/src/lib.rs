//! Bifurcation analysis of slow-fast ODE models.

pub mod continuation;
pub mod criterion;
pub mod equilibrium;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod models;
pub mod oscillation;
pub mod studies;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use models::{list_models, ModelConfig, ModelDef, ModelId, ParameterSet};
