pub mod cli;
pub mod container;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod geo_graph;
pub mod layers;
pub mod model;
pub mod numcore;
pub mod ode;
pub mod physics;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
