pub mod assets;
pub mod baselines;
pub mod collision;
pub mod encoding;
pub mod error;
pub mod fea;
pub mod graph;
pub mod io;
pub mod learner;
pub mod planner;
pub mod prior;
pub mod qnet;
pub mod report;
pub mod rewards;

pub use error::{Error, Result};
