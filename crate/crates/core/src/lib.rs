pub mod b64;
pub mod checker;
pub mod client;
pub mod cost;
pub mod error;
pub mod functions;
pub mod fuzz;
pub mod model;
pub mod queue;
pub mod sim;
pub mod storage;
pub mod sync;

pub use error::{Error, Result};
