pub mod attribution;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod report;
pub mod tensor;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};
