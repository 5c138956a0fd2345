pub mod data;
pub mod design;
pub mod cli;
pub mod error;
pub mod glm;
pub mod inference;
pub mod linmod;
pub mod mmm;
pub mod mvt;
pub mod par;
pub mod polyk;
pub mod report;
pub mod special;

pub use error::{Result, TrendError};
