//! Constrained proxies learning for ordinal classification.
//!
//! Each class is represented by a proxy in embedding space. Hard layouts
//! generate the proxies from one or two vectors so they are collinear or on a
//! half circle; the soft layout learns them freely and adds a loss that keeps
//! every proxy-to-proxies distribution unimodal.

pub mod config;
pub mod data;
pub mod distributions;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod training;
pub mod viz;

pub use error::{CplError, Result};
