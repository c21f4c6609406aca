//! Graph-structured referring-expression reasoning.
//!
//! An image is modelled as a semantic graph over its objects ([`semgraph`]),
//! an expression as a language scene graph ([`langgraph`]). The modular
//! network in [`model`] walks the language graph leaf-to-referent, attending
//! over image nodes and edges. [`refgen`] generates balanced synthetic
//! expression datasets over annotated scenes, and [`harness`] trains and
//! evaluates the model on them.

pub mod error;
pub mod harness;
pub mod langgraph;
pub mod model;
pub mod numkernel;
pub mod refgen;
pub mod semgraph;

pub use error::{Error, Result};
