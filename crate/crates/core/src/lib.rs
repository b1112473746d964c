//! Topic-aware keyphrase generation for short social media posts.
//!
//! A neural topic model over bag-of-words input is trained jointly with a
//! copy-enabled sequence-to-sequence generator whose decoder is conditioned
//! on the post's topic mixture.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gru;
pub mod inference;
pub mod kg;
pub mod model;
pub mod ntm;
pub mod optim;
pub mod params;
pub mod stem;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
