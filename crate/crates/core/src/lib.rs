//! Language-free text-to-shape training at desk scale.
//!
//! Pseudo captions are built by retrieving nouns and adjectives for each
//! object's rendered views in a joint text-image embedding space; those
//! captions then condition a pair of mapping networks that drive a frozen
//! generator, trained with an image-text similarity loss plus an
//! image-image regularizer over randomized backgrounds.

pub mod augment;
pub mod captions;
pub mod dataset;
pub mod digest;
pub mod embedding;
pub mod error;
pub mod fixture;
pub mod metrics;
pub mod model;
pub mod numfmt;
pub mod raster;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
