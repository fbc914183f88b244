//! Mapping networks, the frozen toy generator, and checkpoints.

mod checkpoint;
mod generator;
mod mapping;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use generator::{
    ToyGenerator, DEFAULT_GENERATOR_SEED, DEFAULT_RESOLUTION, GEOMETRY_CODES, PROJECTION_GAIN, TEXTURE_CODES,
};
pub use mapping::{
    interpolate, map, Branch, Dense, LatentCode, LatentNoise, MappingConfig, MappingGrads,
    MappingNetwork, MappingTrace, ADAPTER_DEPTH, HIDDEN_WIDTH, LATENT_DIM, LEAKY_SLOPE,
    TRUNK_DEPTH,
};
