//! Persistence and data: bit-exact tensor/checkpoint containers, netpbm image
//! codecs, dataset loading, and the seeded synthetic scene generator.

pub mod checkpoint;
pub mod dataset;
pub mod pnm;
pub mod synth;
pub mod tensorfile;
