pub mod analysis;
pub mod codec;
pub mod corpus_io;
pub mod error;
pub mod event;
pub mod kb;
pub mod metrics;
pub mod model;
pub mod synth;
