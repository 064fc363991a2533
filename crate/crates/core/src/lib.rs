//! Speech-and-language instruction model at desk scale.
//!
//! A frozen speech encoder turns audio into frame embeddings, a modal adaptor
//! maps them to a fixed block of LLM-space embeddings, and the block replaces
//! the `<au_patch>` positions of a templated token sequence before the
//! sequence runs through a causal language model. Training happens in two
//! stages: adaptor only, then adaptor and LLM together.
//!
//! All numerics are generic over [`Float`]; [`SpeechLm32`] and [`SpeechLm64`]
//! are the concrete instantiations.

pub mod adaptor;
pub mod audio;
pub mod checkpoint;
pub mod error;
pub mod lm;
pub mod model;
pub mod params;
pub mod template;
pub mod tokens;
pub mod trainer;

pub use aulm_tensor::{Mat, Scalar};

/// Element type for every model computation.
pub trait Float: Scalar + rustfft::FftNum {}

impl<T: Scalar + rustfft::FftNum> Float for T {}

pub type SpeechLm32 = model::SpeechLm<f32>;
pub type SpeechLm64 = model::SpeechLm<f64>;
pub type Bundle32 = checkpoint::Bundle<f32>;
pub type Bundle64 = checkpoint::Bundle<f64>;
pub type TrainExample32 = trainer::TrainExample<f32>;
