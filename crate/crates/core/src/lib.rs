//! Gaze estimation with language-described nuisance separation.
//!
//! The crate trains a gaze regressor whose features are pulled toward a
//! frozen vision-language embedding space, pushed away from text embeddings
//! of gaze-irrelevant factors, and reordered so that feature similarities
//! follow gaze similarities. Encoders are traits; deterministic mock
//! encoders make every workflow runnable offline.

pub mod autograd;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod hash;
pub mod imaging;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod pco;
pub mod rng;
pub mod taxonomy;
pub mod tensor;

pub use encoders::{FeatureBank, MockTextEncoder, MockVisionEncoder, TextEncoder, VisionEncoder};
pub use error::{Error, Result};
pub use geometry::{angular_error_deg, cosine_similarity, yaw_pitch_to_vector, FeatureVector, GazeDirection};
pub use rng::SeededRng;
pub use taxonomy::{FactorGroup, FactorSet, IrrelevantFactor, Polarity};
pub use tensor::Tensor;
