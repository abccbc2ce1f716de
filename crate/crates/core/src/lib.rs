//! Mean opinion score prediction toolkit.
//!
//! The crate covers the full scoring pipeline for synthesized or enhanced
//! speech:
//!
//! * [`dataset`]: listener-rated MOS manifests, validation and splitting.
//! * [`features`]: WAV ingestion, level normalization, log-mel frames and the
//!   on-disk feature cache.
//! * [`predictor`]: the SSL-MOS style regressor and its listener-enhanced
//!   multi-task variant, trained with plain SGD and early stopping.
//! * [`unsupervised`]: k-means unit quantization, the n-gram unit language
//!   model behind SpeechLMScore, and ASR-confidence scoring.
//! * [`fusion`]: top-Q subsystem selection and the bias-free linear fuser.
//! * [`scores`]: per-utterance score files shared by every subsystem.
//! * [`metrics`]: MSE, LCC, SRCC and Kendall tau-b at utterance and system
//!   level.
//! * [`synth`]: a seeded generator of listener-rated synthetic corpora.

pub mod dataset;
pub mod error;
pub mod features;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod predictor;
pub mod scores;
pub mod synth;
pub mod training;
pub mod unsupervised;

pub use dataset::{Listener, MosDataset, OpinionScore, Utterance};
pub use error::{Error, Result};
pub use features::{FrameFeatures, UtteranceVector, Waveform};
pub use fusion::{FusionModel, SubsystemScores};
pub use metrics::EvalReport;
pub use predictor::{PredictorModel, TrainingConfig, TrainingMode};
pub use unsupervised::{KMeansQuantizer, UnitLm, UnitSequence};
