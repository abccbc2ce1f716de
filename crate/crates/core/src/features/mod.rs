//! Audio front end: WAV ingestion, level normalization, log-mel frames,
//! mean pooling and the binary feature cache.
//!
//! Log-mel frames stand in for the frame-level output of a self-supervised
//! speech encoder; the trainable part of the encoder lives in the predictor's
//! linear adapter.

mod cache;
mod level;
mod logmel;
mod wav;

pub use cache::{
    cache_features, cache_path, decode_features, encode_features, read_feature_file,
    write_feature_file, CacheReport, FeatureStore, CACHE_MAGIC, CACHE_VERSION,
};
pub use level::{normalize_level, rms_db, LevelNormalized, DEFAULT_TARGET_RMS_DB};
pub use logmel::{
    hz_to_mel, logmel, mel_filterbank, mel_to_hz, FFT_SIZE, FRAME_HOP, FRAME_LEN, LOG_FLOOR, N_MELS,
};
pub use wav::{load_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform has no samples"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("waveform has non-finite samples"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A T x F frame matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    n_frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FrameFeatures {
    pub fn new(n_frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n_frames == 0 || dim == 0 {
            return Err(Error::invalid(
                "feature matrix must have at least one frame and one bin",
            ));
        }
        if data.len() != n_frames * dim {
            return Err(Error::Shape {
                expected: n_frames * dim,
                got: data.len(),
            });
        }
        Ok(Self {
            n_frames,
            dim,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            crate::error::check_len(dim, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UtteranceVector(pub Vec<f64>);

impl UtteranceVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Column-wise mean over frames.
pub fn mean_pool(f: &FrameFeatures) -> UtteranceVector {
    let mut acc = vec![0.0; f.dim];
    for row in f.rows() {
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
    }
    let n = f.n_frames as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    UtteranceVector(acc)
}
