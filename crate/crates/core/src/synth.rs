//! Seeded generator of listener-rated synthetic corpora.
//!
//! Each utterance has a latent quality `q` in [0, 1]. Its frames are
//! `(4q - 2) a + P_z + n_s + noise`, where `a` is a unit "quality direction",
//! `P_z` is one of a few patterns visited by a Markov chain that is more
//! erratic for low-quality utterances, and `n_s` is a per-system offset.
//! Patterns and offsets are orthogonal to `a`, so the true MOS
//! `3 + a . mean_pool(frames)` is exactly linear in the pooled features.
//! Listener ratings add a per-listener bias and per-rating noise, then are
//! clipped and rounded to 1..5.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{MosDataset, RatingRecord, MAX_SCORE, MIN_SCORE};
use crate::error::{Error, Result};
use crate::features::{cache_path, mean_pool, write_feature_file, FrameFeatures};
use crate::io::write_json;
use crate::unsupervised::{write_posteriors, ConfidenceRecord};

const N_PATTERNS: usize = 8;
const MIN_FRAMES: usize = 40;
const MAX_FRAMES: usize = 60;
const FRAME_NOISE_STD: f64 = 0.3;
const SYSTEM_OFFSET_STD: f64 = 0.15;
const QUALITY_JITTER_STD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_systems: usize,
    pub utterances_per_system: usize,
    pub n_listeners: usize,
    pub listener_bias_std: f64,
    pub noise_std: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_systems: 5,
            utterances_per_system: 20,
            n_listeners: 8,
            listener_bias_std: 0.5,
            noise_std: 0.3,
            feature_dim: 80,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_systems == 0 || self.utterances_per_system == 0 || self.n_listeners == 0 {
            return Err(Error::invalid("synthetic corpus counts must be at least 1"));
        }
        if self.feature_dim < 2 {
            return Err(Error::invalid("feature_dim must be at least 2"));
        }
        for (name, v) in [
            ("listener_bias_std", self.listener_bias_std),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be a finite value >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceTruth {
    pub utterance_id: String,
    pub system_id: String,
    pub quality: f64,
    pub true_mos: f64,
}

/// Ground-truth sidecar written next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub quality_direction: Vec<f64>,
    pub listener_bias: BTreeMap<String, f64>,
    pub utterances: Vec<UtteranceTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: MosDataset,
    /// Frame features in dataset utterance order.
    pub frames: Vec<FrameFeatures>,
    pub truth: SynthTruth,
    /// Simulated recognizer token log-probabilities, more confident for
    /// higher-quality utterances.
    pub posteriors: Vec<ConfidenceRecord>,
}

fn gaussian(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std is finite and non-negative")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Removes the component of `v` along the unit vector `a`.
fn orthogonalize(v: &mut [f64], a: &[f64]) {
    let p = dot(v, a);
    for (x, ai) in v.iter_mut().zip(a) {
        *x -= p * ai;
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    let n = gaussian(std);
    (0..dim).map(|_| n.sample(rng)).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.feature_dim;

    let mut a = random_vector(&mut rng, dim, 1.0);
    let norm = dot(&a, &a).sqrt();
    a.iter_mut().for_each(|x| *x /= norm);

    let patterns: Vec<Vec<f64>> = (0..N_PATTERNS)
        .map(|_| {
            let mut p = random_vector(&mut rng, dim, 1.0);
            orthogonalize(&mut p, &a);
            p
        })
        .collect();

    // system mean qualities evenly spread over [0.2, 0.8], assigned in random order
    let mut levels: Vec<f64> = (0..spec.n_systems)
        .map(|s| {
            if spec.n_systems == 1 {
                0.5
            } else {
                0.2 + 0.6 * s as f64 / (spec.n_systems - 1) as f64
            }
        })
        .collect();
    for i in (1..levels.len()).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    let offsets: Vec<Vec<f64>> = (0..spec.n_systems)
        .map(|_| {
            let mut o = random_vector(&mut rng, dim, SYSTEM_OFFSET_STD);
            orthogonalize(&mut o, &a);
            o
        })
        .collect();

    let listener_ids: Vec<String> = (0..spec.n_listeners)
        .map(|l| format!("lis{l:03}"))
        .collect();
    let bias_dist = gaussian(spec.listener_bias_std);
    let biases: Vec<f64> = listener_ids
        .iter()
        .map(|_| bias_dist.sample(&mut rng))
        .collect();

    let frame_noise = gaussian(FRAME_NOISE_STD);
    let jitter = gaussian(QUALITY_JITTER_STD);
    let rating_noise = gaussian(spec.noise_std);

    let mut records = Vec::new();
    let mut frames = Vec::new();
    let mut truths = Vec::new();
    let mut posteriors = Vec::new();
    for (s, (&level, offset)) in levels.iter().zip(&offsets).enumerate() {
        let system_id = format!("sys{s:02}");
        for u in 0..spec.utterances_per_system {
            let utterance_id = format!("{system_id}_utt{u:03}");
            let q = (level + jitter.sample(&mut rng)).clamp(0.0, 1.0);
            let corruption = 0.05 + 0.9 * (1.0 - q);
            let n_frames = rng.random_range(MIN_FRAMES..=MAX_FRAMES);
            let mut z = rng.random_range(0..N_PATTERNS);
            let mut rows = Vec::with_capacity(n_frames);
            for _ in 0..n_frames {
                let row: Vec<f64> = (0..dim)
                    .map(|d| {
                        let x = (4.0 * q - 2.0) * a[d]
                            + patterns[z][d]
                            + offset[d]
                            + frame_noise.sample(&mut rng);
                        // stored as f32 in the cache; keep the truth consistent with what is read back
                        f64::from(x as f32)
                    })
                    .collect();
                rows.push(row);
                z = if rng.random_bool(corruption) {
                    rng.random_range(0..N_PATTERNS)
                } else {
                    (z + 1) % N_PATTERNS
                };
            }
            let f = FrameFeatures::from_rows(&rows)?;
            let true_mos = 3.0 + dot(&a, &mean_pool(&f).0);

            for (lid, bias) in listener_ids.iter().zip(&biases) {
                let raw = true_mos + bias + rating_noise.sample(&mut rng);
                let score = raw
                    .clamp(f64::from(MIN_SCORE), f64::from(MAX_SCORE))
                    .round() as u8;
                records.push(RatingRecord {
                    utterance_id: utterance_id.clone(),
                    system_id: system_id.clone(),
                    listener_id: lid.clone(),
                    score,
                    audio_path: PathBuf::from(format!("wav/{utterance_id}.wav")),
                });
            }

            let n_tokens = rng.random_range(8..=15);
            let spread = 0.05 + 0.6 * (1.0 - q);
            let unit = gaussian(1.0);
            let logprobs = (0..n_tokens)
                .map(|_| -(unit.sample(&mut rng) as f64).abs() * spread)
                .collect();
            posteriors.push(ConfidenceRecord::new(utterance_id.clone(), logprobs)?);

            truths.push(UtteranceTruth {
                utterance_id,
                system_id: system_id.clone(),
                quality: q,
                true_mos,
            });
            frames.push(f);
        }
    }

    Ok(SynthCorpus {
        dataset: MosDataset::from_records(records)?,
        frames,
        truth: SynthTruth {
            spec: *spec,
            quality_direction: a,
            listener_bias: listener_ids.into_iter().zip(biases).collect(),
            utterances: truths,
        },
        posteriors,
    })
}

/// File names inside a corpus directory.
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const FEATURES_DIR: &str = "features";
pub const TRUTH_FILE: &str = "truth.json";
pub const POSTERIORS_FILE: &str = "posteriors.txt";

/// Writes the manifest, feature cache, ground truth and posteriors under `dir`.
pub fn write_corpus(dir: &Path, c: &SynthCorpus) -> Result<()> {
    c.dataset.write_manifest(&dir.join(MANIFEST_FILE))?;
    let feat_dir = dir.join(FEATURES_DIR);
    for (u, f) in c.dataset.utterances().iter().zip(&c.frames) {
        write_feature_file(&cache_path(&feat_dir, &u.utterance_id), f)?;
    }
    write_json(&dir.join(TRUTH_FILE), &c.truth)?;
    write_posteriors(&dir.join(POSTERIORS_FILE), &c.posteriors)
}
