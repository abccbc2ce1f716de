//! Binary feature cache, one file per utterance:
//!
//! ```text
//! "MOSF" | 0x01 | T: u32 LE | F: u32 LE | T*F f32 LE (row-major) | CRC32(f32 payload): u32 LE
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{load_wav, logmel, mean_pool, normalize_level, FrameFeatures, UtteranceVector};
use crate::dataset::MosDataset;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CACHE_MAGIC: &[u8; 4] = b"MOSF";
pub const CACHE_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 4 + 4;

pub fn cache_path(dir: &Path, utterance_id: &str) -> PathBuf {
    dir.join(format!("{utterance_id}.fea"))
}

pub fn encode_features(f: &FrameFeatures) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + f.as_slice().len() * 4 + 4);
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.extend_from_slice(&(f.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    for &v in f.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<FrameFeatures> {
    if bytes.len() < HEADER_LEN + 4 || &bytes[..4] != CACHE_MAGIC {
        return Err(Error::format(path, "not a feature cache file"));
    }
    if bytes[4] != CACHE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported cache version {}", bytes[4]),
        ));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (t, f) = (word(5), word(9));
    let payload_len = t
        .checked_mul(f)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "header overflow"))?;
    if bytes.len() != HEADER_LEN + payload_len + 4 {
        return Err(Error::format(
            path,
            format!("size mismatch for {t}x{f} features"),
        ));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = word(HEADER_LEN + payload_len) as u32;
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    FrameFeatures::new(t, f, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_feature_file(path: &Path, f: &FrameFeatures) -> Result<()> {
    write_atomic(path, &encode_features(f))
}

pub fn read_feature_file(path: &Path) -> Result<FrameFeatures> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(path, &bytes)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheReport {
    pub written: usize,
    pub skipped: usize,
}

fn is_up_to_date(audio: &Path, cached: &Path) -> bool {
    let mtime = |p: &Path| fs::metadata(p).and_then(|m| m.modified()).ok();
    match (mtime(audio), mtime(cached)) {
        (Some(a), Some(c)) => c >= a,
        _ => false,
    }
}

/// Extracts level-normalized log-mel features for every utterance into
/// `out_dir`. Entries whose cache file is newer than the audio are skipped.
/// Relative audio paths resolve against `audio_root`.
pub fn cache_features(
    dataset: &MosDataset,
    audio_root: &Path,
    out_dir: &Path,
    target_rms_db: f64,
    jobs: usize,
) -> Result<CacheReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let work = |u: &crate::dataset::Utterance| -> Result<bool> {
        let audio = audio_root.join(&u.audio_path);
        let target = cache_path(out_dir, &u.utterance_id);
        if is_up_to_date(&audio, &target) {
            return Ok(false);
        }
        let wav = load_wav(&audio)?;
        let leveled = normalize_level(&wav, target_rms_db)
            .map_err(|e| Error::format(&audio, e.to_string()))?;
        let frames = logmel(&leveled.waveform).map_err(|e| Error::format(&audio, e.to_string()))?;
        write_feature_file(&target, &frames)?;
        Ok(true)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let results: Vec<Result<bool>> =
        pool.install(|| dataset.utterances().par_iter().map(work).collect());
    let mut report = CacheReport::default();
    for r in results {
        if r? {
            report.written += 1;
        } else {
            report.skipped += 1;
        }
    }
    Ok(report)
}

/// Read access to a directory of cached frame features.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    dir: PathBuf,
}

impl FeatureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn frames(&self, utterance_id: &str) -> Result<FrameFeatures> {
        let path = cache_path(&self.dir, utterance_id);
        if !path.exists() {
            return Err(Error::format(
                path,
                format!("feature cache miss for `{utterance_id}`"),
            ));
        }
        read_feature_file(&path)
    }

    /// Mean-pooled vectors for every utterance of `dataset`, in dataset order.
    pub fn pooled(&self, dataset: &MosDataset) -> Result<Vec<UtteranceVector>> {
        dataset
            .utterances()
            .iter()
            .map(|u| self.frames(&u.utterance_id).map(|f| mean_pool(&f)))
            .collect()
    }
}
