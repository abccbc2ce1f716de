use super::Waveform;
use crate::error::{Error, Result};

pub const DEFAULT_TARGET_RMS_DB: f64 = -26.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelNormalized {
    pub waveform: Waveform,
    /// Samples that were hard-clipped to [-1, 1] after applying the gain.
    pub clipped: usize,
    pub gain: f64,
}

/// RMS level in dB full scale, `20 log10(rms)`.
pub fn rms_db(samples: &[f64]) -> f64 {
    let ms = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    10.0 * ms.log10()
}

/// Scales `w` so its RMS level equals `target_rms_db`, then hard-clips.
pub fn normalize_level(w: &Waveform, target_rms_db: f64) -> Result<LevelNormalized> {
    let ms = w.samples().iter().map(|s| s * s).sum::<f64>() / w.len() as f64;
    if ms == 0.0 {
        return Err(Error::invalid("cannot normalize silence"));
    }
    let gain = 10f64.powf(target_rms_db / 20.0) / ms.sqrt();
    let mut clipped = 0;
    let samples = w
        .samples()
        .iter()
        .map(|&s| {
            let v = s * gain;
            if v.abs() > 1.0 {
                clipped += 1;
                v.clamp(-1.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    Ok(LevelNormalized {
        waveform: Waveform::new(samples)?,
        clipped,
        gain,
    })
}
