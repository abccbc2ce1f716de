use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FrameFeatures, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// 25 ms at 16 kHz.
pub const FRAME_LEN: usize = 400;
/// 10 ms at 16 kHz.
pub const FRAME_HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const N_MELS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-10;
const F_MAX: f64 = 8000.0;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `FFT_SIZE / 2 + 1` magnitude bins, returned
/// as `(center_hz, weights)` per filter. Edges are equally spaced on the
/// mel scale between 0 Hz and 8 kHz.
pub fn mel_filterbank() -> Vec<(f64, Vec<f64>)> {
    let n_bins = FFT_SIZE / 2 + 1;
    let mel_max = hz_to_mel(F_MAX);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64))
        .collect();
    (0..N_MELS)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let weights = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * f64::from(SAMPLE_RATE) / FFT_SIZE as f64;
                    if f >= lo && f <= center {
                        (f - lo) / (center - lo)
                    } else if f > center && f <= hi {
                        (hi - f) / (hi - center)
                    } else {
                        0.0
                    }
                })
                .collect();
            (center, weights)
        })
        .collect()
}

fn hann_window() -> Vec<f64> {
    (0..FRAME_LEN)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME_LEN as f64).cos())
        .collect()
}

/// Frame-level natural-log mel energies of the magnitude spectrum.
///
/// Frames are `FRAME_LEN` samples with a periodic Hann window, hop
/// `FRAME_HOP`, zero-padded to `FFT_SIZE`. There is no pre-emphasis and no
/// padding at the signal edges, so `T = 1 + (len - 400) / 160`.
pub fn logmel(w: &Waveform) -> Result<FrameFeatures> {
    let samples = w.samples();
    if samples.len() < FRAME_LEN {
        return Err(Error::invalid(format!(
            "waveform of {} samples is shorter than one frame ({FRAME_LEN})",
            samples.len()
        )));
    }
    let n_frames = 1 + (samples.len() - FRAME_LEN) / FRAME_HOP;
    let window = hann_window();
    let bank = mel_filterbank();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut magnitude = vec![0.0; FFT_SIZE / 2 + 1];
    let mut data = Vec::with_capacity(n_frames * N_MELS);

    for t in 0..n_frames {
        let frame = &samples[t * FRAME_HOP..t * FRAME_HOP + FRAME_LEN];
        for (slot, (x, h)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *slot = Complex::new(x * h, 0.0);
        }
        buf[FRAME_LEN..].fill(Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        for (m, c) in magnitude.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        for (_, weights) in &bank {
            let energy: f64 = weights.iter().zip(&magnitude).map(|(w, m)| w * m).sum();
            data.push(energy.max(LOG_FLOOR).ln());
        }
    }
    FrameFeatures::new(n_frames, N_MELS, data)
}
