use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

/// Reads a 16-bit PCM mono WAV at 16 kHz, scaling samples by 1/32768.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("mono required (found {} channels)", spec.channels),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::format(
            path,
            format!(
                "sample rate must be {SAMPLE_RATE} Hz (found {})",
                spec.sample_rate
            ),
        ));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            path,
            "unsupported encoding: 16-bit PCM required",
        ));
    }
    let expected = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / PCM_SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    if samples.len() != expected {
        return Err(Error::format(path, "truncated file"));
    }
    Waveform::new(samples).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes 16-bit PCM mono at 16 kHz; samples are clamped to [-1, 1).
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in w.samples() {
        let v = (s * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        // hound reports a short data chunk as an Other-kind error
        hound::Error::IoError(io)
            if io.kind() == std::io::ErrorKind::UnexpectedEof
                || io.to_string().contains("enough bytes") =>
        {
            Error::format(path, "truncated file")
        }
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn zeros_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_raw(&p, 1, 16_000, &vec![0; 16_000]);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.len(), 16_000);
        assert!(w.samples().iter().all(|&s| s == 0.0));

        write_raw(&p, 1, 16_000, &[16384, -32768, 32767]);
        let w = load_wav(&p).unwrap();
        assert_eq!(w.samples()[0], 0.5);
        assert_eq!(w.samples()[1], -1.0);
        assert!(w.samples()[2] < 1.0);
    }

    #[test]
    fn rejects_stereo_and_wrong_rate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, 2, 16_000, &[0, 0, 1, 1]);
        assert!(load_wav(&p)
            .unwrap_err()
            .to_string()
            .contains("mono required"));
        write_raw(&p, 1, 8_000, &[0, 1]);
        assert!(load_wav(&p)
            .unwrap_err()
            .to_string()
            .contains("sample rate"));
    }

    #[test]
    fn rejects_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_raw(&p, 1, 16_000, &vec![100; 1000]);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        let err = load_wav(&p).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let w = Waveform::new(vec![0.25, -0.5, 0.0, 0.125]).unwrap();
        write_wav(&p, &w).unwrap();
        assert_eq!(load_wav(&p).unwrap(), w);
    }
}
