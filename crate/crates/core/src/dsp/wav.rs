use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::{Waveform, SUPPORTED_RATES};
use crate::error::{invalid, CoreError, Result};

const FULL_SCALE: f64 = 32768.0;

/// Reads a mono 16-bit PCM file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| CoreError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return invalid(
            "read_wav",
            format!("{}: expected mono 16-bit PCM, found {spec:?}", path.display()),
        );
    }
    if !SUPPORTED_RATES.contains(&spec.sample_rate) {
        return invalid(
            "read_wav",
            format!("{}: unsupported sample rate {}", path.display(), spec.sample_rate),
        );
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM, clipping to full scale.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| CoreError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        let q = (s * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE - 1.0) as i16;
        writer.write_sample(q).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
