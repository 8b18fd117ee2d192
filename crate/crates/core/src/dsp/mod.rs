//! Audio front end: WAV I/O, resampling, STFT, mel filterbank, log-mel
//! features and waveform reconstruction from enhanced log-mel spectrograms.

mod mel;
mod resample;
mod stft;
mod wav;

pub use mel::MelBank;
pub use resample::resample;
pub use stft::{frame_count, inverse_frame, istft, stft, window, Stft};
pub use wav::{read_wav, write_wav};

use rcunet_tensor::Tensor;

use crate::error::{invalid, Result};

pub const SAMPLE_RATE: u32 = 8000;
pub const FRAME_LEN: usize = 200;
pub const FRAME_STEP: usize = 80;
pub const N_FFT: usize = 512;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 64;
/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-7;
pub const SUPPORTED_RATES: [u32; 3] = [8000, 10000, 16000];

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-mel magnitudes `[N_MELS, frames]` plus the linear-frequency phase
/// `[N_BINS, frames]` needed for reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub logmel: Tensor,
    pub phase: Tensor,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.logmel.shape()[1]
    }
}

/// Mel-filtered STFT magnitudes `[N_MELS, frames]` on a linear scale.
pub fn mel_magnitude(w: &Waveform, mel: &MelBank) -> Result<Tensor> {
    let spec = stft(w)?;
    Ok(mel.apply(&spec.magnitude))
}

pub fn features(w: &Waveform, mel: &MelBank) -> Result<Spectrogram> {
    let spec = stft(w)?;
    let logmel = mel.apply(&spec.magnitude).map(|v| v.max(LOG_FLOOR).ln());
    Ok(Spectrogram {
        logmel,
        phase: spec.phase,
    })
}

/// Waveform from an enhanced log-mel spectrogram and the noisy phase. The
/// result spans `(frames - 1) * FRAME_STEP + FRAME_LEN` samples.
pub fn reconstruct(logmel: &Tensor, phase: &Tensor, mel: &MelBank) -> Result<Waveform> {
    if logmel.rank() != 2 || logmel.shape()[0] != N_MELS {
        return invalid("reconstruct", format!("log-mel must be [{N_MELS}, frames], got {:?}", logmel.shape()));
    }
    if phase.shape() != [N_BINS, logmel.shape()[1]] {
        return invalid(
            "reconstruct",
            format!("phase {:?} does not match log-mel {:?}", phase.shape(), logmel.shape()),
        );
    }
    let magnitude = mel.invert(&logmel.map(f64::exp)).map(|v| v.max(0.0));
    istft(&Stft {
        magnitude,
        phase: phase.clone(),
    })
}

/// Pads with zeros or truncates to `len` samples.
pub fn fit_length(mut w: Waveform, len: usize) -> Waveform {
    w.samples.resize(len, 0.0);
    w
}
