//! End-to-end enhancement of waveforms and corpus-level scoring.

use crate::data::Utterance;
use crate::dsp::{self, MelBank, Waveform, LOG_FLOOR, SAMPLE_RATE};
use crate::error::{invalid, Result};
use crate::metrics::{bss_eval, stoi, EvalRecord, EvalReport, DEFAULT_FILTER_LEN};
use crate::model::{Network, OutputMode};
use rayon::prelude::*;

/// Noisy waveform to enhanced waveform of the same length. Mapping models
/// supply the clean log-mel estimate directly; mask models scale the noisy
/// mel magnitudes (negative mask values are clipped to zero). Either way
/// the noisy phase is reused.
pub fn enhance(network: &Network, mixture: &Waveform, mel: &MelBank, fast_math: bool) -> Result<Waveform> {
    if mixture.sample_rate != SAMPLE_RATE {
        return invalid(
            "enhance",
            format!("expected {SAMPLE_RATE} Hz input, got {} Hz", mixture.sample_rate),
        );
    }
    let spec = dsp::features(mixture, mel)?;
    let out = network.predict(&spec.logmel, fast_math)?;
    let (bands, frames) = (spec.logmel.shape()[0], spec.logmel.shape()[1]);
    let channels = out.shape()[2];
    let logmel = match network.output_mode() {
        OutputMode::Mapping => {
            rcunet_tensor::Tensor::from_fn([bands, frames], |i| out.data()[i * channels])
        }
        OutputMode::Irm => rcunet_tensor::Tensor::from_fn([bands, frames], |i| {
            let gain = out.data()[i * channels].max(0.0);
            (spec.logmel.data()[i].exp() * gain).max(LOG_FLOOR).ln()
        }),
    };
    let wave = dsp::reconstruct(&logmel, &spec.phase, mel)?;
    Ok(dsp::fit_length(wave, mixture.len()))
}

/// SDR/SIR/SAR against the utterance's clean speech and scaled noise, plus STOI.
pub fn score(estimate: &Waveform, utt: &Utterance) -> Result<EvalRecord> {
    let bss = bss_eval(estimate, &utt.clean, &utt.noise, DEFAULT_FILTER_LEN)?;
    let intelligibility = stoi(&utt.clean, estimate)?;
    Ok(EvalRecord {
        id: utt.id.clone(),
        noise_kind: utt.noise_kind.to_string(),
        snr_db: utt.snr_db,
        sdr: bss.sdr_db,
        sir: bss.sir_db,
        sar: bss.sar_db,
        stoi: intelligibility.score,
    })
}

/// Scores `network` (when given) and optionally the unprocessed mixtures
/// over `utterances`.
pub fn evaluate(
    network: Option<&Network>,
    utterances: &[Utterance],
    mel: &MelBank,
    fast_math: bool,
    passthrough: bool,
) -> Result<EvalReport> {
    let scored = utterances
        .par_iter()
        .map(|utt| {
            let enhanced = match network {
                Some(net) => Some(score(&enhance(net, &utt.mixture, mel, fast_math)?, utt)?),
                None => None,
            };
            let mixture = if passthrough { Some(score(&utt.mixture, utt)?) } else { None };
            log::debug!("scored {}", utt.id);
            Ok((enhanced, mixture))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::default();
    for (enhanced, mixture) in scored {
        report.records.extend(enhanced);
        report.passthrough.extend(mixture);
    }
    Ok(report)
}

/// Mean SDR of the enhanced utterances.
pub fn mean_sdr(network: &Network, utterances: &[Utterance], mel: &MelBank, fast_math: bool) -> Result<f64> {
    if utterances.is_empty() {
        return invalid("mean_sdr", "no utterances");
    }
    let mut total = 0.0;
    for utt in utterances {
        let estimate = enhance(network, &utt.mixture, mel, fast_math)?;
        total += bss_eval(&estimate, &utt.clean, &utt.noise, DEFAULT_FILTER_LEN)?.sdr_db;
    }
    Ok(total / utterances.len() as f64)
}
