//! Projection-based decomposition of an estimate into target, interference
//! and artifact components over time-invariant FIR filters of the source and
//! noise.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::Waveform;
use crate::error::{invalid, Result};

pub const DEFAULT_FILTER_LEN: usize = 512;
/// Value reported for ratios whose error term vanishes.
pub const SENTINEL_DB: f64 = 200.0;
const RIDGE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BssResult {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
}

/// Components over the zero-padded length `len + filter_len - 1`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub estimate: Vec<f64>,
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifact: Vec<f64>,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 || num >= den * 1e20 {
        return SENTINEL_DB;
    }
    if num <= 0.0 {
        return -SENTINEL_DB;
    }
    (10.0 * (num / den).log10()).clamp(-SENTINEL_DB, SENTINEL_DB)
}

/// Forward transforms of zero-padded signals, shared across correlations.
struct Spectra {
    planner: FftPlanner<f64>,
    size: usize,
}

impl Spectra {
    fn transform(&mut self, x: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.size];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.planner.plan_fft_forward(self.size).process(&mut buf);
        buf
    }

    /// `out[k] = sum_m a[m + k] * b[m]` for `k < lags`.
    fn correlate(&mut self, a: &[Complex<f64>], b: &[Complex<f64>], lags: usize) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = a.iter().zip(b).map(|(x, y)| x * y.conj()).collect();
        self.planner.plan_fft_inverse(self.size).process(&mut buf);
        let scale = 1.0 / self.size as f64;
        buf[..lags].iter().map(|c| c.re * scale).collect()
    }
}

/// Solves the regularized normal equations and returns the filter taps.
fn solve(gram: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let n = gram.nrows();
    let gram = gram + DMatrix::identity(n, n) * RIDGE;
    match gram.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&rhs)),
        None => match gram.lu().solve(&rhs) {
            Some(x) => Ok(x),
            None => invalid("bss_eval", "singular projection system"),
        },
    }
}

/// Sum of delayed copies of `x` weighted by `taps`, over `out_len` samples.
fn filter(x: &[f64], taps: &[f64], out_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_len];
    for (d, &c) in taps.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (o, &v) in out[d..].iter_mut().zip(x) {
            *o += c * v;
        }
    }
    out
}

pub fn bss_decompose(
    estimate: &Waveform,
    source: &Waveform,
    noise: &Waveform,
    filter_len: usize,
) -> Result<Decomposition> {
    let t = source.len();
    if estimate.len() != t || noise.len() != t {
        return invalid(
            "bss_eval",
            format!("length mismatch: estimate {}, source {}, noise {}", estimate.len(), t, noise.len()),
        );
    }
    if estimate.sample_rate != source.sample_rate || noise.sample_rate != source.sample_rate {
        return invalid("bss_eval", "sample rates differ");
    }
    if filter_len == 0 {
        return invalid("bss_eval", "filter length must be positive");
    }
    if source.energy() == 0.0 {
        return invalid("bss_eval", "source has zero energy");
    }
    let lags = filter_len;
    let padded = t + lags - 1;
    let mut spectra = Spectra {
        planner: FftPlanner::new(),
        size: (t + lags).next_power_of_two(),
    };
    let fs = spectra.transform(&source.samples);
    let fn_ = spectra.transform(&noise.samples);
    let fe = spectra.transform(&estimate.samples);
    let r_ss = spectra.correlate(&fs, &fs, lags);
    let r_nn = spectra.correlate(&fn_, &fn_, lags);
    let c_ns = spectra.correlate(&fn_, &fs, lags);
    let c_sn = spectra.correlate(&fs, &fn_, lags);
    let b_s = spectra.correlate(&fe, &fs, lags);
    let b_n = spectra.correlate(&fe, &fn_, lags);

    let toeplitz = |r: &[f64]| DMatrix::from_fn(lags, lags, |i, j| r[i.abs_diff(j)]);
    let g_ss = toeplitz(&r_ss);
    let taps_s = solve(g_ss.clone(), DVector::from_column_slice(&b_s))?;
    let target = filter(&source.samples, taps_s.as_slice(), padded);

    let mut joint = DMatrix::zeros(2 * lags, 2 * lags);
    joint.view_mut((0, 0), (lags, lags)).copy_from(&g_ss);
    joint.view_mut((lags, lags), (lags, lags)).copy_from(&toeplitz(&r_nn));
    for d1 in 0..lags {
        for d2 in 0..lags {
            // sum_t s[t - d1] n[t - d2]
            let v = if d1 >= d2 { c_ns[d1 - d2] } else { c_sn[d2 - d1] };
            joint[(d1, lags + d2)] = v;
            joint[(lags + d2, d1)] = v;
        }
    }
    let mut rhs = b_s.clone();
    rhs.extend_from_slice(&b_n);
    let taps = solve(joint, DVector::from_vec(rhs))?;
    let proj_s = filter(&source.samples, &taps.as_slice()[..lags], padded);
    let proj_n = filter(&noise.samples, &taps.as_slice()[lags..], padded);

    let mut est = estimate.samples.clone();
    est.resize(padded, 0.0);
    let mut interference = vec![0.0; padded];
    let mut artifact = vec![0.0; padded];
    for i in 0..padded {
        let joint_proj = proj_s[i] + proj_n[i];
        interference[i] = joint_proj - target[i];
        artifact[i] = est[i] - joint_proj;
    }
    Ok(Decomposition {
        estimate: est,
        target,
        interference,
        artifact,
    })
}

pub fn bss_eval(estimate: &Waveform, source: &Waveform, noise: &Waveform, filter_len: usize) -> Result<BssResult> {
    let d = bss_decompose(estimate, source, noise, filter_len)?;
    let e_target = energy(&d.target);
    let e_interf = energy(&d.interference);
    let e_artif = energy(&d.artifact);
    let distortion: Vec<f64> = d.interference.iter().zip(&d.artifact).map(|(i, a)| i + a).collect();
    let signal: Vec<f64> = d.target.iter().zip(&d.interference).map(|(s, i)| s + i).collect();
    Ok(BssResult {
        sdr_db: ratio_db(e_target, energy(&distortion)),
        sir_db: ratio_db(e_target, e_interf),
        sar_db: ratio_db(energy(&signal), e_artif),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_places_delays() {
        let y = filter(&[1.0, 2.0], &[0.5, 0.0, 1.0], 4);
        assert_eq!(y, vec![0.5, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn ratio_caps() {
        assert_eq!(ratio_db(1.0, 0.0), SENTINEL_DB);
        assert_eq!(ratio_db(1.0, 1e-30), SENTINEL_DB);
        assert!((ratio_db(10.0, 1.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_silent_source_and_length_mismatch() {
        let z = Waveform::new(vec![0.0; 100], 8000);
        let x = Waveform::new(vec![1.0; 100], 8000);
        assert!(bss_eval(&x, &z, &x, 8).is_err());
        let short = Waveform::new(vec![1.0; 99], 8000);
        assert!(bss_eval(&short, &x, &x, 8).is_err());
    }
}
