use nalgebra::DMatrix;
use rcunet_tensor::Tensor;

use super::{N_BINS, N_FFT, N_MELS, SAMPLE_RATE};

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank over 0..Nyquist evaluated on FFT bin
/// centres, with its Moore-Penrose pseudoinverse.
#[derive(Clone, Debug)]
pub struct MelBank {
    /// `[N_MELS, N_BINS]`, row-major.
    pub weights: Vec<f64>,
    /// `[N_BINS, N_MELS]`, row-major.
    pub pinv: Vec<f64>,
    /// Filter centre frequencies in Hz.
    pub centres: Vec<f64>,
}

impl Default for MelBank {
    fn default() -> Self {
        Self::new()
    }
}

impl MelBank {
    pub fn new() -> Self {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        let mut weights = vec![0.0; N_MELS * N_BINS];
        for m in 0..N_MELS {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..N_BINS {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[m * N_BINS + k] = w;
            }
        }
        let m = DMatrix::from_row_slice(N_MELS, N_BINS, &weights);
        let pinv_m = m
            .clone()
            .pseudo_inverse(1e-12)
            .expect("SVD of a fixed filterbank converges");
        let mut pinv = vec![0.0; N_BINS * N_MELS];
        for r in 0..N_BINS {
            for c in 0..N_MELS {
                pinv[r * N_MELS + c] = pinv_m[(r, c)];
            }
        }
        Self {
            weights,
            pinv,
            centres: edges[1..=N_MELS].to_vec(),
        }
    }

    /// `[N_BINS, frames]` magnitudes to `[N_MELS, frames]`.
    pub fn apply(&self, magnitude: &Tensor) -> Tensor {
        matmul_rows(&self.weights, N_MELS, N_BINS, magnitude)
    }

    /// `[N_MELS, frames]` to `[N_BINS, frames]` through the pseudoinverse.
    pub fn invert(&self, mel: &Tensor) -> Tensor {
        matmul_rows(&self.pinv, N_BINS, N_MELS, mel)
    }

    /// `||M M+ M - M||_F / ||M||_F`.
    pub fn pinv_residual(&self) -> f64 {
        let m = DMatrix::from_row_slice(N_MELS, N_BINS, &self.weights);
        let p = DMatrix::from_row_slice(N_BINS, N_MELS, &self.pinv);
        (&m * &p * &m - &m).norm() / m.norm()
    }
}

fn matmul_rows(a: &[f64], rows: usize, inner: usize, b: &Tensor) -> Tensor {
    assert_eq!(b.shape()[0], inner, "inner dimension mismatch");
    let cols = b.shape()[1];
    let mut out = Tensor::zeros([rows, cols]);
    let bd = b.data();
    let od = out.data_mut();
    for r in 0..rows {
        let orow = &mut od[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let w = a[r * inner + k];
            if w == 0.0 {
                continue;
            }
            let brow = &bd[k * cols..(k + 1) * cols];
            for (o, x) in orow.iter_mut().zip(brow) {
                *o += w * x;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centres_increase_and_rows_positive() {
        let mel = MelBank::new();
        assert!(mel.centres.windows(2).all(|w| w[0] < w[1]));
        for m in 0..N_MELS {
            let s: f64 = mel.weights[m * N_BINS..(m + 1) * N_BINS].iter().sum();
            assert!(s > 0.0, "row {m}");
        }
        assert!(mel.weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn bins_between_centres_are_covered() {
        let mel = MelBank::new();
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        for k in 0..N_BINS {
            let f = k as f64 * bin_hz;
            if f < mel.centres[0] || f > mel.centres[N_MELS - 1] {
                continue;
            }
            let total: f64 = (0..N_MELS).map(|m| mel.weights[m * N_BINS + k]).sum();
            assert!(total > 0.0, "bin {k}");
        }
    }

    #[test]
    fn pseudoinverse_residual() {
        assert!(MelBank::new().pinv_residual() < 1e-10);
    }

    #[test]
    fn pinv_exact_on_row_space() {
        let mel = MelBank::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Tensor::from_fn([N_MELS, 1], |_| rng.gen_range(-1.0..1.0));
        // v = M^T u
        let mut v = Tensor::zeros([N_BINS, 1]);
        for k in 0..N_BINS {
            v.data_mut()[k] = (0..N_MELS).map(|m| mel.weights[m * N_BINS + k] * u.data()[m]).sum();
        }
        let back = mel.invert(&mel.apply(&v));
        for (a, b) in back.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
