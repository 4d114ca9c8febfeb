//! Achievable-rate lower bounds under mismatched decoding.
//!
//! The estimator averages `log2` likelihood ratios of the decoder's own
//! (generally mismatched) symbol metric over transmitted symbols, noise and
//! channel draws. Sparse-codebook decoding supplies posterior probabilities
//! directly; dense-code reception models the cancelled, matched-filtered
//! estimate as the true symbol in complex Gaussian noise whose variance
//! follows from the chip-noise covariance and the equivalent signature.

use crate::noma::gray_qpsk;
use crate::{CMat, CVec, C64};
use alloc::format;
use alloc::string::String;

/// Floor applied to posterior probabilities before taking logs.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

/// Errors from rate estimation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AirError {
    /// What was wrong.
    pub message: String,
}

impl core::fmt::Display for AirError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "air error: {}", self.message)
    }
}

impl core::error::Error for AirError {}

/// Gaussian observation model of a cancelled, matched-filtered estimate:
/// the true symbol plus complex Gaussian noise of variance `noise_var`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMismatchModel {
    /// Effective post-filter noise variance.
    pub noise_var: f64,
}

impl GaussianMismatchModel {
    /// Effective noise after matched filtering a signature `h` against chip
    /// noise of covariance `r_n`: `h^H R_n h / ||h||^4`.
    pub fn from_signature(h: &CVec, r_n: &CMat) -> Self {
        let num = (h.adjoint() * r_n * h)[(0, 0)].re;
        let den = h.norm_squared();
        Self { noise_var: (num / (den * den)).max(1e-300) }
    }
}

/// Running mismatched-rate estimate, mergeable across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct AirAccumulator {
    /// Symbols per user alphabet.
    pub alphabet: usize,
    /// Chips per symbol; the rate is reported per chip.
    pub code_length: usize,
    sum_terms: f64,
    count: u64,
    clamps: u64,
}

impl AirAccumulator {
    /// Empty accumulator for a scheme geometry.
    pub fn new(alphabet: usize, code_length: usize) -> Self {
        Self { alphabet, code_length, sum_terms: 0.0, count: 0, clamps: 0 }
    }

    /// Samples observed so far.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// Number of posterior floor events.
    pub fn clamps(&self) -> u64 {
        self.clamps
    }

    /// Adds one posterior-based sample: the ratio term reduces to
    /// `-log2 P(true)` because posteriors sum to one.
    pub fn update_posterior(&mut self, posterior: &[f64], true_index: usize) {
        let mut p = posterior[true_index];
        if p < POSTERIOR_FLOOR {
            p = POSTERIOR_FLOOR;
            self.clamps += 1;
        }
        self.sum_terms += -libm::log(p) / core::f64::consts::LN_2;
        self.count += 1;
    }

    /// Adds one Gaussian-model sample for a soft estimate of a Gray QPSK
    /// symbol: `log2 sum_x exp((|e - a_true|^2 - |e - a_x|^2) / N0')`.
    pub fn update_gaussian(
        &mut self,
        model: &GaussianMismatchModel,
        estimate: C64,
        true_index: usize,
    ) {
        let d_true = (estimate - gray_qpsk(true_index)).norm_sqr();
        let mut terms = [0.0f64; 8];
        let n = self.alphabet.min(8);
        for (x, t) in terms.iter_mut().take(n).enumerate() {
            let d = (estimate - gray_qpsk(x)).norm_sqr();
            *t = (d_true - d) / model.noise_var;
        }
        let m = terms[..n].iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for &t in &terms[..n] {
            let d = t - m;
            if d > -40.0 {
                s += libm::exp(d);
            }
        }
        // The term is -log2 of the implied posterior of the true symbol;
        // the posterior floor caps it like in the posterior-based path.
        let mut term = (m + libm::log(s)) / core::f64::consts::LN_2;
        let cap = -libm::log(POSTERIOR_FLOOR) / core::f64::consts::LN_2;
        if term > cap {
            term = cap;
            self.clamps += 1;
        }
        self.sum_terms += term;
        self.count += 1;
    }

    /// Folds another accumulator of the same geometry into this one.
    pub fn merge(&mut self, other: &AirAccumulator) -> Result<(), AirError> {
        if self.alphabet != other.alphabet || self.code_length != other.code_length {
            return Err(AirError {
                message: format!(
                    "geometry mismatch: {}x{} vs {}x{}",
                    self.alphabet, self.code_length, other.alphabet, other.code_length
                ),
            });
        }
        self.sum_terms += other.sum_terms;
        self.count += other.count;
        self.clamps += other.clamps;
        Ok(())
    }

    /// Rate per chip: `(log2 alphabet - mean term) / code_length`.
    /// Negative values are reported as-is; the estimate is a lower bound.
    pub fn finalize(&self) -> Result<f64, AirError> {
        if self.count == 0 {
            return Err(AirError { message: format!("empty accumulator") });
        }
        let bits = libm::log(self.alphabet as f64) / core::f64::consts::LN_2;
        Ok((bits - self.sum_terms / self.count as f64) / self.code_length as f64)
    }
}

/// Mean and standard error of a set of per-realization rates.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var / n as f64))
}
