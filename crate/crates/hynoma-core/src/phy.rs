//! Physical transmission pipelines.
//!
//! The uplink is a chip-synchronous burst: every group's chip frame passes
//! through its multipath channel, bursts superpose at the array with thermal
//! noise, and each group's receiver applies its analog projection and
//! delay-matched digital combiner bank. The downlink is cyclic-prefix OFDM:
//! per-subcarrier precoding, unitary IDFT, linear convolution to every user,
//! CP strip and unitary DFT back to subcarrier symbols.
//!
//! Both pipelines have closed-form equivalent models built from the gain
//! matrices of [`crate::beamform`]; tests pin physical and model outputs
//! against each other sample by sample.

use crate::beamform::GainMatrices;
use crate::rng::complex_gaussian;
use crate::{c64, CMat, CVec, C64};
use alloc::vec::Vec;
use rand::Rng;

/// One group's contribution to an uplink burst.
pub struct UplinkGroupTx<'a> {
    /// Chip frame, users x chips, unit mean chip energy.
    pub frame: &'a CMat,
    /// Per-path antenna channels, antennas x users.
    pub taps: &'a [CMat],
    /// Chip delay of each path.
    pub delays: &'a [usize],
    /// Transmit energy per user per chip.
    pub per_user_energy: f64,
}

/// Superposes all groups' bursts at the array and adds thermal noise.
/// Returns antennas x (chips + max_delay) samples covering the tail.
pub fn uplink_received<R: Rng + ?Sized>(
    groups: &[UplinkGroupTx<'_>],
    noise_power: f64,
    rng: &mut R,
) -> CMat {
    let m = groups[0].taps[0].nrows();
    let chips = groups[0].frame.ncols();
    let max_delay = groups.iter().flat_map(|g| g.delays.iter().copied()).max().unwrap_or(0);
    let mut y = CMat::zeros(m, chips + max_delay);
    for g in groups {
        let scaled = g.frame.scale(libm::sqrt(g.per_user_energy));
        for (tap, &delay) in g.taps.iter().zip(g.delays) {
            let contrib = tap * &scaled;
            let mut view = y.columns_mut(delay, chips);
            view += contrib;
        }
    }
    if noise_power > 0.0 {
        let s = libm::sqrt(noise_power);
        for v in y.iter_mut() {
            *v += complex_gaussian(rng) * s;
        }
    }
    y
}

/// Applies one group's analog projection and digital combiner bank to a
/// received burst: `r_n = sum_l W_l^H S^H y_{n+l}`, users x chips.
pub fn uplink_combined(
    received: &CMat,
    analog: &CMat,
    combiners: &[CMat],
    combiner_delays: &[usize],
    chips: usize,
) -> CMat {
    let projected = analog.adjoint() * received;
    let users = combiners[0].ncols();
    let mut r = CMat::zeros(users, chips);
    for (w, &delay) in combiners.iter().zip(combiner_delays) {
        r += w.adjoint() * projected.columns(delay, chips);
    }
    r
}

/// Equivalent-model combined streams: `r_n = sum_{g'} sum_q Phi_q^{(g')}
/// sqrt(e_{g'}) x_{n-q}^{(g')}` with zero padding outside the frame.
/// Noise free; for pinning the physical pipeline.
pub fn uplink_model_combined(
    groups: &[(&CMat, f64, &GainMatrices)],
    chips: usize,
) -> CMat {
    let users = groups[0].2.zero_tap().nrows();
    let mut r = CMat::zeros(users, chips);
    for (frame, energy, phi) in groups {
        let scaled = frame.scale(libm::sqrt(*energy));
        for (q, mat) in &phi.taps {
            let (src, dst, len) = if *q >= 0 {
                let q = *q as usize;
                if q >= chips {
                    continue;
                }
                (0, q, chips - q)
            } else {
                let q = (-*q) as usize;
                if q >= chips {
                    continue;
                }
                (q, 0, chips - q)
            };
            let contrib = mat * scaled.columns(src, len);
            let mut view = r.columns_mut(dst, len);
            view += contrib;
        }
    }
    r
}

/// Per-slot chip windows of one stream: slot `t` holds chips
/// `t*code_length ..< (t+1)*code_length` of the user's row.
pub fn chip_windows(stream: &CMat, user: usize, code_length: usize) -> Vec<CVec> {
    let slots = stream.ncols() / code_length;
    (0..slots)
        .map(|t| CVec::from_fn(code_length, |i, _| stream[(user, t * code_length + i)]))
        .collect()
}

/// Slots truncated at each frame end where intersymbol interference differs
/// from steady state.
pub fn guard_slots(max_delay: usize, code_length: usize) -> usize {
    max_delay.div_ceil(code_length)
}

/// One group's contribution to a downlink OFDM signal.
pub struct DownlinkGroupTx<'a> {
    /// Chip frame, users x chips; chips index subcarriers k-major.
    pub frame: &'a CMat,
    /// Analog beamformer, antennas x rf_chains.
    pub analog: &'a CMat,
    /// Per-subcarrier digital precoders, rf_chains x users.
    pub precoders: &'a [CMat],
    /// Amplitude normalization `sqrt(c)`.
    pub scale: f64,
}

/// Builds the transmitted time signal: per OFDM symbol, precode every
/// subcarrier, unitary IDFT, prepend a cyclic prefix.
/// The frame length must divide into whole OFDM symbols.
pub fn downlink_time_signal(
    groups: &[DownlinkGroupTx<'_>],
    subcarriers: usize,
    cyclic_prefix: usize,
) -> CMat {
    let m = groups[0].analog.nrows();
    let chips = groups[0].frame.ncols();
    assert!(chips % subcarriers == 0, "frame must fill whole OFDM symbols");
    let ofdm = chips / subcarriers;
    let block = subcarriers + cyclic_prefix;
    let mut signal = CMat::zeros(m, ofdm * block);
    let inv_sqrt_n = 1.0 / libm::sqrt(subcarriers as f64);
    for o in 0..ofdm {
        let mut freq = CMat::zeros(m, subcarriers);
        for g in groups {
            for k in 0..subcarriers {
                let b: CVec = g.frame.column(o * subcarriers + k).into_owned();
                let x = (g.analog * (&g.precoders[k] * b)).scale(g.scale);
                let mut col = freq.column_mut(k);
                col += x;
            }
        }
        for n in 0..subcarriers {
            let mut s = CVec::zeros(m);
            for k in 0..subcarriers {
                let w = 2.0 * core::f64::consts::PI * (k * n) as f64 / subcarriers as f64;
                let tw = c64(libm::cos(w) * inv_sqrt_n, libm::sin(w) * inv_sqrt_n);
                let col: CVec = freq.column(k).into_owned();
                s += col.scale_c(tw);
            }
            signal.set_column(o * block + cyclic_prefix + n, &s);
        }
        for i in 0..cyclic_prefix {
            let src: CVec =
                signal.column(o * block + cyclic_prefix + subcarriers - cyclic_prefix + i).into_owned();
            signal.set_column(o * block + i, &src);
        }
    }
    signal
}

trait ScaleC {
    fn scale_c(self, s: C64) -> Self;
}

impl ScaleC for CVec {
    fn scale_c(mut self, s: C64) -> Self {
        for v in self.iter_mut() {
            *v *= s;
        }
        self
    }
}

/// Propagates a time signal to one single-antenna user and adds noise:
/// `y_n = sum_l h_l^H s_{n-l} + noise`.
pub fn downlink_user_stream<R: Rng + ?Sized>(
    signal: &CMat,
    taps: &[CVec],
    delays: &[usize],
    noise_power: f64,
    rng: &mut R,
) -> Vec<C64> {
    let n = signal.ncols();
    let max_delay = delays.iter().copied().max().unwrap_or(0);
    let mut y = alloc::vec![c64(0.0, 0.0); n + max_delay];
    for (h, &l) in taps.iter().zip(delays) {
        let row = h.adjoint() * signal;
        for j in 0..n {
            y[j + l] += row[(0, j)];
        }
    }
    if noise_power > 0.0 {
        let s = libm::sqrt(noise_power);
        for v in y.iter_mut() {
            *v += complex_gaussian(rng) * s;
        }
    }
    y
}

/// Recovers subcarrier symbols from a user's time stream: strip each CP,
/// unitary DFT, lay chips out k-major to mirror the transmit frame.
pub fn downlink_subcarrier_stream(
    stream: &[C64],
    subcarriers: usize,
    cyclic_prefix: usize,
    ofdm_symbols: usize,
) -> Vec<C64> {
    let block = subcarriers + cyclic_prefix;
    let inv_sqrt_n = 1.0 / libm::sqrt(subcarriers as f64);
    let mut chips = Vec::with_capacity(ofdm_symbols * subcarriers);
    for o in 0..ofdm_symbols {
        let base = o * block + cyclic_prefix;
        for k in 0..subcarriers {
            let mut acc = c64(0.0, 0.0);
            for n in 0..subcarriers {
                let w = -2.0 * core::f64::consts::PI * (k * n) as f64 / subcarriers as f64;
                acc += stream[base + n] * c64(libm::cos(w), libm::sin(w));
            }
            chips.push(acc * c64(inv_sqrt_n, 0.0));
        }
    }
    chips
}
