//! Hybrid beamforming: statistical analog eigenbeamformers, RF-chain
//! allocation across paths, digital combiners and the reduced-dimension
//! equivalent channel description.
//!
//! The analog stage is built from long-term covariances only: each group gets
//! the dominant generalized eigenvectors of its own covariance against the
//! total received covariance, which steers energy toward the group while
//! whitening everything else. The digital stage acts per group on the
//! effective channel behind the analog front end, either as a conventional
//! matched filter (CMF) or as regularized zero forcing (ZF).

use crate::channel::CovarianceSet;
use crate::linalg::{generalized_eig, generalized_eig_top, solve_hermitian_pd, LinalgError};
use crate::rng::complex_gaussian_vec;
use crate::scenario::Combiner;
use crate::{c64, CMat, CVec};
use alloc::vec::Vec;
use rand::Rng;

/// Analog beamformer of one group.
pub struct AnalogBeamformer {
    /// Antennas x rf_chains matrix with unit-norm columns.
    pub matrix: CMat,
    /// For the single-carrier construction: `(path index, columns)` per
    /// contributing path, in path order. Empty for the multicarrier design.
    pub path_allocation: Vec<(usize, usize)>,
}

/// Multicarrier analog design: dominant generalized eigenvectors of the
/// group's total covariance against the received covariance.
pub fn analog_multicarrier(
    group_sum: &CMat,
    received: &CMat,
    rf_chains: usize,
) -> Result<AnalogBeamformer, LinalgError> {
    let pairs = generalized_eig_top(group_sum, received, rf_chains)?;
    Ok(AnalogBeamformer {
        matrix: columns_from(&pairs, group_sum.nrows()),
        path_allocation: Vec::new(),
    })
}

fn columns_from(pairs: &[crate::linalg::EigPair], rows: usize) -> CMat {
    let mut m = CMat::zeros(rows, pairs.len());
    for (j, p) in pairs.iter().enumerate() {
        m.set_column(j, &p.vector);
    }
    m
}

/// Descending generalized eigenvalue spectrum of every path covariance
/// against the received covariance.
pub fn path_spectra(
    path_sums: &[CMat],
    received: &CMat,
) -> Result<Vec<Vec<crate::linalg::EigPair>>, LinalgError> {
    path_sums.iter().map(|r| generalized_eig(r, received)).collect()
}

/// Splits a group's RF chains across its paths to maximize the product of
/// `1 + lambda` over the selected generalized eigenvalues.
///
/// Spectra are sorted descending, so greedily taking the globally largest
/// next eigenvalue is exact. Ties resolve to the lowest path index.
pub fn allocate_rf_chains(spectra: &[Vec<f64>], rf_chains: usize) -> Vec<usize> {
    let mut counts = alloc::vec![0usize; spectra.len()];
    for _ in 0..rf_chains {
        let mut best: Option<(usize, f64)> = None;
        for (j, s) in spectra.iter().enumerate() {
            if let Some(&next) = s.get(counts[j]) {
                if best.map_or(true, |(_, b)| next > b) {
                    best = Some((j, next));
                }
            }
        }
        match best {
            Some((j, _)) => counts[j] += 1,
            None => break,
        }
    }
    counts
}

/// Single-carrier analog design: per-path generalized eigenbeams,
/// concatenated according to the RF-chain allocation.
pub fn analog_single_carrier(
    path_sums: &[CMat],
    received: &CMat,
    rf_chains: usize,
) -> Result<AnalogBeamformer, LinalgError> {
    let spectra = path_spectra(path_sums, received)?;
    let values: Vec<Vec<f64>> =
        spectra.iter().map(|s| s.iter().map(|p| p.value).collect()).collect();
    let counts = allocate_rf_chains(&values, rf_chains);
    let m = received.nrows();
    let total: usize = counts.iter().sum();
    let mut matrix = CMat::zeros(m, total);
    let mut path_allocation = Vec::new();
    let mut col = 0;
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        for p in spectra[j].iter().take(c) {
            matrix.set_column(col, &p.vector);
            col += 1;
        }
        path_allocation.push((j, c));
    }
    Ok(AnalogBeamformer { matrix, path_allocation })
}

/// Channel of one group seen behind an analog beamformer: one
/// rf_chains x users matrix per resolvable path.
pub struct EffectiveChannel {
    /// `taps[j]`: rf_chains x users effective channel of path `j`.
    pub taps: Vec<CMat>,
    /// Delay of each tap in chips.
    pub delays: Vec<usize>,
}

/// Projects per-path channel matrices through an analog beamformer.
pub fn effective_channels(analog: &CMat, taps: &[CMat], delays: &[usize]) -> EffectiveChannel {
    EffectiveChannel {
        taps: taps.iter().map(|h| analog.adjoint() * h).collect(),
        delays: delays.to_vec(),
    }
}

/// Per-subcarrier frequency response of an effective channel:
/// `users x rf_chains` matrices `sum_j taps[j]^H e^{-j 2 pi delay_j k / N}`.
pub fn frequency_response(eff: &EffectiveChannel, subcarriers: usize) -> Vec<CMat> {
    let (d, k_users) = (eff.taps[0].nrows(), eff.taps[0].ncols());
    (0..subcarriers)
        .map(|k| {
            let mut lambda = CMat::zeros(k_users, d);
            for (tap, &delay) in eff.taps.iter().zip(&eff.delays) {
                let w = -2.0 * core::f64::consts::PI * (delay * k) as f64 / subcarriers as f64;
                lambda += tap.adjoint().scale_cpx(c64(libm::cos(w), libm::sin(w)));
            }
            lambda
        })
        .collect()
}

trait ScaleCpx {
    fn scale_cpx(self, s: crate::C64) -> Self;
}

impl ScaleCpx for CMat {
    fn scale_cpx(mut self, s: crate::C64) -> Self {
        for v in self.iter_mut() {
            *v *= s;
        }
        self
    }
}

/// Downlink digital precoder for one subcarrier given its frequency response.
///
/// CMF transposes the response; ZF regularizes with the inverse per-symbol
/// SNR, `users * noise / energy`.
pub fn digital_downlink(
    lambda: &CMat,
    combiner: Combiner,
    noise_power: f64,
    symbol_energy: f64,
    users: usize,
) -> Result<CMat, LinalgError> {
    match combiner {
        Combiner::Cmf => Ok(lambda.adjoint()),
        Combiner::Zf => {
            let k = lambda.nrows();
            let gram = lambda * lambda.adjoint()
                + CMat::identity(k, k).scale(users as f64 * noise_power / symbol_energy);
            let inv_applied = solve_hermitian_pd(&gram, &CMat::identity(k, k))?;
            Ok(lambda.adjoint() * inv_applied)
        }
    }
}

/// Uplink digital combiner bank: one rf_chains x users filter per path.
pub fn digital_uplink(
    eff: &EffectiveChannel,
    combiner: Combiner,
    noise_power: f64,
    symbol_energy: f64,
    users: usize,
) -> Result<Vec<CMat>, LinalgError> {
    match combiner {
        Combiner::Cmf => Ok(eff.taps.clone()),
        Combiner::Zf => {
            let k = eff.taps[0].ncols();
            let mut gram =
                CMat::identity(k, k).scale(users as f64 * noise_power / symbol_energy);
            for tap in &eff.taps {
                gram += tap.adjoint() * tap;
            }
            let inv = solve_hermitian_pd(&gram, &CMat::identity(k, k))?;
            Ok(eff.taps.iter().map(|tap| tap * &inv).collect())
        }
    }
}

/// Equivalent users x users gain matrices of a combined uplink group,
/// one per relative delay.
pub struct GainMatrices {
    /// `(relative delay q, gain matrix)` sorted by `q`; the `q = 0` entry is
    /// the co-symbol gain, others are intersymbol leakage.
    pub taps: Vec<(i64, CMat)>,
}

impl GainMatrices {
    /// Gain matrix at relative delay `q`, if any coupling exists there.
    pub fn at(&self, q: i64) -> Option<&CMat> {
        self.taps.iter().find(|(p, _)| *p == q).map(|(_, m)| m)
    }

    /// The co-symbol gain matrix.
    pub fn zero_tap(&self) -> &CMat {
        self.at(0).expect("zero tap always present")
    }
}

/// Composes combiner bank and effective channel into equivalent gains:
/// `Phi_q = sum_l W_l^H H_{l+q}`, indexed by relative delay `q`.
///
/// Only delays where a combiner tap overlaps a channel tap appear; everything
/// else is exactly zero.
pub fn gain_matrices(w: &[CMat], w_delays: &[usize], eff: &EffectiveChannel) -> GainMatrices {
    let k_w = w[0].ncols();
    let k_h = eff.taps[0].ncols();
    let mut taps: Vec<(i64, CMat)> = Vec::new();
    for (wi, &dw) in w.iter().zip(w_delays) {
        for (hj, &dh) in eff.taps.iter().zip(&eff.delays) {
            let q = dh as i64 - dw as i64;
            let term = wi.adjoint() * hj;
            match taps.iter_mut().find(|(p, _)| *p == q) {
                Some((_, m)) => *m += term,
                None => taps.push((q, term)),
            }
        }
    }
    if taps.iter().all(|(q, _)| *q != 0) {
        taps.push((0, CMat::zeros(k_w, k_h)));
    }
    taps.sort_by_key(|(q, _)| *q);
    GainMatrices { taps }
}

/// Post-combining noise correlation across chip lags:
/// `R[q] = N0 * sum_l W_l^H (S^H S) W_{l+q}` for `|q| < max_lag`.
pub fn noise_correlation(
    w: &[CMat],
    w_delays: &[usize],
    analog: &CMat,
    noise_power: f64,
    max_lag: usize,
) -> Vec<(i64, CMat)> {
    let gram = analog.adjoint() * analog;
    let k = w[0].ncols();
    let mut out = Vec::with_capacity(2 * max_lag - 1);
    for q in -(max_lag as i64 - 1)..=(max_lag as i64 - 1) {
        let mut r = CMat::zeros(k, k);
        for (wi, &dw) in w.iter().zip(w_delays) {
            let target = dw as i64 + q;
            if target < 0 {
                continue;
            }
            if let Some(pos) = w_delays.iter().position(|&d| d as i64 == target) {
                r += wi.adjoint() * &gram * &w[pos];
            }
        }
        out.push((q, r.scale(noise_power)));
    }
    out
}

/// Per-user chip-noise correlation over one codeword:
/// Toeplitz `[R]_{i,i'} = [R_xi[i - i']]_{(m,m)}`.
pub fn stream_noise_correlation(
    lags: &[(i64, CMat)],
    user: usize,
    code_length: usize,
) -> CMat {
    CMat::from_fn(code_length, code_length, |i, j| {
        let q = i as i64 - j as i64;
        lags.iter()
            .find(|(p, _)| *p == q)
            .map_or(c64(0.0, 0.0), |(_, m)| m[(user, user)])
    })
}

/// Average transmit power of a downlink precoding stage for unit-energy
/// symbols with the given per-resource chip variances:
/// `(1/N) sum_k sum_m chip_var[k % N_c][m] * w_m^H (S^H S) w_m`.
pub fn average_precoder_power(
    precoders: &[CMat],
    chip_var: &[Vec<f64>],
    analog: &CMat,
) -> f64 {
    let gram = analog.adjoint() * analog;
    let n = precoders.len();
    let nc = chip_var.len();
    let mut acc = 0.0;
    for (k, w) in precoders.iter().enumerate() {
        let vars = &chip_var[k % nc];
        for m in 0..w.ncols() {
            let col: CVec = w.column(m).into_owned();
            let quad = (col.adjoint() * &gram * &col)[(0, 0)].re;
            acc += vars[m] * quad;
        }
    }
    acc / n as f64
}

/// Estimates the downlink power normalization `c = E_s / E{P}` of one group
/// by Monte Carlo over channel realizations.
#[allow(clippy::too_many_arguments)]
pub fn power_scaling<R: Rng + ?Sized>(
    covs: &CovarianceSet,
    group: usize,
    analog: &CMat,
    combiner: Combiner,
    chip_var: &[Vec<f64>],
    noise_power: f64,
    symbol_energy: f64,
    subcarriers: usize,
    draws: usize,
    rng: &mut R,
) -> Result<f64, LinalgError> {
    let m = covs.antennas;
    let factors = &covs.factors[group];
    let users = factors.len();
    let delays = &covs.delays[group];
    let mut acc = 0.0;
    for _ in 0..draws {
        let taps: Vec<CMat> = (0..delays.len())
            .map(|j| {
                let mut tap = CMat::zeros(m, users);
                for (k, user) in factors.iter().enumerate() {
                    let wv = CVec::from_vec(complex_gaussian_vec(rng, m));
                    tap.set_column(k, &(&user[j] * wv));
                }
                tap
            })
            .collect();
        let eff = effective_channels(analog, &taps, delays);
        let lambdas = frequency_response(&eff, subcarriers);
        let precoders: Vec<CMat> = lambdas
            .iter()
            .map(|l| digital_downlink(l, combiner, noise_power, symbol_energy, users))
            .collect::<Result<_, _>>()?;
        acc += average_precoder_power(&precoders, chip_var, analog);
    }
    Ok(symbol_energy / (acc / draws as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_covariances, path_covariance, received_covariance, sample_channels};
    use crate::linalg::{hermitian_eig, rel_frobenius};
    use crate::rng::{derive, TAG_ANGLES, TAG_CHANNEL, TAG_POWER};
    use crate::scenario::ScenarioConfig;
    use proptest::prelude::*;

    fn desk_cfg(antennas: usize, users: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::reference_cell();
        cfg.antennas = antennas;
        for grp in &mut cfg.groups {
            grp.users = users;
        }
        cfg
    }

    #[test]
    fn allocation_matches_worked_example() {
        assert_eq!(allocate_rf_chains(&[alloc::vec![10.0, 1.0], alloc::vec![5.0, 4.0]], 2), [1, 1]);
        assert_eq!(allocate_rf_chains(&[alloc::vec![10.0, 1.0], alloc::vec![5.0, 4.0]], 3), [1, 2]);
        assert_eq!(allocate_rf_chains(&[alloc::vec![10.0, 9.0], alloc::vec![5.0, 4.0]], 2), [2, 0]);
    }

    #[test]
    fn allocation_ties_prefer_low_path_index() {
        assert_eq!(allocate_rf_chains(&[alloc::vec![5.0], alloc::vec![5.0]], 1), [1, 0]);
    }

    #[test]
    fn allocation_caps_at_available_spectrum() {
        assert_eq!(allocate_rf_chains(&[alloc::vec![2.0], alloc::vec![1.0]], 5), [1, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_greedy_allocation_is_optimal(
            raw in proptest::collection::vec(
                proptest::collection::vec(0.0f64..20.0, 1..4), 1..4),
            d in 1usize..6,
        ) {
            let spectra: Vec<Vec<f64>> = raw
                .into_iter()
                .map(|mut s| {
                    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    s
                })
                .collect();
            let supply: usize = spectra.iter().map(|s| s.len()).sum();
            let d = d.min(supply);
            let counts = allocate_rf_chains(&spectra, d);
            prop_assert_eq!(counts.iter().sum::<usize>(), d);
            let score = |cs: &[usize]| -> f64 {
                cs.iter()
                    .zip(&spectra)
                    .map(|(&c, s)| s.iter().take(c).map(|l| libm::log(1.0 + l)).sum::<f64>())
                    .sum()
            };
            let greedy = score(&counts);
            let mut best = f64::NEG_INFINITY;
            let mut stack = alloc::vec![(0usize, alloc::vec![], d)];
            while let Some((j, partial, left)) = stack.pop() {
                if j == spectra.len() {
                    if left == 0 {
                        let mut full: Vec<usize> = partial.clone();
                        full.resize(spectra.len(), 0);
                        best = best.max(score(&full));
                    }
                    continue;
                }
                for take in 0..=left.min(spectra[j].len()) {
                    let mut next = partial.clone();
                    next.push(take);
                    stack.push((j + 1, next, left - take));
                }
            }
            prop_assert!(greedy >= best - 1e-9, "greedy {greedy} best {best}");
        }
    }

    #[test]
    fn multicarrier_beamformer_finds_dominant_subspace() {
        let own = path_covariance(0.0, 3.0, 1.0, 32);
        let ry = &own + CMat::identity(32, 32);
        let bf = analog_multicarrier(&own, &ry, 2).unwrap();
        assert_eq!(bf.matrix.ncols(), 2);
        for j in 0..2 {
            let col: crate::CVec = bf.matrix.column(j).into_owned();
            assert!((col.norm() - 1.0).abs() < 1e-9);
        }
        let top = &hermitian_eig(&own).unwrap()[0].vector;
        let c0: crate::CVec = bf.matrix.column(0).into_owned();
        let overlap = (top.adjoint() * &c0)[(0, 0)].norm();
        assert!(overlap > 0.98, "overlap {overlap}");
    }

    #[test]
    fn single_carrier_blocks_cover_paths() {
        let cfg = desk_cfg(64, 4);
        let angles = cfg.draw_user_angles(&mut derive(3, &[TAG_ANGLES]));
        let covs = build_covariances(&cfg, &angles).unwrap();
        let ry = received_covariance(&covs, &cfg.per_user_energies(10.0), 1.0);
        let bf = analog_single_carrier(&covs.path_sums[0], &ry, 6).unwrap();
        assert_eq!(bf.matrix.ncols(), 6);
        let total: usize = bf.path_allocation.iter().map(|&(_, c)| c).sum();
        assert_eq!(total, 6);
        assert!(bf.path_allocation.len() <= 3);
        for j in 0..6 {
            let col: crate::CVec = bf.matrix.column(j).into_owned();
            assert!((col.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn beamformer_rejects_other_groups() {
        let cfg = desk_cfg(64, 4);
        let angles = cfg.draw_user_angles(&mut derive(5, &[TAG_ANGLES]));
        let covs = build_covariances(&cfg, &angles).unwrap();
        let ry = received_covariance(&covs, &cfg.per_user_energies(10.0), 1.0);
        let bf = analog_single_carrier(&covs.path_sums[0], &ry, 6).unwrap();
        let mut rng = derive(6, &[TAG_CHANNEL]);
        let mut own = 0.0;
        let mut other = 0.0;
        for _ in 0..20 {
            let re = sample_channels(&covs, &mut rng);
            for tap in &re.taps[0] {
                own += (bf.matrix.adjoint() * tap).norm_squared() / tap.norm_squared();
            }
            for tap in &re.taps[2] {
                other += (bf.matrix.adjoint() * tap).norm_squared() / tap.norm_squared();
            }
        }
        let ratio = other / own;
        assert!(ratio < 0.02, "leakage ratio {ratio}");
    }

    fn toy_eff(seed: u64, d: usize, k: usize, delays: &[usize]) -> EffectiveChannel {
        let mut rng = derive(seed, &[77]);
        EffectiveChannel {
            taps: delays
                .iter()
                .map(|_| CMat::from_fn(d, k, |_, _| crate::rng::complex_gaussian(&mut rng)))
                .collect(),
            delays: delays.to_vec(),
        }
    }

    #[test]
    fn frequency_response_zero_subcarrier_sums_taps() {
        let eff = toy_eff(1, 4, 3, &[0, 2, 5]);
        let lam = frequency_response(&eff, 8);
        let direct = eff.taps[0].adjoint() + eff.taps[1].adjoint() + eff.taps[2].adjoint();
        assert!(rel_frobenius(&lam[0], &direct) < 1e-12);
        assert_eq!(lam.len(), 8);
        assert_eq!(lam[3].nrows(), 3);
        assert_eq!(lam[3].ncols(), 4);
    }

    #[test]
    fn frequency_response_satisfies_parseval() {
        let eff = toy_eff(2, 4, 3, &[0, 2, 5]);
        let n = 8;
        let lam = frequency_response(&eff, n);
        let mut lhs = CMat::zeros(3, 3);
        for l in &lam {
            lhs += l * l.adjoint();
        }
        lhs = lhs.scale(1.0 / n as f64);
        let mut rhs = CMat::zeros(3, 3);
        for t in &eff.taps {
            rhs += t.adjoint() * t;
        }
        assert!(rel_frobenius(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn downlink_cmf_is_adjoint() {
        let eff = toy_eff(3, 4, 3, &[0, 1]);
        let lam = frequency_response(&eff, 4);
        let w = digital_downlink(&lam[1], Combiner::Cmf, 1.0, 2.0, 3).unwrap();
        assert!(rel_frobenius(&w, &lam[1].adjoint()) < 1e-12);
    }

    #[test]
    fn downlink_zf_inverts_at_low_noise() {
        let eff = toy_eff(4, 5, 3, &[0, 1]);
        let lam = frequency_response(&eff, 4);
        let w = digital_downlink(&lam[2], Combiner::Zf, 1e-9, 1.0, 3).unwrap();
        let prod = &lam[2] * &w;
        assert!(rel_frobenius(&prod, &CMat::identity(3, 3)) < 1e-5);
    }

    #[test]
    fn downlink_zf_matches_scaled_cmf_at_high_noise() {
        let eff = toy_eff(5, 5, 3, &[0, 1]);
        let lam = frequency_response(&eff, 4);
        let n0 = 1e9;
        let (es, users) = (2.0, 3usize);
        let w = digital_downlink(&lam[1], Combiner::Zf, n0, es, users).unwrap();
        let approx = lam[1].adjoint().scale(es / (users as f64 * n0));
        assert!(rel_frobenius(&w, &approx) < 1e-6);
    }

    #[test]
    fn uplink_zf_zero_tap_approaches_identity() {
        let eff = toy_eff(6, 5, 3, &[0, 4]);
        let w = digital_uplink(&eff, Combiner::Zf, 1e-10, 1.0, 3).unwrap();
        let phi = gain_matrices(&w, &eff.delays, &eff);
        assert!(rel_frobenius(phi.zero_tap(), &CMat::identity(3, 3)) < 1e-6);
    }

    #[test]
    fn uplink_cmf_zero_tap_is_hermitian_psd() {
        let eff = toy_eff(7, 5, 3, &[0, 4, 6]);
        let w = digital_uplink(&eff, Combiner::Cmf, 1.0, 1.0, 3).unwrap();
        let phi = gain_matrices(&w, &eff.delays, &eff);
        let z = phi.zero_tap();
        assert!((z - z.adjoint()).norm() < 1e-10);
        for p in hermitian_eig(z).unwrap() {
            assert!(p.value > -1e-10);
        }
    }

    #[test]
    fn gain_matrices_follow_delay_differences() {
        let h0 = CMat::from_element(1, 1, crate::c64(2.0, 0.0));
        let h2 = CMat::from_element(1, 1, crate::c64(0.0, 1.0));
        let eff = EffectiveChannel { taps: alloc::vec![h0.clone(), h2.clone()], delays: alloc::vec![0, 2] };
        let w0 = CMat::from_element(1, 1, crate::c64(1.0, 0.0));
        let w2 = CMat::from_element(1, 1, crate::c64(0.5, 0.0));
        let phi = gain_matrices(&[w0, w2], &[0, 2], &eff);
        let qs: Vec<i64> = phi.taps.iter().map(|(q, _)| *q).collect();
        assert_eq!(qs, alloc::vec![-2, 0, 2]);
        assert!((phi.zero_tap()[(0, 0)] - crate::c64(2.0, 0.5)).norm() < 1e-12);
        assert!((phi.at(2).unwrap()[(0, 0)] - crate::c64(0.0, 1.0)).norm() < 1e-12);
        assert!((phi.at(-2).unwrap()[(0, 0)] - crate::c64(1.0, 0.0)).norm() < 1e-12);
        assert!(phi.at(1).is_none());
    }

    #[test]
    fn noise_correlation_single_tap_is_white_across_lags() {
        let mut s = CMat::zeros(6, 2);
        s[(0, 0)] = crate::c64(1.0, 0.0);
        s[(1, 1)] = crate::c64(1.0, 0.0);
        let w = alloc::vec![CMat::from_fn(2, 3, |i, j| crate::c64((i + j) as f64, 0.3))];
        let lags = noise_correlation(&w, &[0], &s, 2.0, 4);
        for (q, r) in &lags {
            if *q == 0 {
                let expect = (w[0].adjoint() * &w[0]).scale(2.0);
                assert!(rel_frobenius(r, &expect) < 1e-12);
            } else {
                assert!(r.norm() < 1e-14, "lag {q} not zero");
            }
        }
    }

    #[test]
    fn noise_correlation_has_hermitian_lag_symmetry() {
        let eff = toy_eff(8, 5, 3, &[0, 2, 5]);
        let mut rng = derive(9, &[5]);
        let s = CMat::from_fn(7, 5, |_, _| crate::rng::complex_gaussian(&mut rng));
        let w = digital_uplink(&eff, Combiner::Zf, 0.5, 1.0, 3).unwrap();
        let lags = noise_correlation(&w, &eff.delays, &s, 0.5, 4);
        for (q, r) in &lags {
            let other = lags.iter().find(|(p, _)| *p == -*q).unwrap();
            assert!(rel_frobenius(&other.1.adjoint(), r) < 1e-10);
        }
    }

    #[test]
    fn stream_noise_correlation_is_toeplitz_slice() {
        let eff = toy_eff(10, 5, 3, &[0, 1, 3]);
        let mut rng = derive(11, &[5]);
        let s = CMat::from_fn(7, 5, |_, _| crate::rng::complex_gaussian(&mut rng));
        let w = digital_uplink(&eff, Combiner::Cmf, 1.0, 1.0, 3).unwrap();
        let lags = noise_correlation(&w, &eff.delays, &s, 1.0, 4);
        let rn = stream_noise_correlation(&lags, 1, 4);
        assert_eq!(rn.nrows(), 4);
        assert!((&rn - rn.adjoint()).norm() < 1e-10);
        for i in 1..4 {
            for j in 1..4 {
                assert!((rn[(i, j)] - rn[(i - 1, j - 1)]).norm() < 1e-12);
            }
        }
        let r1 = lags.iter().find(|(p, _)| *p == 1).unwrap();
        assert!((rn[(1, 0)] - r1.1[(1, 1)]).norm() < 1e-12);
    }

    #[test]
    fn precoder_power_isometry_counts_users() {
        let d = 4;
        let k = 3;
        let mut s = CMat::zeros(8, d);
        for j in 0..d {
            s[(j, j)] = crate::c64(1.0, 0.0);
        }
        let mut w = CMat::zeros(d, k);
        for j in 0..k {
            w[(j, j)] = crate::c64(1.0, 0.0);
        }
        let chip_var = alloc::vec![alloc::vec![1.0; k]; 2];
        let p = average_precoder_power(&alloc::vec![w.clone(), w.clone()], &chip_var, &s);
        assert!((p - k as f64).abs() < 1e-12);
        let p4 = average_precoder_power(&alloc::vec![w.scale(2.0); 2], &chip_var, &s);
        assert!((p4 - 4.0 * k as f64).abs() < 1e-12);
    }

    #[test]
    fn precoder_power_respects_chip_variances() {
        let mut s = CMat::zeros(4, 2);
        s[(0, 0)] = crate::c64(1.0, 0.0);
        s[(1, 1)] = crate::c64(1.0, 0.0);
        let mut w = CMat::zeros(2, 2);
        w[(0, 0)] = crate::c64(1.0, 0.0);
        w[(1, 1)] = crate::c64(1.0, 0.0);
        let chip_var = alloc::vec![alloc::vec![2.0, 0.0], alloc::vec![0.0, 2.0]];
        let p = average_precoder_power(&alloc::vec![w.clone(), w], &chip_var, &s);
        assert!((p - 2.0).abs() < 1e-12);
    }

    #[test]
    fn response_second_moment_matches_projected_covariance() {
        let cfg = desk_cfg(8, 2);
        let angles = cfg.draw_user_angles(&mut derive(21, &[TAG_ANGLES]));
        let covs = build_covariances(&cfg, &angles).unwrap();
        let ry = received_covariance(&covs, &cfg.per_user_energies(4.0), 1.0);
        let bf = analog_multicarrier(&covs.group_sums[1], &ry, 3).unwrap();
        let mut rng = derive(22, &[TAG_CHANNEL]);
        let n = 16;
        let mut acc = alloc::vec![CMat::zeros(3, 3); 2];
        let draws = 10_000;
        for _ in 0..draws {
            let re = sample_channels(&covs, &mut rng);
            let eff = effective_channels(&bf.matrix, &re.taps[1], &re.delays[1]);
            let lam = frequency_response(&eff, n);
            acc[0] += lam[0].adjoint() * &lam[0];
            acc[1] += lam[n / 2].adjoint() * &lam[n / 2];
        }
        let expect = bf.matrix.adjoint() * &covs.group_sums[1] * &bf.matrix;
        for a in &mut acc {
            *a = a.scale(1.0 / draws as f64);
            let err = rel_frobenius(a, &expect);
            assert!(err < 0.05, "moment mismatch {err}");
        }
    }

    #[test]
    fn power_scaling_is_deterministic_and_converged() {
        let cfg = desk_cfg(16, 3);
        let angles = cfg.draw_user_angles(&mut derive(13, &[TAG_ANGLES]));
        let covs = build_covariances(&cfg, &angles).unwrap();
        let ry = received_covariance(&covs, &cfg.per_user_energies(4.0), 1.0);
        let bf = analog_multicarrier(&covs.group_sums[0], &ry, 4).unwrap();
        let chip_var = alloc::vec![alloc::vec![1.0; 3]; 4];
        let run = |seed, draws| {
            power_scaling(
                &covs,
                0,
                &bf.matrix,
                Combiner::Zf,
                &chip_var,
                1.0,
                6.0,
                16,
                draws,
                &mut derive(seed, &[TAG_POWER]),
            )
            .unwrap()
        };
        let a = run(1, 200);
        let b = run(1, 200);
        assert_eq!(a, b);
        let c = run(2, 400);
        assert!(a > 0.0);
        assert!((a - c).abs() / c < 0.1, "a {a} c {c}");
    }
}
