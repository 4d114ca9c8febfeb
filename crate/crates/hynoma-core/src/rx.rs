//! Multiuser detectors operating on per-user chip windows.
//!
//! All detectors see the same abstraction: an observation window `z` of
//! code-length chips, an equivalent channel matrix `H_eq` whose column `m`
//! is the effective spreading signature of user `m` in this stream, and the
//! chip-noise covariance `R_n` of the stream. Sparse codebooks are decoded
//! by log-domain message passing, dense codes by MMSE-SIC, and the uplink
//! combines per-stream SIC with parallel cancellation rounds.

use crate::linalg::{solve_hermitian_pd, LinalgError};
use crate::noma::{gray_qpsk, ScmaCodebook};
use crate::{c64, CMat, CVec, C64};
use alloc::vec::Vec;

/// Hard decision for a Gray QPSK estimate, resolved by quadrant.
pub fn nearest_qpsk(estimate: C64) -> usize {
    let b0 = usize::from(estimate.re < 0.0);
    let b1 = usize::from(estimate.im < 0.0);
    (b0 << 1) | b1
}

fn col(m: &CMat, j: usize) -> CVec {
    m.column(j).into_owned()
}

fn as_matrix(v: &CVec) -> CMat {
    CMat::from_column_slice(v.len(), 1, v.as_slice())
}

/// Linear MMSE filter `W = H^H (H H^H + R_n)^{-1}`, users x code_length.
pub fn mmse_filter(h_eq: &CMat, r_n: &CMat) -> Result<CMat, LinalgError> {
    let n = r_n.nrows();
    let a = h_eq * h_eq.adjoint() + r_n;
    let inv = solve_hermitian_pd(&a, &CMat::identity(n, n))?;
    Ok(h_eq.adjoint() * inv)
}

/// Post-MMSE SINR of one user by the interference-exclusion quadratic form:
/// `h_m^H (sum_{j != m} h_j h_j^H + R_n)^{-1} h_m`.
pub fn sinr(h_eq: &CMat, r_n: &CMat, user: usize) -> Result<f64, LinalgError> {
    let mut a = r_n.clone();
    for j in 0..h_eq.ncols() {
        if j != user {
            let h = col(h_eq, j);
            a += &h * h.adjoint();
        }
    }
    let h = col(h_eq, user);
    let x = solve_hermitian_pd(&a, &as_matrix(&h))?;
    Ok((h.adjoint() * x)[(0, 0)].re)
}

/// SINRs of every flagged user sharing one total covariance, through the
/// rank-one identity `sinr = q / (1 - q)` with `q = h^H A^{-1} h` and
/// `A` the all-inclusive covariance. Exactly equal to [`sinr`].
pub fn sinr_active(
    h_eq: &CMat,
    r_n: &CMat,
    active: &[bool],
) -> Result<Vec<f64>, LinalgError> {
    let n = r_n.nrows();
    let mut a = r_n.clone();
    for (j, &on) in active.iter().enumerate() {
        if on {
            let h = col(h_eq, j);
            a += &h * h.adjoint();
        }
    }
    let inv = solve_hermitian_pd(&a, &CMat::identity(n, n))?;
    Ok(active
        .iter()
        .enumerate()
        .map(|(j, &on)| {
            if !on {
                return 0.0;
            }
            let h = col(h_eq, j);
            let q = (h.adjoint() * &inv * &h)[(0, 0)].re;
            q / (1.0 - q).max(1e-300)
        })
        .collect())
}

/// Precomputed successive-cancellation schedule for one stream: detection
/// order, per-stage MMSE filters against the not-yet-cancelled users, and
/// the SINR table before any cancellation.
pub struct SicPlan {
    /// Users in detection order.
    pub order: Vec<usize>,
    /// Filter applied at each stage; the estimate is `filters[t]^H z`.
    pub filters: Vec<CVec>,
    /// SINR of every user before cancellation starts.
    pub initial_sinr: Vec<f64>,
}

/// Builds the cancellation schedule: at every stage the highest-SINR
/// remaining user is detected with an MMSE filter that treats only the
/// remaining users as interference. Ties pick the lowest user index.
pub fn sic_plan(h_eq: &CMat, r_n: &CMat) -> Result<SicPlan, LinalgError> {
    let k = h_eq.ncols();
    let n = r_n.nrows();
    let mut active = alloc::vec![true; k];
    let mut order = Vec::with_capacity(k);
    let mut filters = Vec::with_capacity(k);
    let mut initial_sinr = Vec::new();
    for stage in 0..k {
        let mut a = r_n.clone();
        for (j, &on) in active.iter().enumerate() {
            if on {
                let h = col(h_eq, j);
                a += &h * h.adjoint();
            }
        }
        let inv = solve_hermitian_pd(&a, &CMat::identity(n, n))?;
        let mut best: Option<(usize, f64)> = None;
        let mut stage_sinr = alloc::vec![0.0; k];
        for (j, &on) in active.iter().enumerate() {
            if !on {
                continue;
            }
            let h = col(h_eq, j);
            let q = (h.adjoint() * &inv * &h)[(0, 0)].re;
            let s = q / (1.0 - q).max(1e-300);
            stage_sinr[j] = s;
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        if stage == 0 {
            initial_sinr = stage_sinr;
        }
        let (u, _) = best.expect("at least one active user");
        filters.push(&inv * col(h_eq, u));
        order.push(u);
        active[u] = false;
    }
    Ok(SicPlan { order, filters, initial_sinr })
}

/// Runs successive cancellation on one window with a prebuilt plan:
/// estimate, hard-decide, subtract the reconstructed signature, repeat.
/// Returns the decided symbol index of every user.
pub fn run_sic(plan: &SicPlan, h_eq: &CMat, window: &CVec) -> Vec<usize> {
    let mut z = window.clone();
    let mut decisions = alloc::vec![0usize; h_eq.ncols()];
    for (filter, &u) in plan.filters.iter().zip(&plan.order) {
        let estimate = (filter.adjoint() * &z)[(0, 0)];
        let idx = nearest_qpsk(estimate);
        decisions[u] = idx;
        let h = col(h_eq, u);
        let a = gray_qpsk(idx);
        for i in 0..z.len() {
            z[i] -= h[i] * a;
        }
    }
    decisions
}

/// Plain MMSE detection of every user on one window.
pub fn mmse_decide(w: &CMat, window: &CVec) -> Vec<usize> {
    let est = w * window;
    (0..est.len()).map(|j| nearest_qpsk(est[j])).collect()
}

/// One parallel-cancellation step for a single user on its own stream:
/// subtract every other user's reconstructed signature using the current
/// decisions, matched-filter with the user's own signature, hard-decide.
/// Returns the soft estimate and the new decision.
pub fn pic_round(
    window: &CVec,
    h_eq: &CMat,
    own: usize,
    decisions: &[usize],
) -> (C64, usize) {
    let mut resid = window.clone();
    for m in 0..h_eq.ncols() {
        if m == own {
            continue;
        }
        let a = gray_qpsk(decisions[m]);
        for i in 0..resid.len() {
            resid[i] -= h_eq[(i, m)] * a;
        }
    }
    let h = col(h_eq, own);
    let estimate = (h.adjoint() * resid)[(0, 0)] / c64(h.norm_squared(), 0.0);
    (estimate, nearest_qpsk(estimate))
}

/// Genie baseline: cancel all interferers with their true symbols, then
/// matched-filter and decide. Shares the cancellation path of
/// [`pic_round`] exactly.
pub fn mfb_decode(
    window: &CVec,
    h_eq: &CMat,
    own: usize,
    true_symbols: &[usize],
) -> (C64, usize) {
    pic_round(window, h_eq, own, true_symbols)
}

/// Picks, for every user, the stream whose pre-cancellation SINR for that
/// user is highest. Ties resolve to the lowest stream index.
pub fn select_streams(plans: &[SicPlan]) -> Vec<usize> {
    let users = plans[0].initial_sinr.len();
    (0..users)
        .map(|u| {
            let mut best = 0usize;
            for (m, plan) in plans.iter().enumerate() {
                if plan.initial_sinr[u] > plans[best].initial_sinr[u] {
                    best = m;
                }
            }
            best
        })
        .collect()
}

/// Full decision trace of the combined receiver on one symbol slot.
pub struct PicTrace {
    /// Decisions adopted after per-stream cancellation and stream selection.
    pub stage1: Vec<usize>,
    /// Decisions after each parallel round, `rounds[i]` for round `i+1`.
    pub rounds: Vec<Vec<usize>>,
    /// Soft estimates per round, aligned with `rounds`.
    pub soft: Vec<Vec<C64>>,
}

/// The combined uplink receiver for one slot: successive cancellation on
/// every stream, adoption of each user's decision from its best stream,
/// then synchronous parallel-cancellation rounds on each user's own stream.
pub fn pic_aided_decode(
    windows: &[CVec],
    h_eq: &[CMat],
    plans: &[SicPlan],
    max_iterations: usize,
) -> PicTrace {
    let users = h_eq[0].ncols();
    let per_stream: Vec<Vec<usize>> = windows
        .iter()
        .zip(h_eq)
        .zip(plans)
        .map(|((z, h), plan)| run_sic(plan, h, z))
        .collect();
    let chosen = select_streams(plans);
    let stage1: Vec<usize> = (0..users).map(|u| per_stream[chosen[u]][u]).collect();
    let mut current = stage1.clone();
    let mut rounds = Vec::with_capacity(max_iterations);
    let mut soft = Vec::with_capacity(max_iterations);
    for _ in 0..max_iterations {
        let mut next = alloc::vec![0usize; users];
        let mut estimates = Vec::with_capacity(users);
        for m in 0..users {
            let (est, idx) = pic_round(&windows[m], &h_eq[m], m, &current);
            next[m] = idx;
            estimates.push(est);
        }
        current = next;
        rounds.push(current.clone());
        soft.push(estimates);
    }
    PicTrace { stage1, rounds, soft }
}

/// Single-resource slicer for unspread streams: matched-filter by the
/// scalar gain and hard-decide.
pub fn zf_slice(sample: C64, gain: C64) -> (C64, usize) {
    let estimate = sample * gain.conj() / c64(gain.norm_sqr(), 0.0);
    (estimate, nearest_qpsk(estimate))
}

/// Message-passing numeric domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpaDomain {
    /// Full log-sum-exp marginalization.
    SumProduct,
    /// Max approximation of the marginalization.
    MaxLog,
}

/// Message-passing decoder settings.
#[derive(Debug, Clone, Copy)]
pub struct MpaConfig {
    /// Iteration budget.
    pub iterations: usize,
    /// Marginalization rule.
    pub domain: MpaDomain,
}

impl Default for MpaConfig {
    fn default() -> Self {
        Self { iterations: 10, domain: MpaDomain::SumProduct }
    }
}

/// Message-passing decoder output for one window.
pub struct MpaOutcome {
    /// Hard decision per user, argmax of the posterior.
    pub decisions: Vec<usize>,
    /// Normalized posterior per user, sums to one.
    pub posteriors: Vec<Vec<f64>>,
    /// Iterations actually executed before convergence.
    pub iterations: usize,
}

fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for &t in terms {
        let d = t - m;
        if d > -40.0 {
            s += libm::exp(d);
        }
    }
    m + libm::log(s)
}

fn reduce(domain: MpaDomain, terms: &[f64]) -> f64 {
    match domain {
        MpaDomain::SumProduct => logsumexp(terms),
        MpaDomain::MaxLog => terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
    }
}

/// Log-domain message passing on the codebook factor graph.
///
/// The observation model per resource `r` is `z_r = sum_u gains[(r,u)]
/// chip(u, sym_u, r) + noise_r` with independent complex Gaussian noise of
/// variance `noise_vars[r]`; only the users occupying `r` enter the factor.
pub fn mpa_decode(
    codebook: &ScmaCodebook,
    gains: &CMat,
    window: &CVec,
    noise_vars: &[f64],
    cfg: &MpaConfig,
) -> MpaOutcome {
    let users = codebook.users();
    let alphabet = codebook.alphabet();
    let nc = codebook.code_length();

    // Per-resource factor tables: metric over every local symbol combination.
    struct Factor {
        members: Vec<usize>,
        metrics: Vec<f64>,
    }
    let mut factors = Vec::with_capacity(nc);
    for r in 0..nc {
        let members = codebook.resource_users(r).to_vec();
        let d = members.len();
        let combos = alphabet.pow(d as u32);
        let contrib: Vec<Vec<C64>> = members
            .iter()
            .map(|&u| (0..alphabet).map(|m| gains[(r, u)] * codebook.chip(u, m, r)).collect())
            .collect();
        let mut metrics = Vec::with_capacity(combos);
        let inv_var = 1.0 / noise_vars[r].max(1e-300);
        for c in 0..combos {
            let mut acc = window[r];
            let mut rem = c;
            for table in &contrib {
                acc -= table[rem % alphabet];
                rem /= alphabet;
            }
            metrics.push(-acc.norm_sqr() * inv_var);
        }
        factors.push(Factor { members, metrics });
    }

    let occ: Vec<&[usize]> = (0..users).map(|u| codebook.occupancy(u)).collect();
    let mut to_factor = alloc::vec![alloc::vec![alloc::vec![0.0f64; alphabet]; nc]; users];
    let mut to_user = alloc::vec![alloc::vec![alloc::vec![0.0f64; alphabet]; users]; nc];
    let mut beliefs = alloc::vec![alloc::vec![0.0f64; alphabet]; users];
    let mut iterations = 0;
    let mut totals: Vec<f64> = Vec::new();
    let mut class: Vec<f64> = Vec::with_capacity(alphabet.pow(3));

    for _ in 0..cfg.iterations {
        iterations += 1;
        for (r, f) in factors.iter().enumerate() {
            totals.clear();
            totals.extend_from_slice(&f.metrics);
            for (c, t) in totals.iter_mut().enumerate() {
                let mut rem = c;
                for &u in &f.members {
                    *t += to_factor[u][r][rem % alphabet];
                    rem /= alphabet;
                }
            }
            for (slot, &u) in f.members.iter().enumerate() {
                let stride = alphabet.pow(slot as u32);
                for m in 0..alphabet {
                    class.clear();
                    for (c, &t) in totals.iter().enumerate() {
                        if (c / stride) % alphabet == m {
                            class.push(t);
                        }
                    }
                    to_user[r][u][m] = reduce(cfg.domain, &class) - to_factor[u][r][m];
                }
                let peak =
                    to_user[r][u].iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                for m in 0..alphabet {
                    to_user[r][u][m] -= peak;
                }
            }
        }
        let mut delta = 0.0f64;
        for u in 0..users {
            let mut b = alloc::vec![0.0f64; alphabet];
            for &r in occ[u] {
                for m in 0..alphabet {
                    b[m] += to_user[r][u][m];
                }
            }
            let peak = b.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            for m in 0..alphabet {
                b[m] -= peak;
                delta = delta.max((b[m] - beliefs[u][m]).abs());
            }
            for &r in occ[u] {
                for m in 0..alphabet {
                    to_factor[u][r][m] = b[m] - to_user[r][u][m];
                }
            }
            beliefs[u] = b;
        }
        if delta < 1e-13 {
            break;
        }
    }

    let mut decisions = Vec::with_capacity(users);
    let mut posteriors = Vec::with_capacity(users);
    for b in &beliefs {
        let norm = logsumexp(b);
        let post: Vec<f64> = b.iter().map(|&x| libm::exp(x - norm)).collect();
        let mut best = 0usize;
        for m in 1..post.len() {
            if post[m] > post[best] {
                best = m;
            }
        }
        decisions.push(best);
        posteriors.push(post);
    }
    MpaOutcome { decisions, posteriors, iterations }
}

/// Exhaustive joint MAP marginals under the same observation model as
/// [`mpa_decode`]; exponential in the user count, for oracle checks.
pub fn map_marginals(
    codebook: &ScmaCodebook,
    gains: &CMat,
    window: &CVec,
    noise_vars: &[f64],
) -> Vec<Vec<f64>> {
    let users = codebook.users();
    let alphabet = codebook.alphabet();
    let nc = codebook.code_length();
    let combos = alphabet.pow(users as u32);
    let mut joint = Vec::with_capacity(combos);
    for c in 0..combos {
        let mut rem = c;
        let syms: Vec<usize> = (0..users)
            .map(|_| {
                let s = rem % alphabet;
                rem /= alphabet;
                s
            })
            .collect();
        let mut metric = 0.0;
        for r in 0..nc {
            let mut acc = window[r];
            for (u, &s) in syms.iter().enumerate() {
                acc -= gains[(r, u)] * codebook.chip(u, s, r);
            }
            metric -= acc.norm_sqr() / noise_vars[r].max(1e-300);
        }
        joint.push(metric);
    }
    let norm = logsumexp(&joint);
    (0..users)
        .map(|u| {
            let stride = alphabet.pow(u as u32);
            (0..alphabet)
                .map(|m| {
                    let class: Vec<f64> = joint
                        .iter()
                        .enumerate()
                        .filter(|(c, _)| (c / stride) % alphabet == m)
                        .map(|(_, &t)| t)
                        .collect();
                    libm::exp(logsumexp(&class) - norm)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;
    use crate::noma::{draw_symbols, MusaCodeSet};
    use crate::rng::{complex_gaussian, derive};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_mat(rng: &mut impl Rng, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| complex_gaussian(rng))
    }

    fn spd_noise(rng: &mut impl Rng, n: usize) -> CMat {
        let l = random_mat(rng, n, n);
        &l * l.adjoint() + CMat::identity(n, n).scale(0.1)
    }

    #[test]
    fn qpsk_slicer_matches_constellation() {
        for m in 0..4 {
            assert_eq!(nearest_qpsk(gray_qpsk(m)), m);
            let off = gray_qpsk(m) + c64(0.2, -0.15);
            assert_eq!(nearest_qpsk(off), m);
        }
    }

    #[test]
    fn mmse_identity_channel_shrinks() {
        let h = CMat::identity(2, 2);
        let r = CMat::identity(2, 2).scale(0.5);
        let w = mmse_filter(&h, &r).unwrap();
        let expect = CMat::identity(2, 2).scale(1.0 / 1.5);
        assert!(rel_frobenius(&w, &expect) < 1e-12);
    }

    #[test]
    fn mmse_high_noise_is_matched_filter() {
        let mut rng = derive(41, &[1]);
        let h = random_mat(&mut rng, 3, 2);
        let n0 = 1e9;
        let w = mmse_filter(&h, &CMat::identity(3, 3).scale(n0)).unwrap();
        let expect = h.adjoint().scale(1.0 / n0);
        assert!(rel_frobenius(&w, &expect) < 1e-6);
    }

    #[test]
    fn mmse_is_locally_optimal() {
        let mut rng = derive(43, &[1]);
        let h = random_mat(&mut rng, 3, 4);
        let r = spd_noise(&mut rng, 3);
        let w = mmse_filter(&h, &r).unwrap();
        let mse = |w: &CMat| -> f64 {
            let e = CMat::identity(4, 4) - w * &h;
            (&e * e.adjoint() + w * &r * w.adjoint()).trace().re
        };
        let base = mse(&w);
        for _ in 0..20 {
            let d = random_mat(&mut rng, 4, 3).scale(0.01);
            assert!(mse(&(&w + d)) >= base - 1e-12);
        }
    }

    #[test]
    fn sinr_interference_free_is_snr() {
        let mut h = CMat::zeros(3, 2);
        h[(0, 0)] = c64(2.0, 0.0);
        h[(1, 1)] = c64(1.0, 1.0);
        let r = CMat::identity(3, 3).scale(0.25);
        assert!((sinr(&h, &r, 0).unwrap() - 16.0).abs() < 1e-10);
        assert!((sinr(&h, &r, 1).unwrap() - 8.0).abs() < 1e-10);
    }

    #[test]
    fn sinr_two_user_closed_form() {
        let rho: f64 = 0.6;
        let n0 = 0.3;
        let mut h = CMat::zeros(2, 2);
        h[(0, 0)] = c64(1.0, 0.0);
        h[(0, 1)] = c64(rho, 0.0);
        h[(1, 1)] = c64(libm::sqrt(1.0 - rho * rho), 0.0);
        let r = CMat::identity(2, 2).scale(n0);
        let expect = (1.0 - rho * rho / (n0 + 1.0)) / n0;
        assert!((sinr(&h, &r, 0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn sinr_never_improves_with_interferers() {
        let mut rng = derive(45, &[1]);
        for _ in 0..20 {
            let h2 = random_mat(&mut rng, 3, 2);
            let h3 = {
                let mut m = CMat::zeros(3, 3);
                m.view_mut((0, 0), (3, 2)).copy_from(&h2);
                m.set_column(2, &random_mat(&mut rng, 3, 1).column(0).into_owned());
                m
            };
            let r = spd_noise(&mut rng, 3);
            let a = sinr(&h2, &r, 0).unwrap();
            let b = sinr(&h3, &r, 0).unwrap();
            assert!(b <= a + 1e-10);
        }
    }

    #[test]
    fn sinr_identity_between_forms() {
        let mut rng = derive(47, &[1]);
        for _ in 0..20 {
            let h = random_mat(&mut rng, 3, 5);
            let r = spd_noise(&mut rng, 3);
            let fast = sinr_active(&h, &r, &[true; 5]).unwrap();
            for u in 0..5 {
                let direct = sinr(&h, &r, u).unwrap();
                assert!(
                    (fast[u] - direct).abs() <= 1e-10 * direct.abs().max(1.0),
                    "user {u}: {} vs {direct}",
                    fast[u]
                );
            }
        }
    }

    #[test]
    fn sic_orders_by_strength_and_recovers() {
        let mut h = CMat::zeros(2, 2);
        h[(0, 0)] = c64(3.0, 0.0);
        h[(1, 1)] = c64(1.0, 0.0);
        let r = CMat::identity(2, 2).scale(0.01);
        let plan = sic_plan(&h, &r).unwrap();
        assert_eq!(plan.order, alloc::vec![0, 1]);
        assert!(plan.initial_sinr[0] > plan.initial_sinr[1]);
        let truth = [2usize, 1usize];
        let z = col(&h, 0) * gray_qpsk(truth[0]) + col(&h, 1) * gray_qpsk(truth[1]);
        assert_eq!(run_sic(&plan, &h, &z), truth);
    }

    #[test]
    fn sic_ties_take_lowest_index() {
        let h = CMat::identity(2, 2);
        let r = CMat::identity(2, 2).scale(0.5);
        let plan = sic_plan(&h, &r).unwrap();
        assert_eq!(plan.order[0], 0);
    }

    #[test]
    fn sic_beats_plain_mmse_on_average() {
        let mut rng = derive(49, &[1]);
        let mut err_sic = 0u32;
        let mut err_mmse = 0u32;
        for _ in 0..300 {
            let h = random_mat(&mut rng, 2, 4);
            let r = CMat::identity(2, 2).scale(0.05);
            let plan = sic_plan(&h, &r).unwrap();
            let w = mmse_filter(&h, &r).unwrap();
            let truth: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
            let mut z = CVec::zeros(2);
            for (u, &s) in truth.iter().enumerate() {
                z += col(&h, u) * gray_qpsk(s);
            }
            for i in 0..2 {
                z[i] += complex_gaussian(&mut rng) * c64(libm::sqrt(0.05), 0.0);
            }
            let d_sic = run_sic(&plan, &h, &z);
            let d_mmse = mmse_decide(&w, &z);
            err_sic += truth.iter().zip(&d_sic).filter(|(a, b)| a != b).count() as u32;
            err_mmse += truth.iter().zip(&d_mmse).filter(|(a, b)| a != b).count() as u32;
        }
        assert!(err_sic <= err_mmse, "sic {err_sic} mmse {err_mmse}");
    }

    #[test]
    fn stream_selection_prefers_highest_initial_sinr() {
        let mk = |sinrs: Vec<f64>| SicPlan {
            order: alloc::vec![],
            filters: alloc::vec![],
            initial_sinr: sinrs,
        };
        let plans = alloc::vec![
            mk(alloc::vec![1.0, 9.0, 4.0]),
            mk(alloc::vec![5.0, 9.0, 2.0]),
            mk(alloc::vec![5.0, 3.0, 8.0]),
        ];
        assert_eq!(select_streams(&plans), alloc::vec![1, 0, 2]);
    }

    #[test]
    fn pic_zero_rounds_is_stage_one() {
        let mut rng = derive(51, &[1]);
        let streams = 3;
        let h: Vec<CMat> = (0..streams).map(|_| random_mat(&mut rng, 2, 3)).collect();
        let r = CMat::identity(2, 2).scale(0.1);
        let plans: Vec<SicPlan> = h.iter().map(|hm| sic_plan(hm, &r).unwrap()).collect();
        let windows: Vec<CVec> =
            (0..streams).map(|_| random_mat(&mut rng, 2, 1).column(0).into_owned()).collect();
        let trace = pic_aided_decode(&windows, &h, &plans, 0);
        assert!(trace.rounds.is_empty());
        assert!(trace.soft.is_empty());
        assert_eq!(trace.stage1.len(), 3);
    }

    #[test]
    fn pic_round_with_truth_matches_mfb() {
        let mut rng = derive(53, &[1]);
        let h = random_mat(&mut rng, 4, 3);
        let truth = [1usize, 3, 0];
        let mut z = CVec::zeros(4);
        for (u, &s) in truth.iter().enumerate() {
            z += col(&h, u) * gray_qpsk(s);
        }
        for i in 0..4 {
            z[i] += complex_gaussian(&mut rng) * c64(0.3, 0.0);
        }
        for own in 0..3 {
            let (a1, d1) = pic_round(&z, &h, own, &truth);
            let (a2, d2) = mfb_decode(&z, &h, own, &truth);
            assert_eq!(a1, a2);
            assert_eq!(d1, d2);
        }
    }

    #[test]
    fn pic_rounds_recover_noiseless_mixture() {
        let mut rng = derive(55, &[1]);
        let cs = MusaCodeSet::generate(5, 4, &mut rng).unwrap();
        let truth: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
        let h = CMat::from_fn(4, 5, |i, u| cs.code(u)[i]);
        let mut z = CVec::zeros(4);
        for (u, &s) in truth.iter().enumerate() {
            z += col(&h, u) * gray_qpsk(s);
        }
        let r = CMat::identity(4, 4).scale(1e-4);
        let windows: Vec<CVec> = (0..5).map(|_| z.clone()).collect();
        let hs: Vec<CMat> = (0..5).map(|_| h.clone()).collect();
        let plans: Vec<SicPlan> = (0..5).map(|_| sic_plan(&h, &r).unwrap()).collect();
        let trace = pic_aided_decode(&windows, &hs, &plans, 2);
        assert_eq!(trace.rounds[1], truth);
    }

    #[test]
    fn mfb_noise_variance_after_matched_filter() {
        let mut rng = derive(57, &[1]);
        let nc = 4;
        let h = CMat::from_fn(nc, 1, |_, _| c64(1.0, 0.0));
        let n0 = 0.8;
        let mut acc = 0.0;
        let draws = 4000;
        for _ in 0..draws {
            let truth = [rng.random_range(0..4usize)];
            let mut z = col(&h, 0) * gray_qpsk(truth[0]);
            for i in 0..nc {
                z[i] += complex_gaussian(&mut rng) * c64(libm::sqrt(n0), 0.0);
            }
            let (a, _) = mfb_decode(&z, &h, 0, &truth);
            acc += (a - gray_qpsk(truth[0])).norm_sqr();
        }
        let var = acc / draws as f64;
        let expect = n0 / nc as f64;
        assert!((var - expect).abs() / expect < 0.1, "var {var} expect {expect}");
    }

    #[test]
    fn zf_slice_is_scale_and_phase_invariant() {
        let g = c64(0.7, -1.1);
        for m in 0..4 {
            let (est, idx) = zf_slice(g * gray_qpsk(m), g);
            assert_eq!(idx, m);
            assert!((est - gray_qpsk(m)).norm() < 1e-12);
        }
    }

    fn unit_gains(nc: usize, users: usize) -> CMat {
        CMat::from_element(nc, users, c64(1.0, 0.0))
    }

    #[test]
    fn mpa_tree_matches_exhaustive_map() {
        let cb = ScmaCodebook::toy_tree();
        let gains = unit_gains(2, 3);
        let vars = [0.5, 0.5];
        let mut rng = derive(59, &[1]);
        for _ in 0..50 {
            let truth = draw_symbols(&mut rng, 3, 1, 2);
            let mut z = CVec::zeros(2);
            for u in 0..3 {
                z += cb.codeword(u, truth[u][0]).clone();
            }
            for i in 0..2 {
                z[i] += complex_gaussian(&mut rng) * c64(libm::sqrt(0.5), 0.0);
            }
            let out = mpa_decode(&cb, &gains, &z, &vars, &MpaConfig::default());
            let oracle = map_marginals(&cb, &gains, &z, &vars);
            for u in 0..3 {
                let s: f64 = out.posteriors[u].iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                for m in 0..2 {
                    assert!(
                        (out.posteriors[u][m] - oracle[u][m]).abs() < 1e-9,
                        "user {u} sym {m}: {} vs {}",
                        out.posteriors[u][m],
                        oracle[u][m]
                    );
                }
            }
        }
    }

    #[test]
    fn mpa_single_user_equals_ml() {
        let raw = alloc::vec![(0..4)
            .map(|m| CVec::from_row_slice(&[gray_qpsk(m), gray_qpsk(m) * c64(0.0, 1.0)]))
            .collect::<Vec<_>>()];
        let cb = ScmaCodebook::new(raw).unwrap();
        let gains = unit_gains(2, 1);
        let vars = [0.4, 0.4];
        let mut rng = derive(61, &[1]);
        for _ in 0..40 {
            let truth = rng.random_range(0..4usize);
            let mut z = cb.codeword(0, truth).clone();
            for i in 0..2 {
                z[i] += complex_gaussian(&mut rng) * c64(libm::sqrt(0.4), 0.0);
            }
            let out = mpa_decode(&cb, &gains, &z, &vars, &MpaConfig::default());
            let mut best = 0;
            let mut best_metric = f64::NEG_INFINITY;
            for m in 0..4 {
                let d = (&z - cb.codeword(0, m)).norm_squared();
                if -d > best_metric {
                    best_metric = -d;
                    best = m;
                }
            }
            assert_eq!(out.decisions[0], best);
            let oracle = map_marginals(&cb, &gains, &z, &vars);
            for m in 0..4 {
                assert!((out.posteriors[0][m] - oracle[0][m]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mpa_decodes_bundled_codebook_noiseless() {
        let cb = ScmaCodebook::bundled();
        let gains = unit_gains(4, 6);
        let vars = [1e-3; 4];
        let mut rng = derive(63, &[1]);
        for _ in 0..20 {
            let truth = draw_symbols(&mut rng, 6, 1, 4);
            let mut z = CVec::zeros(4);
            for u in 0..6 {
                z += cb.codeword(u, truth[u][0]).clone();
            }
            let out = mpa_decode(&cb, &gains, &z, &vars, &MpaConfig::default());
            for u in 0..6 {
                assert_eq!(out.decisions[u], truth[u][0], "user {u}");
                assert!(out.posteriors[u][truth[u][0]] > 0.999);
            }
        }
    }

    #[test]
    fn mpa_max_log_agrees_on_clean_input() {
        let cb = ScmaCodebook::bundled();
        let gains = unit_gains(4, 6);
        let vars = [1e-2; 4];
        let truth = [0usize, 3, 1, 2, 2, 0];
        let mut z = CVec::zeros(4);
        for u in 0..6 {
            z += cb.codeword(u, truth[u]).clone();
        }
        let cfg = MpaConfig { iterations: 10, domain: MpaDomain::MaxLog };
        let out = mpa_decode(&cb, &gains, &z, &vars, &cfg);
        assert_eq!(out.decisions, truth);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_common_scaling_preserves_decisions(seed in 0u64..2000, alpha in 0.05f64..20.0) {
            let mut rng = derive(seed, &[2]);
            let h = random_mat(&mut rng, 2, 3);
            let r = spd_noise(&mut rng, 2);
            let z: CVec = random_mat(&mut rng, 2, 1).column(0).into_owned();
            let plan = sic_plan(&h, &r).unwrap();
            let base = run_sic(&plan, &h, &z);

            let hs = h.scale(alpha);
            let rs = r.scale(alpha * alpha);
            let zs = z.scale(alpha);
            let plan_s = sic_plan(&hs, &rs).unwrap();
            prop_assert_eq!(&plan_s.order, &plan.order);
            prop_assert_eq!(run_sic(&plan_s, &hs, &zs), base);

            let s = sinr_active(&h, &r, &[true; 3]).unwrap();
            let ss = sinr_active(&hs, &rs, &[true; 3]).unwrap();
            for u in 0..3 {
                prop_assert!((s[u] - ss[u]).abs() <= 1e-8 * s[u].abs().max(1.0));
            }

            let truth = [0usize, 1, 2];
            let (_, d) = pic_round(&z, &h, 0, &truth);
            let (_, ds) = pic_round(&zs, &hs, 0, &truth);
            prop_assert_eq!(d, ds);
        }

        #[test]
        fn prop_mpa_posteriors_normalized(seed in 0u64..2000) {
            let cb = ScmaCodebook::bundled();
            let gains = CMat::from_element(4, 6, c64(1.0, 0.0));
            let mut rng = derive(seed, &[3]);
            let z: CVec = CVec::from_fn(4, |_, _| complex_gaussian(&mut rng) * c64(2.0, 0.0));
            let out = mpa_decode(&cb, &gains, &z, &[0.7; 4], &MpaConfig::default());
            for u in 0..6 {
                let s: f64 = out.posteriors[u].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                for &p in &out.posteriors[u] {
                    prop_assert!(p >= 0.0);
                }
            }
        }
    }
}
