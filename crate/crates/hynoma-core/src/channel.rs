//! Spatial channel model: array steering, per-path covariance matrices and
//! correlated Rayleigh realizations.
//!
//! Each user sees a small number of resolvable paths. A path contributes a
//! rank-deficient antenna covariance obtained by integrating the steering
//! outer product over the angular spread around the user's mean angle of
//! arrival; channel vectors are drawn as colored complex Gaussians through a
//! square-root factor of that covariance.

use crate::linalg::{psd_sqrt, LinalgError};
use crate::rng::complex_gaussian_vec;
use crate::scenario::{ScenarioConfig, UserAngles};
use crate::{c64, CMat, CVec};
use alloc::vec::Vec;
use rand::Rng;

/// Midpoint-rule nodes used to integrate a path covariance over its spread.
pub const QUADRATURE_NODES: usize = 64;

/// Unit-norm uniform-linear-array steering vector at half-wavelength spacing,
/// `u_n = exp(j π n sin θ) / sqrt(M)`.
pub fn steering_vector(theta_deg: f64, antennas: usize) -> CVec {
    let s = libm::sin(theta_deg * core::f64::consts::PI / 180.0);
    let scale = 1.0 / libm::sqrt(antennas as f64);
    CVec::from_iterator(
        antennas,
        (0..antennas).map(|n| {
            let phase = core::f64::consts::PI * n as f64 * s;
            c64(libm::cos(phase) * scale, libm::sin(phase) * scale)
        }),
    )
}

/// Path covariance with an explicit quadrature resolution; see
/// [`path_covariance`].
pub fn path_covariance_with_nodes(
    mean_deg: f64,
    spread_deg: f64,
    trace: f64,
    antennas: usize,
    nodes: usize,
) -> CMat {
    let mut r = CMat::zeros(antennas, antennas);
    let lo = mean_deg - spread_deg / 2.0;
    let step = spread_deg / nodes as f64;
    for i in 0..nodes {
        let theta = lo + (i as f64 + 0.5) * step;
        let u = steering_vector(theta, antennas);
        r += &u * u.adjoint();
    }
    r.scale(trace / nodes as f64)
}

/// Covariance of one path: the steering outer product averaged over a
/// uniform angular density across the spread, scaled to the given trace.
///
/// The midpoint rule over [`QUADRATURE_NODES`] nodes keeps the result exactly
/// Hermitian and Toeplitz with trace equal to `trace`; only the off-diagonal
/// profile carries quadrature error.
pub fn path_covariance(mean_deg: f64, spread_deg: f64, trace: f64, antennas: usize) -> CMat {
    path_covariance_with_nodes(mean_deg, spread_deg, trace, antennas, QUADRATURE_NODES)
}

/// Per-user path covariances of a scenario together with their square-root
/// sampling factors and the per-group aggregates used by the beamformers.
pub struct CovarianceSet {
    /// Array size the covariances are built for.
    pub antennas: usize,
    /// `per_user[g][k][j]`: covariance of user `k` of group `g` at path `j`.
    pub per_user: Vec<Vec<Vec<CMat>>>,
    /// Square-root factors `F` with `F F^H = R`, indexed like `per_user`.
    pub factors: Vec<Vec<Vec<CMat>>>,
    /// `path_sums[g][j]`: covariance at path `j` summed over group `g` users.
    pub path_sums: Vec<Vec<CMat>>,
    /// `group_sums[g]`: covariance summed over paths and users of group `g`.
    pub group_sums: Vec<CMat>,
    /// `delays[g][j]`: delay in chips of path `j` of group `g`.
    pub delays: Vec<Vec<usize>>,
}

/// Builds every per-user path covariance of a scenario for one draw of user
/// mean angles.
pub fn build_covariances(
    cfg: &ScenarioConfig,
    angles: &UserAngles,
) -> Result<CovarianceSet, LinalgError> {
    let m = cfg.antennas;
    let mut per_user = Vec::with_capacity(cfg.groups.len());
    let mut factors = Vec::with_capacity(cfg.groups.len());
    let mut path_sums = Vec::with_capacity(cfg.groups.len());
    let mut group_sums = Vec::with_capacity(cfg.groups.len());
    let mut delays = Vec::with_capacity(cfg.groups.len());
    for (g, grp) in cfg.groups.iter().enumerate() {
        let traces = grp.path_traces();
        let mut users_r = Vec::with_capacity(grp.users);
        let mut users_f = Vec::with_capacity(grp.users);
        let mut sums: Vec<CMat> = (0..grp.mpcs.len()).map(|_| CMat::zeros(m, m)).collect();
        let mut group_sum = CMat::zeros(m, m);
        for k in 0..grp.users {
            let mut paths_r = Vec::with_capacity(grp.mpcs.len());
            let mut paths_f = Vec::with_capacity(grp.mpcs.len());
            for (j, mpc) in grp.mpcs.iter().enumerate() {
                let r = path_covariance(angles[g][k][j], mpc.angular_spread_deg, traces[j], m);
                sums[j] += &r;
                group_sum += &r;
                paths_f.push(psd_sqrt(&r)?);
                paths_r.push(r);
            }
            users_r.push(paths_r);
            users_f.push(paths_f);
        }
        per_user.push(users_r);
        factors.push(users_f);
        path_sums.push(sums);
        group_sums.push(group_sum);
        delays.push(grp.mpcs.iter().map(|mpc| mpc.delay_index).collect());
    }
    Ok(CovarianceSet { antennas: m, per_user, factors, path_sums, group_sums, delays })
}

/// One correlated Rayleigh draw of every user channel.
pub struct ChannelRealization {
    /// `taps[g][j]`: antennas x users matrix whose column `k` is the channel
    /// of user `k` of group `g` at path `j`.
    pub taps: Vec<Vec<CMat>>,
    /// `delays[g][j]`: delay in chips of `taps[g][j]`.
    pub delays: Vec<Vec<usize>>,
}

/// Samples every user channel as `h = F w` with `w ~ CN(0, I)`.
pub fn sample_channels<R: Rng + ?Sized>(covs: &CovarianceSet, rng: &mut R) -> ChannelRealization {
    let m = covs.antennas;
    let taps = covs
        .factors
        .iter()
        .map(|group| {
            let users = group.len();
            let paths = group[0].len();
            (0..paths)
                .map(|j| {
                    let mut tap = CMat::zeros(m, users);
                    for (k, user) in group.iter().enumerate() {
                        let w = CVec::from_vec(complex_gaussian_vec(rng, m));
                        tap.set_column(k, &(&user[j] * w));
                    }
                    tap
                })
                .collect()
        })
        .collect();
    ChannelRealization { taps, delays: covs.delays.clone() }
}

/// Long-term covariance of the received antenna signal: per-user energies
/// times the summed path covariances of each group, plus the noise floor.
pub fn received_covariance(
    covs: &CovarianceSet,
    per_user_energy: &[f64],
    noise_power: f64,
) -> CMat {
    let m = covs.antennas;
    let mut r = CMat::identity(m, m).scale(noise_power);
    for (g, sums) in covs.path_sums.iter().enumerate() {
        for s in sums {
            r += s.scale(per_user_energy[g]);
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eig, rel_frobenius};
    use crate::rng::{derive, TAG_ANGLES, TAG_CHANNEL};
    use crate::scenario::ScenarioConfig;

    fn small_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::reference_cell();
        cfg.antennas = 8;
        for grp in &mut cfg.groups {
            grp.users = 2;
        }
        cfg
    }

    #[test]
    fn steering_matches_closed_form() {
        let u = steering_vector(30.0, 2);
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!((u[0] - crate::c64(s, 0.0)).norm() < 1e-12);
        assert!((u[1] - crate::c64(0.0, s)).norm() < 1e-12);
        for m in [1usize, 3, 17] {
            assert!((steering_vector(-12.3, m).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn broadside_steering_is_constant_phase() {
        let u = steering_vector(0.0, 5);
        for n in 0..5 {
            assert!((u[n] - crate::c64(1.0 / libm::sqrt(5.0), 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn path_covariance_is_hermitian_toeplitz_with_trace() {
        let r = path_covariance(10.0, 3.0, 1.4, 12);
        assert!((&r - r.adjoint()).norm() < 1e-12);
        let mut trace = 0.0;
        for i in 0..12 {
            trace += r[(i, i)].re;
        }
        assert!((trace - 1.4).abs() < 1e-12 * 12.0, "trace {trace}");
        for i in 1..12 {
            for j in 1..12 {
                assert!((r[(i, j)] - r[(i - 1, j - 1)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn quadrature_resolution_converged() {
        let coarse = path_covariance_with_nodes(0.0, 3.0, 1.0, 3, QUADRATURE_NODES);
        let fine = path_covariance_with_nodes(0.0, 3.0, 1.0, 3, QUADRATURE_NODES * 10);
        assert!(rel_frobenius(&coarse, &fine) < 1e-6, "err {}", rel_frobenius(&coarse, &fine));
    }

    #[test]
    fn path_covariance_is_psd() {
        let r = path_covariance(-20.0, 3.0, 1.0, 24);
        let pairs = hermitian_eig(&r).unwrap();
        for p in &pairs {
            assert!(p.value > -1e-12);
        }
    }

    #[test]
    fn vanishing_spread_approaches_rank_one() {
        let r = path_covariance(7.0, 1e-6, 1.0, 10);
        let u = steering_vector(7.0, 10);
        let rank1 = &u * u.adjoint();
        assert!(rel_frobenius(&r, &rank1) < 1e-9);
    }

    #[test]
    fn disjoint_sectors_nearly_orthogonal_eigenspaces() {
        let a = path_covariance(0.0, 3.0, 1.0, 100);
        let b = path_covariance(25.0, 3.0, 1.0, 100);
        let va = &hermitian_eig(&a).unwrap()[0].vector;
        let vb = &hermitian_eig(&b).unwrap()[0].vector;
        let overlap = (va.adjoint() * vb)[(0, 0)].norm();
        assert!(overlap < 0.1, "overlap {overlap}");
    }

    #[test]
    fn covariance_set_shapes_and_delays() {
        let cfg = small_cfg();
        let angles = cfg.draw_user_angles(&mut derive(3, &[TAG_ANGLES]));
        let covs = build_covariances(&cfg, &angles).unwrap();
        assert_eq!(covs.per_user.len(), 4);
        assert_eq!(covs.per_user[0].len(), 2);
        assert_eq!(covs.per_user[0][0].len(), 3);
        assert_eq!(covs.delays[3], alloc::vec![20, 29]);
        assert_eq!(covs.path_sums[1].len(), 2);
        assert_eq!(covs.group_sums[2].nrows(), 8);
        let diff = (&covs.path_sums[0][1])
            - (&covs.per_user[0][0][1] + &covs.per_user[0][1][1]);
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn sampled_channels_match_covariance() {
        let m = 4;
        let r = path_covariance(12.0, 3.0, 1.0, m);
        let f = psd_sqrt(&r).unwrap();
        let mut rng = derive(5, &[TAG_CHANNEL]);
        let n = 10_000;
        let mut acc = CMat::zeros(m, m);
        for _ in 0..n {
            let w = CVec::from_vec(complex_gaussian_vec(&mut rng, m));
            let h = &f * w;
            acc += &h * h.adjoint();
        }
        let emp = acc.scale(1.0 / n as f64);
        assert!(rel_frobenius(&emp, &r) < 0.05, "err {}", rel_frobenius(&emp, &r));
    }

    #[test]
    fn distinct_users_are_uncorrelated() {
        let cfg = small_cfg();
        let angles = cfg.draw_user_angles(&mut derive(7, &[TAG_ANGLES]));
        let covs = build_covariances(&cfg, &angles).unwrap();
        let mut rng = derive(8, &[TAG_CHANNEL]);
        let n = 10_000;
        let mut cross = CMat::zeros(8, 8);
        let mut scale = 0.0;
        for _ in 0..n {
            let re = sample_channels(&covs, &mut rng);
            let h0: CVec = re.taps[0][0].column(0).into_owned();
            let h1: CVec = re.taps[0][0].column(1).into_owned();
            cross += &h0 * h1.adjoint();
            scale += h0.norm_squared();
        }
        assert!(cross.norm() / scale < 0.05);
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let cfg = small_cfg();
        let angles = cfg.draw_user_angles(&mut derive(1, &[TAG_ANGLES]));
        let covs = build_covariances(&cfg, &angles).unwrap();
        let a = sample_channels(&covs, &mut derive(2, &[TAG_CHANNEL, 4]));
        let b = sample_channels(&covs, &mut derive(2, &[TAG_CHANNEL, 4]));
        assert_eq!(a.taps[2][1], b.taps[2][1]);
    }

    #[test]
    fn received_covariance_has_noise_floor() {
        let cfg = small_cfg();
        let angles = cfg.draw_user_angles(&mut derive(11, &[TAG_ANGLES]));
        let covs = build_covariances(&cfg, &angles).unwrap();
        let ry = received_covariance(&covs, &[0.5, 0.5, 0.5, 0.5], 0.75);
        assert!((&ry - ry.adjoint()).norm() < 1e-10);
        let pairs = hermitian_eig(&ry).unwrap();
        assert!(pairs.last().unwrap().value >= 0.75 * (1.0 - 1e-9));
        let quiet = received_covariance(&covs, &[0.0; 4], 0.75);
        assert!(rel_frobenius(&quiet, &CMat::identity(8, 8).scale(0.75)) < 1e-12);
    }

    #[test]
    fn mean_channel_energy_matches_trace() {
        let m = 6;
        let r = path_covariance(3.0, 3.0, 1.3, m);
        let f = psd_sqrt(&r).unwrap();
        let mut rng = derive(21, &[TAG_CHANNEL]);
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let w = CVec::from_vec(complex_gaussian_vec(&mut rng, m));
            acc += (&f * w).norm_squared();
        }
        let mean = acc / n as f64;
        assert!((mean - 1.3).abs() < 0.03, "mean {mean}");
    }
}
