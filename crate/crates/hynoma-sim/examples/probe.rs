//! Diagnostic: per-E_b decomposition of post-combiner power on the desk
//! geometry. Not part of the shipped workflow.

use hynoma_core::beamform::{
    analog_single_carrier, digital_uplink, effective_channels, gain_matrices, noise_correlation,
};
use hynoma_core::channel::{build_covariances, sample_channels};
use hynoma_core::rng::{derive, TAG_ANGLES, TAG_CHANNEL};
use hynoma_core::scenario::{db_to_linear, ScenarioConfig};
use hynoma_core::CMat;

fn main() {
    let mut cfg = ScenarioConfig::reference_cell();
    cfg.antennas = std::env::args()
        .nth(1)
        .and_then(|v| v.parse().ok())
        .unwrap_or(64);
    if std::env::args().nth(2).as_deref() == Some("cmf") {
        cfg.digital_combiner = Some(hynoma_core::scenario::Combiner::Cmf);
    }
    let angles = cfg.draw_user_angles(&mut derive(1, &[TAG_ANGLES, 0]));
    let covs = build_covariances(&cfg, &angles).unwrap();
    let chan = sample_channels(&covs, &mut derive(1, &[TAG_CHANNEL, 0]));
    let m = cfg.antennas;
    let nc = cfg.code_length;

    for eb_db in [0.0, 10.0, 20.0, 30.0, 40.0] {
        let eb = db_to_linear(eb_db);
        let energies = cfg.group_energies(eb);
        let per_user = cfg.per_user_energies(eb);
        let mut r_y = CMat::identity(m, m).scale(cfg.noise_power);
        let mut path_sums = Vec::new();
        for (g, grp) in cfg.groups.iter().enumerate() {
            let sums: Vec<CMat> = (0..covs.delays[g].len())
                .map(|j| {
                    let mut s = CMat::zeros(m, m);
                    for u in 0..grp.users {
                        s += &covs.per_user[g][u][j];
                    }
                    s
                })
                .collect();
            for s in &sums {
                r_y += s.scale(per_user[g]);
            }
            path_sums.push(sums);
        }
        for g in 0..1 {
            let grp = &cfg.groups[g];
            let analog = analog_single_carrier(&path_sums[g], &r_y, grp.rf_chains).unwrap();
            let eff = effective_channels(&analog.matrix, &chan.taps[g], &chan.delays[g]);
            let w = digital_uplink(&eff, cfg.combiner(), cfg.noise_power, energies[g], grp.users)
                .unwrap();
            let phi = gain_matrices(&w, &eff.delays, &eff);
            let lags = noise_correlation(&w, &eff.delays, &analog.matrix, cfg.noise_power, nc);
            let phi0 = phi.zero_tap();
            let own: f64 = (0..grp.users).map(|u| phi0[(u, u)].norm_sqr()).sum::<f64>();
            let cross: f64 = phi0.iter().map(|v| v.norm_sqr()).sum::<f64>() - own;
            let isi: f64 = phi
                .taps
                .iter()
                .filter(|(q, _)| *q != 0)
                .map(|(_, m)| m.iter().map(|v| v.norm_sqr()).sum::<f64>())
                .sum();
            let noise_tr: f64 = (0..grp.users)
                .map(|u| {
                    lags.iter()
                        .find(|(q, _)| *q == 0)
                        .map(|(_, m)| m[(u, u)].re)
                        .unwrap()
                })
                .sum();
            // leakage: other groups' taps through this group's front end
            let mut leak = 0.0;
            for (go, other) in cfg.groups.iter().enumerate() {
                if go == g {
                    continue;
                }
                let eff_o = effective_channels(&analog.matrix, &chan.taps[go], &chan.delays[go]);
                let phi_o = gain_matrices(&w, &eff.delays, &eff_o);
                let rel = per_user[go] / per_user[g];
                leak += rel
                    * phi_o
                        .taps
                        .iter()
                        .map(|(_, m)| m.iter().map(|v| v.norm_sqr()).sum::<f64>())
                        .sum::<f64>();
                let _ = other;
            }
            println!(
                "eb {eb_db:>4}  g{g}  own {own:9.3e}  cross {cross:9.3e}  isi {isi:9.3e}  \
                 leak {leak:9.3e}  noise/e {:9.3e}",
                noise_tr / per_user[g]
            );
        }
    }
}
