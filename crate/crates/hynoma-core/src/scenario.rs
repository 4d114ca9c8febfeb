//! Scenario configuration: cell geometry, grouping, NOMA and sweep settings.
//!
//! A scenario describes one simulated cell: the array size, the user groups
//! with their multipath profiles (delay plus angular sector per path), the
//! code-domain overloading settings, and the Monte Carlo sweep parameters.
//! Configurations deserialize from JSON with documented defaults and are
//! checked by [`ScenarioConfig::validate`] before use.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Angular power profile across a path's spread. Only the uniform profile is
/// implemented; the field exists so profiles stay part of the file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PowerProfile {
    /// Uniform power density over the angular spread.
    #[default]
    Uniform,
}

/// Link direction of the simulated chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinkDirection {
    /// Users transmit, base station receives.
    #[default]
    Uplink,
    /// Base station transmits, users receive.
    Downlink,
}

/// Code-domain multiple access scheme carried by the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NomaMode {
    /// Sparse codebook access decoded with message passing.
    Scma,
    /// Dense short spreading sequences decoded with MMSE-SIC or PIC.
    #[default]
    Musa,
    /// No spreading; one symbol per chip with per-user slicing.
    ZfOnly,
}

/// Digital combiner family used on top of the analog beamformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    /// Conventional matched filter.
    Cmf,
    /// Regularized zero forcing.
    Zf,
}

/// One multipath component of a group: a delay tap plus an angular sector
/// from which each user of the group draws its mean angle of arrival.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcProfile {
    /// Delay of this path in chip periods, `0 <= delay_index < total_delays`.
    pub delay_index: usize,
    /// Sector `[low, high]` of mean angles of arrival, degrees.
    pub sector_deg: (f64, f64),
    /// Angular spread around the drawn mean angle, degrees.
    #[serde(default = "default_spread")]
    pub angular_spread_deg: f64,
    /// Fraction of the group's total path gain carried by this path. When
    /// omitted for every path of a group, the gain splits equally.
    #[serde(default)]
    pub gain_fraction: Option<f64>,
    /// Power density across the spread.
    #[serde(default)]
    pub power_profile: PowerProfile,
}

fn default_spread() -> f64 {
    3.0
}

/// One user group: co-scheduled users sharing an analog beamformer, a set of
/// RF chains and a common multipath geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    /// Number of users in the group.
    pub users: usize,
    /// RF chains (beamformer columns) assigned to the group.
    pub rf_chains: usize,
    /// Multiplier on the group's derived symbol energy.
    #[serde(default = "default_one")]
    pub energy_scale: f64,
    /// Multipath components of the group.
    pub mpcs: Vec<MpcProfile>,
}

fn default_one() -> f64 {
    1.0
}

impl GroupConfig {
    /// Total average path gain of the group; one unit per active path.
    pub fn path_gain(&self) -> f64 {
        self.mpcs.len() as f64
    }

    /// Per-path covariance traces implied by the gain fractions.
    pub fn path_traces(&self) -> Vec<f64> {
        let gamma = self.path_gain();
        let equal = 1.0 / self.mpcs.len() as f64;
        self.mpcs
            .iter()
            .map(|m| m.gain_fraction.unwrap_or(equal) * gamma)
            .collect()
    }
}

/// Complete configuration of one simulated cell and its sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Antennas at the base station array.
    pub antennas: usize,
    /// Channel delay spread in chips; taps live in `0..total_delays`.
    /// Defaults to one past the largest configured delay.
    #[serde(default)]
    pub total_delays: usize,
    /// OFDM subcarriers for the downlink chain.
    #[serde(default = "default_subcarriers")]
    pub subcarriers: usize,
    /// Simulated link direction.
    #[serde(default)]
    pub link: LinkDirection,
    /// Code-domain access scheme.
    #[serde(default)]
    pub noma_mode: NomaMode,
    /// Spreading factor / codeword length in chips.
    #[serde(default = "default_code_length")]
    pub code_length: usize,
    /// Modulation alphabet size; must be a power of two.
    #[serde(default = "default_alphabet")]
    pub alphabet_size: usize,
    /// NOMA symbols transmitted per frame and trial.
    #[serde(default = "default_symbols")]
    pub symbols_per_frame: usize,
    /// Per-user Eb sweep grid in dB over the unit-power noise.
    #[serde(default = "default_eb_grid")]
    pub eb_grid_db: Vec<f64>,
    /// Independent channel realizations per sweep point.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Root seed of the run.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Receiver noise power per antenna (and per subcarrier), linear.
    #[serde(default = "default_one")]
    pub noise_power: f64,
    /// Digital combiner override; `None` picks the scheme default
    /// (matched filter for SCMA, regularized zero forcing otherwise).
    #[serde(default)]
    pub digital_combiner: Option<Combiner>,
    /// The user groups.
    pub groups: Vec<GroupConfig>,
}

fn default_subcarriers() -> usize {
    64
}
fn default_code_length() -> usize {
    4
}
fn default_alphabet() -> usize {
    4
}
fn default_symbols() -> usize {
    1000
}
fn default_trials() -> usize {
    10
}
fn default_seed() -> u64 {
    1
}
fn default_eb_grid() -> Vec<f64> {
    (0..=8).map(|i| 5.0 * i as f64).collect()
}

/// Mean angles of arrival drawn for every user, degrees,
/// indexed `[group][user][path]`.
pub type UserAngles = Vec<Vec<Vec<f64>>>;

/// Validation failure for a scenario configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    /// Human-readable message naming the offending field.
    pub message: String,
}

impl ScenarioError {
    fn new(message: String) -> Self {
        Self { message }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario: {}", self.message)
    }
}

impl core::error::Error for ScenarioError {}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(ScenarioError::new(format!($($msg)+)));
        }
    };
}

impl ScenarioConfig {
    /// Fills derived defaults: a zero `total_delays` becomes one past the
    /// largest configured delay index.
    pub fn normalized(mut self) -> Self {
        if self.total_delays == 0 {
            self.total_delays = self
                .groups
                .iter()
                .flat_map(|g| g.mpcs.iter().map(|m| m.delay_index))
                .max()
                .map_or(1, |d| d + 1);
        }
        self
    }

    /// Checks structural and numeric consistency of the configuration.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        ensure!(self.antennas >= 1, "antennas must be at least 1");
        ensure!(!self.groups.is_empty(), "groups must not be empty");
        ensure!(self.total_delays >= 1, "total_delays must be at least 1");
        ensure!(self.code_length >= 1, "code_length must be at least 1");
        ensure!(
            self.alphabet_size >= 2 && self.alphabet_size.is_power_of_two(),
            "alphabet_size must be a power of two, got {}",
            self.alphabet_size
        );
        ensure!(self.symbols_per_frame >= 1, "symbols_per_frame must be at least 1");
        ensure!(self.trials >= 1, "trials must be at least 1");
        ensure!(
            self.noise_power.is_finite() && self.noise_power > 0.0,
            "noise_power must be positive"
        );
        ensure!(!self.eb_grid_db.is_empty(), "eb_grid_db must not be empty");
        for e in &self.eb_grid_db {
            ensure!(e.is_finite(), "eb_grid_db entries must be finite");
        }
        if self.noma_mode == NomaMode::ZfOnly {
            ensure!(
                self.code_length == 1,
                "code_length must be 1 when noma_mode is zf-only, got {}",
                self.code_length
            );
        }
        let total_rf: usize = self.groups.iter().map(|g| g.rf_chains).sum();
        ensure!(
            total_rf <= self.antennas,
            "sum of groups[].rf_chains ({total_rf}) exceeds antennas ({})",
            self.antennas
        );
        if self.link == LinkDirection::Downlink {
            ensure!(
                self.subcarriers.is_power_of_two(),
                "subcarriers must be a power of two, got {}",
                self.subcarriers
            );
            ensure!(
                self.subcarriers % self.code_length == 0,
                "subcarriers ({}) must be divisible by code_length ({})",
                self.subcarriers,
                self.code_length
            );
            ensure!(
                self.subcarriers >= self.total_delays,
                "subcarriers ({}) must cover total_delays ({})",
                self.subcarriers,
                self.total_delays
            );
        }
        for (g, grp) in self.groups.iter().enumerate() {
            ensure!(grp.users >= 1, "groups[{g}].users must be at least 1");
            ensure!(grp.rf_chains >= 1, "groups[{g}].rf_chains must be at least 1");
            ensure!(
                grp.energy_scale.is_finite() && grp.energy_scale > 0.0,
                "groups[{g}].energy_scale must be positive"
            );
            ensure!(!grp.mpcs.is_empty(), "groups[{g}].mpcs must not be empty");
            let mut seen = Vec::new();
            let any_fraction = grp.mpcs.iter().any(|m| m.gain_fraction.is_some());
            let mut fraction_sum = 0.0;
            for (j, mpc) in grp.mpcs.iter().enumerate() {
                ensure!(
                    mpc.delay_index < self.total_delays,
                    "groups[{g}].mpcs[{j}].delay_index ({}) must be below total_delays ({})",
                    mpc.delay_index,
                    self.total_delays
                );
                ensure!(
                    !seen.contains(&mpc.delay_index),
                    "groups[{g}].mpcs[{j}].delay_index ({}) duplicates another path of the group",
                    mpc.delay_index
                );
                seen.push(mpc.delay_index);
                let (lo, hi) = mpc.sector_deg;
                ensure!(
                    lo.is_finite() && hi.is_finite() && lo <= hi,
                    "groups[{g}].mpcs[{j}].sector_deg must be an ordered pair, got ({lo}, {hi})"
                );
                ensure!(
                    lo > -90.0 && hi < 90.0,
                    "groups[{g}].mpcs[{j}].sector_deg must lie inside (-90, 90), got ({lo}, {hi})"
                );
                ensure!(
                    mpc.angular_spread_deg.is_finite() && mpc.angular_spread_deg > 0.0,
                    "groups[{g}].mpcs[{j}].angular_spread_deg must be positive"
                );
                if any_fraction {
                    match mpc.gain_fraction {
                        Some(fr) => {
                            ensure!(
                                fr.is_finite() && fr > 0.0,
                                "groups[{g}].mpcs[{j}].gain_fraction must be positive"
                            );
                            fraction_sum += fr;
                        }
                        None => ensure!(
                            false,
                            "groups[{g}].mpcs[{j}].gain_fraction missing while other paths set one"
                        ),
                    }
                }
            }
            if any_fraction {
                ensure!(
                    (fraction_sum - 1.0).abs() < 1e-9,
                    "groups[{g}].mpcs[].gain_fraction must sum to 1, got {fraction_sum}"
                );
            }
        }
        Ok(())
    }

    /// Bits carried by one modulation symbol.
    pub fn bits_per_symbol(&self) -> u32 {
        self.alphabet_size.trailing_zeros()
    }

    /// Group symbol energy for a per-user, per-bit energy given in linear
    /// scale: `K_g * E_b * bits / N_c`, times the group's energy scale.
    pub fn symbol_energy(&self, eb_linear: f64, group: usize) -> f64 {
        let grp = &self.groups[group];
        grp.users as f64 * eb_linear * self.bits_per_symbol() as f64 / self.code_length as f64
            * grp.energy_scale
    }

    /// Symbol energies of all groups at one sweep point.
    pub fn group_energies(&self, eb_linear: f64) -> Vec<f64> {
        (0..self.groups.len()).map(|g| self.symbol_energy(eb_linear, g)).collect()
    }

    /// Per-user share of each group's symbol energy, `E_s / K_g`.
    pub fn per_user_energies(&self, eb_linear: f64) -> Vec<f64> {
        self.groups
            .iter()
            .enumerate()
            .map(|(g, grp)| self.symbol_energy(eb_linear, g) / grp.users as f64)
            .collect()
    }

    /// Effective digital combiner for the configured scheme. Code-domain
    /// schemes default to the matched filter and leave user separation to
    /// the code-domain receiver; the unspread baseline needs the
    /// interference-nulling combiner to separate users at all.
    pub fn combiner(&self) -> Combiner {
        self.digital_combiner.unwrap_or(match self.noma_mode {
            NomaMode::Scma | NomaMode::Musa => Combiner::Cmf,
            NomaMode::ZfOnly => Combiner::Zf,
        })
    }

    /// Draws every user's mean angle of arrival uniformly from the sector of
    /// each of its group's paths.
    pub fn draw_user_angles<R: Rng + ?Sized>(&self, rng: &mut R) -> UserAngles {
        self.groups
            .iter()
            .map(|grp| {
                (0..grp.users)
                    .map(|_| {
                        grp.mpcs
                            .iter()
                            .map(|mpc| {
                                let (lo, hi) = mpc.sector_deg;
                                if hi > lo {
                                    rng.random_range(lo..hi)
                                } else {
                                    lo
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Reference four-group cell used by the bundled default scenario: a
    /// 100-antenna array serving four angularly disjoint groups of six users,
    /// two or three paths each within a 32-chip delay spread.
    pub fn reference_cell() -> Self {
        let sector = |delay_index, lo: f64, hi: f64| MpcProfile {
            delay_index,
            sector_deg: (lo, hi),
            angular_spread_deg: 3.0,
            gain_fraction: None,
            power_profile: PowerProfile::Uniform,
        };
        let group = |mpcs: Vec<MpcProfile>| GroupConfig {
            users: 6,
            rf_chains: 2,
            energy_scale: 1.0,
            mpcs,
        };
        Self {
            antennas: 100,
            total_delays: 32,
            subcarriers: 64,
            link: LinkDirection::Uplink,
            noma_mode: NomaMode::Musa,
            code_length: 4,
            alphabet_size: 4,
            symbols_per_frame: 1000,
            eb_grid_db: default_eb_grid(),
            trials: 10,
            seed: 1,
            noise_power: 1.0,
            digital_combiner: None,
            groups: alloc::vec![
                group(alloc::vec![
                    sector(0, -1.25, 1.5),
                    sector(5, 8.25, 9.75),
                    sector(11, 20.25, 22.0),
                ]),
                group(alloc::vec![sector(3, 25.0, 27.5), sector(9, 13.5, 15.75)]),
                group(alloc::vec![sector(8, -8.0, -6.0), sector(17, -14.75, -12.5)]),
                group(alloc::vec![sector(20, -21.5, -19.5), sector(29, -28.0, -26.0)]),
            ],
        }
    }
}

/// Converts a dB energy value to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    libm::pow(10.0, db / 10.0)
}
