//! Monte Carlo experiment driver.
//!
//! An [`ExperimentSpec`] names a scenario, a sweep axis (per-bit energy or
//! overloading), the receivers to run and the metrics to collect. [`run`]
//! executes every (trial, sweep point) cell of the experiment, rebuilding
//! covariances and beamformers per trial, and reduces per-trial statistics
//! into [`ResultRecord`]s. Trials parallelize; reduction order is fixed by
//! trial index, so parallel and serial runs emit identical records.

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use hynoma_core::air::{mean_stderr, AirAccumulator, GaussianMismatchModel};
use hynoma_core::beamform::{
    analog_multicarrier, analog_single_carrier, digital_downlink, digital_uplink,
    effective_channels, frequency_response, gain_matrices, noise_correlation, power_scaling,
    stream_noise_correlation,
};
use hynoma_core::channel::{build_covariances, sample_channels, ChannelRealization, CovarianceSet};
use hynoma_core::noma::{assemble_frame, draw_symbols, hamming, ChipMapper, MusaCodeSet, ScmaCodebook};
use hynoma_core::phy::{
    chip_windows, downlink_subcarrier_stream, downlink_time_signal, downlink_user_stream,
    guard_slots, uplink_combined, uplink_received, DownlinkGroupTx, UplinkGroupTx,
};
use hynoma_core::rng::{derive, TAG_ANGLES, TAG_CHANNEL, TAG_CODES, TAG_DATA, TAG_NOISE, TAG_POWER};
use hynoma_core::rx::{
    mfb_decode, mpa_decode, pic_aided_decode, run_sic, sic_plan, zf_slice, MpaConfig, MpaDomain,
    SicPlan,
};
use hynoma_core::scenario::{db_to_linear, LinkDirection, NomaMode, ScenarioConfig};
use hynoma_core::{CMat, CVec};

/// Receivers the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receiver {
    /// Per-stream message passing on the sparse codebook graph.
    ScmaMpa,
    /// Successive cancellation with stream selection (no parallel rounds).
    MusaMmseSic,
    /// Successive cancellation followed by `i` parallel rounds.
    MusaPic(usize),
    /// Per-user scalar slicing of the unspread combined stream.
    ZfOnly,
    /// Genie bound: interference cancelled with true symbols.
    Mfb,
}

impl Receiver {
    /// Stable identifier used in records and on the command line.
    pub fn label(&self) -> String {
        match self {
            Receiver::ScmaMpa => "scma-mpa".into(),
            Receiver::MusaMmseSic => "musa-mmse-sic".into(),
            Receiver::MusaPic(i) => format!("musa-pic{i}"),
            Receiver::ZfOnly => "zf-only".into(),
            Receiver::Mfb => "mfb".into(),
        }
    }
}

impl std::str::FromStr for Receiver {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scma-mpa" => Ok(Receiver::ScmaMpa),
            "musa-mmse-sic" => Ok(Receiver::MusaMmseSic),
            "zf-only" => Ok(Receiver::ZfOnly),
            "mfb" => Ok(Receiver::Mfb),
            other => {
                if let Some(i) = other.strip_prefix("musa-pic") {
                    let i: usize = i.parse().context("bad pic iteration suffix")?;
                    ensure!(i >= 1, "pic iteration must be at least 1");
                    return Ok(Receiver::MusaPic(i));
                }
                bail!(
                    "unknown receiver {other:?}; expected scma-mpa, musa-mmse-sic, \
                     musa-picN, zf-only or mfb"
                )
            }
        }
    }
}

/// Metrics the harness can collect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Bit error rate over Gray-labelled symbols.
    Ber,
    /// Mismatched-decoding achievable rate per channel use.
    Air,
}

impl Metric {
    /// Stable identifier used in records and file names.
    pub fn label(&self) -> &'static str {
        match self {
            Metric::Ber => "ber",
            Metric::Air => "air",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ber" => Ok(Metric::Ber),
            "air" => Ok(Metric::Air),
            other => bail!("unknown metric {other:?}; expected ber or air"),
        }
    }
}

/// Sweep axis of an experiment.
#[derive(Debug, Clone, Serialize)]
pub enum Sweep {
    /// Per-user, per-bit energy grid in dB.
    EbDb(Vec<f64>),
    /// Overloading grid in percent of the code length, at a fixed energy.
    LoadingPercent {
        /// Loading values, `users = round(percent/100 * code_length)`.
        percents: Vec<f64>,
        /// Per-bit energy every point runs at, dB.
        eb_db: f64,
    },
}

impl Sweep {
    fn values(&self) -> &[f64] {
        match self {
            Sweep::EbDb(v) => v,
            Sweep::LoadingPercent { percents, .. } => percents,
        }
    }
}

/// One full experiment: scenario, sweep, receivers, metrics, budgets.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Cell and scheme configuration; per-point copies get the swept field.
    pub scenario: ScenarioConfig,
    /// Sparse codebook override; `None` uses the bundled codebook.
    pub codebook: Option<ScmaCodebook>,
    /// Sweep axis.
    pub sweep: Sweep,
    /// Receivers to run, in record order.
    pub receivers: Vec<Receiver>,
    /// Metrics to collect.
    pub metrics: Vec<Metric>,
    /// Measured NOMA symbol slots per sweep point, summed over trials.
    pub budget: usize,
    /// Independent channel realizations per sweep point.
    pub trials: usize,
    /// Root seed; every stream derives from it.
    pub seed: u64,
    /// Parallel rounds available to `musa-picN` receivers.
    pub pic_iterations: usize,
    /// Message passing iteration budget.
    pub mpa_iterations: usize,
    /// Use the max-log message approximation instead of sum-product.
    pub max_log: bool,
    /// Channel draws for the downlink power normalization estimate.
    pub power_draws: usize,
    /// Run trials on the thread pool; never changes the records.
    pub parallel: bool,
}

/// Minimum measured slots per sweep point.
pub const MIN_BUDGET: usize = 1000;

impl ExperimentSpec {
    /// Spec with defaults taken from the scenario: its trial count and seed,
    /// a 2e4-slot budget, four parallel rounds, ten message passing
    /// iterations.
    pub fn new(scenario: ScenarioConfig, sweep: Sweep) -> Self {
        Self {
            trials: scenario.trials,
            seed: scenario.seed,
            scenario,
            codebook: None,
            sweep,
            receivers: Vec::new(),
            metrics: vec![Metric::Ber],
            budget: 20_000,
            pic_iterations: 4,
            mpa_iterations: 10,
            max_log: false,
            power_draws: 500,
            parallel: true,
        }
    }

    /// Message passing settings as a decoder config.
    pub fn mpa_config(&self) -> MpaConfig {
        MpaConfig {
            iterations: self.mpa_iterations,
            domain: if self.max_log { MpaDomain::MaxLog } else { MpaDomain::SumProduct },
        }
    }

    /// The sparse codebook this experiment decodes with.
    pub fn scma_codebook(&self) -> ScmaCodebook {
        self.codebook.clone().unwrap_or_else(ScmaCodebook::bundled)
    }

    /// Checks the spec against the scenario and the harness invariants.
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().map_err(anyhow::Error::new)?;
        ensure!(!self.sweep.values().is_empty(), "sweep must not be empty");
        for v in self.sweep.values() {
            ensure!(v.is_finite(), "sweep values must be finite");
        }
        ensure!(!self.receivers.is_empty(), "receivers must not be empty");
        ensure!(!self.metrics.is_empty(), "metrics must not be empty");
        ensure!(
            self.budget >= MIN_BUDGET,
            "budget must be at least {MIN_BUDGET} symbols per point, got {}",
            self.budget
        );
        ensure!(self.trials >= 1, "trials must be at least 1");
        ensure!(self.mpa_iterations >= 1, "mpa_iterations must be at least 1");
        ensure!(self.power_draws >= 1, "power_draws must be at least 1");
        let mode = self.scenario.noma_mode;
        for r in &self.receivers {
            match r {
                Receiver::ScmaMpa => {
                    ensure!(mode == NomaMode::Scma, "scma-mpa needs noma_mode = scma")
                }
                Receiver::MusaMmseSic => {
                    ensure!(mode == NomaMode::Musa, "musa-mmse-sic needs noma_mode = musa")
                }
                Receiver::MusaPic(i) => {
                    ensure!(mode == NomaMode::Musa, "musa-pic needs noma_mode = musa");
                    ensure!(
                        self.scenario.link == LinkDirection::Uplink,
                        "parallel-cancellation receivers need an uplink scenario"
                    );
                    ensure!(
                        *i >= 1 && *i <= self.pic_iterations,
                        "musa-pic{i} outside the configured 1..={} rounds",
                        self.pic_iterations
                    );
                }
                Receiver::ZfOnly => {
                    ensure!(mode == NomaMode::ZfOnly, "zf-only needs noma_mode = zf-only")
                }
                Receiver::Mfb => {}
            }
        }
        if let Sweep::LoadingPercent { percents, eb_db } = &self.sweep {
            ensure!(eb_db.is_finite(), "loading sweep energy must be finite");
            ensure!(
                mode != NomaMode::Scma,
                "overloading sweeps need a resizable code set; the sparse codebook fixes \
                 the group size"
            );
            for &pct in percents {
                ensure!(pct > 0.0, "loading percents must be positive");
                ensure!(
                    loading_users(pct, self.scenario.code_length) >= 1,
                    "loading {pct}% rounds to zero users"
                );
            }
        }
        if mode == NomaMode::Scma {
            let cb = self.scma_codebook();
            ensure!(
                cb.code_length() == self.scenario.code_length,
                "codebook length {} != scenario code_length {}",
                cb.code_length(),
                self.scenario.code_length
            );
            ensure!(
                cb.alphabet() == self.scenario.alphabet_size,
                "codebook alphabet {} != scenario alphabet_size {}",
                cb.alphabet(),
                self.scenario.alphabet_size
            );
            for (g, grp) in self.scenario.groups.iter().enumerate() {
                ensure!(
                    grp.users == cb.users(),
                    "groups[{g}].users ({}) != codebook users ({})",
                    grp.users,
                    cb.users()
                );
            }
        }
        Ok(())
    }

    /// Hash of everything that determines the records except the seed.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Digest<'a> {
            scenario: &'a ScenarioConfig,
            sweep: &'a Sweep,
            receivers: Vec<String>,
            metrics: Vec<&'static str>,
            budget: usize,
            trials: usize,
            pic_iterations: usize,
            mpa_iterations: usize,
            max_log: bool,
            power_draws: usize,
            codebook: Option<Vec<Vec<Vec<(f64, f64)>>>>,
        }
        let codebook = (self.scenario.noma_mode == NomaMode::Scma).then(|| {
            let cb = self.scma_codebook();
            (0..cb.users())
                .map(|u| {
                    (0..cb.alphabet())
                        .map(|m| {
                            (0..cb.code_length())
                                .map(|r| {
                                    let c = cb.chip(u, m, r);
                                    (c.re, c.im)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        });
        let digest = Digest {
            scenario: &self.scenario,
            sweep: &self.sweep,
            receivers: self.receivers.iter().map(Receiver::label).collect(),
            metrics: self.metrics.iter().map(Metric::label).collect(),
            budget: self.budget,
            trials: self.trials,
            pic_iterations: self.pic_iterations,
            mpa_iterations: self.mpa_iterations,
            max_log: self.max_log,
            power_draws: self.power_draws,
            codebook,
        };
        let json = serde_json::to_string(&digest).expect("digest serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }

    fn point_setups(&self) -> Vec<PointSetup> {
        match &self.sweep {
            Sweep::EbDb(grid) => grid
                .iter()
                .map(|&eb| PointSetup { value: eb, cfg: self.scenario.clone(), eb_db: eb })
                .collect(),
            Sweep::LoadingPercent { percents, eb_db } => percents
                .iter()
                .map(|&pct| {
                    let mut cfg = self.scenario.clone();
                    let users = loading_users(pct, cfg.code_length);
                    for grp in &mut cfg.groups {
                        grp.users = users;
                    }
                    PointSetup { value: pct, cfg, eb_db: *eb_db }
                })
                .collect(),
        }
    }
}

fn loading_users(percent: f64, code_length: usize) -> usize {
    (percent / 100.0 * code_length as f64).round() as usize
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// One aggregated statistic of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ResultRecord {
    /// Sweep coordinate (dB or percent).
    pub sweep: f64,
    /// Receiver label the statistic belongs to.
    pub receiver: String,
    /// Metric label: `ber`, `air` or `air-group`.
    pub metric: String,
    /// Mean of the per-trial means.
    pub mean: f64,
    /// Sample standard error over trials.
    pub stderr: f64,
    /// Underlying sample count: bits for BER, symbol terms for AIR.
    pub n: u64,
    /// Posterior floor events folded into the estimate.
    pub clamps: u64,
    /// Hash of the generating configuration.
    pub config_hash: String,
    /// Root seed of the run.
    pub seed: u64,
}

struct PointSetup {
    value: f64,
    cfg: ScenarioConfig,
    eb_db: f64,
}

#[derive(Clone, Copy, Default)]
struct BitCount {
    errors: u64,
    bits: u64,
}

impl BitCount {
    fn rate(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }

    fn tally(&mut self, decisions: &[usize], truth: &[usize], bits_per_symbol: u32) {
        for (d, t) in decisions.iter().zip(truth) {
            self.errors += u64::from(hamming(*d, *t));
        }
        self.bits += truth.len() as u64 * u64::from(bits_per_symbol);
    }

    fn tally_one(&mut self, decision: usize, truth: usize, bits_per_symbol: u32) {
        self.errors += u64::from(hamming(decision, truth));
        self.bits += u64::from(bits_per_symbol);
    }
}

struct TrialOutcome {
    ber: Vec<Vec<BitCount>>,
    air: Vec<Option<AirAccumulator>>,
    resamples: u32,
}

/// Runs the experiment and reduces it to one record per
/// (sweep point, receiver, metric).
pub fn run(spec: &ExperimentSpec) -> Result<Vec<ResultRecord>> {
    spec.validate()?;
    let points = spec.point_setups();
    let hash = spec.config_hash();
    let trials: Vec<u64> = (0..spec.trials as u64).collect();
    let outcomes: Vec<TrialOutcome> = if spec.parallel {
        trials
            .par_iter()
            .map(|&t| run_trial(spec, &points, t))
            .collect::<Result<Vec<_>>>()?
    } else {
        trials.iter().map(|&t| run_trial(spec, &points, t)).collect::<Result<Vec<_>>>()?
    };
    let resamples: u32 = outcomes.iter().map(|o| o.resamples).sum();
    if resamples > 0 {
        eprintln!("warning: {resamples} trial attempt(s) resampled after numerical failures");
    }

    let want_ber = spec.metrics.contains(&Metric::Ber);
    let want_air = spec.metrics.contains(&Metric::Air);
    let air_label = match spec.scenario.noma_mode {
        NomaMode::Scma => Receiver::ScmaMpa.label(),
        NomaMode::Musa | NomaMode::ZfOnly => Receiver::Mfb.label(),
    };
    let mut records = Vec::new();
    for (p, point) in points.iter().enumerate() {
        if want_ber {
            for (ri, r) in spec.receivers.iter().enumerate() {
                let values: Vec<f64> = outcomes.iter().map(|o| o.ber[p][ri].rate()).collect();
                let (mean, stderr) = mean_stderr(&values);
                records.push(ResultRecord {
                    sweep: point.value,
                    receiver: r.label(),
                    metric: Metric::Ber.label().into(),
                    mean,
                    stderr,
                    n: outcomes.iter().map(|o| o.ber[p][ri].bits).sum(),
                    clamps: 0,
                    config_hash: hash.clone(),
                    seed: spec.seed,
                });
            }
        }
        if want_air {
            let mut values = Vec::with_capacity(outcomes.len());
            let mut n = 0u64;
            let mut clamps = 0u64;
            for o in &outcomes {
                let acc = o.air[p].as_ref().expect("air requested");
                values.push(acc.finalize().map_err(anyhow::Error::new)?);
                n += acc.count();
                clamps += acc.clamps();
            }
            let (mean, stderr) = mean_stderr(&values);
            records.push(ResultRecord {
                sweep: point.value,
                receiver: air_label.clone(),
                metric: Metric::Air.label().into(),
                mean,
                stderr,
                n,
                clamps,
                config_hash: hash.clone(),
                seed: spec.seed,
            });
            let total_users: usize = point.cfg.groups.iter().map(|g| g.users).sum();
            let per_group = total_users as f64 / point.cfg.groups.len() as f64;
            records.push(ResultRecord {
                sweep: point.value,
                receiver: air_label.clone(),
                metric: "air-group".into(),
                mean: mean * per_group,
                stderr: stderr * per_group,
                n,
                clamps,
                config_hash: hash.clone(),
                seed: spec.seed,
            });
        }
    }
    ensure!(!records.is_empty(), "experiment produced no records");
    Ok(records)
}

/// [`run`] restricted to bit error rate.
pub fn run_ber(spec: &ExperimentSpec) -> Result<Vec<ResultRecord>> {
    let mut spec = spec.clone();
    spec.metrics = vec![Metric::Ber];
    run(&spec)
}

/// [`run`] restricted to achievable rate.
pub fn run_air(spec: &ExperimentSpec) -> Result<Vec<ResultRecord>> {
    let mut spec = spec.clone();
    spec.metrics = vec![Metric::Air];
    run(&spec)
}

const MAX_ATTEMPTS: u64 = 3;
const RETRY_STRIDE: u64 = 10_000_019;

fn run_trial(spec: &ExperimentSpec, points: &[PointSetup], trial: u64) -> Result<TrialOutcome> {
    let mut resamples = 0u32;
    for attempt in 0..MAX_ATTEMPTS {
        match run_trial_attempt(spec, points, trial + attempt * RETRY_STRIDE) {
            Ok(mut out) => {
                out.resamples = resamples;
                return Ok(out);
            }
            Err(e) if attempt + 1 < MAX_ATTEMPTS => {
                eprintln!("trial {trial} attempt {attempt} failed ({e}); resampling");
                resamples += 1;
            }
            Err(e) => {
                return Err(e).with_context(|| format!("trial {trial} failed {MAX_ATTEMPTS} times"))
            }
        }
    }
    unreachable!("attempt loop returns");
}

fn run_trial_attempt(
    spec: &ExperimentSpec,
    points: &[PointSetup],
    t: u64,
) -> Result<TrialOutcome> {
    let seed = spec.seed;
    let base = &spec.scenario;
    let nc = base.code_length;
    let want_air = spec.metrics.contains(&Metric::Air);

    // Widest geometry over the sweep; per-point slices reuse its draws.
    let mut wide = points[0].cfg.clone();
    for (g, grp) in wide.groups.iter_mut().enumerate() {
        grp.users = points.iter().map(|p| p.cfg.groups[g].users).max().unwrap();
    }
    let angles = wide.draw_user_angles(&mut derive(seed, &[TAG_ANGLES, t]));
    let covs = build_covariances(&wide, &angles).map_err(anyhow::Error::new)?;
    let chan = sample_channels(&covs, &mut derive(seed, &[TAG_CHANNEL, t]));

    let measured = spec.budget.div_ceil(spec.trials).max(1);
    let guard = match base.link {
        LinkDirection::Uplink => guard_slots(base.total_delays - 1, nc),
        LinkDirection::Downlink => 0,
    };
    let slots = measured + 2 * guard;

    let musa_master = match base.noma_mode {
        NomaMode::Musa => Some(
            MusaCodeSet::generate(
                wide.groups.iter().map(|g| g.users).max().unwrap(),
                nc,
                &mut derive(seed, &[TAG_CODES, t]),
            )
            .map_err(anyhow::Error::new)?,
        ),
        _ => None,
    };
    let scma = match base.noma_mode {
        NomaMode::Scma => Some(spec.scma_codebook()),
        _ => None,
    };

    let mut data_rng = derive(seed, &[TAG_DATA, t]);
    let symbols: Vec<Vec<Vec<usize>>> = wide
        .groups
        .iter()
        .map(|grp| draw_symbols(&mut data_rng, grp.users, slots, base.alphabet_size))
        .collect();

    let mut out = TrialOutcome {
        ber: vec![vec![BitCount::default(); spec.receivers.len()]; points.len()],
        air: points
            .iter()
            .map(|_| want_air.then(|| AirAccumulator::new(base.alphabet_size, nc)))
            .collect(),
        resamples: 0,
    };
    let ctx = TrialContext {
        spec,
        covs: &covs,
        chan: &chan,
        symbols: &symbols,
        musa_master: musa_master.as_ref(),
        scma: scma.as_ref(),
        guard,
        slots,
        t,
    };
    for (p, point) in points.iter().enumerate() {
        match base.link {
            LinkDirection::Uplink => uplink_point(&ctx, point, p, &mut out)?,
            LinkDirection::Downlink => downlink_point(&ctx, point, p, &mut out)?,
        }
    }
    Ok(out)
}

struct TrialContext<'a> {
    spec: &'a ExperimentSpec,
    covs: &'a CovarianceSet,
    chan: &'a ChannelRealization,
    symbols: &'a [Vec<Vec<usize>>],
    musa_master: Option<&'a MusaCodeSet>,
    scma: Option<&'a ScmaCodebook>,
    guard: usize,
    slots: usize,
    t: u64,
}

impl TrialContext<'_> {
    fn mapper(&self, users: usize) -> Result<ChipMapper> {
        match self.spec.scenario.noma_mode {
            NomaMode::Scma => Ok(ChipMapper::Scma(self.scma.unwrap().clone())),
            NomaMode::Musa => {
                let master = self.musa_master.unwrap();
                let codes = (0..users).map(|u| master.code(u).clone()).collect();
                Ok(ChipMapper::Musa(MusaCodeSet::from_codes(codes).map_err(anyhow::Error::new)?))
            }
            NomaMode::ZfOnly => Ok(ChipMapper::Direct),
        }
    }

    fn receiver_index(&self, r: Receiver) -> Option<usize> {
        self.spec.receivers.iter().position(|x| *x == r)
    }

    fn pic_receivers(&self) -> Vec<(usize, usize)> {
        self.spec
            .receivers
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match r {
                Receiver::MusaPic(it) => Some((i, *it)),
                _ => None,
            })
            .collect()
    }
}

fn uplink_point(
    ctx: &TrialContext<'_>,
    point: &PointSetup,
    p: usize,
    out: &mut TrialOutcome,
) -> Result<()> {
    let cfg = &point.cfg;
    let spec = ctx.spec;
    let nc = cfg.code_length;
    let noise = cfg.noise_power;
    let eb = db_to_linear(point.eb_db);
    let energies = cfg.group_energies(eb);
    let per_user = cfg.per_user_energies(eb);
    let m = cfg.antennas;

    let mut r_y = CMat::identity(m, m).scale(noise);
    let mut path_sums: Vec<Vec<CMat>> = Vec::with_capacity(cfg.groups.len());
    for (g, grp) in cfg.groups.iter().enumerate() {
        let paths = ctx.covs.delays[g].len();
        let sums: Vec<CMat> = (0..paths)
            .map(|j| {
                let mut s = CMat::zeros(m, m);
                for u in 0..grp.users {
                    s += &ctx.covs.per_user[g][u][j];
                }
                s
            })
            .collect();
        for s in &sums {
            r_y += s.scale(per_user[g]);
        }
        path_sums.push(sums);
    }

    struct Chain {
        analog: CMat,
        combiners: Vec<CMat>,
        delays: Vec<usize>,
        phi0: CMat,
        lags: Vec<(i64, CMat)>,
        taps: Vec<CMat>,
        frame: CMat,
        mapper: ChipMapper,
    }
    let mut chains = Vec::with_capacity(cfg.groups.len());
    for (g, grp) in cfg.groups.iter().enumerate() {
        let analog = analog_single_carrier(&path_sums[g], &r_y, grp.rf_chains)
            .map_err(anyhow::Error::new)?;
        let taps: Vec<CMat> =
            ctx.chan.taps[g].iter().map(|tp| tp.columns(0, grp.users).into_owned()).collect();
        let eff = effective_channels(&analog.matrix, &taps, &ctx.chan.delays[g]);
        let combiners = digital_uplink(&eff, cfg.combiner(), noise, energies[g], grp.users)
            .map_err(anyhow::Error::new)?;
        let phi = gain_matrices(&combiners, &eff.delays, &eff);
        let lags = noise_correlation(&combiners, &eff.delays, &analog.matrix, noise, nc);
        let mapper = ctx.mapper(grp.users)?;
        let frame = assemble_frame(&mapper, &ctx.symbols[g][..grp.users]);
        chains.push(Chain {
            analog: analog.matrix,
            combiners,
            delays: eff.delays,
            phi0: phi.zero_tap().clone(),
            lags,
            taps,
            frame,
            mapper,
        });
    }

    let chips = ctx.slots * nc;
    let groups_tx: Vec<UplinkGroupTx<'_>> = chains
        .iter()
        .enumerate()
        .map(|(g, c)| UplinkGroupTx {
            frame: &c.frame,
            taps: &c.taps,
            delays: &ctx.chan.delays[g],
            per_user_energy: per_user[g],
        })
        .collect();
    let mut noise_rng = derive(spec.seed, &[TAG_NOISE, ctx.t, p as u64]);
    let y = uplink_received(&groups_tx, noise, &mut noise_rng);

    for (g, chain) in chains.iter().enumerate() {
        let combined = uplink_combined(&y, &chain.analog, &chain.combiners, &chain.delays, chips);
        match cfg.noma_mode {
            NomaMode::Musa | NomaMode::ZfOnly => decode_spread_group(
                ctx,
                p,
                &combined,
                &chain.phi0,
                &chain.lags,
                &chain.mapper,
                &ctx.symbols[g],
                per_user[g],
                cfg,
                out,
            )?,
            NomaMode::Scma => decode_scma_group(
                ctx,
                p,
                &combined,
                &chain.phi0,
                &chain.lags,
                &ctx.symbols[g],
                per_user[g],
                cfg,
                out,
            )?,
        }
    }
    Ok(())
}

/// MMSE-SIC / PIC / MFB / slicer chain for spread or unspread streams on one
/// combined uplink group.
#[allow(clippy::too_many_arguments)]
fn decode_spread_group(
    ctx: &TrialContext<'_>,
    p: usize,
    combined: &CMat,
    phi0: &CMat,
    lags: &[(i64, CMat)],
    mapper: &ChipMapper,
    symbols: &[Vec<usize>],
    user_energy: f64,
    cfg: &ScenarioConfig,
    out: &mut TrialOutcome,
) -> Result<()> {
    let k = phi0.ncols();
    let nc = cfg.code_length;
    let bits = cfg.bits_per_symbol();
    let sqrt_e = user_energy.sqrt();
    let signatures: Vec<CVec> = (0..k)
        .map(|u| match mapper {
            ChipMapper::Musa(cs) => cs.code(u).clone(),
            _ => CVec::from_element(1, hynoma_core::c64(1.0, 0.0)),
        })
        .collect();
    let h_eq: Vec<CMat> = (0..k)
        .map(|s| CMat::from_fn(nc, k, |i, u| signatures[u][i] * phi0[(s, u)] * sqrt_e))
        .collect();
    let r_n: Vec<CMat> = (0..k).map(|s| stream_noise_correlation(lags, s, nc)).collect();
    let windows: Vec<Vec<CVec>> = (0..k).map(|s| chip_windows(combined, s, nc)).collect();

    let idx_sic = ctx.receiver_index(Receiver::MusaMmseSic);
    let pics = ctx.pic_receivers();
    let idx_mfb = ctx.receiver_index(Receiver::Mfb);
    let idx_zf = ctx.receiver_index(Receiver::ZfOnly);
    let want_air = out.air[p].is_some();
    let pic_rounds = pics.iter().map(|(_, it)| *it).max().unwrap_or(0);

    let plans: Option<Vec<SicPlan>> = if idx_sic.is_some() || !pics.is_empty() {
        Some(
            (0..k)
                .map(|s| sic_plan(&h_eq[s], &r_n[s]))
                .collect::<Result<Vec<_>, _>>()
                .map_err(anyhow::Error::new)?,
        )
    } else {
        None
    };
    let models: Option<Vec<GaussianMismatchModel>> = want_air.then(|| {
        (0..k)
            .map(|s| GaussianMismatchModel::from_signature(&h_eq[s].column(s).into_owned(), &r_n[s]))
            .collect()
    });

    let mut truth = vec![0usize; k];
    for slot in ctx.guard..ctx.slots - ctx.guard {
        for (u, t) in truth.iter_mut().enumerate() {
            *t = symbols[u][slot];
        }
        if let Some(plans) = &plans {
            let slot_windows: Vec<CVec> = (0..k).map(|s| windows[s][slot].clone()).collect();
            let trace = pic_aided_decode(&slot_windows, &h_eq, plans, pic_rounds);
            if let Some(ri) = idx_sic {
                out.ber[p][ri].tally(&trace.stage1, &truth, bits);
            }
            for &(ri, it) in &pics {
                out.ber[p][ri].tally(&trace.rounds[it - 1], &truth, bits);
            }
        }
        if idx_mfb.is_some() || want_air {
            for s in 0..k {
                let (soft, decision) = mfb_decode(&windows[s][slot], &h_eq[s], s, &truth);
                if let Some(ri) = idx_mfb {
                    out.ber[p][ri].tally_one(decision, truth[s], bits);
                }
                if want_air {
                    let acc = out.air[p].as_mut().unwrap();
                    acc.update_gaussian(&models.as_ref().unwrap()[s], soft, truth[s]);
                }
            }
        }
        if let Some(ri) = idx_zf {
            for s in 0..k {
                let (_, decision) = zf_slice(windows[s][slot][0], phi0[(s, s)] * sqrt_e);
                out.ber[p][ri].tally_one(decision, truth[s], bits);
            }
        }
    }
    Ok(())
}

/// Per-stream message passing (and its genie bound) on one combined uplink
/// group.
#[allow(clippy::too_many_arguments)]
fn decode_scma_group(
    ctx: &TrialContext<'_>,
    p: usize,
    combined: &CMat,
    phi0: &CMat,
    lags: &[(i64, CMat)],
    symbols: &[Vec<usize>],
    user_energy: f64,
    cfg: &ScenarioConfig,
    out: &mut TrialOutcome,
) -> Result<()> {
    let spec = ctx.spec;
    let cb = ctx.scma.unwrap();
    let k = phi0.ncols();
    ensure!(k == cb.users(), "group size {k} != codebook users {}", cb.users());
    let nc = cfg.code_length;
    let bits = cfg.bits_per_symbol();
    let sqrt_e = user_energy.sqrt();
    let zero_lag = lags
        .iter()
        .find(|(q, _)| *q == 0)
        .map(|(_, m)| m)
        .expect("zero lag present");

    let gains: Vec<CMat> =
        (0..k).map(|s| CMat::from_fn(nc, k, |_i, u| phi0[(s, u)] * sqrt_e)).collect();
    let noise_vars: Vec<Vec<f64>> =
        (0..k).map(|s| vec![zero_lag[(s, s)].re.max(1e-300); nc]).collect();
    let windows: Vec<Vec<CVec>> = (0..k).map(|s| chip_windows(combined, s, nc)).collect();

    let idx_mpa = ctx.receiver_index(Receiver::ScmaMpa);
    let idx_mfb = ctx.receiver_index(Receiver::Mfb);
    let want_air = out.air[p].is_some();
    let mpa_cfg = spec.mpa_config();

    let mut truth = vec![0usize; k];
    for slot in ctx.guard..ctx.slots - ctx.guard {
        for (u, t) in truth.iter_mut().enumerate() {
            *t = symbols[u][slot];
        }
        for s in 0..k {
            if idx_mpa.is_some() || want_air {
                let decoded = mpa_decode(cb, &gains[s], &windows[s][slot], &noise_vars[s], &mpa_cfg);
                if let Some(ri) = idx_mpa {
                    out.ber[p][ri].tally_one(decoded.decisions[s], truth[s], bits);
                }
                if want_air {
                    let acc = out.air[p].as_mut().unwrap();
                    acc.update_posterior(&decoded.posteriors[s], truth[s]);
                }
            }
            if let Some(ri) = idx_mfb {
                let decision =
                    scma_mfb(cb, &gains[s], &windows[s][slot], s, &truth, &noise_vars[s]);
                out.ber[p][ri].tally_one(decision, truth[s], bits);
            }
        }
    }
    Ok(())
}

/// Genie bound for the sparse codebook: cancel every interferer with its
/// true codeword, then pick the own codeword at minimum weighted distance.
fn scma_mfb(
    cb: &ScmaCodebook,
    gains: &CMat,
    window: &CVec,
    own: usize,
    truth: &[usize],
    noise_vars: &[f64],
) -> usize {
    let nc = cb.code_length();
    let mut resid = window.clone();
    for u in 0..cb.users() {
        if u == own {
            continue;
        }
        for i in 0..nc {
            resid[i] -= gains[(i, u)] * cb.chip(u, truth[u], i);
        }
    }
    let mut best = (0usize, f64::INFINITY);
    for x in 0..cb.alphabet() {
        let mut d = 0.0;
        for i in 0..nc {
            d += (resid[i] - gains[(i, own)] * cb.chip(own, x, i)).norm_sqr() / noise_vars[i];
        }
        if d < best.1 {
            best = (x, d);
        }
    }
    best.0
}

fn downlink_point(
    ctx: &TrialContext<'_>,
    point: &PointSetup,
    p: usize,
    out: &mut TrialOutcome,
) -> Result<()> {
    let cfg = &point.cfg;
    let spec = ctx.spec;
    let nc = cfg.code_length;
    let noise = cfg.noise_power;
    let eb = db_to_linear(point.eb_db);
    let energies = cfg.group_energies(eb);
    let per_user = cfg.per_user_energies(eb);
    let m = cfg.antennas;
    let n_sub = cfg.subcarriers;
    let cp = cfg.total_delays - 1;
    let classes = n_sub / nc;

    let mut r_y = CMat::identity(m, m).scale(noise);
    let mut group_sums: Vec<CMat> = Vec::with_capacity(cfg.groups.len());
    for (g, grp) in cfg.groups.iter().enumerate() {
        let mut sum = CMat::zeros(m, m);
        for j in 0..ctx.covs.delays[g].len() {
            for u in 0..grp.users {
                sum += &ctx.covs.per_user[g][u][j];
            }
        }
        r_y += sum.scale(per_user[g]);
        group_sums.push(sum);
    }

    let chips_frame = ctx.slots * nc;
    let ofdm = chips_frame.div_ceil(n_sub);
    let padded = ofdm * n_sub;

    struct Chain {
        analog: CMat,
        precoders: Vec<CMat>,
        frame: CMat,
        scale: f64,
        gains: Vec<CMat>,
        mapper: ChipMapper,
    }
    let mut chains = Vec::with_capacity(cfg.groups.len());
    for (g, grp) in cfg.groups.iter().enumerate() {
        let k = grp.users;
        let analog =
            analog_multicarrier(&group_sums[g], &r_y, grp.rf_chains).map_err(anyhow::Error::new)?;
        let taps: Vec<CMat> =
            ctx.chan.taps[g].iter().map(|tp| tp.columns(0, k).into_owned()).collect();
        let eff = effective_channels(&analog.matrix, &taps, &ctx.chan.delays[g]);
        let lambda = frequency_response(&eff, n_sub);
        let precoders: Vec<CMat> = lambda
            .iter()
            .map(|lk| digital_downlink(lk, cfg.combiner(), noise, energies[g], k))
            .collect::<Result<Vec<_>, _>>()
            .map_err(anyhow::Error::new)?;
        let mapper = ctx.mapper(k)?;
        let chip_var = mapper.chip_variances(k);
        let view = CovarianceSet {
            antennas: m,
            per_user: Vec::new(),
            factors: ctx
                .covs
                .factors
                .iter()
                .enumerate()
                .map(|(gi, fg)| if gi == g { fg[..k].to_vec() } else { Vec::new() })
                .collect(),
            path_sums: Vec::new(),
            group_sums: Vec::new(),
            delays: ctx.covs.delays.clone(),
        };
        let c = power_scaling(
            &view,
            g,
            &analog.matrix,
            cfg.combiner(),
            &chip_var,
            noise,
            energies[g],
            n_sub,
            spec.power_draws,
            &mut derive(spec.seed, &[TAG_POWER, ctx.t, p as u64, g as u64]),
        )
        .map_err(anyhow::Error::new)?;
        let scale = c.sqrt();
        let mut frame = CMat::zeros(k, padded);
        frame
            .columns_mut(0, chips_frame)
            .copy_from(&assemble_frame(&mapper, &ctx.symbols[g][..k]));
        // Per-subcarrier user-to-user gains, scaled by the power normalization.
        let gains: Vec<CMat> =
            (0..n_sub).map(|ks| (&lambda[ks] * &precoders[ks]).scale(scale)).collect();
        chains.push(Chain { analog: analog.matrix, precoders, frame, scale, gains, mapper });
    }

    let groups_tx: Vec<DownlinkGroupTx<'_>> = chains
        .iter()
        .map(|c| DownlinkGroupTx {
            frame: &c.frame,
            analog: &c.analog,
            precoders: &c.precoders,
            scale: c.scale,
        })
        .collect();
    let signal = downlink_time_signal(&groups_tx, n_sub, cp);
    let mut noise_rng = derive(spec.seed, &[TAG_NOISE, ctx.t, p as u64]);

    let idx_sic = ctx.receiver_index(Receiver::MusaMmseSic);
    let idx_mfb = ctx.receiver_index(Receiver::Mfb);
    let idx_zf = ctx.receiver_index(Receiver::ZfOnly);
    let idx_mpa = ctx.receiver_index(Receiver::ScmaMpa);
    let want_air = out.air[p].is_some();
    let bits = cfg.bits_per_symbol();
    let white: CMat = CMat::identity(nc, nc).scale(noise);
    let mpa_cfg = spec.mpa_config();

    for (g, chain) in chains.iter().enumerate() {
        let k = cfg.groups[g].users;
        let mut truth = vec![0usize; k];
        for u in 0..k {
            let taps_user: Vec<CVec> =
                ctx.chan.taps[g].iter().map(|tp| tp.column(u).into_owned()).collect();
            let stream =
                downlink_user_stream(&signal, &taps_user, &ctx.chan.delays[g], noise, &mut noise_rng);
            let chips_rx = downlink_subcarrier_stream(&stream, n_sub, cp, ofdm);

            // Class-periodic models: slot `t` sees subcarriers
            // `(t % classes) * nc ..`.
            let class_h: Vec<CMat> = (0..classes)
                .map(|j| {
                    CMat::from_fn(nc, k, |i, uu| {
                        let b = chain.gains[j * nc + i][(u, uu)];
                        match &chain.mapper {
                            ChipMapper::Musa(cs) => b * cs.code(uu)[i],
                            _ => b,
                        }
                    })
                })
                .collect();
            let plans: Option<Vec<SicPlan>> = if idx_sic.is_some() {
                Some(
                    class_h
                        .iter()
                        .map(|h| sic_plan(h, &white))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(anyhow::Error::new)?,
                )
            } else {
                None
            };
            let models: Option<Vec<GaussianMismatchModel>> = want_air.then(|| {
                class_h
                    .iter()
                    .map(|h| {
                        GaussianMismatchModel::from_signature(&h.column(u).into_owned(), &white)
                    })
                    .collect()
            });

            for slot in 0..ctx.slots {
                let class = slot % classes;
                let window = CVec::from_fn(nc, |i, _| chips_rx[slot * nc + i]);
                for (uu, tr) in truth.iter_mut().enumerate() {
                    *tr = ctx.symbols[g][uu][slot];
                }
                if let Some(plans) = &plans {
                    let decisions = run_sic(&plans[class], &class_h[class], &window);
                    out.ber[p][idx_sic.unwrap()].tally_one(decisions[u], truth[u], bits);
                }
                if idx_mfb.is_some() || want_air {
                    let (soft, decision) = mfb_decode(&window, &class_h[class], u, &truth);
                    if let Some(ri) = idx_mfb {
                        out.ber[p][ri].tally_one(decision, truth[u], bits);
                    }
                    if want_air {
                        let acc = out.air[p].as_mut().unwrap();
                        acc.update_gaussian(&models.as_ref().unwrap()[class], soft, truth[u]);
                    }
                }
                if let Some(ri) = idx_zf {
                    let (_, decision) =
                        zf_slice(window[0], chain.gains[class * nc][(u, u)]);
                    out.ber[p][ri].tally_one(decision, truth[u], bits);
                }
                if idx_mpa.is_some() {
                    let gm = CMat::from_fn(nc, k, |i, uu| chain.gains[class * nc + i][(u, uu)]);
                    let nv = vec![noise; nc];
                    let decoded = mpa_decode(ctx.scma.unwrap(), &gm, &window, &nv, &mpa_cfg);
                    out.ber[p][idx_mpa.unwrap()].tally_one(decoded.decisions[u], truth[u], bits);
                    if want_air {
                        let acc = out.air[p].as_mut().unwrap();
                        acc.update_posterior(&decoded.posteriors[u], truth[u]);
                    }
                }
            }
        }
    }
    Ok(())
}
