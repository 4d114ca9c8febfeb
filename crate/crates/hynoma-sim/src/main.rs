use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hynoma_core::scenario::{NomaMode, ScenarioConfig};
use hynoma_sim::emit::write_outputs;
use hynoma_sim::harness::{run, ExperimentSpec, Metric, Receiver, Sweep};
use hynoma_sim::io::{bundled_scenario, load_codebook, load_scenario};

/// Link-level NOMA / hybrid massive MIMO simulator.
#[derive(Parser)]
#[command(name = "sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep and write CSV/JSON results.
    Run(RunArgs),
    /// Parse and validate a scenario file.
    Validate {
        /// Scenario JSON to check.
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// 64 antennas, 10 realizations: minutes on a laptop.
    Desk,
    /// 100 antennas, 100 realizations: the full-size geometry.
    Paper,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON; defaults to the bundled reference cell.
    #[arg(long)]
    scenario: Option<PathBuf>,

    /// Metrics to collect, comma separated: ber, air.
    #[arg(long, default_value = "ber", value_delimiter = ',')]
    experiment: Vec<String>,

    /// Receivers to run, comma separated: scma-mpa, musa-mmse-sic,
    /// musa-picN, zf-only, mfb.
    #[arg(long, value_delimiter = ',', required = true)]
    receivers: Vec<String>,

    /// Per-bit energy sweep, "start:step:stop" dB or a comma list.
    #[arg(long, conflicts_with_all = ["loading", "loading_eb"])]
    eb: Option<String>,

    /// Overloading sweep in percent of the code length, comma separated.
    #[arg(long, requires = "loading_eb")]
    loading: Option<String>,

    /// Per-bit energy (dB) an overloading sweep runs at.
    #[arg(long)]
    loading_eb: Option<f64>,

    /// Channel realizations per sweep point.
    #[arg(long)]
    trials: Option<usize>,

    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for {ber,air}.{csv,json}.
    #[arg(long, default_value = "results")]
    out: PathBuf,

    /// Geometry and repetition preset; explicit flags win over it.
    #[arg(long, value_enum)]
    profile: Option<Profile>,

    /// Measured symbol slots per sweep point, summed over trials.
    #[arg(long)]
    budget: Option<usize>,

    /// Parallel cancellation rounds available to musa-picN receivers.
    #[arg(long)]
    pic_iters: Option<usize>,

    /// Message passing iterations.
    #[arg(long)]
    mpa_iters: Option<usize>,

    /// Use the max-log message approximation.
    #[arg(long)]
    max_log: bool,

    /// Run trials on one thread; output is identical either way.
    #[arg(long)]
    serial: bool,

    /// Sparse codebook JSON overriding the bundled one.
    #[arg(long)]
    codebook: Option<PathBuf>,

    /// Override the scenario's multiple access mode: scma, musa, zf-only.
    #[arg(long)]
    mode: Option<String>,

    /// Override the antenna count.
    #[arg(long)]
    antennas: Option<usize>,

    /// Override every group's RF chain count.
    #[arg(long)]
    rf_chains: Option<usize>,

    /// Override every group's user count.
    #[arg(long)]
    users: Option<usize>,

    /// Override the spreading code length.
    #[arg(long)]
    code_length: Option<usize>,
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        ensure!(parts.len() == 3, "grid {text:?} is not start:step:stop");
        let start: f64 = parts[0].parse().context("bad grid start")?;
        let step: f64 = parts[1].parse().context("bad grid step")?;
        let stop: f64 = parts[2].parse().context("bad grid stop")?;
        ensure!(step > 0.0, "grid step must be positive");
        ensure!(stop >= start, "grid stop must not precede start");
        let count = ((stop - start) / step).round() as usize + 1;
        return Ok((0..count).map(|i| start + step * i as f64).collect());
    }
    text.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad grid value {v:?}")))
        .collect()
}

fn parse_mode(text: &str) -> Result<NomaMode> {
    match text {
        "scma" => Ok(NomaMode::Scma),
        "musa" => Ok(NomaMode::Musa),
        "zf-only" => Ok(NomaMode::ZfOnly),
        other => bail!("unknown mode {other:?}; expected scma, musa or zf-only"),
    }
}

fn build_spec(args: &RunArgs) -> Result<ExperimentSpec> {
    let mut scenario: ScenarioConfig = match &args.scenario {
        Some(path) => load_scenario(path)?,
        None => bundled_scenario(),
    };

    if let Some(mode) = &args.mode {
        scenario.noma_mode = parse_mode(mode)?;
    }
    if let Some(nc) = args.code_length {
        scenario.code_length = nc;
    }
    if let Some(profile) = args.profile {
        if args.antennas.is_none() {
            scenario.antennas = match profile {
                Profile::Desk => 64,
                Profile::Paper => 100,
            };
        }
        scenario.trials = match profile {
            Profile::Desk => 10,
            Profile::Paper => 100,
        };
    }
    if let Some(m) = args.antennas {
        scenario.antennas = m;
    }
    if let Some(d) = args.rf_chains {
        for grp in &mut scenario.groups {
            grp.rf_chains = d;
        }
    }
    if let Some(k) = args.users {
        for grp in &mut scenario.groups {
            grp.users = k;
        }
    }

    let sweep = match (&args.eb, &args.loading) {
        (Some(_), Some(_)) => unreachable!("clap forbids eb with loading"),
        (None, Some(loading)) => Sweep::LoadingPercent {
            percents: parse_grid(loading)?,
            eb_db: args.loading_eb.context("--loading needs --loading-eb")?,
        },
        (Some(grid), None) => Sweep::EbDb(parse_grid(grid)?),
        (None, None) => Sweep::EbDb(scenario.eb_grid_db.clone()),
    };

    let mut spec = ExperimentSpec::new(scenario, sweep);
    spec.receivers = args
        .receivers
        .iter()
        .map(|r| r.parse::<Receiver>())
        .collect::<Result<Vec<_>>>()?;
    spec.metrics = args
        .experiment
        .iter()
        .map(|m| m.parse::<Metric>())
        .collect::<Result<Vec<_>>>()?;
    if let Some(trials) = args.trials {
        spec.trials = trials;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(budget) = args.budget {
        spec.budget = budget;
    }
    if let Some(iters) = args.pic_iters {
        spec.pic_iterations = iters;
    }
    if let Some(iters) = args.mpa_iters {
        spec.mpa_iterations = iters;
    }
    spec.max_log = args.max_log;
    spec.parallel = !args.serial;
    if let Some(path) = &args.codebook {
        spec.codebook = Some(load_codebook(path)?);
    }
    Ok(spec)
}

fn run_command(args: &RunArgs) -> Result<()> {
    let spec = build_spec(args)?;
    spec.validate()?;
    eprintln!(
        "running {} point(s) x {} trial(s), seed {:#x}, config {}",
        match &spec.sweep {
            Sweep::EbDb(g) => g.len(),
            Sweep::LoadingPercent { percents, .. } => percents.len(),
        },
        spec.trials,
        spec.seed,
        spec.config_hash()
    );
    let records = run(&spec)?;
    let written = write_outputs(&records, &args.out)?;
    for path in &written {
        println!("{}", path.display());
    }
    Ok(())
}

fn validate_command(path: &PathBuf) -> Result<()> {
    let cfg = load_scenario(path)?;
    let users: usize = cfg.groups.iter().map(|g| g.users).sum();
    let chains: usize = cfg.groups.iter().map(|g| g.rf_chains).sum();
    println!(
        "ok: {} antennas, {} groups, {} users, {} rf chains, mode {:?}",
        cfg.antennas,
        cfg.groups.len(),
        users,
        chains,
        cfg.noma_mode
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Validate { scenario } => validate_command(scenario),
    }
}
