use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use irs_core::experiments::{run_scenario, write_csv, CsiMode, ExperimentConfig, ScenarioKind, MAX_SEED};
use irs_core::EstimatorKind;

/// Monte Carlo simulator for IRS-assisted multi-user MISO downlinks.
#[derive(Parser, Debug)]
#[command(name = "irs-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// NMSE of direct and cascaded channel estimates versus training noise.
    Nmse(RunArgs),
    /// Single-user BPSK bit error rate versus SNR.
    Ber(RunArgs),
    /// Single-user net rate versus user distance.
    RateSingle(RunArgs),
    /// Multi-user net min-rate versus the number of training sub-phases.
    Subphase(RunArgs),
    /// Multi-user net min-rate versus the number of IRS elements.
    MinrateN(RunArgs),
    /// Min-rate per alternating-optimization iteration.
    Converge(RunArgs),
    /// Print the default configuration of a scenario as TOML.
    Preset {
        #[arg(value_enum)]
        scenario: PresetName,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML file with [system] and [scenario] overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict the run to a single estimator.
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long, value_enum)]
    csi: Option<CsiArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProtocolArg {
    MmseDft,
    LsDft,
    MmseOnoff,
    LsOnoff,
}

impl From<ProtocolArg> for EstimatorKind {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::MmseDft => Self::MmseDft,
            ProtocolArg::LsDft => Self::LsDft,
            ProtocolArg::MmseOnoff => Self::MmseOnOff,
            ProtocolArg::LsOnoff => Self::LsOnOff,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CsiArg {
    Perfect,
    Imperfect,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PresetName {
    Nmse,
    Ber,
    RateSingle,
    Subphase,
    MinrateN,
    Converge,
}

impl From<PresetName> for ScenarioKind {
    fn from(p: PresetName) -> Self {
        match p {
            PresetName::Nmse => Self::NmseSweep,
            PresetName::Ber => Self::Ber,
            PresetName::RateSingle => Self::SingleUserRate,
            PresetName::Subphase => Self::SubphaseSweep,
            PresetName::MinrateN => Self::MinrateVsN,
            PresetName::Converge => Self::Convergence,
        }
    }
}

fn build_config(kind: ScenarioKind, args: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path, Some(kind))
            .with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::preset(kind),
    };
    let sc = &mut cfg.scenario;
    if let Some(seed) = args.seed {
        sc.seed = seed;
        cfg.system.seed = seed;
    }
    if let Some(trials) = args.trials {
        sc.trials = trials;
    }
    if let Some(p) = args.protocol {
        sc.estimators = vec![p.into()];
    }
    if let Some(csi) = args.csi {
        sc.csi = match csi {
            CsiArg::Perfect => CsiMode::Perfect,
            CsiArg::Imperfect => CsiMode::Imperfect,
        };
    }
    if let Some(out) = &args.out {
        sc.output = Some(out.clone());
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn run(kind: ScenarioKind, args: &RunArgs) -> anyhow::Result<()> {
    let cfg = build_config(kind, args)?;
    let table = run_scenario(&cfg).with_context(|| format!("running {}", kind.name()))?;
    match &cfg.scenario.output {
        Some(path) => write_csv(&table, path)?,
        None => print!("{}", table.to_csv_string()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Nmse(a) => run(ScenarioKind::NmseSweep, a),
        Command::Ber(a) => run(ScenarioKind::Ber, a),
        Command::RateSingle(a) => run(ScenarioKind::SingleUserRate, a),
        Command::Subphase(a) => run(ScenarioKind::SubphaseSweep, a),
        Command::MinrateN(a) => run(ScenarioKind::MinrateVsN, a),
        Command::Converge(a) => run(ScenarioKind::Convergence, a),
        Command::Preset { scenario } => ExperimentConfig::preset((*scenario).into())
            .to_toml_string()
            .map(|s| print!("{s}"))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
