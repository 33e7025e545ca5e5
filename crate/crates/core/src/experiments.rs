//! Monte Carlo scenarios, rate and BER metrics, configuration files and CSV
//! output.
//!
//! Every trial gets its own ChaCha stream keyed by `(seed, trial index)`, so
//! results do not depend on how trials are scheduled across threads. Grid
//! points reuse the same streams, which keeps channel draws common across a
//! sweep whenever the dimensions allow it.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{ao_maxmin, com_init, single_user_closed_form, solve_olp, AoOptions, InitPolicy, OlpOptions};
use crate::error::{Error, Result};
use crate::estimation::{estimate_user, mmse_direct, nmse_theory, ChannelRole, EstimatorKind, NmseAccumulator, NmseParams};
use crate::linalg::{crandn, crandn_vector};
use crate::maxmin_sdp::{DinkelbachOptions, ExtractOptions};
use crate::sysmodel::{
    gen_los_channel, ChannelSet, ChannelStatistics, CorrelationSpec, Geometry, LinkGains, LosAngles, PathLossModel,
    Position, RankMode, SystemConfig, UserLink,
};
use crate::training::{train, Protocol, TrainingDesign};
use crate::{CMatrix, CVector, C64};

/// Net rate `(1 − Sτ_S/τ) log₂(1 + γ)` in bit/s/Hz.
pub fn net_rate(gamma: f64, s: usize, tau_s: f64, tau: f64) -> Result<f64> {
    let training = s as f64 * tau_s;
    if training > tau * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!("training time {training} s exceeds the coherence interval {tau} s")));
    }
    if gamma < 0.0 {
        return Err(Error::Domain(format!("negative SINR {gamma}")));
    }
    Ok(((1.0 - training / tau).max(0.0)) * (1.0 + gamma).log2())
}

/// `Q(x)`, the standard normal tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Count BPSK errors over `symbols` uses of `y = h s + n`, `n ~ CN(0, 1/snr)`,
/// with coherent detection `ŝ = sign(Re(h* y))`.
pub fn bpsk_errors<R: Rng + ?Sized>(h_eff: C64, snr: f64, symbols: usize, rng: &mut R) -> usize {
    let std = (1.0 / snr).sqrt();
    let mut errors = 0;
    for _ in 0..symbols {
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let y = h_eff * s + crandn(rng) * std;
        let decided = if (h_eff.conj() * y).re >= 0.0 { 1.0 } else { -1.0 };
        if decided != s {
            errors += 1;
        }
    }
    errors
}

/// Outcome of one BER channel realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerTrial {
    pub errors: usize,
    pub symbols: usize,
    /// `Q(√(2 snr |h_eff|²))`, the exact BER conditioned on this channel.
    pub conditional: f64,
}

/// Single-user BPSK link: `v` and MRT are designed from `estimate`, symbols
/// travel over `truth`.
pub fn bpsk_ber_trial<R: Rng + ?Sized>(
    truth: &UserLink,
    estimate: &UserLink,
    snr: f64,
    symbols: usize,
    rng: &mut R,
) -> Result<BerTrial> {
    let (v, g) = single_user_closed_form(&estimate.hd, &estimate.h0)?;
    let h = truth.overall(&v)?;
    let h_eff = g.dotc(&h).conj();
    let errors = bpsk_errors(h_eff, snr, symbols, rng);
    Ok(BerTrial { errors, symbols, conditional: q_function((2.0 * snr * h_eff.norm_sqr()).sqrt()) })
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Largest seed a TOML config can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// RNG for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Run `trials` independent trials in parallel; results come back in trial order.
pub fn run_trials<T, F>(trials: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| f(t, &mut trial_rng(seed, t as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    NmseSweep,
    Ber,
    SingleUserRate,
    SubphaseSweep,
    MinrateVsN,
    Convergence,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::NmseSweep => "nmse_sweep",
            Self::Ber => "ber",
            Self::SingleUserRate => "single_user_rate",
            Self::SubphaseSweep => "subphase_sweep",
            Self::MinrateVsN => "minrate_vs_n",
            Self::Convergence => "convergence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiMode {
    Perfect,
    #[default]
    Imperfect,
}

/// One experiment: the sweep, its Monte Carlo budget and the model options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Sweep values: σ² (nmse_sweep), SNR in dB (ber), user distance in m
    /// (single_user_rate), S (subphase_sweep), N (minrate_vs_n). Ignored by
    /// convergence.
    pub grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub csi: CsiMode,
    /// Add the perfect-CSI reference curve to imperfect-CSI runs.
    pub include_perfect: bool,
    /// Common path-loss factor replacing the distance model on every link.
    pub beta_override: Option<f64>,
    /// Exponential correlation coefficient at the BS and the IRS.
    pub eta: f64,
    pub rank_mode: RankMode,
    pub symbols_per_trial: usize,
    /// Sub-phase count relative to `N+1` for sweeps over `N` or SNR.
    pub subphase_factor: usize,
    /// BS antenna counts of the no-IRS reference systems.
    pub baseline_antennas: Vec<usize>,
    pub init: InitPolicy,
    pub eps: f64,
    pub eps1: f64,
    pub randomizations: usize,
    pub max_outer: usize,
    pub bs: Position,
    pub irs: Position,
    /// `[x_min, x_max, y_min, y_max]` of the user drop region.
    pub user_box: [f64; 4],
    pub output: Option<PathBuf>,
}

/// Complete experiment description as stored in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub scenario: Scenario,
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    pub fn preset(kind: ScenarioKind) -> Self {
        let base = Scenario {
            kind,
            grid: Vec::new(),
            trials: 200,
            seed: 1,
            estimators: vec![EstimatorKind::MmseDft],
            csi: CsiMode::Imperfect,
            include_perfect: true,
            beta_override: None,
            eta: 0.95,
            rank_mode: RankMode::HighRank,
            symbols_per_trial: 1,
            subphase_factor: 1,
            baseline_antennas: Vec::new(),
            init: InitPolicy::AllOnes,
            eps: 1e-4,
            eps1: 1e-4,
            randomizations: 1000,
            max_outer: 100,
            bs: Position::new(0.0, 0.0),
            irs: Position::new(0.0, 100.0),
            user_box: [-30.0, 30.0, 70.0, 130.0],
            output: None,
        };
        let mut system = SystemConfig::default();
        let with_users = |system: &mut SystemConfig, m: usize, n: usize, k: usize| {
            system.antennas = m;
            system.elements = n;
            system.users = k;
            system.subphases = n + 1;
            system.subphase_duration = 50e-6 * k as f64;
        };
        let scenario = match kind {
            ScenarioKind::NmseSweep => {
                with_users(&mut system, 4, 10, 1);
                system.subphase_duration = 5e-5;
                Scenario {
                    grid: vec![5e-7, 5e-6, 5e-5, 5e-4, 5e-3, 5e-2],
                    trials: 10_000,
                    estimators: EstimatorKind::ALL.to_vec(),
                    beta_override: Some(1.0),
                    eta: 0.0,
                    ..base
                }
            }
            ScenarioKind::Ber => {
                with_users(&mut system, 4, 10, 1);
                Scenario {
                    grid: (-15..=20).map(f64::from).collect(),
                    trials: 2000,
                    estimators: vec![EstimatorKind::MmseDft, EstimatorKind::LsDft],
                    beta_override: Some(0.25),
                    eta: 0.0,
                    symbols_per_trial: 1000,
                    ..base
                }
            }
            ScenarioKind::SingleUserRate => {
                with_users(&mut system, 4, 40, 1);
                system.sigma_sq = 1e-18;
                Scenario {
                    grid: (1..=12).map(|i| 10.0 * i as f64).collect(),
                    trials: 500,
                    estimators: vec![EstimatorKind::MmseDft, EstimatorKind::LsDft],
                    rank_mode: RankMode::RankOne,
                    irs: Position::new(50.0, 10.0),
                    ..base
                }
            }
            ScenarioKind::SubphaseSweep => {
                with_users(&mut system, 8, 8, 4);
                Scenario { grid: vec![9.0, 12.0, 16.0, 20.0, 40.0, 60.0, 100.0, 150.0, 200.0, 250.0], ..base }
            }
            ScenarioKind::MinrateVsN => {
                with_users(&mut system, 8, 8, 4);
                Scenario {
                    grid: vec![8.0, 16.0, 24.0, 32.0, 40.0, 48.0],
                    trials: 100,
                    baseline_antennas: vec![20],
                    init: InitPolicy::CentreOfMeans,
                    ..base
                }
            }
            ScenarioKind::Convergence => {
                with_users(&mut system, 8, 16, 4);
                Scenario { trials: 50, init: InitPolicy::CentreOfMeans, max_outer: 30, ..base }
            }
        };
        Self { system, scenario }
    }

    /// Preset for the file's `scenario.kind` (or `kind` when given) overlaid
    /// with the file's keys. Unknown keys are rejected.
    pub fn from_toml_str(text: &str, kind: Option<ScenarioKind>) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e| Error::Parse(format!("{e}")))?;
        let file_kind = file
            .get("scenario")
            .and_then(|s| s.get("kind"))
            .map(|k| k.clone().try_into::<ScenarioKind>().map_err(|e| Error::Config(format!("scenario.kind: {e}"))))
            .transpose()?;
        let kind = match (kind, file_kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("config describes {} but {} was requested", b.name(), a.name())));
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(Error::Config("scenario.kind is missing".into())),
        };
        let preset = Self::preset(kind);
        let mut merged = toml::Table::try_from(&preset).map_err(|e| Error::Parse(format!("{e}")))?;
        for (section, value) in file {
            match (merged.get_mut(&section), value) {
                (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => {
                    for (k, v) in src {
                        dst.insert(k, v);
                    }
                }
                (_, v) => {
                    merged.insert(section, v);
                }
            }
        }
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, kind: Option<ScenarioKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, kind)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("{e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let sc = &self.scenario;
        if sc.seed > MAX_SEED || self.system.seed > MAX_SEED {
            return Err(Error::Config(format!("seeds must not exceed {MAX_SEED}")));
        }
        if sc.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if sc.grid.is_empty() && sc.kind != ScenarioKind::Convergence {
            return Err(Error::Config("grid must not be empty".into()));
        }
        if sc.estimators.is_empty() {
            return Err(Error::Config("at least one estimator is required".into()));
        }
        if !(0.0..1.0).contains(&sc.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1), got {}", sc.eta)));
        }
        let fixed_s = matches!(sc.kind, ScenarioKind::NmseSweep | ScenarioKind::SingleUserRate | ScenarioKind::Convergence);
        if fixed_s && sc.estimators.iter().any(|e| e.protocol() == Protocol::Dft) {
            self.system.validate_dft()?;
        }
        if sc.subphase_factor == 0 {
            return Err(Error::Config("subphase_factor must be at least 1".into()));
        }
        if let Some(b) = sc.beta_override {
            if !(b > 0.0) {
                return Err(Error::Config(format!("beta_override must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

/// A CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::Float(x) if x.is_nan() => "NaN".into(),
            Self::Float(x) if x.is_infinite() => if *x > 0.0 { "inf".into() } else { "-inf".into() },
            Self::Float(x) => format!("{x:.11e}"),
            Self::Int(i) => i.to_string(),
            Self::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Self::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Self::Text(x.into())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Self::Text(x)
    }
}

/// Column schema plus one row per grid point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Float value at `(row, column name)`.
    pub fn value(&self, row: usize, name: &str) -> Option<f64> {
        match self.rows.get(row)?.get(self.column(name)?)? {
            Cell::Float(x) => Some(*x),
            Cell::Int(i) => Some(*i as f64),
            Cell::Text(_) => None,
        }
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(|e| Error::Parse(format!("{e}")))?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(|e| Error::Parse(format!("{e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(format!("{e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(format!("{e}")))
    }
}

/// Write `table` as UTF-8 CSV, floats with 12 significant digits.
pub fn write_csv(table: &ResultTable, path: &Path) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let text = table.to_csv_string()?;
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)?;
    Ok(())
}

/// Per-grid-point status: `ok`, `failed=<n>/<trials>` or the first error.
fn status(failures: usize, trials: usize, first: Option<&Error>) -> String {
    match (failures, first) {
        (0, _) => "ok".into(),
        (f, Some(e)) if f == trials => format!("error: {e}"),
        (f, _) => format!("failed={f}/{trials}"),
    }
}

fn split<T>(results: Vec<Result<T>>) -> (Vec<T>, usize, Option<Error>) {
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = 0;
    let mut first = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failures += 1;
                first.get_or_insert(e);
            }
        }
    }
    (ok, failures, first)
}

fn scale_system(system: &SystemConfig, m: usize, n: usize) -> SystemConfig {
    SystemConfig { antennas: m, elements: n, ..system.clone() }
}

/// Large-scale gains of `users` drops in the scenario's user box.
fn drop_users<R: Rng + ?Sized>(cfg: &SystemConfig, sc: &Scenario, rng: &mut R) -> Result<LinkGains> {
    if let Some(b) = sc.beta_override {
        return Ok(LinkGains::uniform(cfg.users, 1.0, b, b));
    }
    let [x0, x1, y0, y1] = sc.user_box;
    let users = (0..cfg.users)
        .map(|_| Position::new(rng.random_range(x0..=x1), rng.random_range(y0..=y1)))
        .collect();
    let geometry = Geometry { bs: sc.bs, irs: sc.irs, users };
    LinkGains::from_geometry(cfg, &geometry, PathLossModel::UMI_LOS, PathLossModel::UMI_NLOS)
}

fn correlation(sc: &Scenario, dim: usize) -> CorrelationSpec {
    if sc.eta == 0.0 {
        CorrelationSpec::Identity(dim)
    } else {
        CorrelationSpec::Exponential { eta: sc.eta, dim }
    }
}

/// BS→IRS LoS angles; rank-one links use the geometric bearing.
fn los_angles<R: Rng + ?Sized>(cfg: &SystemConfig, sc: &Scenario, rng: &mut R) -> LosAngles {
    match sc.rank_mode {
        RankMode::HighRank => LosAngles::random(cfg.antennas, cfg.elements, rng),
        RankMode::RankOne => {
            let bearing = (sc.irs.y - sc.bs.y).atan2(sc.irs.x - sc.bs.x);
            LosAngles::single((PI / 2.0, bearing), (PI / 2.0, bearing + PI))
        }
    }
}

fn draw_channels<R: Rng + ?Sized>(cfg: &SystemConfig, sc: &Scenario, gains: LinkGains, rng: &mut R) -> Result<ChannelSet> {
    let stats = ChannelStatistics::with_correlation(
        gains,
        &correlation(sc, cfg.antennas),
        &correlation(sc, cfg.elements),
    )?;
    let h1 = gen_los_channel(cfg, stats.gains.beta1, &los_angles(cfg, sc, rng), sc.rank_mode)?;
    ChannelSet::draw(Arc::new(stats), h1, rng)
}

/// Estimated links of every user under `estimator`.
fn estimate_links<R: Rng + ?Sized>(
    ch: &ChannelSet,
    design: &TrainingDesign,
    estimator: EstimatorKind,
    rng: &mut R,
) -> Result<Vec<UserLink>> {
    let obs = train(ch, design, rng)?;
    obs.iter()
        .enumerate()
        .map(|(k, o)| estimate_user(o, &ch.h1, &ch.stats, k, design, estimator).map(|e| e.link()))
        .collect()
}

fn training_design(cfg: &SystemConfig, estimator: EstimatorKind, s: usize) -> Result<TrainingDesign> {
    match estimator.protocol() {
        Protocol::Dft => TrainingDesign::dft(s, cfg.elements, cfg.pilot_power, cfg.subphase_duration, cfg.sigma_sq),
        Protocol::OnOff => TrainingDesign::onoff(cfg.elements, cfg.pilot_power, cfg.subphase_duration, cfg.sigma_sq),
    }
}

fn ao_options(cfg: &SystemConfig, sc: &Scenario, seed: u64) -> AoOptions {
    AoOptions {
        eps: sc.eps,
        dinkelbach: DinkelbachOptions { eps1: sc.eps1, ..Default::default() },
        extract: ExtractOptions { randomizations: sc.randomizations, ..Default::default() },
        olp: OlpOptions::default(),
        max_outer: sc.max_outer,
        init: sc.init,
        seed,
        ..AoOptions::new(cfg.sigma_n_sq, cfg.p_max)
    }
}

/// Run the scenario described by `cfg`.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    match cfg.scenario.kind {
        ScenarioKind::NmseSweep => run_nmse_sweep(cfg),
        ScenarioKind::Ber => run_ber(cfg),
        ScenarioKind::SingleUserRate => run_single_user_rate(cfg),
        ScenarioKind::SubphaseSweep => run_subphase_sweep(cfg),
        ScenarioKind::MinrateVsN => run_minrate_vs_n(cfg),
        ScenarioKind::Convergence => run_convergence(cfg),
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct NmseTrial {
    direct: NmseAccumulator,
    cascaded: NmseAccumulator,
}

/// NMSE of direct and cascaded estimates versus σ²; theory columns assume
/// `R = I`.
fn run_nmse_sweep(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let (sys, sc) = (&cfg.system, &cfg.scenario);
    let mut columns = vec!["sigma_sq".to_string(), "c".to_string()];
    for e in &sc.estimators {
        for role in ["direct", "cascaded"] {
            for suffix in ["", "_se", "_theory"] {
                columns.push(format!("{}_{role}{suffix}", e.name().replace('-', "_")));
            }
        }
    }
    columns.push("status".into());
    let mut table = ResultTable::new(columns);
    let beta = sc.beta_override.unwrap_or(1.0);
    for &sigma_sq in &sc.grid {
        let sys = SystemConfig { sigma_sq, users: 1, ..sys.clone() };
        let results = run_trials(sc.trials, sc.seed, |_, rng| -> Result<Vec<NmseTrial>> {
            let ch = draw_channels(&sys, sc, LinkGains::uniform(1, 1.0, beta, beta), rng)?;
            let mut out = Vec::with_capacity(sc.estimators.len());
            let mut cached: Vec<(Protocol, crate::training::PilotObservation, TrainingDesign)> = Vec::new();
            for &est in &sc.estimators {
                let pos = cached.iter().position(|(p, _, _)| *p == est.protocol());
                let idx = match pos {
                    Some(i) => i,
                    None => {
                        let design = training_design(&sys, est, sys.subphases)?;
                        let obs = train(&ch, &design, rng)?.remove(0);
                        cached.push((est.protocol(), obs, design));
                        cached.len() - 1
                    }
                };
                let (_, obs, design) = &cached[idx];
                let e = estimate_user(obs, &ch.h1, &ch.stats, 0, design, est)?;
                let mut t = NmseTrial::default();
                t.direct.push(&e.hd_hat, &ch.hd[0]);
                for n in 0..sys.elements {
                    t.cascaded.push(&e.h0_hat.column(n).into_owned(), &ch.h0[0].column(n).into_owned());
                }
                out.push(t);
            }
            Ok(out)
        });
        let (ok, failures, first) = split(results);
        let params = NmseParams {
            beta_d: beta,
            beta_k: beta,
            m: sys.antennas,
            s: sys.subphases,
            p_c: sys.pilot_power,
            tau_s: sys.subphase_duration,
            sigma_sq,
        };
        let mut row: Vec<Cell> = vec![sigma_sq.into(), params.c().into()];
        for (j, &est) in sc.estimators.iter().enumerate() {
            for role in [ChannelRole::Direct, ChannelRole::Cascaded] {
                let pick = |t: &NmseTrial| match role {
                    ChannelRole::Direct => t.direct,
                    ChannelRole::Cascaded => t.cascaded,
                };
                let mut total = NmseAccumulator::default();
                for t in &ok {
                    total.merge(&pick(&t[j]));
                }
                let mean_energy = total.energy / ok.len().max(1) as f64;
                let per_trial: Vec<f64> = ok.iter().map(|t| pick(&t[j]).error / mean_energy).collect();
                let (_, se) = mean_se(&per_trial);
                row.push(total.value().unwrap_or(f64::NAN).into());
                row.push(se.into());
                row.push(nmse_theory(est, role, &params)?.into());
            }
        }
        row.push(status(failures, sc.trials, first.as_ref()).into());
        table.push(row);
    }
    Ok(table)
}

/// BPSK BER versus SNR for a single user. Training noise follows the SNR:
/// `σ² = P_C τ_S / snr`.
fn run_ber(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let (sys, sc) = (&cfg.system, &cfg.scenario);
    let mut curves = vec!["perfect".to_string()];
    curves.extend(sc.estimators.iter().map(|e| e.name().replace('-', "_")));
    curves.push("no_irs".into());
    let mut columns = vec!["snr_db".to_string()];
    for c in &curves {
        columns.push(format!("ber_{c}"));
        columns.push(format!("ber_{c}_se"));
        columns.push(format!("ber_{c}_conditional"));
    }
    columns.extend(["symbols".to_string(), "status".to_string()]);
    let mut table = ResultTable::new(columns);
    let s = sc.subphase_factor * (sys.elements + 1);
    for &snr_db in &sc.grid {
        let snr = 10f64.powf(snr_db / 10.0);
        let sys = SystemConfig {
            users: 1,
            subphases: s,
            sigma_sq: sys.pilot_power * sys.subphase_duration / snr,
            ..sys.clone()
        };
        let results = run_trials(sc.trials, sc.seed, |_, rng| -> Result<Vec<BerTrial>> {
            let gains = match sc.beta_override {
                Some(b) => LinkGains { beta1: b, beta2: vec![b], beta_d: vec![b] },
                None => drop_users(&sys, sc, rng)?,
            };
            let ch = draw_channels(&sys, sc, gains, rng)?;
            let truth = ch.links().remove(0);
            let mut out = vec![bpsk_ber_trial(&truth, &truth, snr, sc.symbols_per_trial, rng)?];
            for &est in &sc.estimators {
                let design = training_design(&sys, est, s)?;
                let link = estimate_links(&ch, &design, est, rng)?.remove(0);
                out.push(bpsk_ber_trial(&truth, &link, snr, sc.symbols_per_trial, rng)?);
            }
            let direct = UserLink { hd: truth.hd.clone(), h0: CMatrix::zeros(sys.antennas, 0) };
            out.push(bpsk_ber_trial(&direct, &direct, snr, sc.symbols_per_trial, rng)?);
            Ok(out)
        });
        let (ok, failures, first) = split(results);
        let mut row: Vec<Cell> = vec![snr_db.into()];
        let symbols = ok.len() * sc.symbols_per_trial;
        for j in 0..curves.len() {
            let errors: usize = ok.iter().map(|t| t[j].errors).sum();
            let p = errors as f64 / symbols.max(1) as f64;
            let se = (p * (1.0 - p) / symbols.max(1) as f64).sqrt();
            let conditional = ok.iter().map(|t| t[j].conditional).sum::<f64>() / ok.len().max(1) as f64;
            row.extend([p.into(), se.into(), conditional.into()]);
        }
        row.push(symbols.into());
        row.push(status(failures, sc.trials, first.as_ref()).into());
        table.push(row);
    }
    Ok(table)
}

/// MMSE estimate of a direct-only channel from one sub-phase.
fn estimate_direct_only<R: Rng + ?Sized>(hd: &CVector, r_bs: &CMatrix, beta_d: f64, noise_var: f64, rng: &mut R) -> Result<CVector> {
    let obs = hd + crandn_vector(hd.len(), rng) * C64::new(noise_var.sqrt(), 0.0);
    Ok(mmse_direct(&obs, r_bs, beta_d, noise_var)?.estimate)
}

/// Single-user net rate versus the user position `(d_u, 0)`.
fn run_single_user_rate(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let (sys, sc) = (&cfg.system, &cfg.scenario);
    let mut curves = vec!["perfect".to_string()];
    curves.extend(sc.estimators.iter().map(|e| e.name().replace('-', "_")));
    curves.extend(["no_irs_perfect".to_string(), "no_irs_mmse".to_string()]);
    let mut columns = vec!["distance".to_string()];
    for c in &curves {
        columns.push(format!("rate_{c}"));
        columns.push(format!("rate_{c}_se"));
    }
    columns.push("status".into());
    let mut table = ResultTable::new(columns);
    let sys = SystemConfig { users: 1, ..sys.clone() };
    let s = sys.subphases;
    for &d in &sc.grid {
        let results = run_trials(sc.trials, sc.seed, |_, rng| -> Result<Vec<f64>> {
            let gains = match sc.beta_override {
                Some(b) => LinkGains { beta1: b, beta2: vec![b], beta_d: vec![b] },
                None => LinkGains::from_geometry(
                    &sys,
                    &Geometry { bs: sc.bs, irs: sc.irs, users: vec![Position::new(d, 0.0)] },
                    PathLossModel::UMI_LOS,
                    PathLossModel::UMI_NLOS,
                )?,
            };
            let ch = draw_channels(&sys, sc, gains, rng)?;
            let truth = ch.links().remove(0);
            let snr_of = |link: &UserLink, design_from: &UserLink| -> Result<f64> {
                let (v, g) = single_user_closed_form(&design_from.hd, &design_from.h0)?;
                let h = link.overall(&v)?;
                Ok(sys.p_max * g.dotc(&h).norm_sqr() / sys.sigma_n_sq)
            };
            let mut out = vec![net_rate(snr_of(&truth, &truth)?, s, sys.subphase_duration, sys.coherence_time)?];
            for &est in &sc.estimators {
                let design = training_design(&sys, est, s)?;
                let link = estimate_links(&ch, &design, est, rng)?.remove(0);
                let s_used = design.subphases();
                out.push(net_rate(snr_of(&truth, &link)?, s_used, sys.subphase_duration, sys.coherence_time)?);
            }
            let hd = &truth.hd;
            let direct_snr = |g: &CVector| sys.p_max * g.dotc(hd).norm_sqr() / sys.sigma_n_sq;
            let unit = |x: &CVector| x / C64::new(x.norm(), 0.0);
            out.push(net_rate(direct_snr(&unit(hd)), 1, sys.subphase_duration, sys.coherence_time)?);
            let noise = sys.sigma_sq / (sys.pilot_power * sys.subphase_duration);
            let hd_hat = estimate_direct_only(hd, &ch.stats.r_bs[0], ch.stats.gains.beta_d[0], noise, rng)?;
            out.push(net_rate(direct_snr(&unit(&hd_hat)), 1, sys.subphase_duration, sys.coherence_time)?);
            Ok(out)
        });
        let (ok, failures, first) = split(results);
        let mut row: Vec<Cell> = vec![d.into()];
        for j in 0..curves.len() {
            let (m, se) = mean_se(&ok.iter().map(|t| t[j]).collect::<Vec<_>>());
            row.extend([m.into(), se.into()]);
        }
        row.push(status(failures, sc.trials, first.as_ref()).into());
        table.push(row);
    }
    Ok(table)
}

/// One multi-user trial: optimized true min-SINR with perfect CSI and, when
/// requested, with each estimator.
fn multiuser_trial<R: Rng + ?Sized>(
    sys: &SystemConfig,
    sc: &Scenario,
    s: usize,
    trial: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let gains = drop_users(sys, sc, rng)?;
    let ch = draw_channels(sys, sc, gains, rng)?;
    let truth = ch.links();
    let opts = ao_options(sys, sc, sc.seed ^ trial as u64);
    let mut out = Vec::new();
    if wants_perfect(sc) {
        out.push(ao_maxmin(&truth, None, &opts)?.min_sinr());
    }
    if sc.csi == CsiMode::Imperfect {
        for &est in &sc.estimators {
            let design = training_design(sys, est, s)?;
            let links = estimate_links(&ch, &design, est, rng)?;
            out.push(ao_maxmin(&links, Some(&truth), &opts)?.reported_min_sinr());
        }
    }
    Ok(out)
}

fn wants_perfect(sc: &Scenario) -> bool {
    sc.include_perfect || sc.csi == CsiMode::Perfect
}

fn multiuser_curves(sc: &Scenario) -> Vec<String> {
    let mut curves = Vec::new();
    if wants_perfect(sc) {
        curves.push("perfect".to_string());
    }
    if sc.csi == CsiMode::Imperfect {
        curves.extend(sc.estimators.iter().map(|e| e.name().replace('-', "_")));
    }
    curves
}

/// Net min-rate versus the number of training sub-phases `S`.
fn run_subphase_sweep(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let (sys, sc) = (&cfg.system, &cfg.scenario);
    let curves = multiuser_curves(sc);
    let mut columns = vec!["subphases".to_string()];
    for c in &curves {
        columns.push(format!("min_rate_{c}"));
        columns.push(format!("min_rate_{c}_se"));
    }
    columns.push("status".into());
    let mut table = ResultTable::new(columns);
    for &sv in &sc.grid {
        let s = sv.round() as usize;
        let mut row: Vec<Cell> = vec![(s as f64).into()];
        let results = run_trials(sc.trials, sc.seed, |t, rng| -> Result<Vec<f64>> {
            net_rate(0.0, s, sys.subphase_duration, sys.coherence_time)?;
            multiuser_trial(sys, sc, s, t, rng)?
                .into_iter()
                .map(|g| net_rate(g, s, sys.subphase_duration, sys.coherence_time))
                .collect()
        });
        let (ok, failures, first) = split(results);
        for j in 0..curves.len() {
            let (m, se) = mean_se(&ok.iter().map(|t| t[j]).collect::<Vec<_>>());
            row.extend([m.into(), se.into()]);
        }
        row.push(status(failures, sc.trials, first.as_ref()).into());
        table.push(row);
    }
    Ok(table)
}

/// Net min-rate versus `N` with `S = subphase_factor·(N+1)`, plus no-IRS
/// references and the unoptimized initial reflect vector.
fn run_minrate_vs_n(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let (sys, sc) = (&cfg.system, &cfg.scenario);
    let mut curves = multiuser_curves(sc);
    curves.push("init_only".into());
    for m in &sc.baseline_antennas {
        curves.push(format!("no_irs_m{m}"));
    }
    let mut columns = vec!["elements".to_string()];
    for c in &curves {
        columns.push(format!("min_rate_{c}"));
        columns.push(format!("min_rate_{c}_se"));
    }
    columns.push("status".into());
    let mut table = ResultTable::new(columns);
    for &nv in &sc.grid {
        let n = nv.round() as usize;
        let sys = scale_system(sys, sys.antennas, n);
        let s = sc.subphase_factor * (n + 1);
        let rate = |g: f64, s: usize| net_rate(g, s, sys.subphase_duration, sys.coherence_time);
        let results = run_trials(sc.trials, sc.seed, |t, rng| -> Result<Vec<f64>> {
            let gains = drop_users(&sys, sc, rng)?;
            let stats_rng_state = rng.clone();
            let ch = draw_channels(&sys, sc, gains.clone(), rng)?;
            let truth = ch.links();
            let opts = ao_options(&sys, sc, sc.seed ^ t as u64);
            let mut out = Vec::new();
            if wants_perfect(sc) {
                out.push(rate(ao_maxmin(&truth, None, &opts)?.min_sinr(), s)?);
            }
            if sc.csi == CsiMode::Imperfect {
                for &est in &sc.estimators {
                    let design = training_design(&sys, est, s)?;
                    let links = estimate_links(&ch, &design, est, rng)?;
                    out.push(rate(ao_maxmin(&links, Some(&truth), &opts)?.reported_min_sinr(), s)?);
                }
            }
            let v0 = com_init(&truth, sc.init);
            let h: Vec<CVector> = truth.iter().map(|l| l.overall(&v0)).collect::<Result<_>>()?;
            out.push(rate(solve_olp(&h, sys.sigma_n_sq, sys.p_max, OlpOptions::default())?.tau, s)?);
            for &m in &sc.baseline_antennas {
                let mut brng = stats_rng_state.clone();
                let bsys = scale_system(&sys, m, 0);
                let stats = ChannelStatistics::with_correlation(
                    gains.clone(),
                    &correlation(sc, m),
                    &CorrelationSpec::Identity(0),
                )?;
                let draws = crate::sysmodel::gen_user_channels(&stats, &mut brng);
                let sol = solve_olp(&draws.hd, bsys.sigma_n_sq, bsys.p_max, OlpOptions::default())?;
                out.push(rate(sol.tau, 1)?);
            }
            Ok(out)
        });
        let (ok, failures, first) = split(results);
        let mut row: Vec<Cell> = vec![(n as f64).into()];
        for j in 0..curves.len() {
            let (m, se) = mean_se(&ok.iter().map(|t| t[j]).collect::<Vec<_>>());
            row.extend([m.into(), se.into()]);
        }
        row.push(status(failures, sc.trials, first.as_ref()).into());
        table.push(row);
    }
    Ok(table)
}

/// Min-rate `log₂(1 + γ)` (true channels) per AO iteration, averaged over
/// trials; runs that stopped early hold their final value.
fn run_convergence(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let (sys, sc) = (&cfg.system, &cfg.scenario);
    let curves = multiuser_curves(sc);
    let mut columns = vec!["iteration".to_string()];
    for c in &curves {
        columns.push(format!("min_rate_{c}"));
        columns.push(format!("min_rate_{c}_se"));
    }
    columns.extend(["active_runs".to_string(), "status".to_string()]);
    let s = sys.subphases;
    let results = run_trials(sc.trials, sc.seed, |t, rng| -> Result<Vec<Vec<f64>>> {
        let gains = drop_users(sys, sc, rng)?;
        let ch = draw_channels(sys, sc, gains, rng)?;
        let truth = ch.links();
        let opts = ao_options(sys, sc, sc.seed ^ t as u64);
        let mut out = Vec::new();
        if wants_perfect(sc) {
            out.push(ao_maxmin(&truth, None, &opts)?.objective_history);
        }
        if sc.csi == CsiMode::Imperfect {
            for &est in &sc.estimators {
                let design = training_design(sys, est, s)?;
                let links = estimate_links(&ch, &design, est, rng)?;
                let sol = ao_maxmin(&links, Some(&truth), &opts)?;
                out.push(sol.true_history.unwrap_or_default());
            }
        }
        Ok(out)
    });
    let (ok, failures, first) = split(results);
    let len = ok.iter().flatten().map(Vec::len).max().unwrap_or(0);
    let mut table = ResultTable::new(columns);
    for it in 0..len {
        let mut row: Vec<Cell> = vec![it.into()];
        let active = ok.iter().filter(|t| t.iter().any(|h| h.len() > it)).count();
        for j in 0..curves.len() {
            let vals: Vec<f64> = ok
                .iter()
                .filter_map(|t| t[j].get(it).or(t[j].last()).map(|g| (1.0 + g).log2()))
                .collect();
            let (m, se) = mean_se(&vals);
            row.extend([m.into(), se.into()]);
        }
        row.push(active.into());
        row.push(status(failures, sc.trials, first.as_ref()).into());
        table.push(row);
    }
    if len == 0 {
        let mut row: Vec<Cell> = vec![0usize.into()];
        row.extend(std::iter::repeat_n(Cell::Float(f64::NAN), 2 * curves.len()));
        row.push(0usize.into());
        row.push(status(failures, sc.trials, first.as_ref()).into());
        table.push(row);
    }
    Ok(table)
}
