//! System and channel model: path loss, spatial correlation, the LoS
//! BS–IRS matrix, correlated Rayleigh user links and the cascaded channel
//! `H₀,ₖ = H₁ diag(h₂,ₖ)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, crandn_vector, hermitian_sqrt};
use crate::{CMatrix, CVector, C64};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Scalars that define one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// BS antennas (M).
    pub antennas: usize,
    /// IRS elements (N).
    pub elements: usize,
    /// Single-antenna users (K).
    pub users: usize,
    /// Downlink power budget in W; constrains `(1/K) Σ pₖ`.
    pub p_max: f64,
    /// Downlink receiver noise variance in W.
    pub sigma_n_sq: f64,
    /// Uplink pilot power per user in W.
    pub pilot_power: f64,
    /// Uplink training noise variance in J.
    pub sigma_sq: f64,
    /// Coherence interval τ in s.
    pub coherence_time: f64,
    /// Training sub-phase duration τ_S in s.
    pub subphase_duration: f64,
    /// Number of training sub-phases S.
    pub subphases: usize,
    pub carrier_wavelength: f64,
    /// BS inter-antenna spacing in m.
    pub d_bs: f64,
    /// IRS inter-element spacing in m.
    pub d_irs: f64,
    pub bs_gain_dbi: f64,
    pub irs_gain_dbi: f64,
    pub direct_penetration_loss_db: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let users = 4;
        let elements = 16;
        let wavelength = SPEED_OF_LIGHT / 2.5e9;
        Self {
            antennas: 8,
            elements,
            users,
            p_max: 5.0,
            sigma_n_sq: dbm_to_watts(-80.0),
            pilot_power: 1.0,
            sigma_sq: 1e-17,
            coherence_time: 0.05,
            subphase_duration: 50e-6 * users as f64,
            subphases: elements + 1,
            carrier_wavelength: wavelength,
            d_bs: 0.5 * wavelength,
            d_irs: 0.5 * wavelength,
            bs_gain_dbi: 5.0,
            irs_gain_dbi: 5.0,
            direct_penetration_loss_db: 15.0,
            seed: 1,
        }
    }
}

impl SystemConfig {
    /// Check counts and strictly positive physical quantities.
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.users == 0 {
            return Err(Error::Config("antennas and users must be at least 1".into()));
        }
        let positives = [
            ("p_max", self.p_max),
            ("sigma_n_sq", self.sigma_n_sq),
            ("pilot_power", self.pilot_power),
            ("sigma_sq", self.sigma_sq),
            ("coherence_time", self.coherence_time),
            ("subphase_duration", self.subphase_duration),
            ("carrier_wavelength", self.carrier_wavelength),
            ("d_bs", self.d_bs),
            ("d_irs", self.d_irs),
        ];
        for (name, value) in positives {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be strictly positive, got {value}")));
            }
        }
        if self.subphases == 0 {
            return Err(Error::Config("subphases must be at least 1".into()));
        }
        Ok(())
    }

    /// DFT training needs `S ≥ N+1` for the left pseudo-inverse to exist.
    pub fn validate_dft(&self) -> Result<()> {
        self.validate()?;
        if self.subphases < self.elements + 1 {
            return Err(Error::Config(format!(
                "DFT training needs S >= N+1 (S={}, N={})",
                self.subphases, self.elements
            )));
        }
        Ok(())
    }

    pub fn bs_gain(&self) -> f64 {
        db_to_linear(self.bs_gain_dbi)
    }

    pub fn irs_gain(&self) -> f64 {
        db_to_linear(self.irs_gain_dbi)
    }

    pub fn penetration_factor(&self) -> f64 {
        db_to_linear(-self.direct_penetration_loss_db)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Distance-based path loss `10^{-C/10} / d^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossModel {
    /// Loss at the 1 m reference distance, in dB.
    pub c_db: f64,
    pub alpha: f64,
}

impl PathLossModel {
    /// UMi LoS at 2.5 GHz, used for the BS–IRS link.
    pub const UMI_LOS: Self = Self { c_db: 26.0, alpha: 2.2 };
    /// UMi NLoS at 2.5 GHz, used for IRS–user and BS–user links.
    pub const UMI_NLOS: Self = Self { c_db: 28.0, alpha: 3.67 };

    pub fn gain(&self, d: f64) -> Result<f64> {
        path_loss(*self, d)
    }
}

/// Linear power gain at distance `d` metres.
pub fn path_loss(model: PathLossModel, d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("path loss distance must be positive, got {d}")));
    }
    if model.alpha < 0.0 {
        return Err(Error::Domain(format!("negative path-loss exponent {}", model.alpha)));
    }
    Ok(10f64.powf(-model.c_db / 10.0) * d.powf(-model.alpha))
}

/// How a spatial correlation matrix is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationSpec {
    Identity(usize),
    /// `[R]_{m,m'} = η^{|m−m'|}`.
    Exponential { eta: f64, dim: usize },
    Custom(CMatrix),
}

impl CorrelationSpec {
    pub fn dimension(&self) -> usize {
        match self {
            Self::Identity(d) => *d,
            Self::Exponential { dim, .. } => *dim,
            Self::Custom(m) => m.nrows(),
        }
    }
}

/// Build and validate a correlation matrix: Hermitian, PSD, unit diagonal.
pub fn correlation_matrix(spec: &CorrelationSpec) -> Result<CMatrix> {
    match spec {
        CorrelationSpec::Identity(d) => Ok(CMatrix::identity(*d, *d)),
        CorrelationSpec::Exponential { eta, dim } => {
            if !(0.0..1.0).contains(eta) {
                return Err(Error::Validation(format!("exponential correlation needs 0 <= eta < 1, got {eta}")));
            }
            Ok(CMatrix::from_fn(*dim, *dim, |i, j| {
                C64::new(eta.powi((i as i32 - j as i32).abs()), 0.0)
            }))
        }
        CorrelationSpec::Custom(m) => {
            if !m.is_square() {
                return Err(dim_err("correlation_matrix", "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
            }
            if !linalg::is_hermitian(m, 1e-10) {
                return Err(Error::Validation("custom correlation matrix is not Hermitian".into()));
            }
            if m.diagonal().iter().any(|d| (d - C64::new(1.0, 0.0)).norm() > 1e-10) {
                return Err(Error::Validation("custom correlation matrix must have unit diagonal".into()));
            }
            if linalg::min_eigenvalue(m) < -1e-10 {
                return Err(Error::Validation("custom correlation matrix is not PSD".into()));
            }
            Ok(linalg::hermitize(m))
        }
    }
}

/// Whether the BS–IRS LoS matrix is built from one common angle pair
/// (`H₁ = a bᴴ`) or from per-element angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    RankOne,
    HighRank,
}

/// LoS angles as `(elevation, azimuth)` pairs in radians.
///
/// `aod[n]` is the departure angle at the BS towards IRS element `n`;
/// `aoa[m]` is the arrival angle at the IRS from BS antenna `m`. In rank-one
/// mode each list holds exactly one pair shared by all elements.
#[derive(Debug, Clone, PartialEq)]
pub struct LosAngles {
    pub aod: Vec<(f64, f64)>,
    pub aoa: Vec<(f64, f64)>,
}

impl LosAngles {
    pub fn single(aod: (f64, f64), aoa: (f64, f64)) -> Self {
        Self { aod: vec![aod], aoa: vec![aoa] }
    }

    /// Elevations uniform on `[−π/2, π/2]`, azimuths uniform on `[−π, π]`.
    pub fn random<R: Rng + ?Sized>(antennas: usize, elements: usize, rng: &mut R) -> Self {
        let mut draw = |_| (rng.random_range(-PI / 2.0..=PI / 2.0), rng.random_range(-PI..=PI));
        let aod = (0..elements).map(&mut draw).collect();
        let aoa = (0..antennas).map(&mut draw).collect();
        Self { aod, aoa }
    }
}

/// LoS BS–IRS channel; every entry has modulus `√β₁`.
pub fn gen_los_channel(
    cfg: &SystemConfig,
    beta1: f64,
    angles: &LosAngles,
    mode: RankMode,
) -> Result<CMatrix> {
    let (m, n) = (cfg.antennas, cfg.elements);
    if beta1 < 0.0 {
        return Err(Error::Domain(format!("negative path-loss factor {beta1}")));
    }
    let (aod_len, aoa_len) = match mode {
        RankMode::RankOne => (1, 1),
        RankMode::HighRank => (n, m),
    };
    if (n > 0 && angles.aod.len() != aod_len) || angles.aoa.len() != aoa_len {
        return Err(Error::Config(format!(
            "{mode:?} LoS channel needs {aod_len} AoD and {aoa_len} AoA pairs, got {} and {}",
            angles.aod.len(),
            angles.aoa.len()
        )));
    }
    let k0 = 2.0 * PI / cfg.carrier_wavelength;
    let amp = beta1.sqrt();
    let pick = |v: &[(f64, f64)], i: usize| if v.len() == 1 { v[0] } else { v[i] };
    Ok(CMatrix::from_fn(m, n, |mi, ni| {
        let (t1, p1) = pick(&angles.aod, ni);
        let (t2, p2) = pick(&angles.aoa, mi);
        let phase = k0
            * (mi as f64 * cfg.d_bs * t1.sin() * p1.sin() + ni as f64 * cfg.d_irs * t2.sin() * p2.sin());
        C64::from_polar(amp, phase)
    }))
}

/// Planar node position in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs: Position,
    pub irs: Position,
    pub users: Vec<Position>,
}

/// Large-scale path-loss factors with antenna gains and the direct-link
/// penetration loss already folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    pub beta1: f64,
    pub beta2: Vec<f64>,
    pub beta_d: Vec<f64>,
}

impl LinkGains {
    pub fn uniform(users: usize, beta1: f64, beta2: f64, beta_d: f64) -> Self {
        Self { beta1, beta2: vec![beta2; users], beta_d: vec![beta_d; users] }
    }

    /// `βₖ = β₁ β₂,ₖ`, the cascaded-link factor.
    pub fn beta_cascaded(&self, k: usize) -> f64 {
        self.beta1 * self.beta2[k]
    }

    pub fn from_geometry(
        cfg: &SystemConfig,
        geometry: &Geometry,
        los: PathLossModel,
        nlos: PathLossModel,
    ) -> Result<Self> {
        let beta1 = los.gain(geometry.bs.distance(&geometry.irs))? * cfg.bs_gain() * cfg.irs_gain();
        let mut beta2 = Vec::with_capacity(geometry.users.len());
        let mut beta_d = Vec::with_capacity(geometry.users.len());
        for u in &geometry.users {
            beta2.push(nlos.gain(geometry.irs.distance(u))? * cfg.irs_gain());
            beta_d.push(nlos.gain(geometry.bs.distance(u))? * cfg.bs_gain() * cfg.penetration_factor());
        }
        Ok(Self { beta1, beta2, beta_d })
    }
}

/// Second-order statistics the BS is assumed to know: path-loss factors and
/// per-user correlation matrices (with cached square roots).
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    pub gains: LinkGains,
    pub r_bs: Vec<CMatrix>,
    pub r_irs: Vec<CMatrix>,
    sqrt_bs: Vec<CMatrix>,
    sqrt_irs: Vec<CMatrix>,
}

impl ChannelStatistics {
    pub fn new(gains: LinkGains, r_bs: Vec<CMatrix>, r_irs: Vec<CMatrix>) -> Result<Self> {
        let k = gains.beta2.len();
        if gains.beta_d.len() != k || r_bs.len() != k || r_irs.len() != k {
            return Err(dim_err("ChannelStatistics", format!("{k} users"), format!(
                "{} beta_d, {} R_BS, {} R_IRS",
                gains.beta_d.len(),
                r_bs.len(),
                r_irs.len()
            )));
        }
        if gains.beta2.iter().chain(&gains.beta_d).any(|b| *b < 0.0) || gains.beta1 < 0.0 {
            return Err(Error::Domain("path-loss factors must be nonnegative".into()));
        }
        let sqrt_bs = r_bs.iter().map(hermitian_sqrt).collect();
        let sqrt_irs = r_irs.iter().map(hermitian_sqrt).collect();
        Ok(Self { gains, r_bs, r_irs, sqrt_bs, sqrt_irs })
    }

    /// Same correlation spec for every user at each end.
    pub fn with_correlation(gains: LinkGains, bs: &CorrelationSpec, irs: &CorrelationSpec) -> Result<Self> {
        let k = gains.beta2.len();
        let r_bs = correlation_matrix(bs)?;
        let r_irs = correlation_matrix(irs)?;
        Self::new(gains, vec![r_bs; k], vec![r_irs; k])
    }

    pub fn users(&self) -> usize {
        self.gains.beta2.len()
    }

    /// `r_{n,k} = [R_IRS,k]_{n,n}`.
    pub fn irs_diag(&self, k: usize, n: usize) -> f64 {
        self.r_irs[k][(n, n)].re
    }
}

/// Fresh small-scale draws for every user.
#[derive(Debug, Clone)]
pub struct UserDraws {
    pub h2: Vec<CVector>,
    pub hd: Vec<CVector>,
    pub z: Vec<CVector>,
    pub z_d: Vec<CVector>,
}

/// `h₂,ₖ = √β₂,ₖ R_IRS,ₖ^{1/2} zₖ` and `h_d,ₖ = √β_d,ₖ R_BS,ₖ^{1/2} z_d,ₖ`.
pub fn gen_user_channels<R: Rng + ?Sized>(stats: &ChannelStatistics, rng: &mut R) -> UserDraws {
    let k = stats.users();
    let mut out = UserDraws {
        h2: Vec::with_capacity(k),
        hd: Vec::with_capacity(k),
        z: Vec::with_capacity(k),
        z_d: Vec::with_capacity(k),
    };
    for u in 0..k {
        let z = crandn_vector(stats.sqrt_irs[u].nrows(), rng);
        let z_d = crandn_vector(stats.sqrt_bs[u].nrows(), rng);
        let h2 = (&stats.sqrt_irs[u] * &z) * C64::new(stats.gains.beta2[u].sqrt(), 0.0);
        let hd = (&stats.sqrt_bs[u] * &z_d) * C64::new(stats.gains.beta_d[u].sqrt(), 0.0);
        out.h2.push(h2);
        out.hd.push(hd);
        out.z.push(z);
        out.z_d.push(z_d);
    }
    out
}

/// `H₀,ₖ = H₁ diag(h₂,ₖ)`: column `n` of `H₁` scaled by `h₂,ₖ(n)`.
pub fn cascade(h1: &CMatrix, h2: &CVector) -> Result<CMatrix> {
    if h1.ncols() != h2.len() {
        return Err(dim_err("cascade", h1.ncols(), h2.len()));
    }
    let mut out = h1.clone();
    for (n, mut col) in out.column_iter_mut().enumerate() {
        col *= h2[n];
    }
    Ok(out)
}

/// Overall downlink channel `h_k = h_d,k + H₀,k v`.
pub fn overall_channel(hd: &CVector, h0: &CMatrix, v: &CVector) -> Result<CVector> {
    if h0.nrows() != hd.len() || h0.ncols() != v.len() {
        return Err(dim_err(
            "overall_channel",
            format!("H0 {}x{}", hd.len(), v.len()),
            format!("H0 {}x{}", h0.nrows(), h0.ncols()),
        ));
    }
    Ok(hd + h0 * v)
}

/// One channel realization together with the statistics that produced it.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub h1: CMatrix,
    pub h2: Vec<CVector>,
    pub hd: Vec<CVector>,
    pub h0: Vec<CMatrix>,
    pub stats: Arc<ChannelStatistics>,
    pub z: Vec<CVector>,
    pub z_d: Vec<CVector>,
}

impl ChannelSet {
    pub fn draw<R: Rng + ?Sized>(stats: Arc<ChannelStatistics>, h1: CMatrix, rng: &mut R) -> Result<Self> {
        let draws = gen_user_channels(&stats, rng);
        let h0 = draws.h2.iter().map(|h2| cascade(&h1, h2)).collect::<Result<Vec<_>>>()?;
        if draws.hd.iter().any(|hd| hd.len() != h1.nrows()) {
            return Err(dim_err("ChannelSet::draw", h1.nrows(), "R_BS dimension"));
        }
        Ok(Self { h1, h2: draws.h2, hd: draws.hd, h0, stats, z: draws.z, z_d: draws.z_d })
    }

    pub fn users(&self) -> usize {
        self.hd.len()
    }

    pub fn antennas(&self) -> usize {
        self.h1.nrows()
    }

    pub fn elements(&self) -> usize {
        self.h1.ncols()
    }

    pub fn overall(&self, v: &CVector) -> Result<Vec<CVector>> {
        self.hd.iter().zip(&self.h0).map(|(hd, h0)| overall_channel(hd, h0, v)).collect()
    }

    /// The direct and cascaded links of every user, as seen by the optimizer.
    pub fn links(&self) -> Vec<UserLink> {
        self.hd
            .iter()
            .zip(&self.h0)
            .map(|(hd, h0)| UserLink { hd: hd.clone(), h0: h0.clone() })
            .collect()
    }
}

/// Direct vector and cascaded matrix of one user, either true or estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLink {
    pub hd: CVector,
    pub h0: CMatrix,
}

impl UserLink {
    pub fn overall(&self, v: &CVector) -> Result<CVector> {
        overall_channel(&self.hd, &self.h0, v)
    }
}

/// The all-ones reflect vector.
pub fn ones(n: usize) -> CVector {
    DVector::from_element(n, C64::new(1.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn path_loss_values() {
        let g = path_loss(PathLossModel { c_db: 26.0, alpha: 2.2 }, 1.0).unwrap();
        assert!((g - 10f64.powf(-2.6)).abs() < 1e-15);
        assert!((g - 2.512e-3).abs() < 1e-6);
        assert_eq!(path_loss(PathLossModel { c_db: 0.0, alpha: 0.0 }, 42.0).unwrap(), 1.0);
        // oracle: direct scalar evaluation
        let expected = 10f64.powf(-2.8) * 100f64.powf(-3.67);
        let g = path_loss(PathLossModel::UMI_NLOS, 100.0).unwrap();
        assert!((g - expected).abs() / expected < 1e-12);
        assert!((g - 7.25e-11).abs() / 7.25e-11 < 5e-3);
    }

    #[test]
    fn path_loss_rejects_nonpositive_distance() {
        assert!(matches!(path_loss(PathLossModel::UMI_LOS, 0.0), Err(Error::Domain(_))));
        assert!(matches!(path_loss(PathLossModel::UMI_LOS, -3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn exponential_correlation_entries() {
        let r0 = correlation_matrix(&CorrelationSpec::Exponential { eta: 0.0, dim: 3 }).unwrap();
        assert_eq!(r0, CMatrix::identity(3, 3));
        let r = correlation_matrix(&CorrelationSpec::Exponential { eta: 0.95, dim: 3 }).unwrap();
        assert!((r[(0, 2)].re - 0.9025).abs() < 1e-15);
        let r2 = correlation_matrix(&CorrelationSpec::Exponential { eta: 0.5, dim: 2 }).unwrap();
        let (vals, _) = linalg::hermitian_eigen(&r2);
        assert!((vals[0] - 1.5).abs() < 1e-12 && (vals[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn custom_correlation_validation() {
        let mut bad = CMatrix::identity(2, 2);
        bad[(0, 1)] = C64::new(2.0, 0.0);
        bad[(1, 0)] = C64::new(2.0, 0.0);
        assert!(matches!(correlation_matrix(&CorrelationSpec::Custom(bad)), Err(Error::Validation(_))));
        let mut not_unit = CMatrix::identity(2, 2);
        not_unit[(1, 1)] = C64::new(0.5, 0.0);
        assert!(matches!(correlation_matrix(&CorrelationSpec::Custom(not_unit)), Err(Error::Validation(_))));
        assert!(correlation_matrix(&CorrelationSpec::Exponential { eta: 1.0, dim: 2 }).is_err());
    }

    #[test]
    fn los_single_entry() {
        let cfg = SystemConfig { antennas: 1, elements: 1, ..Default::default() };
        let h1 = gen_los_channel(&cfg, 1.0, &LosAngles::single((0.3, 0.2), (0.1, 0.4)), RankMode::RankOne).unwrap();
        assert_eq!(h1.shape(), (1, 1));
        assert!((h1[(0, 0)].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn los_missing_angles_is_config_error() {
        let cfg = SystemConfig { antennas: 4, elements: 10, ..Default::default() };
        let angles = LosAngles::single((0.3, 0.2), (0.1, 0.4));
        assert!(matches!(gen_los_channel(&cfg, 1.0, &angles, RankMode::HighRank), Err(Error::Config(_))));
    }

    #[test]
    fn los_rank_one_mode_has_rank_one() {
        let cfg = SystemConfig { antennas: 4, elements: 6, ..Default::default() };
        let h1 = gen_los_channel(&cfg, 2.0, &LosAngles::single((0.7, 0.2), (-0.4, 1.1)), RankMode::RankOne).unwrap();
        let sv = h1.clone().svd(false, false).singular_values;
        assert!(sv[1] / sv[0] < 1e-10);
        assert!(h1.iter().all(|z| (z.norm() - 2f64.sqrt()).abs() < 1e-14));
    }

    #[test]
    fn los_high_rank_seeded() {
        let cfg = SystemConfig { antennas: 4, elements: 10, ..Default::default() };
        let angles = LosAngles::random(4, 10, &mut rng(11));
        let h1 = gen_los_channel(&cfg, 0.3, &angles, RankMode::HighRank).unwrap();
        let sv = h1.clone().svd(false, false).singular_values;
        let rank = sv.iter().filter(|s| **s / sv[0] > 1e-8).count();
        assert!(rank >= 4, "rank {rank}");
        let dev = h1.iter().map(|z| (z.norm() - 0.3f64.sqrt()).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-15);
    }

    #[test]
    fn user_channel_moments_identity() {
        let gains = LinkGains::uniform(1, 1.0, 1.0, 1.0);
        let stats = ChannelStatistics::with_correlation(
            gains,
            &CorrelationSpec::Identity(2),
            &CorrelationSpec::Identity(2),
        )
        .unwrap();
        let mut r = rng(21);
        let trials = 100_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let d = gen_user_channels(&stats, &mut r);
            acc += d.h2[0][0].norm_sqr();
        }
        let var = acc / trials as f64;
        assert!((0.99..=1.01).contains(&var), "{var}");
    }

    #[test]
    fn user_channel_adjacent_correlation() {
        let gains = LinkGains::uniform(1, 1.0, 1.0, 1.0);
        let spec = CorrelationSpec::Exponential { eta: 0.95, dim: 4 };
        let stats = ChannelStatistics::with_correlation(gains, &spec, &spec).unwrap();
        let mut r = rng(22);
        let trials = 100_000;
        let mut cross = C64::new(0.0, 0.0);
        for _ in 0..trials {
            let d = gen_user_channels(&stats, &mut r);
            cross += d.hd[0][1] * d.hd[0][2].conj();
        }
        let rho = cross.re / trials as f64;
        assert!((rho - 0.95).abs() < 0.02, "{rho}");
    }

    #[test]
    fn zero_gain_gives_zero_channel() {
        let gains = LinkGains::uniform(2, 1.0, 0.0, 0.0);
        let stats = ChannelStatistics::with_correlation(
            gains,
            &CorrelationSpec::Identity(3),
            &CorrelationSpec::Identity(5),
        )
        .unwrap();
        let d = gen_user_channels(&stats, &mut rng(1));
        assert!(d.h2.iter().chain(&d.hd).all(|h| h.norm() == 0.0));
    }

    #[test]
    fn cascade_and_overall_channel() {
        let mut r = rng(5);
        let h1 = CMatrix::from_fn(3, 4, |_, _| linalg::crandn(&mut r));
        assert_eq!(cascade(&h1, &ones(4)).unwrap(), h1);
        let h2 = crandn_vector(4, &mut r);
        let h0 = cascade(&h1, &h2).unwrap();
        let v = crandn_vector(4, &mut r);
        let dense = &h1 * CMatrix::from_diagonal(&h2) * &v;
        assert!((&h0 * &v - dense).camax() < 1e-12);
        assert!(cascade(&h1, &crandn_vector(3, &mut r)).is_err());

        let hd = crandn_vector(3, &mut r);
        assert_eq!(overall_channel(&hd, &h0, &CVector::zeros(4)).unwrap(), hd);
        assert_eq!(overall_channel(&hd, &CMatrix::zeros(3, 4), &v).unwrap(), hd);
        assert!(overall_channel(&hd, &h0, &CVector::zeros(2)).is_err());
    }

    #[test]
    fn single_user_phase_alignment_scalar() {
        let mut r = rng(8);
        let hd = crandn_vector(1, &mut r);
        let h0 = CMatrix::from_fn(1, 5, |_, _| linalg::crandn(&mut r));
        // v_n = exp(j(∠h_d − ∠h_0n)) aligns every term with h_d
        let v = CVector::from_fn(5, |n, _| C64::from_polar(1.0, hd[0].arg() - h0[(0, n)].arg()));
        let h = overall_channel(&hd, &h0, &v).unwrap();
        let expected = hd[0].norm() + h0.iter().map(|z| z.norm()).sum::<f64>();
        assert!((h[0].norm() - expected).abs() < 1e-12);
    }

    #[test]
    fn geometry_gains_fold_in_antenna_and_penetration() {
        let cfg = SystemConfig::default();
        let geom = Geometry {
            bs: Position::new(0.0, 0.0),
            irs: Position::new(0.0, 100.0),
            users: vec![Position::new(0.0, 110.0)],
        };
        let g = LinkGains::from_geometry(&cfg, &geom, PathLossModel::UMI_LOS, PathLossModel::UMI_NLOS).unwrap();
        let b1 = path_loss(PathLossModel::UMI_LOS, 100.0).unwrap() * 10f64.powf(1.0);
        assert!((g.beta1 - b1).abs() / b1 < 1e-12);
        let bd = path_loss(PathLossModel::UMI_NLOS, 110.0).unwrap() * 10f64.powf(0.5 - 1.5);
        assert!((g.beta_d[0] - bd).abs() / bd < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SystemConfig::default();
        assert!(cfg.validate_dft().is_ok());
        cfg.subphases = cfg.elements;
        assert!(matches!(cfg.validate_dft(), Err(Error::Config(_))));
        cfg.subphases = cfg.elements + 1;
        cfg.sigma_n_sq = 0.0;
        assert!(cfg.validate().is_err());
    }
}
