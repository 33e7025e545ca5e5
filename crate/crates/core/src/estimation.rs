//! MMSE and LS estimation of the direct and cascaded channels, with the
//! closed-form NMSE expressions for each training protocol.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, hermitian_eigen, solve_hpd, solve_hpd_matrix, EIG_CLIP};
use crate::sysmodel::{ChannelStatistics, UserLink};
use crate::training::{PilotObservation, Protocol, TrainingDesign};
use crate::{CMatrix, CVector, C64};

/// Estimator and the training protocol it is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    MmseDft,
    LsDft,
    MmseOnOff,
    LsOnOff,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::MmseDft, Self::LsDft, Self::MmseOnOff, Self::LsOnOff];

    pub fn protocol(self) -> Protocol {
        match self {
            Self::MmseDft | Self::LsDft => Protocol::Dft,
            Self::MmseOnOff | Self::LsOnOff => Protocol::OnOff,
        }
    }

    pub fn is_mmse(self) -> bool {
        matches!(self, Self::MmseDft | Self::MmseOnOff)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MmseDft => "mmse-dft",
            Self::LsDft => "ls-dft",
            Self::MmseOnOff => "mmse-onoff",
            Self::LsOnOff => "ls-onoff",
        }
    }

    /// The LS estimator trained with the same protocol.
    pub fn ls_counterpart(self) -> Self {
        match self.protocol() {
            Protocol::Dft => Self::LsDft,
            Protocol::OnOff => Self::LsOnOff,
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown estimator '{s}'")))
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Direct,
    Cascaded,
}

/// Estimates of one user's channels with estimate and error covariances.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub hd_hat: CVector,
    /// `M × N`; column `n` estimates `h₀,ₙ`.
    pub h0_hat: CMatrix,
    pub psi_d: CMatrix,
    pub psi_tilde_d: CMatrix,
    pub psi_n: Vec<CMatrix>,
    pub psi_tilde_n: Vec<CMatrix>,
    pub estimator: EstimatorKind,
}

impl ChannelEstimate {
    pub fn link(&self) -> UserLink {
        UserLink { hd: self.hd_hat.clone(), h0: self.h0_hat.clone() }
    }
}

/// Output of a single-vector estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorEstimate {
    pub estimate: CVector,
    pub psi: CMatrix,
    pub psi_tilde: CMatrix,
}

/// MMSE estimate of `h ~ CN(0, βR)` from `r̃ = h + CN(0, cI)`:
/// `ĥ = βR(βR + cI)⁻¹r̃`, `Ψ = βR(βR + cI)⁻¹βR`, `Ψ̃ = βR − Ψ`.
///
/// With `c = 0` the filter is the projection onto the range of `R`.
pub fn mmse_direct(obs: &CVector, r_bs: &CMatrix, beta_d: f64, c: f64) -> Result<VectorEstimate> {
    let m = obs.len();
    if r_bs.shape() != (m, m) {
        return Err(dim_err("mmse_direct", format!("{m}x{m}"), format!("{}x{}", r_bs.nrows(), r_bs.ncols())));
    }
    if c < 0.0 || beta_d < 0.0 {
        return Err(Error::Domain(format!("mmse_direct needs c >= 0 and beta >= 0 (c={c}, beta={beta_d})")));
    }
    if linalg::min_eigenvalue(r_bs) < -1e-10 {
        return Err(Error::Validation("R_BS is not PSD".into()));
    }
    let prior = r_bs * C64::new(beta_d, 0.0);
    if c == 0.0 {
        let (vals, vecs) = hermitian_eigen(&prior);
        let top = vals.first().copied().unwrap_or(0.0).max(1.0);
        let proj = linalg::spectral_map(&vals, &vecs, |l| if l > EIG_CLIP * top { 1.0 } else { 0.0 });
        let psi = &proj * &prior * &proj;
        let psi_tilde = &prior - &psi;
        return Ok(VectorEstimate { estimate: &proj * obs, psi, psi_tilde });
    }
    let q_arg = &prior + CMatrix::identity(m, m) * C64::new(c, 0.0);
    let estimate = &prior * solve_hpd(&q_arg, obs)?;
    let psi = linalg::hermitize(&(&prior * solve_hpd_matrix(&q_arg, &prior)?));
    let psi_tilde = linalg::hermitize(&(&prior - &psi));
    Ok(VectorEstimate { estimate, psi, psi_tilde })
}

/// MMSE estimate of `h₀,ₙ = h₁,ₙ h₂(n)` whose prior covariance is the rank-one
/// `a h₁,ₙh₁,ₙᴴ`, `a = r_{n,k} β₂,ₖ`. Sherman–Morrison reduces the filter to
/// `ĥ = a/(c + a‖h₁,ₙ‖²) · h₁,ₙ h₁,ₙᴴ r̃`.
pub fn mmse_cascaded(obs: &CVector, h1_n: &CVector, beta2: f64, r_nk: f64, c: f64) -> Result<VectorEstimate> {
    let m = obs.len();
    if h1_n.len() != m {
        return Err(dim_err("mmse_cascaded", m, h1_n.len()));
    }
    if c < 0.0 || beta2 < 0.0 || r_nk < 0.0 {
        return Err(Error::Domain("mmse_cascaded needs nonnegative c, beta2 and r_nk".into()));
    }
    let a = r_nk * beta2;
    let energy = h1_n.norm_squared();
    let outer = h1_n * h1_n.adjoint();
    if a * energy == 0.0 {
        return Ok(VectorEstimate {
            estimate: CVector::zeros(m),
            psi: CMatrix::zeros(m, m),
            psi_tilde: CMatrix::zeros(m, m),
        });
    }
    let denom = c + a * energy;
    let proj = h1_n.dotc(obs);
    let estimate = h1_n * (proj * (a / denom));
    let psi = &outer * C64::new(a * a * energy / denom, 0.0);
    let psi_tilde = &outer * C64::new(a * c / denom, 0.0);
    Ok(VectorEstimate { estimate, psi, psi_tilde })
}

/// Joint MMSE estimate of `h₀,ₙ` from the ON/OFF pair `(r̃₁, r̃ₙ₊₁)`,
/// whose noises are correlated through `(VᴴV)⁻¹`.
pub fn mmse_onoff_cascaded(
    direct_obs: &CVector,
    cascaded_obs: &CVector,
    r_bs: &CMatrix,
    beta_d: f64,
    h1_n: &CVector,
    a: f64,
    noise: [[f64; 2]; 2],
) -> Result<VectorEstimate> {
    let m = direct_obs.len();
    if cascaded_obs.len() != m || h1_n.len() != m || r_bs.shape() != (m, m) {
        return Err(dim_err("mmse_onoff_cascaded", m, cascaded_obs.len()));
    }
    let prior_d = r_bs * C64::new(beta_d, 0.0);
    let prior_n = h1_n * h1_n.adjoint() * C64::new(a, 0.0);
    let eye = CMatrix::identity(m, m);
    let mut cz = CMatrix::zeros(2 * m, 2 * m);
    cz.view_mut((0, 0), (m, m)).copy_from(&(&prior_d + &eye * C64::new(noise[0][0], 0.0)));
    cz.view_mut((m, m), (m, m)).copy_from(&(&prior_n + &eye * C64::new(noise[1][1], 0.0)));
    cz.view_mut((0, m), (m, m)).copy_from(&(&eye * C64::new(noise[0][1], 0.0)));
    cz.view_mut((m, 0), (m, m)).copy_from(&(&eye * C64::new(noise[1][0], 0.0)));
    let mut c_hz = CMatrix::zeros(m, 2 * m);
    c_hz.view_mut((0, m), (m, m)).copy_from(&prior_n);
    let mut z = CVector::zeros(2 * m);
    z.rows_mut(0, m).copy_from(direct_obs);
    z.rows_mut(m, m).copy_from(cascaded_obs);
    let w = solve_hpd(&cz, &z)?;
    let estimate = &c_hz * w;
    let psi = linalg::hermitize(&(&c_hz * solve_hpd_matrix(&cz, &c_hz.adjoint())?));
    let psi_tilde = linalg::hermitize(&(&prior_n - &psi));
    Ok(VectorEstimate { estimate, psi, psi_tilde })
}

/// LS estimate: the processed observation itself, with error covariance
/// `noise_var · I`.
pub fn ls_estimate(obs: &CVector, prior: &CMatrix, noise_var: f64) -> VectorEstimate {
    let m = obs.len();
    let noise = CMatrix::identity(m, m) * C64::new(noise_var, 0.0);
    VectorEstimate { estimate: obs.clone(), psi: prior + &noise, psi_tilde: noise }
}

/// Estimate every channel vector of user `k`.
pub fn estimate_user(
    obs: &PilotObservation,
    h1: &CMatrix,
    stats: &ChannelStatistics,
    k: usize,
    design: &TrainingDesign,
    estimator: EstimatorKind,
) -> Result<ChannelEstimate> {
    let (m, n) = h1.shape();
    if obs.reduced.shape() != (m, n + 1) || design.elements() != n {
        return Err(dim_err(
            "estimate_user",
            format!("{m}x{}", n + 1),
            format!("{}x{}", obs.reduced.nrows(), obs.reduced.ncols()),
        ));
    }
    if estimator.protocol() != design.protocol {
        return Err(Error::Config(format!(
            "estimator {estimator} does not match the {:?} training design",
            design.protocol
        )));
    }
    let gains = &stats.gains;
    let r_bs = &stats.r_bs[k];
    let direct_obs = obs.direct_block();
    let direct_var = design.block_noise_variance(0);
    let direct = if estimator.is_mmse() {
        mmse_direct(&direct_obs, r_bs, gains.beta_d[k], direct_var)?
    } else {
        ls_estimate(&direct_obs, &(r_bs * C64::new(gains.beta_d[k], 0.0)), direct_var)
    };

    let mut h0_hat = CMatrix::zeros(m, n);
    let mut psi_n = Vec::with_capacity(n);
    let mut psi_tilde_n = Vec::with_capacity(n);
    let g = design.gram_inverse();
    let raw_var = design.raw_noise_variance();
    for e in 0..n {
        let h1_n = h1.column(e).into_owned();
        let cobs = obs.cascaded_block(e);
        let a = stats.irs_diag(k, e) * gains.beta2[k];
        let var = design.block_noise_variance(e + 1);
        let est = match estimator {
            EstimatorKind::MmseDft => mmse_cascaded(&cobs, &h1_n, gains.beta2[k], stats.irs_diag(k, e), var)?,
            EstimatorKind::MmseOnOff => {
                let noise = [
                    [raw_var * g[(0, 0)].re, raw_var * g[(0, e + 1)].re],
                    [raw_var * g[(e + 1, 0)].re, raw_var * g[(e + 1, e + 1)].re],
                ];
                mmse_onoff_cascaded(&direct_obs, &cobs, r_bs, gains.beta_d[k], &h1_n, a, noise)?
            }
            EstimatorKind::LsDft | EstimatorKind::LsOnOff => {
                ls_estimate(&cobs, &(&h1_n * h1_n.adjoint() * C64::new(a, 0.0)), var)
            }
        };
        h0_hat.set_column(e, &est.estimate);
        psi_n.push(est.psi);
        psi_tilde_n.push(est.psi_tilde);
    }
    Ok(ChannelEstimate {
        hd_hat: direct.estimate,
        h0_hat,
        psi_d: direct.psi,
        psi_tilde_d: direct.psi_tilde,
        psi_n,
        psi_tilde_n,
        estimator,
    })
}

/// Scalars entering the closed-form NMSE expressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmseParams {
    pub beta_d: f64,
    /// `βₖ = β₁β₂,ₖ`.
    pub beta_k: f64,
    pub m: usize,
    pub s: usize,
    pub p_c: f64,
    pub tau_s: f64,
    pub sigma_sq: f64,
}

impl NmseParams {
    /// `c = σ²/(S P_C τ_S)`.
    pub fn c(&self) -> f64 {
        self.sigma_sq / (self.s as f64 * self.p_c * self.tau_s)
    }

    /// `σ²/(P_C τ_S)`, the ON/OFF per-block scale.
    pub fn c_onoff(&self) -> f64 {
        self.sigma_sq / (self.p_c * self.tau_s)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.beta_d > 0.0
            && self.beta_k > 0.0
            && self.m >= 1
            && self.s >= 1
            && self.p_c > 0.0
            && self.tau_s > 0.0
            && self.sigma_sq >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid NMSE parameters {self:?}")))
        }
    }
}

/// Closed-form NMSE of `estimator` on the `role` channel under uncorrelated
/// (`R = I`) statistics.
pub fn nmse_theory(estimator: EstimatorKind, role: ChannelRole, p: &NmseParams) -> Result<f64> {
    p.validate()?;
    let (c, c1) = (p.c(), p.c_onoff());
    let mbk = p.m as f64 * p.beta_k;
    Ok(match (estimator, role) {
        (EstimatorKind::LsDft, ChannelRole::Direct) => c / p.beta_d,
        (EstimatorKind::MmseDft, ChannelRole::Direct) => c / (p.beta_d + c),
        (EstimatorKind::LsDft, ChannelRole::Cascaded) => c / p.beta_k,
        (EstimatorKind::MmseDft, ChannelRole::Cascaded) => c / (mbk + c),
        (EstimatorKind::LsOnOff, ChannelRole::Direct) => c1 / p.beta_d,
        (EstimatorKind::LsOnOff, ChannelRole::Cascaded) => 2.0 * c1 / p.beta_k,
        (EstimatorKind::MmseOnOff, ChannelRole::Direct) => c1 / (p.beta_d + c1),
        (EstimatorKind::MmseOnOff, ChannelRole::Cascaded) => {
            1.0 / (1.0 + mbk * (p.beta_d + c1) / (c1 * c1 + 2.0 * p.beta_d * c1))
        }
    })
}

/// Cascaded MMSE-ON/OFF NMSE in the unit-direct-gain form
/// `1/(1 + Mβ_k(1 + c′)/(c′² + c′(β_d + 1)))`; equals the `MmseOnOff` cascaded
/// theory when `β_d = 1`.
pub fn nmse_onoff_unit_direct(p: &NmseParams) -> Result<f64> {
    p.validate()?;
    let c1 = p.c_onoff();
    let x = p.m as f64 * p.beta_k;
    Ok(1.0 / (1.0 + x * (1.0 + c1) / (c1 * c1 + c1 * (p.beta_d + 1.0))))
}

/// LS minus MMSE NMSE for the DFT protocol, in closed form.
pub fn nmse_gap(role: ChannelRole, p: &NmseParams) -> Result<f64> {
    p.validate()?;
    let c = p.c();
    Ok(match role {
        ChannelRole::Direct => c * c / (p.beta_d * (p.beta_d + c)),
        ChannelRole::Cascaded => {
            let m = p.m as f64;
            (c * c + c * p.beta_k * (m - 1.0)) / (p.beta_k * (c + m * p.beta_k))
        }
    })
}

/// Running `Σ‖ĥ − h‖²` and `Σ‖h‖²`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NmseAccumulator {
    pub error: f64,
    pub energy: f64,
    pub trials: usize,
}

impl NmseAccumulator {
    pub fn push(&mut self, estimate: &CVector, truth: &CVector) {
        self.error += (estimate - truth).norm_squared();
        self.energy += truth.norm_squared();
        self.trials += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.error += other.error;
        self.energy += other.energy;
        self.trials += other.trials;
    }

    pub fn value(&self) -> Result<f64> {
        if self.trials == 0 {
            return Err(Error::Domain("NMSE needs at least one trial".into()));
        }
        if self.energy == 0.0 {
            return Err(Error::Domain("NMSE undefined for zero-energy truth".into()));
        }
        Ok(self.error / self.energy)
    }
}

/// `Σₜ‖ĥₜ − hₜ‖² / Σₜ‖hₜ‖²`.
pub fn empirical_nmse(estimates: &[CVector], truths: &[CVector]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(dim_err("empirical_nmse", truths.len(), estimates.len()));
    }
    let mut acc = NmseAccumulator::default();
    for (e, t) in estimates.iter().zip(truths) {
        if e.len() != t.len() {
            return Err(dim_err("empirical_nmse", t.len(), e.len()));
        }
        acc.push(e, t);
    }
    acc.value()
}
