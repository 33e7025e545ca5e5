//! Uplink pilot phase: reflection designs, the post-correlation observation
//! model and block-wise pseudo-inverse processing.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, crandn};
use crate::sysmodel::{ChannelSet, SystemConfig};
use crate::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Dft,
    OnOff,
}

/// Pilot-phase reflection design together with the training power budget.
#[derive(Debug, Clone)]
pub struct TrainingDesign {
    /// `S × (N+1)`; row `s` is `[1, v_sᵀ]`.
    pub vtr: CMatrix,
    pub protocol: Protocol,
    pub p_c: f64,
    pub tau_s: f64,
    pub sigma_sq: f64,
    gram_inv: CMatrix,
    pinv: CMatrix,
}

impl TrainingDesign {
    pub fn new(vtr: CMatrix, protocol: Protocol, p_c: f64, tau_s: f64, sigma_sq: f64) -> Result<Self> {
        if !(p_c > 0.0 && tau_s > 0.0) || sigma_sq < 0.0 {
            return Err(Error::Config(format!(
                "training needs P_C > 0, tau_S > 0, sigma^2 >= 0 (got {p_c}, {tau_s}, {sigma_sq})"
            )));
        }
        if vtr.iter().any(|z| z.norm() > 1.0 + 1e-12) {
            return Err(Error::Validation("training reflection coefficients must have modulus <= 1".into()));
        }
        let gram_inv = processed_noise_covariance_factor(&vtr)?;
        let pinv = &gram_inv * vtr.adjoint();
        Ok(Self { vtr, protocol, p_c, tau_s, sigma_sq, gram_inv, pinv })
    }

    pub fn dft(s: usize, n: usize, p_c: f64, tau_s: f64, sigma_sq: f64) -> Result<Self> {
        Self::new(dft_training_matrix(s, n)?, Protocol::Dft, p_c, tau_s, sigma_sq)
    }

    /// ON/OFF design; `S = N+1` is implied.
    pub fn onoff(n: usize, p_c: f64, tau_s: f64, sigma_sq: f64) -> Result<Self> {
        Self::new(onoff_training_matrix(n)?, Protocol::OnOff, p_c, tau_s, sigma_sq)
    }

    /// Design for `cfg`; ON/OFF ignores `cfg.subphases`.
    pub fn from_config(cfg: &SystemConfig, protocol: Protocol) -> Result<Self> {
        match protocol {
            Protocol::Dft => Self::dft(cfg.subphases, cfg.elements, cfg.pilot_power, cfg.subphase_duration, cfg.sigma_sq),
            Protocol::OnOff => Self::onoff(cfg.elements, cfg.pilot_power, cfg.subphase_duration, cfg.sigma_sq),
        }
    }

    pub fn subphases(&self) -> usize {
        self.vtr.nrows()
    }

    pub fn elements(&self) -> usize {
        self.vtr.ncols() - 1
    }

    /// `σ²/(P_C τ_S)`, the per-entry variance of the raw observation noise.
    pub fn raw_noise_variance(&self) -> f64 {
        self.sigma_sq / (self.p_c * self.tau_s)
    }

    /// `c = σ²/(S P_C τ_S)`.
    pub fn noise_scale(&self) -> f64 {
        self.raw_noise_variance() / self.subphases() as f64
    }

    /// Per-entry noise variance of reduced block `i` (0 is the direct link).
    pub fn block_noise_variance(&self, i: usize) -> f64 {
        self.raw_noise_variance() * self.gram_inv[(i, i)].re
    }

    /// `(VᴴV)⁻¹`.
    pub fn gram_inverse(&self) -> &CMatrix {
        &self.gram_inv
    }

    /// `V⁺ = (VᴴV)⁻¹Vᴴ`, size `(N+1) × S`.
    pub fn pseudo_inverse(&self) -> &CMatrix {
        &self.pinv
    }
}

/// `[V]_{s,n} = exp(−j2π s n / S)` (zero-based), the leading `N+1` columns of
/// an `S`-point DFT matrix.
pub fn dft_training_matrix(s: usize, n: usize) -> Result<CMatrix> {
    if s < n + 1 {
        return Err(Error::Config(format!("DFT training needs S >= N+1 (S={s}, N={n})")));
    }
    Ok(CMatrix::from_fn(s, n + 1, |r, c| {
        linalg::unit_modulus(-2.0 * PI * ((r * c) % s) as f64 / s as f64)
    }))
}

/// `[[1, 0ᵀ], [1_N, I_N]]`: sub-phase 1 has every element off, sub-phase
/// `n+1` switches on element `n` only.
pub fn onoff_training_matrix(n: usize) -> Result<CMatrix> {
    if n == 0 {
        return Err(Error::Config("ON/OFF training needs at least one element".into()));
    }
    Ok(CMatrix::from_fn(n + 1, n + 1, |r, c| {
        if c == 0 || r == c {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    }))
}

/// `(VᴴV)⁻¹`; scaled by `σ²/(P_C τ_S)` it gives the block noise covariance.
pub fn processed_noise_covariance_factor(vtr: &CMatrix) -> Result<CMatrix> {
    if vtr.nrows() < vtr.ncols() {
        return Err(Error::Singular(format!(
            "training matrix {}x{} cannot have full column rank",
            vtr.nrows(),
            vtr.ncols()
        )));
    }
    let gram = vtr.adjoint() * vtr;
    let sv = gram.clone().svd(false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    if !(min > 1e-12 * max.max(1.0)) {
        return Err(Error::Singular("training matrix is rank deficient".into()));
    }
    Ok(linalg::hermitize(&linalg::inverse(&gram)?))
}

/// Post-correlation observations of one user, before and after reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    /// `M × S`; column `s` is `r_s = h_d + H₀ v_s + noise`.
    pub raw: CMatrix,
    /// `M × (N+1)`; column 0 targets `h_d`, column `n+1` targets `h₀,ₙ`.
    pub reduced: CMatrix,
}

impl PilotObservation {
    /// Raw observations stacked sub-phase by sub-phase (length `M·S`).
    pub fn stacked(&self) -> crate::CVector {
        crate::CVector::from_column_slice(self.raw.as_slice())
    }

    pub fn direct_block(&self) -> crate::CVector {
        self.reduced.column(0).into_owned()
    }

    pub fn cascaded_block(&self, n: usize) -> crate::CVector {
        self.reduced.column(n + 1).into_owned()
    }
}

/// `[h_d, H₀]`, the `M × (N+1)` matrix of channel vectors training targets.
pub fn stacked_truth(hd: &crate::CVector, h0: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(hd.len(), h0.ncols() + 1);
    out.set_column(0, hd);
    out.view_mut((0, 1), (h0.nrows(), h0.ncols())).copy_from(h0);
    out
}

/// Raw observations for every user. Pilots are mutually orthogonal, so each
/// user sees only its own channel plus noise of variance `σ²/(P_C τ_S)`.
pub fn simulate_uplink<R: Rng + ?Sized>(
    channels: &ChannelSet,
    design: &TrainingDesign,
    rng: &mut R,
) -> Result<Vec<CMatrix>> {
    if channels.elements() != design.elements() {
        return Err(dim_err("simulate_uplink", design.elements(), channels.elements()));
    }
    let std = design.raw_noise_variance().sqrt();
    let vt = design.vtr.transpose();
    let s = design.subphases();
    Ok((0..channels.users())
        .map(|k| {
            let truth = stacked_truth(&channels.hd[k], &channels.h0[k]);
            let mut raw = truth * &vt;
            if std > 0.0 {
                for col in 0..s {
                    for m in 0..raw.nrows() {
                        raw[(m, col)] += crandn(rng) * std;
                    }
                }
            }
            raw
        })
        .collect())
}

/// Apply `V⁺ ⊗ I_M` to the stacked observation without forming the Kronecker
/// product: `R̃ = R (V⁺)ᵀ`.
pub fn process_observations(raw: CMatrix, design: &TrainingDesign) -> Result<PilotObservation> {
    if raw.ncols() != design.subphases() {
        return Err(dim_err("process_observations", design.subphases(), raw.ncols()));
    }
    let reduced = &raw * design.pseudo_inverse().transpose();
    Ok(PilotObservation { raw, reduced })
}

/// [`simulate_uplink`] followed by [`process_observations`] per user.
pub fn train<R: Rng + ?Sized>(
    channels: &ChannelSet,
    design: &TrainingDesign,
    rng: &mut R,
) -> Result<Vec<PilotObservation>> {
    simulate_uplink(channels, design, rng)?
        .into_iter()
        .map(|raw| process_observations(raw, design))
        .collect()
}
