//! Downlink SINR, the optimal linear precoder for a fixed reflect vector and
//! the alternating optimization over `(G, p)` and `v`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, solve_hpd};
use crate::maxmin_sdp::{
    build_ratio_system, dinkelbach_solve, extract_vector, recover_phases, DinkelbachOptions, ExtractOptions,
    InnerSolver, InteriorPointSolver,
};
use crate::sysmodel::{ones, UserLink};
use crate::{CMatrix, CVector, C64};

/// `γ_k = (p_k/K)|h_kᴴg_k|² / (Σ_{i≠k}(p_i/K)|h_kᴴg_i|² + σ²)`.
pub fn downlink_sinr(h: &[CVector], g: &CMatrix, p: &[f64], sigma_n_sq: f64) -> Result<Vec<f64>> {
    let k = h.len();
    if !(sigma_n_sq > 0.0) {
        return Err(Error::Domain(format!("noise variance must be positive, got {sigma_n_sq}")));
    }
    if g.ncols() != k || p.len() != k {
        return Err(dim_err("downlink_sinr", k, format!("{} precoders, {} powers", g.ncols(), p.len())));
    }
    if h.iter().any(|hk| hk.len() != g.nrows()) {
        return Err(dim_err("downlink_sinr", g.nrows(), "channel length"));
    }
    let kf = k as f64;
    Ok((0..k)
        .map(|u| {
            let gains: Vec<f64> = (0..k).map(|i| h[u].dotc(&g.column(i)).norm_sqr()).collect();
            let interference: f64 = (0..k).filter(|&i| i != u).map(|i| p[i] / kf * gains[i]).sum();
            p[u] / kf * gains[u] / (interference + sigma_n_sq)
        })
        .collect())
}

/// SINRs with the overall channels formed from `links` at reflect vector `v`.
pub fn sinr_at(links: &[UserLink], v: &CVector, g: &CMatrix, p: &[f64], sigma_n_sq: f64) -> Result<Vec<f64>> {
    let h = links.iter().map(|l| l.overall(v)).collect::<Result<Vec<_>>>()?;
    downlink_sinr(&h, g, p, sigma_n_sq)
}

fn min_of(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `Σ_{i≠k}(q_i/K)h_ih_iᴴ + σ²I`.
fn interference_covariance(h: &[CVector], q: &[f64], k: usize, sigma_n_sq: f64) -> CMatrix {
    let m = h[0].len();
    let kf = h.len() as f64;
    let mut a = CMatrix::identity(m, m) * C64::new(sigma_n_sq, 0.0);
    for (i, hi) in h.iter().enumerate() {
        if i != k {
            a += hi * hi.adjoint() * C64::new(q[i] / kf, 0.0);
        }
    }
    a
}

#[derive(Debug, Clone)]
pub struct OlpFixedPoint {
    pub q: Vec<f64>,
    pub tau: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// `λ_k(q) = (1/K) h_kᴴ(Σ_{i≠k}(q_i/K)h_ih_iᴴ + σ²I)⁻¹h_k`.
fn lambdas(h: &[CVector], q: &[f64], sigma_n_sq: f64) -> Result<Vec<f64>> {
    let kf = h.len() as f64;
    (0..h.len())
        .map(|k| {
            let x = solve_hpd(&interference_covariance(h, q, k, sigma_n_sq), &h[k])?;
            Ok(h[k].dotc(&x).re / kf)
        })
        .collect()
}

/// `T(q)_k = τ(q)/λ_k(q)` with `τ(q) = K P_max / Σ_i 1/λ_i(q)`.
fn olp_map(h: &[CVector], q: &[f64], sigma_n_sq: f64, p_max: f64) -> Result<(Vec<f64>, f64)> {
    let lam = lambdas(h, q, sigma_n_sq)?;
    if lam.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Domain("OLP needs nonzero channels".into()));
    }
    let tau = h.len() as f64 * p_max / lam.iter().map(|l| 1.0 / l).sum::<f64>();
    Ok((lam.iter().map(|l| tau / l).collect(), tau))
}

/// Solve the dual-power fixed point by Picard iteration from `q = 1`,
/// damping by 0.5 once the residual stops decreasing.
pub fn olp_fixed_point(h: &[CVector], sigma_n_sq: f64, p_max: f64, tol: f64, max_iter: usize) -> Result<OlpFixedPoint> {
    if h.is_empty() {
        return Err(Error::Config("OLP needs at least one user".into()));
    }
    if !(sigma_n_sq > 0.0 && p_max > 0.0) {
        return Err(Error::Domain("OLP needs positive noise variance and power budget".into()));
    }
    if h.iter().any(|hk| hk.norm() == 0.0) {
        return Err(Error::Domain("OLP needs nonzero channels".into()));
    }
    let mut q = vec![1.0; h.len()];
    let mut damping = 1.0;
    let mut last = f64::INFINITY;
    for it in 1..=max_iter {
        let (tq, _) = olp_map(h, &q, sigma_n_sq, p_max)?;
        let residual = q.iter().zip(&tq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual < tol {
            let (_, tau) = olp_map(h, &q, sigma_n_sq, p_max)?;
            return Ok(OlpFixedPoint { q, tau, iterations: it - 1, residual });
        }
        if residual >= last {
            damping = 0.5;
        }
        last = residual;
        for (qi, ti) in q.iter_mut().zip(&tq) {
            *qi = (1.0 - damping) * *qi + damping * ti;
        }
    }
    let (tq, _) = olp_map(h, &q, sigma_n_sq, p_max)?;
    let residual = q.iter().zip(&tq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Err(Error::NonConvergence { what: "OLP fixed point", iterations: max_iter, residual })
}

/// `g_k ∝ (Σ_{i≠k}(q_i/K)h_ih_iᴴ + σ²I)⁻¹h_k`, normalized.
pub fn olp_precoders(h: &[CVector], q: &[f64], sigma_n_sq: f64) -> Result<CMatrix> {
    let k = h.len();
    if q.len() != k {
        return Err(dim_err("olp_precoders", k, q.len()));
    }
    let m = h[0].len();
    let mut g = CMatrix::zeros(m, k);
    for u in 0..k {
        let x = solve_hpd(&interference_covariance(h, q, u, sigma_n_sq), &h[u])?;
        let nrm = x.norm();
        if nrm == 0.0 {
            return Err(Error::Domain("zero channel in OLP precoder".into()));
        }
        g.set_column(u, &(x / C64::new(nrm, 0.0)));
    }
    Ok(g)
}

/// `p = (I − τDF)⁻¹τσ²D1`, the powers equalizing every SINR at `τ`.
pub fn olp_powers(h: &[CVector], g: &CMatrix, tau: f64, sigma_n_sq: f64) -> Result<Vec<f64>> {
    let k = h.len();
    let kf = k as f64;
    let gain = |u: usize, i: usize| h[u].dotc(&g.column(i)).norm_sqr() / kf;
    let d: Vec<f64> = (0..k).map(|u| 1.0 / gain(u, u)).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Infeasible("a precoder is orthogonal to its own channel".into()));
    }
    let a = nalgebra::DMatrix::from_fn(k, k, |u, i| {
        let f = if u == i { 0.0 } else { gain(u, i) };
        (if u == i { 1.0 } else { 0.0 }) - tau * d[u] * f
    });
    let rhs = nalgebra::DVector::from_fn(k, |u, _| tau * sigma_n_sq * d[u]);
    let p = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Infeasible("I − τDF is singular".into()))?;
    if p.iter().any(|x| !(*x >= -1e-12 * p.camax())) {
        return Err(Error::Infeasible("OLP powers are negative".into()));
    }
    Ok(p.iter().map(|x| x.max(0.0)).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct OlpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OlpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone)]
pub struct OlpSolution {
    pub g: CMatrix,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub tau: f64,
    pub sinr: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Max-min optimal `(G, p)` for fixed overall channels.
pub fn solve_olp(h: &[CVector], sigma_n_sq: f64, p_max: f64, opts: OlpOptions) -> Result<OlpSolution> {
    let fp = olp_fixed_point(h, sigma_n_sq, p_max, opts.tol, opts.max_iter)?;
    let g = olp_precoders(h, &fp.q, sigma_n_sq)?;
    let p = olp_powers(h, &g, fp.tau, sigma_n_sq)?;
    let sinr = downlink_sinr(h, &g, &p, sigma_n_sq)?;
    Ok(OlpSolution { g, p, q: fp.q, tau: fp.tau, sinr, iterations: fp.iterations, residual: fp.residual })
}

/// `v = exp(j∠(H₀ᴴh_d))` and MRT along `h_d + H₀v`.
pub fn single_user_closed_form(hd: &CVector, h0: &CMatrix) -> Result<(CVector, CVector)> {
    if h0.nrows() != hd.len() {
        return Err(dim_err("single_user_closed_form", hd.len(), h0.nrows()));
    }
    let v = linalg::phase_vector(&(h0.adjoint() * hd));
    let h = hd + h0 * &v;
    let nrm = h.norm();
    if nrm == 0.0 {
        return Err(Error::Domain("zero channel in single-user closed form".into()));
    }
    Ok((v, h / C64::new(nrm, 0.0)))
}

/// Initial reflect vector policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    #[default]
    AllOnes,
    /// Uniform random phases from the given seed.
    Random(u64),
    /// Phases of the average normalized per-user alignment direction
    /// `Σ_k H₀,ₖᴴh_d,ₖ / ‖H₀,ₖᴴh_d,ₖ‖`.
    CentreOfMeans,
}

pub fn com_init(links: &[UserLink], policy: InitPolicy) -> CVector {
    let n = links.first().map_or(0, |l| l.h0.ncols());
    match policy {
        InitPolicy::AllOnes => ones(n),
        InitPolicy::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            CVector::from_fn(n, |_, _| linalg::unit_modulus(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)))
        }
        InitPolicy::CentreOfMeans => {
            let mut acc = CVector::zeros(n);
            for l in links {
                let d = l.h0.adjoint() * &l.hd;
                let nrm = d.norm();
                if nrm > 0.0 {
                    acc += d / C64::new(nrm, 0.0);
                }
            }
            linalg::phase_vector(&acc)
        }
    }
}

/// Settings of the alternating optimization.
#[derive(Debug, Clone, Copy)]
pub struct AoOptions {
    pub sigma_n_sq: f64,
    pub p_max: f64,
    /// Stop once the fractional increase of the min-SINR is below this.
    pub eps: f64,
    pub dinkelbach: DinkelbachOptions,
    pub extract: ExtractOptions,
    pub olp: OlpOptions,
    pub max_outer: usize,
    pub init: InitPolicy,
    pub seed: u64,
}

impl AoOptions {
    pub fn new(sigma_n_sq: f64, p_max: f64) -> Self {
        Self {
            sigma_n_sq,
            p_max,
            eps: 1e-4,
            dinkelbach: DinkelbachOptions::default(),
            extract: ExtractOptions::default(),
            olp: OlpOptions::default(),
            max_outer: 100,
            init: InitPolicy::AllOnes,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeamformingSolution {
    pub g: CMatrix,
    pub p: Vec<f64>,
    pub v: CVector,
    /// Min-SINR of the optimized channels after each OLP step.
    pub objective_history: Vec<f64>,
    /// Min-SINR on the true channels after each OLP step, when they are known.
    pub true_history: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub q_star: Vec<f64>,
    pub tau_star: f64,
}

impl BeamformingSolution {
    pub fn min_sinr(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }

    /// True min-SINR when known, otherwise the optimized objective.
    pub fn reported_min_sinr(&self) -> f64 {
        self.true_history.as_ref().and_then(|h| h.last().copied()).unwrap_or_else(|| self.min_sinr())
    }
}

fn scale_links(links: &[UserLink], s: f64) -> Vec<UserLink> {
    links
        .iter()
        .map(|l| UserLink { hd: &l.hd * C64::new(s, 0.0), h0: &l.h0 * C64::new(s, 0.0) })
        .collect()
}

/// Alternate the OLP for fixed `v` with the relaxed reflect-vector design for
/// fixed `(G, p)`. `links` are optimized over; `truth`, when given, scores
/// every iterate on the true channels.
pub fn ao_maxmin(links: &[UserLink], truth: Option<&[UserLink]>, opts: &AoOptions) -> Result<BeamformingSolution> {
    ao_maxmin_with(links, truth, opts, &InteriorPointSolver::default())
}

pub fn ao_maxmin_with(
    links: &[UserLink],
    truth: Option<&[UserLink]>,
    opts: &AoOptions,
    solver: &dyn InnerSolver,
) -> Result<BeamformingSolution> {
    if links.is_empty() {
        return Err(Error::Config("alternating optimization needs at least one user".into()));
    }
    if !(opts.sigma_n_sq > 0.0) {
        return Err(Error::Domain("noise variance must be positive".into()));
    }
    if let Some(t) = truth {
        if t.len() != links.len() {
            return Err(dim_err("ao_maxmin", links.len(), t.len()));
        }
    }
    let s = 1.0 / opts.sigma_n_sq.sqrt();
    let work = scale_links(links, s);
    let true_work = truth.map(|t| scale_links(t, s));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v = com_init(&work, opts.init);

    let olp_at = |v: &CVector| -> Result<OlpSolution> {
        let h = work.iter().map(|l| l.overall(v)).collect::<Result<Vec<_>>>()?;
        solve_olp(&h, 1.0, opts.p_max, opts.olp)
    };
    let wrap = |iteration: usize| move |e: Error| Error::Subproblem { iteration, source: Box::new(e) };

    let mut olp = olp_at(&v).map_err(wrap(0))?;
    let mut history = vec![olp.tau];
    let mut true_history = true_work
        .as_ref()
        .map(|t| sinr_at(t, &v, &olp.g, &olp.p, 1.0).map(|x| vec![min_of(&x)]))
        .transpose()
        .map_err(wrap(0))?;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_outer {
        iterations = it;
        let system = build_ratio_system(&olp.g, &olp.p, &work, 1.0).map_err(wrap(it))?;
        let sol = dinkelbach_solve(&system, opts.dinkelbach, solver).map_err(wrap(it))?;
        let vbar = extract_vector(&sol.vbar, &system, opts.extract, &mut rng).map_err(wrap(it))?;
        let candidate = recover_phases(&vbar).map_err(wrap(it))?;
        if system.min_ratio_v(&candidate) >= system.min_ratio_v(&v) {
            v = candidate;
        }
        let next = olp_at(&v).map_err(wrap(it))?;
        let old = *history.last().unwrap();
        let new = next.tau;
        history.push(new);
        if let (Some(th), Some(t)) = (true_history.as_mut(), true_work.as_ref()) {
            th.push(min_of(&sinr_at(t, &v, &next.g, &next.p, 1.0).map_err(wrap(it))?));
        }
        olp = next;
        if (new - old) / old.max(1e-12) < opts.eps {
            converged = true;
            break;
        }
    }
    Ok(BeamformingSolution {
        g: olp.g,
        p: olp.p,
        v,
        objective_history: history,
        true_history,
        converged,
        iterations,
        q_star: olp.q,
        tau_star: olp.tau,
    })
}
