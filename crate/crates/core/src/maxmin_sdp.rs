//! Reflect-vector subproblem for fixed precoders and powers.
//!
//! The min-SINR over `v` is rewritten with `v̄ = [v; 1]` as a min of ratios of
//! quadratic forms, lifted to `V̄ = v̄v̄ᴴ`, relaxed by dropping the rank
//! constraint, and solved with a generalized Dinkelbach iteration whose
//! parametric subproblems are semidefinite programs. A feasible `v` is then
//! recovered by eigen-extraction or Gaussian randomization.

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, crandn_vector, hermitian_eigen, trace_prod_re};
use crate::sysmodel::UserLink;
use crate::{CMatrix, CVector, C64};

/// Eigenvalue ratio `λ₂/λ₁` below which `V̄` is treated as rank one.
pub const RANK_ONE_THRESHOLD: f64 = 1e-6;

/// Quadratic-form description of every user's SINR as a function of `V̄`.
///
/// `n_k(V̄) = (p_k/K)(tr(R_kk V̄) + |b_kk|²)` and
/// `d_k(V̄) = Σ_{i≠k} (p_i/K)(tr(R_ki V̄) + |b_ki|²) + σ²`.
#[derive(Debug, Clone)]
pub struct RatioSystem {
    /// `r[k][i]`, each `(N+1) × (N+1)`.
    pub r: Vec<Vec<CMatrix>>,
    pub b_abs_sq: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub sigma_n_sq: f64,
}

impl RatioSystem {
    pub fn users(&self) -> usize {
        self.p.len()
    }

    /// Lifted dimension `N+1`.
    pub fn dim(&self) -> usize {
        self.r[0][0].nrows()
    }

    fn weight(&self, i: usize) -> f64 {
        self.p[i] / self.users() as f64
    }

    pub fn numerator(&self, k: usize, vbar: &CMatrix) -> f64 {
        self.weight(k) * (trace_prod_re(&self.r[k][k], vbar) + self.b_abs_sq[k][k])
    }

    pub fn denominator(&self, k: usize, vbar: &CMatrix) -> f64 {
        let interference: f64 = (0..self.users())
            .filter(|&i| i != k)
            .map(|i| self.weight(i) * (trace_prod_re(&self.r[k][i], vbar) + self.b_abs_sq[k][i]))
            .sum();
        interference + self.sigma_n_sq
    }

    pub fn ratios(&self, vbar: &CMatrix) -> Vec<f64> {
        (0..self.users()).map(|k| self.numerator(k, vbar) / self.denominator(k, vbar)).collect()
    }

    pub fn min_ratio(&self, vbar: &CMatrix) -> f64 {
        self.ratios(vbar).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Min ratio at the rank-one lift of `v̄`.
    pub fn min_ratio_lifted(&self, vbar: &CVector) -> f64 {
        self.min_ratio(&(vbar * vbar.adjoint()))
    }

    /// Min ratio at a reflect vector `v` (embedded as `[v; 1]`).
    pub fn min_ratio_v(&self, v: &CVector) -> f64 {
        self.min_ratio_lifted(&embed(v))
    }

    /// Same system with every quantity divided by `σ²`, so `d_k ≥ 1`.
    pub fn normalized(&self) -> Self {
        let s = 1.0 / self.sigma_n_sq;
        Self {
            r: self.r.iter().map(|row| row.iter().map(|m| m * C64::new(s, 0.0)).collect()).collect(),
            b_abs_sq: self.b_abs_sq.iter().map(|row| row.iter().map(|b| b * s).collect()).collect(),
            p: self.p.clone(),
            sigma_n_sq: 1.0,
        }
    }

    /// Data of `max min_k ⟨C_k, V̄⟩ + e_k` for Dinkelbach parameter `λ`.
    pub fn parametric(&self, lambda: f64) -> MaxMinProblem {
        let k_count = self.users();
        let mut c = Vec::with_capacity(k_count);
        let mut e = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let mut ck = &self.r[k][k] * C64::new(self.weight(k), 0.0);
            let mut ek = self.weight(k) * self.b_abs_sq[k][k] - lambda * self.sigma_n_sq;
            for i in (0..k_count).filter(|&i| i != k) {
                ck -= &self.r[k][i] * C64::new(lambda * self.weight(i), 0.0);
                ek -= lambda * self.weight(i) * self.b_abs_sq[k][i];
            }
            c.push(ck);
            e.push(ek);
        }
        MaxMinProblem { c, e }
    }
}

/// `[v; 1]`.
pub fn embed(v: &CVector) -> CVector {
    let mut out = CVector::zeros(v.len() + 1);
    out.rows_mut(0, v.len()).copy_from(v);
    out[v.len()] = C64::new(1.0, 0.0);
    out
}

/// Build `R_ki = [[a aᴴ, a b*], [b aᴴ, 0]]` from `a = H₀,ₖᴴ g_i` and
/// `b = h_d,ₖᴴ g_i`, so that `v̄ᴴR_ki v̄ + |b|² = |h_kᴴ g_i|²`.
pub fn build_ratio_system(g: &CMatrix, p: &[f64], links: &[UserLink], sigma_n_sq: f64) -> Result<RatioSystem> {
    let k_count = links.len();
    if k_count == 0 {
        return Err(Error::Config("ratio system needs at least one user".into()));
    }
    if g.ncols() != k_count || p.len() != k_count {
        return Err(dim_err("build_ratio_system", k_count, format!("{} precoders, {} powers", g.ncols(), p.len())));
    }
    if !(sigma_n_sq > 0.0) {
        return Err(Error::Domain(format!("noise variance must be positive, got {sigma_n_sq}")));
    }
    if p.iter().any(|x| *x < 0.0) {
        return Err(Error::Domain("powers must be nonnegative".into()));
    }
    let m = g.nrows();
    let n = links[0].h0.ncols();
    for l in links {
        if l.hd.len() != m || l.h0.shape() != (m, n) {
            return Err(dim_err("build_ratio_system", format!("hd {m}, H0 {m}x{n}"), format!("hd {}, H0 {}x{}", l.hd.len(), l.h0.nrows(), l.h0.ncols())));
        }
    }
    let mut r = Vec::with_capacity(k_count);
    let mut b_abs_sq = Vec::with_capacity(k_count);
    for link in links {
        let mut row = Vec::with_capacity(k_count);
        let mut brow = Vec::with_capacity(k_count);
        for i in 0..k_count {
            let gi = g.column(i);
            let a = link.h0.adjoint() * gi;
            let b = link.hd.dotc(&gi);
            let mut q = CVector::zeros(n + 1);
            q.rows_mut(0, n).copy_from(&a);
            let mut rki = &q * q.adjoint();
            rki[(n, n)] = C64::new(0.0, 0.0);
            for j in 0..n {
                rki[(j, n)] = a[j] * b.conj();
                rki[(n, j)] = b * a[j].conj();
            }
            row.push(rki);
            brow.push(b.norm_sqr());
        }
        r.push(row);
        b_abs_sq.push(brow);
    }
    Ok(RatioSystem { r, b_abs_sq, p: p.to_vec(), sigma_n_sq })
}

/// `max_{V ⪰ 0, diag(V) = 1} min_k ⟨C_k, V⟩ + e_k`.
#[derive(Debug, Clone)]
pub struct MaxMinProblem {
    pub c: Vec<CMatrix>,
    pub e: Vec<f64>,
}

impl MaxMinProblem {
    pub fn objective(&self, v: &CMatrix) -> f64 {
        self.c
            .iter()
            .zip(&self.e)
            .map(|(c, e)| trace_prod_re(c, v) + e)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dim(&self) -> usize {
        self.c[0].nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Stopped at the iteration cap with a usable but less accurate iterate.
    Inaccurate,
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    /// Feasible `V` (projected to PSD with unit diagonal).
    pub v: CMatrix,
    /// Objective at `v`.
    pub value: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// A method for the parametric max-min semidefinite subproblem.
pub trait InnerSolver: Send + Sync {
    fn solve(&self, problem: &MaxMinProblem) -> Result<InnerSolution>;
}

/// Primal-dual interior-point method (HKM direction, Mehrotra
/// predictor-corrector) on complex Hermitian matrices.
#[derive(Debug, Clone, Copy)]
pub struct InteriorPointSolver {
    pub tol: f64,
    pub max_iter: usize,
    /// Accuracy accepted when the iteration cap is reached.
    pub fallback_tol: f64,
}

impl Default for InteriorPointSolver {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100, fallback_tol: 1e-6 }
    }
}

enum Constraint {
    /// `X_ii = b`.
    Diag(usize),
    Dense(CMatrix),
}

impl Constraint {
    fn apply(&self, x: &CMatrix) -> f64 {
        match self {
            Self::Diag(i) => x[(*i, *i)].re,
            Self::Dense(a) => trace_prod_re(a, x),
        }
    }

    fn add_scaled(&self, out: &mut CMatrix, y: f64) {
        match self {
            Self::Diag(i) => out[(*i, *i)] += C64::new(y, 0.0),
            Self::Dense(a) => *out += a * C64::new(y, 0.0),
        }
    }
}

/// Standard-form SDP `min ⟨C, X⟩ s.t. ⟨A_i, X⟩ = b_i, X ⪰ 0`.
struct StandardSdp {
    c: CMatrix,
    cons: Vec<Constraint>,
    b: Vec<f64>,
}

struct SdpSolution {
    x: CMatrix,
    iterations: usize,
    accuracy: f64,
}

impl StandardSdp {
    fn a_op(&self, x: &CMatrix) -> Vec<f64> {
        self.cons.iter().map(|c| c.apply(x)).collect()
    }

    fn a_adj(&self, y: &[f64]) -> CMatrix {
        let n = self.c.nrows();
        let mut out = CMatrix::zeros(n, n);
        for (c, yi) in self.cons.iter().zip(y) {
            c.add_scaled(&mut out, *yi);
        }
        out
    }

    /// `M_ij = Re tr(A_i X A_j Z⁻¹)`.
    fn schur(&self, x: &CMatrix, zinv: &CMatrix) -> nalgebra::DMatrix<f64> {
        let m = self.cons.len();
        let mut out = nalgebra::DMatrix::zeros(m, m);
        // P_j = X A_j Z⁻¹ for the dense constraints only
        let dense: Vec<(usize, CMatrix)> = self
            .cons
            .iter()
            .enumerate()
            .filter_map(|(j, c)| match c {
                Constraint::Dense(a) => Some((j, x * a * zinv)),
                Constraint::Diag(_) => None,
            })
            .collect();
        for (i, ci) in self.cons.iter().enumerate() {
            for (j, cj) in self.cons.iter().enumerate().skip(i) {
                let val = match (ci, cj) {
                    (Constraint::Diag(a), Constraint::Diag(b)) => (x[(*a, *b)] * zinv[(*b, *a)]).re,
                    (Constraint::Diag(a), Constraint::Dense(_)) => {
                        let p = &dense.iter().find(|(jj, _)| *jj == j).unwrap().1;
                        p[(*a, *a)].re
                    }
                    (Constraint::Dense(_), Constraint::Diag(b)) => {
                        let p = &dense.iter().find(|(jj, _)| *jj == i).unwrap().1;
                        p[(*b, *b)].re
                    }
                    (Constraint::Dense(a), Constraint::Dense(_)) => {
                        let p = &dense.iter().find(|(jj, _)| *jj == j).unwrap().1;
                        trace_prod_re(a, p)
                    }
                };
                out[(i, j)] = val;
                out[(j, i)] = val;
            }
        }
        out
    }

    fn solve(&self, tol: f64, max_iter: usize, fallback_tol: f64) -> Result<SdpSolution> {
        let n = self.c.nrows();
        let nf = n as f64;
        let b_norm = self.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c_norm = self.c.norm();
        let a_norm_max = self
            .cons
            .iter()
            .map(|c| match c {
                Constraint::Diag(_) => 1.0,
                Constraint::Dense(a) => a.norm(),
            })
            .fold(0.0, f64::max);
        let xi = (10f64).max(nf.sqrt()).max(
            self.b
                .iter()
                .zip(&self.cons)
                .map(|(bi, c)| {
                    let an = match c {
                        Constraint::Diag(_) => 1.0,
                        Constraint::Dense(a) => a.norm(),
                    };
                    nf * (1.0 + bi.abs()) / (1.0 + an)
                })
                .fold(0.0, f64::max),
        );
        let eta = (10f64).max(nf.sqrt()).max(c_norm).max(a_norm_max);
        let eye = CMatrix::identity(n, n);
        let mut x = &eye * C64::new(xi, 0.0);
        let mut z = &eye * C64::new(eta, 0.0);
        let mut y = vec![0.0; self.cons.len()];

        let mut best: Option<(f64, CMatrix)> = None;
        for iter in 0..max_iter {
            let ax = self.a_op(&x);
            let rp: Vec<f64> = self.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rd = &self.c - self.a_adj(&y) - &z;
            let pobj = trace_prod_re(&self.c, &x);
            let dobj: f64 = self.b.iter().zip(&y).map(|(b, y)| b * y).sum();
            let mu = trace_prod_re(&x, &z) / nf;
            let pinf = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + b_norm);
            let dinf = rd.norm() / (1.0 + c_norm);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            let gap = gap.max(mu * nf / (1.0 + pobj.abs() + dobj.abs()));
            let acc = pinf.max(dinf).max(gap);
            if best.as_ref().map_or(true, |(a, _)| acc < *a) {
                best = Some((acc, x.clone()));
            }
            if acc < tol {
                return Ok(SdpSolution { x, iterations: iter, accuracy: acc });
            }

            let zinv = linalg::hermitize(&linalg::inverse(&z)?);
            let schur = self.schur(&x, &zinv);
            let chol = match schur.clone().cholesky() {
                Some(c) => c,
                None => break,
            };
            let xrdz = &x * &rd * &zinv;

            // predictor, then corrector with the second-order term
            let direction = |target: &CMatrix| -> (CMatrix, Vec<f64>, CMatrix) {
                let rhs: Vec<f64> = self
                    .cons
                    .iter()
                    .zip(&rp)
                    .map(|(c, r)| r - c.apply(target) + c.apply(&xrdz))
                    .collect();
                let dy = chol.solve(&nalgebra::DVector::from_vec(rhs));
                let dy: Vec<f64> = dy.iter().copied().collect();
                let dz = &rd - self.a_adj(&dy);
                let dx = target - linalg::hermitize(&(&x * &dz * &zinv));
                (dx, dy, dz)
            };
            let (dx_a, _, dz_a) = direction(&(-&x));
            let ap = step_length(&x, &dx_a)?;
            let ad = step_length(&z, &dz_a)?;
            let mu_aff = trace_prod_re(&(&x + &dx_a * C64::new(ap, 0.0)), &(&z + &dz_a * C64::new(ad, 0.0))) / nf;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let target = &zinv * C64::new(sigma * mu, 0.0) - &x - linalg::hermitize(&(&dx_a * &dz_a * &zinv));
            let (dx, dy, dz) = direction(&target);
            let ap = (0.95 * step_length(&x, &dx)?).min(1.0);
            let ad = (0.95 * step_length(&z, &dz)?).min(1.0);
            x = linalg::hermitize(&(&x + &dx * C64::new(ap, 0.0)));
            z = linalg::hermitize(&(&z + &dz * C64::new(ad, 0.0)));
            for (yi, d) in y.iter_mut().zip(&dy) {
                *yi += ad * d;
            }
        }
        match best {
            Some((acc, x)) if acc < fallback_tol => Ok(SdpSolution { x, iterations: max_iter, accuracy: acc }),
            Some((acc, _)) => Err(Error::NonConvergence { what: "interior-point SDP", iterations: max_iter, residual: acc }),
            None => Err(Error::NonConvergence { what: "interior-point SDP", iterations: 0, residual: f64::INFINITY }),
        }
    }
}

/// Largest `α` (capped at a large value) with `X + αΔX ⪰ 0`.
fn step_length(x: &CMatrix, dx: &CMatrix) -> Result<f64> {
    let chol = x
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("interior-point iterate left the PSD cone".into()))?;
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&CMatrix::identity(x.nrows(), x.nrows()))
        .ok_or_else(|| Error::Singular("triangular solve".into()))?;
    let w = &linv * dx * linv.adjoint();
    let (vals, _) = hermitian_eigen(&w);
    let min = vals.last().copied().unwrap_or(0.0);
    Ok(if min >= 0.0 { 1e6 } else { (-1.0 / min).min(1e6) })
}

/// Hermitize, clip negative eigenvalues and rescale to unit diagonal.
pub fn project_unit_diagonal_psd(v: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(v);
    let p = linalg::spectral_map(&vals, &vecs, |l| l.max(0.0));
    let d: Vec<f64> = (0..p.nrows()).map(|i| p[(i, i)].re.max(1e-300).sqrt()).collect();
    let mut out = CMatrix::from_fn(p.nrows(), p.ncols(), |i, j| p[(i, j)] / (d[i] * d[j]));
    for i in 0..out.nrows() {
        out[(i, i)] = C64::new(1.0, 0.0);
    }
    out
}

impl InnerSolver for InteriorPointSolver {
    fn solve(&self, problem: &MaxMinProblem) -> Result<InnerSolution> {
        let k = problem.c.len();
        let n1 = problem.dim();
        if k == 0 || problem.e.len() != k {
            return Err(dim_err("inner_maxmin_psd", k, problem.e.len()));
        }
        // X = blkdiag(V, diag(s)); t is eliminated through the first user:
        // min −⟨C_1, V⟩ + s_1 s.t. diag(V) = 1 and
        // ⟨C_k − C_1, V⟩ + s_1 − s_k = e_1 − e_k for k ≥ 2.
        let n = n1 + k;
        let scale = problem.c.iter().map(|c| c.camax()).fold(0.0, f64::max).max(1e-300);
        let unit = 1.0 / scale.max(1.0);
        let mut c = CMatrix::zeros(n, n);
        c.view_mut((0, 0), (n1, n1)).copy_from(&(-&problem.c[0] * C64::new(unit, 0.0)));
        c[(n1, n1)] = C64::new(unit, 0.0);
        let mut cons: Vec<Constraint> = (0..n1).map(Constraint::Diag).collect();
        let mut b = vec![1.0; n1];
        for kk in 1..k {
            let mut a = CMatrix::zeros(n, n);
            a.view_mut((0, 0), (n1, n1)).copy_from(&linalg::hermitize(&(&problem.c[kk] - &problem.c[0])));
            a[(n1, n1)] += C64::new(1.0, 0.0);
            a[(n1 + kk, n1 + kk)] -= C64::new(1.0, 0.0);
            let mut rhs = problem.e[0] - problem.e[kk];
            let norm = a.norm();
            a *= C64::new(1.0 / norm, 0.0);
            rhs /= norm;
            cons.push(Constraint::Dense(a));
            b.push(rhs);
        }
        let sdp = StandardSdp { c: linalg::hermitize(&c), cons, b };
        let sol = sdp.solve(self.tol, self.max_iter, self.fallback_tol)?;
        let v = project_unit_diagonal_psd(&sol.x.view((0, 0), (n1, n1)).into_owned());
        let value = problem.objective(&v);
        let status = if sol.accuracy < self.tol { SolveStatus::Optimal } else { SolveStatus::Inaccurate };
        Ok(InnerSolution { v, value, iterations: sol.iterations, status })
    }
}

/// Solve the parametric subproblem `max min_k [n_k(V̄) − λ d_k(V̄)]`.
pub fn inner_maxmin_psd(system: &RatioSystem, lambda: f64, solver: &dyn InnerSolver) -> Result<InnerSolution> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("Dinkelbach parameter must be nonnegative, got {lambda}")));
    }
    solver.solve(&system.parametric(lambda))
}

/// Result of the relaxed max-min ratio problem.
#[derive(Debug, Clone)]
pub struct PsdSolution {
    pub vbar: CMatrix,
    /// `min_k n_k(V̄)/d_k(V̄)` at `vbar`.
    pub lambda_star: f64,
    /// Final parametric value, in units of the noise variance.
    pub f_final: f64,
    pub rank_ratio: f64,
    pub dinkelbach_iterations: usize,
    pub lambda_trace: Vec<f64>,
    pub f_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct DinkelbachOptions {
    pub eps1: f64,
    pub max_outer: usize,
}

impl Default for DinkelbachOptions {
    fn default() -> Self {
        Self { eps1: 1e-4, max_outer: 500 }
    }
}

/// `λ₂/λ₁` of a Hermitian PSD matrix.
pub fn rank_ratio(v: &CMatrix) -> f64 {
    let (vals, _) = hermitian_eigen(v);
    if vals.len() < 2 || vals[0] <= 0.0 {
        return 0.0;
    }
    vals[1].max(0.0) / vals[0]
}

/// Generalized Dinkelbach iteration from `λ = 0` until `F < ε₁`.
pub fn dinkelbach_solve(system: &RatioSystem, opts: DinkelbachOptions, solver: &dyn InnerSolver) -> Result<PsdSolution> {
    if !(opts.eps1 > 0.0) {
        return Err(Error::Domain("eps1 must be positive".into()));
    }
    let sys = system.normalized();
    let mut lambda = 0.0;
    let mut lambda_trace = vec![lambda];
    let mut f_trace = Vec::new();
    let mut best: Option<CMatrix> = None;
    for it in 1..=opts.max_outer {
        let sol = inner_maxmin_psd(&sys, lambda, solver)?;
        let f = sol.value;
        f_trace.push(f);
        let next = sys.min_ratio(&sol.v);
        if best.is_none() || next >= lambda {
            best = Some(sol.v.clone());
        }
        if f < opts.eps1 {
            let vbar = best.unwrap_or(sol.v);
            let lambda_star = sys.min_ratio(&vbar);
            return Ok(PsdSolution {
                rank_ratio: rank_ratio(&vbar),
                vbar,
                lambda_star,
                f_final: f,
                dinkelbach_iterations: it,
                lambda_trace,
                f_trace,
            });
        }
        lambda = lambda.max(next);
        lambda_trace.push(lambda);
    }
    Err(Error::NonConvergence {
        what: "Dinkelbach iteration",
        iterations: opts.max_outer,
        residual: f_trace.last().copied().unwrap_or(f64::INFINITY),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub randomizations: usize,
    pub rank_one_threshold: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { randomizations: 1000, rank_one_threshold: RANK_ONE_THRESHOLD }
    }
}

/// Recover a rank-one `v̄` from `V̄`: the scaled principal eigenvector when
/// `V̄` is numerically rank one, otherwise the best of `L` Gaussian
/// candidates `UΛ^{1/2}r` (and the principal eigenvector) scored after
/// phase recovery.
pub fn extract_vector<R: Rng + ?Sized>(
    vbar: &CMatrix,
    system: &RatioSystem,
    opts: ExtractOptions,
    rng: &mut R,
) -> Result<CVector> {
    let (vals, vecs) = hermitian_eigen(vbar);
    let top = vals.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::Degenerate("relaxed solution has no positive eigenvalue".into()));
    }
    let principal = vecs.column(0) * C64::new(top.sqrt(), 0.0);
    let ratio = vals.get(1).map_or(0.0, |l| l.max(0.0) / top);
    if ratio < opts.rank_one_threshold {
        return Ok(principal);
    }
    if opts.randomizations == 0 {
        return Err(Error::Config("Gaussian randomization needs L >= 1 for a high-rank solution".into()));
    }
    let half = linalg::spectral_map(&vals, &vecs, |l| l.max(0.0).sqrt());
    let score = |cand: &CVector| recover_phases(cand).map(|v| system.min_ratio_v(&v)).unwrap_or(f64::NEG_INFINITY);
    let mut best = principal.clone();
    let mut best_score = score(&principal);
    for _ in 0..opts.randomizations {
        let cand = &half * crandn_vector(vbar.nrows(), rng);
        let s = score(&cand);
        if s > best_score {
            best_score = s;
            best = cand;
        }
    }
    Ok(best)
}

/// `v = exp(j∠(v̄_{1:N}/v̄_{N+1}))`.
pub fn recover_phases(vbar: &CVector) -> Result<CVector> {
    let n = vbar.len();
    if n == 0 {
        return Err(dim_err("recover_phases", ">= 1", 0));
    }
    let t = vbar[n - 1];
    if t.norm() < 1e-12 {
        return Err(Error::Degenerate("last entry of the lifted vector is zero".into()));
    }
    let v = CVector::from_iterator(n - 1, vbar.iter().take(n - 1).map(|z| z / t));
    let v = linalg::phase_vector(&v);
    debug_assert!(v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    Ok(v)
}
