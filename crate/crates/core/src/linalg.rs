//! Dense complex linear-algebra helpers shared by the estimation and
//! optimization modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::{CMatrix, CVector, C64};

/// Eigenvalues below this are treated as zero when forming matrix square roots.
pub const EIG_CLIP: f64 = 1e-12;

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order; column `i` of the returned matrix pairs with value `i`.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(hermitize(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `(A + Aᴴ)/2`.
pub fn hermitize(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Rebuild `U diag(f(λ)) Uᴴ` from an eigendecomposition.
pub fn spectral_map(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = values.len();
    let mut scaled = vectors.clone();
    for (j, &lam) in values.iter().enumerate() {
        let s = C64::new(f(lam), 0.0);
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    scaled * vectors.adjoint()
}

/// Principal square root of a Hermitian PSD matrix; eigenvalues below
/// [`EIG_CLIP`] are clipped to zero.
pub fn hermitian_sqrt(a: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(a);
    spectral_map(&values, &vectors, |l| if l < EIG_CLIP { 0.0 } else { l.sqrt() })
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    hermitian_eigen(a).0.last().copied().unwrap_or(0.0)
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    a.is_square() && (a - a.adjoint()).camax() <= tol * (1.0 + a.camax())
}

/// Solve `A x = b` for Hermitian positive definite `A`, falling back to LU
/// when the Cholesky factorization fails.
pub fn solve_hpd(a: &CMatrix, b: &CVector) -> Result<CVector> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("Hermitian solve".into()))
}

/// Matrix form of [`solve_hpd`].
pub fn solve_hpd_matrix(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("Hermitian solve".into()))
}

pub fn inverse(a: &CMatrix) -> Result<CMatrix> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix inverse".into()))
}

/// Real part of `tr(A B)`.
pub fn trace_prod_re(a: &CMatrix, b: &CMatrix) -> f64 {
    // tr(AB) = Σ_ij A_ij B_ji
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..a.ncols() {
            let x = a[(i, j)] * b[(j, i)];
            acc += x.re;
        }
    }
    acc
}

/// One standard circularly-symmetric complex Gaussian sample, `(g₁ + j g₂)/√2`.
pub fn crandn<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn crandn_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVector {
    DVector::from_fn(n, |_, _| crandn(rng))
}

pub fn unit_modulus(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// `exp(j∠x)` elementwise, with zero entries mapped to phase zero.
pub fn phase_vector(x: &CVector) -> CVector {
    x.map(|z| if z.norm() == 0.0 { C64::new(1.0, 0.0) } else { unit_modulus(z.arg()) })
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| C64::new(x, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = CMatrix::from_fn(5, 5, |_, _| crandn(&mut rng));
        let a = &b * b.adjoint();
        let (vals, vecs) = hermitian_eigen(&a);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let back = spectral_map(&vals, &vecs, |l| l);
        assert!((back - &a).camax() < 1e-10);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = CMatrix::from_fn(4, 4, |_, _| crandn(&mut rng));
        let a = &b * b.adjoint();
        let s = hermitian_sqrt(&a);
        assert!((&s * &s - &a).camax() < 1e-10);
        assert!(is_hermitian(&s, 1e-12));
    }

    #[test]
    fn trace_product_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = CMatrix::from_fn(3, 3, |_, _| crandn(&mut rng));
        let b = CMatrix::from_fn(3, 3, |_, _| crandn(&mut rng));
        assert!((trace_prod_re(&a, &b) - (&a * &b).trace().re).abs() < 1e-12);
    }

    #[test]
    fn phase_vector_handles_zero() {
        let x = CVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(0.0, 2.0)]);
        let p = phase_vector(&x);
        assert_eq!(p[0], C64::new(1.0, 0.0));
        assert!((p[1] - C64::new(0.0, 1.0)).norm() < 1e-15);
    }
}
