//! Copulas built on partitions of unity (Bernstein and checkerboard) and
//! their rewriting as members of the orthonormal family.
//!
//! A partition of unity `ξ` and a doubly stochastic `M` give the density
//! `p ξ(u)ᵀ M ξ(v)`. With `H = I + e₁sᵀ − s e₁ᵀ` (`s` the all-ones vector),
//! `ψ = Hξ` satisfies `ψ₁ ≡ 1`, `∫ψ = e₁`, and the density equals
//! `ψ(u)ᵀ B ψ(v)` for `B = p H⁻ᵀ M H⁻¹`. Orthonormalizing `ψ` finishes the job.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::{orthonormalize, OrthonormalFamily, RawFamily};
use crate::copula::{BivariateCopula, CopulaModel};
use crate::error::{invalid_arg, CopulaError, Result};
use crate::numerics::{QuadratureRule, DEFAULT_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    Bernstein,
    Checkerboard,
}

/// Cell of `t` among `p` equal cells; the last cell is closed at 1.
pub(crate) fn cell_index(p: usize, t: f64) -> usize {
    ((t * p as f64).floor().max(0.0) as usize).min(p - 1)
}

/// `ξ(t)`.
pub(crate) fn xi_into(kind: PartitionKind, p: usize, t: f64, out: &mut [f64]) {
    match kind {
        PartitionKind::Checkerboard => {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[cell_index(p, t)] = 1.0;
        }
        PartitionKind::Bernstein => bernstein_basis_into(p - 1, t, out),
    }
}

/// `∫₀ᵗ ξ`.
pub(crate) fn xi_integral_into(kind: PartitionKind, p: usize, t: f64, out: &mut [f64]) {
    match kind {
        PartitionKind::Checkerboard => {
            let width = 1.0 / p as f64;
            for (i, o) in out.iter_mut().enumerate() {
                *o = (t - i as f64 * width).clamp(0.0, width);
            }
        }
        PartitionKind::Bernstein => {
            // ∫₀ᵗ b_{i,n} = (1/(n+1)) Σ_{j>i} b_{j,n+1}(t)
            let n = p - 1;
            let mut higher = vec![0.0; n + 2];
            bernstein_basis_into(n + 1, t, &mut higher);
            let mut tail = 0.0;
            for i in (0..=n).rev() {
                tail += higher[i + 1];
                out[i] = tail / (n + 1) as f64;
            }
        }
    }
}

/// Bernstein basis of degree `n` at `t` by the triangular recurrence.
fn bernstein_basis_into(n: usize, t: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n + 1);
    let s = 1.0 - t;
    out.iter_mut().for_each(|o| *o = 0.0);
    out[0] = 1.0;
    for degree in 1..=n {
        let mut prev = 0.0;
        for k in 0..=degree {
            let current = out[k];
            out[k] = s * current + t * prev;
            prev = current;
        }
    }
}

/// A partition of unity `ξ` with its Gram matrix `Γ_ξ` and the orthonormal
/// family it generates.
#[derive(Debug, Clone)]
pub struct PartitionFamily {
    kind: PartitionKind,
    size: usize,
    gram: DMatrix<f64>,
    family: Arc<OrthonormalFamily>,
}

/// Bernstein (`ξᵢ(x) = C(p−1,i−1) x^{i−1}(1−x)^{p−i}`) or checkerboard
/// (`ξᵢ = 𝟙[(i−1)/p, i/p]`) partition of size `p ≥ 2`.
pub fn make_partition(kind: PartitionKind, p: usize) -> Result<PartitionFamily> {
    if p < 2 {
        return invalid_arg(format!("partition size {p} must be at least 2"));
    }
    let gram = match kind {
        PartitionKind::Checkerboard => DMatrix::identity(p, p) / p as f64,
        PartitionKind::Bernstein => {
            let rule = QuadratureRule::composite(&[], DEFAULT_ORDER.max(2 * p))?;
            let mut g = DMatrix::zeros(p, p);
            let mut buf = vec![0.0; p];
            for (x, w) in rule.iter() {
                xi_into(kind, p, x, &mut buf);
                for i in 0..p {
                    for j in 0..p {
                        g[(i, j)] += w * buf[i] * buf[j];
                    }
                }
            }
            g
        }
    };
    let (family, _) = orthonormalize(RawFamily::from_partition(kind, p)?)?;
    Ok(PartitionFamily { kind, size: p, gram, family: Arc::new(family) })
}

impl PartitionFamily {
    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `Γ_ξ = ∫ ξ ξᵀ`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn xi(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.size);
        xi_into(self.kind, self.size, t, out.as_mut_slice());
        out
    }

    pub fn xi_integral(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.size);
        xi_integral_into(self.kind, self.size, t, out.as_mut_slice());
        out
    }

    /// `H = I + e₁sᵀ − s e₁ᵀ`.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        let p = self.size;
        let mut h = DMatrix::identity(p, p);
        for j in 0..p {
            h[(0, j)] = 1.0;
        }
        for i in 1..p {
            h[(i, 0)] -= 1.0;
        }
        h
    }

    /// `H⁻¹ = (1/p) s (2e₁ − s)ᵀ + I − e₁e₁ᵀ`.
    pub fn h_inverse(&self) -> DMatrix<f64> {
        let p = self.size;
        let inv_p = 1.0 / p as f64;
        DMatrix::from_fn(p, p, |i, j| {
            let outer = if j == 0 { inv_p } else { -inv_p };
            let diag = if i == j && i > 0 { 1.0 } else { 0.0 };
            outer + diag
        })
    }

    /// The orthonormal family `φ = (HΓ_ξHᵀ)^{-1/2} H ξ`.
    pub fn orthonormal_family(&self) -> Result<OrthonormalFamily> {
        Ok((*self.family).clone())
    }

    pub fn shared_family(&self) -> Arc<OrthonormalFamily> {
        self.family.clone()
    }

    /// `Ω` with `φ = Ω ξ`.
    pub fn omega(&self) -> DMatrix<f64> {
        let transform = self.family.transform().expect("partition families are orthonormalized");
        transform * self.h_matrix()
    }

    /// `p ξ(u)ᵀ M ξ(v)`, evaluated directly.
    pub fn density_direct(&self, m: &DMatrix<f64>, u: f64, v: f64) -> f64 {
        self.size as f64 * (self.xi(u).transpose() * m * self.xi(v))[0]
    }
}

/// Rectangle masses `M_ij = p·ΔC` of a copula on the `p × p` grid.
pub fn discretize_copula<C: BivariateCopula + ?Sized>(source: &C, p: usize) -> Result<DMatrix<f64>> {
    if p < 2 {
        return invalid_arg(format!("partition size {p} must be at least 2"));
    }
    let pf = p as f64;
    let grid = |i: usize| if i == p { 1.0 } else { i as f64 / pf };
    let cdf = DMatrix::from_fn(p + 1, p + 1, |i, j| {
        if i == 0 || j == 0 {
            0.0
        } else {
            source.cdf_at(grid(i), grid(j))
        }
    });
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let mass = cdf[(i + 1, j + 1)] - cdf[(i, j + 1)] - cdf[(i + 1, j)] + cdf[(i, j)];
            let value = pf * mass;
            if !value.is_finite() || value < -1e-10 {
                return Err(CopulaError::InvalidSource(format!(
                    "cell ({i},{j}) has mass {value:e}; the distribution function is not 2-increasing"
                )));
            }
            m[(i, j)] = value.max(0.0);
        }
    }
    Ok(m)
}

/// Checks nonnegativity (down to `-1e-12`) and unit row/column sums
/// (within `1e-10`).
pub fn check_doubly_stochastic(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(CopulaError::ConstraintViolation(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(((i, j), x)) = m
        .iter()
        .enumerate()
        .map(|(k, x)| ((k % m.nrows(), k / m.nrows()), x))
        .find(|(_, x)| !(**x >= -1e-12))
    {
        return Err(CopulaError::ConstraintViolation(format!("entry ({i},{j}) = {x} is negative")));
    }
    for i in 0..m.nrows() {
        let r: f64 = m.row(i).sum();
        if (r - 1.0).abs() > 1e-10 {
            return Err(CopulaError::ConstraintViolation(format!("row {i} sums to {r}")));
        }
        let c: f64 = m.column(i).sum();
        if (c - 1.0).abs() > 1e-10 {
            return Err(CopulaError::ConstraintViolation(format!("column {i} sums to {c}")));
        }
    }
    Ok(())
}

/// Rewrites `p ξ(u)ᵀ M ξ(v)` as a model over the family generated by `ξ`.
pub fn to_copula_model(pf: &PartitionFamily, m: &DMatrix<f64>) -> Result<CopulaModel> {
    if m.nrows() != pf.size {
        return Err(CopulaError::ConstraintViolation(format!(
            "matrix is {}x{}, partition has {} functions",
            m.nrows(),
            m.ncols(),
            pf.size
        )));
    }
    check_doubly_stochastic(m)?;
    let h_inv = pf.h_inverse();
    let b = h_inv.transpose() * m * &h_inv * pf.size as f64;
    let mut a = pf.family.lift_raw_matrix(&b)?;
    // The first row and column are e₁ by construction; remove rounding.
    let p = pf.size;
    for k in 0..p {
        let e = if k == 0 { 1.0 } else { 0.0 };
        if (a[(k, 0)] - e).abs() <= 1e-10 {
            a[(k, 0)] = e;
        }
        if (a[(0, k)] - e).abs() <= 1e-10 {
            a[(0, k)] = e;
        }
    }
    CopulaModel::new(pf.family.clone(), a)
}

/// Sinkhorn–Knopp scaling of a positive matrix to a doubly stochastic one.
pub fn sinkhorn_normalize(k: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    if !k.is_square() || k.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return invalid_arg("Sinkhorn scaling needs a square matrix with positive entries");
    }
    let mut m = k.clone();
    for _ in 0..max_iter {
        for i in 0..m.nrows() {
            let s = m.row(i).sum();
            m.row_mut(i).unscale_mut(s);
        }
        for j in 0..m.ncols() {
            let s = m.column(j).sum();
            m.column_mut(j).unscale_mut(s);
        }
        let worst = (0..m.nrows()).map(|i| (m.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
        if worst < tol {
            return Ok(m);
        }
    }
    Err(CopulaError::Numeric(format!("Sinkhorn scaling did not converge in {max_iter} sweeps")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_haar_family;
    use crate::reference::{make_reference, ReferenceKind};

    #[test]
    fn partition_of_unity_properties() {
        for kind in [PartitionKind::Bernstein, PartitionKind::Checkerboard] {
            for p in [2usize, 3, 7] {
                let pf = make_partition(kind, p).unwrap();
                let rule = QuadratureRule::composite(&[0.5], 64).unwrap();
                for t in [0.0, 0.3, 0.5, 0.99, 1.0] {
                    let xi = pf.xi(t);
                    assert!(xi.iter().all(|x| *x >= 0.0));
                    assert!((xi.sum() - 1.0).abs() < 1e-12);
                }
                for i in 0..p {
                    let integral = rule.integrate(|t| pf.xi(t)[i]);
                    if kind == PartitionKind::Bernstein {
                        assert!((integral - 1.0 / p as f64).abs() < 1e-10);
                    }
                    assert!((pf.xi_integral(1.0)[i] - 1.0 / p as f64).abs() < 1e-12);
                }
            }
        }
        let b3 = make_partition(PartitionKind::Bernstein, 3).unwrap();
        assert!((b3.xi(0.3).sum() - 1.0).abs() < 1e-15);
        assert!(matches!(make_partition(PartitionKind::Checkerboard, 1), Err(CopulaError::InvalidArgument(_))));
    }

    #[test]
    fn checkerboard_gram() {
        let pf = make_partition(PartitionKind::Checkerboard, 4).unwrap();
        assert!((pf.gram() - DMatrix::identity(4, 4) * 0.25).abs().max() < 1e-15);
    }

    #[test]
    fn bernstein_antiderivative_matches_quadrature() {
        let pf = make_partition(PartitionKind::Bernstein, 6).unwrap();
        let rule = QuadratureRule::composite(&[], 32).unwrap();
        for t in [0.2, 0.65] {
            let got = pf.xi_integral(t);
            for i in 0..6 {
                let want = t * rule.integrate(|x| pf.xi(t * x)[i]);
                assert!((got[i] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn h_identities() {
        let pf = make_partition(PartitionKind::Bernstein, 5).unwrap();
        let h = pf.h_matrix();
        let hi = pf.h_inverse();
        assert!((&h * &hi - DMatrix::identity(5, 5)).abs().max() < 1e-12);
        let s = DVector::from_element(5, 1.0);
        let mut e1 = DVector::zeros(5);
        e1[0] = 1.0;
        assert!((&hi * &e1 - &s / 5.0).abs().max() < 1e-12);
        assert!((hi.transpose() * &s - e1).abs().max() < 1e-12);
    }

    #[test]
    fn discretize_examples() {
        let ind = make_reference(ReferenceKind::Independence, 0.0).unwrap();
        let m = discretize_copula(&ind, 5).unwrap();
        assert!(m.iter().all(|x| (x - 0.2).abs() < 1e-15));
        let fgm = make_reference(ReferenceKind::Fgm, 1.0).unwrap();
        let m = discretize_copula(&fgm, 2).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.625, 0.375, 0.375, 0.625]);
        assert!((m - want).abs().max() < 1e-15);
        let clayton = make_reference(ReferenceKind::Clayton, 2.0).unwrap();
        check_doubly_stochastic(&discretize_copula(&clayton, 9).unwrap()).unwrap();
    }

    struct Broken;
    impl BivariateCopula for Broken {
        fn density_at(&self, _: f64, _: f64) -> f64 {
            1.0
        }
        fn cdf_at(&self, u: f64, v: f64) -> f64 {
            u.min(v) * 1.5 - 0.5 * u * v
        }
    }

    #[test]
    fn non_increasing_source_is_rejected() {
        // ΔC on an off-diagonal cell is negative for this function.
        assert!(matches!(discretize_copula(&Broken, 4), Err(CopulaError::InvalidSource(_))));
    }

    #[test]
    fn checkerboard_identity_model() {
        let pf = make_partition(PartitionKind::Checkerboard, 2).unwrap();
        let model = to_copula_model(&pf, &DMatrix::identity(2, 2)).unwrap();
        assert!((model.density(0.25, 0.25).unwrap() - 2.0).abs() < 1e-12);
        assert!((model.density(0.75, 0.75).unwrap() - 2.0).abs() < 1e-12);
        assert!(model.density(0.25, 0.75).unwrap().abs() < 1e-12);
    }

    #[test]
    fn checkerboard_omega_closed_form() {
        for p in [2usize, 4, 7] {
            let pf = make_partition(PartitionKind::Checkerboard, p).unwrap();
            let pf_ = p as f64;
            let beta = pf_.powf(-0.5);
            let gamma = (pf_ - 2.0 + pf_.powf(-0.5)) / (pf_ - 1.0);
            let omega = DMatrix::from_fn(p, p, |i, j| {
                let entry = match (i, j) {
                    (0, _) => pf_.powf(-0.5),
                    (_, 0) => -pf_.powf(-0.5),
                    _ if i == j => gamma,
                    _ => gamma - 1.0,
                };
                entry / beta
            });
            assert!((pf.omega() - omega).abs().max() < 1e-10, "p = {p}");
        }
    }

    #[test]
    fn bernstein_independence_gives_e1e1() {
        let pf = make_partition(PartitionKind::Bernstein, 3).unwrap();
        let ind = make_reference(ReferenceKind::Independence, 0.0).unwrap();
        let model = to_copula_model(&pf, &discretize_copula(&ind, 3).unwrap()).unwrap();
        let mut want = DMatrix::zeros(3, 3);
        want[(0, 0)] = 1.0;
        assert!((model.matrix() - want).abs().max() < 1e-10);
    }

    #[test]
    fn not_doubly_stochastic_is_rejected() {
        let pf = make_partition(PartitionKind::Checkerboard, 2).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8]);
        assert!(matches!(to_copula_model(&pf, &m), Err(CopulaError::ConstraintViolation(_))));
    }

    #[test]
    fn checkerboard_identity_equals_haar_kernel() {
        let pf = make_partition(PartitionKind::Checkerboard, 8).unwrap();
        let cb = to_copula_model(&pf, &DMatrix::identity(8, 8)).unwrap();
        let haar = Arc::new(make_haar_family(3).unwrap());
        let kernel = CopulaModel::new(haar, DMatrix::identity(8, 8)).unwrap();
        for i in 0..=40 {
            for j in 0..=40 {
                let (u, v) = (i as f64 / 40.0, j as f64 / 40.0);
                assert!((cb.density_at(u, v) - kernel.density_at(u, v)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sinkhorn_output_is_doubly_stochastic() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 0.5, 0.1, 4.0, 2.0, 2.0, 2.0]);
        let m = sinkhorn_normalize(&k, 1e-14, 10_000).unwrap();
        check_doubly_stochastic(&m).unwrap();
        assert!(sinkhorn_normalize(&DMatrix::zeros(2, 2), 1e-12, 10).is_err());
    }
}
