//! Quadrature on `[0,1]` and `[0,1]²`, plus symmetric matrix square roots.
//!
//! Every integral in the crate goes through a [`QuadratureRule`]. Piecewise
//! families hand their cell boundaries to [`QuadratureRule::composite`] so that
//! no Gauss panel straddles a jump; targets with an integrable singularity at a
//! corner add geometrically graded panels via [`graded_breaks`].

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid_arg, CopulaError, Result};

/// Default number of Gauss–Legendre nodes per panel.
pub const DEFAULT_ORDER: usize = 64;

/// Nodes and positive weights on `[0,1]`; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total number of nodes.
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Composite Gauss–Legendre rule with `order` nodes on each panel delimited
    /// by `breaks`. Breakpoints outside `(0,1)` are ignored; `0` and `1` are
    /// always added.
    pub fn composite(breaks: &[f64], order: usize) -> Result<Self> {
        let base = gauss_legendre_rule(order)?;
        let mut cuts: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|b| b.is_finite() && *b > 0.0 && *b < 1.0)
            .collect();
        cuts.push(0.0);
        cuts.push(1.0);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

        let panels = cuts.len() - 1;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let h = b - a;
            for (x, wt) in base.iter() {
                nodes.push(a + h * x);
                weights.push(h * wt);
            }
        }
        Ok(Self { nodes, weights })
    }

    /// `∫₀¹ f(x) dx`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Gauss–Legendre rule on `[0,1]` with `order` nodes, in ascending order.
pub fn gauss_legendre_rule(order: usize) -> Result<QuadratureRule> {
    if order == 0 {
        return invalid_arg("quadrature order must be at least 1");
    }
    let n = order;
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Roots are symmetric; compute the upper half by Newton on P_n.
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x > 0 here, so (1 - x)/2 is the i-th smallest node on [0,1].
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    Ok(QuadratureRule { nodes, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Breakpoints `2^-1, …, 2^-levels` (towards 0) or their mirror images
/// (towards 1), for integrands with an integrable corner singularity.
pub fn graded_breaks(levels: u32, towards_zero: bool) -> Vec<f64> {
    (1..=levels)
        .map(|k| {
            let h = 0.5f64.powi(k as i32);
            if towards_zero {
                h
            } else {
                1.0 - h
            }
        })
        .collect()
}

/// Tensor-product quadrature `Σᵢ Σⱼ wᵢ wⱼ f(xᵢ, xⱼ)`.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(f: F, rule: &QuadratureRule) -> Result<f64> {
    integrate_2d_with(f, rule, rule)
}

/// Tensor-product quadrature with separate rules per axis.
pub fn integrate_2d_with<F: Fn(f64, f64) -> f64>(
    f: F,
    rule_u: &QuadratureRule,
    rule_v: &QuadratureRule,
) -> Result<f64> {
    let mut total = 0.0;
    for (u, wu) in rule_u.iter() {
        let mut row = 0.0;
        for (v, wv) in rule_v.iter() {
            let value = f(u, v);
            if !value.is_finite() {
                return Err(CopulaError::NonFinite { u, v, value });
            }
            row += wv * value;
        }
        total += wu * row;
    }
    Ok(total)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return invalid_arg(format!("matrix is {}x{}, expected square", m.nrows(), m.ncols()));
    }
    let scale = 1.0 + frobenius(m);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return invalid_arg(format!(
                    "matrix is not symmetric at ({i},{j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                ));
            }
        }
    }
    Ok(())
}

fn sym_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym))
}

fn spectral_map<F: Fn(f64) -> f64>(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: F) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = f(*lambda);
        scaled.column_mut(j).scale_mut(s);
    }
    let r = &scaled * v.transpose();
    (&r + r.transpose()) * 0.5
}

/// Principal square root of a symmetric positive-semidefinite matrix.
///
/// Eigenvalues in `[-1e-12, 0)` are clamped to zero. Because the root is a
/// spectral function of `M`, any eigenvector of `M` (in particular `e₁` when
/// `M e₁ = e₁`) is an eigenvector of the root.
pub fn sym_principal_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    if let Some(bad) = eig.eigenvalues.iter().find(|l| **l < -1e-12) {
        return invalid_arg(format!("matrix is not positive semidefinite (eigenvalue {bad:e})"));
    }
    Ok(spectral_map(&eig, |l| l.max(0.0).sqrt()))
}

/// Inverse principal square root; eigenvalues below `1e-10` are rejected.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    if let Some(bad) = eig.eigenvalues.iter().find(|l| **l < 1e-10) {
        return Err(CopulaError::SingularMatrix(format!(
            "eigenvalue {bad:e} below 1e-10"
        )));
    }
    Ok(spectral_map(&eig, |l| 1.0 / l.sqrt()))
}

/// Ratio of extreme eigenvalues of a symmetric matrix (infinite when the
/// smallest is not positive).
pub fn sym_condition_number(m: &DMatrix<f64>) -> Result<f64> {
    let eig = sym_eigen(m)?;
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if min <= 0.0 { f64::INFINITY } else { max / min })
}

/// Nelder–Mead minimization of `f` over the box `[0,1]²`, starting from
/// `start` with an initial simplex edge of `step`. Trial points are clamped
/// into the box. Returns the best point and value found.
pub fn minimize_in_unit_square<F: Fn(f64, f64) -> f64>(
    f: F,
    start: (f64, f64),
    step: f64,
    max_iter: usize,
) -> ((f64, f64), f64) {
    let clamp = |p: [f64; 2]| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)];
    let eval = |p: [f64; 2]| f(p[0], p[1]);
    let s0 = clamp([start.0, start.1]);
    let s1 = clamp([s0[0] + step, s0[1]]);
    let s2 = clamp([s0[0], s0[1] + step]);
    let mut simplex = [(s0, eval(s0)), (s1, eval(s1)), (s2, eval(s2))];
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0], simplex[2]);
        if (worst.1 - best.1).abs() < 1e-15 && (worst.0[0] - best.0[0]).abs() < 1e-12 {
            break;
        }
        let centroid = [
            0.5 * (simplex[0].0[0] + simplex[1].0[0]),
            0.5 * (simplex[0].0[1] + simplex[1].0[1]),
        ];
        let along = |t: f64| {
            clamp([
                centroid[0] + t * (worst.0[0] - centroid[0]),
                centroid[1] + t * (worst.0[1] - centroid[1]),
            ])
        };
        let reflected = along(-1.0);
        let fr = eval(reflected);
        if fr < best.1 {
            let expanded = along(-2.0);
            let fe = eval(expanded);
            simplex[2] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (reflected, fr);
        } else {
            let contracted = along(0.5);
            let fc = eval(contracted);
            if fc < worst.1 {
                simplex[2] = (contracted, fc);
            } else {
                for k in 1..3 {
                    let p = clamp([
                        0.5 * (best.0[0] + simplex[k].0[0]),
                        0.5 * (best.0[1] + simplex[k].0[1]),
                    ]);
                    simplex[k] = (p, eval(p));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    ((simplex[0].0[0], simplex[0].0[1]), simplex[0].1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_order_is_rejected() {
        assert!(matches!(gauss_legendre_rule(0), Err(CopulaError::InvalidArgument(_))));
    }

    #[test]
    fn order_64_basic_integrals() {
        let rule = gauss_legendre_rule(64).unwrap();
        assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((rule.integrate(|x| x * x) - 1.0 / 3.0).abs() < 1e-14);
        assert!(rule.integrate(|x| (2.0 * PI * x).sin()).abs() < 1e-13);
        assert!(rule.nodes().iter().all(|x| *x > 0.0 && *x < 1.0));
        assert!(rule.weights().iter().all(|w| *w > 0.0));
    }

    #[test]
    fn monomials_exact_up_to_degree_2n_minus_1() {
        for order in [1usize, 2, 3, 5, 8, 17, 64] {
            let rule = gauss_legendre_rule(order).unwrap();
            assert!((rule.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for k in 0..(2 * order) {
                let got = rule.integrate(|x| x.powi(k as i32));
                let want = 1.0 / (k as f64 + 1.0);
                assert!((got - want).abs() < 1e-12, "order {order} k {k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn composite_handles_jumps() {
        let rule = QuadratureRule::composite(&[0.25, 0.5, 0.75], 4).unwrap();
        assert_eq!(rule.order(), 16);
        let step = |x: f64| if x < 0.25 { 3.0 } else { -1.0 };
        assert!((rule.integrate(step) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn integrate_2d_examples() {
        let rule = gauss_legendre_rule(64).unwrap();
        assert!((integrate_2d(|_, _| 1.0, &rule).unwrap() - 1.0).abs() < 1e-14);
        assert!((integrate_2d(|u, v| u * v, &rule).unwrap() - 0.25).abs() < 1e-14);
        let fgm = |u: f64, v: f64| 1.0 + (1.0 - 2.0 * u) * (1.0 - 2.0 * v);
        assert!((integrate_2d(fgm, &rule).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn integrate_2d_reports_node() {
        let rule = gauss_legendre_rule(4).unwrap();
        let err = integrate_2d(|u, _| if u > 0.5 { f64::NAN } else { 1.0 }, &rule).unwrap_err();
        match err {
            CopulaError::NonFinite { u, .. } => assert!(u > 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nelder_mead_finds_interior_and_boundary_minima() {
        let ((u, v), m) =
            minimize_in_unit_square(|u, v| (u - 0.3).powi(2) + (v - 0.7).powi(2) - 1.0, (0.9, 0.1), 0.1, 500);
        assert!((u - 0.3).abs() < 1e-6 && (v - 0.7).abs() < 1e-6 && (m + 1.0).abs() < 1e-12);
        let ((u, v), _) = minimize_in_unit_square(|u, v| u + v, (0.5, 0.5), 0.1, 500);
        assert!(u < 1e-9 && v < 1e-9);
    }

    #[test]
    fn sqrt_of_diagonal_and_identity() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((sym_principal_sqrt(&id).unwrap() - &id).abs().max() < 1e-14);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        let r = sym_principal_sqrt(&d).unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-14 && (r[(1, 1)] - 2.0).abs() < 1e-14);
        assert!(r[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn sqrt_errors() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(sym_principal_sqrt(&asym), Err(CopulaError::InvalidArgument(_))));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(sym_principal_sqrt(&singular).is_ok());
        assert!(matches!(sym_inv_sqrt(&singular), Err(CopulaError::SingularMatrix(_))));
    }

    #[test]
    fn sqrt_preserves_first_axis() {
        // M e1 = e1 with a dense lower block.
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.7, 0.0, 0.7, 1.5]);
        let r = sym_principal_sqrt(&m).unwrap();
        assert!((&r * &r - &m).abs().max() < 1e-12);
        assert!((r[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(r[(1, 0)].abs() < 1e-12 && r[(2, 0)].abs() < 1e-12);
        let ri = sym_inv_sqrt(&m).unwrap();
        assert!((&ri * &r - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }
}
