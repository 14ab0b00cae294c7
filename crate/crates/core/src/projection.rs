//! The coefficient map `T_φ(c) = ∬ c(x,y) φ(x) φ(y)ᵀ dx dy` and the projection
//! `P_φ(c) = φᵀ T_φ(c) φ`, which is the L₂ projection of `c` onto the tensor
//! basis `{φᵢ ⊗ φⱼ}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalFamily;
use crate::copula::{quadrature_rule_for, BivariateCopula, CopulaModel, Verdict, DEFAULT_RESOLUTION};
use crate::dependence::{spearman_rho, spearman_rho_quadrature};
use crate::error::{invalid_arg, CopulaError, Result};
use crate::numerics::{frobenius, QuadratureRule};

/// Frobenius change below which successive order doublings are accepted.
pub const DOUBLING_TOLERANCE: f64 = 1e-9;

/// Largest per-panel order tried when doubling.
pub const MAX_ORDER: usize = 512;

const ROW_BLOCK: usize = 32;

fn basis_rows(family: &OrthonormalFamily, rule: &QuadratureRule) -> DMatrix<f64> {
    let p = family.size();
    let mut phi = DMatrix::zeros(rule.order(), p);
    let mut buf = vec![0.0; p];
    for (a, x) in rule.nodes().iter().enumerate() {
        family.eval_into(*x, &mut buf);
        for k in 0..p {
            phi[(a, k)] = buf[k];
        }
    }
    phi
}

/// `T_φ(f)` on a given tensor rule. Rows are processed in fixed blocks and
/// the partial sums are combined in block order, so the result does not depend
/// on the thread count.
pub fn t_phi_on_rule<F>(f: F, family: &OrthonormalFamily, rule: &QuadratureRule) -> Result<DMatrix<f64>>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    let p = family.size();
    let n = rule.order();
    let phi = basis_rows(family, rule);
    let nodes = rule.nodes();
    let weights = rule.weights();
    let blocks: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let partials: Vec<Result<DMatrix<f64>>> = blocks
        .par_iter()
        .map(|&start| {
            let mut acc = DMatrix::zeros(p, p);
            let mut row = DVector::zeros(n);
            for a in start..(start + ROW_BLOCK).min(n) {
                let x = nodes[a];
                for b in 0..n {
                    let value = f(x, nodes[b]);
                    if !value.is_finite() {
                        return Err(CopulaError::NonFinite { u: x, v: nodes[b], value });
                    }
                    row[b] = weights[b] * value;
                }
                let z = phi.tr_mul(&row);
                let wa = weights[a];
                for i in 0..p {
                    let left = wa * phi[(a, i)];
                    if left == 0.0 {
                        continue;
                    }
                    for j in 0..p {
                        acc[(i, j)] += left * z[j];
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = DMatrix::zeros(p, p);
    for part in partials {
        total += part?;
    }
    Ok(total)
}

/// `T_φ(c)` for a copula density, on a rule aligned with the family and the
/// target. For targets that are unbounded at a corner the per-panel order is
/// doubled until the matrix changes by less than [`DOUBLING_TOLERANCE`].
pub fn t_phi<C: BivariateCopula + ?Sized>(target: &C, family: &OrthonormalFamily, order: usize) -> Result<DMatrix<f64>> {
    let breaks = family.panel_breaks();
    let mut order = family.panel_order(order);
    let f = |u: f64, v: f64| target.density_at(u, v);
    let mut current = t_phi_on_rule(f, family, &quadrature_rule_for(target, &breaks, order)?)?;
    if !(target.singular_at_origin() || target.singular_at_one()) {
        return Ok(current);
    }
    loop {
        if 2 * order > MAX_ORDER {
            return Err(CopulaError::Numeric(format!(
                "T_phi did not settle below {DOUBLING_TOLERANCE:e} by order {order}"
            )));
        }
        order *= 2;
        let next = t_phi_on_rule(f, family, &quadrature_rule_for(target, &breaks, order)?)?;
        let change = frobenius(&(&next - &current));
        current = next;
        if change < DOUBLING_TOLERANCE {
            return Ok(current);
        }
    }
}

/// Projects a density onto the family. The candidate is returned even when it
/// is not a copula density; the attached report says which case applies.
pub fn p_phi<C: BivariateCopula + ?Sized>(target: &C, family: Arc<OrthonormalFamily>, order: usize) -> Result<CopulaModel> {
    let mut t = t_phi(target, &family, order)?;
    snap_first_axis(&mut t, 1e-9);
    CopulaModel::new(family, t)?.validated(DEFAULT_RESOLUTION, true)
}

/// Rounds first-row/column entries within `tol` of `e₁` onto it.
fn snap_first_axis(t: &mut DMatrix<f64>, tol: f64) {
    for k in 0..t.nrows() {
        let e = if k == 0 { 1.0 } else { 0.0 };
        if (t[(k, 0)] - e).abs() <= tol {
            t[(k, 0)] = e;
        }
        if (t[(0, k)] - e).abs() <= tol {
            t[(0, k)] = e;
        }
    }
}

/// Whether `A = I` is admissible, i.e. `q(u,v) = φ(u)ᵀφ(v) ≥ 0`; exactly the
/// case in which every projection lands in the family.
pub fn identity_check(family: &Arc<OrthonormalFamily>) -> Result<bool> {
    let p = family.size();
    let model = CopulaModel::new(family.clone(), DMatrix::identity(p, p))?;
    Ok(model.validate(DEFAULT_RESOLUTION, true)?.verdict == Verdict::Valid)
}

/// `≺c₁, c₂≻ = ∬ c₁(u,v) c₂(v,u) = tr(AB)`.
pub fn inner_product(m1: &CopulaModel, m2: &CopulaModel) -> Result<f64> {
    if m1.family().descriptor() != m2.family().descriptor() {
        return invalid_arg(format!(
            "family mismatch: {} vs {}",
            m1.family().label(),
            m2.family().label()
        ));
    }
    Ok((m1.matrix() * m2.matrix()).trace())
}

/// `≺c₁, c₂≻ = tr(A T_φ(c₂))` for a model and an arbitrary density.
pub fn inner_product_with<C: BivariateCopula + ?Sized>(model: &CopulaModel, target: &C, order: usize) -> Result<f64> {
    let t = t_phi(target, model.family(), order)?;
    Ok((model.matrix() * t).trace())
}

/// One line of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub p: usize,
    pub l2_error: f64,
    pub rho_model: f64,
    pub rho_target: f64,
    pub rho_gap: f64,
}

/// `‖c − φᵀTφ‖` on a tensor rule.
pub fn l2_distance<C: BivariateCopula + ?Sized>(
    target: &C,
    family: &OrthonormalFamily,
    t: &DMatrix<f64>,
    rule: &QuadratureRule,
) -> Result<f64> {
    let n = rule.order();
    let phi = basis_rows(family, rule);
    let proj = &phi * t * phi.transpose();
    let nodes = rule.nodes();
    let weights = rule.weights();
    let blocks: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let partials: Vec<Result<f64>> = blocks
        .par_iter()
        .map(|&start| {
            let mut acc = 0.0;
            for a in start..(start + ROW_BLOCK).min(n) {
                let mut row = 0.0;
                for b in 0..n {
                    let c = target.density_at(nodes[a], nodes[b]);
                    if !c.is_finite() {
                        return Err(CopulaError::NonFinite { u: nodes[a], v: nodes[b], value: c });
                    }
                    let d = c - proj[(a, b)];
                    row += weights[b] * d * d;
                }
                acc += weights[a] * row;
            }
            Ok(acc)
        })
        .collect();
    let mut total = 0.0;
    for part in partials {
        total += part?;
    }
    Ok(total.sqrt())
}

fn squared_norm<C: BivariateCopula + ?Sized>(target: &C, rule: &QuadratureRule) -> Result<f64> {
    crate::numerics::integrate_2d(|u, v| target.density_at(u, v).powi(2), rule)
}

/// Projects `target` onto the families produced by `builder` for each size in
/// `sizes` and reports the L₂ error and the Spearman gap.
///
/// Fails with a numeric error when `∬c²` is non-finite or changes by more
/// than 10% under a doubling of the quadrature order.
pub fn convergence_study<C, B>(target: &C, builder: B, sizes: &[usize], order: usize) -> Result<Vec<ConvergenceRow>>
where
    C: BivariateCopula + ?Sized,
    B: Fn(usize) -> Result<OrthonormalFamily>,
{
    let base = quadrature_rule_for(target, &[], order)?;
    let fine = quadrature_rule_for(target, &[], 2 * order)?;
    let (n1, n2) = (squared_norm(target, &base)?, squared_norm(target, &fine)?);
    if !n1.is_finite() || !n2.is_finite() || (n2 - n1).abs() > 0.1 * n1.abs() {
        return Err(CopulaError::Numeric(format!(
            "target density does not look square-integrable: ∬c² = {n1} then {n2} after refinement"
        )));
    }
    let rho_target = spearman_rho_quadrature(target, order)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &p in sizes {
        let family = Arc::new(builder(p)?);
        let model = p_phi_unvalidated(target, family.clone(), order)?;
        let rule = quadrature_rule_for(target, &family.panel_breaks(), family.panel_order(order))?;
        let l2_error = l2_distance(target, &family, model.matrix(), &rule)?;
        let rho_model = spearman_rho(&model);
        rows.push(ConvergenceRow {
            p: family.size(),
            l2_error,
            rho_model,
            rho_target,
            rho_gap: (rho_model - rho_target).abs(),
        });
    }
    Ok(rows)
}

fn p_phi_unvalidated<C: BivariateCopula + ?Sized>(target: &C, family: Arc<OrthonormalFamily>, order: usize) -> Result<CopulaModel> {
    let mut t = t_phi(target, &family, order)?;
    snap_first_axis(&mut t, 1e-9);
    CopulaModel::new(family, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_fgm_family, make_haar_family, make_trig_family};
    use crate::reference::{make_reference, ReferenceKind};

    #[test]
    fn independence_projects_to_e1e1() {
        let fam = make_trig_family(2).unwrap();
        let ind = make_reference(ReferenceKind::Independence, 0.0).unwrap();
        let t = t_phi(&ind, &fam, 64).unwrap();
        let mut want = DMatrix::zeros(5, 5);
        want[(0, 0)] = 1.0;
        assert!((t - want).abs().max() < 1e-13);
    }

    #[test]
    fn members_are_recovered() {
        let fam = Arc::new(make_haar_family(2).unwrap());
        let a = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.1, -0.1, 0.0, 0.2, 0.5, 0.0, 0.0, 0.0, 0.1, 0.3,
        ]);
        let m = CopulaModel::new(fam.clone(), a.clone()).unwrap();
        let t = t_phi(&m, &fam, 8).unwrap();
        assert!((t - a).abs().max() < 1e-12);
    }

    #[test]
    fn fgm_target_on_fgm_basis() {
        let fam = make_fgm_family().unwrap();
        let target = make_reference(ReferenceKind::Fgm, 0.6).unwrap();
        let t = t_phi(&target, &fam, 64).unwrap();
        let rho = spearman_rho_quadrature(&target, 64).unwrap();
        assert!((t[(1, 1)] - rho).abs() < 1e-12);
        assert!(t[(0, 1)].abs() < 1e-14 && t[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn identity_check_examples() {
        assert!(identity_check(&Arc::new(make_haar_family(2).unwrap())).unwrap());
        assert!(!identity_check(&Arc::new(make_trig_family(1).unwrap())).unwrap());
        assert!(!identity_check(&Arc::new(make_trig_family(3).unwrap())).unwrap());
        assert!(!identity_check(&Arc::new(make_fgm_family().unwrap())).unwrap());
    }

    #[test]
    fn inner_products() {
        let fam = Arc::new(make_fgm_family().unwrap());
        let ind = CopulaModel::independence(fam.clone());
        assert!((inner_product(&ind, &ind).unwrap() - 1.0).abs() < 1e-15);
        let fgm = CopulaModel::diagonal(fam, 1.0 / 3.0).unwrap();
        let ip = inner_product(&fgm, &fgm).unwrap();
        assert!((ip - (1.0 + 1.0 / 9.0)).abs() < 1e-14);
        let rule = crate::numerics::gauss_legendre_rule(16).unwrap();
        let direct = crate::numerics::integrate_2d(|u, v| fgm.density_at(u, v) * fgm.density_at(v, u), &rule).unwrap();
        assert!((direct - ip).abs() < 1e-12);
        let other = CopulaModel::independence(Arc::new(make_haar_family(1).unwrap()));
        assert!(inner_product(&fgm, &other).is_err());
    }

    #[test]
    fn non_finite_target_is_reported() {
        struct Bad;
        impl BivariateCopula for Bad {
            fn density_at(&self, u: f64, _: f64) -> f64 {
                if u > 0.9 { f64::NAN } else { 1.0 }
            }
            fn cdf_at(&self, u: f64, v: f64) -> f64 {
                u * v
            }
        }
        let fam = make_fgm_family().unwrap();
        assert!(matches!(t_phi(&Bad, &fam, 16), Err(CopulaError::NonFinite { .. })));
    }

    #[test]
    fn member_has_zero_error_at_own_size() {
        let fam = Arc::new(make_haar_family(2).unwrap());
        let m = CopulaModel::diagonal(fam, 0.7).unwrap();
        let rows = convergence_study(&m, |p| make_haar_family(p.trailing_zeros()), &[4], 16).unwrap();
        assert!(rows[0].l2_error < 1e-12);
        assert!(rows[0].rho_gap < 1e-12);
    }
}
