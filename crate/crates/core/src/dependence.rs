//! Spearman's rho, Kendall's tau and the upper-tail profile, in closed form
//! from `(A, μ, Θ)` and by direct quadrature of the copula.

use serde::{Deserialize, Serialize};

use crate::copula::{bilinear, quadrature_rule_for, BivariateCopula, CopulaModel};
use crate::error::{invalid_arg, Result};
use crate::numerics::integrate_2d;

/// `ρ = 12 μᵀ A μ − 3`.
pub fn spearman_rho(model: &CopulaModel) -> f64 {
    let mu = model.family().mu();
    12.0 * (mu.transpose() * model.matrix() * mu)[0] - 3.0
}

/// `ρ = 12 ∬ C − 3` by tensor quadrature.
pub fn spearman_rho_quadrature<C: BivariateCopula + ?Sized>(copula: &C, order: usize) -> Result<f64> {
    let rule = quadrature_rule_for(copula, &[], order)?;
    Ok(12.0 * integrate_2d(|u, v| copula.cdf_at(u, v), &rule)? - 3.0)
}

/// `τ = 1 − 4 tr(Aᵀ Θ A Θ)`.
pub fn kendall_tau(model: &CopulaModel) -> f64 {
    let a = model.matrix();
    let theta = model.family().theta();
    1.0 - 4.0 * (a.transpose() * theta * a * theta).trace()
}

/// `τ = 4 ∬ C c − 1` by tensor quadrature.
pub fn kendall_tau_quadrature<C: BivariateCopula + ?Sized>(copula: &C, order: usize) -> Result<f64> {
    let rule = quadrature_rule_for(copula, &[], order)?;
    Ok(4.0 * integrate_2d(|u, v| copula.cdf_at(u, v) * copula.density_at(u, v), &rule)? - 1.0)
}

/// `C̄(u,u)/(1−u) = (1 − 2u + C(u,u))/(1 − u)` at each point.
///
/// The survival function is evaluated as `(∫ᵤ¹φ)ᵀ A (∫ᵤ¹φ)`, which is the same
/// quantity without the cancellation in `1 − 2u + C(u,u)` near `u = 1`.
pub fn upper_tail_profile(model: &CopulaModel, u_points: &[f64]) -> Result<Vec<f64>> {
    let p = model.size();
    let mut tail = vec![0.0; p];
    u_points
        .iter()
        .map(|&u| {
            if !(0.0..1.0).contains(&u) {
                return invalid_arg(format!("tail profile point {u} must lie in [0,1)"));
            }
            model.family().tail_integral_into(u, &mut tail);
            Ok(bilinear(&tail, model.matrix(), &tail) / (1.0 - u))
        })
        .collect()
}

/// Measures report written by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuresReport {
    pub rho_closed: f64,
    pub rho_quadrature: f64,
    pub tau_closed: f64,
    pub tau_quadrature: f64,
    pub tail_profile: Vec<(f64, f64)>,
}

/// Default tail points `1 − 10⁻ᵏ`, `k = 2..6`.
pub fn default_tail_points() -> Vec<f64> {
    (2..=6).map(|k| 1.0 - 10f64.powi(-k)).collect()
}

pub fn measures(model: &CopulaModel, order: usize, tail_points: &[f64]) -> Result<MeasuresReport> {
    let profile = upper_tail_profile(model, tail_points)?;
    Ok(MeasuresReport {
        rho_closed: spearman_rho(model),
        rho_quadrature: spearman_rho_quadrature(model, order)?,
        tau_closed: kendall_tau(model),
        tau_quadrature: kendall_tau_quadrature(model, order)?,
        tail_profile: tail_points.iter().copied().zip(profile).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_fgm_family, make_haar_family, make_trig_family};
    use crate::reference::{make_reference, ReferenceKind};
    use std::f64::consts::PI;
    use std::sync::Arc;

    #[test]
    fn independence_measures() {
        let m = CopulaModel::independence(Arc::new(make_trig_family(2).unwrap()));
        assert!(spearman_rho(&m).abs() < 1e-14);
        assert!(spearman_rho_quadrature(&m, 64).unwrap().abs() < 1e-12);
        assert!(kendall_tau(&m).abs() < 1e-14);
        assert!(kendall_tau_quadrature(&m, 64).unwrap().abs() < 1e-10);
        let prof = upper_tail_profile(&m, &[0.99]).unwrap();
        assert!((prof[0] - 0.01).abs() < 1e-14);
    }

    #[test]
    fn trig_and_haar_constants() {
        let trig = CopulaModel::diagonal(Arc::new(make_trig_family(2).unwrap()), 0.5).unwrap();
        assert!((spearman_rho(&trig) - 15.0 / (4.0 * PI * PI)).abs() < 1e-12);
        let haar = CopulaModel::diagonal(Arc::new(make_haar_family(2).unwrap()), 1.0).unwrap();
        assert!((spearman_rho(&haar) - 0.9375).abs() < 1e-12);
    }

    #[test]
    fn fgm_measures_against_closed_forms() {
        let m = CopulaModel::diagonal(Arc::new(make_fgm_family().unwrap()), 1.0 / 3.0).unwrap();
        assert!((spearman_rho_quadrature(&m, 64).unwrap() - 1.0 / 3.0).abs() < 1e-10);
        assert!((kendall_tau(&m) - 2.0 / 9.0).abs() < 1e-12);
        assert!((kendall_tau_quadrature(&m, 64).unwrap() - 2.0 / 9.0).abs() < 1e-8);
        let fgm = make_reference(ReferenceKind::Fgm, 0.6).unwrap();
        assert!((kendall_tau_quadrature(&fgm, 64).unwrap() - 2.0 * 0.6 / 9.0).abs() < 1e-10);
    }

    #[test]
    fn haar_tail_near_corner() {
        let m = CopulaModel::diagonal(Arc::new(make_haar_family(2).unwrap()), 1.0).unwrap();
        // density is 4 on the top-right cell, so C̄(u,u) = 4(1−u)²
        let prof = upper_tail_profile(&m, &[1.0 - 1e-3]).unwrap();
        assert!((prof[0] - 4e-3).abs() < 1e-12);
        assert!(upper_tail_profile(&m, &[1.0]).is_err());
    }
}
