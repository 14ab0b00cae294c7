//! Bivariate copulas whose densities are finite bilinear forms
//! `c(u,v) = φ(u)ᵀ A φ(v)` in an orthonormal family `φ` with `φ₁ ≡ 1`.
//!
//! The crate covers construction and validation of such models, closed-form
//! dependence measures, L₂ projection of arbitrary copula densities,
//! partition-of-unity (checkerboard, Bernstein) constructions, sampling and
//! moment estimation of the coefficient matrix.

pub mod basis;
pub mod copula;
pub mod dependence;
pub mod error;
pub mod io;
pub mod montecarlo;
pub mod numerics;
pub mod partition;
pub mod projection;
pub mod reference;

pub use basis::{
    make_fgm_family, make_haar_family, make_trig_family, orthonormalize, FamilyDescriptor, FamilyKind,
    OrthonormalFamily, RawFamily,
};
pub use copula::{mix, new_model, BivariateCopula, CopulaModel, ValidationReport, Verdict};
pub use dependence::{kendall_tau, kendall_tau_quadrature, measures, spearman_rho, spearman_rho_quadrature, upper_tail_profile};
pub use error::{CopulaError, Result};
pub use montecarlo::{estimate, estimate_a1, estimate_a2, sample, EstimationResult, Estimator, SampleSet};
pub use partition::{discretize_copula, make_partition, to_copula_model, PartitionFamily, PartitionKind};
pub use projection::{convergence_study, identity_check, inner_product, p_phi, t_phi, ConvergenceRow};
pub use reference::{make_reference, ReferenceCopula, ReferenceKind};
