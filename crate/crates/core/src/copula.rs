//! Copula models `c(u,v) = φ(u)ᵀ A φ(v)`, their validation, and the algebra
//! of the family (⋆-product, convex mixtures, Cesàro aggregation).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalFamily;
use crate::error::{invalid_arg, CopulaError, Result};
use crate::numerics::{graded_breaks, minimize_in_unit_square, QuadratureRule};

/// Grid resolution used when no other is requested.
pub const DEFAULT_RESOLUTION: usize = 512;

/// Densities above this negative threshold count as nonnegative.
pub const NONNEGATIVITY_TOLERANCE: f64 = 1e-9;

const E1_TOLERANCE: f64 = 1e-10;

/// Anything with a copula density and distribution function on `[0,1]²`.
///
/// The `*_at` evaluators do not check their arguments.
pub trait BivariateCopula: Sync {
    fn density_at(&self, u: f64, v: f64) -> f64;

    fn cdf_at(&self, u: f64, v: f64) -> f64;

    /// Interior abscissae where the density may jump (shared by both axes).
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// True when the density is unbounded near `(0,0)`.
    fn singular_at_origin(&self) -> bool {
        false
    }

    /// True when the density is unbounded near `(1,1)`.
    fn singular_at_one(&self) -> bool {
        false
    }
}

/// Composite rule adapted to a target: panels at its breakpoints plus
/// geometric grading towards singular corners.
pub fn quadrature_rule_for(target: &(impl BivariateCopula + ?Sized), extra: &[f64], order: usize) -> Result<QuadratureRule> {
    let mut breaks = target.breakpoints();
    breaks.extend_from_slice(extra);
    if target.singular_at_origin() {
        breaks.extend(graded_breaks(GRADING_LEVELS, true));
    }
    if target.singular_at_one() {
        breaks.extend(graded_breaks(GRADING_LEVELS, false));
    }
    QuadratureRule::composite(&breaks, order)
}

pub(crate) const GRADING_LEVELS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Valid => "valid",
            Verdict::Invalid => "invalid",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Outcome of a nonnegativity scan of the density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub min_value: f64,
    pub argmin: (f64, f64),
    pub grid_resolution: usize,
    pub refined: bool,
    pub verdict: Verdict,
}

/// A member (candidate) of the family: an orthonormal family and a `p×p`
/// matrix with `A e₁ = e₁` and `Aᵀ e₁ = e₁`. Nonnegativity of the density is
/// only certified by [`CopulaModel::validate`].
#[derive(Debug, Clone)]
pub struct CopulaModel {
    family: Arc<OrthonormalFamily>,
    matrix: DMatrix<f64>,
    validation: Option<ValidationReport>,
}

/// Checks the linear constraints and builds a model.
pub fn new_model(family: Arc<OrthonormalFamily>, matrix: DMatrix<f64>) -> Result<CopulaModel> {
    CopulaModel::new(family, matrix)
}

impl CopulaModel {
    pub fn new(family: Arc<OrthonormalFamily>, matrix: DMatrix<f64>) -> Result<Self> {
        let p = family.size();
        if matrix.shape() != (p, p) {
            return invalid_arg(format!(
                "matrix is {}x{} but family {} has {p} functions",
                matrix.nrows(),
                matrix.ncols(),
                family.label()
            ));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return invalid_arg("matrix has non-finite entries");
        }
        let mut problems = Vec::new();
        for k in 0..p {
            let want = if k == 0 { 1.0 } else { 0.0 };
            let col = matrix[(k, 0)];
            if (col - want).abs() > E1_TOLERANCE {
                problems.push(format!("A[{k}][0] = {col} (A e1 must equal e1)"));
            }
            let row = matrix[(0, k)];
            if (row - want).abs() > E1_TOLERANCE {
                problems.push(format!("A[0][{k}] = {row} (A^T e1 must equal e1)"));
            }
        }
        if !problems.is_empty() {
            return Err(CopulaError::ConstraintViolation(problems.join("; ")));
        }
        Ok(Self { family, matrix, validation: None })
    }

    /// `A = e₁e₁ᵀ`, the independence copula.
    pub fn independence(family: Arc<OrthonormalFamily>) -> Self {
        let p = family.size();
        let mut a = DMatrix::zeros(p, p);
        a[(0, 0)] = 1.0;
        Self { family, matrix: a, validation: None }
    }

    /// `A = diag{1, θ, …, θ}`.
    pub fn diagonal(family: Arc<OrthonormalFamily>, theta: f64) -> Result<Self> {
        let p = family.size();
        let mut d = DVector::from_element(p, theta);
        d[0] = 1.0;
        Self::new(family, DMatrix::from_diagonal(&d))
    }

    pub fn family(&self) -> &Arc<OrthonormalFamily> {
        &self.family
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.family.size()
    }

    pub fn validation(&self) -> Option<&ValidationReport> {
        self.validation.as_ref()
    }

    /// Attaches a report, replacing any previous one.
    pub fn with_validation(mut self, report: ValidationReport) -> Self {
        self.validation = Some(report);
        self
    }

    /// Runs [`validate`](Self::validate) and attaches the report.
    pub fn validated(self, resolution: usize, refine: bool) -> Result<Self> {
        let report = self.validate(resolution, refine)?;
        Ok(self.with_validation(report))
    }

    /// `φ(u)ᵀ A φ(v)`.
    pub fn density(&self, u: f64, v: f64) -> Result<f64> {
        check_domain(u, v)?;
        Ok(self.density_at(u, v))
    }

    /// `Ψ(u)ᵀ A Ψ(v)`.
    pub fn cdf(&self, u: f64, v: f64) -> Result<f64> {
        check_domain(u, v)?;
        Ok(self.cdf_at(u, v))
    }

    /// Largest deviation of either margin density `∫c(u,v)dv`, `∫c(v,u)dv`
    /// from one over the given abscissae.
    pub fn margin_deviation(&self, points: &[f64], order: usize) -> Result<f64> {
        let rule = self.family.quadrature_rule(order)?;
        let p = self.size();
        let mut integral = DVector::zeros(p);
        let mut buf = vec![0.0; p];
        for (x, w) in rule.iter() {
            self.family.eval_into(x, &mut buf);
            for i in 0..p {
                integral[i] += w * buf[i];
            }
        }
        let right = &self.matrix * &integral;
        let left = self.matrix.transpose() * &integral;
        let mut worst: f64 = 0.0;
        for &u in points {
            check_domain(u, 0.0)?;
            let phi = self.family.phi(u);
            worst = worst.max((phi.dot(&right) - 1.0).abs());
            worst = worst.max((phi.dot(&left) - 1.0).abs());
        }
        Ok(worst)
    }

    /// Scans the density for negative values.
    ///
    /// Piecewise-constant families are evaluated once per cell (exact). Smooth
    /// families are scanned on a `resolution × resolution` grid including the
    /// boundary, then optionally refined by Nelder–Mead from the lowest grid
    /// points.
    pub fn validate(&self, resolution: usize, refine: bool) -> Result<ValidationReport> {
        if resolution < 2 {
            return invalid_arg("validation resolution must be at least 2");
        }
        if self.family.is_piecewise_constant() {
            let mut cuts = vec![0.0];
            cuts.extend_from_slice(self.family.breakpoints());
            cuts.push(1.0);
            let mids: Vec<f64> = cuts.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            let (min_value, argmin, _) = self.grid_minima(&mids, 1);
            let verdict = if min_value < -NONNEGATIVITY_TOLERANCE { Verdict::Invalid } else { Verdict::Valid };
            return Ok(ValidationReport {
                min_value,
                argmin,
                grid_resolution: mids.len(),
                refined: false,
                verdict,
            });
        }

        let step = 1.0 / (resolution - 1) as f64;
        let points: Vec<f64> = (0..resolution).map(|k| k as f64 * step).collect();
        let (mut min_value, mut argmin, starts) = self.grid_minima(&points, if refine { 4 } else { 1 });
        if refine {
            for start in starts {
                let (at, value) =
                    minimize_in_unit_square(|u, v| self.density_at(u, v), start, step, 400);
                if value < min_value {
                    min_value = value;
                    argmin = at;
                }
            }
        }
        let verdict = if min_value < -NONNEGATIVITY_TOLERANCE {
            Verdict::Invalid
        } else if refine || resolution >= DEFAULT_RESOLUTION {
            Verdict::Valid
        } else {
            Verdict::Inconclusive
        };
        Ok(ValidationReport { min_value, argmin, grid_resolution: resolution, refined: refine, verdict })
    }

    /// Density on the tensor grid `points × points`; returns the minimum, its
    /// location and the `keep` lowest grid points.
    fn grid_minima(&self, points: &[f64], keep: usize) -> (f64, (f64, f64), Vec<(f64, f64)>) {
        let values = self.batched_density_grid(points, points);
        let n = points.len();
        let mut order: Vec<usize> = (0..n * n).collect();
        order.sort_by(|a, b| values[(a / n, a % n)].total_cmp(&values[(b / n, b % n)]));
        let best = order[0];
        let min_value = values[(best / n, best % n)];
        let starts = order.iter().take(keep).map(|k| (points[k / n], points[k % n])).collect();
        (min_value, (points[best / n], points[best % n]), starts)
    }

    /// Density values `c(us[i], vs[j])` as a matrix, bit-identical to
    /// [`density`](Self::density) at each point.
    pub fn density_grid(&self, us: &[f64], vs: &[f64]) -> DMatrix<f64> {
        let p = self.size();
        let eval = |pts: &[f64]| -> Vec<Vec<f64>> {
            pts.iter()
                .map(|t| {
                    let mut buf = vec![0.0; p];
                    self.family.eval_into(*t, &mut buf);
                    buf
                })
                .collect()
        };
        let (pu, pv) = (eval(us), eval(vs));
        DMatrix::from_fn(us.len(), vs.len(), |i, j| bilinear(&pu[i], &self.matrix, &pv[j]))
    }

    /// Same values up to rounding, through two matrix products.
    fn batched_density_grid(&self, us: &[f64], vs: &[f64]) -> DMatrix<f64> {
        let phi_u = self.basis_matrix(us);
        let phi_v = self.basis_matrix(vs);
        &phi_u * &self.matrix * phi_v.transpose()
    }

    /// Distribution function values `C(us[i], vs[j])`.
    pub fn cdf_grid(&self, us: &[f64], vs: &[f64]) -> DMatrix<f64> {
        let p = self.size();
        let build = |pts: &[f64]| {
            let mut m = DMatrix::zeros(pts.len(), p);
            let mut buf = vec![0.0; p];
            for (i, t) in pts.iter().enumerate() {
                self.family.antiderivative_into(*t, &mut buf);
                for k in 0..p {
                    m[(i, k)] = buf[k];
                }
            }
            m
        };
        &build(us) * &self.matrix * build(vs).transpose()
    }

    fn basis_matrix(&self, pts: &[f64]) -> DMatrix<f64> {
        let p = self.size();
        let mut m = DMatrix::zeros(pts.len(), p);
        let mut buf = vec![0.0; p];
        for (i, t) in pts.iter().enumerate() {
            self.family.eval_into(*t, &mut buf);
            for k in 0..p {
                m[(i, k)] = buf[k];
            }
        }
        m
    }

    fn same_family(&self, other: &CopulaModel) -> Result<()> {
        if self.family.descriptor() != other.family.descriptor() {
            return invalid_arg(format!(
                "family mismatch: {} vs {}",
                self.family.label(),
                other.family.label()
            ));
        }
        Ok(())
    }

    /// Markov product `c_A ⋆ c_B`, whose matrix is `A·B`.
    pub fn star(&self, other: &CopulaModel) -> Result<CopulaModel> {
        self.same_family(other)?;
        CopulaModel::new(self.family.clone(), &self.matrix * &other.matrix)
    }

    /// Cesàro average of the nested truncations of this model.
    ///
    /// With `q` nesting levels, entry `(i,j)` is scaled by
    /// `(q + 1 − max(ℓᵢ, ℓⱼ)) / q`, where `ℓ` are the family's nesting levels.
    /// For the trigonometric family a level is a whole harmonic, so a diagonal
    /// model turns into the Fejér-kernel copula.
    pub fn cesaro_aggregate(&self) -> Result<CopulaModel> {
        let levels = self.family.nesting_levels();
        let q = *levels.iter().max().unwrap_or(&1) as f64;
        let p = self.size();
        let b = DMatrix::from_fn(p, p, |i, j| {
            let l = levels[i].max(levels[j]) as f64;
            (q + 1.0 - l) * self.matrix[(i, j)] / q
        });
        CopulaModel::new(self.family.clone(), b)
    }
}

/// Convex combination `Σ wᵢ Aᵢ` of models over a common family.
pub fn mix(models: &[CopulaModel], weights: &[f64]) -> Result<CopulaModel> {
    let Some(first) = models.first() else {
        return invalid_arg("mix needs at least one model");
    };
    if models.len() != weights.len() {
        return invalid_arg(format!("{} models but {} weights", models.len(), weights.len()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return invalid_arg("mixing weights must be nonnegative");
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return invalid_arg(format!("mixing weights sum to {total}, expected 1"));
    }
    let mut acc = DMatrix::zeros(first.size(), first.size());
    for (m, w) in models.iter().zip(weights) {
        first.same_family(m)?;
        acc += &m.matrix * *w;
    }
    CopulaModel::new(first.family.clone(), acc)
}

impl BivariateCopula for CopulaModel {
    fn density_at(&self, u: f64, v: f64) -> f64 {
        let p = self.size();
        let mut pu = vec![0.0; p];
        let mut pv = vec![0.0; p];
        self.family.eval_into(u, &mut pu);
        self.family.eval_into(v, &mut pv);
        bilinear(&pu, &self.matrix, &pv)
    }

    fn cdf_at(&self, u: f64, v: f64) -> f64 {
        let p = self.size();
        let mut pu = vec![0.0; p];
        let mut pv = vec![0.0; p];
        self.family.antiderivative_into(u, &mut pu);
        self.family.antiderivative_into(v, &mut pv);
        bilinear(&pu, &self.matrix, &pv)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.family.breakpoints().to_vec()
    }
}

/// `xᵀ A y`.
pub(crate) fn bilinear(x: &[f64], a: &DMatrix<f64>, y: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        let row: f64 = a.row(i).iter().zip(y).map(|(aij, yj)| aij * yj).sum();
        total += xi * row;
    }
    total
}

pub(crate) fn check_domain(u: f64, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return invalid_arg(format!("({u}, {v}) is outside [0,1]²"));
    }
    Ok(())
}
