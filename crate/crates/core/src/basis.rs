//! Orthonormal function families `φ = (φ₁, …, φₚ)` with `φ₁ ≡ 1`.
//!
//! A family knows how to evaluate `φ(t)`, its antiderivative `Ψ(t) = ∫₀ᵗ φ`,
//! and caches the structural moments `μ = ∫ x φ(x) dx` and
//! `Θ = ∫ Ψ(u) φ(u)ᵀ du` that the dependence measures are built from.
//!
//! Non-orthonormal generating families (`ψ` with `ψ₁ ≡ 1` and `∫ψ = e₁`) are
//! represented by [`RawFamily`] and turned into an orthonormal family with
//! [`orthonormalize`], which applies `Γ^{-1/2}` where `Γ` is the Gram matrix.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, CopulaError, Result};
use crate::numerics::{
    sym_condition_number, sym_inv_sqrt, sym_principal_sqrt, QuadratureRule, DEFAULT_ORDER,
};
use crate::partition::{self, PartitionKind};

/// Tag of a family descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Trig,
    Haar,
    Fgm,
    CubicSection,
    IteratedFgm,
    Bernstein,
    Checkerboard,
}

/// Serialized form of a family: `{kind, size, parameters}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyDescriptor {
    pub kind: FamilyKind,
    pub size: usize,
    #[serde(default)]
    pub parameters: BTreeMap<String, u64>,
}

impl FamilyDescriptor {
    fn new(kind: FamilyKind, size: usize, params: &[(&str, u64)]) -> Self {
        Self {
            kind,
            size,
            parameters: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn param(&self, name: &str) -> Result<u64> {
        self.parameters.get(name).copied().ok_or_else(|| {
            CopulaError::InvalidFamily(format!("family.parameters.{name} is missing"))
        })
    }
}

impl fmt::Display for FamilyDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FamilyKind::Trig => write!(f, "trig:{}", self.parameters.get("harmonics").unwrap_or(&0)),
            FamilyKind::Haar => write!(f, "haar:{}", self.size),
            FamilyKind::Fgm => write!(f, "fgm"),
            FamilyKind::CubicSection => write!(f, "cubic"),
            FamilyKind::IteratedFgm => write!(f, "ifgm:{}", self.size - 1),
            FamilyKind::Bernstein => write!(f, "bernstein:{}", self.size),
            FamilyKind::Checkerboard => write!(f, "checkerboard:{}", self.size),
        }
    }
}

/// Parses the colon form used on the command line: `trig:2` (harmonics),
/// `haar:8` (size, a power of two), `fgm`, `cubic`, `ifgm:2` (terms),
/// `bernstein:16`, `checkerboard:8`.
impl FromStr for FamilyDescriptor {
    type Err = CopulaError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let number = |what: &str| -> Result<u64> {
            let a = arg.ok_or_else(|| {
                CopulaError::InvalidArgument(format!("family '{name}' needs ':<{what}>'"))
            })?;
            a.parse::<u64>().map_err(|_| {
                CopulaError::InvalidArgument(format!("family '{name}': '{a}' is not a {what}"))
            })
        };
        let d = match name {
            "trig" => {
                let h = number("harmonics")?;
                FamilyDescriptor::new(FamilyKind::Trig, 2 * h as usize + 1, &[("harmonics", h)])
            }
            "haar" => {
                let p = number("size")?;
                if p == 0 || !p.is_power_of_two() {
                    return invalid_arg(format!("haar size {p} is not a power of two"));
                }
                FamilyDescriptor::new(
                    FamilyKind::Haar,
                    p as usize,
                    &[("levels", p.trailing_zeros() as u64)],
                )
            }
            "fgm" => FamilyDescriptor::new(FamilyKind::Fgm, 2, &[]),
            "cubic" | "cubic_section" => FamilyDescriptor::new(FamilyKind::CubicSection, 3, &[]),
            "ifgm" | "iterated_fgm" => {
                let m = number("terms")?;
                FamilyDescriptor::new(FamilyKind::IteratedFgm, m as usize + 1, &[("terms", m)])
            }
            "bernstein" => {
                let p = number("size")?;
                FamilyDescriptor::new(FamilyKind::Bernstein, p as usize, &[("p", p)])
            }
            "checkerboard" => {
                let p = number("size")?;
                FamilyDescriptor::new(FamilyKind::Checkerboard, p as usize, &[("p", p)])
            }
            other => return invalid_arg(format!("unknown family '{other}'")),
        };
        Ok(d)
    }
}

/// Polynomial generators handled through [`RawFamily`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolynomialKind {
    /// `ψ₂ = 1 − 4t + 3t²`, `ψ₃ = 2t − 3t²`.
    CubicSection,
    /// `ψ_{j+1} = d/dt [t^α (1−t)^β]` with `α = ⌊j/2⌋ + 1`, `β = ⌊(j+1)/2⌋`.
    IteratedFgm { terms: usize },
}

#[derive(Debug, Clone)]
enum RawSource {
    /// Ascending monomial coefficients of each `ψᵢ` and of its antiderivative.
    Polynomials {
        kind: PolynomialKind,
        coeffs: Vec<Vec<f64>>,
        antiderivs: Vec<Vec<f64>>,
    },
    /// `ψ = H ξ` for a partition of unity `ξ`.
    Partition { kind: PartitionKind, size: usize },
}

/// A generating family `ψ` with `ψ₁ ≡ 1` and `∫ψ = e₁`, together with its Gram
/// matrix `Γ = ∫ψψᵀ` (always computed here by quadrature).
#[derive(Debug, Clone)]
pub struct RawFamily {
    source: RawSource,
    gram: DMatrix<f64>,
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * t + a)
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl RawFamily {
    /// Cubic-section generators (`p = 3`).
    pub fn cubic_section() -> Result<Self> {
        let coeffs = vec![vec![1.0], vec![1.0, -4.0, 3.0], vec![0.0, 2.0, -3.0]];
        Self::from_polynomials(PolynomialKind::CubicSection, coeffs)
    }

    /// Iterated FGM generators with `terms` product terms (`p = terms + 1`).
    pub fn iterated_fgm(terms: usize) -> Result<Self> {
        if terms == 0 {
            return invalid_arg("iterated FGM family needs at least one term");
        }
        let mut coeffs = vec![vec![1.0]];
        for j in 1..=terms as u64 {
            let alpha = j / 2 + 1;
            let beta = j.div_ceil(2);
            // g(t) = Σ_k C(β,k) (−1)^k t^{α+k}; store g'.
            let degree = (alpha + beta) as usize;
            let mut g = vec![0.0; degree + 1];
            for k in 0..=beta {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                g[(alpha + k) as usize] += sign * binomial(beta, k);
            }
            let deriv: Vec<f64> = (1..g.len()).map(|i| i as f64 * g[i]).collect();
            coeffs.push(deriv);
        }
        Self::from_polynomials(PolynomialKind::IteratedFgm { terms }, coeffs)
    }

    fn from_polynomials(kind: PolynomialKind, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let antiderivs = coeffs
            .iter()
            .map(|c| {
                let mut a = vec![0.0];
                a.extend(c.iter().enumerate().map(|(i, ci)| ci / (i as f64 + 1.0)));
                a
            })
            .collect();
        let source = RawSource::Polynomials { kind, coeffs, antiderivs };
        Self::with_source(source)
    }

    pub(crate) fn from_partition(kind: PartitionKind, size: usize) -> Result<Self> {
        Self::with_source(RawSource::Partition { kind, size })
    }

    fn with_source(source: RawSource) -> Result<Self> {
        let mut raw = Self { source, gram: DMatrix::zeros(0, 0) };
        let rule = raw.quadrature_rule(DEFAULT_ORDER)?;
        raw.gram = gram_by_quadrature(raw.size(), &rule, |t, out| raw.eval_into(t, out));
        Ok(raw)
    }

    pub fn size(&self) -> usize {
        match &self.source {
            RawSource::Polynomials { coeffs, .. } => coeffs.len(),
            RawSource::Partition { size, .. } => *size,
        }
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn descriptor(&self) -> FamilyDescriptor {
        match &self.source {
            RawSource::Polynomials { kind: PolynomialKind::CubicSection, .. } => {
                FamilyDescriptor::new(FamilyKind::CubicSection, 3, &[])
            }
            RawSource::Polynomials { kind: PolynomialKind::IteratedFgm { terms }, .. } => {
                FamilyDescriptor::new(FamilyKind::IteratedFgm, terms + 1, &[("terms", *terms as u64)])
            }
            RawSource::Partition { kind, size } => {
                let k = match kind {
                    PartitionKind::Bernstein => FamilyKind::Bernstein,
                    PartitionKind::Checkerboard => FamilyKind::Checkerboard,
                };
                FamilyDescriptor::new(k, *size, &[("p", *size as u64)])
            }
        }
    }

    /// `ψ(t)`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match &self.source {
            RawSource::Polynomials { coeffs, .. } => {
                for (o, c) in out.iter_mut().zip(coeffs) {
                    *o = horner(c, t);
                }
            }
            RawSource::Partition { kind, size } => {
                partition::xi_into(*kind, *size, t, out);
                apply_h(out, 1.0);
            }
        }
    }

    /// `∫₀ᵗ ψ`.
    pub fn antiderivative_into(&self, t: f64, out: &mut [f64]) {
        match &self.source {
            RawSource::Polynomials { antiderivs, .. } => {
                for (o, c) in out.iter_mut().zip(antiderivs) {
                    *o = horner(c, t);
                }
            }
            RawSource::Partition { kind, size } => {
                partition::xi_integral_into(*kind, *size, t, out);
                apply_h(out, t);
            }
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.source {
            RawSource::Partition { kind: PartitionKind::Checkerboard, size } => {
                (1..*size).map(|i| i as f64 / *size as f64).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn is_piecewise_constant(&self) -> bool {
        matches!(self.source, RawSource::Partition { kind: PartitionKind::Checkerboard, .. })
    }

    /// Composite rule that integrates products of two members exactly (up to
    /// rounding): panels follow the breakpoints, and polynomial orders are
    /// raised to the family degree when needed.
    pub fn quadrature_rule(&self, order: usize) -> Result<QuadratureRule> {
        QuadratureRule::composite(&self.breakpoints(), self.panel_order(order))
    }

    fn panel_order(&self, order: usize) -> usize {
        match &self.source {
            RawSource::Polynomials { coeffs, .. } => {
                let degree = coeffs.iter().map(Vec::len).max().unwrap_or(1);
                order.max(degree + 1)
            }
            RawSource::Partition { kind: PartitionKind::Bernstein, size } => order.max(2 * size),
            RawSource::Partition { .. } => order,
        }
    }

    /// `∫₀¹ ψ` by quadrature.
    pub fn integral(&self) -> Result<DVector<f64>> {
        let rule = self.quadrature_rule(DEFAULT_ORDER)?;
        let p = self.size();
        let mut buf = vec![0.0; p];
        let mut acc = DVector::zeros(p);
        for (x, w) in rule.iter() {
            self.eval_into(x, &mut buf);
            for i in 0..p {
                acc[i] += w * buf[i];
            }
        }
        Ok(acc)
    }
}

/// In place `x ← H x` with `H = I + e₁sᵀ − s e₁ᵀ`: the first entry becomes the
/// total (pinned to `first`, its exact value), the others `xᵢ − x₁`.
fn apply_h(x: &mut [f64], first: f64) {
    let x1 = x[0];
    for v in x.iter_mut().skip(1) {
        *v -= x1;
    }
    x[0] = first;
}

fn gram_by_quadrature<F: Fn(f64, &mut [f64])>(p: usize, rule: &QuadratureRule, eval: F) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(p, p);
    let mut buf = vec![0.0; p];
    for (x, w) in rule.iter() {
        eval(x, &mut buf);
        for i in 0..p {
            let wi = w * buf[i];
            for j in 0..p {
                g[(i, j)] += wi * buf[j];
            }
        }
    }
    (&g + g.transpose()) * 0.5
}

#[derive(Debug, Clone)]
enum Generator {
    Trig { harmonics: usize },
    Haar { levels: u32 },
    Fgm,
    Orthonormalized {
        raw: Box<RawFamily>,
        transform: DMatrix<f64>,
        gram_sqrt: DMatrix<f64>,
    },
}

/// An orthonormal family `φ` on `[0,1]` with `φ₁ ≡ 1`.
#[derive(Debug, Clone)]
pub struct OrthonormalFamily {
    generator: Generator,
    size: usize,
    mu: DVector<f64>,
    theta: DMatrix<f64>,
    breaks: Vec<f64>,
    label: String,
}

impl PartialEq for OrthonormalFamily {
    fn eq(&self, other: &Self) -> bool {
        self.descriptor() == other.descriptor()
    }
}

/// Trigonometric family of size `2·harmonics + 1`: `1`, then `√2 sin(2πjx)`,
/// `√2 cos(2πjx)` for `j = 1..harmonics`.
pub fn make_trig_family(harmonics: usize) -> Result<OrthonormalFamily> {
    if harmonics == 0 {
        return invalid_arg("trigonometric family needs at least one harmonic");
    }
    OrthonormalFamily::build(Generator::Trig { harmonics }, 2 * harmonics + 1, Vec::new(), format!("trig:{harmonics}"))
}

/// Haar family of size `2^levels`: the constant plus every wavelet down to
/// level `levels − 1`.
pub fn make_haar_family(levels: u32) -> Result<OrthonormalFamily> {
    if levels > 24 {
        return invalid_arg(format!("haar levels {levels} too large"));
    }
    let p = 1usize << levels;
    let breaks = (1..p).map(|i| i as f64 / p as f64).collect();
    OrthonormalFamily::build(Generator::Haar { levels }, p, breaks, format!("haar:{p}"))
}

/// `(1, √3(1 − 2x))`.
pub fn make_fgm_family() -> Result<OrthonormalFamily> {
    OrthonormalFamily::build(Generator::Fgm, 2, Vec::new(), "fgm".to_string())
}

/// Orthonormalizes a generating family with `Γ^{-1/2}`. Returns the family and
/// the transform, so that `φ = Γ^{-1/2} ψ`.
pub fn orthonormalize(raw: RawFamily) -> Result<(OrthonormalFamily, DMatrix<f64>)> {
    let p = raw.size();
    let mut probe = vec![0.0; p];
    for t in [0.0, 0.37, 1.0] {
        raw.eval_into(t, &mut probe);
        if (probe[0] - 1.0).abs() > 1e-12 {
            return Err(CopulaError::InvalidFamily(format!("ψ₁({t}) = {} ≠ 1", probe[0])));
        }
    }
    let integral = raw.integral()?;
    for (i, v) in integral.iter().enumerate() {
        let want = if i == 0 { 1.0 } else { 0.0 };
        if (v - want).abs() > 1e-10 {
            return Err(CopulaError::InvalidFamily(format!(
                "∫ψ_{} = {v:e}, expected {want}",
                i + 1
            )));
        }
    }
    let gram = raw.gram().clone();
    let cond = sym_condition_number(&gram)?;
    if !(cond < 1e12) {
        return Err(CopulaError::SingularMatrix(format!(
            "Gram matrix condition number {cond:e} exceeds 1e12"
        )));
    }
    let transform = sym_inv_sqrt(&gram)?;
    let gram_sqrt = sym_principal_sqrt(&gram)?;
    let breaks = raw.breakpoints();
    let label = raw.descriptor().to_string();
    let family = OrthonormalFamily::build(
        Generator::Orthonormalized {
            raw: Box::new(raw),
            transform: transform.clone(),
            gram_sqrt,
        },
        p,
        breaks,
        label,
    )?;
    Ok((family, transform))
}

impl OrthonormalFamily {
    fn build(generator: Generator, size: usize, breaks: Vec<f64>, label: String) -> Result<Self> {
        let mut family = Self {
            generator,
            size,
            mu: DVector::zeros(size),
            theta: DMatrix::zeros(size, size),
            breaks,
            label,
        };
        let rule = family.quadrature_rule(DEFAULT_ORDER)?;
        let mut phi = vec![0.0; size];
        let mut psi = vec![0.0; size];
        let mut mu = DVector::zeros(size);
        let mut theta = DMatrix::zeros(size, size);
        for (x, w) in rule.iter() {
            family.eval_into(x, &mut phi);
            family.antiderivative_into(x, &mut psi);
            for i in 0..size {
                mu[i] += w * x * phi[i];
                let wpsi = w * psi[i];
                for j in 0..size {
                    theta[(i, j)] += wpsi * phi[j];
                }
            }
        }
        mu[0] = 0.5;
        family.mu = mu;
        family.theta = theta;
        Ok(family)
    }

    /// Rebuilds a family from its serialized descriptor.
    pub fn from_descriptor(d: &FamilyDescriptor) -> Result<Self> {
        let family = match d.kind {
            FamilyKind::Trig => make_trig_family(d.param("harmonics")? as usize)?,
            FamilyKind::Haar => make_haar_family(d.param("levels")? as u32)?,
            FamilyKind::Fgm => make_fgm_family()?,
            FamilyKind::CubicSection => orthonormalize(RawFamily::cubic_section()?)?.0,
            FamilyKind::IteratedFgm => orthonormalize(RawFamily::iterated_fgm(d.param("terms")? as usize)?)?.0,
            FamilyKind::Bernstein => partition::make_partition(PartitionKind::Bernstein, d.param("p")? as usize)?
                .orthonormal_family()?,
            FamilyKind::Checkerboard => {
                partition::make_partition(PartitionKind::Checkerboard, d.param("p")? as usize)?
                    .orthonormal_family()?
            }
        };
        if family.size != d.size {
            return Err(CopulaError::InvalidFamily(format!(
                "family.size is {} but '{}' has {} functions",
                d.size, family.label, family.size
            )));
        }
        Ok(family)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn descriptor(&self) -> FamilyDescriptor {
        match &self.generator {
            Generator::Trig { harmonics } => {
                FamilyDescriptor::new(FamilyKind::Trig, self.size, &[("harmonics", *harmonics as u64)])
            }
            Generator::Haar { levels } => {
                FamilyDescriptor::new(FamilyKind::Haar, self.size, &[("levels", *levels as u64)])
            }
            Generator::Fgm => FamilyDescriptor::new(FamilyKind::Fgm, 2, &[]),
            Generator::Orthonormalized { raw, .. } => raw.descriptor(),
        }
    }

    /// `μ = ∫ x φ(x) dx`.
    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// `Θ = ∫ Ψ(u) φ(u)ᵀ du`.
    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    /// Interior points where members of the family may jump.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    /// True when every member is constant on the cells delimited by
    /// [`breakpoints`](Self::breakpoints).
    pub fn is_piecewise_constant(&self) -> bool {
        match &self.generator {
            Generator::Haar { .. } => true,
            Generator::Orthonormalized { raw, .. } => raw.is_piecewise_constant(),
            _ => false,
        }
    }

    /// Composite Gauss rule aligned with the family's cells.
    pub fn quadrature_rule(&self, order: usize) -> Result<QuadratureRule> {
        QuadratureRule::composite(&self.panel_breaks(), self.panel_order(order))
    }

    /// Panel boundaries used by [`quadrature_rule`](Self::quadrature_rule):
    /// the jump points, plus extra panels for high trigonometric frequencies.
    pub fn panel_breaks(&self) -> Vec<f64> {
        match &self.generator {
            Generator::Trig { harmonics } => {
                let panels = harmonics.div_ceil(8);
                (1..panels).map(|i| i as f64 / panels as f64).collect()
            }
            _ => self.breaks.clone(),
        }
    }

    /// Nodes per panel needed for products of two members to be integrated
    /// exactly, or `order` when that is enough.
    pub fn panel_order(&self, order: usize) -> usize {
        match &self.generator {
            Generator::Orthonormalized { raw, .. } => raw.panel_order(order),
            _ => order,
        }
    }

    /// Nested truncation level of each index (1-based). Trigonometric sine and
    /// cosine of the same harmonic share a level; other families nest one
    /// function at a time.
    pub fn nesting_levels(&self) -> Vec<usize> {
        match &self.generator {
            Generator::Trig { .. } => (0..self.size).map(|i| i.div_ceil(2) + 1).collect(),
            _ => (1..=self.size).collect(),
        }
    }

    /// Writes `φ(t)` into `out` (length `size`).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.size);
        match &self.generator {
            Generator::Trig { harmonics } => {
                out[0] = 1.0;
                for j in 1..=*harmonics {
                    let a = 2.0 * PI * j as f64 * t;
                    out[2 * j - 1] = SQRT_2 * a.sin();
                    out[2 * j] = SQRT_2 * a.cos();
                }
            }
            Generator::Haar { levels } => {
                out[0] = 1.0;
                for l in 0..*levels {
                    let cells = 1usize << l;
                    let scaled = t * cells as f64;
                    let k = (scaled.floor() as usize).min(cells - 1);
                    let amp = (cells as f64).sqrt();
                    for o in &mut out[cells..2 * cells] {
                        *o = 0.0;
                    }
                    out[cells + k] = if scaled - (k as f64) < 0.5 { amp } else { -amp };
                }
            }
            Generator::Fgm => {
                out[0] = 1.0;
                out[1] = 3f64.sqrt() * (1.0 - 2.0 * t);
            }
            Generator::Orthonormalized { raw, transform, .. } => {
                let mut psi = vec![0.0; self.size];
                raw.eval_into(t, &mut psi);
                mat_vec_into(transform, &psi, out);
                out[0] = 1.0;
            }
        }
    }

    /// Writes `Ψ(t) = ∫₀ᵗ φ` into `out`.
    pub fn antiderivative_into(&self, t: f64, out: &mut [f64]) {
        match &self.generator {
            Generator::Trig { harmonics } => {
                out[0] = t;
                for j in 1..=*harmonics {
                    let w = 2.0 * PI * j as f64;
                    let a = w * t;
                    // 1 − cos(a) = 2 sin²(a/2)
                    let half = (0.5 * a).sin();
                    out[2 * j - 1] = SQRT_2 * 2.0 * half * half / w;
                    out[2 * j] = SQRT_2 * a.sin() / w;
                }
            }
            Generator::Haar { levels } => {
                out[0] = t;
                for l in 0..*levels {
                    let cells = 1usize << l;
                    let width = 1.0 / cells as f64;
                    let h = 0.5 * width;
                    let amp = (cells as f64).sqrt();
                    for k in 0..cells {
                        let a = k as f64 * width;
                        let up = (t - a).clamp(0.0, h);
                        let down = (t - a - h).clamp(0.0, h);
                        out[cells + k] = amp * (up - down);
                    }
                }
            }
            Generator::Fgm => {
                out[0] = t;
                out[1] = 3f64.sqrt() * t * (1.0 - t);
            }
            Generator::Orthonormalized { raw, transform, .. } => {
                let mut psi = vec![0.0; self.size];
                raw.antiderivative_into(t, &mut psi);
                mat_vec_into(transform, &psi, out);
                out[0] = t;
            }
        }
    }

    /// Writes `∫ₜ¹ φ = e₁ − Ψ(t)`.
    pub fn tail_integral_into(&self, t: f64, out: &mut [f64]) {
        self.antiderivative_into(t, out);
        for o in out.iter_mut().skip(1) {
            *o = -*o;
        }
        out[0] = 1.0 - t;
    }

    pub fn phi(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.size);
        self.eval_into(t, out.as_mut_slice());
        out
    }

    pub fn psi(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.size);
        self.antiderivative_into(t, out.as_mut_slice());
        out
    }

    /// `q(u, v) = φ(u)ᵀ φ(v)`.
    pub fn kernel(&self, u: f64, v: f64) -> f64 {
        self.phi(u).dot(&self.phi(v))
    }

    /// `∫ φ φᵀ` recomputed by quadrature; the identity for a sound family.
    pub fn gram(&self, order: usize) -> Result<DMatrix<f64>> {
        let rule = self.quadrature_rule(order)?;
        Ok(gram_by_quadrature(self.size, &rule, |t, out| self.eval_into(t, out)))
    }

    /// For a family produced by [`orthonormalize`]: maps a generator matrix
    /// `B` to `A = Γ^{1/2} B Γ^{1/2}`, so that `φᵀAφ = ψᵀBψ`.
    pub fn lift_raw_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.generator {
            Generator::Orthonormalized { gram_sqrt, .. } => {
                if b.shape() != gram_sqrt.shape() {
                    return invalid_arg(format!(
                        "matrix is {}x{}, family has {} functions",
                        b.nrows(),
                        b.ncols(),
                        self.size
                    ));
                }
                Ok(gram_sqrt * b * gram_sqrt)
            }
            _ => invalid_arg(format!("family {} has no generating family", self.label)),
        }
    }

    /// The orthonormalizing transform `Γ^{-1/2}`, if any.
    pub fn transform(&self) -> Option<&DMatrix<f64>> {
        match &self.generator {
            Generator::Orthonormalized { transform, .. } => Some(transform),
            _ => None,
        }
    }

    /// The generating family behind an orthonormalized family.
    pub fn raw(&self) -> Option<&RawFamily> {
        match &self.generator {
            Generator::Orthonormalized { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

fn mat_vec_into(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = m.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn check_structure(f: &OrthonormalFamily) {
        let p = f.size();
        let g = f.gram(DEFAULT_ORDER).unwrap();
        assert!((g - DMatrix::identity(p, p)).abs().max() < 1e-10, "{} gram", f.label());
        for t in [0.0, 0.1, 0.5, 0.93, 1.0] {
            assert_eq!(f.phi(t)[0], 1.0);
        }
        assert!(f.psi(0.0).abs().max() < 1e-12);
        let mut e1 = DVector::zeros(p);
        e1[0] = 1.0;
        assert!((f.psi(1.0) - &e1).abs().max() < 1e-12, "{} Ψ(1)", f.label());
        assert_close(f.mu()[0], 0.5, 1e-12);
        let sym = f.theta() + f.theta().transpose();
        assert!((sym - &e1 * e1.transpose()).abs().max() < 1e-10, "{} Θ", f.label());
    }

    #[test]
    fn trig_values_and_moments() {
        let f = make_trig_family(1).unwrap();
        let v = f.phi(0.25);
        assert_close(v[0], 1.0, 0.0);
        assert_close(v[1], SQRT_2, 1e-15);
        assert_close(v[2], 0.0, 1e-15);
        // ∫ x √2 sin(2πx) dx = −√2/(2π)
        assert_close(f.mu()[1], -SQRT_2 / (2.0 * PI), 1e-14);
        assert_close(f.mu()[2], 0.0, 1e-14);
        let f2 = make_trig_family(2).unwrap();
        assert!((f2.gram(64).unwrap() - DMatrix::identity(5, 5)).abs().max() < 1e-12);
        check_structure(&f2);
        assert!(matches!(make_trig_family(0), Err(CopulaError::InvalidArgument(_))));
    }

    #[test]
    fn haar_values() {
        let f = make_haar_family(1).unwrap();
        assert_eq!(f.size(), 2);
        assert_close(f.phi(0.25)[1], 1.0, 0.0);
        assert_close(f.phi(0.75)[1], -1.0, 0.0);
        let f3 = make_haar_family(3).unwrap();
        assert!((f3.gram(4).unwrap() - DMatrix::identity(8, 8)).abs().max() < 1e-12);
        check_structure(&f3);
        assert_eq!(make_haar_family(0).unwrap().size(), 1);
    }

    #[test]
    fn haar_kernel_is_cell_indicator() {
        let f = make_haar_family(2).unwrap();
        let mids = [0.125, 0.375, 0.625, 0.875];
        for (i, u) in mids.iter().enumerate() {
            for (j, v) in mids.iter().enumerate() {
                let want = if i == j { 4.0 } else { 0.0 };
                assert_close(f.kernel(*u, *v), want, 1e-14);
            }
        }
    }

    #[test]
    fn haar_moments_match_exact_piecewise_formula() {
        // Wavelet (l, k): amplitude 2^{l/2}, half width h = 2^{-l-1};
        // ∫ x φ = −amp·h², and Θ via exact integration of the linear pieces.
        let levels = 4;
        let f = make_haar_family(levels).unwrap();
        for l in 0..levels {
            let cells = 1usize << l;
            let amp = (cells as f64).sqrt();
            let h = 0.5 / cells as f64;
            for k in 0..cells {
                assert_close(f.mu()[cells + k], -amp * h * h, 1e-12);
            }
        }
        // Θ_ii for a wavelet: ∫Ψφ over its support = amp²(h²/2 − h²/2) = 0
        for i in 1..f.size() {
            assert_close(f.theta()[(i, i)], 0.0, 1e-12);
        }
        assert_close(f.theta()[(0, 0)], 0.5, 1e-12);
    }

    #[test]
    fn fgm_family() {
        let f = make_fgm_family().unwrap();
        assert_close(f.phi(0.0)[1], 3f64.sqrt(), 1e-15);
        assert_close(f.phi(0.5)[1], 0.0, 1e-15);
        assert_close(f.mu()[1], -1.0 / (2.0 * 3f64.sqrt()), 1e-14);
        check_structure(&f);
    }

    #[test]
    fn cubic_section_orthonormalizes() {
        let raw = RawFamily::cubic_section().unwrap();
        // Quadratic ψ₂ gives Γ₂₂ = ∫(1 − 4t + 3t²)² = 2/15.
        assert_close(raw.gram()[(1, 1)], 2.0 / 15.0, 1e-14);
        let (f, t) = orthonormalize(raw).unwrap();
        assert_eq!(t.nrows(), 3);
        check_structure(&f);
    }

    #[test]
    fn orthonormal_input_gives_identity_transform() {
        // One-term iterated FGM: ψ₂ = 1 − 2t, Γ = diag{1, 1/3}; rescaled it is
        // the FGM family.
        let raw = RawFamily::iterated_fgm(1).unwrap();
        let (f, t) = orthonormalize(raw).unwrap();
        assert_close(t[(1, 1)], 3f64.sqrt(), 1e-12);
        let fgm = make_fgm_family().unwrap();
        for x in [0.0, 0.2, 0.9] {
            assert!((f.phi(x) - fgm.phi(x)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn iterated_fgm_round_trip() {
        let raw = RawFamily::iterated_fgm(2).unwrap();
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.4, -0.3]));
        let mut psi_u = vec![0.0; 3];
        let mut psi_v = vec![0.0; 3];
        let mut direct = Vec::new();
        for i in 0..33 {
            for j in 0..33 {
                let (u, v) = (i as f64 / 32.0, j as f64 / 32.0);
                raw.eval_into(u, &mut psi_u);
                raw.eval_into(v, &mut psi_v);
                let pu = DVector::from_column_slice(&psi_u);
                let pv = DVector::from_column_slice(&psi_v);
                direct.push((u, v, (pu.transpose() * &b * pv)[0]));
            }
        }
        let (f, _) = orthonormalize(raw).unwrap();
        check_structure(&f);
        let a = f.lift_raw_matrix(&b).unwrap();
        for (u, v, want) in direct {
            let got = (f.phi(u).transpose() * &a * f.phi(v))[0];
            assert_close(got, want, 1e-10);
        }
    }

    #[test]
    fn descriptor_strings_round_trip() {
        for s in ["trig:2", "haar:8", "fgm", "cubic", "ifgm:2", "bernstein:5", "checkerboard:4"] {
            let d: FamilyDescriptor = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
            let f = OrthonormalFamily::from_descriptor(&d).unwrap();
            assert_eq!(f.descriptor(), d);
        }
        assert!("haar:6".parse::<FamilyDescriptor>().is_err());
        assert!("zebra:2".parse::<FamilyDescriptor>().is_err());
    }

    #[test]
    fn descriptor_size_mismatch_is_rejected() {
        let mut d: FamilyDescriptor = "trig:2".parse().unwrap();
        d.size = 4;
        assert!(matches!(OrthonormalFamily::from_descriptor(&d), Err(CopulaError::InvalidFamily(_))));
    }
}
