//! Closed-form copulas used as projection targets and as test oracles.

use std::fmt;
use std::str::FromStr;

use crate::copula::BivariateCopula;
use crate::error::{invalid_arg, CopulaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    Independence,
    Fgm,
    Clayton,
    Frank,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceCopula {
    kind: ReferenceKind,
    parameter: f64,
}

/// Builds a reference copula, checking the parameter range: FGM `|θ| ≤ 1`,
/// Clayton `θ > 0`, Frank `θ ≠ 0`. The independence parameter is ignored.
pub fn make_reference(kind: ReferenceKind, parameter: f64) -> Result<ReferenceCopula> {
    if !parameter.is_finite() {
        return invalid_arg("copula parameter must be finite");
    }
    let ok = match kind {
        ReferenceKind::Independence => true,
        ReferenceKind::Fgm => parameter.abs() <= 1.0,
        ReferenceKind::Clayton => parameter > 0.0,
        ReferenceKind::Frank => parameter != 0.0,
    };
    if !ok {
        return invalid_arg(format!("parameter {parameter} out of range for {kind:?}"));
    }
    let parameter = if kind == ReferenceKind::Independence { 0.0 } else { parameter };
    Ok(ReferenceCopula { kind, parameter })
}

impl ReferenceCopula {
    pub fn kind(&self) -> ReferenceKind {
        self.kind
    }

    pub fn parameter(&self) -> f64 {
        self.parameter
    }
}

impl BivariateCopula for ReferenceCopula {
    fn density_at(&self, u: f64, v: f64) -> f64 {
        let th = self.parameter;
        match self.kind {
            ReferenceKind::Independence => 1.0,
            ReferenceKind::Fgm => 1.0 + th * (1.0 - 2.0 * u) * (1.0 - 2.0 * v),
            ReferenceKind::Clayton => {
                // (1+θ)(uv)^θ / (a + b − ab)^{2+1/θ} with a = u^θ, b = v^θ
                if u == 0.0 && v == 0.0 {
                    return f64::INFINITY;
                }
                let (a, b) = (u.powf(th), v.powf(th));
                (1.0 + th) * (u * v).powf(th) / (a + b - a * b).powf(2.0 + 1.0 / th)
            }
            ReferenceKind::Frank => {
                let a = -(-th).exp_m1();
                let au = -(-th * u).exp_m1();
                let av = -(-th * v).exp_m1();
                let den = a - au * av;
                th * a * (-th * (u + v)).exp() / (den * den)
            }
        }
    }

    fn cdf_at(&self, u: f64, v: f64) -> f64 {
        let th = self.parameter;
        match self.kind {
            ReferenceKind::Independence => u * v,
            ReferenceKind::Fgm => u * v + th * u * (1.0 - u) * v * (1.0 - v),
            ReferenceKind::Clayton => {
                if u == 0.0 || v == 0.0 {
                    return 0.0;
                }
                let (a, b) = (u.powf(th), v.powf(th));
                u * v / (a + b - a * b).powf(1.0 / th)
            }
            ReferenceKind::Frank => {
                let a = -(-th).exp_m1();
                let au = -(-th * u).exp_m1();
                let av = -(-th * v).exp_m1();
                -(-au * av / a).ln_1p() / th
            }
        }
    }

    fn singular_at_origin(&self) -> bool {
        self.kind == ReferenceKind::Clayton
    }
}

impl fmt::Display for ReferenceCopula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ReferenceKind::Independence => write!(f, "independence"),
            ReferenceKind::Fgm => write!(f, "fgm:{}", self.parameter),
            ReferenceKind::Clayton => write!(f, "clayton:{}", self.parameter),
            ReferenceKind::Frank => write!(f, "frank:{}", self.parameter),
        }
    }
}

/// Parses `independence`, `fgm:<θ>`, `clayton:<θ>` or `frank:<θ>`.
impl FromStr for ReferenceCopula {
    type Err = CopulaError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let kind = match name {
            "independence" | "indep" => return make_reference(ReferenceKind::Independence, 0.0),
            "fgm" => ReferenceKind::Fgm,
            "clayton" => ReferenceKind::Clayton,
            "frank" => ReferenceKind::Frank,
            other => return invalid_arg(format!("unknown reference copula '{other}'")),
        };
        let arg = arg.ok_or_else(|| CopulaError::InvalidArgument(format!("'{name}' needs ':<parameter>'")))?;
        let theta: f64 = arg
            .parse()
            .map_err(|_| CopulaError::InvalidArgument(format!("'{arg}' is not a number")))?;
        make_reference(kind, theta)
    }
}
