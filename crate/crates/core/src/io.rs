//! File formats: model JSON, sample CSV, grid CSV, estimation report JSON
//! and convergence CSV. Floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::basis::{FamilyDescriptor, OrthonormalFamily};
use crate::copula::{CopulaModel, ValidationReport, Verdict};
use crate::error::{invalid_arg, malformed, Result};
use crate::montecarlo::{EstimationResult, SampleSet};
use crate::projection::ConvergenceRow;

/// `{"family": "<descriptor>", "matrix": [[row], …], "validation": {…}}`;
/// the validation entry is omitted when the model has none.
pub fn model_to_json(model: &CopulaModel) -> String {
    let matrix = matrix_rows(model.matrix());
    let mut doc = json!({
        "family": model.family().descriptor().to_string(),
        "matrix": matrix,
    });
    if let Some(report) = model.validation() {
        doc["validation"] = serde_json::to_value(report).expect("report serializes");
    }
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Parses a square matrix given as a JSON array of rows.
pub fn matrix_from_value(value: &Value, field: &str) -> Result<DMatrix<f64>> {
    let rows = match value.as_array() {
        Some(rows) if !rows.is_empty() => rows,
        _ => return malformed(field, "expected a non-empty array of rows"),
    };
    let p = rows.len();
    let mut m = DMatrix::zeros(p, p);
    for (i, row) in rows.iter().enumerate() {
        let row = match row.as_array() {
            Some(r) => r,
            None => return malformed(format!("{field}[{i}]"), "expected an array of numbers"),
        };
        if row.len() != p {
            return malformed(format!("{field}[{i}]"), format!("has {} entries, expected {p}", row.len()));
        }
        for (j, x) in row.iter().enumerate() {
            match x.as_f64() {
                Some(x) => m[(i, j)] = x,
                None => return malformed(format!("{field}[{i}][{j}]"), "expected a number"),
            }
        }
    }
    Ok(m)
}

/// Parses a matrix written inline as JSON text.
pub fn matrix_from_json(text: &str) -> Result<DMatrix<f64>> {
    let value: Value = serde_json::from_str(text).or_else(|e| malformed("matrix", e.to_string()))?;
    matrix_from_value(&value, "matrix")
}

/// Reads a model document. A stored validation report is kept as is.
pub fn model_from_json(text: &str) -> Result<CopulaModel> {
    let doc: Value = serde_json::from_str(text).or_else(|e| malformed("<document>", e.to_string()))?;
    if !doc.is_object() {
        return malformed("<document>", "expected a JSON object");
    }
    let descriptor: FamilyDescriptor = match doc.get("family").and_then(Value::as_str) {
        Some(s) => s.parse().or_else(|e: crate::CopulaError| malformed("family", e.to_string()))?,
        None => return malformed("family", "missing or not a string"),
    };
    let matrix = match doc.get("matrix") {
        Some(v) => matrix_from_value(v, "matrix")?,
        None => return malformed("matrix", "missing"),
    };
    let family = OrthonormalFamily::from_descriptor(&descriptor).or_else(|e| malformed("family", e.to_string()))?;
    let model = CopulaModel::new(Arc::new(family), matrix).or_else(|e| malformed("matrix", e.to_string()))?;
    match doc.get("validation") {
        None | Some(Value::Null) => Ok(model),
        Some(v) => {
            let report: ValidationReport =
                serde_json::from_value(v.clone()).or_else(|e| malformed("validation", e.to_string()))?;
            Ok(model.with_validation(report))
        }
    }
}

/// `u,v` header and one pair per line.
pub fn samples_to_csv(samples: &SampleSet) -> String {
    let mut out = String::with_capacity(40 * samples.len() + 4);
    out.push_str("u,v\n");
    for (u, v) in &samples.pairs {
        let _ = writeln!(out, "{u},{v}");
    }
    out
}

/// Reads a `u,v` CSV. The header is required; blank lines are skipped.
pub fn samples_from_csv(text: &str, source_label: &str) -> Result<SampleSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim().replace(' ', "") == "u,v" => {}
        _ => return malformed("header", "expected first line 'u,v'"),
    }
    let mut pairs = Vec::new();
    for (k, line) in lines {
        let line_no = k + 1;
        let mut parts = line.split(',');
        let mut next = |name: &str| -> Result<f64> {
            match parts.next().map(|s| s.trim().parse::<f64>()) {
                Some(Ok(x)) => Ok(x),
                _ => malformed(format!("line {line_no}, column {name}"), format!("not a number: '{line}'")),
            }
        };
        let u = next("u")?;
        let v = next("v")?;
        if parts.next().is_some() {
            return malformed(format!("line {line_no}"), "expected exactly two columns");
        }
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return malformed(format!("line {line_no}"), format!("pair ({u}, {v}) outside [0,1]²"));
        }
        pairs.push((u, v));
    }
    SampleSet::new(pairs, 0, source_label)
}

/// Abscissae `k/(r−1)`, `k = 0..r`.
pub fn grid_points(resolution: usize) -> Result<Vec<f64>> {
    if resolution < 2 {
        return invalid_arg("grid resolution must be at least 2");
    }
    Ok((0..resolution).map(|k| k as f64 / (resolution - 1) as f64).collect())
}

/// `u,v,value` header and `r²` rows of the density, `u` varying slowest.
pub fn density_grid_csv(model: &CopulaModel, resolution: usize) -> Result<String> {
    let pts = grid_points(resolution)?;
    let grid = model.density_grid(&pts, &pts);
    let mut out = String::with_capacity(48 * resolution * resolution + 12);
    out.push_str("u,v,value\n");
    for (i, u) in pts.iter().enumerate() {
        for (j, v) in pts.iter().enumerate() {
            let _ = writeln!(out, "{u},{v},{}", grid[(i, j)]);
        }
    }
    Ok(out)
}

/// `{"matrix": …, "estimator": "a1"|"a2", "n": …, "family": …, "verdict": …}`.
pub fn estimation_report_json(result: &EstimationResult, verdict: Verdict) -> String {
    let doc = json!({
        "matrix": matrix_rows(&result.a_hat),
        "estimator": result.estimator.to_string(),
        "n": result.n,
        "family": result.family_label,
        "verdict": verdict.to_string(),
    });
    serde_json::to_string_pretty(&doc).expect("report serializes")
}

/// `p,l2_error,rho_model,rho_target,rho_gap` header and one row per size.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("p,l2_error,rho_model,rho_target,rho_gap\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.p, r.l2_error, r.rho_model, r.rho_target, r.rho_gap);
    }
    out
}
