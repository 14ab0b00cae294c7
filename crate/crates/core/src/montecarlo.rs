//! Sampling by conditional inversion and the moment estimators `Â₁`, `Â₂`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalFamily;
use crate::copula::{CopulaModel, Verdict, DEFAULT_RESOLUTION};
use crate::error::{invalid_arg, CopulaError, Result};

/// Pairs drawn per independent random stream.
pub const SHARD_SIZE: usize = 4096;

const BISECTION_TOLERANCE: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;
const BRACKET_SLACK: f64 = 1e-9;

/// Draws from a copula model, with the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub pairs: Vec<(f64, f64)>,
    pub seed: u64,
    pub source_label: String,
}

impl SampleSet {
    pub fn new(pairs: Vec<(f64, f64)>, seed: u64, source_label: impl Into<String>) -> Result<Self> {
        if let Some(&(u, v)) = pairs.iter().find(|(u, v)| !(0.0..=1.0).contains(u) || !(0.0..=1.0).contains(v)) {
            return invalid_arg(format!("sample pair ({u}, {v}) outside [0,1]²"));
        }
        Ok(Self { pairs, seed, source_label: source_label.into() })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn us(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn vs(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// Draws `n` pairs. `U` is uniform and `V` solves `φ(U)ᵀ A Ψ(V) = W` for an
/// independent uniform `W`. Shard `k` uses the ChaCha8 stream `k` of `seed`,
/// so the output does not depend on the thread count.
///
/// A model without a cached report is validated first; anything but a
/// `valid` verdict is refused.
pub fn sample(model: &CopulaModel, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return invalid_arg("sample size must be at least 1");
    }
    let verdict = match model.validation() {
        Some(report) => report.verdict,
        None => model.validate(DEFAULT_RESOLUTION, true)?.verdict,
    };
    if verdict != Verdict::Valid {
        return Err(CopulaError::InvalidModel(format!(
            "cannot sample from a model whose validation verdict is {verdict}"
        )));
    }
    let shards = n.div_ceil(SHARD_SIZE);
    let parts: Vec<Result<Vec<(f64, f64)>>> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard as u64);
            let count = SHARD_SIZE.min(n - shard * SHARD_SIZE);
            let mut out = Vec::with_capacity(count);
            let p = model.size();
            let mut phi = vec![0.0; p];
            let mut big_psi = vec![0.0; p];
            let mut row = vec![0.0; p];
            for _ in 0..count {
                let u: f64 = rng.random();
                let w: f64 = rng.random();
                model.family().eval_into(u, &mut phi);
                for (j, r) in row.iter_mut().enumerate() {
                    *r = (0..p).map(|i| phi[i] * model.matrix()[(i, j)]).sum();
                }
                let v = invert_conditional(model.family(), &row, w, &mut big_psi, u)?;
                out.push((u, v));
            }
            Ok(out)
        })
        .collect();
    let mut pairs = Vec::with_capacity(n);
    for part in parts {
        pairs.extend(part?);
    }
    Ok(SampleSet { pairs, seed, source_label: model.family().label().to_string() })
}

fn invert_conditional(family: &OrthonormalFamily, row: &[f64], w: f64, buf: &mut [f64], u: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        family.antiderivative_into(mid, buf);
        let h: f64 = row.iter().zip(buf.iter()).map(|(a, b)| a * b).sum();
        if !(-BRACKET_SLACK..=1.0 + BRACKET_SLACK).contains(&h) {
            return Err(CopulaError::Numeric(format!(
                "conditional distribution at u = {u} takes value {h} at v = {mid}; the model is not a copula"
            )));
        }
        if h.clamp(0.0, 1.0) < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    A1,
    A2,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::A1 => "a1",
            Estimator::A2 => "a2",
        })
    }
}

impl FromStr for Estimator {
    type Err = CopulaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a1" => Ok(Estimator::A1),
            "a2" => Ok(Estimator::A2),
            other => invalid_arg(format!("unknown estimator '{other}' (expected a1 or a2)")),
        }
    }
}

/// A raw moment estimate of the coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub a_hat: DMatrix<f64>,
    pub estimator: Estimator,
    pub n: usize,
    pub family_label: String,
}

/// `Â₁ = (1/n) Σ φ(Uᵢ) φ(Vᵢ)ᵀ`.
pub fn estimate_a1(samples: &SampleSet, family: &OrthonormalFamily) -> Result<EstimationResult> {
    estimate(samples, family, Estimator::A1)
}

/// `Â₂ = (1/n) Σ (φ(Uᵢ) − e₁)(φ(Vᵢ) − e₁)ᵀ + e₁e₁ᵀ`.
pub fn estimate_a2(samples: &SampleSet, family: &OrthonormalFamily) -> Result<EstimationResult> {
    estimate(samples, family, Estimator::A2)
}

/// Either estimator. Partial sums over fixed shards are added in shard order.
pub fn estimate(samples: &SampleSet, family: &OrthonormalFamily, estimator: Estimator) -> Result<EstimationResult> {
    let n = samples.len();
    if n == 0 {
        return invalid_arg("cannot estimate from an empty sample");
    }
    let p = family.size();
    let centred = estimator == Estimator::A2;
    let partials: Vec<DMatrix<f64>> = samples
        .pairs
        .par_chunks(SHARD_SIZE)
        .map(|chunk| {
            let mut acc = DMatrix::zeros(p, p);
            let (mut a, mut b) = (vec![0.0; p], vec![0.0; p]);
            for &(u, v) in chunk {
                family.eval_into(u, &mut a);
                family.eval_into(v, &mut b);
                if centred {
                    a[0] = 0.0;
                    b[0] = 0.0;
                }
                for i in 0..p {
                    if a[i] == 0.0 {
                        continue;
                    }
                    for j in 0..p {
                        acc[(i, j)] += a[i] * b[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut a_hat = DMatrix::zeros(p, p);
    for part in partials {
        a_hat += part;
    }
    a_hat /= n as f64;
    a_hat[(0, 0)] = 1.0;
    Ok(EstimationResult { a_hat, estimator, n, family_label: family.label().to_string() })
}

/// `(1/n) Σ q(u,Uᵢ) q(v,Vᵢ)`, the kernel form of the `Â₁` density.
pub fn kernel_density_a1(samples: &SampleSet, family: &OrthonormalFamily, u: f64, v: f64) -> f64 {
    let total: f64 = samples.pairs.iter().map(|&(a, b)| family.kernel(u, a) * family.kernel(v, b)).sum();
    total / samples.len() as f64
}

/// `1 + (1/n) Σ (q(u,Uᵢ) − 1)(q(v,Vᵢ) − 1)`, the kernel form of the `Â₂` density.
pub fn kernel_density_a2(samples: &SampleSet, family: &OrthonormalFamily, u: f64, v: f64) -> f64 {
    let total: f64 = samples
        .pairs
        .iter()
        .map(|&(a, b)| (family.kernel(u, a) - 1.0) * (family.kernel(v, b) - 1.0))
        .sum();
    1.0 + total / samples.len() as f64
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k + 1;
        while end < idx.len() && values[idx[end]] == values[idx[k]] {
            end += 1;
        }
        let rank = 0.5 * ((k + 1 + end) as f64);
        for &i in &idx[k..end] {
            out[i] = rank;
        }
        k = end;
    }
    out
}

/// Rank correlation of the pairs (ties get mid-ranks).
pub fn empirical_spearman(samples: &SampleSet) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return invalid_arg("Spearman's rho needs at least two pairs");
    }
    let ru = ranks(&samples.us());
    let rv = ranks(&samples.vs());
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in ru.iter().zip(&rv) {
        let (x, y) = (a - mean, b - mean);
        suv += x * y;
        suu += x * x;
        svv += y * y;
    }
    Ok(suv / (suu * svv).sqrt())
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `values` and the uniform law on `[0,1]`.
pub fn ks_uniform_statistic(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}
