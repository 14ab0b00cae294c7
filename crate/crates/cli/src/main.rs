//! Command-line front end for `orthocop`.
//!
//! Exit codes: 0 on success, 1 when a model is not a copula density (or
//! sampling is refused for that reason), 2 for usage errors and malformed
//! input files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use orthocop::copula::DEFAULT_RESOLUTION;
use orthocop::dependence::default_tail_points;
use orthocop::io;
use orthocop::numerics::DEFAULT_ORDER;
use orthocop::{
    convergence_study, discretize_copula, estimate, make_partition, measures, p_phi, sample, to_copula_model,
    CopulaError, CopulaModel, Estimator, FamilyDescriptor, FamilyKind, OrthonormalFamily, PartitionKind,
    ReferenceCopula, Verdict,
};

const ORDER_ENV: &str = "COPULA_QUAD_ORDER";

#[derive(Parser)]
#[command(name = "orthocop", version, about = "Copulas with densities phi(u)' A phi(v)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FamilyArgs {
    /// Family name or descriptor: trig, haar, fgm, cubic, ifgm, bernstein,
    /// checkerboard, or e.g. "trig:2", "haar:8", "bernstein:16".
    #[arg(long)]
    family: String,
    /// Number of harmonics (trig).
    #[arg(long)]
    harmonics: Option<u64>,
    /// Number of levels J, giving 2^J functions (haar).
    #[arg(long)]
    levels: Option<u32>,
    /// Number of functions (haar, bernstein, checkerboard).
    #[arg(long)]
    size: Option<u64>,
    /// Number of terms (ifgm).
    #[arg(long)]
    terms: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a model and write it as JSON.
    Construct {
        #[command(flatten)]
        family: FamilyArgs,
        /// Use diag{1, θ, …, θ}.
        #[arg(long, conflicts_with_all = ["matrix", "from"])]
        diag_theta: Option<f64>,
        /// Coefficient matrix as inline JSON rows, e.g. "[[1,0],[0,0.2]]".
        #[arg(long, conflicts_with = "from")]
        matrix: Option<String>,
        /// Discretize a reference copula (checkerboard and bernstein only),
        /// e.g. "fgm:1.0" or "clayton:2".
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check nonnegativity of a model's density.
    Validate {
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        /// Skip the local search after the grid scan.
        #[arg(long)]
        no_refine: bool,
    },
    /// Spearman's rho, Kendall's tau and the upper tail profile.
    Measures { model: PathBuf },
    /// Project a reference copula onto a family.
    Project {
        /// Reference copula, e.g. "clayton:1.0".
        #[arg(long)]
        target: String,
        #[command(flatten)]
        family: FamilyArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Markov product of two models over the same family.
    Star {
        left: PathBuf,
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw pairs from a valid model.
    Sample {
        model: PathBuf,
        #[arg(short = 'n', long = "count")]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Moment estimate of the coefficient matrix from a sample CSV.
    Estimate {
        #[command(flatten)]
        family: FamilyArgs,
        /// a1 or a2.
        #[arg(long, default_value = "a2")]
        estimator: String,
        #[arg(long)]
        input: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Density on an r×r grid as CSV.
    DensityGrid {
        model: PathBuf,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// L2 error and Spearman gap of projections of increasing size.
    Convergence {
        #[arg(long)]
        target: String,
        /// Family name: haar, checkerboard, bernstein (sizes are function
        /// counts) or trig (sizes are harmonics).
        #[arg(long)]
        family: String,
        /// Comma-separated sizes, e.g. "2,4,8,16,32".
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<CopulaError>() {
            Some(
                CopulaError::InvalidModel(_)
                | CopulaError::ConstraintViolation(_)
                | CopulaError::InvalidSource(_)
                | CopulaError::Numeric(_)
                | CopulaError::NonFinite { .. }
                | CopulaError::SingularMatrix(_),
            ) => 1,
            _ => 2,
        };
        Failure { code, error }
    }
}

impl From<CopulaError> for Failure {
    fn from(error: CopulaError) -> Self {
        anyhow::Error::new(error).into()
    }
}

type Outcome = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn quad_order() -> Result<usize, Failure> {
    match std::env::var(ORDER_ENV) {
        Err(_) => Ok(DEFAULT_ORDER),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure { code: 2, error: anyhow!("{ORDER_ENV} must be a positive integer, got '{s}'") }),
        },
    }
}

fn descriptor(args: &FamilyArgs) -> Result<FamilyDescriptor, Failure> {
    let name = args.family.trim();
    if name.contains(':') {
        return Ok(name.parse()?);
    }
    let need = |what: &str, v: Option<u64>| -> Result<u64, Failure> {
        v.ok_or_else(|| Failure { code: 2, error: anyhow!("family '{name}' needs --{what}") })
    };
    let text = match name {
        "trig" => format!("trig:{}", need("harmonics", args.harmonics)?),
        "haar" => match (args.levels, args.size) {
            (Some(j), _) => format!("haar:{}", 1u64 << j),
            (None, size) => format!("haar:{}", need("levels", size)?),
        },
        "ifgm" | "iterated_fgm" => format!("ifgm:{}", need("terms", args.terms)?),
        "bernstein" | "checkerboard" => format!("{name}:{}", need("size", args.size)?),
        other => other.to_string(),
    };
    Ok(text.parse()?)
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(|error| Failure { code: 2, error })
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(|error| Failure { code: 2, error })
}

fn load_model(path: &Path) -> Result<CopulaModel, Failure> {
    let text = read(path)?;
    io::model_from_json(&text)
        .with_context(|| format!("in {}", path.display()))
        .map_err(|error| Failure { code: 2, error })
}

fn partition_kind(kind: FamilyKind) -> Option<PartitionKind> {
    match kind {
        FamilyKind::Checkerboard => Some(PartitionKind::Checkerboard),
        FamilyKind::Bernstein => Some(PartitionKind::Bernstein),
        _ => None,
    }
}

/// Validates, writes the model and reports the verdict; invalid models are
/// still written so they can be inspected.
fn finish_model(model: CopulaModel, out: &Path) -> Outcome {
    let model = match model.validation() {
        Some(_) => model,
        None => model.validated(DEFAULT_RESOLUTION, true)?,
    };
    write(out, &io::model_to_json(&model))?;
    let report = model.validation().expect("validated above");
    match report.verdict {
        Verdict::Invalid => {
            eprintln!(
                "invalid: density reaches {} at ({}, {}); written to {}",
                report.min_value,
                report.argmin.0,
                report.argmin.1,
                out.display()
            );
            Ok(1)
        }
        verdict => {
            println!("{verdict}: wrote {}", out.display());
            Ok(0)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Construct { family, diag_theta, matrix, from, out } => {
            let d = descriptor(&family)?;
            let model = if let Some(source) = from {
                let kind = partition_kind(d.kind).ok_or_else(|| Failure {
                    code: 2,
                    error: anyhow!("--from needs a checkerboard or bernstein family"),
                })?;
                let source: ReferenceCopula = source.parse()?;
                let pf = make_partition(kind, d.size)?;
                let m = discretize_copula(&source, d.size)?;
                to_copula_model(&pf, &m)?
            } else {
                let fam = Arc::new(OrthonormalFamily::from_descriptor(&d)?);
                match (diag_theta, matrix) {
                    (Some(theta), _) => CopulaModel::diagonal(fam, theta)?,
                    (None, Some(text)) => CopulaModel::new(fam, io::matrix_from_json(&text)?)?,
                    (None, None) => CopulaModel::independence(fam),
                }
            };
            finish_model(model, &out)
        }
        Command::Validate { model, resolution, no_refine } => {
            let m = load_model(&model)?;
            let report = m.validate(resolution, !no_refine)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
            Ok(if report.verdict == Verdict::Invalid { 1 } else { 0 })
        }
        Command::Measures { model } => {
            let m = load_model(&model)?;
            let report = measures(&m, quad_order()?, &default_tail_points())?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
            Ok(0)
        }
        Command::Project { target, family, out } => {
            let target: ReferenceCopula = target.parse()?;
            let d = descriptor(&family)?;
            let fam = Arc::new(OrthonormalFamily::from_descriptor(&d)?);
            let candidate = p_phi(&target, fam, quad_order()?)?;
            write(&out, &io::model_to_json(&candidate))?;
            let report = candidate.validation().expect("projection attaches a report");
            if report.verdict != Verdict::Invalid {
                println!("{}: wrote {}", report.verdict, out.display());
                return Ok(0);
            }
            if d.kind == FamilyKind::Fgm {
                let rho = candidate.matrix()[(1, 1)];
                println!("invalid: |rho| > 1/3 (projected rho = {rho})");
            } else {
                println!(
                    "invalid: projected density reaches {} at ({}, {})",
                    report.min_value, report.argmin.0, report.argmin.1
                );
            }
            Ok(1)
        }
        Command::Star { left, right, out } => {
            let a = load_model(&left)?;
            let b = load_model(&right)?;
            finish_model(a.star(&b)?, &out)
        }
        Command::Sample { model, n, seed, out } => {
            let m = load_model(&model)?;
            let samples = sample(&m, n, seed)?;
            write(&out, &io::samples_to_csv(&samples))?;
            println!("wrote {} pairs to {}", samples.len(), out.display());
            Ok(0)
        }
        Command::Estimate { family, estimator, input, out } => {
            let estimator: Estimator = estimator.parse()?;
            let d = descriptor(&family)?;
            let fam = Arc::new(OrthonormalFamily::from_descriptor(&d)?);
            let text = read(&input)?;
            let samples = io::samples_from_csv(&text, &input.display().to_string())
                .with_context(|| format!("in {}", input.display()))
                .map_err(|error| Failure { code: 2, error })?;
            let result = estimate(&samples, &fam, estimator)?;
            let verdict = match CopulaModel::new(fam, result.a_hat.clone()) {
                Ok(m) => m.validate(DEFAULT_RESOLUTION, true)?.verdict,
                Err(_) => Verdict::Invalid,
            };
            let report = io::estimation_report_json(&result, verdict);
            match out {
                Some(path) => write(&path, &report)?,
                None => println!("{report}"),
            }
            Ok(0)
        }
        Command::DensityGrid { model, resolution, out } => {
            let m = load_model(&model)?;
            write(&out, &io::density_grid_csv(&m, resolution)?)?;
            Ok(0)
        }
        Command::Convergence { target, family, sizes, out } => {
            let target: ReferenceCopula = target.parse()?;
            if sizes.is_empty() {
                return Err(Failure { code: 2, error: anyhow!("--sizes needs at least one value") });
            }
            let name = family.trim().to_string();
            let builder = |p: usize| -> orthocop::Result<OrthonormalFamily> {
                OrthonormalFamily::from_descriptor(&format!("{name}:{p}").parse()?)
            };
            let rows = convergence_study(&target, builder, &sizes, quad_order()?)?;
            let csv = io::convergence_csv(&rows);
            match out {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
            Ok(0)
        }
    }
}
