//! Command-line front end: `simulate`, `fit`, `mc` and `report`.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::ci::{bootstrap_ci, normal_ci, truncated_ci, IntervalKind, Parameter};
use crate::config::StudyConfig;
use crate::dataset::{load_dataset, quality_control};
use crate::error::Error;
use crate::genosim::{draw_allele_freqs, draw_genotypes, simulate_phenotype, true_heritability, SimConfig};
use crate::grm::{spectral, StreamedDesign};
use crate::mcstudy::run_study_with;
use crate::reml::fit;
use crate::report::{self, BootstrapEntry, Estimates, FitReport, IntervalEntry, Variances};
use crate::rng;
use crate::varest::{abc_statistics, variance_estimates, ExponentMode};

#[derive(Debug, Parser)]
#[command(name = "misreml", version, about = "Heritability estimation under a misspecified linear mixed model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one data set from the sparse model and write dosage/phenotype tables.
    Simulate(SimulateArgs),
    /// Fit the working model to dosage data and report estimates with intervals.
    Fit(FitArgs),
    /// Run a Monte Carlo study described by a TOML config.
    Mc(McArgs),
    /// Render a study CSV as an aligned text table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: usize,
    /// Number of causal SNPs (the first m columns).
    #[arg(long)]
    pub m: usize,
    /// Residual variance.
    #[arg(long)]
    pub a: f64,
    /// Genetic variance scale.
    #[arg(long)]
    pub b: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub geno: PathBuf,
    #[arg(long)]
    pub pheno: PathBuf,
    #[arg(long)]
    pub covar: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub maf_min: f64,
    #[arg(long, default_value_t = 0.05)]
    pub miss_max: f64,
    /// Comma-separated λ values; each gives a (1 - λ) interval.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub levels: Vec<f64>,
    /// Number of parametric bootstrap replicates (at least 100).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Seed for the bootstrap (0 when omitted).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Quartic)]
    pub exponent_mode: ModeArg,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Quartic,
    QuadraticLiteral,
}

impl From<ModeArg> for ExponentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Quartic => ExponentMode::Quartic,
            ModeArg::QuadraticLiteral => ExponentMode::QuadraticLiteral,
        }
    }
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Study table written by `mc`.
    #[arg(long)]
    pub csv: PathBuf,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Args,
    Load,
    Qc,
    Standardize,
    Spectral,
    Reml,
    Varest,
    Ci,
    Bootstrap,
    Simulate,
    Config,
    Study,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Args => "args",
            Stage::Load => "load",
            Stage::Qc => "qc",
            Stage::Standardize => "standardize",
            Stage::Spectral => "spectral",
            Stage::Reml => "reml",
            Stage::Varest => "varest",
            Stage::Ci => "ci",
            Stage::Bootstrap => "bootstrap",
            Stage::Simulate => "simulate",
            Stage::Config => "config",
            Stage::Study => "study",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    /// 2 for input errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        if self.source.is_input_error() {
            2
        } else {
            3
        }
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T> AtStage<T> for crate::error::Result<T> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub fn run(cli: Cli) -> StageResult<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a).map(|_| ()),
        Command::Mc(a) => cmd_mc(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn write_file(path: &Path, contents: &str) -> StageResult<()> {
    fs::write(path, contents)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
        .at(Stage::Write)
}

fn ensure_dir(dir: &Path) -> StageResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
        .at(Stage::Write)
}

#[derive(Serialize)]
struct Truth {
    n: usize,
    p: usize,
    m: usize,
    a: f64,
    b: f64,
    mu: f64,
    h2: f64,
    seed: u64,
}

/// Draws frequencies, genotypes and phenotype exactly as replication 0 of a
/// study scenario with the same seed.
pub fn cmd_simulate(args: &SimulateArgs) -> StageResult<()> {
    let mut config = SimConfig::new(args.n, args.p, args.m, args.a, args.b, args.seed);
    config.mu = args.mu;
    config.validate().at(Stage::Args)?;
    let mut rng = rng::stream(args.seed, 0);
    let freqs = draw_allele_freqs(args.p, &mut rng);
    let geno = draw_genotypes(&freqs, args.n, &mut rng).at(Stage::Simulate)?;
    let design = StreamedDesign::<f64>::new(&geno).at(Stage::Simulate)?;
    let y: Vec<f64> = simulate_phenotype(&design, &config, &mut rng).at(Stage::Simulate)?;

    ensure_dir(&args.out_dir)?;
    let io = |e: std::io::Error| StageError { stage: Stage::Write, source: Error::Io(e) };
    let file = fs::File::create(args.out_dir.join("genotypes.tsv")).map_err(io)?;
    let mut w = BufWriter::new(file);
    write!(w, "id").map_err(io)?;
    for j in 0..args.p {
        write!(w, "\tsnp{}", j + 1).map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    let mut line = String::with_capacity(2 * args.p + 16);
    for i in 0..args.n {
        line.clear();
        line.push_str(&format!("ind{}", i + 1));
        for j in 0..args.p {
            line.push('\t');
            line.push((b'0' + geno.get(i, j)) as char);
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let mut pheno = String::from("id\ty\n");
    for (i, v) in y.iter().enumerate() {
        pheno.push_str(&format!("ind{}\t{v:?}\n", i + 1));
    }
    write_file(&args.out_dir.join("phenotype.tsv"), &pheno)?;
    let truth = Truth {
        n: args.n,
        p: args.p,
        m: args.m,
        a: args.a,
        b: args.b,
        mu: args.mu,
        h2: true_heritability(&config).at(Stage::Args)?,
        seed: args.seed,
    };
    let json = serde_json::to_string_pretty(&truth).map_err(|e| Error::Parse(e.to_string())).at(Stage::Write)?;
    write_file(&args.out_dir.join("truth.json"), &json)
}

const FIT_PARAMETERS: [Parameter; 3] = [Parameter::Sigma2Eps, Parameter::Gamma, Parameter::H2];

/// Load, QC, fit, variance estimates and intervals; writes `fit_report.json`
/// and `fit_report.txt` into the output directory.
pub fn cmd_fit(args: &FitArgs) -> StageResult<FitReport> {
    for &l in &args.levels {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::InvalidInput(format!("level {l} outside (0, 1)"))).at(Stage::Args);
        }
    }
    let data = load_dataset(&args.geno, &args.pheno, args.covar.as_deref()).at(Stage::Load)?;
    let (data, qc) = quality_control(&data, args.maf_min, args.miss_max).at(Stage::Qc)?;
    let design = StreamedDesign::<f64>::new(&data.genotypes).at(Stage::Standardize)?;
    let x = data.design_matrix();
    let spec = spectral(&design, &x, &data.phenotype).at(Stage::Spectral)?;
    let fit = fit(&spec).at(Stage::Reml)?;
    let mode = ExponentMode::from(args.exponent_mode);
    let abc = abc_statistics(&spec, fit.gamma_hat).at(Stage::Varest)?;
    let var = variance_estimates(&fit, &abc, mode).at(Stage::Varest)?;

    let mut intervals = Vec::new();
    for param in FIT_PARAMETERS {
        let theta = param.estimate(&fit);
        let v = match param {
            Parameter::Sigma2Eps => var.var_sigma2_eps,
            Parameter::Gamma => var.var_gamma,
            Parameter::H2 => var.var_h2,
        };
        for &lambda in &args.levels {
            for ci in [
                normal_ci(theta, v, lambda).at(Stage::Ci)?,
                truncated_ci(theta, v, lambda, param.bounds()).at(Stage::Ci)?,
            ] {
                intervals.push(IntervalEntry {
                    parameter: param,
                    level: ci.level,
                    lambda,
                    kind: ci.kind,
                    lower: ci.lower,
                    upper: ci.upper,
                });
            }
        }
    }

    let mut bootstrap = None;
    if let Some(n_boot) = args.bootstrap {
        let seed = args.seed.unwrap_or(0);
        let mut failures = 0;
        for param in FIT_PARAMETERS {
            for &lambda in &args.levels {
                let out = bootstrap_ci(&fit, &spec, param, n_boot, lambda, seed).at(Stage::Bootstrap)?;
                failures = failures.max(out.failures);
                intervals.push(IntervalEntry {
                    parameter: param,
                    level: out.interval.level,
                    lambda,
                    kind: IntervalKind::Bootstrap,
                    lower: out.interval.lower,
                    upper: out.interval.upper,
                });
            }
        }
        bootstrap = Some(BootstrapEntry { replicates: n_boot, failures, seed });
    }

    let report = FitReport {
        n: spec.n,
        snps: design.scaling.retained_count(),
        fixed_effects: spec.q,
        covariates: data.covariate_names.clone(),
        estimates: Estimates {
            sigma2_eps: fit.sigma2_eps_hat,
            gamma: fit.gamma_hat,
            sigma2_alpha: fit.sigma2_alpha_hat,
            h2: fit.h2_hat,
        },
        variances: Variances {
            sigma2_eps: var.var_sigma2_eps,
            gamma: var.var_gamma,
            h2: var.var_h2,
            exponent_mode: mode,
        },
        intervals,
        qc,
        alignment: data.alignment.clone(),
        solver: fit.diagnostics,
        bootstrap,
    };
    ensure_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("fit_report.json"), &report.to_json().at(Stage::Write)?)?;
    write_file(&args.out_dir.join("fit_report.txt"), &report.to_text())?;
    Ok(report)
}

/// Writes `mc_results.csv`, `mc_results.txt` and `mc_summary.json`.
pub fn cmd_mc(args: &McArgs) -> StageResult<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", args.config.display()))))
        .at(Stage::Config)?;
    let cfg = StudyConfig::parse(&text).at(Stage::Config)?;
    let grid = cfg.scenarios(args.seed).at(Stage::Config)?;
    let summaries = run_study_with(&grid, args.threads, &cfg.options()).at(Stage::Study)?;
    ensure_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("mc_results.csv"), &report::write_csv(&summaries).at(Stage::Write)?)?;
    write_file(&args.out_dir.join("mc_results.txt"), &report::study_text(&summaries).at(Stage::Write)?)?;
    let json = serde_json::to_string_pretty(&summaries)
        .map_err(|e| Error::Parse(e.to_string()))
        .at(Stage::Write)?;
    write_file(&args.out_dir.join("mc_summary.json"), &json)
}

pub fn cmd_report(args: &ReportArgs) -> StageResult<()> {
    let text = fs::read_to_string(&args.csv)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", args.csv.display()))))
        .at(Stage::Load)?;
    let (header, rows) = report::parse_csv(&text).at(Stage::Load)?;
    let rendered = report::render_text(&header, &rows);
    match &args.out {
        Some(path) => write_file(path, &rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}
