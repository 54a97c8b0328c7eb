mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lqagg::harness::{rate_sweep, ExperimentConfig, RiskReport, SweepAxis, SweepTable};
use lqagg::io::{parse_candidates, parse_coefficients, parse_csv_matrix, parse_experiment, split_response};
use lqagg::maurey::{maurey_round, Dictionary, NormKind, RoundingConfig, SparseApproxResult};
use lqagg::mixing::{arm_aggregate, catoni_aggregate, mls_aggregate, ArmConfig, CatoniConfig};
use lqagg::rates::{rate_report, ProblemDims, RateReport, SparsityBudget};
use lqagg::selection::{
    abc_prime_select, abc_select, design_rank, enumerate_models, ModelPurpose, ProjectionSet, Selection,
    SelectionConfig,
};
use lqagg::{Error, Result, VERSION};

use report::{to_row, write_csv, Envelope, Format};

#[derive(Parser)]
#[command(name = "lqagg", version, about = "Sparse aggregation, subset selection and model mixing")]
struct Cli {
    #[arg(long, value_enum, default_value = "json", global = true)]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Leave the wall-clock field empty so repeated runs are byte-identical.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ideal and effective model sizes and the minimax rates.
    Rates(RatesArgs),
    /// Sparse approximation of a coefficient vector by randomized rounding.
    Approx(ApproxArgs),
    /// ABC or ABC′ subset selection on a CSV dataset.
    Select(SelectArgs),
    /// Mixing weights with ARM, Catoni or MLS.
    Mix(MixArgs),
    /// Monte Carlo risk of one experiment.
    Simulate(SimulateArgs),
    /// Monte Carlo risk along a parameter grid.
    Sweep(SweepArgs),
}

#[derive(Args, Serialize)]
struct RatesArgs {
    #[arg(long)]
    n: usize,
    #[arg(long = "M")]
    #[serde(rename = "M")]
    dict_size: usize,
    #[arg(long)]
    sigma: f64,
    /// Exponent q; 0 selects a pure sparsity budget.
    #[arg(long)]
    q: f64,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Rank of the full design, needed for the fixed-design rate.
    #[arg(long)]
    full_rank: Option<usize>,
}

#[derive(Args, Serialize)]
struct ApproxArgs {
    /// JSON coefficient vector.
    #[arg(long)]
    coefficients: PathBuf,
    /// CSV of dictionary columns; the orthonormal dictionary when absent.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long)]
    t: f64,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    q: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = lqagg::maurey::DEFAULT_MAX_DRAWS)]
    max_draws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum CriterionArg {
    Abc,
    AbcPrime,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    /// CSV dataset; the response is the last column unless --response is set.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    criterion: CriterionArg,
    /// σ for ABC, the upper bound σ̄ for ABC′.
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    lambda: Option<f64>,
    /// Zero-based response column.
    #[arg(long)]
    response: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MixMethod {
    Arm,
    Catoni,
    Mls,
}

#[derive(Args, Serialize)]
struct MixArgs {
    #[arg(long, value_enum)]
    method: MixMethod,
    /// JSON with `predictions`, `y` and optional `priors` and `labels` (ARM, Catoni).
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// CSV dataset for MLS.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    response: Option<usize>,
    /// Known noise level (ARM, MLS) or the Gaussian noise level for Catoni's constants.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    sigma_lo: Option<f64>,
    #[arg(long)]
    sigma_hi: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Sup-norm bound L; candidates are clipped to [−L, L].
    #[arg(long)]
    sup_bound: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Base seed; overrides the generator seed in the configuration.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// One of n, m, t, q, k.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    grid: Vec<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Serialize)]
struct SweepConfig<'a> {
    axis: SweepAxis,
    grid: &'a [f64],
    experiment: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct MixOutput {
    method: MixMethod,
    labels: Vec<String>,
    priors: Vec<f64>,
    weights: Vec<f64>,
    prediction: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    risk_estimates: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct MixRow<'a> {
    label: &'a str,
    prior: f64,
    weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    risk_estimate: Option<f64>,
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    chosen: bool,
    #[serde(flatten)]
    row: &'a lqagg::selection::ScoreRow,
}

#[derive(Serialize)]
struct SweepLine {
    value: f64,
    mean_risk: f64,
    std_err: f64,
    rate_prediction: Option<f64>,
    ratio: Option<f64>,
    oracle: Option<f64>,
    failures: usize,
    slope: Option<f64>,
}

type Rows = Vec<Vec<(String, String)>>;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn read_dataset(path: &Path, response: Option<usize>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let table = parse_csv_matrix(&read(path)?)?;
    split_response(&table.data, response)
}

fn need<T>(v: Option<T>, flag: &str, method: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("{method} needs --{flag}")))
}

fn rates(a: &RatesArgs) -> Result<(RateReport, Rows)> {
    let dims = ProblemDims::new(a.n, a.dict_size, a.sigma)?;
    let budget = match (a.q == 0.0, a.t, a.k) {
        (true, _, Some(k)) => SparsityBudget::l0(k)?,
        (true, _, None) => return Err(Error::Config("q = 0 needs --k".into())),
        (false, Some(t), None) => SparsityBudget::lq(a.q, t)?,
        (false, Some(t), Some(k)) => SparsityBudget::joint(a.q, t, k)?,
        (false, None, _) => return Err(Error::Config("q > 0 needs --t".into())),
    };
    let r = rate_report(&dims, &budget, a.full_rank)?;
    let rows = vec![to_row(&r)?];
    Ok((r, rows))
}

fn approx(a: &ApproxArgs) -> Result<(SparseApproxResult, Rows)> {
    let c = parse_coefficients(&read(&a.coefficients)?)?;
    let dict = match &a.dictionary {
        Some(p) => Dictionary::new(parse_csv_matrix(&read(p)?)?.data, NormKind::Empirical)?,
        None => Dictionary::orthonormal(c.len()),
    };
    let target = dict.evaluate(&c);
    let mut cfg = RoundingConfig::new(a.t, a.m, a.q, a.seed);
    cfg.max_draws = a.max_draws;
    let r = maurey_round(&dict, &c, &target, &cfg)?;
    let rows = r
        .theta_m
        .iter()
        .enumerate()
        .map(|(j, v)| vec![("index".to_string(), j.to_string()), ("theta".to_string(), v.to_string())])
        .collect();
    Ok((r, rows))
}

fn select(a: &SelectArgs) -> Result<(Selection, Rows)> {
    let (x, y) = read_dataset(&a.data, a.response)?;
    let s = match a.criterion {
        CriterionArg::Abc => {
            let cfg = match a.lambda {
                Some(l) => SelectionConfig::new(lqagg::selection::CriterionKind::Abc, l, a.sigma)?,
                None => SelectionConfig::abc(a.sigma)?,
            };
            abc_select(&x, &y, &cfg)?
        }
        CriterionArg::AbcPrime => {
            let cfg = match a.lambda {
                Some(l) => SelectionConfig::new(lqagg::selection::CriterionKind::AbcPrime, l, a.sigma)?,
                None => SelectionConfig::abc_prime(a.sigma)?,
            };
            abc_prime_select(&x, &y, &cfg)?
        }
    };
    let rows = s
        .table
        .iter()
        .enumerate()
        .map(|(i, row)| {
            to_row(&ScoreLine {
                chosen: i == s.chosen_index,
                row,
            })
        })
        .collect::<serde_json::Result<_>>()?;
    Ok((s, rows))
}

fn mix(a: &MixArgs) -> Result<(MixOutput, Rows)> {
    let out = match a.method {
        MixMethod::Arm | MixMethod::Catoni => {
            let path = need(a.candidates.as_ref(), "candidates", "ARM and Catoni mixing")?;
            let (mut cands, y) = parse_candidates(&read(path)?)?;
            let weights = if a.method == MixMethod::Arm {
                let cfg = match a.sigma {
                    Some(s) => ArmConfig::known_sigma(s)?,
                    None => ArmConfig::new(
                        need(a.sigma_lo, "sigma-lo", "ARM")?,
                        need(a.sigma_hi, "sigma-hi", "ARM")?,
                    )?,
                };
                arm_aggregate(&cands, &y, &cfg)?
            } else {
                let l = need(a.sup_bound, "sup-bound", "Catoni")?;
                let cfg = CatoniConfig::gaussian(need(a.alpha, "alpha", "Catoni")?, need(a.sigma, "sigma", "Catoni")?, l)?;
                cands.clip(l);
                catoni_aggregate(&cands, &y, &cfg)?
            };
            MixOutput {
                method: a.method,
                labels: cands.labels().to_vec(),
                priors: cands.priors().to_vec(),
                prediction: cands.combine(&weights),
                weights: weights.weights,
                risk_estimates: None,
            }
        }
        MixMethod::Mls => {
            let path = need(a.data.as_ref(), "data", "MLS")?;
            let sigma = need(a.sigma, "sigma", "MLS")?;
            let (x, y) = read_dataset(path, a.response)?;
            let (n, m) = x.shape();
            let models = enumerate_models(m, n, ModelPurpose::Mls, design_rank(&x))?;
            let set = ProjectionSet::new(&x, models)?;
            let fits = set.fit_all(&y)?;
            let r = mls_aggregate(set.models(), &fits, Some(sigma))?;
            MixOutput {
                method: a.method,
                labels: set.models().iter().map(|md| md.label()).collect(),
                priors: set.models().iter().map(|md| md.prior).collect(),
                weights: r.weights.weights,
                prediction: r.prediction,
                risk_estimates: Some(r.risk_estimates),
            }
        }
    };
    let rows = (0..out.labels.len())
        .map(|i| {
            to_row(&MixRow {
                label: &out.labels[i],
                prior: out.priors[i],
                weight: out.weights[i],
                risk_estimate: out.risk_estimates.as_ref().map(|r| r[i]),
            })
        })
        .collect::<serde_json::Result<_>>()?;
    Ok((out, rows))
}

fn experiment(path: &Path, seed: u64) -> Result<ExperimentConfig> {
    let mut cfg = parse_experiment(&read(path)?)?;
    cfg.generator.seed = seed;
    Ok(cfg)
}

fn simulate(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<(RiskReport, Rows)> {
    let r = cfg.run(workers)?;
    let rows = vec![to_row(&r)?];
    Ok((r, rows))
}

fn sweep(a: &SweepArgs, cfg: &ExperimentConfig) -> Result<(SweepTable, Rows)> {
    let t = rate_sweep(a.axis, &a.grid, cfg, a.workers)?;
    let rows = t
        .rows
        .iter()
        .map(|r| {
            to_row(&SweepLine {
                value: r.value,
                mean_risk: r.mean_risk,
                std_err: r.std_err,
                rate_prediction: r.rate_prediction,
                ratio: r.ratio,
                oracle: r.report.oracle,
                failures: r.report.failures,
                slope: t.slope,
            })
        })
        .collect::<serde_json::Result<_>>()?;
    Ok((t, rows))
}

struct Output<'a> {
    format: Format,
    path: Option<&'a Path>,
    timing: bool,
}

impl Output<'_> {
    fn emit<C: Serialize, R: Serialize>(
        &self,
        command: &str,
        seed: Option<u64>,
        config: &C,
        started: Instant,
        result: Result<(R, Rows)>,
    ) -> Result<()> {
        let (result, rows) = result?;
        let env = Envelope {
            version: VERSION,
            command,
            seed,
            config,
            wall_clock_seconds: self.timing.then(|| started.elapsed().as_secs_f64()),
            result: &result,
        };
        let mut buf = Vec::new();
        match self.format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut buf, &env)?;
                buf.push(b'\n');
            }
            Format::Csv => write_csv(&mut buf, &env, &rows)?,
        }
        match self.path {
            Some(p) => std::fs::write(p, &buf)?,
            None => std::io::stdout().write_all(&buf)?,
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = Output {
        format: cli.format,
        path: cli.output.as_deref(),
        timing: !cli.no_timing,
    };
    let started = Instant::now();
    match &cli.command {
        Command::Rates(a) => out.emit("rates", None, a, started, rates(a)),
        Command::Approx(a) => out.emit("approx", Some(a.seed), a, started, approx(a)),
        Command::Select(a) => out.emit("select", None, a, started, select(a)),
        Command::Mix(a) => out.emit("mix", None, a, started, mix(a)),
        Command::Simulate(a) => {
            let cfg = experiment(&a.config, a.seed)?;
            out.emit("simulate", Some(a.seed), &cfg, started, simulate(&cfg, a.workers))
        }
        Command::Sweep(a) => {
            let cfg = experiment(&a.config, a.seed)?;
            let echo = SweepConfig {
                axis: a.axis,
                grid: &a.grid,
                experiment: &cfg,
            };
            out.emit("sweep", Some(a.seed), &echo, started, sweep(a, &cfg))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
