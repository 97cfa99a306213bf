use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use tvws_market::benchmarks::BenchmarkReport;
use tvws_market::competition::solve_stage2;
use tvws_market::dynamics::{consumer_surplus, iterate_dynamics, solve_equilibrium, DEFAULT_MAX_ITER};
use tvws_market::experiment::{
    run_sweep, run_three_stage, run_validation_suite, solve_scheme, write_records, write_sweep_csv, SweepScheme,
};
use tvws_market::validation::{basic_rate_curve, information_gain_curve, CurvePoint, InterferenceModel};
use tvws_market::*;

const EXIT_USAGE: u8 = 1;
const EXIT_NON_CONVERGENCE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

/// Equilibrium solver for a TV white space market combining channel leasing
/// with paid channel-quality information.
#[derive(Parser, Debug)]
#[command(name = "tvws", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Model parameters as TOML or JSON; unspecified fields keep defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// CSV destination; stdout when absent or `-`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Random seed for the sampling commands.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// User equilibrium at fixed prices.
    Equilibrium {
        #[arg(long = "p-l")]
        p_l: f64,
        #[arg(long = "p-a")]
        p_a: f64,
        /// Emit the best-response trajectory from an empty market instead.
        #[arg(long)]
        trace: bool,
    },
    /// Price competition at a fixed commission.
    Compete {
        /// `rss:<delta>` or `wps:<w>`.
        #[arg(long)]
        scheme: String,
        /// Emit the per-round iterates instead of the summary row.
        #[arg(long)]
        trace: bool,
    },
    /// Bargained commission and the resulting three-stage outcome.
    Bargain {
        /// `rss` or `wps`.
        #[arg(long)]
        scheme: String,
        #[arg(long, default_value_t = tvws_market::bargaining::DEFAULT_GRID_STEPS)]
        grid_steps: usize,
    },
    /// All schemes side by side, including the sensing market.
    Benchmarks {
        #[arg(long = "sensing-g1", default_value_t = 2.0)]
        sensing_g1: f64,
        #[arg(long = "c-s", default_value_t = 0.2)]
        c_s: f64,
    },
    /// Parameter sweep, one row per grid value and scheme.
    Sweep {
        /// `lambda`, `cost_leasing` or `cost_sensing`.
        #[arg(long)]
        parameter: String,
        /// `start:stop:step`.
        #[arg(long)]
        range: String,
        /// Comma-separated schemes; all when absent.
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
        /// Comma-separated output columns; all when absent.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long = "sensing-g1", default_value_t = 2.0)]
        sensing_g1: f64,
        #[arg(long = "c-s", default_value_t = 0.2)]
        c_s: f64,
    },
    /// Solver-versus-oracle cross-checks; exits 3 on any failure.
    Validate,
    /// Monte Carlo rate curves of the interference model.
    McOracle {
        #[arg(long, default_value_t = 10)]
        channels: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let non_convergence = e
                .downcast_ref::<MarketError>()
                .is_some_and(MarketError::is_non_convergence);
            ExitCode::from(if non_convergence { EXIT_NON_CONVERGENCE } else { EXIT_USAGE })
        }
    }
}

fn output(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p.as_os_str() != "-" => {
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?))
        }
        _ => Box::new(BufWriter::new(io::stdout())),
    })
}

fn fmt(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let g = cli.global;
    let params = match &g.config {
        Some(path) => ModelParams::load(path)?,
        None => ModelParams::default(),
    };
    let mut stage2 = Stage2Options::default();
    if let Some(tol) = g.tol {
        stage2.tol = tol;
    }
    let out = output(&g.out)?;

    match cli.command {
        Command::Equilibrium { p_l, p_a, trace } => {
            let prices = PriceProfile::new(p_l, p_a);
            let tol = g.tol.unwrap_or(tvws_market::dynamics::DEFAULT_SOLVE_TOL);
            if trace {
                let tr = iterate_dynamics(MarketShare::new(0.0, 0.0), &prices, &params, tol, DEFAULT_MAX_ITER)?;
                let records = tr.points.windows(2).enumerate().map(|(i, w)| {
                    vec![(i + 1).to_string(), fmt(w[1].eta_l), fmt(w[1].eta_a), fmt(w[1].distance(&w[0]))]
                });
                write_records(out, &["iter", "eta_l", "eta_a", "residual"], records)?;
                if !tr.converged {
                    return Err(MarketError::NotConverged {
                        rounds: tr.iterations,
                        last: tr.terminal(),
                        oscillating: false,
                    }
                    .into());
                }
            } else {
                let eq = solve_equilibrium(&prices, &params, tol)?;
                let cs = consumer_surplus(&eq.shares, &prices, &params)?;
                write_records(
                    out,
                    &["p_l", "p_a", "eta_l", "eta_a", "branch", "predicted", "candidates", "residual", "consumer_surplus"],
                    [vec![
                        fmt(p_l),
                        fmt(p_a),
                        fmt(eq.shares.eta_l),
                        fmt(eq.shares.eta_a),
                        format!("{:?}", eq.branch),
                        format!("{:?}", eq.predicted),
                        eq.candidates.to_string(),
                        fmt(eq.residual),
                        fmt(cs),
                    ]],
                )?;
            }
        }
        Command::Compete { scheme, trace } => {
            let scheme = CommissionScheme::parse(&scheme)?;
            stage2.trace = trace;
            stage2.diagonal_resolution = Some(0.02);
            let r = solve_stage2(&scheme, &params, &stage2)?;
            if trace {
                let records = r
                    .trace
                    .iter()
                    .enumerate()
                    .map(|(i, s)| vec![i.to_string(), fmt(s.eta_l), fmt(s.eta_a)]);
                write_records(out, &["round", "eta_l", "eta_a"], records)?;
            } else {
                write_records(
                    out,
                    &[
                        "scheme", "value", "eta_l", "eta_a", "p_l", "p_a", "u_sl", "u_db", "rounds", "converged", "foc_licensee",
                        "foc_database", "dominant_diagonal", "interior", "stage3_residual",
                    ],
                    [vec![
                        scheme.kind().label().to_string(),
                        fmt(scheme.value()),
                        fmt(r.shares.eta_l),
                        fmt(r.shares.eta_a),
                        fmt(r.prices.p_l),
                        fmt(r.prices.p_a),
                        fmt(r.payoffs.u_licensee),
                        fmt(r.payoffs.u_database),
                        r.rounds.to_string(),
                        r.converged.to_string(),
                        fmt(r.foc_residuals.0),
                        fmt(r.foc_residuals.1),
                        r.dominant_diagonal_holds.map(|b| b.to_string()).unwrap_or_default(),
                        r.interior.to_string(),
                        fmt(r.stage3_residual),
                    ]],
                )?;
            }
        }
        Command::Bargain { scheme, grid_steps } => {
            let kind = parse_kind(&scheme)?;
            let opts = BargainingOptions {
                grid_steps,
                stage2,
                ..BargainingOptions::default()
            };
            let r = run_three_stage(kind, &params, &opts)?;
            write_records(
                out,
                &[
                    "scheme", "value", "feasible", "nash_product", "eta_l", "eta_a", "p_l", "p_a", "u_sl", "u_db", "u_db0",
                    "consumer_surplus", "social_welfare", "stage2_rounds", "stage3_residual", "stage3_candidates",
                    "certificate_holds",
                ],
                [vec![
                    kind.label().to_string(),
                    fmt(r.scheme.value()),
                    r.feasible.to_string(),
                    fmt(r.nash_product),
                    fmt(r.shares.eta_l),
                    fmt(r.shares.eta_a),
                    fmt(r.prices.p_l),
                    fmt(r.prices.p_a),
                    fmt(r.payoffs.u_licensee),
                    fmt(r.payoffs.u_database),
                    fmt(r.disagreement.u_db0),
                    fmt(r.consumer_surplus),
                    fmt(r.social_welfare),
                    r.stage2_rounds.to_string(),
                    fmt(r.stage3_residual),
                    r.stage3_candidates.to_string(),
                    r.certificate.holds.to_string(),
                ]],
            )?;
        }
        Command::Benchmarks { sensing_g1, c_s } => {
            let sensing = SensingParams { g1: sensing_g1, c_s };
            let opts = BargainingOptions {
                stage2,
                ..BargainingOptions::default()
            };
            let mut records = Vec::new();
            for scheme in SweepScheme::ALL {
                records.push(match solve_scheme(scheme, &params, &sensing, &opts) {
                    Ok(r) => benchmark_record(scheme, &r),
                    Err(e) if e.is_non_convergence() => return Err(e.into()),
                    Err(e) => {
                        let mut row = vec![String::new(); BENCHMARK_COLUMNS.len()];
                        row[0] = scheme.label().to_string();
                        row[BENCHMARK_COLUMNS.len() - 1] = e.to_string();
                        row
                    }
                });
            }
            write_records(out, &BENCHMARK_COLUMNS, records)?;
        }
        Command::Sweep {
            parameter,
            range,
            schemes,
            columns,
            sensing_g1,
            c_s,
        } => {
            let parameter = match parameter.as_str() {
                "lambda" => SweepParameter::Lambda,
                "cost_leasing" => SweepParameter::CostLeasing,
                "cost_sensing" => SweepParameter::CostSensing,
                other => bail!("unknown sweep parameter {other:?}"),
            };
            let (start, stop, step) = SweepSpec::parse_range(&range)?;
            let schemes = if schemes.is_empty() {
                SweepScheme::ALL.to_vec()
            } else {
                schemes.iter().map(|s| SweepScheme::parse(s)).collect::<Result<_>>()?
            };
            let spec = SweepSpec {
                columns: (!columns.is_empty()).then_some(columns),
                sensing: SensingParams { g1: sensing_g1, c_s },
                ..SweepSpec::new(parameter, start, stop, step, schemes)
            };
            let opts = BargainingOptions {
                stage2,
                ..BargainingOptions::default()
            };
            let rows = run_sweep(&spec, &params, &opts)?;
            write_sweep_csv(&rows, spec.columns.as_deref(), out)?;
        }
        Command::Validate => {
            let checks = run_validation_suite(&params, g.seed);
            let failed = checks.iter().filter(|c| !c.passed).count();
            let records = checks
                .iter()
                .map(|c| vec![c.name.to_string(), c.passed.to_string(), c.detail.clone()]);
            write_records(out, &["check", "passed", "detail"], records)?;
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", checks.len());
                return Ok(ExitCode::from(EXIT_VALIDATION));
            }
        }
        Command::McOracle { channels, samples } => {
            let model = InterferenceModel {
                k: channels,
                samples,
                seed: g.seed,
                ..InterferenceModel::default()
            };
            let unlicensed: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
            let advanced: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
            let basic = basic_rate_curve(&model, &unlicensed)?;
            let gain = information_gain_curve(&model, 0.0, &advanced)?;
            let rows = |name: &'static str, curve: Vec<CurvePoint>| {
                curve
                    .into_iter()
                    .map(move |p| vec![name.to_string(), fmt(p.x), fmt(p.y), fmt(p.se)])
            };
            write_records(
                out,
                &["curve", "share", "mean_rate", "stderr"],
                rows("basic_rate", basic).chain(rows("information_gain", gain)),
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_kind(text: &str) -> anyhow::Result<SchemeKind> {
    match text {
        "rss" => Ok(SchemeKind::RevenueShare),
        "wps" => Ok(SchemeKind::Wholesale),
        other => bail!("scheme must be rss or wps, got {other:?}"),
    }
}

const BENCHMARK_COLUMNS: [&str; 16] = [
    "scheme",
    "commission",
    "eta_l",
    "eta_a",
    "eta_s",
    "p_l",
    "p_a",
    "u_sl",
    "u_db",
    "network_profit",
    "consumer_surplus",
    "social_welfare",
    "energy_cost",
    "energy_cost_sensing",
    "stage3_residual",
    "error",
];

fn benchmark_record(scheme: SweepScheme, r: &BenchmarkReport) -> Vec<String> {
    let sensing = matches!(scheme, SweepScheme::Sensing | SweepScheme::SensingWps);
    vec![
        scheme.label().to_string(),
        opt(r.commission),
        fmt(r.shares.eta_l),
        fmt(r.shares.eta_a),
        opt(r.eta_s),
        fmt(r.prices.p_l),
        fmt(r.prices.p_a),
        fmt(r.u_licensee),
        fmt(r.u_database),
        fmt(r.network_profit),
        fmt(r.consumer_surplus),
        fmt(r.social_welfare),
        if sensing { String::new() } else { opt(r.energy_cost) },
        if sensing { opt(r.energy_cost) } else { String::new() },
        fmt(r.stage3_residual),
        String::new(),
    ]
}
