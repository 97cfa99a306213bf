//! End-to-end runs, parameter sweeps and CSV output.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bargaining::{solve_bargaining, BargainingOptions, Disagreement};
use crate::benchmarks::{
    bargained_report, coordination_optimum, pure_information_market, sensing_market_equilibrium, third_party_scheme,
    BenchmarkReport, SensingParams, DEFAULT_COORDINATION_GRID,
};
use crate::competition::{solve_stage2, FirmPayoffs, Stage2Options};
use crate::dynamics::{
    consumer_surplus, iterate_dynamics, solve_equilibrium, uniqueness_certificate, Branch, UniquenessCertificate,
};
use crate::error::{MarketError, Result};
use crate::model::{CommissionScheme, MarketShare, ModelParams, PriceProfile, SchemeKind, ServiceChoice, ServiceUtilities};
use crate::validation::{agent_based_equilibrium, grid_nash_oracle, information_gain_curve, shape_checks, Curvature, InterferenceModel, Trend};

pub const CSV_SCHEMA: &str = "# tvws-market csv schema v1";

/// Consolidated result of a bargained three-stage solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub scheme: CommissionScheme,
    /// A commission both firms accept exists.
    pub feasible: bool,
    pub shares: MarketShare,
    pub prices: PriceProfile,
    pub payoffs: FirmPayoffs,
    pub consumer_surplus: f64,
    pub social_welfare: f64,
    pub nash_product: f64,
    pub disagreement: Disagreement,
    pub stage2_rounds: usize,
    pub interior: bool,
    /// Distance between the competition shares and an independent user
    /// equilibrium solve at the resulting prices. Nonzero only when the
    /// prices admit several user equilibria.
    pub stage3_gap: f64,
    /// Number of user equilibria at the resulting prices.
    pub stage3_candidates: usize,
    pub stage3_residual: f64,
    pub branch: Branch,
    pub certificate: UniquenessCertificate,
}

/// Bargaining, then price competition at the agreed commission, then the
/// user equilibrium at the resulting prices.
pub fn run_three_stage(kind: SchemeKind, params: &ModelParams, opts: &BargainingOptions) -> Result<EquilibriumReport> {
    let outcome = solve_bargaining(kind, params, opts).map_err(|e| e.in_stage("stage I"))?;
    let report = bargained_report(&outcome, params, opts).map_err(|e| e.in_stage("stage I"))?;
    let (rounds, interior) = match &outcome.stage2 {
        Some(s) => (s.rounds, s.interior),
        None => (0, false),
    };
    let eq = solve_equilibrium(&report.prices, params, 1e-12).map_err(|e| e.in_stage("stage III"))?;
    let certificate = uniqueness_certificate(&report.prices, params, 0.01).map_err(|e| e.in_stage("stage III"))?;
    Ok(EquilibriumReport {
        scheme: outcome.scheme,
        feasible: outcome.feasible,
        shares: report.shares,
        prices: report.prices,
        payoffs: FirmPayoffs {
            u_licensee: report.u_licensee,
            u_database: report.u_database,
        },
        consumer_surplus: report.consumer_surplus,
        social_welfare: report.social_welfare,
        nash_product: outcome.nash_product,
        disagreement: outcome.disagreement,
        stage2_rounds: rounds,
        interior,
        stage3_gap: eq.shares.distance(&report.shares),
        stage3_candidates: eq.candidates,
        stage3_residual: report.stage3_residual,
        branch: eq.branch,
        certificate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Lambda,
    CostLeasing,
    CostSensing,
}

impl SweepParameter {
    pub fn label(self) -> &'static str {
        match self {
            SweepParameter::Lambda => "lambda",
            SweepParameter::CostLeasing => "cost_leasing",
            SweepParameter::CostSensing => "cost_sensing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepScheme {
    Rss,
    Wps,
    Coordination,
    PureInfo,
    ThirdParty,
    /// Sensing market bargaining under revenue sharing.
    Sensing,
    SensingWps,
}

impl SweepScheme {
    pub const ALL: [SweepScheme; 7] = [
        SweepScheme::Rss,
        SweepScheme::Wps,
        SweepScheme::Coordination,
        SweepScheme::PureInfo,
        SweepScheme::ThirdParty,
        SweepScheme::Sensing,
        SweepScheme::SensingWps,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SweepScheme::Rss => "rss",
            SweepScheme::Wps => "wps",
            SweepScheme::Coordination => "coordination",
            SweepScheme::PureInfo => "pure_info",
            SweepScheme::ThirdParty => "third_party",
            SweepScheme::Sensing => "sensing",
            SweepScheme::SensingWps => "sensing_wps",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        SweepScheme::ALL
            .into_iter()
            .find(|s| s.label() == text)
            .ok_or_else(|| MarketError::Config(format!("unknown scheme {text:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub schemes: Vec<SweepScheme>,
    /// Output columns; all columns when absent.
    #[serde(default)]
    pub columns: Option<Vec<String>>,
    #[serde(default)]
    pub sensing: SensingParams,
}

impl SweepSpec {
    pub fn new(parameter: SweepParameter, start: f64, stop: f64, step: f64, schemes: Vec<SweepScheme>) -> Self {
        SweepSpec {
            parameter,
            start,
            stop,
            step,
            schemes,
            columns: None,
            sensing: SensingParams::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.start < self.stop && self.step > 0.0 && self.start.is_finite() && self.stop.is_finite()) {
            return Err(MarketError::Config(format!(
                "sweep range {}:{}:{} needs start < stop and step > 0",
                self.start, self.stop, self.step
            )));
        }
        if self.schemes.is_empty() {
            return Err(MarketError::Config("sweep needs at least one scheme".into()));
        }
        if let Some(cols) = &self.columns {
            if let Some(bad) = cols.iter().find(|c| !SweepRow::COLUMNS.contains(&c.as_str())) {
                return Err(MarketError::Config(format!("unknown column {bad:?}")));
            }
        }
        Ok(())
    }

    /// Grid values; rounded to 12 decimals so that `0.1 * 3` prints as `0.3`.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }

    /// Parses `start:stop:step`.
    pub fn parse_range(text: &str) -> Result<(f64, f64, f64)> {
        let parts: Vec<&str> = text.split(':').collect();
        let nums: std::result::Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
        match nums.as_deref() {
            Ok([a, b, c]) => Ok((*a, *b, *c)),
            _ => Err(MarketError::Config(format!("expected start:stop:step, got {text:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: f64,
    pub scheme: &'static str,
    pub delta_or_w: Option<f64>,
    pub eta_l: Option<f64>,
    pub eta_a: Option<f64>,
    pub eta_s: Option<f64>,
    pub p_l: Option<f64>,
    pub p_a: Option<f64>,
    pub u_sl: Option<f64>,
    pub u_db: Option<f64>,
    pub network_profit: Option<f64>,
    pub consumer_surplus: Option<f64>,
    pub social_welfare: Option<f64>,
    pub energy_cost: Option<f64>,
    pub converged: bool,
    pub stage3_residual: Option<f64>,
    /// Uniqueness certificate at the row's prices; empty for the sensing
    /// market, which has no information price.
    pub certificate_holds: Option<bool>,
    pub error: Option<String>,
}

impl SweepRow {
    pub const COLUMNS: [&'static str; 19] = [
        "parameter",
        "value",
        "scheme",
        "delta_or_w",
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
        "converged",
        "stage3_residual",
        "certificate_holds",
        "error",
    ];

    fn from_report(parameter: &'static str, value: f64, scheme: &'static str, r: &BenchmarkReport) -> Self {
        SweepRow {
            parameter,
            value,
            scheme,
            delta_or_w: r.commission,
            eta_l: Some(r.shares.eta_l),
            eta_a: Some(r.shares.eta_a),
            eta_s: r.eta_s,
            p_l: Some(r.prices.p_l),
            p_a: Some(r.prices.p_a),
            u_sl: Some(r.u_licensee),
            u_db: Some(r.u_database),
            network_profit: Some(r.network_profit),
            consumer_surplus: Some(r.consumer_surplus),
            social_welfare: Some(r.social_welfare),
            energy_cost: r.energy_cost,
            converged: true,
            stage3_residual: Some(r.stage3_residual),
            certificate_holds: None,
            error: None,
        }
    }

    fn failed(parameter: &'static str, value: f64, scheme: &'static str, e: &MarketError) -> Self {
        SweepRow {
            parameter,
            value,
            scheme,
            delta_or_w: None,
            eta_l: None,
            eta_a: None,
            eta_s: None,
            p_l: None,
            p_a: None,
            u_sl: None,
            u_db: None,
            network_profit: None,
            consumer_surplus: None,
            social_welfare: None,
            energy_cost: None,
            converged: !e.is_non_convergence(),
            stage3_residual: None,
            certificate_holds: None,
            error: Some(e.to_string()),
        }
    }

    fn cell(&self, column: &str) -> String {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        match column {
            "parameter" => self.parameter.to_string(),
            "value" => self.value.to_string(),
            "scheme" => self.scheme.to_string(),
            "delta_or_w" => num(self.delta_or_w),
            "eta_l" => num(self.eta_l),
            "eta_a" => num(self.eta_a),
            "eta_s" => num(self.eta_s),
            "p_l" => num(self.p_l),
            "p_a" => num(self.p_a),
            "u_sl" => num(self.u_sl),
            "u_db" => num(self.u_db),
            "network_profit" => num(self.network_profit),
            "consumer_surplus" => num(self.consumer_surplus),
            "social_welfare" => num(self.social_welfare),
            "energy_cost" => num(self.energy_cost),
            "converged" => self.converged.to_string(),
            "stage3_residual" => num(self.stage3_residual),
            "certificate_holds" => self.certificate_holds.map(|b| b.to_string()).unwrap_or_default(),
            "error" => self.error.clone().unwrap_or_default(),
            other => unreachable!("unknown column {other}"),
        }
    }
}

/// Parameters at one sweep point.
pub fn sweep_point(parameter: SweepParameter, value: f64, base: &ModelParams, sensing: &SensingParams) -> (ModelParams, SensingParams) {
    let mut p = *base;
    let mut s = *sensing;
    match parameter {
        SweepParameter::Lambda => p = p.with_lambda(value),
        SweepParameter::CostLeasing => p.cost_leasing = value,
        SweepParameter::CostSensing => s.c_s = value,
    }
    (p, s)
}

/// Solves one scheme at fixed parameters.
pub fn solve_scheme(scheme: SweepScheme, params: &ModelParams, sensing: &SensingParams, opts: &BargainingOptions) -> Result<BenchmarkReport> {
    match scheme {
        SweepScheme::Rss | SweepScheme::Wps => {
            let kind = if scheme == SweepScheme::Rss {
                SchemeKind::RevenueShare
            } else {
                SchemeKind::Wholesale
            };
            let outcome = solve_bargaining(kind, params, opts)?;
            bargained_report(&outcome, params, opts)
        }
        SweepScheme::Coordination => coordination_optimum(params, DEFAULT_COORDINATION_GRID),
        SweepScheme::PureInfo => pure_information_market(params, opts.cost_adjusted_disagreement),
        SweepScheme::ThirdParty => third_party_scheme(params, &opts.stage2),
        SweepScheme::Sensing => sensing_market_equilibrium(params, sensing, SchemeKind::RevenueShare, opts),
        SweepScheme::SensingWps => sensing_market_equilibrium(params, sensing, SchemeKind::Wholesale, opts),
    }
}

/// Runs every (value, scheme) pair; rows come back in grid order then scheme
/// order no matter how the work is scheduled. Failures become rows with the
/// `error` column set.
pub fn run_sweep(spec: &SweepSpec, params: &ModelParams, opts: &BargainingOptions) -> Result<Vec<SweepRow>> {
    spec.check()?;
    let tasks: Vec<(f64, SweepScheme)> = spec
        .values()
        .into_iter()
        .flat_map(|v| spec.schemes.iter().map(move |s| (v, *s)))
        .collect();
    let label = spec.parameter.label();
    Ok(tasks
        .par_iter()
        .map(|&(v, scheme)| {
            let (p, s) = sweep_point(spec.parameter, v, params, &spec.sensing);
            match solve_scheme(scheme, &p, &s, opts) {
                Ok(r) => {
                    let mut row = SweepRow::from_report(label, v, scheme.label(), &r);
                    if !matches!(scheme, SweepScheme::Sensing | SweepScheme::SensingWps) {
                        row.certificate_holds = uniqueness_certificate(&r.prices, &p, 0.01).ok().map(|c| c.holds);
                    }
                    row
                }
                Err(e) => SweepRow::failed(label, v, scheme.label(), &e),
            }
        })
        .collect())
}

/// Writes the schema line, a header and one record per row.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], columns: Option<&[String]>, out: W) -> Result<()> {
    let cols: Vec<&str> = match columns {
        Some(c) => c.iter().map(String::as_str).collect(),
        None => SweepRow::COLUMNS.to_vec(),
    };
    write_records(out, &cols, rows.iter().map(|r| cols.iter().map(|c| r.cell(c)).collect()))
}

/// Writes a schema comment, header and string records.
pub fn write_records<W: Write, I>(mut out: W, header: &[&str], records: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let io = |e: std::io::Error| MarketError::Config(format!("write failed: {e}"));
    writeln!(out, "{CSV_SCHEMA}").map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| MarketError::Config(format!("write failed: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in records {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Mean best-response payoff over `n` stratified uniform types.
pub fn sampled_consumer_surplus<R: Rng>(shares: &MarketShare, prices: &PriceProfile, params: &ModelParams, n: usize, rng: &mut R) -> f64 {
    let u = ServiceUtilities::at(shares, params);
    let mut total = 0.0;
    for i in 0..n {
        let theta = (i as f64 + rng.gen::<f64>()) / n as f64;
        let best = [ServiceChoice::Basic, ServiceChoice::Advanced, ServiceChoice::Leasing]
            .iter()
            .map(|c| u.payoff(theta, *c, prices))
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    total / n as f64
}

/// Reduced-size cross-checks of every solver against its oracle.
pub fn run_validation_suite(params: &ModelParams, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |name: &'static str, r: Result<(bool, String)>| {
        out.push(match r {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
    };

    let prices: Vec<PriceProfile> = (0..20)
        .map(|_| PriceProfile::new(rng.gen_range(0.5..4.0), rng.gen_range(0.05..0.8)))
        .collect();

    record("fixed_point", (|| {
        let mut worst: f64 = 0.0;
        for p in &prices {
            worst = worst.max(solve_equilibrium(p, params, 1e-12)?.residual);
        }
        Ok((worst <= 1e-8, format!("max residual {worst:e}")))
    })());

    record("agents_vs_solver", (|| {
        let mut worst: f64 = 0.0;
        for p in prices.iter().take(5) {
            let eq = solve_equilibrium(p, params, 1e-12)?;
            let agents = agent_based_equilibrium(100_000, p, params, 10_000)?;
            worst = worst.max(agents.distance(&eq.shares));
        }
        Ok((worst <= 5e-3, format!("max gap {worst:e}")))
    })());

    record("multi_start", (|| {
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        for p in &prices {
            if !uniqueness_certificate(p, params, 0.02)?.holds {
                continue;
            }
            checked += 1;
            let eq = solve_equilibrium(p, params, 1e-12)?;
            for _ in 0..10 {
                let l: f64 = rng.gen();
                let a = rng.gen::<f64>() * (1.0 - l);
                let tr = iterate_dynamics(MarketShare::new(l, a), p, params, 1e-12, 100_000)?;
                worst = worst.max(tr.terminal().distance(&eq.shares));
            }
        }
        Ok((worst <= 1e-6, format!("{checked} certified price points, max gap {worst:e}")))
    })());

    record("consumer_surplus", (|| {
        let mut worst: f64 = 0.0;
        for p in prices.iter().take(5) {
            let eq = solve_equilibrium(p, params, 1e-12)?;
            let exact = consumer_surplus(&eq.shares, p, params)?;
            worst = worst.max((exact - sampled_consumer_surplus(&eq.shares, p, params, 100_000, &mut rng)).abs());
        }
        Ok((worst <= 1e-3, format!("max gap {worst:e}")))
    })());

    record("stage2_vs_grid_oracle", (|| {
        let mut worst: f64 = 0.0;
        for scheme in [CommissionScheme::RevenueShare(0.3), CommissionScheme::Wholesale(0.5)] {
            let s = solve_stage2(&scheme, params, &Stage2Options::default())?;
            let o = grid_nash_oracle(&scheme, params, 1e-3)?;
            worst = worst.max(s.shares.distance(&o));
        }
        Ok((worst <= 2e-3, format!("max gap {worst:e}")))
    })());

    record("information_gain_shape", (|| {
        let model = InterferenceModel {
            samples: 200_000,
            seed,
            ..InterferenceModel::default()
        };
        let xs: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let curve = information_gain_curve(&model, 0.0, &xs)?;
        let r = shape_checks(&curve, Trend::Increasing, Curvature::Concave)?;
        Ok((r.clean(), format!("{r:?}")))
    })());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_values_are_clean() {
        let s = SweepSpec::new(SweepParameter::Lambda, 0.4, 1.8, 0.1, vec![SweepScheme::Rss]);
        let v = s.values();
        assert_eq!(v.len(), 15);
        assert_eq!(v[3], 0.7);
        assert_eq!(*v.last().unwrap(), 1.8);
        assert!(SweepSpec::new(SweepParameter::Lambda, 1.0, 0.5, 0.1, vec![SweepScheme::Rss]).check().is_err());
        assert!(SweepSpec::new(SweepParameter::Lambda, 0.0, 0.5, 0.1, vec![]).check().is_err());
    }

    #[test]
    fn range_parsing() {
        assert_eq!(SweepSpec::parse_range("0.4:1.8:0.1").unwrap(), (0.4, 1.8, 0.1));
        assert!(SweepSpec::parse_range("0.4:1.8").is_err());
    }

    #[test]
    fn sweep_point_variants() {
        let base = ModelParams::default();
        let s = SensingParams::default();
        assert_eq!(sweep_point(SweepParameter::Lambda, 0.5, &base, &s).0.beta2, 0.5);
        assert_eq!(sweep_point(SweepParameter::CostLeasing, 1.2, &base, &s).0.cost_leasing, 1.2);
        assert_eq!(sweep_point(SweepParameter::CostSensing, 0.1, &base, &s).1.c_s, 0.1);
    }

    #[test]
    fn csv_has_schema_and_column_selection() {
        let spec = SweepSpec::new(SweepParameter::Lambda, 1.0, 1.2, 0.2, vec![SweepScheme::PureInfo, SweepScheme::Coordination]);
        let rows = run_sweep(&spec, &ModelParams::default(), &BargainingOptions::default()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].scheme, "pure_info");
        assert_eq!(rows[1].scheme, "coordination");
        let mut buf = Vec::new();
        let cols = vec!["value".to_string(), "scheme".to_string(), "u_db".to_string()];
        write_sweep_csv(&rows, Some(&cols), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_SCHEMA));
        assert_eq!(lines.next(), Some("value,scheme,u_db"));
        assert!(lines.next().unwrap().starts_with("1,pure_info,"));
    }

    #[test]
    fn failed_rows_keep_the_sweep_going() {
        let spec = SweepSpec {
            sensing: SensingParams { g1: 9.0, c_s: 0.1 },
            ..SweepSpec::new(SweepParameter::CostSensing, 0.0, 0.1, 0.1, vec![SweepScheme::Sensing, SweepScheme::PureInfo])
        };
        let rows = run_sweep(&spec, &ModelParams::default(), &BargainingOptions::default()).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].error.as_deref().unwrap().contains("sensing"));
        assert!(rows[1].error.is_none());
    }
}
