//! Reference market structures and welfare/energy accounting.

use serde::{Deserialize, Serialize};

use crate::bargaining::{disagreement_point, solve_bargaining, BargainingOptions, BargainingOutcome};
use crate::competition::{payoffs_unchecked, shares_to_prices, solve_stage2, FirmPayoffs, Stage2Options};
use crate::dynamics::{consumer_surplus, fixed_point_residual};
use crate::error::{MarketError, Result};
use crate::model::{CommissionScheme, MarketShare, ModelParams, PriceProfile, SchemeKind};
use crate::search::{bisect, golden_max, grid_golden_max, linspace};

pub const DEFAULT_COORDINATION_GRID: usize = 401;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub scheme_name: String,
    pub commission: Option<f64>,
    pub shares: MarketShare,
    pub prices: PriceProfile,
    pub u_licensee: f64,
    pub u_database: f64,
    pub network_profit: f64,
    pub consumer_surplus: f64,
    pub social_welfare: f64,
    /// Advanced-information energy for the integrated market, sensing
    /// energy for the sensing market.
    pub energy_cost: Option<f64>,
    /// Share of self-sensing users (sensing market only).
    pub eta_s: Option<f64>,
    /// User-dynamics fixed-point residual at the reported shares and prices.
    pub stage3_residual: f64,
}

impl BenchmarkReport {
    fn new(name: &str, commission: Option<f64>, shares: MarketShare, prices: PriceProfile, payoffs: FirmPayoffs, cs: f64) -> Self {
        BenchmarkReport {
            stage3_residual: f64::NAN,
            scheme_name: name.to_string(),
            commission,
            shares,
            prices,
            u_licensee: payoffs.u_licensee,
            u_database: payoffs.u_database,
            network_profit: payoffs.u_licensee + payoffs.u_database,
            consumer_surplus: cs,
            social_welfare: social_welfare(&payoffs, cs),
            energy_cost: None,
            eta_s: None,
        }
    }
}

/// Firm profits plus consumer surplus; commission transfers cancel.
pub fn social_welfare(payoffs: &FirmPayoffs, consumer_surplus: f64) -> f64 {
    payoffs.u_licensee + payoffs.u_database + consumer_surplus
}

fn joint_profit(eta_l: f64, eta_a: f64, params: &ModelParams) -> f64 {
    payoffs_unchecked(eta_l, eta_a, &CommissionScheme::RevenueShare(0.0), params).network_profit()
}

/// Database and licensee acting as one firm, maximizing joint profit over
/// the share simplex: an `n x n` lattice followed by successive zoomed
/// lattices around the incumbent.
pub fn coordination_optimum(params: &ModelParams, n: usize) -> Result<BenchmarkReport> {
    let n = n.max(11);
    let step = 1.0 / (n - 1) as f64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..n {
        let l = i as f64 * step;
        for j in 0..(n - i) {
            let a = (j as f64 * step).min(1.0 - l);
            let v = joint_profit(l, a, params);
            if v > best.0 {
                best = (v, l, a);
            }
        }
    }
    let mut half = 2.0 * step;
    while half > 1e-12 {
        let (_, cl, ca) = best;
        for l in linspace((cl - half).max(0.0), (cl + half).min(1.0), 21) {
            for a in linspace((ca - half).max(0.0), (ca + half).min(1.0 - l).max(0.0), 21) {
                if l + a > 1.0 {
                    continue;
                }
                let v = joint_profit(l, a, params);
                if v > best.0 {
                    best = (v, l, a);
                }
            }
        }
        half *= 0.2;
    }
    let shares = MarketShare::new(best.1, best.2);
    let prices = shares_to_prices(&shares, params)?;
    let payoffs = payoffs_unchecked(shares.eta_l, shares.eta_a, &CommissionScheme::RevenueShare(0.0), params);
    let cs = consumer_surplus(&shares, &prices, params)?;
    let mut r = BenchmarkReport::new("coordination", None, shares, prices, payoffs, cs);
    r.stage3_residual = fixed_point_residual(&shares, &prices, params)?;
    r.energy_cost = Some(shares.eta_a * params.cost_advanced);
    Ok(r)
}

/// The database alone, selling information with no leasing on offer. The
/// profit is the bargaining fallback computed by the same code path.
pub fn pure_information_market(params: &ModelParams, cost_adjusted: bool) -> Result<BenchmarkReport> {
    let d = disagreement_point(params, cost_adjusted);
    let shares = MarketShare::new(0.0, d.eta_a);
    // Leasing at Q_L is never strictly preferred to basic service.
    let prices = PriceProfile::new(params.q_leasing, d.p_a);
    let r_b = params.f(1.0);
    let r_a = r_b + params.g(d.eta_a);
    let a = (1.0 - d.eta_a).clamp(0.0, 1.0);
    let cs = r_b * a * a / 2.0 + r_a * (1.0 - a * a) / 2.0 - d.p_a * (1.0 - a);
    let payoffs = FirmPayoffs {
        u_licensee: 0.0,
        u_database: d.u_db0,
    };
    let mut r = BenchmarkReport::new("pure_info", None, shares, prices, payoffs, cs);
    r.stage3_residual = fixed_point_residual(&shares, &prices, params)?;
    r.energy_cost = Some(d.eta_a * params.cost_advanced);
    Ok(r)
}

/// Price competition with the database listing licensed channels for free.
pub fn third_party_scheme(params: &ModelParams, opts: &Stage2Options) -> Result<BenchmarkReport> {
    let s = solve_stage2(&CommissionScheme::RevenueShare(0.0), params, opts)?;
    let cs = consumer_surplus(&s.shares, &s.prices, params)?;
    let mut r = BenchmarkReport::new("third_party", Some(0.0), s.shares, s.prices, s.payoffs, cs);
    r.stage3_residual = s.stage3_residual;
    r.energy_cost = Some(s.shares.eta_a * params.cost_advanced);
    Ok(r)
}

/// Report for a bargained scheme; a failed negotiation falls back to the
/// information-only market.
pub fn bargained_report(outcome: &BargainingOutcome, params: &ModelParams, opts: &BargainingOptions) -> Result<BenchmarkReport> {
    let name = outcome.scheme.kind().label();
    match &outcome.stage2 {
        Some(s) => {
            let cs = consumer_surplus(&s.shares, &s.prices, params)?;
            let mut r = BenchmarkReport::new(name, Some(outcome.scheme.value()), s.shares, s.prices, s.payoffs, cs);
            r.stage3_residual = s.stage3_residual;
            r.energy_cost = Some(s.shares.eta_a * params.cost_advanced);
            Ok(r)
        }
        None => {
            let mut r = pure_information_market(params, opts.cost_adjusted_disagreement)?;
            r.scheme_name = name.to_string();
            Ok(r)
        }
    }
}

pub fn bargained_scheme(kind: SchemeKind, params: &ModelParams, opts: &BargainingOptions) -> Result<BenchmarkReport> {
    let outcome = solve_bargaining(kind, params, opts)?;
    bargained_report(&outcome, params, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingParams {
    /// Constant utility gain from sensing, `R_S = f + g1`.
    pub g1: f64,
    /// Per-user sensing energy cost.
    pub c_s: f64,
}

impl Default for SensingParams {
    fn default() -> Self {
        SensingParams { g1: 2.0, c_s: 0.2 }
    }
}

impl SensingParams {
    /// `Q_L > R_S > R_B` for every share.
    pub fn check(&self, params: &ModelParams) -> Result<()> {
        if !(self.g1 > 0.0) {
            return Err(MarketError::SensingOrdering(format!("g1 = {} must be positive", self.g1)));
        }
        if !(self.c_s >= 0.0 && self.c_s.is_finite()) {
            return Err(MarketError::domain("c_s", self.c_s, "[0, inf)"));
        }
        let top = params.alpha1 + self.g1;
        if !(params.q_leasing > top) {
            return Err(MarketError::SensingOrdering(format!(
                "Q_L = {} does not exceed max R_S = {top}",
                params.q_leasing
            )));
        }
        Ok(())
    }
}

/// Shares of a sensing market at leasing price `p_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensingShares {
    pub eta_l: f64,
    pub eta_s: f64,
    pub theta_lb: f64,
    pub theta_sb: f64,
    pub theta_ls: f64,
    /// The raw sensing share had to be clipped into the simplex.
    pub clipped: bool,
    pub residual: f64,
}

fn sensing_thresholds(eta_l: f64, p_l: f64, params: &ModelParams, s: &SensingParams) -> (f64, f64, f64) {
    let r_b = params.f(1.0 - eta_l);
    let q = params.q_leasing;
    (p_l / (q - r_b), s.c_s / s.g1, (p_l - s.c_s) / (q - r_b - s.g1))
}

fn sensing_update(t: (f64, f64, f64)) -> (f64, f64, bool) {
    let (lb, sb, ls) = t;
    let eta_l = (1.0 - ls.max(lb)).clamp(0.0, 1.0);
    let raw = (ls.min(1.0) - sb).max(0.0);
    let cap = 1.0 - eta_l;
    (eta_l, raw.min(cap), raw > cap + 1e-12)
}

/// User equilibrium of the sensing market for a given leasing price. Only
/// the leasing share feeds back into utilities, so a scalar bisection on the
/// leasing fixed point suffices.
pub fn sensing_stage3(p_l: f64, params: &ModelParams, sensing: &SensingParams) -> Result<SensingShares> {
    sensing.check(params)?;
    if !(p_l >= 0.0 && p_l.is_finite()) {
        return Err(MarketError::domain("p_l", p_l, "[0, inf)"));
    }
    let residual = |eta_l: f64| eta_l - sensing_update(sensing_thresholds(eta_l, p_l, params, sensing)).0;
    let eta_l = bisect(residual, 0.0, 1.0, 1e-15, 200)?;
    let t = sensing_thresholds(eta_l, p_l, params, sensing);
    let (next_l, eta_s, clipped) = sensing_update(t);
    Ok(SensingShares {
        residual: (next_l - eta_l).abs(),
        eta_l,
        eta_s,
        theta_lb: t.0,
        theta_sb: t.1,
        theta_ls: t.2,
        clipped,
    })
}

/// Leasing price that makes `1 - eta_l` the marginal leasing type.
fn sensing_price(eta_l: f64, params: &ModelParams, s: &SensingParams) -> f64 {
    let theta = 1.0 - eta_l;
    let f = params.f(theta);
    theta * params.q_leasing - (theta * (f + s.g1) - s.c_s).max(theta * f)
}

fn sensing_surplus(sh: &SensingShares, p_l: f64, params: &ModelParams, s: &SensingParams) -> f64 {
    let r_b = params.f(1.0 - sh.eta_l);
    let r_s = r_b + s.g1;
    let q = params.q_leasing;
    if sh.eta_s > 0.0 {
        let a = sh.theta_sb.clamp(0.0, 1.0);
        let l = sh.theta_ls.clamp(0.0, 1.0);
        r_b * a * a / 2.0 + r_s * (l * l - a * a) / 2.0 - s.c_s * (l - a) + q * (1.0 - l * l) / 2.0 - p_l * (1.0 - l)
    } else {
        let b = sh.theta_lb.clamp(0.0, 1.0);
        r_b * b * b / 2.0 + q * (1.0 - b * b) / 2.0 - p_l * (1.0 - b)
    }
}

fn sensing_payoffs(eta_l: f64, p_l: f64, params: &ModelParams, scheme: &CommissionScheme) -> FirmPayoffs {
    let margin = (p_l - params.cost_leasing) * eta_l;
    match *scheme {
        CommissionScheme::RevenueShare(d) => FirmPayoffs {
            u_licensee: margin * (1.0 - d),
            u_database: margin * d,
        },
        CommissionScheme::Wholesale(w) => FirmPayoffs {
            u_licensee: margin - w * eta_l,
            u_database: w * eta_l,
        },
    }
}

/// The licensee alone sets the leasing price, chosen in share space.
fn sensing_stage2(scheme: &CommissionScheme, params: &ModelParams, s: &SensingParams, grid_points: usize) -> (f64, f64) {
    let fee = match *scheme {
        CommissionScheme::RevenueShare(_) => 0.0,
        CommissionScheme::Wholesale(w) => w,
    };
    let objective = |eta_l: f64| (sensing_price(eta_l, params, s) - params.cost_leasing - fee) * eta_l;
    let m = grid_golden_max(objective, 0.0, 1.0, grid_points, 1e-13);
    (m.x, sensing_price(m.x, params, s))
}

/// Sensing-market benchmark: users may sense channels themselves at cost
/// `c_s`; the database only brokers leases and bargains over the commission
/// with a zero fallback for both sides.
pub fn sensing_market_equilibrium(
    params: &ModelParams,
    sensing: &SensingParams,
    kind: SchemeKind,
    opts: &BargainingOptions,
) -> Result<BenchmarkReport> {
    sensing.check(params)?;
    let n = opts.stage2.grid_points.max(11);
    let product = |x: f64| {
        let scheme = kind.with_value(x);
        let (eta_l, p_l) = sensing_stage2(&scheme, params, sensing, n);
        let u = sensing_payoffs(eta_l, p_l, params, &scheme);
        if u.u_licensee >= 0.0 && u.u_database >= 0.0 {
            u.u_licensee * u.u_database
        } else {
            f64::NEG_INFINITY
        }
    };
    let hi = kind.upper_bound(params);
    let xs = linspace(0.0, hi, opts.grid_steps.max(11));
    let values: Vec<f64> = xs.iter().map(|&x| product(x)).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    let x = if values[best].is_finite() {
        let lo = xs[best.saturating_sub(1)];
        let up = xs[(best + 1).min(xs.len() - 1)];
        let m = golden_max(product, lo, up, 1e-10 * hi);
        if m.value > values[best] {
            m.x
        } else {
            xs[best]
        }
    } else {
        0.0
    };
    let scheme = kind.with_value(x);
    let (eta_l, p_l) = sensing_stage2(&scheme, params, sensing, n);
    let sh = sensing_stage3(p_l, params, sensing)?;
    let payoffs = sensing_payoffs(sh.eta_l, p_l, params, &scheme);
    let cs = sensing_surplus(&sh, p_l, params, sensing);
    let shares = MarketShare::new(eta_l, 0.0);
    let mut r = BenchmarkReport::new("sensing", Some(x), shares, PriceProfile::new(p_l, 0.0), payoffs, cs);
    r.shares.eta_l = sh.eta_l;
    r.eta_s = Some(sh.eta_s);
    r.stage3_residual = sh.residual;
    r.energy_cost = Some(sh.eta_s * sensing.c_s);
    Ok(r)
}

/// `(eta_a c_a, eta_s c_s)`.
pub fn energy_cost_comparison(
    integrated_shares: &MarketShare,
    sensing: &BenchmarkReport,
    params: &ModelParams,
    sensing_params: &SensingParams,
) -> (f64, f64) {
    (
        integrated_shares.eta_a * params.cost_advanced,
        sensing.eta_s.unwrap_or(0.0) * sensing_params.c_s,
    )
}
