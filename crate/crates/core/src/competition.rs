//! Price competition between the licensee and the database, solved in share
//! space.
//!
//! Each price pair maps one-to-one onto the equilibrium shares it induces, so
//! the firms can be treated as choosing `eta_l` and `eta_a` directly with
//! prices recovered by [`shares_to_prices`].

use serde::Serialize;

use crate::dynamics::fixed_point_residual;
use crate::error::{MarketError, Result};
use crate::model::{CommissionScheme, MarketShare, ModelParams, PriceProfile, SHARE_EPS};
use crate::search::{grid_refined_max, Maximum};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ROUNDS: usize = 10_000;
pub const DEFAULT_GRID_POINTS: usize = 2001;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirmPayoffs {
    pub u_licensee: f64,
    pub u_database: f64,
}

impl FirmPayoffs {
    pub fn network_profit(&self) -> f64 {
        self.u_licensee + self.u_database
    }
}

/// `p_a = eta_b * g(eta_a)`, `p_l = (1 - eta_l)(Q_L - f - g) + p_a`, which is
/// the usual single-breakpoint inverse when `eta_a = 0`.
pub fn shares_to_prices(shares: &MarketShare, params: &ModelParams) -> Result<PriceProfile> {
    shares.check()?;
    Ok(prices_unchecked(shares.eta_l, shares.eta_a, params))
}

#[inline]
fn prices_unchecked(eta_l: f64, eta_a: f64, params: &ModelParams) -> PriceProfile {
    let g = params.g(eta_a);
    let p_a = (1.0 - eta_l - eta_a) * g;
    let p_l = (1.0 - eta_l) * (params.q_leasing - params.f(1.0 - eta_l) - g) + p_a;
    PriceProfile { p_l, p_a }
}

/// `eta_a * g'(eta_a)`, finite at zero.
#[inline]
fn eta_g_slope(eta_a: f64, params: &ModelParams) -> f64 {
    params.gamma2 * (params.beta2 - params.alpha2) * eta_a.max(0.0).powf(params.gamma2)
}

/// `eta_l (1 - eta_l) f'(1 - eta_l)`, finite at both ends.
#[inline]
fn congestion_slope_term(eta_l: f64, params: &ModelParams) -> f64 {
    -params.beta1 * params.gamma1 * eta_l * (1.0 - eta_l).max(0.0).powf(params.gamma1)
}

#[inline]
pub(crate) fn payoffs_unchecked(eta_l: f64, eta_a: f64, scheme: &CommissionScheme, params: &ModelParams) -> FirmPayoffs {
    let p = prices_unchecked(eta_l, eta_a, params);
    let info = (p.p_a - params.cost_advanced) * eta_a;
    match *scheme {
        CommissionScheme::RevenueShare(delta) => {
            let leasing = (p.p_l - params.cost_leasing) * eta_l;
            FirmPayoffs {
                u_licensee: leasing * (1.0 - delta),
                u_database: info + leasing * delta,
            }
        }
        CommissionScheme::Wholesale(w) => FirmPayoffs {
            u_licensee: (p.p_l - w - params.cost_leasing) * eta_l,
            u_database: info + w * eta_l,
        },
    }
}

pub fn firm_payoffs(shares: &MarketShare, scheme: &CommissionScheme, params: &ModelParams) -> Result<FirmPayoffs> {
    shares.check()?;
    Ok(payoffs_unchecked(shares.eta_l, shares.eta_a, scheme, params))
}

/// Per-lease margin excluding the revenue share, which only rescales the
/// licensee objective.
#[inline]
fn licensee_margin(scheme: &CommissionScheme) -> f64 {
    match *scheme {
        CommissionScheme::RevenueShare(_) => 0.0,
        CommissionScheme::Wholesale(w) => w,
    }
}

/// `d/d eta_l` of `(p_l - c_l - w) eta_l`.
#[inline]
fn licensee_slope(eta_l: f64, eta_a: f64, scheme: &CommissionScheme, params: &ModelParams) -> f64 {
    (1.0 - 2.0 * eta_l) * (params.q_leasing - params.f(1.0 - eta_l)) + congestion_slope_term(eta_l, params)
        - eta_a * params.g(eta_a)
        - params.cost_leasing
        - licensee_margin(scheme)
}

/// `d/d eta_a` of the database payoff.
#[inline]
fn database_slope(eta_l: f64, eta_a: f64, scheme: &CommissionScheme, params: &ModelParams) -> f64 {
    let g = params.g(eta_a);
    let eg = eta_g_slope(eta_a, params);
    let own = (1.0 - eta_l - eta_a) * (g + eg) - eta_a * g - params.cost_advanced;
    match *scheme {
        CommissionScheme::RevenueShare(delta) => own - eta_l * delta * g - eta_l * delta * eg,
        CommissionScheme::Wholesale(_) => own,
    }
}

/// First-order residuals `(dU_sl/d eta_l, dU_db/d eta_a)` at a point. The
/// licensee's is taken before the `(1 - delta)` factor.
pub fn foc_residuals(shares: &MarketShare, scheme: &CommissionScheme, params: &ModelParams) -> (f64, f64) {
    (
        licensee_slope(shares.eta_l, shares.eta_a, scheme, params),
        database_slope(shares.eta_l, shares.eta_a, scheme, params),
    )
}

/// Licensee's best leasing share against a fixed advanced share, maximizing
/// `(p_l - c_l - w) eta_l` over `[0, 1 - eta_a]`. Under revenue sharing the
/// objective is scaled by `1 - delta`, which does not move the argmax and is
/// therefore dropped.
pub fn licensee_best_response(eta_a: f64, scheme: &CommissionScheme, params: &ModelParams) -> Result<f64> {
    check_unit("eta_a", eta_a)?;
    Ok(licensee_br(eta_a, scheme, params, DEFAULT_GRID_POINTS).x)
}

fn licensee_br(eta_a: f64, scheme: &CommissionScheme, params: &ModelParams, n: usize) -> Maximum {
    let margin = params.cost_leasing + licensee_margin(scheme);
    let objective = |eta_l: f64| (prices_unchecked(eta_l, eta_a, params).p_l - margin) * eta_l;
    let slope = |eta_l: f64| licensee_slope(eta_l, eta_a, scheme, params);
    grid_refined_max(&objective, Some(&slope), 0.0, (1.0 - eta_a).max(0.0), n, 1e-13)
}

/// Database's best advanced share against a fixed leasing share over
/// `[0, 1 - eta_l]`. The wholesale income `w eta_l` is constant here and is
/// left out of the objective.
pub fn database_best_response(eta_l: f64, scheme: &CommissionScheme, params: &ModelParams) -> Result<f64> {
    check_unit("eta_l", eta_l)?;
    Ok(database_br(eta_l, scheme, params, DEFAULT_GRID_POINTS).x)
}

fn database_br(eta_l: f64, scheme: &CommissionScheme, params: &ModelParams, n: usize) -> Maximum {
    let objective = |eta_a: f64| {
        let p = prices_unchecked(eta_l, eta_a, params);
        let info = (p.p_a - params.cost_advanced) * eta_a;
        match *scheme {
            CommissionScheme::RevenueShare(delta) => info + delta * (p.p_l - params.cost_leasing) * eta_l,
            CommissionScheme::Wholesale(_) => info,
        }
    };
    let slope = |eta_a: f64| database_slope(eta_l, eta_a, scheme, params);
    grid_refined_max(&objective, Some(&slope), 0.0, (1.0 - eta_l).max(0.0), n, 1e-13)
}

fn check_unit(what: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(MarketError::domain(what, x, "[0, 1]"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Options {
    pub tol: f64,
    pub max_rounds: usize,
    pub grid_points: usize,
    /// Resolution of the dominant-diagonal grid; `None` skips the check.
    pub diagonal_resolution: Option<f64>,
    pub trace: bool,
}

impl Default for Stage2Options {
    fn default() -> Self {
        Stage2Options {
            tol: DEFAULT_TOL,
            max_rounds: DEFAULT_MAX_ROUNDS,
            grid_points: DEFAULT_GRID_POINTS,
            diagonal_resolution: None,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageIIReport {
    pub scheme: CommissionScheme,
    pub shares: MarketShare,
    pub prices: PriceProfile,
    pub payoffs: FirmPayoffs,
    pub rounds: usize,
    pub converged: bool,
    /// `(licensee, database)` first-order residuals at the solution.
    pub foc_residuals: (f64, f64),
    pub dominant_diagonal_holds: Option<bool>,
    /// `0 < eta_l < 1/2` and `eta_l + eta_a < 1`.
    pub interior: bool,
    /// User-dynamics fixed-point residual at `(shares, prices)`.
    pub stage3_residual: f64,
    /// Per-round iterates, starting at `(0, 1)`, when tracing.
    #[serde(skip)]
    pub trace: Vec<MarketShare>,
}

/// Simultaneous best-response iteration from `(eta_l, eta_a) = (0, 1)`.
pub fn solve_stage2(scheme: &CommissionScheme, params: &ModelParams, opts: &Stage2Options) -> Result<StageIIReport> {
    scheme.check(params)?;
    if !(opts.tol > 0.0) {
        return Err(MarketError::domain("tol", opts.tol, "(0, inf)"));
    }
    let n = opts.grid_points.max(11);
    let mut current = MarketShare::new(0.0, 1.0);
    let mut previous: Option<MarketShare> = None;
    let mut trace = if opts.trace { vec![current] } else { Vec::new() };
    let mut rounds = 0;
    let mut converged = false;
    while rounds < opts.max_rounds {
        rounds += 1;
        let next = MarketShare::new(
            licensee_br(current.eta_a, scheme, params, n).x,
            database_br(current.eta_l, scheme, params, n).x,
        );
        if opts.trace {
            trace.push(next);
        }
        if next.distance(&current) <= opts.tol {
            current = next;
            converged = true;
            break;
        }
        if let Some(prev) = previous {
            if next.distance(&prev) <= opts.tol && next.distance(&current) > opts.tol {
                return Err(MarketError::NotConverged {
                    rounds,
                    last: next,
                    oscillating: true,
                });
            }
        }
        previous = Some(current);
        current = next;
    }
    if !converged {
        return Err(MarketError::NotConverged {
            rounds,
            last: current,
            oscillating: false,
        });
    }
    // Jacobi responses respect each firm's own cap but not the joint one.
    if current.eta_l + current.eta_a > 1.0 {
        current.eta_a = 1.0 - current.eta_l;
    }
    let prices = shares_to_prices(&current, params)?;
    let dominant_diagonal_holds = match opts.diagonal_resolution {
        Some(r) => Some(dominant_diagonal_check(scheme, params, r)?.holds),
        None => None,
    };
    Ok(StageIIReport {
        scheme: *scheme,
        shares: current,
        prices,
        payoffs: payoffs_unchecked(current.eta_l, current.eta_a, scheme, params),
        rounds,
        converged,
        foc_residuals: foc_residuals(&current, scheme, params),
        dominant_diagonal_holds,
        interior: current.eta_l > 0.0 && current.eta_l < 0.5 && current.eta_l + current.eta_a < 1.0,
        stage3_residual: fixed_point_residual(&current, &prices, params)?,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagonalReport {
    pub holds: bool,
    /// Smallest of `U_la - U_ll` and `U_al - U_aa` over the grid.
    pub worst_margin: f64,
    pub points: usize,
}

/// Second-derivative dominance in the supermodular orientation
/// `(-eta_l, eta_a)`: each firm's own curvature must outweigh its cross
/// partial, `-U_ll >= -U_la` and `-U_aa >= -U_al`. Derivatives are central
/// differences on the interior of a grid over the simplex.
pub fn dominant_diagonal_check(scheme: &CommissionScheme, params: &ModelParams, grid_resolution: f64) -> Result<DiagonalReport> {
    if !(grid_resolution > 0.0 && grid_resolution <= 0.1) {
        return Err(MarketError::domain("grid_resolution", grid_resolution, "(0, 0.1]"));
    }
    let h = FD_STEP;
    let steps = (1.0 / grid_resolution).round() as usize;
    let u = |l: f64, a: f64| payoffs_unchecked(l, a, scheme, params);
    let mut worst = f64::INFINITY;
    let mut points = 0;
    for i in 1..steps {
        let l = i as f64 / steps as f64;
        for j in 1..(steps - i) {
            let a = (j as f64 / steps as f64).max(SHARE_EPS + h);
            let c = u(l, a);
            let (lp, lm) = (u(l + h, a), u(l - h, a));
            let (ap, am) = (u(l, a + h), u(l, a - h));
            let (pp, pm, mp, mm) = (u(l + h, a + h), u(l + h, a - h), u(l - h, a + h), u(l - h, a - h));
            let h2 = h * h;
            let sl_ll = (lp.u_licensee - 2.0 * c.u_licensee + lm.u_licensee) / h2;
            let db_aa = (ap.u_database - 2.0 * c.u_database + am.u_database) / h2;
            let sl_la = (pp.u_licensee - pm.u_licensee - mp.u_licensee + mm.u_licensee) / (4.0 * h2);
            let db_la = (pp.u_database - pm.u_database - mp.u_database + mm.u_database) / (4.0 * h2);
            worst = worst.min(sl_la - sl_ll).min(db_la - db_aa);
            points += 1;
        }
    }
    Ok(DiagonalReport {
        // Central differences at this step carry noise around 1e-5.
        holds: worst >= -1e-5,
        worst_margin: worst,
        points,
    })
}
