//! Nash bargaining over the commission.

use rayon::prelude::*;
use serde::Serialize;

use crate::competition::{solve_stage2, FirmPayoffs, Stage2Options, StageIIReport};
use crate::error::{MarketError, Result};
use crate::model::{CommissionScheme, ModelParams, SchemeKind};
use crate::search::{golden_max, grid_golden_max, linspace};

pub const DEFAULT_GRID_STEPS: usize = 201;

/// Which disagreement payoff is subtracted from which firm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Pairing {
    /// `(U_db - u_db0) (U_sl - u_sl0)`.
    #[default]
    Standard,
    /// `(U_db - u_sl0) (U_sl - u_db0)`, with the subscripts crossed.
    Crossed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BargainingOptions {
    pub grid_steps: usize,
    pub pairing: Pairing,
    /// Subtract `c_a eta_a` from the database's fallback profit.
    pub cost_adjusted_disagreement: bool,
    pub stage2: Stage2Options,
}

impl Default for BargainingOptions {
    fn default() -> Self {
        BargainingOptions {
            grid_steps: DEFAULT_GRID_STEPS,
            pairing: Pairing::Standard,
            cost_adjusted_disagreement: false,
            stage2: Stage2Options::default(),
        }
    }
}

/// Fallback profits and the information-only market behind them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Disagreement {
    pub u_sl0: f64,
    pub u_db0: f64,
    pub p_a: f64,
    pub eta_a: f64,
}

/// The licensee earns nothing without the platform. The database alone runs
/// an information-only market; with no leasing the advanced share satisfies
/// `eta_a = 1 - p_a / g(eta_a)`, so choosing `eta_a` fixes
/// `p_a = (1 - eta_a) g(eta_a)` and the revenue is maximized over shares.
pub fn disagreement_point(params: &ModelParams, cost_adjusted: bool) -> Disagreement {
    let cost = if cost_adjusted { params.cost_advanced } else { 0.0 };
    let revenue = |eta_a: f64| ((1.0 - eta_a) * params.g(eta_a) - cost) * eta_a;
    let best = grid_golden_max(revenue, 0.0, 1.0, 10_001, 1e-14);
    Disagreement {
        u_sl0: 0.0,
        u_db0: best.value.max(0.0),
        p_a: (1.0 - best.x) * params.g(best.x),
        eta_a: best.x,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashPoint {
    /// Nash product, or `-inf` when a firm would rather disagree.
    pub product: f64,
    pub payoffs: FirmPayoffs,
    pub feasible: bool,
    #[serde(skip)]
    pub stage2: StageIIReport,
}

fn gains(payoffs: &FirmPayoffs, d: &Disagreement, pairing: Pairing) -> (f64, f64) {
    match pairing {
        Pairing::Standard => (payoffs.u_database - d.u_db0, payoffs.u_licensee - d.u_sl0),
        Pairing::Crossed => (payoffs.u_database - d.u_sl0, payoffs.u_licensee - d.u_db0),
    }
}

/// Evaluates the bargaining objective at commission `x`.
pub fn nash_product(
    x: f64,
    params: &ModelParams,
    kind: SchemeKind,
    disagreement: &Disagreement,
    opts: &BargainingOptions,
) -> Result<NashPoint> {
    let scheme = kind.with_value(x);
    let stage2 = solve_stage2(&scheme, params, &opts.stage2)?;
    let (g_db, g_sl) = gains(&stage2.payoffs, disagreement, opts.pairing);
    // Exact zeros (e.g. delta = 1) must stay feasible despite rounding.
    let slack = 1e-12;
    let feasible = g_db >= -slack && g_sl >= -slack;
    let product = if feasible {
        g_db.max(0.0) * g_sl.max(0.0)
    } else {
        f64::NEG_INFINITY
    };
    Ok(NashPoint {
        product,
        payoffs: stage2.payoffs,
        feasible,
        stage2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BargainingOutcome {
    pub scheme: CommissionScheme,
    /// Price competition at the agreed commission; `None` on disagreement.
    pub stage2: Option<StageIIReport>,
    pub nash_product: f64,
    pub disagreement: Disagreement,
    pub feasible: bool,
    /// Grid values of the objective (`-inf` where infeasible).
    pub grid: Vec<f64>,
    /// The feasible grid values rise and then fall.
    pub unimodal: bool,
}

impl BargainingOutcome {
    pub fn payoffs(&self) -> FirmPayoffs {
        match &self.stage2 {
            Some(s) => s.payoffs,
            None => FirmPayoffs {
                u_licensee: self.disagreement.u_sl0,
                u_database: self.disagreement.u_db0,
            },
        }
    }
}

fn is_unimodal(values: &[f64]) -> bool {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let tol = 1e-10;
    let mut falling = false;
    for w in finite.windows(2) {
        if w[1] < w[0] - tol {
            falling = true;
        } else if falling && w[1] > w[0] + tol {
            return false;
        }
    }
    true
}

/// Grid search over the commission domain followed by golden-section
/// refinement in the cells around the best grid point.
pub fn solve_bargaining(kind: SchemeKind, params: &ModelParams, opts: &BargainingOptions) -> Result<BargainingOutcome> {
    if opts.grid_steps < 11 {
        return Err(MarketError::domain("grid_steps", opts.grid_steps as f64, "[11, inf)"));
    }
    let disagreement = disagreement_point(params, opts.cost_adjusted_disagreement);
    let hi = kind.upper_bound(params);
    let xs = linspace(0.0, hi, opts.grid_steps);
    let points: Vec<NashPoint> = xs
        .par_iter()
        .map(|&x| nash_product(x, params, kind, &disagreement, opts))
        .collect::<Result<_>>()?;
    let grid: Vec<f64> = points.iter().map(|p| p.product).collect();
    let unimodal = is_unimodal(&grid);

    let mut best = 0;
    for (i, v) in grid.iter().enumerate() {
        if *v > grid[best] {
            best = i;
        }
    }
    if !grid[best].is_finite() {
        return Ok(BargainingOutcome {
            scheme: kind.with_value(0.0),
            stage2: None,
            nash_product: 0.0,
            disagreement,
            feasible: false,
            grid,
            unimodal,
        });
    }

    let lo = xs[best.saturating_sub(1)];
    let up = xs[(best + 1).min(xs.len() - 1)];
    let mut failure = None;
    let refined = golden_max(
        |x| match nash_product(x, params, kind, &disagreement, opts) {
            Ok(p) => p.product,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        },
        lo,
        up,
        1e-9 * hi,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let point = if refined.value > grid[best] {
        nash_product(refined.x, params, kind, &disagreement, opts)?
    } else {
        points.into_iter().nth(best).expect("index within grid")
    };
    Ok(BargainingOutcome {
        scheme: point.stage2.scheme,
        nash_product: point.product,
        stage2: Some(point.stage2),
        disagreement,
        feasible: true,
        grid,
        unimodal,
    })
}
