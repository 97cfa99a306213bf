//! User subscription dynamics for fixed prices.
//!
//! A type-`theta` user compares `theta*R_B`, `theta*R_A - p_a` and
//! `theta*Q_L - p_l`. The three pairwise indifference types split `[0, 1]`
//! into at most three intervals, so the next-period shares are a function of
//! the current ones only through `R_B` and `R_A`.

use serde::Serialize;

use crate::error::{MarketError, Result};
use crate::model::{MarketShare, ModelParams, PriceProfile, ServiceUtilities, CMP_TOL};
use crate::search::bisect;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_SOLVE_TOL: f64 = 1e-12;

const DENOM_FLOOR: f64 = 1e-12;
const MAX_BISECTION: usize = 200;
const SCAN_CELLS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Indifference between leasing and basic.
    pub theta_lb: f64,
    /// Indifference between advanced and basic.
    pub theta_ab: f64,
    /// Indifference between leasing and advanced.
    pub theta_la: f64,
}

impl Thresholds {
    fn from_utilities(u: &ServiceUtilities, prices: &PriceProfile) -> Result<Self> {
        let d_lb = u.leasing - u.basic;
        let d_ab = u.advanced - u.basic;
        let d_la = u.leasing - u.advanced;
        for (name, value) in [("Q_L - R_B", d_lb), ("R_A - R_B", d_ab), ("Q_L - R_A", d_la)] {
            if !(value > DENOM_FLOOR) {
                return Err(MarketError::DegenerateDenominator { name, value });
            }
        }
        Ok(Thresholds {
            theta_lb: prices.p_l / d_lb,
            theta_ab: prices.p_a / d_ab,
            theta_la: (prices.p_l - prices.p_a) / d_la,
        })
    }

    /// Whether the three values respect the ordering implied by their
    /// definitions (`theta_la` lies on the far side of `theta_lb`).
    pub fn ordered(&self, tol: f64) -> bool {
        let (lb, ab, la) = (self.theta_lb, self.theta_ab, self.theta_la);
        if lb > ab + tol {
            la >= lb - tol
        } else if lb < ab - tol {
            la <= lb + tol
        } else {
            true
        }
    }
}

pub fn thresholds(shares: &MarketShare, prices: &PriceProfile, params: &ModelParams) -> Result<Thresholds> {
    shares.check()?;
    Thresholds::from_utilities(&ServiceUtilities::at(shares, params), prices)
}

/// One synchronous update from the thresholds; the flag reports simplex clipping.
fn update(t: &Thresholds) -> (MarketShare, bool) {
    let eta_l = (1.0 - t.theta_la.max(t.theta_lb)).clamp(0.0, 1.0);
    let raw_a = (t.theta_la.min(1.0) - t.theta_ab).max(0.0);
    let cap = 1.0 - eta_l;
    let clipped = raw_a > cap + CMP_TOL;
    (MarketShare::new(eta_l, raw_a.min(cap)), clipped)
}

#[inline]
fn step_unchecked(shares: &MarketShare, prices: &PriceProfile, params: &ModelParams) -> Result<(MarketShare, bool)> {
    let t = Thresholds::from_utilities(&ServiceUtilities::at(shares, params), prices)?;
    Ok(update(&t))
}

/// One synchronous best-response step; also reports whether the advanced
/// share had to be clipped back into the simplex.
pub fn best_response_step(
    shares: &MarketShare,
    prices: &PriceProfile,
    params: &ModelParams,
) -> Result<(MarketShare, bool)> {
    shares.check()?;
    step_unchecked(shares, prices, params)
}

pub fn best_response_map(shares: &MarketShare, prices: &PriceProfile, params: &ModelParams) -> Result<MarketShare> {
    best_response_step(shares, prices, params).map(|(s, _)| s)
}

/// Chebyshev distance between a point and its image.
pub fn fixed_point_residual(shares: &MarketShare, prices: &PriceProfile, params: &ModelParams) -> Result<f64> {
    Ok(best_response_map(shares, prices, params)?.distance(shares))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTrajectory {
    /// Visited points, starting with the initial one.
    pub points: Vec<MarketShare>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest coordinate change in the final step.
    pub residual: f64,
    /// Number of steps in which the advanced share was clipped.
    pub clip_events: usize,
}

impl DynamicsTrajectory {
    pub fn terminal(&self) -> MarketShare {
        *self.points.last().expect("trajectory holds the initial point")
    }
}

pub fn iterate_dynamics(
    init: MarketShare,
    prices: &PriceProfile,
    params: &ModelParams,
    tol: f64,
    max_iter: usize,
) -> Result<DynamicsTrajectory> {
    init.check()?;
    if !(tol > 0.0) {
        return Err(MarketError::domain("tol", tol, "(0, inf)"));
    }
    let mut points = vec![init];
    let mut current = init;
    let mut residual = f64::INFINITY;
    let mut clip_events = 0;
    for iter in 1..=max_iter {
        let (next, clipped) = step_unchecked(&current, prices, params)?;
        clip_events += clipped as usize;
        residual = next.distance(&current);
        points.push(next);
        current = next;
        if residual <= tol {
            return Ok(DynamicsTrajectory {
                points,
                converged: true,
                iterations: iter,
                residual,
                clip_events,
            });
        }
    }
    Ok(DynamicsTrajectory {
        points,
        converged: false,
        iterations: max_iter,
        residual,
        clip_events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessCertificate {
    pub kappa: f64,
    pub lhs_max: f64,
    pub holds: bool,
    pub grid_resolution: f64,
}

/// Grid evaluation of the sufficient condition for a unique, globally
/// attracting equilibrium. The maxima are taken over grid points only, so
/// `holds` is advisory. The information-gain slope enters by magnitude so that
/// decreasing `g` is not certified for free.
pub fn uniqueness_certificate(prices: &PriceProfile, params: &ModelParams, grid_resolution: f64) -> Result<UniquenessCertificate> {
    if !(grid_resolution > 0.0 && grid_resolution <= 0.1) {
        return Err(MarketError::domain("grid_resolution", grid_resolution, "(0, 0.1]"));
    }
    let steps = (1.0 / grid_resolution).round() as usize;
    let mut kappa: f64 = 0.0;
    let mut lhs_max: f64 = 0.0;
    for i in 0..=steps {
        let eta_l = i as f64 / steps as f64;
        let r_b = params.f(1.0 - eta_l);
        let d_lb = params.q_leasing - r_b;
        for j in 0..=(steps - i) {
            let eta_a = j as f64 / steps as f64;
            let g = params.g(eta_a);
            let d_la = d_lb - g;
            if d_la <= DENOM_FLOOR || g <= DENOM_FLOOR {
                lhs_max = f64::INFINITY;
                kappa = f64::INFINITY;
                continue;
            }
            let k = ((prices.p_l - prices.p_a) / d_la).max(0.0).max(prices.p_a / g);
            kappa = kappa.max(k);
            let slope = params.g_slope_clamped(eta_a).abs();
            lhs_max = lhs_max.max(slope / g * d_lb / d_la);
        }
    }
    let holds = kappa == 0.0 || lhs_max <= 1.0 / kappa + CMP_TOL;
    Ok(UniquenessCertificate {
        kappa,
        lhs_max,
        holds,
        grid_resolution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    AdvancedActive,
    AdvancedEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equilibrium {
    pub shares: MarketShare,
    /// Branch of the returned point (`eta_a > 0` is active).
    pub branch: Branch,
    /// Branch predicted from the boundary threshold comparison.
    pub predicted: Branch,
    pub residual: f64,
    /// Number of distinct fixed points located.
    pub candidates: usize,
}

/// Branch predicted by comparing `theta_lb` at `eta_l = 0` with `theta_ab` at
/// `eta_a = 0`; a tie counts as empty.
pub fn predicted_branch(prices: &PriceProfile, params: &ModelParams) -> Result<Branch> {
    let d_lb = params.q_leasing - params.f(1.0);
    if !(d_lb > DENOM_FLOOR) {
        return Err(MarketError::DegenerateDenominator { name: "Q_L - f(1)", value: d_lb });
    }
    let lb0 = prices.p_l / d_lb;
    let ab0 = prices.p_a / params.g(0.0);
    Ok(if lb0 > ab0 + CMP_TOL {
        Branch::AdvancedActive
    } else {
        Branch::AdvancedEmpty
    })
}

/// Leasing share consistent with a fixed advanced share: the root of
/// `eta_l - T_l(eta_l, eta_a)`, which is increasing in `eta_l`.
fn leasing_given_advanced(eta_a: f64, prices: &PriceProfile, params: &ModelParams, xtol: f64) -> Result<f64> {
    let residual = |eta_l: f64| -> f64 {
        let s = MarketShare::new(eta_l, eta_a);
        match Thresholds::from_utilities(&ServiceUtilities::at(&s, params), prices) {
            Ok(t) => eta_l - (1.0 - t.theta_la.max(t.theta_lb)).clamp(0.0, 1.0),
            Err(_) => f64::NAN,
        }
    };
    let hi = 1.0 - eta_a;
    let r_hi = residual(hi);
    if r_hi.is_nan() {
        // Surface the denominator error itself.
        thresholds(&MarketShare::new(hi, eta_a), prices, params)?;
    }
    if r_hi <= 0.0 {
        // The unconstrained root lies beyond the simplex edge.
        return Ok(hi);
    }
    bisect(residual, 0.0, hi, xtol, MAX_BISECTION)
}

/// Equilibrium shares for fixed prices.
///
/// For each advanced share the consistent leasing share is found by
/// bisection, which leaves a one-variable residual in the advanced share.
/// That residual is scanned over `[0, 1]` and every sign change is bisected.
/// When several fixed points exist the one reached by the dynamics from an
/// empty market is returned; `candidates` reports how many were found.
pub fn solve_equilibrium(prices: &PriceProfile, params: &ModelParams, tol: f64) -> Result<Equilibrium> {
    prices.check()?;
    if !(tol > 0.0) {
        return Err(MarketError::domain("tol", tol, "(0, inf)"));
    }
    let predicted = predicted_branch(prices, params)?;
    let xtol = tol * 1e-3;
    let point = |eta_a: f64| -> Result<MarketShare> {
        let eta_l = leasing_given_advanced(eta_a, prices, params, xtol)?;
        Ok(MarketShare::new(eta_l, eta_a.min(1.0 - eta_l)))
    };
    let reduced = |eta_a: f64| -> Result<f64> {
        let s = point(eta_a)?;
        Ok(eta_a - step_unchecked(&s, prices, params)?.0.eta_a)
    };

    let mut candidates = Vec::new();
    let empty = point(0.0)?;
    if fixed_point_residual(&empty, prices, params)? <= tol {
        candidates.push(empty);
    }
    let xs: Vec<f64> = (0..=SCAN_CELLS).map(|i| i as f64 / SCAN_CELLS as f64).collect();
    let values = xs.iter().map(|&x| reduced(x)).collect::<Result<Vec<f64>>>()?;
    for i in 0..SCAN_CELLS {
        let (v0, v1) = (values[i], values[i + 1]);
        let brackets = (v0 < 0.0 && v1 >= 0.0) || (v0 > 0.0 && v1 <= 0.0);
        if !brackets {
            continue;
        }
        let mut failure = None;
        let root = bisect(
            |x| {
                reduced(x).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    f64::NAN
                })
            },
            xs[i],
            xs[i + 1],
            xtol,
            MAX_BISECTION,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let c = point(root?)?;
        if candidates.iter().all(|k: &MarketShare| k.distance(&c) > 1e-9) {
            candidates.push(c);
        }
    }
    if candidates.is_empty() {
        return Err(MarketError::NoSignChange {
            lo: 0.0,
            hi: 1.0,
            f_lo: values[0],
            f_hi: values[SCAN_CELLS],
        });
    }

    let count = candidates.len();
    let shares = if count == 1 {
        candidates[0]
    } else {
        let tr = iterate_dynamics(MarketShare::new(0.0, 0.0), prices, params, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        if tr.converged {
            let end = tr.terminal();
            candidates
                .iter()
                .copied()
                .min_by(|a, b| a.distance(&end).total_cmp(&b.distance(&end)))
                .expect("non-empty candidate list")
        } else {
            let empty_first = predicted == Branch::AdvancedEmpty;
            candidates
                .iter()
                .copied()
                .find(|c| (c.eta_a == 0.0) == empty_first)
                .unwrap_or(candidates[0])
        }
    };
    let residual = fixed_point_residual(&shares, prices, params)?;
    let branch = if shares.eta_a > 0.0 {
        Branch::AdvancedActive
    } else {
        Branch::AdvancedEmpty
    };
    Ok(Equilibrium {
        shares,
        branch,
        predicted,
        residual,
        candidates: count,
    })
}

/// Aggregate user payoff over uniform types at an equilibrium point.
pub fn consumer_surplus(shares: &MarketShare, prices: &PriceProfile, params: &ModelParams) -> Result<f64> {
    let u = service_utilities_checked(shares, params)?;
    let t = Thresholds::from_utilities(&u, prices)?;
    let tol = 1e-9;
    let (r_b, r_a, q) = (u.basic, u.advanced, u.leasing);
    if shares.eta_a > 0.0 {
        let a = t.theta_ab.clamp(0.0, 1.0);
        let l = t.theta_la.clamp(0.0, 1.0);
        if a > l + tol {
            return Err(MarketError::ThresholdOrdering(format!(
                "advanced branch needs theta_ab <= theta_la, got {} > {}",
                t.theta_ab, t.theta_la
            )));
        }
        Ok(r_b * a * a / 2.0 + r_a * (l * l - a * a) / 2.0 - prices.p_a * (l - a) + q * (1.0 - l * l) / 2.0
            - prices.p_l * (1.0 - l))
    } else {
        if t.theta_lb > t.theta_ab + tol && t.theta_la.min(1.0) > t.theta_ab + tol {
            return Err(MarketError::ThresholdOrdering(format!(
                "empty advanced branch but theta_ab = {} lies below theta_lb = {}",
                t.theta_ab, t.theta_lb
            )));
        }
        let b = t.theta_lb.clamp(0.0, 1.0);
        Ok(r_b * b * b / 2.0 + q * (1.0 - b * b) / 2.0 - prices.p_l * (1.0 - b))
    }
}

fn service_utilities_checked(shares: &MarketShare, params: &ModelParams) -> Result<ServiceUtilities> {
    shares.check()?;
    Ok(ServiceUtilities::at(shares, params))
}
