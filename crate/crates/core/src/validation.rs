//! Independent oracles for the solvers: a finite population of users, an
//! exhaustive share-grid search for price-competition equilibria, and a
//! Monte Carlo interference model behind the two externality functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::model::{CommissionScheme, MarketShare, ModelParams, PriceProfile, ServiceChoice, ServiceUtilities};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPopulation {
    pub thetas: Vec<f64>,
    pub choices: Vec<ServiceChoice>,
}

impl AgentPopulation {
    /// Midpoint types `(i - 0.5) / n`, everyone starting on basic service.
    pub fn uniform(n: usize) -> Self {
        AgentPopulation {
            thetas: (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect(),
            choices: vec![ServiceChoice::Basic; n],
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    fn counts(&self) -> (usize, usize) {
        let mut l = 0;
        let mut a = 0;
        for c in &self.choices {
            match c {
                ServiceChoice::Leasing => l += 1,
                ServiceChoice::Advanced => a += 1,
                ServiceChoice::Basic => {}
            }
        }
        (l, a)
    }

    pub fn shares(&self) -> MarketShare {
        let (l, a) = self.counts();
        let n = self.len() as f64;
        MarketShare::new(l as f64 / n, a as f64 / n)
    }
}

/// Best service for one agent; exact ties go to the cheaper service.
fn agent_choice(theta: f64, u: &ServiceUtilities, prices: &PriceProfile) -> ServiceChoice {
    let mut options = [
        (ServiceChoice::Basic, 0.0),
        (ServiceChoice::Advanced, prices.p_a),
        (ServiceChoice::Leasing, prices.p_l),
    ];
    options.sort_by(|x, y| x.1.total_cmp(&y.1));
    let mut best = options[0].0;
    let mut best_payoff = u.payoff(theta, best, prices);
    for (c, _) in &options[1..] {
        let v = u.payoff(theta, *c, prices);
        if v > best_payoff {
            best = *c;
            best_payoff = v;
        }
    }
    best
}

/// Synchronous best-response rounds of a finite population. Stops when no
/// agent switches; a revisited share state is reported as a cycle.
pub fn agent_based_equilibrium(n: usize, prices: &PriceProfile, params: &ModelParams, max_rounds: usize) -> Result<MarketShare> {
    if n < 100 {
        return Err(MarketError::domain("n", n as f64, "[100, inf)"));
    }
    prices.check()?;
    let mut pop = AgentPopulation::uniform(n);
    let mut history = vec![pop.counts()];
    for _ in 0..max_rounds {
        let u = ServiceUtilities::at(&pop.shares(), params);
        let mut changed = false;
        for (theta, choice) in pop.thetas.iter().zip(pop.choices.iter_mut()) {
            let next = agent_choice(*theta, &u, prices);
            if next != *choice {
                *choice = next;
                changed = true;
            }
        }
        if !changed {
            return Ok(pop.shares());
        }
        let counts = pop.counts();
        if history[..history.len() - 1].contains(&counts) {
            let prev = history[history.len() - 1];
            let to_share = |c: (usize, usize)| MarketShare::new(c.0 as f64 / n as f64, c.1 as f64 / n as f64);
            return Err(MarketError::AgentCycle {
                first: to_share(prev),
                second: to_share(counts),
            });
        }
        history.push(counts);
    }
    Err(MarketError::NotConverged {
        rounds: max_rounds,
        last: pop.shares(),
        oscillating: false,
    })
}

/// Firm payoffs on the share grid, written out from the price inverse
/// independently of the competition module.
fn oracle_payoffs(l: f64, a: f64, scheme: &CommissionScheme, p: &ModelParams) -> (f64, f64) {
    let g = p.alpha2 + (p.beta2 - p.alpha2) * a.powf(p.gamma2);
    let f = p.alpha1 - p.beta1 * (1.0 - l).powf(p.gamma1);
    let p_a = (1.0 - l - a) * g;
    let p_l = (1.0 - l) * (p.q_leasing - f) - a * g;
    match *scheme {
        CommissionScheme::RevenueShare(d) => {
            let lease = (p_l - p.cost_leasing) * l;
            (lease * (1.0 - d), (p_a - p.cost_advanced) * a + d * lease)
        }
        CommissionScheme::Wholesale(w) => ((p_l - w - p.cost_leasing) * l, (p_a - p.cost_advanced) * a + w * l),
    }
}

/// Exhaustive search for pure equilibria on a share lattice of the given
/// resolution. A lattice point qualifies when each coordinate lies within one
/// cell of the firm's lattice best response to the other; neighbouring
/// qualifiers are merged and one representative per cluster is kept.
pub fn grid_nash_oracle(scheme: &CommissionScheme, params: &ModelParams, resolution: f64) -> Result<MarketShare> {
    if !(1e-4..=1e-2).contains(&resolution) {
        return Err(MarketError::domain("resolution", resolution, "[1e-4, 1e-2]"));
    }
    let m = (1.0 / resolution).round() as usize;
    let x = |i: usize| i as f64 / m as f64;
    // br_l[j]: licensee's best lattice index against advanced index j.
    let br_l: Vec<usize> = (0..=m)
        .into_par_iter()
        .map(|j| {
            let mut best = (f64::NEG_INFINITY, 0);
            for i in 0..=(m - j) {
                let v = oracle_payoffs(x(i), x(j), scheme, params).0;
                if v > best.0 {
                    best = (v, i);
                }
            }
            best.1
        })
        .collect();
    let br_a: Vec<usize> = (0..=m)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, 0);
            for j in 0..=(m - i) {
                let v = oracle_payoffs(x(i), x(j), scheme, params).1;
                if v > best.0 {
                    best = (v, j);
                }
            }
            best.1
        })
        .collect();
    let mut hits: Vec<(usize, usize, usize)> = Vec::new();
    for (j, &bl) in br_l.iter().enumerate() {
        let lo = bl.saturating_sub(1);
        let hi = (bl + 1).min(m - j);
        for (i, &ba) in br_a.iter().enumerate().take(hi + 1).skip(lo) {
            if ba.abs_diff(j) <= 1 {
                hits.push((i, j, bl.abs_diff(i) + ba.abs_diff(j)));
            }
        }
    }
    // Single-linkage clusters with Chebyshev lattice distance <= 2.
    let mut clusters: Vec<Vec<(usize, usize, usize)>> = Vec::new();
    for h in hits {
        let near: Vec<usize> = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.iter().any(|p| p.0.abs_diff(h.0) <= 2 && p.1.abs_diff(h.1) <= 2))
            .map(|(k, _)| k)
            .collect();
        match near.as_slice() {
            [] => clusters.push(vec![h]),
            [k] => clusters[*k].push(h),
            _ => {
                let mut merged = vec![h];
                for k in near.iter().rev() {
                    merged.extend(clusters.remove(*k));
                }
                clusters.push(merged);
            }
        }
    }
    let reps: Vec<MarketShare> = clusters
        .iter()
        .map(|c| {
            let best = c.iter().min_by_key(|p| (p.2, p.0, p.1)).expect("clusters are non-empty");
            MarketShare::new(x(best.0), x(best.1))
        })
        .collect();
    match reps.as_slice() {
        [one] => Ok(*one),
        _ => Err(MarketError::OracleCandidates { candidates: reps }),
    }
}

/// Interference environment of the channel-quality example: `k` channels,
/// `n_users` devices, and exponential interference components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferenceModel {
    pub k: usize,
    pub n_users: usize,
    /// Mean interference from TV stations on a channel.
    pub mean_tv: f64,
    /// Mean interference from one other unlicensed user on the same channel.
    pub mean_eu: f64,
    /// Mean interference from outside systems.
    pub mean_out: f64,
    /// Transmit power `P` in `log2(1 + P / (I + n0))`.
    pub power: f64,
    pub noise: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for InterferenceModel {
    fn default() -> Self {
        InterferenceModel {
            k: 10,
            n_users: 100,
            mean_tv: 1.0,
            mean_eu: 0.5,
            mean_out: 0.5,
            power: 10.0,
            noise: 0.1,
            samples: 1_000_000,
            seed: 7,
        }
    }
}

impl InterferenceModel {
    pub fn rate(&self, interference: f64) -> f64 {
        (1.0 + self.power / (interference + self.noise)).log2()
    }

    /// Users per channel: `(total, advanced)`.
    pub fn per_channel(&self, eta_l: f64, eta_a: f64) -> (usize, usize) {
        let per = self.n_users as f64 / self.k as f64;
        let total = (per * (1.0 - eta_l)).round() as usize;
        let adv = ((per * eta_a).round() as usize).min(total);
        (total, adv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub r_basic: f64,
    pub se_basic: f64,
    pub r_advanced: f64,
    pub se_advanced: f64,
    /// `r_advanced - r_basic` from coupled draws.
    pub gain: f64,
    pub se_gain: f64,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    b: f64,
    b2: f64,
    a: f64,
    a2: f64,
    d: f64,
    d2: f64,
}

impl Moments {
    fn add(&mut self, rb: f64, ra: f64) {
        let d = ra - rb;
        self.n += 1.0;
        self.b += rb;
        self.b2 += rb * rb;
        self.a += ra;
        self.a2 += ra * ra;
        self.d += d;
        self.d2 += d * d;
    }

    fn merge(mut self, o: &Moments) -> Self {
        self.n += o.n;
        self.b += o.b;
        self.b2 += o.b2;
        self.a += o.a;
        self.a2 += o.a2;
        self.d += o.d;
        self.d2 += o.d2;
        self
    }

    fn mean_se(&self, s: f64, s2: f64) -> (f64, f64) {
        let mean = s / self.n;
        let var = (s2 / self.n - mean * mean).max(0.0) * self.n / (self.n - 1.0).max(1.0);
        (mean, (var / self.n).sqrt())
    }
}

enum Draw {
    Zero,
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
}

impl Draw {
    fn exp(mean: f64) -> Self {
        if mean > 0.0 {
            Draw::Exp(Exp::new(1.0 / mean).expect("positive rate"))
        } else {
            Draw::Zero
        }
    }

    /// Sum of `count` independent exponentials with the given mean.
    fn sum_of(count: usize, mean: f64) -> Self {
        if count == 0 || mean <= 0.0 {
            Draw::Zero
        } else {
            Draw::Gamma(Gamma::new(count as f64, mean).expect("positive shape and scale"))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Draw::Zero => 0.0,
            Draw::Exp(d) => d.sample(rng),
            Draw::Gamma(d) => d.sample(rng),
        }
    }
}

const CHUNK: usize = 1 << 16;

/// Monte Carlo basic and advanced rates. A basic user lands on a random
/// channel; an advanced user picks the channel with least known
/// interference. Both see the same unknown component in each draw, so the
/// gain estimate has small variance. Chunks use ChaCha streams derived from
/// `(seed, chunk)` and are merged in order, so results do not depend on the
/// thread count.
pub fn monte_carlo_utilities(model: &InterferenceModel, eta_l: f64, eta_a: f64) -> Result<RateEstimate> {
    MarketShare::in_simplex(eta_l, eta_a)?;
    if model.k == 0 || model.samples < 2 {
        return Err(MarketError::InvalidParams("need k >= 1 and at least two samples".into()));
    }
    let (total, adv) = model.per_channel(eta_l, eta_a);
    let tv = Draw::exp(model.mean_tv);
    let out = Draw::exp(model.mean_out);
    let known_users = Draw::sum_of(adv, model.mean_eu);
    let unknown_users = Draw::sum_of(total - adv, model.mean_eu);
    let chunks = model.samples.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(model.samples - c * CHUNK);
            let mut m = Moments::default();
            for _ in 0..count {
                let first = tv.sample(&mut rng) + known_users.sample(&mut rng);
                let mut min_known = first;
                for _ in 1..model.k {
                    min_known = min_known.min(tv.sample(&mut rng) + known_users.sample(&mut rng));
                }
                let unknown = out.sample(&mut rng) + unknown_users.sample(&mut rng);
                m.add(model.rate(first + unknown), model.rate(min_known + unknown));
            }
            m
        })
        .collect();
    let m = parts.iter().fold(Moments::default(), |acc, p| acc.merge(p));
    let (r_basic, se_basic) = m.mean_se(m.b, m.b2);
    let (r_advanced, se_advanced) = m.mean_se(m.a, m.a2);
    let (gain, se_gain) = m.mean_se(m.d, m.d2);
    Ok(RateEstimate {
        r_basic,
        se_basic,
        r_advanced,
        se_advanced,
        gain,
        se_gain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Trend {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Curvature {
    Convex,
    Concave,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport {
    /// Indices `i` where the step from point `i` to `i + 1` goes the wrong way.
    pub monotonicity_violations: Vec<usize>,
    /// Indices `i` where the slope change around point `i` has the wrong sign.
    pub curvature_violations: Vec<usize>,
    /// Points with `y` below `-3 se`.
    pub sign_violations: Vec<usize>,
}

impl ShapeReport {
    pub fn clean(&self) -> bool {
        self.monotonicity_violations.is_empty() && self.curvature_violations.is_empty() && self.sign_violations.is_empty()
    }
}

/// Checks a sampled curve for the expected trend and curvature, counting only
/// deviations larger than three standard errors.
pub fn shape_checks(curve: &[CurvePoint], trend: Trend, curvature: Curvature) -> Result<ShapeReport> {
    if curve.len() < 5 {
        return Err(MarketError::InvalidParams(format!("need at least 5 points, got {}", curve.len())));
    }
    let z = 3.0;
    let mut mono = Vec::new();
    for (i, w) in curve.windows(2).enumerate() {
        let step = w[1].y - w[0].y;
        let se = (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
        let wrong = match trend {
            Trend::Increasing => -step,
            Trend::Decreasing => step,
        };
        if wrong > z * se {
            mono.push(i);
        }
    }
    let mut curv = Vec::new();
    for (i, w) in curve.windows(3).enumerate() {
        let (h1, h2) = (w[1].x - w[0].x, w[2].x - w[1].x);
        let change = (w[2].y - w[1].y) / h2 - (w[1].y - w[0].y) / h1;
        let se = ((w[0].se / h1).powi(2) + (w[1].se * (1.0 / h1 + 1.0 / h2)).powi(2) + (w[2].se / h2).powi(2)).sqrt();
        let wrong = match curvature {
            Curvature::Convex => -change,
            Curvature::Concave => change,
        };
        if wrong > z * se {
            curv.push(i + 1);
        }
    }
    let sign = curve
        .iter()
        .enumerate()
        .filter(|(_, p)| p.y < -z * p.se)
        .map(|(i, _)| i)
        .collect();
    Ok(ShapeReport {
        monotonicity_violations: mono,
        curvature_violations: curv,
        sign_violations: sign,
    })
}

/// Basic rate against the unlicensed fraction `1 - eta_l`, advanced share
/// held at zero.
pub fn basic_rate_curve(model: &InterferenceModel, unlicensed: &[f64]) -> Result<Vec<CurvePoint>> {
    unlicensed
        .iter()
        .map(|&x| {
            let r = monte_carlo_utilities(model, 1.0 - x, 0.0)?;
            Ok(CurvePoint {
                x,
                y: r.r_basic,
                se: r.se_basic,
            })
        })
        .collect()
}

/// Information gain `r_advanced - r_basic` against the advanced share.
pub fn information_gain_curve(model: &InterferenceModel, eta_l: f64, eta_a: &[f64]) -> Result<Vec<CurvePoint>> {
    eta_a
        .iter()
        .map(|&a| {
            let r = monte_carlo_utilities(model, eta_l, a)?;
            Ok(CurvePoint {
                x: a,
                y: r.gain,
                se: r.se_gain,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> ModelParams {
        ModelParams::constant(1.0, 1.0, 6.0)
    }

    #[test]
    fn agents_constant_case() {
        let n = 100_000;
        let s = agent_based_equilibrium(n, &PriceProfile::new(2.0, 0.2), &flat(), 100).unwrap();
        assert!((s.eta_l - 0.55).abs() <= 1.0 / n as f64);
        assert!((s.eta_a - 0.25).abs() <= 1.0 / n as f64);
    }

    #[test]
    fn agents_free_leasing() {
        let n = 1000;
        let s = agent_based_equilibrium(n, &PriceProfile::new(0.0, 0.5), &ModelParams::default(), 100).unwrap();
        assert_eq!(s, MarketShare::new(1.0, 0.0));
    }

    #[test]
    fn agents_reject_small_population() {
        assert!(agent_based_equilibrium(50, &PriceProfile::new(1.0, 0.1), &flat(), 10).is_err());
    }

    #[test]
    fn tie_goes_to_cheaper_service() {
        let u = ServiceUtilities::at(&MarketShare::new(0.0, 0.0), &flat());
        // theta = 0.2 is exactly indifferent between basic and advanced.
        assert_eq!(agent_choice(0.2, &u, &PriceProfile::new(2.0, 0.2)), ServiceChoice::Basic);
    }

    #[test]
    fn oracle_constant_case() {
        let s = grid_nash_oracle(&CommissionScheme::RevenueShare(0.0), &flat(), 1e-3).unwrap();
        assert!((s.eta_l - 7.4 / 19.0).abs() <= 1e-3 + 1e-12);
        assert!((s.eta_a - 3.9 / 19.0).abs() <= 1e-3 + 1e-12);
    }

    #[test]
    fn oracle_payoffs_match_competition_module() {
        let p = ModelParams::default();
        for scheme in [CommissionScheme::RevenueShare(0.3), CommissionScheme::Wholesale(0.8)] {
            let (sl, db) = oracle_payoffs(0.3, 0.2, &scheme, &p);
            let u = crate::competition::firm_payoffs(&MarketShare::new(0.3, 0.2), &scheme, &p).unwrap();
            assert!((sl - u.u_licensee).abs() < 1e-12 && (db - u.u_database).abs() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_degenerate_and_single_channel() {
        let quiet = InterferenceModel {
            mean_tv: 0.0,
            mean_eu: 0.0,
            mean_out: 0.0,
            samples: 1000,
            ..InterferenceModel::default()
        };
        let r = monte_carlo_utilities(&quiet, 0.2, 0.3).unwrap();
        assert!((r.r_basic - quiet.rate(0.0)).abs() < 1e-12);
        assert!((r.r_advanced - quiet.rate(0.0)).abs() < 1e-12);

        let one = InterferenceModel {
            k: 1,
            samples: 20_000,
            ..InterferenceModel::default()
        };
        let r = monte_carlo_utilities(&one, 0.2, 0.3).unwrap();
        assert!((r.r_advanced - r.r_basic).abs() <= 3.0 * r.se_basic.max(1e-12));
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let m = InterferenceModel {
            samples: 150_000,
            ..InterferenceModel::default()
        };
        let a = monte_carlo_utilities(&m, 0.3, 0.4).unwrap();
        let b = monte_carlo_utilities(&m, 0.3, 0.4).unwrap();
        assert_eq!(a.r_basic.to_bits(), b.r_basic.to_bits());
        assert_eq!(a.gain.to_bits(), b.gain.to_bits());
        let other = monte_carlo_utilities(&InterferenceModel { seed: 8, ..m }, 0.3, 0.4).unwrap();
        assert_ne!(a.r_basic, other.r_basic);
    }

    #[test]
    fn exact_curves_have_no_violations() {
        let p = ModelParams::default();
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let f: Vec<CurvePoint> = xs.iter().map(|&x| CurvePoint { x, y: p.f(x), se: 0.0 }).collect();
        assert!(shape_checks(&f, Trend::Decreasing, Curvature::Convex).unwrap().clean());
        let g: Vec<CurvePoint> = xs.iter().map(|&x| CurvePoint { x, y: p.g(x), se: 0.0 }).collect();
        assert!(shape_checks(&g, Trend::Increasing, Curvature::Concave).unwrap().clean());
        let r = shape_checks(&g, Trend::Decreasing, Curvature::Convex).unwrap();
        assert_eq!(r.monotonicity_violations.len(), 10);
        assert!(shape_checks(&g[..4], Trend::Increasing, Curvature::Concave).is_err());
    }
}
