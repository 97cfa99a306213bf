//! Independent cross-checks of the solvers. Each oracle below re-derives its
//! quantity from the model primitives without calling the routine it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tvws_market::bargaining::disagreement_point;
use tvws_market::competition::{database_best_response, licensee_best_response};
use tvws_market::dynamics::{consumer_surplus, solve_equilibrium};
use tvws_market::*;

fn f(p: &ModelParams, x: f64) -> f64 {
    p.alpha1 - p.beta1 * x.powf(p.gamma1)
}

fn g(p: &ModelParams, a: f64) -> f64 {
    p.alpha2 + (p.beta2 - p.alpha2) * a.powf(p.gamma2)
}

fn bisect(mut h: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let h_lo = h(lo);
    assert!(h_lo * h(hi) <= 0.0, "no bracket on [{lo}, {hi}]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (h(mid) > 0.0) == (h_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Active branch by substitution: with `theta_la = 1 - eta_l` and
/// `theta_ab = p_a / g`, the leasing share is `1 - eta_a - p_a / g(eta_a)`,
/// leaving one residual in `eta_a`.
fn substitution_oracle(prices: &PriceProfile, p: &ModelParams) -> Option<(f64, f64)> {
    let eta_l_of = |a: f64| 1.0 - a - prices.p_a / g(p, a);
    let residual = |a: f64| {
        let l = eta_l_of(a);
        let r_a = f(p, 1.0 - l) + g(p, a);
        (prices.p_l - prices.p_a) / (p.q_leasing - r_a) - (1.0 - l)
    };
    let xs: Vec<f64> = (1..=4000).map(|i| i as f64 / 4000.0).collect();
    let mut roots = Vec::new();
    for w in xs.windows(2) {
        let (l0, l1) = (eta_l_of(w[0]), eta_l_of(w[1]));
        if !(0.0..=1.0).contains(&l0) || !(0.0..=1.0).contains(&l1) {
            continue;
        }
        if residual(w[0]) * residual(w[1]) <= 0.0 {
            let a = bisect(residual, w[0], w[1]);
            roots.push((eta_l_of(a), a));
        }
    }
    (roots.len() == 1).then(|| roots[0])
}

#[test]
fn stage3_matches_substitution_route() {
    let p = ModelParams::default();
    let golden = substitution_oracle(&PriceProfile::new(2.0, 0.3), &p).unwrap();
    // Frozen from the oracle above.
    assert!((golden.0 - 0.6054608).abs() < 1e-7 && (golden.1 - 0.1571064).abs() < 1e-7, "{golden:?}");
    let eq = solve_equilibrium(&PriceProfile::new(2.0, 0.3), &p, 1e-12).unwrap();
    assert!((eq.shares.eta_l - golden.0).abs() < 1e-10 && (eq.shares.eta_a - golden.1).abs() < 1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut compared = 0;
    for _ in 0..300 {
        let prices = PriceProfile::new(rng.gen_range(0.5..4.0), rng.gen_range(0.02..0.8));
        let params = p.with_lambda(rng.gen_range(0.4..1.8));
        let eq = solve_equilibrium(&prices, &params, 1e-12).unwrap();
        if eq.branch != Branch::AdvancedActive || eq.candidates != 1 {
            continue;
        }
        let Some((l, a)) = substitution_oracle(&prices, &params) else { continue };
        compared += 1;
        assert!(
            (eq.shares.eta_l - l).abs() < 1e-8 && (eq.shares.eta_a - a).abs() < 1e-8,
            "{prices:?} lambda {:?}: solver {:?} oracle ({l}, {a})",
            params.lambda(),
            eq.shares
        );
    }
    assert!(compared > 100, "only {compared} comparable points");
}

/// Database alone in price space: at price `p_a` the advanced share is the
/// largest root of `eta_a = 1 - p_a / g(eta_a)`.
fn pure_information_profit(p: &ModelParams) -> f64 {
    let share = |price: f64| {
        let h = |a: f64| a - (1.0 - price / g(p, a));
        let xs: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
        xs.windows(2)
            .rev()
            .find(|w| h(w[0]) * h(w[1]) <= 0.0)
            .map(|w| bisect(h, w[0], w[1]))
            .unwrap_or(0.0)
    };
    let revenue = |price: f64| price * share(price).max(0.0);
    let top = p.alpha2.max(p.beta2);
    let (mut best_x, mut best) = (0.0, 0.0);
    for i in 0..=4000 {
        let x = top * i as f64 / 4000.0;
        if revenue(x) > best {
            best = revenue(x);
            best_x = x;
        }
    }
    let h = top / 4000.0;
    for i in 0..=2000 {
        let x = best_x - h + 2.0 * h * i as f64 / 2000.0;
        best = best.max(revenue(x.max(0.0)));
    }
    best
}

#[test]
fn disagreement_matches_price_space_search() {
    for lambda in [0.4, 1.0, 1.8] {
        let p = ModelParams::default().with_lambda(lambda);
        let oracle = pure_information_profit(&p);
        let d = disagreement_point(&p, false);
        assert!((d.u_db0 - oracle).abs() < 1e-7, "lambda {lambda}: {} vs {oracle}", d.u_db0);
    }
}

fn payoffs(l: f64, a: f64, scheme: &CommissionScheme, p: &ModelParams) -> (f64, f64) {
    let b = 1.0 - l - a;
    let p_a = b * g(p, a);
    let p_l = (1.0 - l) * (p.q_leasing - f(p, 1.0 - l)) - a * g(p, a);
    let info = (p_a - p.cost_advanced) * a;
    match *scheme {
        CommissionScheme::RevenueShare(d) => {
            let lease = (p_l - p.cost_leasing) * l;
            ((1.0 - d) * lease, info + d * lease)
        }
        CommissionScheme::Wholesale(w) => ((p_l - w - p.cost_leasing) * l, info + w * l),
    }
}

fn grid_argmax(h: impl Fn(f64) -> f64, hi: f64, n: usize) -> (f64, f64) {
    (0..=n)
        .map(|i| hi * i as f64 / n as f64)
        .map(|x| (x, h(x)))
        .fold((0.0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc })
}

#[test]
fn best_responses_match_fine_grid() {
    let n = 200_000;
    for lambda in [0.4, 1.8] {
        let p = ModelParams::default().with_lambda(lambda);
        for scheme in [CommissionScheme::RevenueShare(0.4), CommissionScheme::Wholesale(0.8)] {
            for other in [0.0, 0.15, 0.4] {
                let l = licensee_best_response(other, &scheme, &p).unwrap();
                let (gx, gv) = grid_argmax(|x| payoffs(x, other, &scheme, &p).0, 1.0 - other, n);
                assert!((l - gx).abs() < 1e-4, "licensee {scheme:?} eta_a {other}: {l} vs {gx}");
                assert!(payoffs(l, other, &scheme, &p).0 >= gv - 1e-12);

                let a = database_best_response(other, &scheme, &p).unwrap();
                let (gx, gv) = grid_argmax(|x| payoffs(other, x, &scheme, &p).1, 1.0 - other, n);
                assert!((a - gx).abs() < 1e-4, "database {scheme:?} eta_l {other}: {a} vs {gx}");
                assert!(payoffs(other, a, &scheme, &p).1 >= gv - 1e-12);
            }
        }
    }
}

#[test]
fn consumer_surplus_matches_quadrature() {
    let p = ModelParams::default();
    for prices in [PriceProfile::new(2.0, 0.3), PriceProfile::new(3.5, 0.1), PriceProfile::new(1.0, 1.2)] {
        let eq = solve_equilibrium(&prices, &p, 1e-12).unwrap();
        let (l, a) = (eq.shares.eta_l, eq.shares.eta_a);
        let r_b = f(&p, 1.0 - l);
        let r_a = r_b + g(&p, a);
        let n = 400_000;
        let sum: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64;
                (t * r_b).max(t * r_a - prices.p_a).max(t * p.q_leasing - prices.p_l)
            })
            .sum();
        let quad = sum / n as f64;
        let exact = consumer_surplus(&eq.shares, &prices, &p).unwrap();
        assert!((exact - quad).abs() < 1e-9, "{prices:?}: {exact} vs {quad}");
    }
}
