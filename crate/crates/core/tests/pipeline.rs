use std::io::Write;

use tvws_market::experiment::{run_sweep, run_three_stage, run_validation_suite, write_sweep_csv, CSV_SCHEMA};
use tvws_market::*;

#[test]
fn three_stage_run_is_self_consistent() {
    let p = ModelParams::default();
    for kind in [SchemeKind::RevenueShare, SchemeKind::Wholesale] {
        let r = run_three_stage(kind, &p, &BargainingOptions::default()).unwrap();
        assert!(r.feasible);
        // The competition point is itself a user equilibrium; a different
        // independent solve is only allowed when several exist.
        assert!(r.stage3_residual < 1e-12);
        assert!(r.stage3_gap < 1e-6 || r.stage3_candidates > 1, "{kind:?}: gap {}", r.stage3_gap);
        assert!(r.payoffs.u_database >= r.disagreement.u_db0);
        assert!(r.payoffs.u_licensee >= 0.0);
        let sw = r.payoffs.network_profit() + r.consumer_surplus;
        assert!((sw - r.social_welfare).abs() < 1e-12);
        assert_eq!(r.scheme.kind(), kind);
    }
}

#[test]
fn validation_suite_passes_at_defaults() {
    let checks = run_validation_suite(&ModelParams::default(), 3);
    assert_eq!(checks.len(), 6);
    for c in &checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn params_load_from_toml_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("p.toml");
    std::fs::File::create(&toml_path)
        .unwrap()
        .write_all(b"beta2 = 0.9\ncost_leasing = 1.1\n")
        .unwrap();
    let p = ModelParams::load(&toml_path).unwrap();
    assert_eq!((p.beta2, p.cost_leasing, p.q_leasing), (0.9, 1.1, 6.0));

    let json_path = dir.path().join("p.json");
    std::fs::write(&json_path, r#"{"gamma1": 0.5}"#).unwrap();
    assert_eq!(ModelParams::load(&json_path).unwrap().gamma1, 0.5);

    std::fs::write(&json_path, r#"{"gamma9": 0.5}"#).unwrap();
    assert!(matches!(ModelParams::load(&json_path), Err(MarketError::Config(_))));
}

#[test]
fn sweep_output_is_deterministic() {
    let spec = SweepSpec::new(SweepParameter::CostLeasing, 0.5, 0.9, 0.2, vec![SweepScheme::ThirdParty, SweepScheme::PureInfo]);
    let p = ModelParams::default();
    let render = || {
        let rows = run_sweep(&spec, &p, &BargainingOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, None, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let a = render();
    assert_eq!(a, render());
    assert!(a.starts_with(CSV_SCHEMA));
    assert_eq!(a.lines().count(), 2 + 6);
}

#[test]
fn golden_three_stage_reports() {
    use tvws_market::validation::grid_nash_oracle;
    let p = ModelParams::default();
    let opts = BargainingOptions::default();
    // Frozen outputs at the default parameters (lambda = 1.8).
    let cases = [
        (SchemeKind::RevenueShare, 0.6857777, (0.3965559, 0.0934743), (0.3054589, 0.7048251)),
        (SchemeKind::Wholesale, 1.7555959, (0.2199917, 0.3583539), (0.3086918, 0.5309521)),
    ];
    for (kind, x, (l, a), (u_sl, u_db)) in cases {
        let r = run_three_stage(kind, &p, &opts).unwrap();
        assert!((r.scheme.value() - x).abs() < 1e-5, "{kind:?} commission {}", r.scheme.value());
        assert!((r.shares.eta_l - l).abs() < 1e-6 && (r.shares.eta_a - a).abs() < 1e-6, "{:?}", r.shares);
        assert!((r.payoffs.u_licensee - u_sl).abs() < 1e-6 && (r.payoffs.u_database - u_db).abs() < 1e-6);
        let oracle = grid_nash_oracle(&r.scheme, &p, 1e-3).unwrap();
        assert!(oracle.distance(&r.shares) < 2e-3);
    }
}

#[test]
fn unprofitable_leasing_ends_in_disagreement() {
    let p = ModelParams {
        cost_leasing: 6.5,
        ..ModelParams::default()
    };
    let r = run_three_stage(SchemeKind::RevenueShare, &p, &BargainingOptions::default()).unwrap();
    assert!(!r.feasible);
    assert_eq!(r.shares.eta_l, 0.0);
    assert_eq!(r.payoffs.u_licensee, 0.0);
    assert!((r.payoffs.u_database - r.disagreement.u_db0).abs() < 1e-12);
}

#[test]
fn profits_fall_with_leasing_cost() {
    let spec = SweepSpec::new(SweepParameter::CostLeasing, 0.1, 1.5, 0.1, vec![SweepScheme::Rss, SweepScheme::Wps]);
    let rows = run_sweep(&spec, &ModelParams::default(), &BargainingOptions::default()).unwrap();
    for scheme in ["rss", "wps"] {
        let s: Vec<_> = rows.iter().filter(|r| r.scheme == scheme).collect();
        assert_eq!(s.len(), 15);
        for w in s.windows(2) {
            assert!(w[1].u_sl.unwrap() <= w[0].u_sl.unwrap() + 1e-9, "{scheme} licensee at {}", w[1].value);
            assert!(w[1].u_db.unwrap() <= w[0].u_db.unwrap() + 1e-9, "{scheme} database at {}", w[1].value);
        }
    }
    assert!(rows.iter().all(|r| r.stage3_residual.unwrap() <= 1e-8));
}
