//! Market parameters, the two externality functions and single-user payoffs.
//!
//! The congestion function is `f(x) = alpha1 - beta1 * x^gamma1`, where `x` is
//! the fraction of users on unlicensed channels (`1 - eta_l`). The information
//! gain is `g(eta_a) = alpha2 + (beta2 - alpha2) * eta_a^gamma2`. Basic users
//! get `R_B = f(1 - eta_l)`, advanced users `R_A = R_B + g(eta_a)` and lessees
//! the constant `Q_L`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};

/// Lower bound on `eta_a` used wherever `g'` is consumed.
pub const SHARE_EPS: f64 = 1e-9;

/// Absolute tolerance for threshold comparisons.
pub const CMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub alpha1: f64,
    pub beta1: f64,
    pub gamma1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub gamma2: f64,
    pub q_leasing: f64,
    pub cost_advanced: f64,
    pub cost_leasing: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            alpha1: 1.0,
            beta1: 1.0,
            gamma1: 0.6,
            alpha2: 1.0,
            beta2: 1.8,
            gamma2: 0.6,
            q_leasing: 6.0,
            cost_advanced: 0.2,
            cost_leasing: 0.9,
        }
    }
}

/// Slope of an externality function; the power laws have an infinite slope at
/// zero share whenever the exponent is below one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slope {
    Finite(f64),
    Unbounded,
}

impl Slope {
    pub fn finite(self) -> Option<f64> {
        match self {
            Slope::Finite(v) => Some(v),
            Slope::Unbounded => None,
        }
    }
}

impl ModelParams {
    /// Constant externalities: `f == f_level`, `g == g_level`.
    pub fn constant(f_level: f64, g_level: f64, q_leasing: f64) -> Self {
        ModelParams {
            alpha1: f_level,
            beta1: 0.0,
            alpha2: g_level,
            beta2: g_level,
            q_leasing,
            ..ModelParams::default()
        }
    }

    /// Degree of network externality `beta2 / beta1`.
    pub fn lambda(&self) -> Option<f64> {
        (self.beta1 > 0.0).then(|| self.beta2 / self.beta1)
    }

    /// Sets `beta2 = lambda * beta1`, leaving everything else untouched.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.beta2 = lambda * self.beta1;
        self
    }

    /// Congestion utility `f(x)` without domain checks.
    #[inline]
    pub fn f(&self, unlicensed: f64) -> f64 {
        self.alpha1 - self.beta1 * unlicensed.max(0.0).powf(self.gamma1)
    }

    /// `df/dx`; `-inf` at `x = 0` when `gamma1 < 1`.
    #[inline]
    pub fn f_slope(&self, unlicensed: f64) -> f64 {
        if self.beta1 == 0.0 {
            return 0.0;
        }
        if self.gamma1 == 1.0 {
            return -self.beta1;
        }
        -self.beta1 * self.gamma1 * unlicensed.max(0.0).powf(self.gamma1 - 1.0)
    }

    /// Information gain `g(eta_a)` without domain checks.
    #[inline]
    pub fn g(&self, eta_a: f64) -> f64 {
        self.alpha2 + (self.beta2 - self.alpha2) * eta_a.max(0.0).powf(self.gamma2)
    }

    /// Analytic `g'(eta_a)`, reported as unbounded below [`SHARE_EPS`].
    pub fn g_slope(&self, eta_a: f64) -> Slope {
        let span = self.beta2 - self.alpha2;
        if span == 0.0 {
            return Slope::Finite(0.0);
        }
        if self.gamma2 == 1.0 {
            return Slope::Finite(span);
        }
        if eta_a < SHARE_EPS {
            return Slope::Unbounded;
        }
        Slope::Finite(self.gamma2 * span * eta_a.powf(self.gamma2 - 1.0))
    }

    /// `g'` evaluated at `max(eta_a, SHARE_EPS)`.
    #[inline]
    pub(crate) fn g_slope_clamped(&self, eta_a: f64) -> f64 {
        match self.g_slope(eta_a.max(SHARE_EPS)) {
            Slope::Finite(v) => v,
            Slope::Unbounded => unreachable!("clamped share is never below SHARE_EPS"),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MarketError::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| MarketError::Config(e.to_string()))
    }

    /// Loads parameters from a `.toml` or `.json` file; missing keys keep
    /// their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| MarketError::Config(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|s| s.to_str()) {
            Some("json") => Self::from_json_str(&text),
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_toml_str(&text).or_else(|_| Self::from_json_str(&text)),
        }
    }
}

/// Leasing and advanced shares; the basic share is the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketShare {
    pub eta_l: f64,
    pub eta_a: f64,
}

impl MarketShare {
    pub fn new(eta_l: f64, eta_a: f64) -> Self {
        MarketShare { eta_l, eta_a }
    }

    /// Checked constructor: the point must lie in the simplex.
    pub fn in_simplex(eta_l: f64, eta_a: f64) -> Result<Self> {
        let s = MarketShare { eta_l, eta_a };
        s.check()?;
        Ok(s)
    }

    pub fn eta_b(&self) -> f64 {
        1.0 - self.eta_l - self.eta_a
    }

    pub fn check(&self) -> Result<()> {
        if !(self.eta_l.is_finite() && (-CMP_TOL..=1.0 + CMP_TOL).contains(&self.eta_l)) {
            return Err(MarketError::domain("eta_l", self.eta_l, "[0, 1]"));
        }
        if !(self.eta_a.is_finite() && (-CMP_TOL..=1.0 + CMP_TOL).contains(&self.eta_a)) {
            return Err(MarketError::domain("eta_a", self.eta_a, "[0, 1]"));
        }
        if self.eta_l + self.eta_a > 1.0 + 1e-9 {
            return Err(MarketError::domain(
                "eta_l + eta_a",
                self.eta_l + self.eta_a,
                "[0, 1]",
            ));
        }
        Ok(())
    }

    /// Chebyshev distance.
    pub fn distance(&self, other: &MarketShare) -> f64 {
        (self.eta_l - other.eta_l)
            .abs()
            .max((self.eta_a - other.eta_a).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PriceProfile {
    pub p_l: f64,
    pub p_a: f64,
}

impl PriceProfile {
    pub fn new(p_l: f64, p_a: f64) -> Self {
        PriceProfile { p_l, p_a }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.p_l.is_finite() && self.p_l >= 0.0) {
            return Err(MarketError::domain("p_l", self.p_l, "[0, inf)"));
        }
        if !(self.p_a.is_finite() && self.p_a >= 0.0) {
            return Err(MarketError::domain("p_a", self.p_a, "[0, inf)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServiceChoice {
    Basic,
    Advanced,
    Leasing,
}

/// How the licensee pays the database for using its platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CommissionScheme {
    /// Fraction `delta` of leasing revenue.
    RevenueShare(f64),
    /// Fixed price `w` per lease.
    Wholesale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    RevenueShare,
    Wholesale,
}

impl SchemeKind {
    pub fn with_value(self, x: f64) -> CommissionScheme {
        match self {
            SchemeKind::RevenueShare => CommissionScheme::RevenueShare(x),
            SchemeKind::Wholesale => CommissionScheme::Wholesale(x),
        }
    }

    /// Upper end of the bargaining domain.
    pub fn upper_bound(self, params: &ModelParams) -> f64 {
        match self {
            SchemeKind::RevenueShare => 1.0,
            SchemeKind::Wholesale => params.q_leasing,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SchemeKind::RevenueShare => "rss",
            SchemeKind::Wholesale => "wps",
        }
    }
}

impl CommissionScheme {
    pub fn kind(&self) -> SchemeKind {
        match self {
            CommissionScheme::RevenueShare(_) => SchemeKind::RevenueShare,
            CommissionScheme::Wholesale(_) => SchemeKind::Wholesale,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            CommissionScheme::RevenueShare(d) => d,
            CommissionScheme::Wholesale(w) => w,
        }
    }

    pub fn check(&self, params: &ModelParams) -> Result<()> {
        match *self {
            CommissionScheme::RevenueShare(d) if !(0.0..=1.0).contains(&d) => {
                Err(MarketError::domain("delta", d, "[0, 1]"))
            }
            CommissionScheme::Wholesale(w) if !(0.0..=params.q_leasing).contains(&w) => {
                Err(MarketError::domain("w", w, "[0, Q_L]"))
            }
            _ => Ok(()),
        }
    }

    /// Parses `rss:<delta>` or `wps:<w>`.
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, value) = text
            .split_once(':')
            .ok_or_else(|| MarketError::Config(format!("expected rss:<delta> or wps:<w>, got {text:?}")))?;
        let x: f64 = value
            .trim()
            .parse()
            .map_err(|_| MarketError::Config(format!("bad commission value {value:?}")))?;
        match kind.trim() {
            "rss" => Ok(CommissionScheme::RevenueShare(x)),
            "wps" => Ok(CommissionScheme::Wholesale(x)),
            other => Err(MarketError::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

fn unit_interval(what: &'static str, x: f64) -> Result<f64> {
    if x.is_finite() && (-CMP_TOL..=1.0 + CMP_TOL).contains(&x) {
        Ok(x.clamp(0.0, 1.0))
    } else {
        Err(MarketError::domain(what, x, "[0, 1]"))
    }
}

/// `f(x)` for an unlicensed fraction `x`; `R_B(eta_l) = f(1 - eta_l)`.
pub fn congestion_utility(unlicensed: f64, params: &ModelParams) -> Result<f64> {
    let x = unit_interval("unlicensed fraction", unlicensed)?;
    Ok(params.f(x))
}

pub fn info_gain(eta_a: f64, params: &ModelParams) -> Result<f64> {
    let x = unit_interval("eta_a", eta_a)?;
    Ok(params.g(x))
}

pub fn info_gain_slope(eta_a: f64, params: &ModelParams) -> Result<Slope> {
    let x = unit_interval("eta_a", eta_a)?;
    Ok(params.g_slope(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceUtilities {
    pub basic: f64,
    pub advanced: f64,
    pub leasing: f64,
    /// `Q_L > R_A > R_B` at this point.
    pub ordered: bool,
}

impl ServiceUtilities {
    #[inline]
    pub(crate) fn at(shares: &MarketShare, params: &ModelParams) -> Self {
        let basic = params.f(1.0 - shares.eta_l);
        let advanced = basic + params.g(shares.eta_a);
        let leasing = params.q_leasing;
        ServiceUtilities {
            basic,
            advanced,
            leasing,
            ordered: leasing > advanced && advanced > basic,
        }
    }

    #[inline]
    pub fn payoff(&self, theta: f64, choice: ServiceChoice, prices: &PriceProfile) -> f64 {
        match choice {
            ServiceChoice::Basic => theta * self.basic,
            ServiceChoice::Advanced => theta * self.advanced - prices.p_a,
            ServiceChoice::Leasing => theta * self.leasing - prices.p_l,
        }
    }
}

pub fn service_utilities(shares: &MarketShare, params: &ModelParams) -> Result<ServiceUtilities> {
    shares.check()?;
    Ok(ServiceUtilities::at(shares, params))
}

/// Payoff of a type-`theta` user; may be negative.
pub fn user_payoff(
    theta: f64,
    choice: ServiceChoice,
    shares: &MarketShare,
    prices: &PriceProfile,
    params: &ModelParams,
) -> Result<f64> {
    let theta = unit_interval("theta", theta)?;
    Ok(service_utilities(shares, params)?.payoff(theta, choice, prices))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionCheck {
    pub holds: bool,
    /// Margin of the defining inequality; negative when it fails.
    pub witness: f64,
}

impl AssumptionCheck {
    fn margin(witness: f64) -> Self {
        AssumptionCheck {
            holds: witness > CMP_TOL,
            witness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    /// `Q_L > alpha1 + max(alpha2, beta2)`.
    pub separation: AssumptionCheck,
    /// `f` non-negative, non-increasing, convex: `beta1 >= 0`, `gamma1 in (0, 1]`, `alpha1 >= beta1`.
    pub congestion: AssumptionCheck,
    /// `g` non-decreasing: `beta2 >= alpha2`.
    pub info_monotone: AssumptionCheck,
    /// `g` concave: `gamma2 in (0, 1]`.
    pub info_concave: AssumptionCheck,
    /// `min(alpha2, beta2) > 0`.
    pub info_positive: AssumptionCheck,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.separation.holds
            && self.congestion.holds
            && self.info_monotone.holds
            && self.info_concave.holds
            && self.info_positive.holds
    }

    /// `g` decreasing: the negative-externality-dominant sweep region.
    pub fn negative_dominant_regime(&self) -> bool {
        !self.info_monotone.holds
    }
}

pub fn validate_params(params: &ModelParams) -> Result<AssumptionReport> {
    let p = params;
    let fields = [
        p.alpha1,
        p.beta1,
        p.gamma1,
        p.alpha2,
        p.beta2,
        p.gamma2,
        p.q_leasing,
        p.cost_advanced,
        p.cost_leasing,
    ];
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(MarketError::InvalidParams("non-finite parameter".into()));
    }
    let g_min = p.alpha2.min(p.beta2);
    if g_min <= 0.0 {
        return Err(MarketError::InvalidParams(format!(
            "information gain reaches {g_min} <= 0; theta_ab is undefined"
        )));
    }
    if p.cost_advanced < 0.0 || p.cost_leasing < 0.0 {
        return Err(MarketError::InvalidParams("negative cost".into()));
    }
    let gamma1_ok = p.gamma1 > 0.0 && p.gamma1 <= 1.0;
    let congestion_witness = if gamma1_ok {
        p.beta1.min(p.alpha1 - p.beta1)
    } else {
        -1.0
    };
    let congestion = AssumptionCheck {
        holds: congestion_witness >= 0.0,
        witness: congestion_witness,
    };
    let info_monotone = AssumptionCheck {
        holds: p.beta2 >= p.alpha2,
        witness: p.beta2 - p.alpha2,
    };
    let concave_witness = if p.gamma2 > 0.0 { 1.0 - p.gamma2 } else { -1.0 };
    let info_concave = AssumptionCheck {
        holds: concave_witness >= 0.0 && p.gamma2 > 0.0,
        witness: concave_witness,
    };
    Ok(AssumptionReport {
        separation: AssumptionCheck::margin(p.q_leasing - (p.alpha1 + p.alpha2.max(p.beta2))),
        congestion,
        info_monotone,
        info_concave,
        info_positive: AssumptionCheck::margin(g_min),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    PositiveDominant,
    NegativeDominant,
    Neutral,
}

impl Dominance {
    fn of(value: f64) -> Self {
        if value > CMP_TOL {
            Dominance::PositiveDominant
        } else if value < -CMP_TOL {
            Dominance::NegativeDominant
        } else {
            Dominance::Neutral
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceReport {
    /// Sign class of `indicator`.
    pub class: Dominance,
    /// `-gamma1*beta1*(eta_a+eta_b)^(gamma1-1) + gamma2*beta2*eta_a^(gamma2-1)`.
    pub indicator: f64,
    /// `((eta_a + eta_b) / eta_a)^(1 - gamma1)`.
    pub lambda_threshold: f64,
    /// Class from comparing `lambda` with `lambda_threshold`; `None` when
    /// `beta1 == 0`. Agrees with `class` only when `eta_b == 0` and
    /// `gamma1 == gamma2`.
    pub threshold_class: Option<Dominance>,
    /// Exact `dR_A/d eta_a = g'(eta_a)` for comparison.
    pub exact_slope: f64,
}

pub fn externality_dominance(params: &ModelParams, shares: &MarketShare) -> Result<DominanceReport> {
    shares.check()?;
    if shares.eta_a <= 0.0 {
        return Err(MarketError::domain("eta_a", shares.eta_a, "(0, 1]"));
    }
    let p = params;
    let unlicensed = shares.eta_a + shares.eta_b().max(0.0);
    let indicator = -p.gamma1 * p.beta1 * unlicensed.powf(p.gamma1 - 1.0)
        + p.gamma2 * p.beta2 * shares.eta_a.powf(p.gamma2 - 1.0);
    let lambda_threshold = (unlicensed / shares.eta_a).powf(1.0 - p.gamma1);
    let threshold_class = p.lambda().map(|l| Dominance::of(l - lambda_threshold));
    Ok(DominanceReport {
        class: Dominance::of(indicator),
        indicator,
        lambda_threshold,
        threshold_class,
        exact_slope: p.g_slope_clamped(shares.eta_a),
    })
}
