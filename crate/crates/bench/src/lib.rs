//! Fixtures shared by the criterion benches.

use tvws_market::{BargainingOptions, CommissionScheme, ModelParams, PriceProfile, SensingParams};

pub fn params() -> ModelParams {
    ModelParams::default()
}

/// Price points on both branches of the user equilibrium.
pub fn price_points() -> Vec<PriceProfile> {
    vec![
        PriceProfile::new(2.0, 0.3),
        PriceProfile::new(3.5, 0.1),
        PriceProfile::new(1.0, 1.2),
        PriceProfile::new(4.3, 0.74),
    ]
}

pub fn schemes() -> [CommissionScheme; 2] {
    [CommissionScheme::RevenueShare(0.3), CommissionScheme::Wholesale(0.5)]
}

/// Coarser bargaining grid so one iteration stays under a second.
pub fn quick_bargaining() -> BargainingOptions {
    BargainingOptions {
        grid_steps: 41,
        ..BargainingOptions::default()
    }
}

pub fn sensing() -> SensingParams {
    SensingParams::default()
}
