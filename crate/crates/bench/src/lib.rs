//! Fixtures shared by the benchmarks.

use oscitune_core::model::{repressilator, three_way};
use oscitune_core::{CrnModel, PeriodMeter, PeriodMeterConfig};

pub const THREE_WAY_THETA: [f64; 3] = [1.0, 1.0, 1.0];
pub const REPRESSILATOR_THETA: [f64; 4] = [200.0, 2.0, 2.0, 0.0];

/// The 3-way oscillator with its experiment meter (A, L=300, H=360, N=4).
pub fn three_way_meter() -> (CrnModel, PeriodMeter) {
    let model = three_way();
    let cfg = PeriodMeterConfig {
        species: "A".into(),
        low: 300,
        high: 360,
        n_periods: 4,
        target: 0.01,
        distance_mode: Default::default(),
    };
    let meter = PeriodMeter::new(&cfg, &model).expect("valid meter");
    (model, meter)
}

/// The repressilator with its experiment meter (P1, L=50, H=200, N=4).
pub fn repressilator_meter() -> (CrnModel, PeriodMeter) {
    let model = repressilator();
    let cfg = PeriodMeterConfig {
        species: "P1".into(),
        low: 50,
        high: 200,
        n_periods: 4,
        target: 20.0,
        distance_mode: Default::default(),
    };
    let meter = PeriodMeter::new(&cfg, &model).expect("valid meter");
    (model, meter)
}
