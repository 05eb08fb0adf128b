//! Shared fixtures for the solver benchmarks.

use renewal_core::{HazardRate, RateBounds, RateForm};

/// A piecewise-linear rate rising from 0.5 to 1.5 over `[0, 2]`.
pub fn ramp(step: f64, extent: f64) -> HazardRate {
    HazardRate::new(
        RateForm::Table {
            ages: vec![0.0, 2.0],
            values: vec![0.5, 1.5],
        },
        RateBounds {
            beta_min: 1.0,
            beta_max: 1.5,
            a_star: 1.0,
        },
        step,
        extent,
    )
    .expect("valid ramp")
}
