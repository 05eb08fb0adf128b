//! Long-time behaviour: the invariant measure, Doeblin constants and
//! total-variation decay.
//!
//! Under `β ≤ β_max` everywhere and `β ≥ β_min` beyond `a_*`, every
//! probability measure satisfies `μ M_{t₀} ≥ c ν` with
//!
//! ```text
//! t₀ = a_* + η,    c = η β_min e^{-β_max (a_* + η)},    ν = uniform on [0, η],
//! ```
//!
//! which yields `‖μ₁M_t − μ₂M_t‖_TV ≤ e^{-α(t − t₀)} ‖μ₁ − μ₂‖_TV` with
//! `α = −ln(1 − c)/t₀` for measures of equal mass.

use rayon::prelude::*;

use crate::dual::evolve_dual;
use crate::forward::ForwardSolution;
use crate::grid::{self, GridFunction};
use crate::hazard::{HazardRate, RateBounds};
use crate::measure::{truncation_family, SignedMeasure, TestFunction};
use crate::reference::simpson;
use crate::{Error, Numerics, Result};

/// `dμ∞ = N(a) da` with `N(a) = N(0) e^{-B(a)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryMeasure {
    pub n0: f64,
    pub measure: SignedMeasure,
}

/// The invariant probability measure, truncated at `a_max` and normalised
/// with the trapezoidal rule so that its reported mass is exactly one.
pub fn stationary(hazard: &HazardRate, a_max: f64) -> Result<StationaryMeasure> {
    let h = hazard.step();
    let nodes = grid::nodes_to_cover(a_max, h);
    hazard.ensure_covers((nodes - 1) as f64 * h)?;
    let survival: Vec<f64> = hazard.node_cumulative()[..nodes]
        .iter()
        .map(|b| (-b).exp())
        .collect();
    let n0 = 1.0 / grid::trapezoid(&survival, h);
    let density = GridFunction::new(h, survival.into_iter().map(|s| n0 * s).collect());
    Ok(StationaryMeasure {
        n0,
        measure: SignedMeasure::from_density(density)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoeblinCertificate {
    pub eta: f64,
    pub t0: f64,
    pub c: f64,
    pub alpha: f64,
}

impl DoeblinCertificate {
    /// Density of `ν`, the uniform probability on `[0, η]`.
    pub fn nu_density(&self, a: f64) -> f64 {
        if (0.0..=self.eta).contains(&a) {
            1.0 / self.eta
        } else {
            0.0
        }
    }

    /// `ν f = (1/η) ∫₀^η f`.
    pub fn nu_integral(&self, f: &TestFunction) -> f64 {
        simpson(|a| f.eval(a), 0.0, self.eta, 2000) / self.eta
    }

    /// `e^{-α(t − t₀)}`.
    pub fn decay_factor(&self, t: f64) -> f64 {
        (-self.alpha * (t - self.t0)).exp()
    }
}

/// Doeblin constants for the window `η`.
pub fn certificate(bounds: RateBounds, eta: f64) -> Result<DoeblinCertificate> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Contract(format!("eta must be positive, got {eta}")));
    }
    if !(bounds.beta_min > 0.0) || bounds.beta_min > bounds.beta_max {
        return Err(Error::Contract(format!(
            "rate bounds need 0 < beta_min <= beta_max, got {} and {}",
            bounds.beta_min, bounds.beta_max
        )));
    }
    let t0 = bounds.a_star + eta;
    let c = eta * bounds.beta_min * (-bounds.beta_max * t0).exp();
    let alpha = -(-c).ln_1p() / t0;
    assert!(c > 0.0 && c < 1.0, "minorization constant {c} outside (0, 1)");
    assert!(alpha > 0.0);
    Ok(DoeblinCertificate { eta, t0, c, alpha })
}

/// Scan resolution used by [`best_certificate`].
pub const DEFAULT_SCAN_POINTS: usize = 4000;

/// The certificate maximising `α` over `η ∈ (0, 10/β_max]`.
pub fn best_certificate(bounds: RateBounds) -> Result<DoeblinCertificate> {
    best_certificate_with(bounds, DEFAULT_SCAN_POINTS)
}

/// [`best_certificate`] with an explicit scan density. A dense scan finds the
/// best bracket; golden-section search refines inside it. Unimodality of
/// `α(η)` is not assumed: the refined point only replaces the scan maximum
/// when it is better.
pub fn best_certificate_with(bounds: RateBounds, points: usize) -> Result<DoeblinCertificate> {
    let points = points.max(3);
    let eta_max = 10.0 / bounds.beta_max;
    let d = eta_max / points as f64;
    let alpha = |eta: f64| certificate(bounds, eta).map(|c| c.alpha);
    let mut best = certificate(bounds, d)?;
    let mut best_k = 1;
    for k in 2..=points {
        let c = certificate(bounds, k as f64 * d)?;
        if c.alpha > best.alpha {
            best = c;
            best_k = k;
        }
    }
    // Keep η strictly positive: with a_* = 0 the supremum sits at η → 0.
    let mut lo = ((best_k - 1) as f64 * d).max(d * 1e-6);
    let mut hi = ((best_k + 1) as f64 * d).min(eta_max);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (alpha(x1)?, alpha(x2)?);
    while hi - lo > 1e-12 * eta_max {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = alpha(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = alpha(x1)?;
        }
    }
    let refined = certificate(bounds, 0.5 * (lo + hi))?;
    Ok(if refined.alpha > best.alpha {
        refined
    } else {
        best
    })
}

/// Nonnegative test functions used to probe the minorization: constants,
/// exponentials, truncations, bumps inside and outside `[0, η]`.
pub fn minorization_battery(eta: f64) -> Vec<TestFunction> {
    let mut battery = vec![
        TestFunction::constant(1.0),
        TestFunction::exp_decay(1.0),
        TestFunction::exp_decay(3.0),
    ];
    let ramp = TestFunction::new("a/(1+a)", 1.0, |a| a / (1.0 + a))
        .with_derivative(1.0, |a| 1.0 / ((1.0 + a) * (1.0 + a)));
    for n in [1, 2, 5] {
        battery.push(truncation_family(&ramp, n));
    }
    for frac in [0.25, 0.5, 0.75] {
        battery.push(TestFunction::bump(frac * eta, 0.25 * eta));
    }
    battery.push(TestFunction::bump(0.5 * eta, 0.5 * eta));
    battery.push(TestFunction::bump(eta + 1.0, 0.5));
    battery
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinorizationEntry {
    pub label: String,
    /// `ν f`.
    pub nu_f: f64,
    /// `min_a M_{t₀}f(a) − c νf` over the checked ages.
    pub margin: f64,
    /// Age attaining the margin.
    pub age: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinorizationReport {
    pub a_check: f64,
    pub tolerance: f64,
    pub entries: Vec<MinorizationEntry>,
}

impl MinorizationReport {
    pub fn min_margin(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self) -> bool {
        self.min_margin() >= -self.tolerance
    }
}

/// Checks `M_{t₀}f ≥ c νf` on the age nodes of `[0, A_max − t₀]`, where the
/// dual solution only uses rate values inside the grid.
pub fn verify_minorization(
    hazard: &HazardRate,
    cert: &DoeblinCertificate,
    battery: &[TestFunction],
    numerics: &Numerics,
) -> Result<MinorizationReport> {
    let a_check = numerics.a_max - cert.t0;
    if !(a_check > 0.0) {
        return Err(Error::Contract(format!(
            "A_max = {} leaves no ages to check after t0 = {}",
            numerics.a_max, cert.t0
        )));
    }
    // t₀ need not lie on the time grid; shrink the step to land on it.
    let steps = (cert.t0 / numerics.time_step - grid::NODE_SLACK).ceil();
    let fitted = Numerics {
        time_step: cert.t0 / steps,
        ..numerics.clone()
    };
    let entries = battery
        .par_iter()
        .map(|f| {
            let profile = evolve_dual(f, hazard, cert.t0, a_check, &fitted)?;
            let nu_f = cert.nu_integral(f);
            let (i, m) = profile
                .values
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
            Ok(MinorizationEntry {
                label: f.label().to_string(),
                nu_f,
                margin: m - cert.c * nu_f,
                age: profile.age(i),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MinorizationReport {
        a_check,
        tolerance: numerics.eps_minor,
        entries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayRow {
    pub t: f64,
    pub tv: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayTable {
    pub initial_tv: f64,
    pub rows: Vec<DecayRow>,
}

impl DecayTable {
    /// `max(tv − bound)` over the rows.
    pub fn max_excess(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.tv - r.bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Least-squares slope of `−ln tv` against `t`, over rows with
    /// `tv > floor`. `None` with fewer than two usable rows.
    pub fn fitted_rate(&self, floor: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.tv > floor)
            .map(|r| (r.t, r.tv.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
        Some(-sxy / sxx)
    }
}

/// `(t, ‖μ₁M_t − μ₂M_t‖_TV, e^{-α(t−t₀)} ‖μ₁ − μ₂‖_TV)` at each requested time.
pub fn tv_decay_experiment(
    mu1: &SignedMeasure,
    mu2: &SignedMeasure,
    hazard: &HazardRate,
    cert: &DoeblinCertificate,
    times: &[f64],
    numerics: &Numerics,
) -> Result<DecayTable> {
    let (m1, m2) = (mu1.mass(), mu2.mass());
    if (m1 - m2).abs() > numerics.tol_mass * m1.abs().max(m2.abs()).max(1.0) {
        return Err(Error::Contract(format!(
            "TV decay needs measures of equal mass, got {m1} and {m2}"
        )));
    }
    let initial_tv = mu1.sub(mu2)?.tv_norm();
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let (s1, s2) = rayon::join(
        || ForwardSolution::solve(mu1, hazard, horizon, numerics),
        || ForwardSolution::solve(mu2, hazard, horizon, numerics),
    );
    let (s1, s2) = (s1?, s2?);
    let rows = times
        .par_iter()
        .map(|&t| {
            let tv = s1.at(t)?.sub(&s2.at(t)?)?.tv_norm();
            Ok(DecayRow {
                t,
                tv,
                bound: cert.decay_factor(t) * initial_tv,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecayTable { initial_tv, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::RateForm;

    fn bounds(min: f64, max: f64, a_star: f64) -> RateBounds {
        RateBounds {
            beta_min: min,
            beta_max: max,
            a_star,
        }
    }

    #[test]
    fn stationary_examples() {
        let hz = HazardRate::constant(1.0, 0.0, 1e-3, 40.0).unwrap();
        let st = stationary(&hz, 40.0).unwrap();
        assert!((st.n0 - 1.0).abs() < 1e-6);
        let d = st.measure.density().unwrap();
        assert!((d.at(1.0) - (-1.0f64).exp()).abs() < 1e-6);
        assert!((st.measure.mass() - 1.0).abs() < 1e-12);

        let hz = HazardRate::constant(2.0, 0.0, 1e-3, 40.0).unwrap();
        let st = stationary(&hz, 40.0).unwrap();
        let d = st.measure.density().unwrap();
        assert!((d.at(0.5) - 2.0 * (-1.0f64).exp()).abs() < 1e-5);
        assert!(st.measure.is_nonnegative(0.0));
    }

    #[test]
    fn certificate_example() {
        let c = certificate(bounds(1.0, 1.0, 0.1), 1.0).unwrap();
        assert!((c.t0 - 1.1).abs() < 1e-15);
        assert!((c.c - (-1.1f64).exp()).abs() < 1e-15);
        assert!((c.c - 0.332871).abs() < 1e-6);
        assert!((c.alpha - 0.36797).abs() < 1e-4);
        assert!(certificate(bounds(1.0, 1.0, 0.1), 0.0).is_err());
        assert!(certificate(bounds(0.0, 1.0, 0.1), 1.0).is_err());
    }

    #[test]
    fn small_window_limit_without_threshold() {
        let c = certificate(bounds(0.7, 1.3, 0.0), 1e-7).unwrap();
        assert!((c.alpha - 0.7).abs() < 1e-5);
        assert!(c.c > 0.0 && c.c < 1e-6);
    }

    #[test]
    fn best_certificate_dominates_scan() {
        let b = bounds(1.0, 1.0, 0.1);
        let best = best_certificate(b).unwrap();
        assert!(best.alpha >= certificate(b, 1.0).unwrap().alpha);
        for k in 1..=500 {
            let eta = k as f64 * 0.01;
            assert!(best.alpha >= certificate(b, eta).unwrap().alpha);
        }
        let finer = best_certificate_with(b, 2 * DEFAULT_SCAN_POINTS).unwrap();
        assert!((finer.alpha - best.alpha).abs() <= 1e-6);
    }

    #[test]
    fn decay_rejects_unequal_mass() {
        let hz = HazardRate::constant(1.0, 0.1, 1e-3, 20.0).unwrap();
        let cert = certificate(hz.bounds(), 1.0).unwrap();
        let n = Numerics::default();
        let mu2 = SignedMeasure::from_atoms(&[(0.0, 0.5)]).unwrap();
        let err = tv_decay_experiment(&SignedMeasure::dirac(0.0), &mu2, &hz, &cert, &[1.0], &n);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn equal_measures_do_not_separate() {
        let hz = HazardRate::constant(1.0, 0.1, 1e-3, 20.0).unwrap();
        let cert = certificate(hz.bounds(), 1.0).unwrap();
        let n = Numerics::default();
        let mu = SignedMeasure::dirac(0.3);
        let table = tv_decay_experiment(&mu, &mu, &hz, &cert, &[1.0, 2.0], &n).unwrap();
        assert!(table.rows.iter().all(|r| r.tv == 0.0));
    }

    #[test]
    fn minorization_on_ramp() {
        let hz = HazardRate::new(
            RateForm::Table {
                ages: vec![0.0, 1.0, 2.0],
                values: vec![0.5, 1.0, 1.5],
            },
            bounds(1.0, 1.5, 1.0),
            1e-3,
            12.0,
        )
        .unwrap();
        let n = Numerics {
            a_max: 12.0,
            ..Numerics::default()
        };
        let cert = certificate(hz.bounds(), 0.5).unwrap();
        let report = verify_minorization(&hz, &cert, &minorization_battery(0.5), &n).unwrap();
        assert!(report.passed(), "{report:?}");
        // f ≡ 1 gives 1 − c.
        let one = &report.entries[0];
        assert!((one.margin - (1.0 - cert.c)).abs() < 1e-10);
        // Bumps beyond η have νf = 0.
        assert_eq!(report.entries.last().unwrap().nu_f, 0.0);
    }
}
