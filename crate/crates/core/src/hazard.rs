//! Division rates `β(a)` with declared bounds and a precomputed cumulative
//! hazard `B(a) = ∫₀ᵃ β`.

use std::fmt;

use crate::expr::{self, ScalarFn};
use crate::grid::{self, NODE_SLACK};
use crate::{Error, Result};

/// How the rate is specified.
#[derive(Clone, Debug, PartialEq)]
pub enum RateForm {
    Constant(f64),
    /// Piecewise-linear through `(ages[i], values[i])`, constant outside.
    Table { ages: Vec<f64>, values: Vec<f64> },
    /// Expression in the variable `a`.
    Expr(String),
}

/// Declared structural bounds `β_min 1_{[a*,∞)} ≤ β ≤ β_max`.
///
/// `a_star = 0` declares `β ≥ β_min` everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateBounds {
    pub beta_min: f64,
    pub beta_max: f64,
    pub a_star: f64,
}

#[derive(Clone)]
pub struct HazardRate {
    form: RateForm,
    eval: ScalarFn,
    bounds: RateBounds,
    step: f64,
    rates: Vec<f64>,
    cumulative: Vec<f64>,
    /// `e^{-B}` at nodes, `None` when it would underflow.
    survival0: Option<Vec<f64>>,
    /// `e^{-(B[i+1] - B[i])}`.
    step_survival: Vec<f64>,
}

impl fmt::Debug for HazardRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HazardRate")
            .field("form", &self.form)
            .field("bounds", &self.bounds)
            .field("step", &self.step)
            .field("extent", &self.extent())
            .finish()
    }
}

fn table_fn(ages: Vec<f64>, values: Vec<f64>) -> Result<ScalarFn> {
    if ages.is_empty() || ages.len() != values.len() {
        return Err(Error::Contract(
            "rate table needs matching, nonempty age and value lists".into(),
        ));
    }
    if ages.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Contract("rate table ages must be strictly increasing".into()));
    }
    Ok(std::sync::Arc::new(move |a| {
        let k = ages.partition_point(|x| *x <= a);
        if k == 0 {
            values[0]
        } else if k == ages.len() {
            values[k - 1]
        } else {
            let t = (a - ages[k - 1]) / (ages[k] - ages[k - 1]);
            values[k - 1] + t * (values[k] - values[k - 1])
        }
    }))
}

impl HazardRate {
    /// Samples the rate on `[0, extent]` with step `step` and accumulates
    /// `B` by the trapezoidal rule. `extent` should cover the truncation
    /// age plus the longest time horizon that will be requested.
    pub fn new(form: RateForm, bounds: RateBounds, step: f64, extent: f64) -> Result<Self> {
        if !(step > 0.0) || !(extent > 0.0) {
            return Err(Error::Contract(format!(
                "grid step {step} and extent {extent} must be > 0"
            )));
        }
        let eval = match &form {
            RateForm::Constant(c) => {
                let c = *c;
                std::sync::Arc::new(move |_| c) as ScalarFn
            }
            RateForm::Table { ages, values } => table_fn(ages.clone(), values.clone())?,
            RateForm::Expr(src) => expr::compile(src)?,
        };
        let n = grid::nodes_to_cover(extent, step);
        let rates: Vec<f64> = (0..n).map(|i| eval(i as f64 * step)).collect();
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in rates.windows(2) {
            acc += 0.5 * step * (w[0] + w[1]);
            cumulative.push(acc);
        }
        let step_survival = cumulative.windows(2).map(|w| (w[0] - w[1]).exp()).collect();
        let survival0 = if acc < 600.0 {
            Some(cumulative.iter().map(|b| (-b).exp()).collect())
        } else {
            None
        };
        Ok(Self {
            form,
            eval,
            bounds,
            step,
            rates,
            cumulative,
            survival0,
            step_survival,
        })
    }

    /// `β ≡ value`, with `β_min = β_max = value`.
    pub fn constant(value: f64, a_star: f64, step: f64, extent: f64) -> Result<Self> {
        Self::new(
            RateForm::Constant(value),
            RateBounds {
                beta_min: value,
                beta_max: value,
                a_star,
            },
            step,
            extent,
        )
    }

    pub fn form(&self) -> &RateForm {
        &self.form
    }

    pub fn bounds(&self) -> RateBounds {
        self.bounds
    }

    pub fn beta_min(&self) -> f64 {
        self.bounds.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.bounds.beta_max
    }

    pub fn a_star(&self) -> f64 {
        self.bounds.a_star
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Last age covered by the precomputed tables.
    pub fn extent(&self) -> f64 {
        (self.cumulative.len() - 1) as f64 * self.step
    }

    pub fn nodes(&self) -> usize {
        self.cumulative.len()
    }

    /// `β(a)` from the underlying evaluator, defined for every `a ≥ 0`.
    #[inline]
    pub fn rate(&self, a: f64) -> f64 {
        (self.eval)(a)
    }

    pub(crate) fn rate_fn(&self) -> ScalarFn {
        self.eval.clone()
    }

    pub fn node_rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn node_cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub(crate) fn survival_from_zero(&self) -> Option<&[f64]> {
        self.survival0.as_deref()
    }

    pub(crate) fn step_survival(&self) -> &[f64] {
        &self.step_survival
    }

    pub(crate) fn ensure_covers(&self, a: f64) -> Result<()> {
        if a > self.extent() * (1.0 + NODE_SLACK) {
            Err(Error::Domain(format!(
                "age {a} lies beyond the precomputed hazard grid [0, {}]",
                self.extent()
            )))
        } else {
            Ok(())
        }
    }

    /// `B(a)`, linearly interpolated between nodes.
    pub fn cumulative(&self, a: f64) -> Result<f64> {
        if !(a >= 0.0) {
            return Err(Error::Domain(format!("{a} is not a nonnegative age")));
        }
        self.ensure_covers(a)?;
        Ok(self.cumulative_unchecked(a))
    }

    #[inline]
    pub(crate) fn cumulative_unchecked(&self, a: f64) -> f64 {
        let x = a / self.step;
        let i = x.floor() as usize;
        let n = self.cumulative.len();
        if i + 1 >= n {
            return self.cumulative[n - 1];
        }
        let frac = x - i as f64;
        self.cumulative[i] + frac * (self.cumulative[i + 1] - self.cumulative[i])
    }

    /// Probability `e^{-(B(a+t) - B(a))}` of no reset while ageing from `a`
    /// to `a + t`.
    pub fn survival(&self, a: f64, t: f64) -> Result<f64> {
        self.cumulative(a)?;
        let end = self.cumulative(a + t)?;
        Ok((self.cumulative_unchecked(a) - end).exp())
    }

    /// Checks the declared bounds, nonnegativity and grid-level continuity at
    /// every node of `[0, a_max]`.
    pub fn validate(&self, a_max: f64) -> ValidationReport {
        let mut violations = Vec::new();
        let RateBounds {
            beta_min,
            beta_max,
            a_star,
        } = self.bounds;
        if !(beta_min > 0.0) || !(beta_max > 0.0) || !(a_star >= 0.0) || beta_min > beta_max {
            violations.push(Violation {
                kind: ViolationKind::InvalidBounds,
                age: 0.0,
                value: beta_min,
            });
        }
        let n = grid::nodes_to_cover(a_max, self.step);
        // A cell increment above this fraction of β_max is treated as a jump.
        let jump = CONTINUITY_FRACTION * beta_max.abs().max(f64::MIN_POSITIVE);
        let mut prev: Option<f64> = None;
        for i in 0..n {
            let a = i as f64 * self.step;
            let b = self.rate(a);
            let mut push = |kind| violations.push(Violation { kind, age: a, value: b });
            if !b.is_finite() {
                push(ViolationKind::NonFinite);
                prev = None;
                continue;
            }
            if b < 0.0 {
                push(ViolationKind::Negative);
            }
            if b > beta_max {
                push(ViolationKind::AboveMax);
            }
            if a >= a_star && b < beta_min {
                push(ViolationKind::BelowMin);
            }
            if let Some(p) = prev {
                if (b - p).abs() > jump {
                    push(ViolationKind::Discontinuity);
                }
            }
            prev = Some(b);
        }
        ValidationReport { violations }
    }
}

/// Largest per-cell increment of `β`, relative to `β_max`, accepted as
/// continuous at grid resolution.
pub const CONTINUITY_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    InvalidBounds,
    NonFinite,
    Negative,
    AboveMax,
    BelowMin,
    Discontinuity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub age: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.first() {
            None => write!(f, "rate valid"),
            Some(v) => write!(
                f,
                "{} violation(s); first: {:?} at age {} (beta = {})",
                self.violations.len(),
                v.kind,
                v.age,
                v.value
            ),
        }
    }
}
