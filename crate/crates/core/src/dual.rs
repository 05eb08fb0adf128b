//! The right semigroup `M_t f` on bounded test functions.
//!
//! `f(t, a) = M_t f₀(a)` is the fixed point of the Duhamel operator
//!
//! ```text
//! Γf(t, a) = f₀(a + t) S(a, t) + ∫₀ᵗ S(a, τ) β(a + τ) f(t − τ, 0) dτ,
//! S(a, τ) = e^{-(B(a+τ) − B(a))}.
//! ```
//!
//! `Γf` depends on `f` only through the boundary trace `f(·, 0)`, so the
//! Picard iteration runs on the trace alone; once it has converged one more
//! application of `Γ` fills the age profile. On a window of length `T` the
//! map is a contraction with ratio at most `T·β_max`; windows are chosen so
//! this ratio is at most 1/2 and composed for longer times.
//!
//! The time integral uses product integration: over each cell
//! `[τ_k, τ_{k+1}]` the kernel `S β` carries its exact mass
//! `S(a, τ_k) − S(a, τ_{k+1})`, split equally between the two trace values.
//! The discrete operator therefore maps constants to themselves exactly and
//! every node value is a convex combination of values of `f₀`, which makes
//! positivity, the sup bound and `M_t 1 = 1` hold to rounding.

use rayon::prelude::*;

use crate::grid::{self, GridFunction, NODE_SLACK};
use crate::hazard::HazardRate;
use crate::measure::TestFunction;
use crate::{Error, Numerics, Result};

/// Initial datum of a window: a test function, or the profile left by the
/// previous window.
#[derive(Clone, Debug)]
pub enum InitialProfile {
    Function(TestFunction),
    Grid(GridFunction),
}

impl From<TestFunction> for InitialProfile {
    fn from(f: TestFunction) -> Self {
        InitialProfile::Function(f)
    }
}

impl From<&TestFunction> for InitialProfile {
    fn from(f: &TestFunction) -> Self {
        InitialProfile::Function(f.clone())
    }
}

impl From<GridFunction> for InitialProfile {
    fn from(g: GridFunction) -> Self {
        InitialProfile::Grid(g)
    }
}

impl InitialProfile {
    #[inline]
    pub fn at(&self, a: f64) -> f64 {
        match self {
            InitialProfile::Function(f) => f.eval(a),
            InitialProfile::Grid(g) => g.at(a),
        }
    }

    /// Largest age at which the profile is defined.
    pub fn extent(&self) -> f64 {
        match self {
            InitialProfile::Function(_) => f64::INFINITY,
            InitialProfile::Grid(g) => g.extent(),
        }
    }
}

/// `a ↦ f′(a) + β(a)(f(0) − f(a))`.
pub fn apply_generator(f: &TestFunction, hazard: &HazardRate) -> Result<TestFunction> {
    let df = f
        .derivative_fn()
        .cloned()
        .ok_or_else(|| Error::Contract(format!("`{}` has no derivative", f.label())))?;
    let value = f.value_fn().clone();
    let rate = hazard.rate_fn();
    let f0 = value(0.0);
    let sup = f.derivative_sup() + 2.0 * hazard.beta_max() * f.sup_bound();
    Ok(TestFunction::new(format!("A[{}]", f.label()), sup, move |a| {
        df(a) + rate(a) * (f0 - value(a))
    }))
}

/// The converged fixed point on one window `[0, window] × [0, A]`.
#[derive(Clone, Debug)]
pub struct DualSolution {
    pub window: f64,
    pub time_step: f64,
    pub age_step: f64,
    initial: InitialProfile,
    trace: Vec<f64>,
    end: GridFunction,
    increments: Vec<f64>,
}

impl DualSolution {
    /// `f(t_j, 0)` for `t_j = j · time_step`.
    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    /// `f(window, ·)` on the age grid.
    pub fn end_profile(&self) -> &GridFunction {
        &self.end
    }

    pub fn into_end_profile(self) -> GridFunction {
        self.end
    }

    pub fn steps(&self) -> usize {
        self.trace.len() - 1
    }

    /// Sup-norm distance between successive Picard iterates of the trace.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn iterations(&self) -> usize {
        self.increments.len()
    }

    /// `f(t_j, a)` for any age, by applying `Γ` to the converged trace.
    pub fn value(&self, hazard: &HazardRate, j: usize, a: f64) -> f64 {
        let b_a = hazard.cumulative_unchecked(a);
        let h = self.time_step;
        gamma(&self.initial, &self.trace, a, j, h, |k| {
            (b_a - hazard.cumulative_unchecked(a + k as f64 * h)).exp()
        })
    }

    /// Same value through the shifted form of the Duhamel integral, which
    /// runs over absolute ages `u ∈ [a, a + t]` against `f(a + t − u, 0)`.
    pub fn value_shifted(&self, hazard: &HazardRate, j: usize, a: f64) -> f64 {
        let h = self.time_step;
        let b_a = hazard.cumulative_unchecked(a);
        let surv = |u: f64| (b_a - hazard.cumulative_unchecked(u)).exp();
        let t = j as f64 * h;
        let mut acc = 0.0;
        // Cells [u_m, u_{m+1}] with u_m = a + t − m h, trace index m at the
        // right end of the original cell.
        for m in (1..=j).rev() {
            let u_hi = a + t - (m - 1) as f64 * h;
            let u_lo = a + t - m as f64 * h;
            acc += 0.5 * (surv(u_lo) - surv(u_hi)) * (self.trace[m] + self.trace[m - 1]);
        }
        acc + self.initial.at(a + t) * surv(a + t)
    }

    /// Checks positivity (when `f₀ ≥ 0`) and the sup bound on the trace and
    /// the end profile. Returns the largest excess over `sup|f₀|`.
    pub fn sup_excess(&self, f0_sup: f64) -> f64 {
        let m = self
            .trace
            .iter()
            .chain(&self.end.values)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        m - f0_sup
    }

    pub fn min_value(&self) -> f64 {
        self.trace
            .iter()
            .chain(&self.end.values)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `Γ` at age `a`, time index `j`, given the trace and `S(a, τ_k)` as a
/// function of `k`.
#[inline]
fn gamma(
    initial: &InitialProfile,
    trace: &[f64],
    a: f64,
    j: usize,
    h: f64,
    mut surv: impl FnMut(usize) -> f64,
) -> f64 {
    let mut s_prev = 1.0;
    let mut acc = 0.0;
    for k in 0..j {
        let s_next = surv(k + 1);
        acc += 0.5 * (s_prev - s_next) * (trace[j - k] + trace[j - k - 1]);
        s_prev = s_next;
    }
    acc + initial.at(a + j as f64 * h) * s_prev
}

/// Solves one window of length `window` by Picard iteration on the trace,
/// then evaluates the profile at the first `out_nodes` age nodes.
///
/// Requires `window · β_max ≤ 1/2`.
pub fn picard_window(
    initial: &InitialProfile,
    hazard: &HazardRate,
    window: f64,
    out_nodes: usize,
    numerics: &Numerics,
) -> Result<DualSolution> {
    let age_step = hazard.step();
    if (age_step - numerics.age_step).abs() > 1e-12 * age_step {
        return Err(Error::Contract(format!(
            "hazard grid step {age_step} differs from the age step {}",
            numerics.age_step
        )));
    }
    if !(window > 0.0) {
        return Err(Error::Contract(format!("window {window} must be > 0")));
    }
    if window * hazard.beta_max() > 0.5 * (1.0 + NODE_SLACK) {
        return Err(Error::Contract(format!(
            "window {window} too long for beta_max {}: contraction needs T*beta_max <= 1/2",
            hazard.beta_max()
        )));
    }
    let steps = (window / numerics.time_step - NODE_SLACK).ceil().max(1.0) as usize;
    let h = window / steps as f64;
    let out_extent = out_nodes.saturating_sub(1) as f64 * age_step;
    hazard.ensure_covers(out_extent + window)?;
    if initial.extent() < (out_extent + window) * (1.0 - NODE_SLACK) {
        return Err(Error::Domain(format!(
            "initial profile known on [0, {}] but [0, {}] is needed",
            initial.extent(),
            out_extent + window
        )));
    }

    // Trace fixed point: φ_j = f₀(t_j) S_j + Σ_{k<j} w_k (φ_{j−k} + φ_{j−k−1}).
    let s0: Vec<f64> = (0..=steps)
        .map(|k| (-hazard.cumulative_unchecked(k as f64 * h)).exp())
        .collect();
    let weights: Vec<f64> = s0.windows(2).map(|w| 0.5 * (w[0] - w[1])).collect();
    let source: Vec<f64> = (0..=steps).map(|j| initial.at(j as f64 * h) * s0[j]).collect();
    if let Some((j, v)) = source.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Evaluation {
            age: j as f64 * h,
            value: *v,
        });
    }
    let mut trace = source.clone();
    let mut next = vec![0.0; steps + 1];
    let mut increments = Vec::new();
    loop {
        let mut diff = 0.0f64;
        let mut scale = 1.0f64;
        for j in 0..=steps {
            let mut v = source[j];
            for k in 0..j {
                v += weights[k] * (trace[j - k] + trace[j - k - 1]);
            }
            diff = diff.max((v - trace[j]).abs());
            scale = scale.max(v.abs());
            next[j] = v;
        }
        std::mem::swap(&mut trace, &mut next);
        increments.push(diff);
        if diff <= numerics.tol_picard * scale {
            break;
        }
        if increments.len() >= numerics.max_picard_iter {
            return Err(Error::Convergence {
                iterations: increments.len(),
                increment: diff,
            });
        }
    }

    let aligned = (h - age_step).abs() <= NODE_SLACK * age_step;
    let step_surv = hazard.step_survival();
    let values: Vec<f64> = (0..out_nodes)
        .into_par_iter()
        .map(|i| {
            let a = i as f64 * age_step;
            if aligned {
                let mut s = 1.0;
                gamma(initial, &trace, a, steps, h, |k| {
                    s *= step_surv[i + k - 1];
                    s
                })
            } else {
                let b_a = hazard.cumulative_unchecked(a);
                gamma(initial, &trace, a, steps, h, |k| {
                    (b_a - hazard.cumulative_unchecked(a + k as f64 * h)).exp()
                })
            }
        })
        .collect();

    Ok(DualSolution {
        window,
        time_step: h,
        age_step,
        initial: initial.clone(),
        trace,
        end: GridFunction::new(age_step, values),
        increments,
    })
}

/// Longest window allowed by the contraction requirement, rounded down to a
/// whole number of time steps.
pub fn window_length(hazard: &HazardRate, numerics: &Numerics) -> f64 {
    let limit = if hazard.beta_max() > 0.0 {
        0.5 / hazard.beta_max()
    } else {
        f64::INFINITY
    };
    let steps = (limit / numerics.time_step + NODE_SLACK).floor();
    if steps >= 1.0 {
        steps * numerics.time_step
    } else {
        limit
    }
}

/// `M_t f₀` sampled on the age nodes of `[0, out_extent]`, by composing
/// Picard windows.
pub fn evolve_dual(
    initial: impl Into<InitialProfile>,
    hazard: &HazardRate,
    t: f64,
    out_extent: f64,
    numerics: &Numerics,
) -> Result<GridFunction> {
    let initial = initial.into();
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Contract(format!("time {t} must be finite and >= 0")));
    }
    let h_a = numerics.age_step;
    let out_nodes = grid::nodes_to_cover(out_extent, h_a);
    if t == 0.0 {
        return Ok(GridFunction::new(
            h_a,
            (0..out_nodes).map(|i| initial.at(i as f64 * h_a)).collect(),
        ));
    }
    hazard.ensure_covers(out_extent + t)?;
    let full = window_length(hazard, numerics);
    let mut profile = initial;
    let mut remaining = t;
    loop {
        let len = if remaining <= full * (1.0 + NODE_SLACK) {
            remaining
        } else {
            full
        };
        let mut after = remaining - len;
        if after <= NODE_SLACK * t {
            after = 0.0;
        }
        let nodes = grid::nodes_to_cover(out_extent + after, h_a);
        let sol = picard_window(&profile, hazard, len, nodes, numerics)?;
        profile = InitialProfile::Grid(sol.into_end_profile());
        remaining = after;
        if remaining == 0.0 {
            break;
        }
    }
    match profile {
        InitialProfile::Grid(mut g) => {
            g.values.truncate(out_nodes);
            Ok(g)
        }
        InitialProfile::Function(_) => unreachable!("at least one window was solved"),
    }
}

/// Finite-difference check of `∂ₜ M_t f = M_t 𝒜 f` at `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorReport {
    pub h: f64,
    /// `sup |(M_h f₀ − f₀)/h − 𝒜f₀|`.
    pub vs_generator: f64,
    /// `sup |(M_h f₀ − f₀)/h − M_h 𝒜f₀|`.
    pub vs_propagated: f64,
}

/// Compares the difference quotient `(M_h f₀ − f₀)/h` with the generator on
/// the age nodes of `[0, extent]`. Both residuals are `O(h)`.
pub fn generator_consistency(
    f0: &TestFunction,
    hazard: &HazardRate,
    h: f64,
    extent: f64,
    numerics: &Numerics,
) -> Result<GeneratorReport> {
    let generated = apply_generator(f0, hazard)?;
    let sub = (h / numerics.time_step - NODE_SLACK).ceil().max(1.0);
    let fine = Numerics {
        time_step: h / sub,
        ..numerics.clone()
    };
    let moved = evolve_dual(f0, hazard, h, extent, &fine)?;
    let moved_gen = evolve_dual(&generated, hazard, h, extent, &fine)?;
    let mut vs_generator = 0.0f64;
    let mut vs_propagated = 0.0f64;
    for (i, m) in moved.values.iter().enumerate() {
        let a = moved.age(i);
        let quotient = (m - f0.eval(a)) / h;
        vs_generator = vs_generator.max((quotient - generated.eval(a)).abs());
        vs_propagated = vs_propagated.max((quotient - moved_gen.values[i]).abs());
    }
    Ok(GeneratorReport {
        h,
        vs_generator,
        vs_propagated,
    })
}
