//! The left action `μⁱⁿ M_t`: measure solutions of the renewal equation.
//!
//! The solution splits into the part of `μⁱⁿ` that has not reset yet and a
//! newborn part:
//!
//! ```text
//! μ_t = Σᵢ wᵢ S(aᵢ, t) δ_{aᵢ+t}  +  d(a − t) S(a − t, t) 1_{a ≥ t} da  +  b(t − a) e^{-B(a)} 1_{a < t} da
//! ```
//!
//! where `d` is the initial density and `b` the boundary flux
//! `n(t, 0) = ∫ β dμ_t`. The flux is obtained from the balance between the
//! mass lost by the initial population and the mass of the newborn part,
//! `∫₀ᵗ b(s) e^{-B(t−s)} ds = F(0) − F(t)`, the time-integrated form of the
//! renewal equation for `b`. Time steps follow characteristics
//! (`h_t = h_a`), so the newborn density at `t_n` lives on age nodes and the
//! balance is imposed on exactly the trapezoidal mass that
//! [`SignedMeasure::mass`] reports. Mass is conserved to rounding and the
//! flux is second-order accurate.

use rayon::prelude::*;

use crate::dual::{apply_generator, evolve_dual};
use crate::grid::{self, GridFunction};
use crate::hazard::HazardRate;
use crate::measure::{Atom, SignedMeasure, TestFunction};
use crate::{Error, Numerics, Result};

/// Newborn flux `b(t_n)` on the time grid `t_n = n · step`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFlux {
    pub step: f64,
    pub values: Vec<f64>,
}

impl BoundaryFlux {
    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }
}

/// Survival factors of the initial datum, evaluated consistently for the
/// flux balance and for building `μ_t`.
struct InitialSurvival<'a> {
    hazard: &'a HazardRate,
    cumulative: &'a [f64],
    /// `e^{-B(a_i)}` and `e^{B(a_i)}`, when both are representable.
    tables: Option<(&'a [f64], Vec<f64>)>,
}

impl<'a> InitialSurvival<'a> {
    fn new(hazard: &'a HazardRate) -> Self {
        let cumulative = hazard.node_cumulative();
        let tables = hazard
            .survival_from_zero()
            .map(|s| (s, cumulative.iter().map(|b| b.exp()).collect()));
        Self {
            hazard,
            cumulative,
            tables,
        }
    }

    /// `S(a_i, t_n)` for a density node.
    #[inline]
    fn node(&self, i: usize, n: usize) -> f64 {
        match &self.tables {
            Some((s, inv)) => s[i + n] * inv[i],
            None => (self.cumulative[i] - self.cumulative[i + n]).exp(),
        }
    }

    /// `S(a, t)` for an atom at an arbitrary age.
    #[inline]
    fn atom(&self, a: f64, t: f64) -> f64 {
        (self.hazard.cumulative_unchecked(a) - self.hazard.cumulative_unchecked(a + t)).exp()
    }

    /// Newborn survival `e^{-B(a_j)}`.
    #[inline]
    fn newborn(&self, j: usize) -> f64 {
        match &self.tables {
            Some((s, _)) => s[j],
            None => (-self.cumulative[j]).exp(),
        }
    }
}

/// A computed orbit `t ↦ μⁱⁿ M_t` on `[0, horizon]`.
#[derive(Clone, Debug)]
pub struct ForwardSolution<'h> {
    hazard: &'h HazardRate,
    initial: SignedMeasure,
    flux: BoundaryFlux,
}

fn check_grids(initial: &SignedMeasure, hazard: &HazardRate, numerics: &Numerics) -> Result<f64> {
    let h = numerics.age_step;
    let same = |x: f64| (x - h).abs() <= 1e-12 * h;
    if !same(hazard.step()) {
        return Err(Error::Contract(format!(
            "hazard grid step {} differs from the age step {h}",
            hazard.step()
        )));
    }
    if !same(numerics.time_step) {
        return Err(Error::Contract(format!(
            "the forward solver steps along characteristics: time step {} must equal age step {h}",
            numerics.time_step
        )));
    }
    if let Some(d) = initial.density() {
        if !same(d.step) {
            return Err(Error::Contract(format!(
                "initial density grid step {} differs from the age step {h}",
                d.step
            )));
        }
    }
    Ok(h)
}

/// Solves for the boundary flux on `[0, horizon]`.
pub fn solve_flux(
    initial: &SignedMeasure,
    hazard: &HazardRate,
    horizon: f64,
    numerics: &Numerics,
) -> Result<BoundaryFlux> {
    let h = check_grids(initial, hazard, numerics)?;
    let steps = grid::node_index(horizon, h)?;
    hazard.ensure_covers(initial.extent() + horizon)?;
    let surv = InitialSurvival::new(hazard);

    // Nonzero density nodes with their trapezoid mass factor.
    let dens: Vec<(usize, f64)> = initial
        .density()
        .map(|d| {
            let len = d.len();
            d.values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, h * grid::trapezoid_weight(i, len) * v))
                .collect()
        })
        .unwrap_or_default();
    let atoms = initial.atoms();

    // Mass of the not-yet-reset part at each t_n.
    let remaining: Vec<f64> = (0..=steps)
        .into_par_iter()
        .map(|n| {
            let t = n as f64 * h;
            let a: f64 = atoms.iter().map(|x| x.weight * surv.atom(x.location, t)).sum();
            let d: f64 = dens.iter().map(|&(i, m)| m * surv.node(i, n)).sum();
            a + d
        })
        .collect();

    let rates = hazard.node_rates();
    let b0 = atoms
        .iter()
        .map(|x| x.weight * hazard.rate(x.location))
        .sum::<f64>()
        + dens.iter().map(|&(i, m)| m * rates[i]).sum::<f64>();

    // Trapezoidal newborn mass at t_n:
    //   h [ b_n/2 + Σ_{j=1}^{n-1} b_{n-j} σ_j + b_0 σ_n/2 ] = F_0 − F_n,
    // solved for the diagonal term b_n.
    let mut b = Vec::with_capacity(steps + 1);
    b.push(b0);
    for n in 1..=steps {
        let mut alive = 0.5 * b0 * surv.newborn(n);
        for j in 1..n {
            alive += b[n - j] * surv.newborn(j);
        }
        let lost = remaining[0] - remaining[n];
        b.push(2.0 * (lost / h - alive));
    }
    Ok(BoundaryFlux { step: h, values: b })
}

impl<'h> ForwardSolution<'h> {
    pub fn solve(
        initial: &SignedMeasure,
        hazard: &'h HazardRate,
        horizon: f64,
        numerics: &Numerics,
    ) -> Result<Self> {
        let flux = solve_flux(initial, hazard, horizon, numerics)?;
        Ok(Self {
            hazard,
            initial: initial.clone(),
            flux,
        })
    }

    pub fn flux(&self) -> &BoundaryFlux {
        &self.flux
    }

    pub fn initial(&self) -> &SignedMeasure {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.flux.horizon()
    }

    /// `μ_t` for a grid time `t ∈ [0, horizon]`.
    pub fn at(&self, t: f64) -> Result<SignedMeasure> {
        let h = self.flux.step;
        let n = grid::node_index(t, h)?;
        if n >= self.flux.values.len() {
            return Err(Error::Domain(format!(
                "time {t} beyond the solved horizon {}",
                self.horizon()
            )));
        }
        if n == 0 {
            return Ok(self.initial.clone());
        }
        let t = n as f64 * h;
        let surv = InitialSurvival::new(self.hazard);
        let atoms = self
            .initial
            .atoms()
            .iter()
            .map(|x| Atom {
                location: x.location + t,
                weight: x.weight * surv.atom(x.location, t),
            })
            .collect();

        let b = &self.flux.values;
        let in_values = self.initial.density().map_or(&[][..], |d| &d.values[..]);
        let out_len = (in_values.len() + n).max(n + 1);
        let mut values = vec![0.0; out_len];
        for (j, v) in values.iter_mut().enumerate().take(n) {
            *v = b[n - j] * surv.newborn(j);
        }
        let newborn_edge = b[0] * surv.newborn(n);
        if in_values.is_empty() {
            values[n] = newborn_edge;
        } else {
            // The node at age t carries half-weight contributions from both
            // parts; averaging keeps the trapezoidal mass of each.
            values[n] = 0.5 * (newborn_edge + in_values[0] * surv.node(0, n));
            for (i, v) in in_values.iter().enumerate().skip(1) {
                values[n + i] = v * surv.node(i, n);
            }
        }
        SignedMeasure::new(atoms, Some(GridFunction::new(h, values)))
    }

    /// `μ_s` at `s = 0, step, 2·step, …` up to the horizon.
    pub fn snapshots(&self, step: f64) -> Result<Vec<(f64, SignedMeasure)>> {
        let k = grid::node_index(step, self.flux.step)?;
        if k == 0 {
            return Err(Error::Contract("snapshot step must be positive".into()));
        }
        let n = self.flux.values.len() - 1;
        (0..=n)
            .step_by(k)
            .map(|i| {
                let s = i as f64 * self.flux.step;
                self.at(s).map(|m| (s, m))
            })
            .collect()
    }
}

/// `μⁱⁿ M_t`.
pub fn evolve_measure(
    initial: &SignedMeasure,
    hazard: &HazardRate,
    t: f64,
    numerics: &Numerics,
) -> Result<SignedMeasure> {
    ForwardSolution::solve(initial, hazard, t, numerics)?.at(t)
}

/// `|(μⁱⁿ M_t) f₀ − μⁱⁿ (M_t f₀)|`: forward solver against dual solver.
pub fn duality_gap(
    initial: &SignedMeasure,
    f0: &TestFunction,
    hazard: &HazardRate,
    t: f64,
    numerics: &Numerics,
) -> Result<f64> {
    let forward = evolve_measure(initial, hazard, t, numerics)?.integrate(f0)?;
    let profile = evolve_dual(f0, hazard, t, initial.extent(), numerics)?;
    let dual = initial.integrate(&TestFunction::from_profile(profile))?;
    Ok((forward - dual).abs())
}

/// `|μ_t f − μⁱⁿ f − ∫₀ᵗ μ_s 𝒜f ds|`, the time integral by the trapezoidal
/// rule over snapshots spaced `quad_step` apart.
pub fn meassol_residual(
    initial: &SignedMeasure,
    f: &TestFunction,
    hazard: &HazardRate,
    t: f64,
    quad_step: f64,
    numerics: &Numerics,
) -> Result<f64> {
    let solution = ForwardSolution::solve(initial, hazard, t, numerics)?;
    meassol_residual_of(&solution, f, t, quad_step)
}

/// [`meassol_residual`] on an already solved orbit.
pub fn meassol_residual_of(
    solution: &ForwardSolution<'_>,
    f: &TestFunction,
    t: f64,
    quad_step: f64,
) -> Result<f64> {
    let generated = apply_generator(f, solution.hazard)?;
    let panels = grid::node_index(t, quad_step)?;
    if panels == 0 {
        let m = solution.at(t)?;
        return Ok((m.integrate(f)? - solution.initial.integrate(f)?).abs());
    }
    let ds = t / panels as f64;
    let values = (0..=panels)
        .into_par_iter()
        .map(|k| solution.at(k as f64 * ds)?.integrate(&generated))
        .collect::<Result<Vec<f64>>>()?;
    let integral = grid::trapezoid(&values, ds);
    let end = solution.at(t)?.integrate(f)?;
    let start = solution.initial.integrate(f)?;
    Ok((end - start - integral).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{RateBounds, RateForm};
    use crate::reference::ConstantRate;

    fn unit_rate(extent: f64) -> HazardRate {
        HazardRate::constant(1.0, 0.1, 1e-3, extent).unwrap()
    }

    fn ramp(extent: f64) -> HazardRate {
        HazardRate::new(
            RateForm::Expr("min(a, 2)".into()),
            RateBounds {
                beta_min: 1.0,
                beta_max: 2.0,
                a_star: 1.0,
            },
            1e-3,
            extent,
        )
        .unwrap()
    }

    #[test]
    fn flux_examples() {
        let n = Numerics::default();
        let hz = unit_rate(8.0);
        let flux = solve_flux(&SignedMeasure::dirac(0.0), &hz, 5.0, &n).unwrap();
        assert!(flux.values.iter().all(|b| (b - 1.0).abs() < 1e-6));

        let zero = solve_flux(&SignedMeasure::zero(), &hz, 2.0, &n).unwrap();
        assert!(zero.values.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn flux_rejects_short_hazard_grid() {
        let n = Numerics::default();
        let err = solve_flux(&SignedMeasure::dirac(3.0), &unit_rate(4.0), 2.0, &n);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn flux_requires_aligned_steps() {
        let n = Numerics {
            time_step: 5e-4,
            ..Numerics::default()
        };
        let err = solve_flux(&SignedMeasure::dirac(0.0), &unit_rate(4.0), 1.0, &n);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn dirac_under_unit_rate_matches_closed_form() {
        let n = Numerics::default();
        let hz = unit_rate(4.0);
        let mu = evolve_measure(&SignedMeasure::dirac(0.5), &hz, 1.0, &n).unwrap();
        let exact = ConstantRate::new(1.0);
        assert_eq!(mu.atoms().len(), 1);
        assert!((mu.atoms()[0].location - 1.5).abs() < 1e-12);
        assert!((mu.atoms()[0].weight - exact.survivor_weight(1.0)).abs() < 1e-12);
        let d = mu.density().unwrap();
        for (j, v) in d.values.iter().enumerate().take(1000) {
            assert!((v - exact.newborn_density(d.age(j), 1.0)).abs() < 1e-6);
        }
        assert!((mu.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_at_time_zero() {
        let n = Numerics::default();
        let mu = SignedMeasure::from_atoms(&[(0.3, 0.4), (1.2, 0.6)]).unwrap();
        assert_eq!(evolve_measure(&mu, &ramp(4.0), 0.0, &n).unwrap(), mu);
    }

    #[test]
    fn signed_data_contract_in_tv() {
        let n = Numerics::default();
        let hz = ramp(10.0);
        let mu = SignedMeasure::from_atoms(&[(1.0, 1.0), (2.0, -1.0)]).unwrap();
        let sol = ForwardSolution::solve(&mu, &hz, 3.0, &n).unwrap();
        for (_, m) in sol.snapshots(0.5).unwrap() {
            assert!(m.tv_norm() <= mu.tv_norm() + 1e-8);
            assert!(m.mass().abs() < 1e-12);
        }
    }

    #[test]
    fn nonnegative_data_stays_nonnegative_and_conserved() {
        let n = Numerics::default();
        let hz = ramp(12.0);
        let uniform = SignedMeasure::from_density_fn(1e-3, 2.0, |_| 0.5).unwrap();
        let sol = ForwardSolution::solve(&uniform, &hz, 4.0, &n).unwrap();
        for (_, m) in sol.snapshots(0.25).unwrap() {
            assert!(m.is_nonnegative(0.0));
            assert!((m.mass() - 1.0).abs() < 1e-12);
            assert!((m.tv_norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duality_gap_examples() {
        let n = Numerics::default();
        let hz = unit_rate(6.0);
        let one = TestFunction::constant(1.0);
        let d05 = SignedMeasure::dirac(0.5);
        assert!(duality_gap(&d05, &one, &hz, 1.0, &n).unwrap() < 1e-12);
        let f = TestFunction::exp_decay(1.0);
        assert!(duality_gap(&d05, &f, &hz, 1.0, &n).unwrap() <= 1e-4);
        let signed = SignedMeasure::from_atoms(&[(1.0, 1.0), (2.0, -1.0)]).unwrap();
        assert!(duality_gap(&signed, &f, &ramp(6.0), 1.0, &n).unwrap() <= 1e-4);
    }

    #[test]
    fn meassol_examples() {
        let n = Numerics::default();
        let hz = unit_rate(4.0);
        let d05 = SignedMeasure::dirac(0.5);
        let r = meassol_residual(&d05, &TestFunction::constant(1.0), &hz, 1.0, 0.1, &n).unwrap();
        assert!(r < 1e-13);
        let r = meassol_residual(&d05, &TestFunction::exp_decay(1.0), &hz, 1.0, 0.02, &n).unwrap();
        assert!(r <= 1e-4, "{r}");
    }

    #[test]
    fn narrow_continuity_and_c1_surrogates() {
        let n = Numerics::default();
        let hz = ramp(8.0);
        let mu = SignedMeasure::dirac(0.5)
            .add_scaled(&SignedMeasure::from_density_fn(1e-3, 1.0, |_| 0.5).unwrap(), 1.0)
            .unwrap();
        let f = TestFunction::exp_decay(0.8);
        let gen = apply_generator(&f, &hz).unwrap();
        let sol = ForwardSolution::solve(&mu, &hz, 2.0, &n).unwrap();
        let snaps = sol.snapshots(0.01).unwrap();
        let vals: Vec<f64> = snaps.iter().map(|(_, m)| m.integrate(&f).unwrap()).collect();
        // Lipschitz f: jumps bounded by C·h with C = ‖𝒜f‖∞ · mass.
        for w in vals.windows(2) {
            assert!((w[1] - w[0]).abs() <= gen.sup_bound() * 1.5 * 0.01);
        }
        // Centred differences follow μ_t 𝒜f.
        for k in 1..vals.len() - 1 {
            let fd = (vals[k + 1] - vals[k - 1]) / 0.02;
            let exact = snaps[k].1.integrate(&gen).unwrap();
            assert!((fd - exact).abs() < 5e-4, "k={k} {fd} {exact}");
        }
    }
}
