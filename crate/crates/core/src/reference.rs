//! Closed-form solutions for a constant rate `β ≡ β₀`.
//!
//! With a constant rate the reset clock is a Poisson process, so the age at
//! time `t` is the backward recurrence time: either no reset happened (the
//! initial age advanced by `t`, probability `e^{-β₀t}`) or the age is the
//! time since the last reset, with density `β₀ e^{-β₀a}` on `[0, t)`.
//!
//! These formulas do not touch the grid solvers and serve as their oracle.

use crate::measure::Atom;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantRate {
    pub beta: f64,
}

impl ConstantRate {
    pub fn new(beta: f64) -> Self {
        Self { beta }
    }

    /// Weight left on an atom after time `t`.
    pub fn survivor_weight(&self, t: f64) -> f64 {
        (-self.beta * t).exp()
    }

    /// Atoms of `μⁱⁿ M_t` for an atomic initial datum.
    pub fn evolve_atoms(&self, atoms: &[Atom], t: f64) -> Vec<Atom> {
        atoms
            .iter()
            .map(|a| Atom {
                location: a.location + t,
                weight: a.weight * self.survivor_weight(t),
            })
            .collect()
    }

    /// Density of the part reset at least once by time `t`, per unit of
    /// initial mass.
    pub fn newborn_density(&self, a: f64, t: f64) -> f64 {
        if (0.0..t).contains(&a) {
            self.beta * (-self.beta * a).exp()
        } else {
            0.0
        }
    }

    /// Boundary flux per unit initial mass: `b ≡ β₀`.
    pub fn flux(&self) -> f64 {
        self.beta
    }

    pub fn stationary_density(&self, a: f64) -> f64 {
        self.beta * (-self.beta * a).exp()
    }

    /// `M_t f(a) = e^{-β₀t} f(a + t) + ∫₀ᵗ β₀ e^{-β₀u} f(u) du`, the integral
    /// by composite Simpson with 4000 panels.
    pub fn dual_value(&self, f: impl Fn(f64) -> f64, a: f64, t: f64) -> f64 {
        let b = self.beta;
        self.survivor_weight(t) * f(a + t) + simpson(|u| b * (-b * u).exp() * f(u), 0.0, t, 4000)
    }

    /// `‖δ₀ M_t − μ∞‖_TV = 2 e^{-β₀t}`: the surviving atom and the missing
    /// stationary tail on `[t, ∞)` each carry `e^{-β₀t}`.
    pub fn tv_dirac0_to_stationary(&self, t: f64) -> f64 {
        2.0 * self.survivor_weight(t)
    }
}

/// Composite Simpson rule with `panels` (even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let n = panels + panels % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}
