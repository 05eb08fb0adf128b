//! Measure-valued solutions of the conservative renewal equation
//!
//! ```text
//! ∂ₜn + ∂ₐn + β(a) n = 0,    n(t, 0) = ∫ β(a) n(t, a) da,    n(0, ·) = μⁱⁿ
//! ```
//!
//! The crate is organised around the duality between two semigroups:
//!
//! * [`dual`] builds the right semigroup `M_t f` acting on bounded test
//!   functions, as the fixed point of the Duhamel operator, one short time
//!   window at a time.
//! * [`forward`] propagates finite signed measures (the left action
//!   `μ M_t`) as transported, decayed atoms plus an absolutely continuous
//!   newborn part driven by the boundary flux.
//! * [`ergodicity`] provides the invariant measure, the Doeblin
//!   minorization constants and total-variation decay experiments.
//! * [`oracle`] is an independent Monte Carlo simulation of the underlying
//!   age process, used to cross-check both solvers.
//!
//! Measures are represented by [`SignedMeasure`]: a finite list of atoms plus
//! a piecewise-linear density on a uniform age grid. This class is closed
//! under the dynamics, so the forward solution is exact in structure and only
//! discretised in the newborn flux.

pub mod dual;
pub mod ergodicity;
mod error;
mod expr;
pub mod forward;
mod grid;
pub mod hazard;
pub mod measure;
pub mod oracle;
pub mod reference;

pub use dual::{DualSolution, InitialProfile};
pub use ergodicity::{DoeblinCertificate, StationaryMeasure};
pub use error::{Error, Result};
pub use forward::{BoundaryFlux, ForwardSolution};
pub use grid::GridFunction;
pub use hazard::{HazardRate, RateBounds, RateForm, ValidationReport};
pub use measure::{Atom, SignedMeasure, TestFunction};
pub use oracle::PathEnsemble;

/// Discretisation and tolerance parameters shared by all solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct Numerics {
    /// Age grid step `h_a`.
    pub age_step: f64,
    /// Time step `h_t` of the dual solver's boundary trace. The forward
    /// solver always steps along characteristics (`h_t = h_a`).
    pub time_step: f64,
    /// Truncation age `A_max`.
    pub a_max: f64,
    /// Sup-norm stopping tolerance for Picard iterates.
    pub tol_picard: f64,
    pub max_picard_iter: usize,
    /// Allowed drift of total mass.
    pub tol_mass: f64,
    /// Slack for the minorization check.
    pub eps_minor: f64,
    /// Slack for total-variation decay bounds.
    pub eps_tv: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            age_step: 1e-3,
            time_step: 1e-3,
            a_max: 40.0,
            tol_picard: 1e-12,
            max_picard_iter: 200,
            tol_mass: 1e-8,
            eps_minor: 1e-6,
            eps_tv: 1e-4,
        }
    }
}

impl Numerics {
    /// Same parameters with both grid steps set to `step`.
    pub fn with_step(&self, step: f64) -> Self {
        Self {
            age_step: step,
            time_step: step,
            ..self.clone()
        }
    }

    /// Index of the grid node at time/age `t`, if `t` lies on the age grid.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        grid::node_index(t, self.age_step)
    }
}
