//! Uniform age grids and piecewise-linear nodal functions.

use crate::{Error, Result};

/// Relative slack used when deciding whether a time or age sits on a node.
pub(crate) const NODE_SLACK: f64 = 1e-9;

pub(crate) fn node_index(x: f64, step: f64) -> Result<usize> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("{x} is not a nonnegative age")));
    }
    let k = (x / step).round();
    if (x - k * step).abs() > NODE_SLACK * step.max(x) {
        return Err(Error::Domain(format!(
            "{x} is not a multiple of the grid step {step}"
        )));
    }
    Ok(k as usize)
}

/// Number of nodes needed to cover `[0, extent]` with step `step`.
pub(crate) fn nodes_to_cover(extent: f64, step: f64) -> usize {
    (extent / step - NODE_SLACK).ceil().max(0.0) as usize + 1
}

/// Trapezoidal integral of nodal values.
pub(crate) fn trapezoid(values: &[f64], step: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => step * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

/// Trapezoid weight (in units of `step`) of node `i` out of `len` nodes.
#[inline]
pub(crate) fn trapezoid_weight(i: usize, len: usize) -> f64 {
    if len < 2 {
        0.0
    } else if i == 0 || i == len - 1 {
        0.5
    } else {
        1.0
    }
}

/// Values at the nodes `i * step`, `i = 0..len`, linearly interpolated in
/// between. Used both for densities and for sampled test-function profiles.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub step: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(step: f64, values: Vec<f64>) -> Self {
        Self { step, values }
    }

    pub fn sample(step: f64, extent: f64, f: impl Fn(f64) -> f64) -> Self {
        let n = nodes_to_cover(extent, step);
        Self::new(step, (0..n).map(|i| f(i as f64 * step)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Age of the last node.
    pub fn extent(&self) -> f64 {
        self.values.len().saturating_sub(1) as f64 * self.step
    }

    pub fn age(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    /// Linear interpolation; `NaN` outside `[0, extent]`.
    pub fn at(&self, a: f64) -> f64 {
        let n = self.values.len();
        if n == 0 || !(a >= 0.0) {
            return f64::NAN;
        }
        let x = a / self.step;
        let i = x.floor() as usize;
        if i + 1 >= n {
            let last = (n - 1) as f64;
            return if x <= last + NODE_SLACK { self.values[n - 1] } else { f64::NAN };
        }
        let frac = x - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.step)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let g = GridFunction::sample(0.25, 2.0, |a| 3.0 * a + 1.0);
        assert!((g.integral() - 8.0).abs() < 1e-14);
    }

    #[test]
    fn interpolation_and_bounds() {
        let g = GridFunction::new(0.5, vec![0.0, 1.0, 4.0]);
        assert_eq!(g.at(0.25), 0.5);
        assert_eq!(g.at(1.0), 4.0);
        assert!(g.at(1.1).is_nan());
        assert!(g.at(-0.1).is_nan());
        assert_eq!(g.extent(), 1.0);
    }

    #[test]
    fn node_index_rejects_off_grid() {
        assert_eq!(node_index(1.1, 1e-3).unwrap(), 1100);
        assert!(node_index(1.00005, 1e-3).is_err());
        assert!(node_index(-1.0, 1e-3).is_err());
        assert_eq!(nodes_to_cover(2.0, 1e-3), 2001);
    }
}
