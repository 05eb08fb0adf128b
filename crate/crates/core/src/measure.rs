//! Finite signed measures on `[0, ∞)` and the test functions they act on.
//!
//! A [`SignedMeasure`] is a finite sum of weighted Dirac masses plus an
//! absolutely continuous part with a piecewise-linear density sampled on a
//! uniform grid. The two parts are mutually singular, so the Jordan
//! decomposition and the total variation split additively between them.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use crate::expr::{self, ScalarFn};
use crate::grid::{self, GridFunction};
use crate::{Error, Result};

/// Atoms closer than this are merged into one.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignedMeasure {
    atoms: Vec<Atom>,
    density: Option<GridFunction>,
}

impl SignedMeasure {
    pub fn zero() -> Self {
        Self {
            atoms: Vec::new(),
            density: None,
        }
    }

    pub fn dirac(location: f64) -> Self {
        Self::from_atoms(&[(location, 1.0)]).expect("valid Dirac location")
    }

    /// Builds a measure from `(location, weight)` pairs; locations are
    /// sorted and merged.
    pub fn from_atoms(atoms: &[(f64, f64)]) -> Result<Self> {
        let atoms = atoms
            .iter()
            .map(|&(location, weight)| Atom { location, weight })
            .collect();
        Self::new(atoms, None)
    }

    pub fn from_density(density: GridFunction) -> Result<Self> {
        Self::new(Vec::new(), Some(density))
    }

    /// Samples `f` on `[0, extent]`.
    pub fn from_density_fn(step: f64, extent: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_density(GridFunction::sample(step, extent, f))
    }

    pub fn new(mut atoms: Vec<Atom>, density: Option<GridFunction>) -> Result<Self> {
        for atom in &atoms {
            if !(atom.location >= 0.0) || !atom.location.is_finite() || !atom.weight.is_finite() {
                return Err(Error::Contract(format!(
                    "atom ({}, {}) must sit at a finite age >= 0 with finite weight",
                    atom.location, atom.weight
                )));
            }
        }
        atoms.sort_by(|x, y| x.location.total_cmp(&y.location));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match merged.last_mut() {
                Some(last) if atom.location - last.location <= ATOM_MERGE_TOL => {
                    last.weight += atom.weight
                }
                _ => merged.push(atom),
            }
        }
        merged.retain(|a| a.weight != 0.0);

        let density = match density {
            Some(d) if d.len() >= 2 => {
                if !(d.step > 0.0) {
                    return Err(Error::Contract(format!("grid step {} must be > 0", d.step)));
                }
                if let Some((i, v)) = d.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                    return Err(Error::Evaluation {
                        age: d.age(i),
                        value: *v,
                    });
                }
                Some(d)
            }
            // A single node carries no trapezoidal mass.
            _ => None,
        };
        Ok(Self {
            atoms: merged,
            density,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> Option<&GridFunction> {
        self.density.as_ref()
    }

    /// Largest age carrying mass in the representation.
    pub fn extent(&self) -> f64 {
        let atom_max = self.atoms.last().map_or(0.0, |a| a.location);
        let dens_max = self.density.as_ref().map_or(0.0, GridFunction::extent);
        atom_max.max(dens_max)
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum::<f64>()
            + self.density.as_ref().map_or(0.0, GridFunction::integral)
    }

    /// `∫ f dμ`: atoms exactly, density by the trapezoidal rule on its grid.
    pub fn integrate(&self, f: &TestFunction) -> Result<f64> {
        let mut total = 0.0;
        for atom in &self.atoms {
            total += atom.weight * f.eval_checked(atom.location)?;
        }
        if let Some(d) = &self.density {
            let n = d.len();
            let mut acc = 0.0;
            for (i, v) in d.values.iter().enumerate() {
                if *v == 0.0 {
                    continue;
                }
                acc += grid::trapezoid_weight(i, n) * v * f.eval_checked(d.age(i))?;
            }
            total += d.step * acc;
        }
        Ok(total)
    }

    /// Splits into nonnegative, mutually singular parts `(μ₊, μ₋)`.
    pub fn jordan(&self) -> (SignedMeasure, SignedMeasure) {
        let split = |sign: f64| {
            let atoms = self
                .atoms
                .iter()
                .filter(|a| a.weight * sign > 0.0)
                .map(|a| Atom {
                    location: a.location,
                    weight: a.weight.abs(),
                })
                .collect();
            let density = self.density.as_ref().map(|d| {
                GridFunction::new(d.step, d.values.iter().map(|v| (v * sign).max(0.0)).collect())
            });
            SignedMeasure { atoms, density }
        };
        (split(1.0), split(-1.0))
    }

    pub fn tv_norm(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.weight.abs()).sum();
        let density = self.density.as_ref().map_or(0.0, |d| {
            grid::trapezoid(&d.values.iter().map(|v| v.abs()).collect::<Vec<_>>(), d.step)
        });
        atoms + density
    }

    pub fn is_nonnegative(&self, tol: f64) -> bool {
        self.atoms.iter().all(|a| a.weight >= -tol)
            && self
                .density
                .as_ref()
                .map_or(true, |d| d.values.iter().all(|v| *v >= -tol))
    }

    pub fn scaled(&self, factor: f64) -> SignedMeasure {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                location: a.location,
                weight: a.weight * factor,
            })
            .collect();
        let density = self
            .density
            .as_ref()
            .map(|d| GridFunction::new(d.step, d.values.iter().map(|v| v * factor).collect()));
        SignedMeasure::new(atoms, density).expect("scaling preserves validity")
    }

    /// `self + factor · other`. Densities must share the grid step; the
    /// shorter one is zero-extended so that its trapezoidal weights survive
    /// (see [`padded`]).
    pub fn add_scaled(&self, other: &SignedMeasure, factor: f64) -> Result<SignedMeasure> {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().map(|a| Atom {
            location: a.location,
            weight: factor * a.weight,
        }));
        let density = match (&self.density, &other.density) {
            (None, None) => None,
            (Some(d), None) => Some(d.clone()),
            (None, Some(d)) => Some(GridFunction::new(
                d.step,
                d.values.iter().map(|v| factor * v).collect(),
            )),
            (Some(x), Some(y)) => {
                if (x.step - y.step).abs() > 1e-12 * x.step {
                    return Err(Error::Contract(format!(
                        "cannot combine densities on grids with steps {} and {}",
                        x.step, y.step
                    )));
                }
                let n = x.len().max(y.len());
                let (px, py) = (padded(x, n), padded(y, n));
                let values = px.zip(py).map(|(u, v)| u + factor * v).collect();
                Some(GridFunction::new(x.step, values))
            }
        };
        SignedMeasure::new(atoms, density)
    }

    pub fn sub(&self, other: &SignedMeasure) -> Result<SignedMeasure> {
        self.add_scaled(other, -1.0)
    }

    /// Writes `kind,location,value` rows: one per atom, one per density node.
    pub fn write_csv<W: Write>(&self, out: &mut W, with_header: bool) -> io::Result<()> {
        if with_header {
            writeln!(out, "kind,location,value")?;
        }
        self.write_csv_rows(out, "")
    }

    /// Rows with an arbitrary prefix (e.g. a snapshot time column).
    pub fn write_csv_rows<W: Write + ?Sized>(&self, out: &mut W, prefix: &str) -> io::Result<()> {
        for a in &self.atoms {
            writeln!(out, "{prefix}atom,{},{}", a.location, a.weight)?;
        }
        if let Some(d) = &self.density {
            for (i, v) in d.values.iter().enumerate() {
                writeln!(out, "{prefix}density,{},{}", d.age(i), v)?;
            }
        }
        Ok(())
    }
}

/// Nodal values of `d` extended by zeros to `len` nodes. Densities vanish
/// beyond their last node, where the trapezoid rule gives half weight; once
/// that node becomes interior it carries full weight, so its value is halved
/// to keep every nodal quadrature, mass and TV included, unchanged.
fn padded(d: &GridFunction, len: usize) -> impl Iterator<Item = f64> + '_ {
    let last = d.len() - 1;
    let halve = len > d.len();
    d.values
        .iter()
        .enumerate()
        .map(move |(i, v)| if halve && i == last { 0.5 * v } else { *v })
        .chain(std::iter::repeat(0.0).take(len - d.len()))
}

/// A bounded continuous function of age, optionally with its derivative.
#[derive(Clone)]
pub struct TestFunction {
    label: String,
    value: ScalarFn,
    derivative: Option<ScalarFn>,
    sup: f64,
    derivative_sup: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("sup", &self.sup)
            .field("has_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl TestFunction {
    pub fn new(
        label: impl Into<String>,
        sup: f64,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            value: Arc::new(value),
            derivative: None,
            sup,
            derivative_sup: f64::INFINITY,
        }
    }

    pub fn with_derivative(
        mut self,
        derivative_sup: f64,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self.derivative_sup = derivative_sup;
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), c.abs(), move |_| c).with_derivative(0.0, |_| 0.0)
    }

    /// `a ↦ e^{-rate·a}`.
    pub fn exp_decay(rate: f64) -> Self {
        assert!(rate >= 0.0, "decay rate must be >= 0");
        Self::new(format!("exp(-{rate}a)"), 1.0, move |a| (-rate * a).exp())
            .with_derivative(rate, move |a| -rate * (-rate * a).exp())
    }

    /// `a ↦ a`; unbounded, meant for integration over bounded supports.
    pub fn identity() -> Self {
        Self::new("a", f64::INFINITY, |a| a).with_derivative(1.0, |_| 1.0)
    }

    /// Smooth bump `cos²(π(a − center)/(2·half_width))` on
    /// `|a − center| < half_width`, zero elsewhere. C¹ with sup 1.
    pub fn bump(center: f64, half_width: f64) -> Self {
        let k = std::f64::consts::FRAC_PI_2 / half_width;
        Self::new(format!("bump({center},{half_width})"), 1.0, move |a| {
            let x = a - center;
            if x.abs() < half_width {
                (k * x).cos().powi(2)
            } else {
                0.0
            }
        })
        .with_derivative(k, move |a| {
            let x = a - center;
            if x.abs() < half_width {
                -k * (2.0 * k * x).sin()
            } else {
                0.0
            }
        })
    }

    /// `C^∞` bump `exp(1 − 1/(1 − x²))`, `x = (a − center)/half_width`,
    /// supported on `|x| < 1` with peak 1.
    pub fn smooth_bump(center: f64, half_width: f64) -> Self {
        let value = move |a: f64| {
            let x = (a - center) / half_width;
            if x.abs() < 1.0 {
                (1.0 - 1.0 / (1.0 - x * x)).exp()
            } else {
                0.0
            }
        };
        let derivative = move |a: f64| {
            let x = (a - center) / half_width;
            if x.abs() < 1.0 {
                let q = 1.0 - x * x;
                -2.0 * x / (q * q) * (1.0 - 1.0 / q).exp() / half_width
            } else {
                0.0
            }
        };
        let dsup = (0..=2000)
            .map(|i| derivative(center - half_width + i as f64 * half_width / 1000.0).abs())
            .fold(0.0, f64::max);
        Self::new(format!("smooth_bump({center},{half_width})"), 1.0, value)
            .with_derivative(dsup * 1.01, derivative)
    }

    /// Parses an expression in the variable `a`. The sup bound is estimated
    /// by sampling `[0, sample_extent]` with step `sample_step`.
    pub fn expression(source: &str, sample_step: f64, sample_extent: f64) -> Result<Self> {
        let f = expr::compile(source)?;
        let n = grid::nodes_to_cover(sample_extent, sample_step);
        let sup = (0..n).fold(0.0f64, |m, i| m.max(f(i as f64 * sample_step).abs()));
        Ok(Self {
            label: source.to_string(),
            value: f,
            derivative: None,
            sup,
            derivative_sup: f64::INFINITY,
        })
    }

    /// Piecewise-linear interpolation of a sampled profile; `NaN` outside it.
    pub fn from_profile(profile: GridFunction) -> Self {
        let sup = profile.sup_norm();
        let label = format!("profile[0,{}]", profile.extent());
        Self::new(label, sup, move |a| profile.at(a))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup
    }

    pub fn derivative_sup(&self) -> f64 {
        self.derivative_sup
    }

    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        (self.value)(a)
    }

    pub fn eval_checked(&self, a: f64) -> Result<f64> {
        let v = (self.value)(a);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation { age: a, value: v })
        }
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    pub fn derivative(&self, a: f64) -> Option<f64> {
        self.derivative.as_ref().map(|d| d(a))
    }

    pub(crate) fn derivative_fn(&self) -> Option<&ScalarFn> {
        self.derivative.as_ref()
    }

    pub(crate) fn value_fn(&self) -> &ScalarFn {
        &self.value
    }

    pub fn sample(&self, step: f64, extent: f64) -> GridFunction {
        GridFunction::sample(step, extent, |a| self.eval(a))
    }
}

/// The cutoff `f_n`: equal to `f` on `[0, n]`, damped by `(n + 1 − a)` on
/// `(n, n + 1)` and zero from `n + 1` on.
pub fn truncation_family(f: &TestFunction, n: u32) -> TestFunction {
    let n = f64::from(n);
    let value = f.value.clone();
    let mut out = TestFunction::new(format!("trunc{n}[{}]", f.label), f.sup, move |a| {
        if a <= n {
            value(a)
        } else if a < n + 1.0 {
            (n + 1.0 - a) * value(a)
        } else {
            0.0
        }
    });
    if let Some(d) = f.derivative.clone() {
        let value = f.value.clone();
        out = out.with_derivative(f.derivative_sup + f.sup, move |a| {
            if a <= n {
                d(a)
            } else if a < n + 1.0 {
                -value(a) + (n + 1.0 - a) * d(a)
            } else {
                0.0
            }
        });
    }
    out
}

/// `e^{-1/x}` for `x > 0`, zero otherwise, with its derivative.
fn flat(x: f64) -> (f64, f64) {
    if x > 0.0 {
        let v = (-1.0 / x).exp();
        (v, v / (x * x))
    } else {
        (0.0, 0.0)
    }
}

/// `C^∞` variant of [`truncation_family`]: `f` times a cutoff equal to 1 on
/// `[0, n]`, 0 from `n + 1` on, with the smooth transition
/// `ψ(1 − x)/(ψ(1 − x) + ψ(x))` in between. Requires `f'`.
pub fn smooth_truncation(f: &TestFunction, n: u32) -> TestFunction {
    let n = f64::from(n);
    let cutoff = move |a: f64| -> (f64, f64) {
        if a <= n {
            (1.0, 0.0)
        } else if a >= n + 1.0 {
            (0.0, 0.0)
        } else {
            let x = a - n;
            let ((p, dp), (q, dq)) = (flat(1.0 - x), flat(x));
            let s = p + q;
            (p / s, -(dp * q + p * dq) / (s * s))
        }
    };
    let value = f.value.clone();
    let d = f
        .derivative
        .clone()
        .expect("smooth_truncation needs the derivative of f");
    let v2 = f.value.clone();
    TestFunction::new(format!("smooth_trunc{n}[{}]", f.label), f.sup, move |a| {
        value(a) * cutoff(a).0
    })
    .with_derivative(f.derivative_sup + 2.0 * f.sup, move |a| {
        let (c, dc) = cutoff(a);
        d(a) * c + v2(a) * dc
    })
}
