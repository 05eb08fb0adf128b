//! TOML scenario files.
//!
//! One schema serves every flag: `--rate` reads `[rate]`, `[numerics]` and
//! `[verify]`; `--init`, `--mu1` and `--mu2` read the `[[measure]]` list. A
//! single scenario file may therefore be passed to several flags.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use renewal_core::ergodicity::stationary;
use renewal_core::{
    GridFunction, HazardRate, Numerics, RateBounds, RateForm, SignedMeasure, TestFunction,
};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub rate: Option<RateSpec>,
    #[serde(default)]
    pub numerics: NumericsSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    pub measure: Option<Vec<MeasureEntry>>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| CliError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn rate(&self) -> Result<&RateSpec> {
        self.rate
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [rate] section".into()))
    }

    pub fn measures(&self) -> Result<&[MeasureEntry]> {
        match &self.measure {
            Some(m) if !m.is_empty() => Ok(m),
            _ => Err(CliError::Config("missing [[measure]] entries".into())),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    /// `constant`, `table` or `expr`.
    pub kind: String,
    pub value: Option<f64>,
    pub ages: Option<Vec<f64>>,
    pub values: Option<Vec<f64>>,
    pub expr: Option<String>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    #[serde(default)]
    pub a_star: f64,
}

impl RateSpec {
    pub fn form(&self) -> Result<RateForm> {
        let missing = |field: &str| CliError::Config(format!("rate kind `{}` needs `{field}`", self.kind));
        match self.kind.as_str() {
            "constant" => Ok(RateForm::Constant(self.value.ok_or_else(|| missing("value"))?)),
            "table" => Ok(RateForm::Table {
                ages: self.ages.clone().ok_or_else(|| missing("ages"))?,
                values: self.values.clone().ok_or_else(|| missing("values"))?,
            }),
            "expr" => Ok(RateForm::Expr(self.expr.clone().ok_or_else(|| missing("expr"))?)),
            other => Err(CliError::Config(format!(
                "unknown rate kind `{other}` (expected constant, table or expr)"
            ))),
        }
    }

    /// Declared bounds; a constant rate defaults both to its value.
    pub fn bounds(&self) -> Result<RateBounds> {
        let default = if self.kind == "constant" { self.value } else { None };
        let get = |v: Option<f64>, name: &str| {
            v.or(default)
                .ok_or_else(|| CliError::Config(format!("[rate] needs `{name}`")))
        };
        Ok(RateBounds {
            beta_min: get(self.beta_min, "beta_min")?,
            beta_max: get(self.beta_max, "beta_max")?,
            a_star: self.a_star,
        })
    }

    /// Samples the rate on `[0, extent]` and checks it on `[0, a_max]`.
    pub fn build(&self, numerics: &Numerics, extent: f64) -> Result<HazardRate> {
        let hazard = HazardRate::new(self.form()?, self.bounds()?, numerics.age_step, extent)?;
        let report = hazard.validate(numerics.a_max);
        if report.passed() {
            Ok(hazard)
        } else {
            Err(CliError::Validation(report))
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSpec {
    pub h_a: f64,
    pub h_t: f64,
    pub a_max: f64,
    pub tol_picard: f64,
    pub max_picard_iter: usize,
    pub tol_mass: f64,
    pub eps_minor: f64,
    pub eps_tv: f64,
    pub seed: u64,
}

impl Default for NumericsSpec {
    fn default() -> Self {
        let n = Numerics::default();
        Self {
            h_a: n.age_step,
            h_t: n.time_step,
            a_max: n.a_max,
            tol_picard: n.tol_picard,
            max_picard_iter: n.max_picard_iter,
            tol_mass: n.tol_mass,
            eps_minor: n.eps_minor,
            eps_tv: n.eps_tv,
            seed: 0,
        }
    }
}

impl NumericsSpec {
    /// Checks positivity of steps and tolerances and that `A_max` exceeds
    /// `a_star + horizon`.
    pub fn resolve(&self, a_star: f64, horizon: f64) -> Result<Numerics> {
        let positive = [
            ("h_a", self.h_a),
            ("h_t", self.h_t),
            ("a_max", self.a_max),
            ("tol_picard", self.tol_picard),
            ("tol_mass", self.tol_mass),
            ("eps_minor", self.eps_minor),
            ("eps_tv", self.eps_tv),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::Config(format!("[numerics] {name} must be positive, got {v}")));
            }
        }
        if self.max_picard_iter == 0 {
            return Err(CliError::Config("[numerics] max_picard_iter must be positive".into()));
        }
        if self.a_max <= a_star + horizon {
            return Err(CliError::Config(format!(
                "[numerics] a_max = {} must exceed a_star + horizon = {}",
                self.a_max,
                a_star + horizon
            )));
        }
        Ok(Numerics {
            age_step: self.h_a,
            time_step: self.h_t,
            a_max: self.a_max,
            tol_picard: self.tol_picard,
            max_picard_iter: self.max_picard_iter,
            tol_mass: self.tol_mass,
            eps_minor: self.eps_minor,
            eps_tv: self.eps_tv,
        })
    }
}

/// Parameters of the `verify` invariant suite.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    /// Final time of the conservation, duality and residual checks.
    pub horizon: f64,
    /// Snapshot spacing for conservation and the residual time integral.
    pub snapshot_step: f64,
    pub tol_gap: f64,
    pub tol_semigroup: f64,
    pub tol_residual: f64,
    /// Times of the TV decay check against the stationary measure.
    pub decay_times: Vec<f64>,
    /// Doeblin window; the best certificate is used when absent.
    pub eta: Option<f64>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            horizon: 2.0,
            snapshot_step: 0.01,
            tol_gap: 1e-4,
            tol_semigroup: 1e-4,
            tol_residual: 1e-4,
            decay_times: (1..=10).map(f64::from).collect(),
            eta: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureEntry {
    pub atom: Option<f64>,
    pub weight: Option<f64>,
    pub density: Option<DensitySpec>,
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub stationary: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum DensitySpec {
    /// Expression in `a`.
    Expr(String),
    /// Piecewise-linear through the points, zero outside them.
    Table { ages: Vec<f64>, values: Vec<f64> },
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "A_max", alias = "a_max")]
    pub a_max: Option<f64>,
    pub h_a: Option<f64>,
}

fn table_density(ages: &[f64], values: &[f64]) -> Result<impl Fn(f64) -> f64> {
    if ages.len() != values.len() || ages.len() < 2 || ages.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Config(
            "density table needs >= 2 strictly increasing ages with matching values".into(),
        ));
    }
    let (ages, values) = (ages.to_vec(), values.to_vec());
    Ok(move |a: f64| {
        if a < ages[0] || a > ages[ages.len() - 1] {
            return 0.0;
        }
        let k = ages.partition_point(|x| *x <= a).clamp(1, ages.len() - 1);
        let s = (a - ages[k - 1]) / (ages[k] - ages[k - 1]);
        values[k - 1] + s * (values[k] - values[k - 1])
    })
}

impl MeasureEntry {
    fn build(&self, hazard: &HazardRate, numerics: &Numerics) -> Result<SignedMeasure> {
        let weight = self.weight.unwrap_or(1.0);
        let kinds = [self.atom.is_some(), self.density.is_some(), self.stationary];
        if kinds.iter().filter(|k| **k).count() != 1 {
            return Err(CliError::Config(
                "each [[measure]] entry needs exactly one of `atom`, `density`, `stationary = true`"
                    .into(),
            ));
        }
        if let Some(a) = self.atom {
            return Ok(SignedMeasure::from_atoms(&[(a, weight)])?);
        }
        if self.stationary {
            return Ok(stationary(hazard, numerics.a_max)?.measure.scaled(weight));
        }
        let grid = self.grid.unwrap_or(GridSpec {
            a_max: None,
            h_a: None,
        });
        let step = grid.h_a.unwrap_or(numerics.age_step);
        let density = match self.density.as_ref().expect("checked above") {
            DensitySpec::Expr(src) => {
                let extent = grid.a_max.unwrap_or(numerics.a_max);
                let f = TestFunction::expression(src, step, extent)?;
                GridFunction::sample(step, extent, |a| f.eval(a))
            }
            DensitySpec::Table { ages, values } => {
                let extent = grid.a_max.unwrap_or(*ages.last().unwrap_or(&0.0));
                GridFunction::sample(step, extent, table_density(ages, values)?)
            }
        };
        Ok(SignedMeasure::from_density(density)?.scaled(weight))
    }
}

/// Sum of the entries.
pub fn build_measure(
    entries: &[MeasureEntry],
    hazard: &HazardRate,
    numerics: &Numerics,
) -> Result<SignedMeasure> {
    let mut total = SignedMeasure::zero();
    for e in entries {
        total = total.add_scaled(&e.build(hazard, numerics)?, 1.0)?;
    }
    if total.extent() > numerics.a_max {
        return Err(CliError::Config(format!(
            "measure extends to {} beyond a_max = {}",
            total.extent(),
            numerics.a_max
        )));
    }
    Ok(total)
}

/// Resolved numerical parameters for summary records.
pub fn describe(numerics: &Numerics, seed: u64) -> BTreeMap<&'static str, serde_json::Value> {
    let mut m = BTreeMap::new();
    m.insert("h_a", numerics.age_step.into());
    m.insert("h_t", numerics.time_step.into());
    m.insert("a_max", numerics.a_max.into());
    m.insert("tol_picard", numerics.tol_picard.into());
    m.insert("max_picard_iter", numerics.max_picard_iter.into());
    m.insert("tol_mass", numerics.tol_mass.into());
    m.insert("eps_minor", numerics.eps_minor.into());
    m.insert("eps_tv", numerics.eps_tv.into());
    m.insert("seed", seed.into());
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_scenario() {
        let src = r#"
            [rate]
            kind = "table"
            ages = [0.0, 2.0]
            values = [0.5, 1.5]
            beta_min = 1.0
            beta_max = 1.5
            a_star = 1.0

            [numerics]
            h_a = 0.002
            h_t = 0.002
            a_max = 20.0

            [[measure]]
            atom = 0.5
            weight = 0.25

            [[measure]]
            density = { ages = [0.0, 2.0], values = [0.375, 0.375] }
            grid = { A_max = 2.0, h_a = 0.002 }
        "#;
        let cfg: ScenarioFile = toml::from_str(src).unwrap();
        let n = cfg.numerics.resolve(1.0, 2.0).unwrap();
        let hz = cfg.rate().unwrap().build(&n, 22.0).unwrap();
        let mu = build_measure(cfg.measures().unwrap(), &hz, &n).unwrap();
        assert!((mu.mass() - 1.0).abs() < 1e-12);
        assert_eq!(mu.atoms().len(), 1);
    }

    #[test]
    fn constant_rate_defaults_bounds() {
        let cfg: ScenarioFile = toml::from_str("[rate]\nkind = \"constant\"\nvalue = 2.0\n").unwrap();
        let b = cfg.rate().unwrap().bounds().unwrap();
        assert_eq!((b.beta_min, b.beta_max, b.a_star), (2.0, 2.0, 0.0));
    }

    #[test]
    fn rejects_bad_numerics() {
        let spec = NumericsSpec {
            h_a: 0.0,
            ..NumericsSpec::default()
        };
        assert!(matches!(spec.resolve(0.0, 1.0), Err(CliError::Config(_))));
        assert!(matches!(NumericsSpec::default().resolve(0.1, 45.0), Err(CliError::Config(_))));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<ScenarioFile>("[rate]\nkind = \"constant\"\nvalu = 1.0\n").is_err());
    }

    #[test]
    fn entry_needs_one_kind() {
        let cfg: ScenarioFile = toml::from_str(
            "[rate]\nkind = \"constant\"\nvalue = 1.0\n[[measure]]\natom = 1.0\nstationary = true\n",
        )
        .unwrap();
        let n = cfg.numerics.resolve(0.0, 1.0).unwrap();
        let hz = cfg.rate().unwrap().build(&n, 41.0).unwrap();
        assert!(build_measure(cfg.measures().unwrap(), &hz, &n).is_err());
    }
}
