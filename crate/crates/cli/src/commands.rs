use std::path::Path;

use serde_json::{json, Value};

use renewal_core::dual::evolve_dual;
use renewal_core::ergodicity::{
    best_certificate, certificate, minorization_battery, stationary, tv_decay_experiment,
    verify_minorization,
};
use renewal_core::forward::{duality_gap, meassol_residual_of, ForwardSolution};
use renewal_core::measure::smooth_truncation;
use renewal_core::oracle::simulate;
use renewal_core::{
    DoeblinCertificate, HazardRate, InitialProfile, Numerics, SignedMeasure, TestFunction,
};

use crate::config::{build_measure, describe, ScenarioFile};
use crate::error::{CliError, Result};
use crate::output::write_atomic;
use crate::Report;

/// Rate, numerics and the hazard grid padded for `horizon`.
struct Setup {
    scenario: ScenarioFile,
    numerics: Numerics,
    hazard: HazardRate,
}

fn setup(rate: &Path, horizon: f64) -> Result<Setup> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(CliError::Config(format!("time {horizon} must be finite and >= 0")));
    }
    let scenario = ScenarioFile::load(rate)?;
    let spec = scenario.rate()?;
    let numerics = scenario.numerics.resolve(spec.a_star, horizon)?;
    let hazard = spec.build(&numerics, numerics.a_max + horizon)?;
    Ok(Setup {
        scenario,
        numerics,
        hazard,
    })
}

impl Setup {
    /// The forward solver steps on the age grid, so its times must lie on it.
    fn require_on_grid(&self, t: f64) -> Result<()> {
        let k = t / self.numerics.age_step;
        if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
            return Err(CliError::Config(format!(
                "time {t} is not a multiple of the step {}",
                self.numerics.age_step
            )));
        }
        Ok(())
    }

    fn measure(&self, path: &Path) -> Result<SignedMeasure> {
        let file = ScenarioFile::load(path)?;
        build_measure(file.measures()?, &self.hazard, &self.numerics)
    }

    fn parameters(&self) -> Value {
        json!(describe(&self.numerics, self.scenario.numerics.seed))
    }
}

fn summary(command: &str, parameters: Value, passed: bool, residuals: Value, outputs: &[&Path]) -> Value {
    json!({
        "command": command,
        "parameters": parameters,
        "pass": passed,
        "max_residuals": residuals,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    })
}

pub fn dual(rate: &Path, f0: &str, t: f64, out: &Path) -> Result<Report> {
    let s = setup(rate, t)?;
    let n = &s.numerics;
    let f = TestFunction::expression(f0, n.age_step, n.a_max + t)?;
    let profile = evolve_dual(&f, &s.hazard, t, n.a_max, n)?;
    let path = write_atomic(out, |w| {
        writeln!(w, "age,value")?;
        for (i, v) in profile.values.iter().enumerate() {
            writeln!(w, "{},{}", profile.age(i), v)?;
        }
        Ok(())
    })?;
    let sup_excess = (profile.sup_norm() - f.sup_bound()).max(0.0);
    let mut params = s.parameters();
    params["f0"] = json!(f0);
    params["t"] = json!(t);
    Ok(Report {
        summary: summary(
            "dual",
            params,
            true,
            json!({ "sup_excess": sup_excess, "min_value": profile.min() }),
            &[&path],
        ),
        passed: true,
    })
}

pub fn evolve(rate: &Path, init: &Path, t: f64, snapshots: Option<f64>, out: &Path) -> Result<Report> {
    let s = setup(rate, t)?;
    s.require_on_grid(t)?;
    let mu = s.measure(init)?;
    let sol = ForwardSolution::solve(&mu, &s.hazard, t, &s.numerics)?;
    let frames = match snapshots {
        Some(step) => sol.snapshots(step)?,
        None => vec![(t, sol.at(t)?)],
    };
    let drift = frames
        .iter()
        .map(|(_, m)| (m.mass() - mu.mass()).abs())
        .fold(0.0, f64::max);
    let path = write_atomic(out, |w| {
        writeln!(w, "t,kind,location,value")?;
        for (time, m) in &frames {
            m.write_csv_rows(&mut *w, &format!("{time},"))?;
        }
        Ok(())
    })?;
    let mut params = s.parameters();
    params["t"] = json!(t);
    params["snapshots"] = json!(snapshots);
    Ok(Report {
        summary: summary("evolve", params, true, json!({ "mass_drift": drift }), &[&path]),
        passed: true,
    })
}

pub fn oracle(rate: &Path, init: &Path, t: f64, n: usize, seed: Option<u64>, out: &Path) -> Result<Report> {
    let s = setup(rate, t)?;
    let mu = s.measure(init)?;
    let seed = seed.unwrap_or(s.scenario.numerics.seed);
    let ens = simulate(&mu, &s.hazard, t, n, seed)?;
    let path = write_atomic(out, |w| {
        writeln!(w, "age")?;
        for a in &ens.final_ages {
            writeln!(w, "{a}")?;
        }
        Ok(())
    })?;
    let mut params = s.parameters();
    params["t"] = json!(t);
    params["n"] = json!(n);
    params["seed"] = json!(seed);
    let mean = ens.final_ages.iter().sum::<f64>() / n as f64;
    Ok(Report {
        summary: summary("oracle", params, true, json!({ "mean_age": mean }), &[&path]),
        passed: true,
    })
}

fn pick_certificate(hazard: &HazardRate, eta: Option<f64>) -> Result<DoeblinCertificate> {
    Ok(match eta {
        Some(eta) => certificate(hazard.bounds(), eta)?,
        None => best_certificate(hazard.bounds())?,
    })
}

fn certificate_json(c: &DoeblinCertificate) -> Value {
    json!({ "eta": c.eta, "t0": c.t0, "c": c.c, "alpha": c.alpha })
}

pub fn doeblin(rate: &Path, eta: Option<f64>) -> Result<Report> {
    let s = setup(rate, 0.0)?;
    let cert = pick_certificate(&s.hazard, eta)?;
    let mut record = certificate_json(&cert);
    record["command"] = json!("doeblin");
    record["optimized"] = json!(eta.is_none());
    record["parameters"] = s.parameters();
    Ok(Report {
        summary: record,
        passed: true,
    })
}

pub fn converge(
    rate: &Path,
    mu1: &Path,
    mu2: &Path,
    times: &[f64],
    eta: Option<f64>,
    out: &Path,
) -> Result<Report> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let s = setup(rate, horizon)?;
    for &t in times {
        s.require_on_grid(t)?;
    }
    let (m1, m2) = (s.measure(mu1)?, s.measure(mu2)?);
    let cert = pick_certificate(&s.hazard, eta)?;
    let table = tv_decay_experiment(&m1, &m2, &s.hazard, &cert, times, &s.numerics)?;
    let path = write_atomic(out, |w| {
        writeln!(w, "t,tv,bound")?;
        for r in &table.rows {
            writeln!(w, "{},{},{}", r.t, r.tv, r.bound)?;
        }
        Ok(())
    })?;
    let excess = table.max_excess();
    let passed = excess <= s.numerics.eps_tv;
    let mut params = s.parameters();
    params["times"] = json!(times);
    params["certificate"] = certificate_json(&cert);
    Ok(Report {
        summary: summary(
            "converge",
            params,
            passed,
            json!({ "bound_excess": excess, "fitted_rate": table.fitted_rate(1e-12) }),
            &[&path],
        ),
        passed,
    })
}

/// One row of the `verify` table.
struct Check {
    name: &'static str,
    value: f64,
    /// `value <= limit` when true, `value >= limit` otherwise.
    upper: bool,
    limit: f64,
}

impl Check {
    fn at_most(name: &'static str, value: f64, limit: f64) -> Self {
        Self { name, value, upper: true, limit }
    }

    fn at_least(name: &'static str, value: f64, limit: f64) -> Self {
        Self { name, value, upper: false, limit }
    }

    fn passed(&self) -> bool {
        if self.upper {
            self.value <= self.limit
        } else {
            self.value >= self.limit
        }
    }
}

fn smooth_battery() -> Vec<TestFunction> {
    let ratio = TestFunction::new("a/(1+a)", 1.0, |a| a / (1.0 + a))
        .with_derivative(1.0, |a| 1.0 / ((1.0 + a) * (1.0 + a)));
    vec![
        TestFunction::exp_decay(1.0),
        TestFunction::smooth_bump(1.5, 1.0),
        smooth_truncation(&ratio, 2),
    ]
}

/// Largest node-wise negative excursion of a measure.
fn negative_part(m: &SignedMeasure) -> f64 {
    let atoms = m.atoms().iter().map(|a| -a.weight);
    let nodes = m.density().into_iter().flat_map(|d| d.values.iter().map(|v| -v));
    atoms.chain(nodes).fold(0.0, f64::max)
}

pub fn verify(rate: &Path, init: &Path, out: Option<&Path>) -> Result<Report> {
    let pre = ScenarioFile::load(rate)?;
    let v = pre.verify.clone();
    let decay_end = v.decay_times.iter().copied().fold(0.0, f64::max);
    // Semigroup pairs reach t + s = 2.
    let padding = v.horizon.max(decay_end).max(2.0);
    let s = setup(rate, padding)?;
    let (n, hz) = (&s.numerics, &s.hazard);
    s.require_on_grid(v.horizon)?;
    for &t in &v.decay_times {
        s.require_on_grid(t)?;
    }
    let mu = s.measure(init)?;

    if !(v.snapshot_step > 0.0) || (v.horizon / v.snapshot_step - (v.horizon / v.snapshot_step).round()).abs() > 1e-9 {
        return Err(CliError::Config(format!(
            "[verify] horizon {} must be a positive multiple of snapshot_step {}",
            v.horizon, v.snapshot_step
        )));
    }
    let on_grid = |t: f64| (t / n.age_step).round() * n.age_step;
    let mut checks = Vec::new();

    // Conservation, contraction and positivity of the orbit.
    let sol = ForwardSolution::solve(&mu, hz, v.horizon, n)?;
    let frames = sol.snapshots(v.snapshot_step)?;
    let drift = frames.iter().map(|(_, m)| (m.mass() - mu.mass()).abs()).fold(0.0, f64::max);
    checks.push(Check::at_most("mass_drift", drift, n.tol_mass));
    let tv_growth = frames.iter().map(|(_, m)| m.tv_norm() - mu.tv_norm()).fold(0.0, f64::max);
    checks.push(Check::at_most("tv_growth", tv_growth, n.tol_mass));
    if mu.is_nonnegative(0.0) {
        let neg = frames.iter().map(|(_, m)| negative_part(m)).fold(0.0, f64::max);
        checks.push(Check::at_most("forward_negativity", neg, 0.0));
    }

    // Dual side: positivity and sup bound, semigroup law.
    let extent = 10.0f64.min(n.a_max - 2.0);
    let battery = smooth_battery();
    let mut dual_violation = 0.0f64;
    let mut semigroup = 0.0f64;
    for f in &battery {
        let g = evolve_dual(f, hz, v.horizon, extent, n)?;
        dual_violation = dual_violation.max(-g.min()).max(g.sup_norm() - f.sup_bound());
        for (t, s_) in [(0.7, 0.9), (1.0, 1.0)] {
            let direct = evolve_dual(f, hz, t + s_, extent, n)?;
            let inner = evolve_dual(f, hz, s_, extent + t, n)?;
            let composed = evolve_dual(InitialProfile::Grid(inner), hz, t, extent, n)?;
            let d = direct
                .values
                .iter()
                .zip(&composed.values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            semigroup = semigroup.max(d);
        }
    }
    checks.push(Check::at_most("dual_bound_violation", dual_violation.max(0.0), 1e-12));
    checks.push(Check::at_most("semigroup", semigroup, v.tol_semigroup));

    // Duality pairing and the measure-solution identity.
    let mut gap = 0.0f64;
    let mut pairing = battery.clone();
    pairing.push(TestFunction::constant(1.0));
    for f in &pairing {
        for t in [on_grid(0.5 * v.horizon), v.horizon] {
            gap = gap.max(duality_gap(&mu, f, hz, t, n)?);
        }
    }
    checks.push(Check::at_most("duality_gap", gap, v.tol_gap));
    let mut residual = 0.0f64;
    for f in &battery {
        residual = residual.max(meassol_residual_of(&sol, f, v.horizon, v.snapshot_step)?);
    }
    checks.push(Check::at_most("meassol_residual", residual, v.tol_residual));

    // Minorization and decay towards the invariant measure.
    let cert = pick_certificate(hz, v.eta)?;
    let minor = verify_minorization(hz, &cert, &minorization_battery(cert.eta), n)?;
    checks.push(Check::at_least("minorization_margin", minor.min_margin(), -n.eps_minor));
    let probability = mu.is_nonnegative(0.0) && (mu.mass() - 1.0).abs() <= n.tol_mass;
    if probability && !v.decay_times.is_empty() {
        let st = stationary(hz, n.a_max)?;
        let table = tv_decay_experiment(&mu, &st.measure, hz, &cert, &v.decay_times, n)?;
        checks.push(Check::at_most("decay_bound_excess", table.max_excess(), n.eps_tv));
    }

    let passed = checks.iter().all(Check::passed);
    let mut outputs = Vec::new();
    if let Some(out) = out {
        outputs.push(write_atomic(out, |w| {
            writeln!(w, "check,value,relation,limit,pass")?;
            for c in &checks {
                let rel = if c.upper { "<=" } else { ">=" };
                writeln!(w, "{},{:?},{rel},{:?},{}", c.name, c.value, c.limit, c.passed())?;
            }
            Ok(())
        })?);
    }
    let residuals: serde_json::Map<String, Value> =
        checks.iter().map(|c| (c.name.to_string(), json!(c.value))).collect();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    let mut params = s.parameters();
    params["verify"] = json!(v);
    params["certificate"] = certificate_json(&cert);
    let mut record = summary(
        "verify",
        params,
        passed,
        Value::Object(residuals),
        &outputs.iter().map(|p| p.as_path()).collect::<Vec<_>>(),
    );
    record["failed"] = json!(failed);
    Ok(Report {
        summary: record,
        passed,
    })
}
