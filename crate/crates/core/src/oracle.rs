//! Monte Carlo simulation of the age process, independent of both solvers.
//!
//! A path ages at unit speed and resets to zero at rate `β(age)`. Reset
//! times are sampled exactly by thinning: candidates arrive at rate `β_max`
//! and are accepted with probability `β(age)/β_max`. Path `i` draws from its
//! own ChaCha stream (`seed`, stream `i`), so results do not depend on how
//! paths are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::hazard::HazardRate;
use crate::measure::SignedMeasure;
use crate::{Error, Result};

/// Allowed deviation of the initial mass from one.
const PROBABILITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub seed: u64,
    pub time: f64,
    pub final_ages: Vec<f64>,
    /// Reset times of each path, when requested.
    pub resets: Option<Vec<Vec<f64>>>,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.final_ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.final_ages.is_empty()
    }

    /// Fraction of paths with no reset, i.e. still carrying their initial
    /// age. Only available with reset logs.
    pub fn survivor_fraction(&self) -> Option<f64> {
        self.resets.as_ref().map(|r| {
            r.iter().filter(|v| v.is_empty()).count() as f64 / r.len() as f64
        })
    }
}

fn check_probability(mu: &SignedMeasure) -> Result<()> {
    if !mu.is_nonnegative(0.0) {
        return Err(Error::Contract("the initial law must be nonnegative".into()));
    }
    let mass = mu.mass();
    if (mass - 1.0).abs() > PROBABILITY_TOL {
        return Err(Error::Contract(format!(
            "the initial law must have mass 1, got {mass}"
        )));
    }
    Ok(())
}

/// Inverse-CDF sampler for an atoms + piecewise-linear density law.
struct Sampler<'a> {
    mu: &'a SignedMeasure,
    /// Cumulative mass after each atom, then after each density cell.
    cumulative: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(mu: &'a SignedMeasure) -> Self {
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for a in mu.atoms() {
            acc += a.weight;
            cumulative.push(acc);
        }
        if let Some(d) = mu.density() {
            for w in d.values.windows(2) {
                acc += 0.5 * d.step * (w[0] + w[1]);
                cumulative.push(acc);
            }
        }
        Self { mu, cumulative }
    }

    fn draw(&self, u: f64) -> f64 {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let target = u * total;
        let k = self
            .cumulative
            .partition_point(|c| *c <= target)
            .min(self.cumulative.len() - 1);
        let atoms = self.mu.atoms();
        if k < atoms.len() {
            return atoms[k].location;
        }
        let d = self.mu.density().expect("cells exist only with a density");
        let cell = k - atoms.len();
        let before = if k == 0 { 0.0 } else { self.cumulative[k - 1] };
        let m = (target - before).max(0.0);
        let (v0, v1, h) = (d.values[cell], d.values[cell + 1], d.step);
        // Solve v0·s + (v1 − v0)·s²/(2h) = m for s ∈ [0, h].
        let disc = (v0 * v0 + 2.0 * (v1 - v0) * m / h).max(0.0);
        let denom = v0 + disc.sqrt();
        let s = if denom > 0.0 { 2.0 * m / denom } else { 0.0 };
        d.age(cell) + s.clamp(0.0, h)
    }
}

/// Draws `n` paths from `mu` and runs each for time `t`.
pub fn simulate(
    mu: &SignedMeasure,
    hazard: &HazardRate,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    run(mu, hazard, t, n, seed, false)
}

/// [`simulate`], also recording every reset time.
pub fn simulate_logged(
    mu: &SignedMeasure,
    hazard: &HazardRate,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    run(mu, hazard, t, n, seed, true)
}

fn run(
    mu: &SignedMeasure,
    hazard: &HazardRate,
    t: f64,
    n: usize,
    seed: u64,
    log: bool,
) -> Result<PathEnsemble> {
    check_probability(mu)?;
    if n == 0 {
        return Err(Error::Contract("at least one path is required".into()));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Contract(format!("time {t} must be finite and >= 0")));
    }
    let beta_max = hazard.beta_max();
    if !(beta_max >= 0.0) || !beta_max.is_finite() {
        return Err(Error::Contract(format!("beta_max {beta_max} must be finite and >= 0")));
    }
    let sampler = Sampler::new(mu);
    let paths: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut age = sampler.draw(rng.gen::<f64>());
            let mut resets = Vec::new();
            if beta_max == 0.0 {
                return (age + t, resets);
            }
            let mut clock = 0.0;
            loop {
                let dt: f64 = rng.sample::<f64, _>(Exp1) / beta_max;
                if clock + dt >= t {
                    age += t - clock;
                    break;
                }
                clock += dt;
                age += dt;
                if rng.gen::<f64>() * beta_max < hazard.rate(age) {
                    age = 0.0;
                    if log {
                        resets.push(clock);
                    }
                }
            }
            (age, resets)
        })
        .collect();
    let (final_ages, resets): (Vec<f64>, Vec<Vec<f64>>) = paths.into_iter().unzip();
    Ok(PathEnsemble {
        seed,
        time: t,
        final_ages,
        resets: log.then_some(resets),
    })
}

/// Cumulative distribution function of a nonnegative atoms + density law.
pub struct MeasureCdf<'a> {
    mu: &'a SignedMeasure,
    atom_cumulative: Vec<f64>,
    node_cumulative: Vec<f64>,
}

impl<'a> MeasureCdf<'a> {
    pub fn new(mu: &'a SignedMeasure) -> Self {
        let atom_cumulative = mu
            .atoms()
            .iter()
            .scan(0.0, |acc, a| {
                *acc += a.weight;
                Some(*acc)
            })
            .collect();
        let node_cumulative = mu
            .density()
            .map(|d| {
                let mut c = vec![0.0];
                let mut acc = 0.0;
                for w in d.values.windows(2) {
                    acc += 0.5 * d.step * (w[0] + w[1]);
                    c.push(acc);
                }
                c
            })
            .unwrap_or_default();
        Self {
            mu,
            atom_cumulative,
            node_cumulative,
        }
    }

    fn density_part(&self, x: f64) -> f64 {
        let Some(d) = self.mu.density() else {
            return 0.0;
        };
        if x <= 0.0 {
            return 0.0;
        }
        let last = d.len() - 1;
        let pos = x / d.step;
        if pos >= last as f64 {
            return self.node_cumulative[last];
        }
        let i = pos.floor() as usize;
        let s = x - d.age(i);
        let (v0, v1) = (d.values[i], d.values[i + 1]);
        self.node_cumulative[i] + v0 * s + 0.5 * (v1 - v0) * s * s / d.step
    }

    /// `μ([0, x])`.
    pub fn at(&self, x: f64) -> f64 {
        let k = self.mu.atoms().partition_point(|a| a.location <= x);
        let atoms = if k == 0 { 0.0 } else { self.atom_cumulative[k - 1] };
        atoms + self.density_part(x)
    }

    /// `μ([0, x))`.
    pub fn left_limit(&self, x: f64) -> f64 {
        let k = self.mu.atoms().partition_point(|a| a.location < x);
        let atoms = if k == 0 { 0.0 } else { self.atom_cumulative[k - 1] };
        atoms + self.density_part(x)
    }

    pub fn total(&self) -> f64 {
        self.atom_cumulative.last().copied().unwrap_or(0.0)
            + self.node_cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Kolmogorov distance `sup_x |F_N(x) − μ([0, x])|` between the empirical law
/// of the ensemble and `mu`. Both sides are checked at every sample and atom,
/// including left limits, which is where the supremum is attained.
pub fn compare_cdf(ensemble: &PathEnsemble, mu: &SignedMeasure) -> f64 {
    let mut ages = ensemble.final_ages.clone();
    ages.sort_by(f64::total_cmp);
    let n = ages.len() as f64;
    let cdf = MeasureCdf::new(mu);
    let mut points: Vec<f64> = ages.clone();
    points.extend(mu.atoms().iter().map(|a| a.location));
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut sup = (1.0 - cdf.total()).abs();
    for x in points {
        let below = ages.partition_point(|a| *a < x) as f64 / n;
        let upto = ages.partition_point(|a| *a <= x) as f64 / n;
        sup = sup
            .max((upto - cdf.at(x)).abs())
            .max((below - cdf.left_limit(x)).abs());
    }
    sup
}

/// Dvoretzky–Kiefer–Wolfowitz radius: `P(sup|F_N − F| > ε) ≤ level` for
/// `ε = sqrt(ln(2/level)/(2N))`.
pub fn dkw_radius(n: usize, level: f64) -> f64 {
    ((2.0 / level).ln() / (2.0 * n as f64)).sqrt()
}
