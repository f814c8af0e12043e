//! Weighted RMSE against field data and the simulator as a noisy objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FieldSeries, Scenario};
use crate::params::{ParamVector, Resource};
use crate::sim::{OccupancyTrace, Simulator};
use crate::stochastic::{self, Purpose};
use crate::{Error, Result};

pub const DEFAULT_REPLICATES: usize = 5;
pub const STUDY_REPLICATES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub bed: f64,
    pub icu: f64,
    pub vent: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            bed: 2.0,
            icu: 4.0,
            vent: 8.0,
        }
    }
}

impl Weights {
    pub fn new(bed: f64, icu: f64, vent: f64) -> Result<Self> {
        let w = Weights { bed, icu, vent };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<()> {
        let all = [self.bed, self.icu, self.vent];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("weights must be finite and nonnegative".into()));
        }
        if all.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("weights must not all be zero".into()));
        }
        Ok(())
    }

    pub fn get(&self, r: Resource) -> f64 {
        match r {
            Resource::Bed => self.bed,
            Resource::Icu => self.icu,
            Resource::Vent => self.vent,
        }
    }
}

/// `Σ_k w_k · RMSE_k` over the inclusive day window `[t0, t1]`.
pub fn weighted_rmse(sim: &OccupancyTrace, field: &FieldSeries, w: &Weights, window: (usize, usize)) -> Result<f64> {
    let (t0, t1) = window;
    if t1 < t0 {
        return Err(Error::Model(format!("empty scoring window [{t0}, {t1}]")));
    }
    if t1 >= sim.len() {
        return Err(Error::Model(format!(
            "scoring window ends at day {t1} but the simulation covers {} days",
            sim.len()
        )));
    }
    let covered = field.first_day <= t0 && field.last_day().is_some_and(|l| l >= t1);
    if !covered {
        return Err(Error::Model(format!(
            "scoring window [{t0}, {t1}] not covered by field data"
        )));
    }
    let n = (t1 - t0 + 1) as f64;
    let mut score = 0.0;
    for r in [Resource::Bed, Resource::Icu, Resource::Vent] {
        let wk = w.get(r);
        if wk == 0.0 {
            continue;
        }
        let sse: f64 = (t0..=t1)
            .map(|t| {
                let obs = field.get(t).expect("window covered").get(r) as f64;
                let d = sim.get(r, t) as f64 - obs;
                d * d
            })
            .sum();
        score += wk * (sse / n).sqrt();
    }
    Ok(score)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub mean_score: f64,
    pub per_replicate: Vec<f64>,
    pub replicates: usize,
    pub seed_used: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<Weights>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub window: Option<(usize, usize)>,
}

impl EvaluationResult {
    pub fn from_scores(per_replicate: Vec<f64>, seed_used: u64) -> Self {
        let n = per_replicate.len();
        let mean_score = per_replicate.iter().sum::<f64>() / n as f64;
        EvaluationResult {
            mean_score,
            per_replicate,
            replicates: n,
            seed_used,
            weights: None,
            window: None,
        }
    }
}

/// Runs `n` replicates of the scenario at `x`; replicate `r` uses its own seed
/// derived from `seed`, so results do not depend on scheduling.
pub fn evaluate(
    sim: &Simulator,
    x: &ParamVector,
    scenario: &Scenario,
    w: &Weights,
    n: usize,
    seed: u64,
) -> Result<EvaluationResult> {
    if n == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    w.check()?;
    let scores = (0..n)
        .into_par_iter()
        .map(|r| {
            let s = stochastic::child_seed(seed, Purpose::Replicate, 0, r as u64);
            let trace = sim.simulate(&scenario.arrivals, x, s)?;
            weighted_rmse(&trace, &scenario.field, w, scenario.eval_window)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut res = EvaluationResult::from_scores(scores, seed);
    res.weights = Some(*w);
    res.window = Some(scenario.eval_window);
    Ok(res)
}

/// A noisy scalar function to minimize. `stream` selects an independent noise
/// stream; the same `(x, stream)` always yields the same result.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64], stream: u64) -> Result<EvaluationResult>;
}

/// The hospital simulator scored against a scenario.
#[derive(Clone, Debug)]
pub struct HospitalObjective {
    pub sim: Simulator,
    pub scenario: Scenario,
    pub weights: Weights,
    pub replicates: usize,
    pub seed: u64,
}

impl HospitalObjective {
    pub fn new(sim: Simulator, scenario: Scenario, weights: Weights, replicates: usize, seed: u64) -> Self {
        HospitalObjective {
            sim,
            scenario,
            weights,
            replicates,
            seed,
        }
    }

    pub fn eval_seed(&self, stream: u64) -> u64 {
        stochastic::child_seed(self.seed, Purpose::Evaluation, stream, 0)
    }
}

impl Objective for HospitalObjective {
    fn dim(&self) -> usize {
        self.sim.space().dim()
    }

    fn evaluate(&self, x: &[f64], stream: u64) -> Result<EvaluationResult> {
        let x = ParamVector(x.to_vec());
        evaluate(
            &self.sim,
            &x,
            &self.scenario,
            &self.weights,
            self.replicates,
            self.eval_seed(stream),
        )
    }
}

/// Deterministic function plus optional Gaussian noise, averaged over
/// replicates like the simulator objective.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
    pub noise_sd: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective {
            dim,
            f,
            noise_sd: 0.0,
            replicates: 1,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, sd: f64, replicates: usize, seed: u64) -> Self {
        self.noise_sd = sd;
        self.replicates = replicates;
        self.seed = seed;
        self
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64], stream: u64) -> Result<EvaluationResult> {
        if x.len() != self.dim {
            return Err(Error::Model(format!("expected {} inputs, got {}", self.dim, x.len())));
        }
        let n = self.replicates.max(1);
        let seed = stochastic::child_seed(self.seed, Purpose::Evaluation, stream, 0);
        let base = (self.f)(x);
        let scores = (0..n)
            .map(|r| {
                if self.noise_sd > 0.0 {
                    let mut rng = stochastic::stream(seed, Purpose::Noise, 0, r as u64);
                    base + self.noise_sd * stochastic::standard_normal(&mut rng)
                } else {
                    base
                }
            })
            .collect();
        Ok(EvaluationResult::from_scores(scores, seed))
    }
}
