//! Sequential model-based optimization with a Kriging surrogate, plus a
//! random-search baseline with identical bookkeeping.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::objective::{EvaluationResult, Objective};
use crate::params::ParamSpace;
use crate::stochastic::{self, Purpose};
use crate::surrogate::{self, fit_kriging, Design, KrigingConfig, KrigingModel};
use crate::{Error, Result};

const MIN_DISTANCE: f64 = 1e-9;

/// Box-bounded search domain; indices used in masks are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("domain bounds must be nonempty and equally long".into()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite())
        {
            return Err(Error::Config("domain bounds must be finite with lower <= upper".into()));
        }
        Ok(Domain { lower, upper })
    }

    pub fn cube(d: usize, lo: f64, hi: f64) -> Self {
        Domain {
            lower: vec![lo; d],
            upper: vec![hi; d],
        }
    }

    pub fn from_space(space: &ParamSpace) -> Self {
        Domain {
            lower: space.lower(),
            upper: space.upper(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn midpoint(&self, index: usize) -> f64 {
        0.5 * (self.lower[index - 1] + self.upper[index - 1])
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }
}

/// Midpoint values for every masked index.
pub fn fix_excluded(domain: &Domain, mask: &BTreeSet<usize>) -> Result<Vec<(usize, f64)>> {
    if let Some(&bad) = mask.iter().find(|&&i| i == 0 || i > domain.dim()) {
        return Err(Error::Config(format!(
            "excluded index {bad} outside 1..={}",
            domain.dim()
        )));
    }
    if mask.len() == domain.dim() {
        return Err(Error::Config("mask leaves no free dimensions".into()));
    }
    Ok(mask.iter().map(|&i| (i, domain.midpoint(i))).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Infill {
    #[default]
    ExpectedImprovement,
    PredictedValue,
}

/// Scale on which the surrogate models the scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    /// `ln(score)`; identity is used while any score is not positive.
    #[default]
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillSearch {
    /// Uniform random candidates scored on the surrogate.
    pub random: usize,
    /// Best random candidates refined by pattern search.
    pub refine: usize,
    pub steps: usize,
}

impl Default for InfillSearch {
    fn default() -> Self {
        InfillSearch {
            random: 200,
            refine: 10,
            steps: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub total_budget: usize,
    /// `None` means `2·free + 2`.
    #[serde(default)]
    pub init_size: Option<usize>,
    #[serde(default)]
    pub infill: Infill,
    /// 1-based indices held at their bound midpoints.
    #[serde(default)]
    pub mask: BTreeSet<usize>,
    #[serde(default)]
    pub infill_search: InfillSearch,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default)]
    pub kriging: KrigingConfig,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            total_budget: 100,
            init_size: None,
            infill: Infill::default(),
            mask: BTreeSet::new(),
            infill_search: InfillSearch::default(),
            transform: Transform::default(),
            kriging: KrigingConfig::default(),
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn init_size_for(&self, free: usize) -> usize {
        self.init_size.unwrap_or(2 * free + 2)
    }
}

/// Free and fixed coordinates of a (possibly masked) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// 1-based free indices.
    pub free: Vec<usize>,
    pub fixed: Vec<(usize, f64)>,
    pub free_lower: Vec<f64>,
    pub free_upper: Vec<f64>,
}

impl Layout {
    pub fn new(domain: &Domain, mask: &BTreeSet<usize>) -> Result<Self> {
        let fixed = fix_excluded(domain, mask)?;
        let free: Vec<usize> = (1..=domain.dim()).filter(|i| !mask.contains(i)).collect();
        Ok(Layout {
            free_lower: free.iter().map(|&i| domain.lower[i - 1]).collect(),
            free_upper: free.iter().map(|&i| domain.upper[i - 1]).collect(),
            free,
            fixed,
        })
    }

    pub fn dim(&self) -> usize {
        self.free.len() + self.fixed.len()
    }

    /// Full vector from free coordinates.
    pub fn assemble(&self, free_values: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (&i, &v) in self.free.iter().zip(free_values) {
            x[i - 1] = v;
        }
        for &(i, v) in &self.fixed {
            x[i - 1] = v;
        }
        x
    }

    /// Free coordinates of a full vector, mapped into the unit box.
    pub fn unit(&self, x: &[f64]) -> Vec<f64> {
        let raw: Vec<f64> = self.free.iter().map(|&i| x[i - 1]).collect();
        surrogate::normalize(&raw, &self.free_lower, &self.free_upper)
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.assemble(&surrogate::denormalize(u, &self.free_lower, &self.free_upper))
    }
}

pub fn initial_design(domain: &Domain, cfg: &OptimizerConfig) -> Result<Vec<Vec<f64>>> {
    let layout = Layout::new(domain, &cfg.mask)?;
    let n = cfg.init_size_for(layout.free.len());
    let mut rng = stochastic::stream(cfg.seed, Purpose::Design, 0, 0);
    let rows = stochastic::lhs(n, &layout.free_lower, &layout.free_upper, &mut rng)?;
    Ok(rows.iter().map(|r| layout.assemble(r)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Infill,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPoint {
    pub index: usize,
    pub phase: Phase,
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub result: Option<EvaluationResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl EvaluatedPoint {
    pub fn score(&self) -> Option<f64> {
        self.result.as_ref().map(|r| r.mean_score)
    }
}

/// Seconds spent per phase. Kept out of serialized records so that reruns
/// produce identical files.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub initial: f64,
    pub modeling: f64,
    pub infill: f64,
    pub evaluation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub method: String,
    pub config: OptimizerConfig,
    pub layout: Layout,
    pub evaluated: Vec<EvaluatedPoint>,
    /// Best mean score after each evaluation (`None` until one succeeds).
    pub best_trajectory: Vec<Option<f64>>,
    #[serde(skip)]
    pub timings: Timings,
}

impl OptimizationRecord {
    fn new(method: &str, config: &OptimizerConfig, layout: Layout) -> Self {
        OptimizationRecord {
            method: method.into(),
            config: config.clone(),
            layout,
            evaluated: Vec::new(),
            best_trajectory: Vec::new(),
            timings: Timings::default(),
        }
    }

    fn push(&mut self, p: EvaluatedPoint) {
        let prev = self.best_trajectory.last().copied().flatten();
        let best = match (prev, p.score()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.evaluated.push(p);
        self.best_trajectory.push(best);
    }

    pub fn final_best(&self) -> Option<f64> {
        self.best_trajectory.last().copied().flatten()
    }

    pub fn best_point(&self) -> Option<&EvaluatedPoint> {
        self.evaluated.iter().filter(|p| p.score().is_some()).min_by(|a, b| {
            a.score()
                .unwrap()
                .total_cmp(&b.score().unwrap())
                .then(a.index.cmp(&b.index))
        })
    }

    pub fn initial_best(&self) -> Option<f64> {
        self.evaluated
            .iter()
            .filter(|p| p.phase == Phase::Initial)
            .filter_map(|p| p.score())
            .reduce(f64::min)
    }

    /// Successful evaluations as a unit-box design over the free dimensions.
    pub fn design(&self) -> Option<Design> {
        let (x, y): (Vec<_>, Vec<_>) = self
            .evaluated
            .iter()
            .filter_map(|p| p.score().map(|s| (self.layout.unit(&p.x), s)))
            .unzip();
        Design::new(x, y).ok()
    }

    /// One row per evaluation: `iteration,phase,x1..xd,mean_score,best_so_far`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.layout.dim();
        let mut head = vec!["iteration".to_string(), "phase".to_string()];
        head.extend((1..=d).map(|i| format!("x{i}")));
        head.push("mean_score".into());
        head.push("best_so_far".into());
        writeln!(out, "{}", head.join(","))?;
        for (p, best) in self.evaluated.iter().zip(&self.best_trajectory) {
            let mut row = vec![p.index.to_string(), format!("{:?}", p.phase).to_lowercase()];
            row.extend(p.x.iter().map(|v| v.to_string()));
            row.push(p.score().map_or(String::new(), |s| s.to_string()));
            row.push(best.map_or(String::new(), |s| s.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn evaluate_point<O: Objective + ?Sized>(obj: &O, x: Vec<f64>, index: usize, phase: Phase) -> EvaluatedPoint {
    match obj.evaluate(&x, index as u64) {
        Ok(r) if r.mean_score.is_finite() => EvaluatedPoint {
            index,
            phase,
            x,
            result: Some(r),
            error: None,
        },
        Ok(r) => EvaluatedPoint {
            index,
            phase,
            x,
            result: None,
            error: Some(format!("non-finite score {}", r.mean_score)),
        },
        Err(e) => EvaluatedPoint {
            index,
            phase,
            x,
            result: None,
            error: Some(e.to_string()),
        },
    }
}

fn check_config<O: Objective + ?Sized>(obj: &O, domain: &Domain, cfg: &OptimizerConfig) -> Result<Layout> {
    if obj.dim() != domain.dim() {
        return Err(Error::Config(format!(
            "objective has {} inputs but the domain has {}",
            obj.dim(),
            domain.dim()
        )));
    }
    let layout = Layout::new(domain, &cfg.mask)?;
    let init = cfg.init_size_for(layout.free.len());
    if init < 2 {
        return Err(Error::Config("initial design needs at least 2 points".into()));
    }
    if init > cfg.total_budget {
        return Err(Error::Config(format!(
            "initial design of {init} exceeds the budget of {}",
            cfg.total_budget
        )));
    }
    Ok(layout)
}

/// Scores a unit-box candidate; larger is better.
fn criterion(model: &KrigingModel, infill: Infill, u: &[f64], best: f64) -> f64 {
    match infill {
        Infill::ExpectedImprovement => model.expected_improvement(u, best),
        Infill::PredictedValue => -model.predict_mean(u),
    }
}

fn min_distance(u: &[f64], seen: &[Vec<f64>]) -> f64 {
    seen.iter()
        .map(|s| s.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

/// Compass search in the unit box from `start`, maximizing `f`.
fn pattern_search(f: &dyn Fn(&[f64]) -> f64, start: Vec<f64>, steps: usize) -> (Vec<f64>, f64) {
    let mut x = start;
    let mut fx = f(&x);
    let mut h = 0.1;
    for _ in 0..steps {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] = (y[i] + dir * h).clamp(0.0, 1.0);
                if y[i] == x[i] {
                    continue;
                }
                let fy = f(&y);
                if fy > best.as_ref().map_or(fx, |b| b.1) {
                    best = Some((y, fy));
                }
            }
        }
        match best {
            Some((y, fy)) => {
                x = y;
                fx = fy;
            }
            None => {
                h *= 0.5;
                if h < 1e-6 {
                    break;
                }
            }
        }
    }
    (x, fx)
}

fn effective_transform(record: &OptimizationRecord, t: Transform) -> Transform {
    match t {
        Transform::Log if record.evaluated.iter().filter_map(|p| p.score()).all(|v| v > 0.0) => Transform::Log,
        _ => Transform::Identity,
    }
}

fn apply(t: Transform, y: f64) -> f64 {
    match t {
        Transform::Identity => y,
        Transform::Log => y.ln(),
    }
}

/// Successful evaluations on the scale the surrogate is fitted on.
pub fn model_design(record: &OptimizationRecord, cfg: &OptimizerConfig) -> Option<Design> {
    let t = effective_transform(record, cfg.transform);
    record.design().map(|mut d| {
        d.y.iter_mut().for_each(|v| *v = apply(t, *v));
        d
    })
}

/// Next point to evaluate, as a full vector in the original domain.
/// `model` must have been fitted on [`model_design`].
pub fn propose(model: &KrigingModel, record: &OptimizationRecord, cfg: &OptimizerConfig, iteration: usize) -> Vec<f64> {
    let layout = &record.layout;
    let k = layout.free.len();
    let seen: Vec<Vec<f64>> = record.evaluated.iter().map(|p| layout.unit(&p.x)).collect();
    let t = effective_transform(record, cfg.transform);
    let best = record.final_best().map_or(f64::INFINITY, |b| apply(t, b));
    let mut rng = stochastic::stream(cfg.seed, Purpose::Infill, iteration as u64, 0);
    let search = cfg.infill_search;
    let crit = |u: &[f64]| criterion(model, cfg.infill, u, best);

    let mut cands: Vec<(Vec<f64>, f64)> = (0..search.random.max(1))
        .map(|_| {
            let u: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let v = crit(&u);
            (u, v)
        })
        .collect();
    // include the incumbent so exploitation can start from it
    if let Some(bp) = record.best_point() {
        let u = layout.unit(&bp.x);
        let v = crit(&u);
        cands.push((u, v));
    }
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].1.total_cmp(&cands[a].1).then(a.cmp(&b)));
    let refined: Vec<(Vec<f64>, f64)> = order
        .iter()
        .take(search.refine)
        .map(|&i| pattern_search(&crit, cands[i].0.clone(), search.steps))
        .collect();
    let mut pool = cands;
    pool.extend(refined);

    let flat = pool.iter().all(|(_, v)| *v <= 0.0) && cfg.infill == Infill::ExpectedImprovement;
    let mut choice = if flat {
        // no expected gain anywhere: fill the largest gap instead
        pool.iter()
            .map(|(u, _)| (u, min_distance(u, &seen)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(u, _)| u.clone())
            .expect("nonempty pool")
    } else {
        pool.iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(_, (u, _))| u.clone())
            .expect("nonempty pool")
    };
    let mut tries = 0;
    while min_distance(&choice, &seen) < MIN_DISTANCE && tries < 100 {
        for v in choice.iter_mut() {
            *v = (*v + 1e-6 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0);
        }
        tries += 1;
    }
    layout.from_unit(&choice)
}

pub fn run<O: Objective + ?Sized>(obj: &O, domain: &Domain, cfg: &OptimizerConfig) -> Result<OptimizationRecord> {
    let layout = check_config(obj, domain, cfg)?;
    let mut record = OptimizationRecord::new("smbo", cfg, layout);

    let t = Instant::now();
    let design = initial_design(domain, cfg)?;
    let points: Vec<EvaluatedPoint> = design
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| evaluate_point(obj, x, i, Phase::Initial))
        .collect();
    for p in points {
        record.push(p);
    }
    record.timings.initial = t.elapsed().as_secs_f64();

    let mut iteration = 0;
    while record.evaluated.len() < cfg.total_budget {
        let t = Instant::now();
        let model = model_design(&record, cfg).and_then(|d| {
            let seed = stochastic::child_seed(cfg.seed, Purpose::KrigingFit, iteration as u64, 0);
            fit_kriging(&d, &cfg.kriging, seed).ok()
        });
        record.timings.modeling += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let x = match &model {
            Some(m) => propose(m, &record, cfg, iteration),
            None => {
                // nothing usable to model yet: sample uniformly
                let mut rng = stochastic::stream(cfg.seed, Purpose::Infill, iteration as u64, 1);
                let u: Vec<f64> = (0..record.layout.free.len()).map(|_| rng.random::<f64>()).collect();
                record.layout.from_unit(&u)
            }
        };
        record.timings.infill += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let index = record.evaluated.len();
        record.push(evaluate_point(obj, x, index, Phase::Infill));
        record.timings.evaluation += t.elapsed().as_secs_f64();
        iteration += 1;
    }
    Ok(record)
}

/// Uniform random search with the same budget, evaluation streams and
/// bookkeeping as [`run`].
pub fn random_search_baseline<O: Objective + ?Sized>(
    obj: &O,
    domain: &Domain,
    cfg: &OptimizerConfig,
) -> Result<OptimizationRecord> {
    let layout = check_config(obj, domain, cfg)?;
    let mut record = OptimizationRecord::new("random", cfg, layout);
    let t = Instant::now();
    let mut rng = stochastic::stream(cfg.seed, Purpose::Optimizer, 0, 0);
    let xs: Vec<Vec<f64>> = (0..cfg.total_budget)
        .map(|_| {
            let u: Vec<f64> = (0..record.layout.free.len()).map(|_| rng.random::<f64>()).collect();
            record.layout.from_unit(&u)
        })
        .collect();
    let points: Vec<EvaluatedPoint> = xs
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| evaluate_point(obj, x, i, Phase::Random))
        .collect();
    for p in points {
        record.push(p);
    }
    record.timings.evaluation = t.elapsed().as_secs_f64();
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::FnObjective;
    use crate::params::canonical_space;

    fn sphere(c: Vec<f64>) -> impl Fn(&[f64]) -> f64 + Sync {
        move |x: &[f64]| x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn cfg(budget: usize, init: usize, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            total_budget: budget,
            init_size: Some(init),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn fix_excluded_examples() {
        let d = Domain::new(vec![0.0, 0.0, 0.0, 0.0, 3.0], vec![1.0, 1.0, 1.0, 1.0, 9.0]).unwrap();
        assert!(fix_excluded(&d, &BTreeSet::new()).unwrap().is_empty());
        assert_eq!(fix_excluded(&d, &BTreeSet::from([5])).unwrap(), vec![(5, 6.0)]);
        let all: BTreeSet<usize> = (1..=5).collect();
        assert_eq!(
            fix_excluded(&d, &all).unwrap_err().to_string(),
            "config: mask leaves no free dimensions"
        );
        assert!(fix_excluded(&d, &BTreeSet::from([6])).is_err());
    }

    #[test]
    fn initial_design_canonical() {
        let space = canonical_space();
        let domain = Domain::from_space(&space);
        let c = cfg(20, 10, 3);
        let rows = initial_design(&domain, &c).unwrap();
        assert_eq!(rows.len(), 10);
        for r in &rows {
            assert!(space
                .validate_vector(
                    &crate::params::canonical_graph(),
                    &crate::params::ParamVector(r.clone())
                )
                .is_empty());
        }
        let mut masked = c.clone();
        masked.mask = BTreeSet::from([13]);
        let rows = initial_design(&domain, &masked).unwrap();
        let mid = domain.midpoint(13);
        assert!(rows.iter().all(|r| r[12] == mid));
        // one point per stratum on every free dimension
        for i in (0..29).filter(|&i| i != 12) {
            let (lo, hi) = (domain.lower[i], domain.upper[i]);
            let mut strata: Vec<usize> = rows
                .iter()
                .map(|r| (((r[i] - lo) / (hi - lo) * 10.0).floor() as usize).min(9))
                .collect();
            strata.sort();
            assert_eq!(strata, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn default_init_size() {
        let c = OptimizerConfig::default();
        assert_eq!(c.init_size_for(29), 60);
        assert_eq!(c.init_size_for(5), 12);
    }

    #[test]
    fn budget_equal_to_design() {
        let f = FnObjective::new(3, sphere(vec![0.2; 3]));
        let d = Domain::cube(3, 0.0, 1.0);
        let rec = run(&f, &d, &cfg(8, 8, 1)).unwrap();
        assert_eq!(rec.evaluated.len(), 8);
        assert!(rec.evaluated.iter().all(|p| p.phase == Phase::Initial));
        assert_eq!(rec.final_best(), rec.initial_best());
    }

    #[test]
    fn log_transform_falls_back_on_nonpositive_scores() {
        let f = FnObjective::new(2, sphere(vec![0.3, 0.7]));
        let d = Domain::cube(2, 0.0, 1.0);
        let c = cfg(6, 6, 4);
        let rec = run(&f, &d, &c).unwrap();
        let raw = rec.design().unwrap();
        let logged = model_design(&rec, &c).unwrap();
        for (a, b) in raw.y.iter().zip(&logged.y) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
        let mut zero = rec.clone();
        zero.evaluated[0].result.as_mut().unwrap().mean_score = 0.0;
        let d0 = model_design(&zero, &c).unwrap();
        assert_eq!(d0.y, zero.design().unwrap().y);
        let ident = OptimizerConfig {
            transform: Transform::Identity,
            ..c
        };
        assert_eq!(model_design(&rec, &ident).unwrap().y, raw.y);
    }

    #[test]
    fn init_larger_than_budget_rejected() {
        let f = FnObjective::new(3, sphere(vec![0.2; 3]));
        assert!(run(&f, &Domain::cube(3, 0.0, 1.0), &cfg(5, 8, 1)).is_err());
    }

    #[test]
    fn sphere_improves_on_design() {
        let c = vec![1.0, -2.0, 0.5, 3.0, -1.0];
        let f = FnObjective::new(5, sphere(c));
        let d = Domain::cube(5, -5.0, 5.0);
        let mut ratios = Vec::new();
        for seed in 0..5 {
            let rec = run(&f, &d, &cfg(60, 20, seed)).unwrap();
            assert_eq!(rec.evaluated.len(), 60);
            assert!(rec.best_trajectory.windows(2).all(|w| w[1].unwrap() <= w[0].unwrap()));
            ratios.push(rec.final_best().unwrap() / rec.initial_best().unwrap());
        }
        let med = crate::stats::median(&ratios);
        assert!(med <= 0.2, "median ratio {med}");
    }

    #[test]
    fn masked_dims_constant_and_deterministic() {
        let f = FnObjective::new(4, sphere(vec![0.1, 0.9, 0.5, 0.3])).with_noise(0.01, 2, 5);
        let d = Domain::cube(4, 0.0, 1.0);
        let mut c = cfg(16, 8, 2);
        c.mask = BTreeSet::from([2, 4]);
        let a = run(&f, &d, &c).unwrap();
        let b = run(&f, &d, &c).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for p in &a.evaluated {
            assert_eq!(p.x[1], 0.5);
            assert_eq!(p.x[3], 0.5);
        }
    }

    #[test]
    fn failures_are_recorded_and_consume_budget() {
        struct Flaky;
        impl Objective for Flaky {
            fn dim(&self) -> usize {
                2
            }
            fn evaluate(&self, x: &[f64], stream: u64) -> Result<EvaluationResult> {
                if stream % 3 == 0 {
                    return Err(Error::Simulation("boom".into()));
                }
                Ok(EvaluationResult::from_scores(vec![x[0] + x[1]], stream))
            }
        }
        let rec = run(&Flaky, &Domain::cube(2, 0.0, 1.0), &cfg(12, 6, 0)).unwrap();
        assert_eq!(rec.evaluated.len(), 12);
        assert_eq!(rec.evaluated.iter().filter(|p| p.error.is_some()).count(), 4);
        assert!(rec.final_best().is_some());
    }

    #[test]
    fn predicted_value_finds_bowl_minimum() {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] - 0.3).powi(2)).collect();
        let model = fit_kriging(
            &Design::new(xs.clone(), ys.clone()).unwrap(),
            &KrigingConfig::default(),
            0,
        )
        .unwrap();
        let domain = Domain::cube(1, 0.0, 1.0);
        let mut c = cfg(20, 12, 0);
        c.infill = Infill::PredictedValue;
        let mut rec = OptimizationRecord::new("smbo", &c, Layout::new(&domain, &c.mask).unwrap());
        for (i, (x, y)) in xs.into_iter().zip(ys).enumerate() {
            rec.push(EvaluatedPoint {
                index: i,
                phase: Phase::Initial,
                x,
                result: Some(EvaluationResult::from_scores(vec![y], 0)),
                error: None,
            });
        }
        let x = propose(&model, &rec, &c, 0);
        assert!((x[0] - 0.3).abs() < 0.05, "{x:?}");
    }

    #[test]
    fn flat_model_still_proposes_new_point() {
        let xs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 / 3.0, 0.5]).collect();
        let model = fit_kriging(
            &Design::new(xs.clone(), vec![1.0; 4]).unwrap(),
            &KrigingConfig::default(),
            0,
        )
        .unwrap();
        assert!(model.degenerate);
        let domain = Domain::cube(2, 0.0, 1.0);
        let c = cfg(10, 4, 0);
        let mut rec = OptimizationRecord::new("smbo", &c, Layout::new(&domain, &c.mask).unwrap());
        for (i, x) in xs.into_iter().enumerate() {
            rec.push(EvaluatedPoint {
                index: i,
                phase: Phase::Initial,
                x,
                result: Some(EvaluationResult::from_scores(vec![1.0], 0)),
                error: None,
            });
        }
        let x = propose(&model, &rec, &c, 0);
        assert!(domain.contains(&x));
        assert!(rec
            .evaluated
            .iter()
            .all(|p| min_distance(&p.x, &[x.clone()]) > MIN_DISTANCE));
    }

    #[test]
    fn random_baseline_reproducible_and_in_bounds() {
        let f = FnObjective::new(5, sphere(vec![0.0; 5]));
        let d = Domain::cube(5, -5.0, 5.0);
        let a = random_search_baseline(&f, &d, &cfg(30, 10, 4)).unwrap();
        let b = random_search_baseline(&f, &d, &cfg(30, 10, 4)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.evaluated.len(), 30);
        assert!(a.evaluated.iter().all(|p| d.contains(&p.x)));
    }

    #[test]
    fn csv_has_one_row_per_evaluation() {
        let f = FnObjective::new(2, sphere(vec![0.0; 2]));
        let rec = random_search_baseline(&f, &Domain::cube(2, -1.0, 1.0), &cfg(5, 2, 0)).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("iteration,phase,x1,x2,mean_score,best_so_far"));
    }
}
