//! Surrogate-based sensitivity analysis: rank-aggregated importance across
//! model families, one-at-a-time delta-error study, two-parameter response
//! grids and the parameter-removal experiment.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::objective::Objective;
use crate::params::{perturb_bounded, ParamVector};
use crate::smbo::{self, Domain, OptimizerConfig};
use crate::stats::{self, Alternative, WilcoxonResult};
use crate::stochastic::{self, Purpose};
use crate::surrogate::{rank_parameters, Design, Surrogate, SurrogateArtifact, SurrogateConfig, SurrogateKind};
use crate::{Error, Result};

/// How positions map to scores: the most important of `d` parameters
/// scores `d`, the least important scores 1.
pub const ORIENTATION: &str = "most-important-scores-d";

/// Per-run position scores `O_i` for one model family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub model: SurrogateKind,
    pub d: usize,
    /// `runs[r][i]` is `O` of input `i` in run `r`.
    pub runs: Vec<Vec<f64>>,
}

/// `O_i` from raw importance scores. Exactly tied scores share the mean of
/// the positions they occupy, so a run without signal favours nobody.
pub fn position_scores(scores: &[f64]) -> Vec<f64> {
    let d = scores.len();
    let order = rank_parameters(scores);
    let mut o = vec![0.0; d];
    let mut p = 0;
    while p < d {
        let s = scores[order[p] - 1];
        let mut q = p;
        while q + 1 < d && scores[order[q + 1] - 1] == s {
            q += 1;
        }
        // positions p..=q (0-based) score d-p .. d-q
        let avg = d as f64 - (p + q) as f64 / 2.0;
        for &i in &order[p..=q] {
            o[i - 1] = avg;
        }
        p = q + 1;
    }
    o
}

impl RankTable {
    pub fn new(model: SurrogateKind, d: usize) -> Self {
        RankTable {
            model,
            d,
            runs: Vec::new(),
        }
    }

    pub fn push_scores(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.d {
            return Err(Error::Model(format!(
                "expected {} importance scores, got {}",
                self.d,
                scores.len()
            )));
        }
        self.runs.push(position_scores(scores));
        Ok(())
    }

    /// Adds a run given as a 1-based ordering from most to least important.
    pub fn push_order(&mut self, order: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.d];
        if order.len() != self.d {
            return Err(Error::Model("ordering has the wrong length".into()));
        }
        let mut o = vec![0.0; self.d];
        for (pos, &i) in order.iter().enumerate() {
            if i == 0 || i > self.d || seen[i - 1] {
                return Err(Error::Model(format!("ordering is not a permutation of 1..={}", self.d)));
            }
            seen[i - 1] = true;
            o[i - 1] = (self.d - pos) as f64;
        }
        self.runs.push(o);
        Ok(())
    }
}

/// Normalized importance index `P*_i = Σ_runs O_i / (n·d)`.
pub fn importance_index(table: &RankTable) -> Result<Vec<f64>> {
    let n = table.runs.len();
    let d = table.d;
    if n == 0 || d == 0 {
        return Err(Error::Model("importance index needs at least one run".into()));
    }
    let mut p = vec![0.0; d];
    for run in &table.runs {
        for (acc, o) in p.iter_mut().zip(run) {
            *acc += o;
        }
    }
    Ok(p.into_iter().map(|s| s / (n * d) as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelImportance {
    pub model: SurrogateKind,
    pub requested: usize,
    /// Runs that produced a model.
    pub n: usize,
    pub failures: Vec<String>,
    pub p_star: Vec<f64>,
    pub table: RankTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub orientation: String,
    pub d: usize,
    /// Parameter index of each model input (1-based).
    pub inputs: Vec<usize>,
    pub seed: u64,
    pub models: Vec<ModelImportance>,
}

impl ImportanceReport {
    pub fn get(&self, kind: SurrogateKind) -> Option<&ModelImportance> {
        self.models.iter().find(|m| m.model == kind)
    }

    /// 1-based input positions ordered by decreasing `P*` for one family.
    pub fn order(&self, kind: SurrogateKind) -> Option<Vec<usize>> {
        self.get(kind).map(|m| rank_parameters(&m.p_star))
    }

    /// One row per parameter with a `P*` column per model family.
    pub fn write_csv<W: Write>(&self, mut out: W, names: Option<&[String]>) -> Result<()> {
        let mut head = vec!["index".to_string()];
        if names.is_some() {
            head.push("name".into());
        }
        head.extend(self.models.iter().map(|m| m.model.to_string()));
        writeln!(out, "{}", head.join(","))?;
        for (k, &idx) in self.inputs.iter().enumerate() {
            let mut row = vec![idx.to_string()];
            if let Some(n) = names {
                row.push(n[k].clone());
            }
            row.extend(self.models.iter().map(|m| m.p_star[k].to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn kind_code(k: SurrogateKind) -> u64 {
    match k {
        SurrogateKind::Kriging => 1,
        SurrogateKind::Linear => 2,
        SurrogateKind::Forest => 3,
    }
}

/// Fits `n` seeded models of each family on `design` and aggregates their
/// importance rankings. `inputs` labels the design columns.
pub fn run_importance_study(
    design: &Design,
    inputs: &[usize],
    n: usize,
    kinds: &[SurrogateKind],
    cfg: &SurrogateConfig,
    seed: u64,
) -> Result<ImportanceReport> {
    design.check()?;
    let d = design.dim();
    if inputs.len() != d {
        return Err(Error::Config(format!(
            "{} input labels for {d} design columns",
            inputs.len()
        )));
    }
    if n == 0 {
        return Err(Error::Config("importance study needs at least one repeat".into()));
    }
    let mut models = Vec::new();
    for &kind in kinds {
        let fits: Vec<Result<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|r| {
                let s = stochastic::child_seed(seed, Purpose::Study, kind_code(kind), r as u64);
                Surrogate::fit(kind, design, cfg, s).map(|m| m.importance())
            })
            .collect();
        let mut table = RankTable::new(kind, d);
        let mut failures = Vec::new();
        for (r, f) in fits.into_iter().enumerate() {
            match f {
                Ok(scores) => table.push_scores(&scores)?,
                Err(e) => failures.push(format!("run {r}: {e}")),
            }
        }
        let p_star = if table.runs.is_empty() {
            vec![f64::NAN; d]
        } else {
            importance_index(&table)?
        };
        models.push(ModelImportance {
            model: kind,
            requested: n,
            n: table.runs.len(),
            failures,
            p_star,
            table,
        });
    }
    Ok(ImportanceReport {
        orientation: ORIENTATION.into(),
        d,
        inputs: inputs.to_vec(),
        seed,
        models,
    })
}

/// `|E_μ − E_μi| / E_μ · 100`.
pub fn delta_error(base: f64, perturbed: f64) -> f64 {
    (base - perturbed).abs() / base * 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDelta {
    pub index: usize,
    /// One value per (used configuration, direction), `+delta` first.
    pub values: Vec<f64>,
    pub mean: f64,
    /// How many perturbations hit a bound and were clamped.
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaErrorReport {
    pub delta: f64,
    pub replicates: usize,
    pub seed: u64,
    pub configs: usize,
    /// Configurations skipped because their baseline error was zero.
    pub skipped: Vec<usize>,
    pub baseline: Vec<f64>,
    pub parameters: Vec<ParameterDelta>,
    /// Delta-error of an unperturbed re-evaluation, paired with `values`.
    pub noise: Vec<f64>,
    pub noise_mean: f64,
}

impl DeltaErrorReport {
    pub fn get(&self, index: usize) -> Option<&ParameterDelta> {
        self.parameters.iter().find(|p| p.index == index)
    }

    /// Paired signed-rank test of a parameter's delta-errors against the
    /// re-evaluation noise.
    pub fn versus_noise(&self, index: usize, alt: Alternative) -> Result<WilcoxonResult> {
        let p = self
            .get(index)
            .ok_or_else(|| Error::Model(format!("parameter {index} not in the study")))?;
        stats::wilcoxon_signed_rank(&p.values, &self.noise, alt)
    }

    /// `index,mean,values...` rows plus a `noise` row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let width = self.noise.len();
        let mut head = vec!["parameter".to_string(), "mean".to_string()];
        head.extend((0..width).map(|k| format!("d{k}")));
        writeln!(out, "{}", head.join(","))?;
        let row = |label: String, mean: f64, v: &[f64]| {
            let mut r = vec![label, mean.to_string()];
            r.extend(v.iter().map(|x| x.to_string()));
            r.join(",")
        };
        for p in &self.parameters {
            writeln!(out, "{}", row(format!("x{}", p.index), p.mean, &p.values))?;
        }
        writeln!(out, "{}", row("noise".into(), self.noise_mean, &self.noise))?;
        Ok(())
    }
}

const REEVAL: u64 = 1 << 20;

/// Perturbs each listed parameter by `±delta` (relative, clamped to the
/// domain) around every configuration. Baseline, perturbed runs and the
/// noise reference all draw fresh evaluation streams.
pub fn delta_error_study<O: Objective + ?Sized>(
    obj: &O,
    domain: &Domain,
    configs: &[Vec<f64>],
    params: &[usize],
    delta: f64,
    seed: u64,
) -> Result<DeltaErrorReport> {
    if configs.is_empty() {
        return Err(Error::Config("delta study needs at least one configuration".into()));
    }
    if !(delta >= 0.0 && delta < 1.0) {
        return Err(Error::Config("delta must lie in [0, 1)".into()));
    }
    if let Some(&bad) = params.iter().find(|&&i| i == 0 || i > domain.dim()) {
        return Err(Error::Config(format!("parameter {bad} outside 1..={}", domain.dim())));
    }
    if configs.iter().any(|c| !domain.contains(c)) {
        return Err(Error::Config("delta study configuration outside the domain".into()));
    }
    let stream = |c: usize, code: u64| stochastic::child_seed(seed, Purpose::Study, c as u64, code);
    let dirs = [delta, -delta];

    struct PerConfig {
        base: f64,
        replicates: usize,
        noise: [f64; 2],
        values: Vec<[(f64, bool); 2]>,
    }
    let per: Vec<Result<PerConfig>> = configs
        .par_iter()
        .enumerate()
        .map(|(c, x)| {
            let base_res = obj.evaluate(x, stream(c, 0))?;
            let base = base_res.mean_score;
            let mut noise = [0.0; 2];
            for (k, n) in noise.iter_mut().enumerate() {
                let e = obj.evaluate(x, stream(c, REEVAL + k as u64))?.mean_score;
                *n = if base > 0.0 { delta_error(base, e) } else { f64::NAN };
            }
            let xv = ParamVector(x.clone());
            let mut values = Vec::with_capacity(params.len());
            for &i in params {
                let mut pair = [(0.0, false); 2];
                for (k, &f) in dirs.iter().enumerate() {
                    let p = perturb_bounded(&xv, i, f, domain.lower[i - 1], domain.upper[i - 1]);
                    let e = obj.evaluate(&p.vector, stream(c, 2 * i as u64 + k as u64))?.mean_score;
                    pair[k] = (if base > 0.0 { delta_error(base, e) } else { f64::NAN }, p.clamped);
                }
                values.push(pair);
            }
            Ok(PerConfig {
                base,
                replicates: base_res.replicates,
                noise,
                values,
            })
        })
        .collect();
    let per: Vec<PerConfig> = per.into_iter().collect::<Result<_>>()?;

    let mut skipped = Vec::new();
    let mut noise = Vec::new();
    let mut parameters: Vec<ParameterDelta> = params
        .iter()
        .map(|&index| ParameterDelta {
            index,
            values: Vec::new(),
            mean: 0.0,
            clamped: 0,
        })
        .collect();
    for (c, pc) in per.iter().enumerate() {
        if !(pc.base > 0.0) {
            skipped.push(c);
            continue;
        }
        noise.extend(pc.noise);
        for (pd, pair) in parameters.iter_mut().zip(&pc.values) {
            for &(v, clamped) in pair {
                pd.values.push(v);
                pd.clamped += clamped as usize;
            }
        }
    }
    if noise.is_empty() {
        return Err(Error::Model("every configuration had zero baseline error".into()));
    }
    for pd in parameters.iter_mut() {
        pd.mean = stats::mean(&pd.values);
    }
    Ok(DeltaErrorReport {
        delta,
        replicates: per[0].replicates,
        seed,
        configs: configs.len(),
        skipped,
        baseline: per.iter().map(|p| p.base).collect(),
        parameters,
        noise_mean: stats::mean(&noise),
        noise,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub i: usize,
    pub j: usize,
    pub xi: Vec<f64>,
    pub xj: Vec<f64>,
    /// `values[a][b]` is the prediction at `(xi[a], xj[b])`.
    pub values: Vec<Vec<f64>>,
}

impl Grid {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x{},x{},response", self.i, self.j)?;
        for (a, vi) in self.xi.iter().enumerate() {
            for (b, vj) in self.xj.iter().enumerate() {
                writeln!(out, "{vi},{vj},{}", self.values[a][b])?;
            }
        }
        Ok(())
    }
}

fn axis(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect()
}

/// Surrogate response over the bounds of parameters `i` and `j` with every
/// other input taken from `base` (a full parameter vector).
pub fn parameter_grid(art: &SurrogateArtifact, i: usize, j: usize, base: &[f64], m: usize) -> Result<Grid> {
    if i == j {
        return Err(Error::Config("grid needs two distinct parameters".into()));
    }
    if m == 0 {
        return Err(Error::Config("grid resolution must be at least 1".into()));
    }
    let pos = |p: usize| {
        art.inputs
            .iter()
            .position(|&q| q == p)
            .ok_or_else(|| Error::Config(format!("parameter {p} is not a model input")))
    };
    let (pi, pj) = (pos(i)?, pos(j)?);
    if art.inputs.iter().any(|&q| q == 0 || q > base.len()) {
        return Err(Error::Config("base vector shorter than the model inputs".into()));
    }
    let xi = axis(art.lower[pi], art.upper[pi], m);
    let xj = axis(art.lower[pj], art.upper[pj], m);
    let raw: Vec<f64> = art.inputs.iter().map(|&q| base[q - 1]).collect();
    let values = xi
        .iter()
        .map(|&a| {
            xj.iter()
                .map(|&b| {
                    let mut r = raw.clone();
                    r[pi] = a;
                    r[pj] = b;
                    art.model
                        .predict(&crate::surrogate::normalize(&r, &art.lower, &art.upper))
                })
                .collect()
        })
        .collect();
    Ok(Grid { i, j, xi, xj, values })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalRow {
    pub excluded: Vec<usize>,
    pub seeds: Vec<u64>,
    pub final_best: Vec<Option<f64>>,
    pub median: f64,
    /// One-sided test that this set ends worse than the first set.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub worse_than_baseline: Option<WilcoxonResult>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub rows: Vec<RemovalRow>,
}

impl RemovalReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "excluded,size,repeat,seed,final_best")?;
        for r in &self.rows {
            let ex = r.excluded.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
            for (k, (s, b)) in r.seeds.iter().zip(&r.final_best).enumerate() {
                let b = b.map_or(String::new(), |v| v.to_string());
                writeln!(out, "{ex},{},{k},{s},{b}", r.excluded.len())?;
            }
        }
        Ok(())
    }
}

/// Runs SMBO with each exclusion set as mask, `repeats` times per set. Repeat
/// `r` uses the same optimizer seed for every set, so rows are paired.
pub fn removal_experiment<O: Objective + ?Sized>(
    obj: &O,
    domain: &Domain,
    sets: &[BTreeSet<usize>],
    cfg: &OptimizerConfig,
    repeats: usize,
) -> Result<RemovalReport> {
    if sets.is_empty() || repeats == 0 {
        return Err(Error::Config("removal experiment needs sets and repeats".into()));
    }
    for w in sets.windows(2) {
        if !(w[0].is_subset(&w[1]) && w[0].len() < w[1].len()) {
            return Err(Error::Config(
                "exclusion sets must be nested and strictly increasing".into(),
            ));
        }
    }
    let seeds: Vec<u64> = (0..repeats)
        .map(|r| stochastic::child_seed(cfg.seed, Purpose::Study, 0, r as u64))
        .collect();
    let mut rows: Vec<RemovalRow> = Vec::new();
    for set in sets {
        let t = std::time::Instant::now();
        let bests: Vec<Option<f64>> = seeds
            .iter()
            .map(|&s| {
                let mut c = cfg.clone();
                c.mask = set.clone();
                c.seed = s;
                smbo::run(obj, domain, &c).map(|rec| rec.final_best())
            })
            .collect::<Result<_>>()?;
        let finite: Vec<f64> = bests.iter().flatten().copied().collect();
        let worse = rows.first().and_then(|base: &RemovalRow| {
            let pairs: Vec<(f64, f64)> = bests
                .iter()
                .zip(&base.final_best)
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .collect();
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            stats::wilcoxon_signed_rank(&a, &b, Alternative::Greater).ok()
        });
        rows.push(RemovalRow {
            excluded: set.iter().copied().collect(),
            seeds: seeds.clone(),
            median: stats::median(&finite),
            final_best: bests,
            worse_than_baseline: worse,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    Ok(RemovalReport { rows })
}
