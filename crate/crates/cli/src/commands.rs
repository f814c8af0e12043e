//! Subcommand implementations.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bedflow::data::{self, ArrivalSpec, ScenarioManifest, DATE_FORMAT};
use bedflow::objective::{HospitalObjective, Objective};
use bedflow::params::{canonical_graph, ParamSpace, ParamVector};
use bedflow::sensa::{self, ImportanceReport};
use bedflow::sim::Simulator;
use bedflow::smbo::{self, Domain, InfillSearch, OptimizationRecord, OptimizerConfig, Phase};
use bedflow::stochastic::{self, Purpose};
use bedflow::surrogate::{
    fit_kriging, Design, KrigingConfig, Surrogate, SurrogateArtifact, SurrogateConfig, ARTIFACT_VERSION,
};
use bedflow::{Error, Result};
use serde::Serialize;

use crate::config::{self, GridBase, Loaded, XSource};
use crate::output::{read_json, Writer, TOOL, VERSION};

pub const RECORD_KIND: &str = "optimization-record";

/// Everything a command needs once the config has been loaded and the
/// command-line overrides applied.
pub struct Context {
    pub loaded: Loaded,
    pub space: ParamSpace,
    pub out: PathBuf,
    /// Files read by this command besides the config, hashed into the stamp.
    pub inputs: Vec<PathBuf>,
}

impl Context {
    pub fn new(loaded: Loaded, out: Option<PathBuf>) -> Result<Self> {
        let space = loaded.space()?;
        let out = out.unwrap_or_else(|| loaded.resolve(&loaded.config.out));
        let manifest = loaded.manifest_path();
        if !manifest.is_file() {
            return Err(Error::Config(format!(
                "scenario manifest {} does not exist",
                manifest.display()
            )));
        }
        Ok(Context {
            inputs: loaded.inputs(),
            loaded,
            space,
            out,
        })
    }

    fn cfg(&self) -> &config::RunConfig {
        &self.loaded.config
    }

    fn seed(&self) -> u64 {
        self.cfg().seed
    }

    /// Stamp hash over the effective config and every input file's bytes,
    /// including the data files named by the manifest.
    pub fn hash(&self) -> String {
        let mut files = self.inputs.clone();
        if let Ok(text) = std::fs::read_to_string(self.loaded.manifest_path()) {
            if let Ok(m) = ScenarioManifest::from_toml(&text) {
                let base = self
                    .loaded
                    .manifest_path()
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_default();
                files.push(base.join(&m.cases));
                files.push(base.join(&m.field));
            }
        }
        let blobs: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| {
                let name = p
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                (name, std::fs::read(p).unwrap_or_default())
            })
            .collect();
        let refs: Vec<(&str, &[u8])> = blobs.iter().map(|(n, b)| (n.as_str(), b.as_slice())).collect();
        config::config_hash(self.cfg(), &refs)
    }

    fn writer(&self) -> Result<Writer> {
        Writer::new(self.out.clone(), self.seed(), self.hash())
    }

    fn scenario(&self) -> Result<data::LoadedScenario> {
        let loaded = ScenarioManifest::load(&self.loaded.manifest_path())?;
        for w in &loaded.warnings {
            eprintln!("warning {w}");
        }
        Ok(loaded)
    }

    fn simulator(&self) -> Simulator {
        Simulator::new(self.space.clone(), canonical_graph())
    }

    fn objective(&self, replicates: usize) -> Result<HospitalObjective> {
        let scenario = self.scenario()?.scenario;
        Ok(HospitalObjective::new(
            self.simulator(),
            scenario,
            self.cfg().weights,
            replicates,
            self.seed(),
        ))
    }

    fn domain(&self) -> Domain {
        Domain::from_space(&self.space)
    }

    fn check_vector(&self, x: &ParamVector, what: &str) -> Result<()> {
        let v = self.space.validate_vector(&canonical_graph(), x);
        if v.is_empty() {
            return Ok(());
        }
        let list = v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        Err(Error::Config(format!("{what}: {list}")))
    }

    fn optimizer_config(&self) -> OptimizerConfig {
        let o = &self.cfg().optimize;
        OptimizerConfig {
            total_budget: o.budget,
            init_size: o.init,
            infill: o.infill,
            transform: o.transform,
            mask: o.exclude.iter().copied().collect(),
            infill_search: InfillSearch {
                random: o.candidates,
                refine: o.refine,
                steps: o.steps,
            },
            kriging: KrigingConfig {
                restarts: o.restarts,
                ..KrigingConfig::default()
            },
            seed: self.seed(),
        }
    }

    fn names(&self, inputs: &[usize]) -> Vec<String> {
        inputs.iter().map(|&i| self.space.entry(i).name.clone()).collect()
    }
}

fn timing(phase: &str, t: Instant) {
    eprintln!("timing phase={phase} seconds={:.3}", t.elapsed().as_secs_f64());
}

fn done(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn read_record(path: &Path) -> Result<OptimizationRecord> {
    Ok(read_json::<OptimizationRecord>(path, RECORD_KIND)?.data)
}

fn best_of(path: &Path) -> Result<ParamVector> {
    let rec = read_record(path)?;
    let p = rec
        .best_point()
        .ok_or_else(|| Error::Config(format!("{} has no successful evaluation", path.display())))?;
    Ok(ParamVector(p.x.clone()))
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct ScoreReport {
    names: Vec<String>,
    x: ParamVector,
    trace_seed: u64,
    evaluation: bedflow::objective::EvaluationResult,
}

pub fn simulate(mut ctx: Context) -> Result<()> {
    let s = ctx.cfg().simulate.clone();
    let x = match s.source {
        XSource::Defaults => ctx.space.defaults(),
        XSource::File => {
            let p = s
                .params
                .as_ref()
                .ok_or_else(|| Error::Config("simulate.source = \"file\" needs simulate.params".into()))?;
            let p = ctx.loaded.resolve(p);
            ctx.inputs.push(p.clone());
            config::read_params(&ctx.space, &p)?
        }
        XSource::RecordBest => {
            let p = s
                .record
                .clone()
                .map(|r| ctx.loaded.resolve(&r))
                .unwrap_or_else(|| ctx.out.join("optimize.json"));
            ctx.inputs.push(p.clone());
            best_of(&p)?
        }
    };
    ctx.check_vector(&x, "parameter vector")?;
    let t = Instant::now();
    let obj = ctx.objective(s.replicates)?;
    let eval_seed = obj.eval_seed(0);
    let evaluation = bedflow::objective::evaluate(&obj.sim, &x, &obj.scenario, &obj.weights, s.replicates, eval_seed)?;
    // the trace shown is replicate 0 of the evaluation
    let trace_seed = stochastic::child_seed(eval_seed, Purpose::Replicate, 0, 0);
    let trace = obj.sim.simulate(&obj.scenario.arrivals, &x, trace_seed)?;
    timing("simulate", t);

    let w = ctx.writer()?;
    let sc = &obj.scenario;
    let path = w.csv("trace.csv", |buf| {
        writeln!(buf, "day,date,bed,icu,vent,field_bed,field_icu,field_vent")?;
        for t in sc.eval_window.0..=sc.eval_window.1 {
            let d = trace.days[t];
            let f = sc.field.get(t).unwrap_or_default();
            writeln!(
                buf,
                "{t},{},{},{},{},{},{},{}",
                sc.date_of(t).format(DATE_FORMAT),
                d.bed,
                d.icu,
                d.vent,
                f.bed,
                f.icu,
                f.vent
            )?;
        }
        Ok(())
    })?;
    done(&path);
    let report = ScoreReport {
        names: ctx.names(&(1..=ctx.space.dim()).collect::<Vec<_>>()),
        x,
        trace_seed,
        evaluation,
    };
    done(&w.json("score.json", "score", &report)?);
    println!("mean_score={}", report.evaluation.mean_score);
    Ok(())
}

// ---------------------------------------------------------------- optimize

pub fn optimize(ctx: Context, baseline: bool) -> Result<()> {
    let cfg = ctx.optimizer_config();
    let obj = ctx.objective(ctx.cfg().optimize.replicates)?;
    let domain = ctx.domain();
    let w = ctx.writer()?;

    let t = Instant::now();
    let rec = smbo::run(&obj, &domain, &cfg)?;
    timing("optimize", t);
    let tm = rec.timings;
    eprintln!(
        "timing phase=initial seconds={:.3}\ntiming phase=modeling seconds={:.3}\ntiming phase=infill seconds={:.3}\ntiming phase=evaluation seconds={:.3}",
        tm.initial, tm.modeling, tm.infill, tm.evaluation
    );
    done(&w.json("optimize.json", RECORD_KIND, &rec)?);
    done(&w.csv("optimize.csv", |b| rec.write_csv(b))?);
    println!("smbo final_best={}", fmt_opt(rec.final_best()));

    if baseline {
        let t = Instant::now();
        let base = smbo::random_search_baseline(&obj, &domain, &cfg)?;
        timing("baseline", t);
        done(&w.json("baseline-random.json", RECORD_KIND, &base)?);
        done(&w.csv("baseline-random.csv", |b| base.write_csv(b))?);
        println!("random final_best={}", fmt_opt(base.final_best()));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |v| v.to_string())
}

// ----------------------------------------------------------------- analyze

/// A design in the unit box over `inputs`, with the raw points it came from.
struct StudyDesign {
    design: Design,
    inputs: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Full parameter vectors of the initial (space-filling) points.
    initial: Vec<Vec<f64>>,
}

fn study_design(ctx: &mut Context, record: Option<PathBuf>, size: Option<usize>) -> Result<StudyDesign> {
    let record = record.or_else(|| ctx.cfg().analyze.design.as_ref().map(|p| ctx.loaded.resolve(p)));
    if let Some(p) = record {
        ctx.inputs.push(p.clone());
        let rec = read_record(&p)?;
        let design = rec
            .design()
            .ok_or_else(|| Error::Model(format!("{} holds no usable design", p.display())))?;
        let initial = rec
            .evaluated
            .iter()
            .filter(|e| matches!(e.phase, Phase::Initial | Phase::Random))
            .map(|e| e.x.clone())
            .collect();
        return Ok(StudyDesign {
            design,
            inputs: rec.layout.free.clone(),
            lower: rec.layout.free_lower.clone(),
            upper: rec.layout.free_upper.clone(),
            initial,
        });
    }
    let domain = ctx.domain();
    let d = domain.dim();
    let n = size.or(ctx.cfg().analyze.design_size).unwrap_or(2 * d + 2);
    let cfg = OptimizerConfig {
        total_budget: n,
        init_size: Some(n),
        seed: ctx.seed(),
        ..OptimizerConfig::default()
    };
    let xs = smbo::initial_design(&domain, &cfg)?;
    let obj = ctx.objective(ctx.cfg().analyze.replicates)?;
    let t = Instant::now();
    let ys: Vec<Result<f64>> = {
        use rayon::prelude::*;
        xs.par_iter()
            .enumerate()
            .map(|(i, x)| obj.evaluate(x, i as u64).map(|r| r.mean_score))
            .collect()
    };
    timing("design", t);
    let (mut kept, mut y) = (Vec::new(), Vec::new());
    for (x, r) in xs.iter().zip(ys) {
        match r {
            Ok(v) => {
                kept.push(x.clone());
                y.push(v);
            }
            Err(e) => eprintln!("warning design point skipped: {}", config::one_line(&e.to_string())),
        }
    }
    let design = Design::normalized(&kept, y, &domain.lower, &domain.upper)?;
    Ok(StudyDesign {
        design,
        inputs: (1..=d).collect(),
        lower: domain.lower.clone(),
        upper: domain.upper.clone(),
        initial: xs,
    })
}

fn surrogate_config(ctx: &Context) -> SurrogateConfig {
    let mut c = SurrogateConfig::default();
    c.forest.trees = ctx.cfg().analyze.trees;
    c.kriging.restarts = ctx.cfg().optimize.restarts;
    c
}

pub fn importance(mut ctx: Context, design: Option<PathBuf>) -> Result<ImportanceReport> {
    let sd = study_design(&mut ctx, design, None)?;
    let a = &ctx.cfg().analyze;
    let t = Instant::now();
    let report = sensa::run_importance_study(
        &sd.design,
        &sd.inputs,
        a.repeats,
        &a.models,
        &surrogate_config(&ctx),
        ctx.seed(),
    )?;
    timing("importance", t);
    for m in &report.models {
        for f in &m.failures {
            eprintln!("warning {} {}", m.model, config::one_line(f));
        }
    }
    let w = ctx.writer()?;
    let names = ctx.names(&report.inputs);
    done(&w.json("importance.json", "importance", &report)?);
    done(&w.csv("importance.csv", |b| report.write_csv(b, Some(&names)))?);
    Ok(report)
}

pub fn delta(mut ctx: Context, design: Option<PathBuf>) -> Result<()> {
    let k = ctx.cfg().analyze.configs;
    if k == 0 {
        return Err(Error::Config("analyze.configs must be at least 1".into()));
    }
    let use_record = design.is_some() || ctx.cfg().analyze.design.is_some();
    let configs: Vec<Vec<f64>> = if use_record {
        let sd = study_design(&mut ctx, design, None)?;
        if sd.initial.len() < k {
            return Err(Error::Config(format!(
                "design holds {} initial points, {k} configurations requested",
                sd.initial.len()
            )));
        }
        sd.initial.into_iter().take(k).collect()
    } else {
        let cfg = OptimizerConfig {
            total_budget: k,
            init_size: Some(k),
            seed: ctx.seed(),
            ..OptimizerConfig::default()
        };
        smbo::initial_design(&ctx.domain(), &cfg)?
    };
    let a = ctx.cfg().analyze.clone();
    let params: Vec<usize> = if a.params.is_empty() {
        (1..=ctx.space.dim()).collect()
    } else {
        a.params.clone()
    };
    let obj = ctx.objective(a.replicates)?;
    let t = Instant::now();
    let report = sensa::delta_error_study(&obj, &ctx.domain(), &configs, &params, a.delta, ctx.seed())?;
    timing("delta", t);
    let w = ctx.writer()?;
    done(&w.json("delta.json", "delta-error", &report)?);
    done(&w.csv("delta.csv", |b| report.write_csv(b))?);
    Ok(())
}

pub fn grid(mut ctx: Context, design: Option<PathBuf>, record: Option<PathBuf>) -> Result<()> {
    let g = ctx.cfg().analyze.grid.clone();
    let base: Vec<f64> = match g.base {
        GridBase::Defaults => ctx.space.defaults().0,
        GridBase::Midpoints => ctx.space.entries().iter().map(|e| e.midpoint()).collect(),
        GridBase::RecordBest => {
            let p = record
                .or_else(|| design.clone())
                .or_else(|| ctx.cfg().analyze.design.as_ref().map(|p| ctx.loaded.resolve(p)))
                .unwrap_or_else(|| ctx.out.join("optimize.json"));
            ctx.inputs.push(p.clone());
            best_of(&p)?.0
        }
    };
    let sd = study_design(&mut ctx, design, None)?;
    let t = Instant::now();
    let seed = stochastic::child_seed(ctx.seed(), Purpose::KrigingFit, 0, 0);
    let model = fit_kriging(&sd.design, &surrogate_config(&ctx).kriging, seed)?;
    let art = SurrogateArtifact {
        version: ARTIFACT_VERSION,
        inputs: sd.inputs.clone(),
        lower: sd.lower.clone(),
        upper: sd.upper.clone(),
        model: Surrogate::Kriging(model),
    };
    let grid = sensa::parameter_grid(&art, g.i, g.j, &base, g.resolution)?;
    timing("grid", t);
    let w = ctx.writer()?;
    done(&w.json("model-kriging.json", "surrogate", &art)?);
    done(&w.csv(&format!("grid-{}-{}.csv", g.i, g.j), |b| grid.write_csv(b))?);
    Ok(())
}

pub fn removal(ctx: Context) -> Result<()> {
    let r = ctx.cfg().analyze.removal.clone();
    let mut sets: Vec<BTreeSet<usize>> = r.sets.iter().map(|s| s.iter().copied().collect()).collect();
    if sets.is_empty() {
        return Err(Error::Config("analyze.removal.sets is empty".into()));
    }
    if !sets[0].is_empty() {
        sets.insert(0, BTreeSet::new());
    }
    let mut cfg = ctx.optimizer_config();
    cfg.mask.clear();
    if let Some(b) = r.budget {
        cfg.total_budget = b;
    }
    if r.init.is_some() {
        cfg.init_size = r.init;
    }
    let obj = ctx.objective(ctx.cfg().optimize.replicates)?;
    let t = Instant::now();
    let report = sensa::removal_experiment(&obj, &ctx.domain(), &sets, &cfg, r.repeats)?;
    timing("removal", t);
    for row in &report.rows {
        eprintln!(
            "timing phase=removal-set size={} seconds={:.3}",
            row.excluded.len(),
            row.seconds
        );
    }
    let w = ctx.writer()?;
    done(&w.json("removal.json", "removal", &report)?);
    done(&w.csv("removal.csv", |b| report.write_csv(b))?);
    Ok(())
}

// ---------------------------------------------------------------- validate

pub fn validate(ctx: Context) -> Result<()> {
    println!("ok config");
    println!("ok space entries={}", ctx.space.dim());
    ctx.check_vector(&ctx.space.defaults(), "defaults")?;
    println!("ok defaults");
    let s = &ctx.cfg().simulate;
    if let Some(p) = &s.params {
        let x = config::read_params(&ctx.space, &ctx.loaded.resolve(p))?;
        ctx.check_vector(&x, "simulate.params")?;
        println!("ok params");
    }
    for &i in ctx.cfg().optimize.exclude.iter().chain(ctx.cfg().analyze.params.iter()) {
        if ctx.space.get(i).is_none() {
            return Err(Error::Config(format!(
                "parameter index {i} outside 1..={}",
                ctx.space.dim()
            )));
        }
    }
    let loaded = ScenarioManifest::load(&ctx.loaded.manifest_path())?;
    for w in &loaded.warnings {
        println!("warning {w}");
    }
    let sc = &loaded.scenario;
    println!(
        "ok scenario region={} patients={} horizon={} eval_window={}..={}",
        sc.region,
        sc.arrivals.len(),
        sc.arrivals.horizon(),
        sc.eval_window.0,
        sc.eval_window.1
    );
    println!("config_hash={}", ctx.hash());
    Ok(())
}

// ------------------------------------------------------------------- synth

pub struct SynthArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub days: usize,
    pub per_day: usize,
    pub warmup: usize,
}

/// Writes a synthetic scenario whose field data is one run at the defaults.
pub fn synth(a: &SynthArgs) -> Result<()> {
    let sim = Simulator::canonical();
    let truth = sim.space().defaults();
    let spec = ArrivalSpec::constant(a.per_day, a.days, a.warmup);
    let sc = data::generate_synthetic(&sim, &truth, &spec, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    let stamp = format!(
        "# {TOOL} {VERSION} synth seed={} days={} per_day={} warmup={}\n",
        a.seed, a.days, a.per_day, a.warmup
    );

    let mut cases = stamp.clone().into_bytes();
    data::write_cases(&mut cases, &sc.case_records())?;
    std::fs::write(a.out.join("cases.csv"), cases)?;
    let mut field = stamp.clone().into_bytes();
    data::write_field(&mut field, &sc.field_records())?;
    std::fs::write(a.out.join("field.csv"), field)?;

    let last = sc.date_of(a.days - 1);
    let manifest = ScenarioManifest {
        cases: "cases.csv".into(),
        field: "field.csv".into(),
        region: sc.region.clone(),
        case_start: sc.start_date,
        case_end: last,
        field_start: sc.date_of(a.warmup),
        field_end: last,
        seed: Some(a.seed),
        mode: data::ParseMode::Strict,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(a.out.join("scenario.toml"), format!("{stamp}{text}"))?;

    let mut t = stamp.clone();
    for e in sim.space().entries() {
        t.push_str(&format!("{} = {:?}\n", e.name, truth.at(e.index)));
    }
    std::fs::write(a.out.join("truth.toml"), t)?;
    println!("wrote synthetic scenario to {}", a.out.display());
    Ok(())
}
