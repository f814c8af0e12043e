use std::path::PathBuf;
use std::process::ExitCode;

use bedflow::smbo::Infill;
use bedflow::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;

use commands::Context;
use config::{GridBase, Loaded, XSource};

#[derive(Parser, Debug)]
#[command(
    name = "bedflow",
    version,
    about = "Hospital bed-occupancy simulation, calibration and sensitivity analysis"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one parameter vector and score it against the field data.
    Simulate {
        #[arg(long, value_enum)]
        source: Option<Source>,
        /// Parameter values by name, for `--source file`.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Optimization record, for `--source record-best`.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Calibrate the parameters with surrogate-model-based optimization.
    Optimize {
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        init: Option<usize>,
        /// Parameters held at their bound midpoints, e.g. `2,5,24`.
        #[arg(long, value_delimiter = ',')]
        exclude: Option<Vec<usize>>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, value_enum)]
        infill: Option<InfillArg>,
        /// Also run a baseline with the same budget and seeds.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Sensitivity studies.
    Analyze {
        #[command(subcommand)]
        study: Study,
    },
    /// Parse and check the config, parameter space and data; write nothing.
    Validate,
    /// Write a synthetic scenario (cases, field data, manifest, truth).
    Synth {
        #[arg(long, default_value_t = 70)]
        days: usize,
        #[arg(long, default_value_t = 40)]
        per_day: usize,
        #[arg(long, default_value_t = 28)]
        warmup: usize,
    },
}

#[derive(Args, Debug, Default)]
struct StudyArgs {
    /// Optimization record whose evaluations form the design.
    #[arg(long)]
    design: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Study {
    /// Importance index P* per surrogate family.
    Importance {
        #[command(flatten)]
        common: StudyArgs,
        /// Seeded model refits per family.
        #[arg(long)]
        repeats: Option<usize>,
        /// Size of a fresh design when no record is given.
        #[arg(long)]
        design_size: Option<usize>,
    },
    /// Relative error change under ±delta perturbation of each parameter.
    Delta {
        #[command(flatten)]
        common: StudyArgs,
        #[arg(long)]
        configs: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        params: Option<Vec<usize>>,
    },
    /// Kriging response over two parameters.
    Grid {
        i: Option<usize>,
        j: Option<usize>,
        #[command(flatten)]
        common: StudyArgs,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, value_enum)]
        base: Option<BaseArg>,
        /// Record whose best point is the base, for `--base record-best`.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Optimization quality with growing sets of parameters removed.
    Removal {
        /// Nested sets separated by `;`, e.g. `24,2;24,2,5`.
        #[arg(long)]
        sets: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        init: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Source {
    Defaults,
    File,
    RecordBest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InfillArg {
    ExpectedImprovement,
    PredictedValue,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Baseline {
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaseArg {
    Defaults,
    Midpoints,
    RecordBest,
}

fn parse_sets(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';')
        .map(|part| {
            part.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad parameter index `{t}` in --sets")))
                })
                .collect()
        })
        .collect()
}

fn load(cli: &Cli) -> Result<Loaded> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut loaded = Loaded::load(path)?;
    if let Some(s) = cli.seed {
        loaded.config.seed = s;
    }
    Ok(loaded)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth { days, per_day, warmup } = cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("fixture"));
        return commands::synth(&commands::SynthArgs {
            out,
            seed: cli.seed.unwrap_or(0),
            days,
            per_day,
            warmup,
        });
    }
    let mut loaded = load(&cli)?;
    let c = &mut loaded.config;
    match cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::Validate => commands::validate(Context::new(loaded, cli.out)?),
        Command::Simulate {
            source,
            params,
            record,
            replicates,
        } => {
            if let Some(s) = source {
                c.simulate.source = match s {
                    Source::Defaults => XSource::Defaults,
                    Source::File => XSource::File,
                    Source::RecordBest => XSource::RecordBest,
                };
            }
            // paths given on the command line are relative to the working directory
            let cwd = std::env::current_dir()?;
            if let Some(p) = params {
                c.simulate.params = Some(cwd.join(p));
            }
            if let Some(p) = record {
                c.simulate.record = Some(cwd.join(p));
            }
            if let Some(r) = replicates {
                c.simulate.replicates = r;
            }
            commands::simulate(Context::new(loaded, cli.out)?)
        }
        Command::Optimize {
            budget,
            init,
            exclude,
            replicates,
            infill,
            baseline,
        } => {
            let o = &mut c.optimize;
            if let Some(b) = budget {
                o.budget = b;
            }
            if init.is_some() {
                o.init = init;
            }
            if let Some(e) = exclude {
                o.exclude = e;
            }
            if let Some(r) = replicates {
                o.replicates = r;
            }
            if let Some(i) = infill {
                o.infill = match i {
                    InfillArg::ExpectedImprovement => Infill::ExpectedImprovement,
                    InfillArg::PredictedValue => Infill::PredictedValue,
                };
            }
            commands::optimize(Context::new(loaded, cli.out)?, baseline.is_some())
        }
        Command::Analyze { study } => {
            let a = &mut c.analyze;
            match study {
                Study::Importance {
                    common,
                    repeats,
                    design_size,
                } => {
                    if let Some(r) = repeats {
                        a.repeats = r;
                    }
                    if design_size.is_some() {
                        a.design_size = design_size;
                    }
                    if let Some(r) = common.replicates {
                        a.replicates = r;
                    }
                    commands::importance(Context::new(loaded, cli.out)?, common.design).map(|_| ())
                }
                Study::Delta {
                    common,
                    configs,
                    delta,
                    params,
                } => {
                    if let Some(k) = configs {
                        a.configs = k;
                    }
                    if let Some(d) = delta {
                        a.delta = d;
                    }
                    if let Some(p) = params {
                        a.params = p;
                    }
                    if let Some(r) = common.replicates {
                        a.replicates = r;
                    }
                    commands::delta(Context::new(loaded, cli.out)?, common.design)
                }
                Study::Grid {
                    i,
                    j,
                    common,
                    resolution,
                    base,
                    record,
                } => {
                    if let Some(i) = i {
                        a.grid.i = i;
                    }
                    if let Some(j) = j {
                        a.grid.j = j;
                    }
                    if let Some(m) = resolution {
                        a.grid.resolution = m;
                    }
                    if let Some(b) = base {
                        a.grid.base = match b {
                            BaseArg::Defaults => GridBase::Defaults,
                            BaseArg::Midpoints => GridBase::Midpoints,
                            BaseArg::RecordBest => GridBase::RecordBest,
                        };
                    }
                    if let Some(r) = common.replicates {
                        a.replicates = r;
                    }
                    commands::grid(Context::new(loaded, cli.out)?, common.design, record)
                }
                Study::Removal {
                    sets,
                    repeats,
                    budget,
                    init,
                    replicates,
                } => {
                    if let Some(s) = sets {
                        a.removal.sets = parse_sets(&s)?;
                    }
                    if let Some(r) = repeats {
                        a.removal.repeats = r;
                    }
                    if budget.is_some() {
                        a.removal.budget = budget;
                    }
                    if init.is_some() {
                        a.removal.init = init;
                    }
                    if let Some(r) = replicates {
                        c.optimize.replicates = r;
                    }
                    commands::removal(Context::new(loaded, cli.out)?)
                }
            }
        }
    }
}

fn exit_code(e: &Error) -> (u8, &'static str) {
    match e {
        Error::Config(_) => (2, "config"),
        Error::Data(_) => (3, "data"),
        Error::Simulation(_) => (4, "simulation"),
        Error::Model(_) => (4, "model"),
        Error::Io(_) => (4, "io"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => Err(Error::Config(format!("cannot start {} workers: {e}", cli.workers))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = exit_code(&e);
            let msg = serde_json::to_string(&config::one_line(&e.to_string())).unwrap_or_default();
            eprintln!("error kind={kind} code={code} message={msg}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sets_parse() {
        assert_eq!(parse_sets("24,2;24,2,5").unwrap(), vec![vec![24, 2], vec![24, 2, 5]]);
        assert_eq!(parse_sets(";3").unwrap(), vec![vec![], vec![3]]);
        assert!(parse_sets("1,a").is_err());
    }

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(exit_code(&Error::Config(String::new())).0, 2);
        assert_eq!(
            exit_code(&Error::Data(bedflow::data::DataError::Csv(String::new()))).0,
            3
        );
        assert_eq!(exit_code(&Error::Simulation(String::new())).0, 4);
        assert_eq!(exit_code(&Error::Model(String::new())).0, 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
