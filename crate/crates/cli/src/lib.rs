//! Command-line front end: train, validate, propose, run waves and
//! summarise what the emulators rule out.

pub mod config;
pub mod simulator;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use histmatch_core::analysis::{
    default_cutoffs, lattice_summary, run_wave, slice, space_removed, Modification, SliceKind, WaveState,
    DEFAULT_MULTIPLIERS,
};
use histmatch_core::sims::{make_wave0, sirs_space, SirsGillespie};
use histmatch_core::{
    emulator_from_data, generate_new_design, latin_hypercube, train_variance_emulators, validation_diagnostics,
    EmulatorSet, Error, Result, RunTable, Simulator,
};
use indexmap::IndexMap;
use log::info;

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "histmatch", version, about = "Bayes linear emulation and history matching")]
pub struct Cli {
    /// Worker threads for all parallel work (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train emulators from a run table.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Treat replicate groups as a stochastic simulator.
        #[arg(long)]
        variance_mode: bool,
    },
    /// Diagnose emulators against validation runs (leave-one-out without).
    Validate {
        #[arg(long)]
        emulators: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        runs: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        cutoff: Option<f64>,
        /// Skip target-dependent tests.
        #[arg(long)]
        no_targets: bool,
    },
    /// Propose a design from the non-implausible region of one or more waves.
    Propose {
        /// Emulator files, one per wave, oldest first.
        #[arg(long, required = true)]
        emulators: Vec<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, short)]
        n: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        cutoff: Option<f64>,
        #[arg(long)]
        nth: Option<usize>,
    },
    /// Run one wave of history matching, creating the state directory on
    /// first use.
    Wave {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        variance_mode: bool,
        #[arg(long)]
        cutoff: Option<f64>,
        #[arg(long)]
        nth: Option<usize>,
    },
    /// Summaries of the emulated implausibility.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
    /// The bundled SIRS example.
    Demo {
        #[command(subcommand)]
        what: Demo,
    },
}

#[derive(Debug, Args)]
pub struct AnalysisInputs {
    /// Emulator files, one per wave, oldest first.
    #[arg(long, required = true)]
    pub emulators: Vec<PathBuf>,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub ppd: usize,
    #[arg(long)]
    pub nth: Option<usize>,
    #[arg(long)]
    pub no_targets: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Modified {
    Obs,
    Var,
    Hp,
    Disc,
}

#[derive(Debug, Subcommand)]
pub enum Analysis {
    /// Proportion of space removed per cutoff and multiplier.
    SpaceRemoved {
        #[command(flatten)]
        inputs: AnalysisInputs,
        #[arg(long, value_enum, default_value = "obs")]
        modified: Modified,
        #[arg(long, value_delimiter = ',')]
        multipliers: Option<Vec<f64>>,
        /// A single cutoff instead of the default sweep.
        #[arg(long)]
        cutoff: Option<f64>,
    },
    /// Minimum implausibility and optical depth per parameter pair.
    Lattice {
        #[command(flatten)]
        inputs: AnalysisInputs,
        #[arg(long, default_value_t = 3.0)]
        cutoff: f64,
    },
    /// Emulator summaries over a two-parameter slice.
    Slice {
        #[command(flatten)]
        inputs: AnalysisInputs,
        /// One of exp, var, sd, imp, nimp.
        #[arg(long)]
        plot_type: String,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// Values for the other parameters, as name=value.
        #[arg(long, value_delimiter = ',')]
        fixed: Vec<String>,
        /// Also write an SVG heat map per column.
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DemoSim {
    SirsOde,
    SirsGillespie,
}

#[derive(Debug, Subcommand)]
pub enum Demo {
    /// Write a config and initial training and validation runs.
    Init {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "sirs-ode")]
        sim: DemoSim,
    },
    /// Run the config's simulator over a design.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Exit status for an error: 1 for a flagged wave, 2 for bad input and 3
/// for failed computation.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Flagged(_) => 1,
        e if e.is_input_error() => 2,
        _ => 3,
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<Config> {
    let mut c = Config::from_path(path)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn load_set(path: &Path) -> Result<EmulatorSet> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Argument(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_sets(paths: &[PathBuf], config: &Config) -> Result<Vec<EmulatorSet>> {
    let space = config.space()?;
    paths
        .iter()
        .map(|p| {
            let set = load_set(p)?;
            if set.space().names() != space.names() {
                return Err(Error::Schema(format!(
                    "{} uses parameters {:?}, the config has {:?}",
                    p.display(),
                    set.space().names(),
                    space.names()
                )));
            }
            if config.discrepancies.is_empty() {
                Ok(set)
            } else {
                set.with_discrepancies(&config.discrepancies)
            }
        })
        .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn set_summary(set: &EmulatorSet) -> String {
    let mut s = String::new();
    for em in set.mean_map().values() {
        s += &em.summary();
        s.push('\n');
    }
    if let Some(v) = set.variance_map() {
        for em in v.values() {
            s += "Variance emulator\n";
            s += &em.summary();
            s.push('\n');
        }
    }
    s
}

fn workers(cli: Option<usize>, config: Option<&Config>) -> usize {
    cli.or(config.and_then(|c| c.workers))
        .unwrap_or_else(rayon::current_num_threads)
}

/// Run a parsed command line. Returns the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Argument("--workers must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match cli.command {
        Command::Train {
            config,
            runs,
            out_dir,
            variance_mode,
        } => {
            let config = load_config(&config, cli.seed)?;
            let space = config.space()?;
            let runs = RunTable::read_csv_path(&runs, &space)?;
            let outputs = config.emulated_outputs(runs.output_names())?;
            let mut opts = config.training.clone();
            opts.seed = config.seed;
            let set = if variance_mode || config.variance_mode {
                train_variance_emulators(&runs, &outputs, &space, &opts)?
            } else {
                emulator_from_data(&runs, &outputs, &space, &opts)?
            };
            let set = if config.discrepancies.is_empty() {
                set
            } else {
                set.with_discrepancies(&config.discrepancies)?
            };
            fs::create_dir_all(&out_dir)?;
            write_json(&out_dir.join("emulators.json"), &set)?;
            fs::write(out_dir.join("summary.txt"), set_summary(&set))?;
            info!("wrote {} emulators to {}", set.len(), out_dir.display());
            Ok(0)
        }
        Command::Validate {
            emulators,
            config,
            runs,
            out_dir,
            cutoff,
            no_targets,
        } => {
            let config = load_config(&config, cli.seed)?;
            let set = load_sets(&[emulators], &config)?.remove(0);
            let valid = runs
                .map(|p| RunTable::read_csv_path(p, &config.space()?))
                .transpose()?;
            let targets = (!no_targets && !config.targets.is_empty()).then_some(&config.targets);
            let c = cutoff.unwrap_or(config.proposal.cutoff);
            let report = validation_diagnostics(&set, targets, valid.as_ref(), c)?;
            fs::create_dir_all(&out_dir)?;
            write_json(&out_dir.join("diagnostics.json"), &report)?;
            report.write_plot_data(&out_dir)?;
            if report.passed() {
                info!("all diagnostics passed");
                Ok(0)
            } else {
                for p in &report.failing_points {
                    println!("{}", p.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
                }
                info!("{} points failed diagnostics", report.failing_points.len());
                Ok(1)
            }
        }
        Command::Propose {
            emulators,
            config,
            n,
            out_dir,
            cutoff,
            nth,
        } => {
            let config = load_config(&config, cli.seed)?;
            let sets = load_sets(&emulators, &config)?;
            let mut opts = config.proposal.clone();
            opts.seed = config.seed;
            if let Some(c) = cutoff {
                opts.cutoff = c;
            }
            if let Some(k) = nth {
                opts.nth = k;
            }
            let p = generate_new_design(&sets, n, &config.targets, &opts)?;
            fs::create_dir_all(&out_dir)?;
            p.design.write_csv_path(out_dir.join("design.csv"))?;
            write_json(&out_dir.join("proposal.json"), &p.log)?;
            Ok(0)
        }
        Command::Wave {
            config,
            out_dir,
            variance_mode,
            cutoff,
            nth,
        } => {
            let config = load_config(&config, cli.seed)?;
            let space = config.space()?;
            let spec = config
                .simulator
                .clone()
                .ok_or_else(|| Error::Schema("the config names no simulator".into()))?;
            let sim = simulator::build(&spec, &space, workers(cli.workers, Some(&config)));
            let mut opts = config.wave_options();
            opts.variance_mode |= variance_mode;
            if let Some(c) = cutoff {
                opts.proposal.cutoff = c;
            }
            if let Some(k) = nth {
                opts.proposal.nth = k;
            }
            let mut state = if out_dir.join("state.json").exists() {
                let s = WaveState::load(&out_dir)?;
                if s.space != space || s.targets != config.targets {
                    return Err(Error::Schema(format!(
                        "{} was created with different parameters or targets",
                        out_dir.display()
                    )));
                }
                s
            } else {
                WaveState::new(space, config.targets.clone())?
            };
            let result = run_wave(&mut state, sim.as_ref(), &opts);
            if let Err(e @ Error::Flagged(_)) = result {
                return Err(e);
            }
            result?;
            state.save(&out_dir)?;
            let k = state.waves.len() - 1;
            if let Some(f) = &state.flagged {
                println!("wave {k} flagged: {f}");
                return Ok(1);
            }
            let last = &state.waves[k];
            println!(
                "wave {k}: {} runs, {} failed",
                last.runs.as_ref().map_or(0, RunTable::len),
                last.failed.len()
            );
            if let Some(s) = state.stopping.as_ref().filter(|s| s.stop) {
                println!("stopping criteria met: {}", s.reasons.join("; "));
            }
            Ok(0)
        }
        Command::Analyze { what } => analyze(what, cli.seed),
        Command::Demo { what } => demo(what, cli.seed, cli.workers),
    }
}

fn analyze(what: Analysis, seed: Option<u64>) -> Result<i32> {
    let prepare = |inputs: &AnalysisInputs| -> Result<(Config, Vec<EmulatorSet>)> {
        let config = load_config(&inputs.config, seed)?;
        let sets = load_sets(&inputs.emulators, &config)?;
        fs::create_dir_all(&inputs.out_dir)?;
        Ok((config, sets))
    };
    let need_targets = |config: &Config, no_targets: bool| -> Result<()> {
        if no_targets || config.targets.is_empty() {
            return Err(Error::Argument("this analysis needs targets".into()));
        }
        Ok(())
    };
    match what {
        Analysis::SpaceRemoved {
            inputs,
            modified,
            multipliers,
            cutoff,
        } => {
            let (config, sets) = prepare(&inputs)?;
            need_targets(&config, inputs.no_targets)?;
            let what = match modified {
                Modified::Obs => Modification::Obs,
                Modified::Var => Modification::Var,
                Modified::Hp => Modification::Hp,
                Modified::Disc => Modification::Disc,
            };
            let mults = multipliers.unwrap_or_else(|| DEFAULT_MULTIPLIERS.to_vec());
            let cutoffs = cutoff.map_or_else(default_cutoffs, |c| vec![c]);
            let nth = inputs.nth.unwrap_or(config.proposal.nth);
            let rows = space_removed(&sets, &config.targets, inputs.ppd, what, &mults, &cutoffs, nth, config.seed)?;
            let mut w = String::from("multiplier,cutoff,removed\n");
            for r in &rows {
                w += &format!("{},{},{}\n", r.multiplier, r.cutoff, r.removed);
            }
            fs::write(inputs.out_dir.join("space_removed.csv"), w)?;
            Ok(0)
        }
        Analysis::Lattice { inputs, cutoff } => {
            let (config, sets) = prepare(&inputs)?;
            need_targets(&config, inputs.no_targets)?;
            let nth = inputs.nth.unwrap_or(config.proposal.nth);
            let l = lattice_summary(&sets, &config.targets, inputs.ppd, nth, cutoff, config.seed)?;
            l.write_csv(inputs.out_dir.join("lattice.csv"))?;
            Ok(0)
        }
        Analysis::Slice {
            inputs,
            plot_type,
            x,
            y,
            fixed,
            svg,
        } => {
            let kind: SliceKind = plot_type.parse()?;
            let (config, sets) = prepare(&inputs)?;
            let set = sets.last().expect("at least one emulator file");
            let mut fixed_vals = IndexMap::new();
            for f in &fixed {
                let (k, v) = f
                    .split_once('=')
                    .ok_or_else(|| Error::Argument(format!("`{f}` is not name=value")))?;
                let v: f64 = v
                    .parse()
                    .map_err(|_| Error::Argument(format!("`{v}` is not a number")))?;
                fixed_vals.insert(k.to_string(), v);
            }
            let targets = (!inputs.no_targets && !config.targets.is_empty()).then_some(&config.targets);
            let nth = inputs.nth.unwrap_or(config.proposal.nth);
            let table = slice(set, kind, &x, &y, &fixed_vals, inputs.ppd, targets, nth)?;
            let stem = format!("slice_{plot_type}");
            table.write_csv_path(inputs.out_dir.join(format!("{stem}.csv")))?;
            if svg {
                for o in table.output_names() {
                    let vals = table.output_column(o)?;
                    let doc = svg::heat_map(&format!("{plot_type} {o}"), &x, &y, inputs.ppd, &vals);
                    fs::write(inputs.out_dir.join(format!("{stem}_{o}.svg")), doc)?;
                }
            }
            Ok(0)
        }
    }
}

fn demo(what: Demo, seed: Option<u64>, workers_flag: Option<usize>) -> Result<i32> {
    match what {
        Demo::Init { out_dir, sim } => {
            let stochastic = matches!(sim, DemoSim::SirsGillespie);
            let mut config = Config::sirs_demo(stochastic);
            config.seed = seed.unwrap_or(0);
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("config.json"), config.to_json()?)?;
            let space = sirs_space();
            let (n_train, n_valid) = (config.wave.n_train, config.wave.n_valid);
            let (train, valid) = if stochastic {
                let reps = match config.simulator {
                    Some(config::SimulatorSpec::SirsGillespie { reps }) => reps,
                    _ => unreachable!("stochastic demo config"),
                };
                let g = SirsGillespie { reps };
                let t = latin_hypercube(n_train, &space, config.seed)?;
                let v = latin_hypercube(n_valid, &space, config.seed.wrapping_add(1))?;
                (g.simulate(&t, config.seed)?, g.simulate(&v, config.seed.wrapping_add(1))?)
            } else {
                make_wave0(&space, n_train, n_valid, config.seed)?
            };
            train.write_csv_path(out_dir.join("train.csv"))?;
            valid.write_csv_path(out_dir.join("valid.csv"))?;
            Ok(0)
        }
        Demo::Simulate { config, design, out_dir } => {
            let config = load_config(&config, seed)?;
            let space = config.space()?;
            let spec = config
                .simulator
                .clone()
                .ok_or_else(|| Error::Schema("the config names no simulator".into()))?;
            let sim = simulator::build(&spec, &space, workers(workers_flag, Some(&config)));
            let design = RunTable::read_csv_path(&design, &space)?.inputs_only();
            let runs = sim.simulate(&design, config.seed)?;
            fs::create_dir_all(&out_dir)?;
            runs.write_csv_path(out_dir.join("runs.csv"))?;
            Ok(0)
        }
    }
}
