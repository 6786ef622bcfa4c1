//! The history matching loop and summaries of what each wave rules out.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{enclosing_hyperrectangle, latin_hypercube};
use crate::diagnostics::{validation_diagnostics, DiagnosticReport};
use crate::emulator::{Discrepancy, Targets};
use crate::error::{Error, Result};
use crate::proposal::{generate_design, ImplausibilityMeasure, ProposalOptions};
use crate::rng::{derive_seed, substream};
use crate::set::{wave_implausibility, EmulatorSet};
use crate::sims::Simulator;
use crate::space::ParameterSpace;
use crate::table::RunTable;
use crate::training::{emulator_from_data, TrainingOptions};
use crate::variance::train_variance_emulators;

/// Grids larger than this are replaced by a Latin hypercube of this size.
pub const GRID_BUDGET: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoppingRule {
    /// Stop when every emulator sd is below this multiple of the combined
    /// observation and discrepancy sd.
    pub ratio: f64,
    pub max_waves: usize,
    /// Stop once this many runs of the latest wave match every target.
    pub target_matches: Option<usize>,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            ratio: 1.0,
            max_waves: 10,
            target_matches: None,
        }
    }
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio.is_finite()) {
            return Err(Error::Argument("the stopping ratio must be positive".into()));
        }
        if self.max_waves == 0 {
            return Err(Error::Argument("max_waves must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveOptions {
    pub n_train: usize,
    pub n_valid: usize,
    /// Train variance and expectation emulators on replicated runs.
    pub variance_mode: bool,
    /// Outputs to emulate at the next wave; all targeted outputs if unset.
    pub outputs: Option<Vec<String>>,
    /// Refuse to advance when more than this fraction of validation points
    /// are misclassified.
    pub max_type_one_fraction: f64,
    /// Also train on earlier runs that the current emulators cannot rule out.
    pub carry_over: bool,
    pub training: TrainingOptions,
    pub proposal: ProposalOptions,
    pub stopping: StoppingRule,
    pub seed: u64,
}

impl Default for WaveOptions {
    fn default() -> Self {
        WaveOptions {
            n_train: 30,
            n_valid: 60,
            variance_mode: false,
            outputs: None,
            max_type_one_fraction: 0.05,
            carry_over: false,
            training: TrainingOptions::default(),
            proposal: ProposalOptions::default(),
            stopping: StoppingRule::default(),
            seed: 0,
        }
    }
}

impl WaveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::Argument("n_train must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_type_one_fraction) {
            return Err(Error::Argument("max_type_one_fraction must lie in [0, 1]".into()));
        }
        self.training.validate()?;
        self.proposal.validate()?;
        self.stopping.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub stop: bool,
    pub reasons: Vec<String>,
}

/// Everything produced by one wave. Wave 0 holds only the initial design
/// and its runs.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveRecord {
    pub index: usize,
    /// Outputs emulated at this wave.
    pub outputs: Vec<String>,
    pub emulators: Option<EmulatorSet>,
    pub diagnostics: Option<DiagnosticReport>,
    /// Design proposed by this wave's emulators (and all earlier ones).
    pub design: Option<RunTable>,
    pub runs: Option<RunTable>,
    /// Rows of `runs` used for training; the rest validate the next wave.
    pub train_rows: Vec<usize>,
    pub failed: Vec<Vec<f64>>,
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    pub space: ParameterSpace,
    pub targets: Targets,
    pub waves: Vec<WaveRecord>,
    pub flagged: Option<String>,
    pub stopping: Option<StopDecision>,
}

impl WaveState {
    pub fn new(space: ParameterSpace, targets: Targets) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Argument("at least one target is needed".into()));
        }
        Ok(WaveState {
            space,
            targets,
            waves: Vec::new(),
            flagged: None,
            stopping: None,
        })
    }

    /// Emulator sets of every completed wave, oldest first.
    pub fn emulator_sets(&self) -> Vec<EmulatorSet> {
        self.waves.iter().filter_map(|w| w.emulators.clone()).collect()
    }

    pub fn latest_runs(&self) -> Option<&RunTable> {
        self.waves.iter().rev().find_map(|w| w.runs.as_ref())
    }
}

// For each run row, the design row with identical inputs.
fn design_rows(design: &RunTable, runs: &RunTable, space: &ParameterSpace) -> Result<Vec<Option<usize>>> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    for (i, x) in design.points_in(space)?.iter().enumerate() {
        index.entry(x.iter().map(|v| v.to_bits()).collect()).or_insert(i);
    }
    Ok(runs
        .points_in(space)?
        .iter()
        .map(|x| index.get(&x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).copied())
        .collect())
}

/// Run the simulator, dropping rows with non-finite outputs and retrying
/// point by point if the batch call fails. Returns the runs and the design
/// points that produced nothing.
pub fn simulate_design(
    sim: &dyn Simulator,
    design: &RunTable,
    space: &ParameterSpace,
    seed: u64,
) -> Result<(RunTable, Vec<Vec<f64>>)> {
    let runs = match sim.simulate(design, seed) {
        Ok(r) => r,
        Err(e) => {
            warn!("simulator batch failed ({e}); retrying point by point");
            let mut acc: Option<RunTable> = None;
            for i in 0..design.len() {
                match sim.simulate(&design.select_rows(&[i]), derive_seed(seed, &format!("retry{i}"))) {
                    Ok(r) => {
                        acc = Some(match acc {
                            None => r,
                            Some(a) => a.concat(&r)?,
                        })
                    }
                    Err(e) => warn!("simulator failed at design row {i}: {e}"),
                }
            }
            match acc {
                Some(a) => a,
                None => return Err(Error::Simulator("every simulator call failed".into())),
            }
        }
    };
    let good: Vec<usize> = (0..runs.len())
        .filter(|&i| runs.outputs()[i].iter().all(|v| v.is_finite()))
        .collect();
    let runs = runs.select_rows(&good);
    let map = design_rows(design, &runs, space)?;
    let mut seen = vec![false; design.len()];
    for i in map.into_iter().flatten() {
        seen[i] = true;
    }
    let pts = design.points_in(space)?;
    let failed: Vec<Vec<f64>> = (0..design.len()).filter(|&i| !seen[i]).map(|i| pts[i].clone()).collect();
    if !failed.is_empty() {
        warn!("{} design points failed to simulate and are excluded", failed.len());
    }
    Ok((runs, failed))
}

// Rows of `runs` whose design point lies in the first `n_train` entries of
// a seeded shuffle of design rows.
fn split_rows(design: &RunTable, runs: &RunTable, space: &ParameterSpace, n_train: usize, seed: u64) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..design.len()).collect();
    order.shuffle(&mut substream(seed, "split"));
    let mut is_train = vec![false; design.len()];
    for &i in order.iter().take(n_train) {
        is_train[i] = true;
    }
    Ok(design_rows(design, runs, space)?
        .into_iter()
        .enumerate()
        .filter(|(_, d)| d.is_some_and(|d| is_train[d]))
        .map(|(r, _)| r)
        .collect())
}

fn validation_points(runs: &RunTable, variance: bool, space: &ParameterSpace) -> Result<usize> {
    if !variance {
        return Ok(runs.len());
    }
    let names: Vec<String> = Vec::new();
    Ok(crate::variance::aggregate_replicates(runs, &names, space)?.len())
}

/// Advance the history match by one wave.
///
/// The first call also creates and runs the initial design. Each call
/// trains emulators on the previous wave's runs, validates them, proposes a
/// design from all emulators so far and runs it.
pub fn run_wave(state: &mut WaveState, sim: &dyn Simulator, opts: &WaveOptions) -> Result<()> {
    opts.validate()?;
    if let Some(f) = &state.flagged {
        return Err(Error::Flagged(f.clone()));
    }
    let sim_outputs = sim.output_names();
    for o in state.targets.keys() {
        if !sim_outputs.contains(o) {
            return Err(Error::Schema(format!("target `{o}` is not a simulator output")));
        }
    }
    let space = state.space.clone();
    if state.waves.is_empty() {
        info!("Running the initial design...");
        let train = latin_hypercube(opts.n_train, &space, derive_seed(opts.seed, "wave0-train"))?;
        let design = if opts.n_valid > 0 {
            train.concat(&latin_hypercube(opts.n_valid, &space, derive_seed(opts.seed, "wave0-valid"))?)?
        } else {
            train
        };
        let (runs, failed) = simulate_design(sim, &design, &space, derive_seed(opts.seed, "wave0-sim"))?;
        let mut is_train = vec![false; design.len()];
        is_train[..opts.n_train].fill(true);
        let train_rows = design_rows(&design, &runs, &space)?
            .into_iter()
            .enumerate()
            .filter(|(_, d)| d.is_some_and(|d| is_train[d]))
            .map(|(r, _)| r)
            .collect();
        state.waves.push(WaveRecord {
            index: 0,
            outputs: Vec::new(),
            emulators: None,
            diagnostics: None,
            design: Some(design),
            runs: Some(runs),
            train_rows,
            failed,
            empty: false,
        });
    }

    let k = state.waves.len();
    let prev = state.waves.last().expect("initial wave exists").clone();
    let prev_design = prev.design.clone().expect("previous wave has a design");
    let prev_runs = prev.runs.clone().expect("previous wave has runs");
    let mut train = prev_runs.select_rows(&prev.train_rows);
    let valid_rows: Vec<usize> = (0..prev_runs.len()).filter(|r| !prev.train_rows.contains(r)).collect();
    let valid = prev_runs.select_rows(&valid_rows);
    let outputs: Vec<String> = match &opts.outputs {
        Some(q) => {
            for o in q {
                if !state.targets.contains_key(o) {
                    return Err(Error::Schema(format!("output `{o}` has no target")));
                }
            }
            q.clone()
        }
        None => state.targets.keys().cloned().collect(),
    };
    let earlier = state.emulator_sets();
    if opts.carry_over && !earlier.is_empty() {
        for w in &state.waves[..k - 1] {
            if let Some(r) = &w.runs {
                let imp = wave_implausibility(&earlier, &r.points_in(&space)?, &state.targets, opts.proposal.nth)?;
                let keep: Vec<usize> = (0..r.len()).filter(|&i| imp[i] <= opts.proposal.cutoff).collect();
                train = train.concat(&r.select_rows(&keep))?;
            }
        }
    }
    let em_space = if k == 1 {
        space.clone()
    } else {
        enclosing_hyperrectangle(&prev_design.arranged(&space)?)?
    };
    info!("Wave {k}: training emulators for {}", outputs.join(", "));
    let set = if opts.variance_mode {
        train_variance_emulators(&train, &outputs, &em_space, &opts.training)?
    } else {
        emulator_from_data(&train, &outputs, &em_space, &opts.training)?
    };
    let diag = validation_diagnostics(
        &set,
        Some(&state.targets),
        (!valid.is_empty()).then_some(&valid),
        opts.proposal.cutoff,
    )?;
    let type_one: std::collections::BTreeSet<usize> = diag
        .emulators
        .iter()
        .flat_map(|e| e.classification_failures.iter().flatten().copied())
        .collect();
    let n_valid = if valid.is_empty() {
        train.len()
    } else {
        validation_points(&valid, opts.variance_mode, &space)?
    };
    let mut record = WaveRecord {
        index: k,
        outputs,
        emulators: Some(set),
        diagnostics: Some(diag),
        design: None,
        runs: None,
        train_rows: Vec::new(),
        failed: Vec::new(),
        empty: false,
    };
    let frac = type_one.len() as f64 / n_valid.max(1) as f64;
    if frac > opts.max_type_one_fraction {
        let msg = format!(
            "wave {k}: {} of {n_valid} validation points misclassified (limit {})",
            type_one.len(),
            opts.max_type_one_fraction
        );
        warn!("{msg}");
        state.waves.push(record);
        state.flagged = Some(msg);
        return Ok(());
    }

    let mut waves = earlier;
    waves.push(record.emulators.clone().expect("just trained"));
    let measure = ImplausibilityMeasure {
        waves: &waves,
        targets: &state.targets,
        nth: opts.proposal.nth,
    };
    let box_k = enclosing_hyperrectangle(&prev_design.arranged(&space)?)?;
    let popts = ProposalOptions {
        seed: derive_seed(opts.seed, &format!("wave{k}-proposal")),
        ..opts.proposal.clone()
    };
    let n_design = opts.n_train + opts.n_valid;
    match generate_design(&measure, &box_k, n_design, &popts) {
        Ok(p) => {
            let design = p.design;
            let sim_seed = derive_seed(opts.seed, &format!("wave{k}-sim"));
            let (runs, failed) = simulate_design(sim, &design, &space, sim_seed)?;
            let n_train = (opts.n_train * design.len()).div_ceil(n_design);
            record.train_rows = split_rows(&design, &runs, &space, n_train, sim_seed)?;
            record.design = Some(design);
            record.runs = Some(runs);
            record.failed = failed;
        }
        Err(Error::EmptySpace { .. }) => {
            warn!("wave {k}: no non-implausible points remain");
            record.empty = true;
        }
        Err(e) => return Err(e),
    }
    state.waves.push(record);
    let decision = check_stopping(state, &opts.stopping)?;
    if decision.stop {
        info!("stopping criteria met: {}", decision.reasons.join("; "));
    }
    state.stopping = Some(decision);
    Ok(())
}

/// Whether the history match should stop, with every reason that applies.
pub fn check_stopping(state: &WaveState, rule: &StoppingRule) -> Result<StopDecision> {
    let last = state
        .waves
        .iter()
        .rev()
        .find(|w| w.emulators.is_some())
        .ok_or_else(|| Error::Argument("no completed wave to assess".into()))?;
    let mut reasons = Vec::new();
    let set = last.emulators.as_ref().expect("filtered");
    let mut dominated = true;
    for (name, em) in set.mean_map() {
        let t = state
            .targets
            .get(name)
            .ok_or_else(|| Error::Schema(format!("no target given for output `{name}`")))?;
        let obs_sd = (t.moments().1 + em.discrepancy_var()).sqrt();
        if em.prior().sigma_sq.sqrt() >= rule.ratio * obs_sd {
            dominated = false;
        }
    }
    if dominated {
        reasons.push(format!(
            "emulator uncertainty is below {} of the observation uncertainty for every output",
            rule.ratio
        ));
    }
    if last.empty {
        reasons.push("no non-implausible points remain".into());
    }
    if let (Some(m), Some(runs)) = (rule.target_matches, last.runs.as_ref()) {
        let (count, _) = match_count(runs, &state.targets)?;
        if count >= m {
            reasons.push(format!("{count} runs match every target"));
        }
    }
    let completed = state.waves.iter().filter(|w| w.emulators.is_some()).count();
    if completed >= rule.max_waves {
        reasons.push(format!("reached the limit of {} waves", rule.max_waves));
    }
    Ok(StopDecision {
        stop: !reasons.is_empty(),
        reasons,
    })
}

/// Runs whose every targeted output lies within its target.
pub fn match_count(runs: &RunTable, targets: &Targets) -> Result<(usize, Vec<bool>)> {
    let cols: Vec<(Vec<f64>, &crate::emulator::Target)> = targets
        .iter()
        .map(|(o, t)| Ok((runs.output_column(o)?, t)))
        .collect::<Result<_>>()?;
    let mask: Vec<bool> = (0..runs.len())
        .map(|i| cols.iter().all(|(c, t)| t.matches(c[i])))
        .collect();
    Ok((mask.iter().filter(|&&m| m).count(), mask))
}

/// Evaluation points: a `ppd`-per-axis grid of cell centres, or a Latin
/// hypercube of [`GRID_BUDGET`] points when the grid would be larger.
pub fn evaluation_points(space: &ParameterSpace, ppd: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if ppd == 0 {
        return Err(Error::Argument("ppd must be at least 1".into()));
    }
    let d = space.dim();
    let size = (ppd as f64).powi(d as i32);
    if size > GRID_BUDGET as f64 {
        info!("grid of {size} points exceeds the budget; using a Latin hypercube");
        return Ok(latin_hypercube(GRID_BUDGET, space, derive_seed(seed, "evaluation"))?.inputs().to_vec());
    }
    let params = space.parameters();
    let total = ppd.pow(d as u32);
    Ok((0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; d];
            for j in (0..d).rev() {
                let i = idx % ppd;
                idx /= ppd;
                let p = &params[j];
                x[j] = p.lower + (p.upper - p.lower) * (i as f64 + 0.5) / ppd as f64;
            }
            x
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modification {
    /// Multiply observation uncertainties.
    Obs,
    /// Multiply prior emulator variances.
    Var,
    /// Multiply correlation lengths.
    Hp,
    /// Multiply both discrepancy standard deviations.
    Disc,
}

impl std::str::FromStr for Modification {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obs" => Ok(Modification::Obs),
            "var" => Ok(Modification::Var),
            "hp" => Ok(Modification::Hp),
            "disc" => Ok(Modification::Disc),
            _ => Err(Error::Argument(format!("unknown modification `{s}` (expected obs, var, hp or disc)"))),
        }
    }
}

pub const DEFAULT_MULTIPLIERS: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.2];

/// Emulators and targets with one quantity scaled by `u`.
pub fn modify(waves: &[EmulatorSet], targets: &Targets, what: Modification, u: f64) -> Result<(Vec<EmulatorSet>, Targets)> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::Argument("multipliers must be positive".into()));
    }
    let mut t = targets.clone();
    let sets = match what {
        Modification::Obs => {
            for v in t.values_mut() {
                *v = v.scaled_sd(u)?;
            }
            waves.to_vec()
        }
        Modification::Var => waves
            .iter()
            .map(|s| {
                s.map_mean(|e| {
                    let mut p = e.prior().clone();
                    p.sigma_sq *= u;
                    e.readjust(p)
                })
            })
            .collect::<Result<_>>()?,
        Modification::Hp => waves
            .iter()
            .map(|s| {
                s.map_mean(|e| {
                    let mut p = e.prior().clone();
                    p.correlator = p.correlator.clone().with_theta(p.correlator.theta() * u)?;
                    e.readjust(p)
                })
            })
            .collect::<Result<_>>()?,
        Modification::Disc => waves
            .iter()
            .map(|s| {
                s.map_mean(|e| {
                    let d = e.prior().discrepancy;
                    Ok(e.clone().with_discrepancy(Discrepancy {
                        internal: d.internal * u,
                        external: d.external * u,
                    }))
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok((sets, t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovedRow {
    pub multiplier: f64,
    pub cutoff: f64,
    pub removed: f64,
}

/// Proportion of the evaluation set ruled out, per multiplier and cutoff.
#[allow(clippy::too_many_arguments)]
pub fn space_removed(
    waves: &[EmulatorSet],
    targets: &Targets,
    ppd: usize,
    what: Modification,
    multipliers: &[f64],
    cutoffs: &[f64],
    nth: usize,
    seed: u64,
) -> Result<Vec<RemovedRow>> {
    let space = waves
        .last()
        .ok_or_else(|| Error::Argument("no emulators given".into()))?
        .space();
    let pts = evaluation_points(space, ppd, seed)?;
    let mut rows = Vec::new();
    for &u in multipliers {
        let (sets, t) = modify(waves, targets, what, u)?;
        let imp = wave_implausibility(&sets, &pts, &t, nth)?;
        for &c in cutoffs {
            let out = imp.iter().filter(|&&i| i > c).count();
            rows.push(RemovedRow {
                multiplier: u,
                cutoff: c,
                removed: out as f64 / pts.len() as f64,
            });
        }
    }
    Ok(rows)
}

/// Cutoffs 2.5 to 5 in steps of 0.1, the default sweep.
pub fn default_cutoffs() -> Vec<f64> {
    (0..=25).map(|i| 2.5 + 0.1 * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeCell {
    pub x: f64,
    pub y: Option<f64>,
    pub min_implausibility: f64,
    pub optical_depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticePanel {
    pub x_param: String,
    pub y_param: Option<String>,
    pub cells: Vec<LatticeCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSummary {
    pub cutoff: f64,
    pub panels: Vec<LatticePanel>,
}

impl LatticeSummary {
    pub fn panel(&self, x: &str, y: Option<&str>) -> Option<&LatticePanel> {
        self.panels
            .iter()
            .find(|p| p.x_param == x && p.y_param.as_deref() == y)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x_param", "y_param", "x", "y", "min_implausibility", "optical_depth"])?;
        for p in &self.panels {
            for c in &p.cells {
                w.write_record([
                    p.x_param.clone(),
                    p.y_param.clone().unwrap_or_default(),
                    c.x.to_string(),
                    c.y.map(|v| v.to_string()).unwrap_or_default(),
                    c.min_implausibility.to_string(),
                    c.optical_depth.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One- and two-parameter projections of the implausibility over the
/// evaluation set: per bin, the smallest implausibility and the fraction
/// of points at or below the cutoff.
pub fn lattice_summary(
    waves: &[EmulatorSet],
    targets: &Targets,
    ppd: usize,
    nth: usize,
    cutoff: f64,
    seed: u64,
) -> Result<LatticeSummary> {
    let space = waves
        .last()
        .ok_or_else(|| Error::Argument("no emulators given".into()))?
        .space();
    let pts = evaluation_points(space, ppd, seed)?;
    let imp = wave_implausibility(waves, &pts, targets, nth)?;
    let params = space.parameters();
    let d = space.dim();
    let bin = |x: f64, j: usize| -> usize {
        let p = &params[j];
        (((x - p.lower) / (p.upper - p.lower) * ppd as f64).floor() as usize).min(ppd - 1)
    };
    let centre = |b: usize, j: usize| -> f64 {
        let p = &params[j];
        p.lower + (p.upper - p.lower) * (b as f64 + 0.5) / ppd as f64
    };
    let mut pairs: Vec<(usize, Option<usize>)> = Vec::new();
    for i in 0..d {
        pairs.push((i, None));
        for j in i + 1..d {
            pairs.push((i, Some(j)));
        }
    }
    let panels = pairs
        .par_iter()
        .map(|&(i, j)| {
            let ny = if j.is_some() { ppd } else { 1 };
            let mut min = vec![f64::INFINITY; ppd * ny];
            let mut ok = vec![0usize; ppd * ny];
            let mut count = vec![0usize; ppd * ny];
            for (x, &v) in pts.iter().zip(&imp) {
                let b = bin(x[i], i) * ny + j.map_or(0, |j| bin(x[j], j));
                min[b] = min[b].min(v);
                count[b] += 1;
                if v <= cutoff {
                    ok[b] += 1;
                }
            }
            let cells = (0..ppd * ny)
                .filter(|&b| count[b] > 0)
                .map(|b| LatticeCell {
                    x: centre(b / ny, i),
                    y: j.map(|j| centre(b % ny, j)),
                    min_implausibility: min[b],
                    optical_depth: ok[b] as f64 / count[b] as f64,
                })
                .collect();
            LatticePanel {
                x_param: params[i].name.clone(),
                y_param: j.map(|j| params[j].name.clone()),
                cells,
            }
        })
        .collect();
    Ok(LatticeSummary { cutoff, panels })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    Exp,
    Var,
    Sd,
    Imp,
    Nimp,
}

impl std::str::FromStr for SliceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" => Ok(SliceKind::Exp),
            "var" => Ok(SliceKind::Var),
            "sd" => Ok(SliceKind::Sd),
            "imp" => Ok(SliceKind::Imp),
            "nimp" => Ok(SliceKind::Nimp),
            _ => Err(Error::Argument(format!(
                "unknown plot type `{s}` (expected exp, var, sd, imp or nimp)"
            ))),
        }
    }
}

/// Emulator summaries over a `ppd` by `ppd` grid in two parameters, the
/// others held at `fixed` values (range midpoints by default).
///
/// The result has every parameter as an input column and one output column
/// per emulator, or a single `nimp` column.
#[allow(clippy::too_many_arguments)]
pub fn slice(
    set: &EmulatorSet,
    kind: SliceKind,
    x_param: &str,
    y_param: &str,
    fixed: &IndexMap<String, f64>,
    ppd: usize,
    targets: Option<&Targets>,
    nth: usize,
) -> Result<RunTable> {
    let space = set.space();
    let ix = space
        .index_of(x_param)
        .ok_or_else(|| Error::Schema(format!("unknown parameter `{x_param}`")))?;
    let iy = space
        .index_of(y_param)
        .ok_or_else(|| Error::Schema(format!("unknown parameter `{y_param}`")))?;
    if ix == iy {
        return Err(Error::Argument("slice parameters must differ".into()));
    }
    if ppd < 2 {
        return Err(Error::Argument("ppd must be at least 2 for a slice".into()));
    }
    for k in fixed.keys() {
        if space.index_of(k).is_none() {
            return Err(Error::Schema(format!("unknown parameter `{k}`")));
        }
    }
    let needs_targets = matches!(kind, SliceKind::Imp | SliceKind::Nimp);
    let targets = match (needs_targets, targets) {
        (true, None) => {
            return Err(Error::Argument("implausibility plots need targets".into()));
        }
        (_, t) => t,
    };
    let params = space.parameters();
    let base: Vec<f64> = params
        .iter()
        .map(|p| fixed.get(&p.name).copied().unwrap_or_else(|| p.midpoint()))
        .collect();
    let axis = |j: usize, i: usize| {
        let p = &params[j];
        p.lower + (p.upper - p.lower) * i as f64 / (ppd - 1) as f64
    };
    let mut pts = Vec::with_capacity(ppd * ppd);
    for a in 0..ppd {
        for b in 0..ppd {
            let mut x = base.clone();
            x[ix] = axis(ix, a);
            x[iy] = axis(iy, b);
            pts.push(x);
        }
    }
    let (names, cols): (Vec<String>, Vec<Vec<f64>>) = match kind {
        SliceKind::Nimp => (
            vec!["nimp".into()],
            vec![set.nth_implausibility(&pts, targets.expect("checked"), nth)?],
        ),
        SliceKind::Imp => {
            let imps = set.implausibilities(&pts, targets.expect("checked"))?;
            (set.output_names(), imps)
        }
        _ => {
            let mut cols = Vec::new();
            for o in set.output_names() {
                let (e, v, _) = set.moments(&o, &pts)?;
                cols.push(match kind {
                    SliceKind::Exp => e,
                    SliceKind::Var => v,
                    _ => v.into_iter().map(f64::sqrt).collect(),
                });
            }
            (set.output_names(), cols)
        }
    };
    let rows: Vec<Vec<f64>> = (0..pts.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    RunTable::from_space_points(space, pts)?.with_outputs(names, rows)
}

#[derive(Serialize, Deserialize)]
struct WaveMeta {
    index: usize,
    outputs: Vec<String>,
    train_rows: Vec<usize>,
    failed: Vec<Vec<f64>>,
    empty: bool,
}

#[derive(Serialize, Deserialize)]
struct StateDoc {
    format_version: u32,
    space: ParameterSpace,
    targets: Targets,
    flagged: Option<String>,
    stopping: Option<StopDecision>,
    waves: Vec<WaveMeta>,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

impl WaveState {
    /// Write `state.json` and one `wave_<k>` directory per wave.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for w in &self.waves {
            let wd = dir.join(format!("wave_{}", w.index));
            fs::create_dir_all(&wd)?;
            if let Some(d) = &w.design {
                d.write_csv_path(wd.join("design.csv"))?;
            }
            if let Some(r) = &w.runs {
                r.write_csv_path(wd.join("runs.csv"))?;
            }
            if let Some(e) = &w.emulators {
                write_json(&wd.join("emulators.json"), e)?;
            }
            if let Some(d) = &w.diagnostics {
                write_json(&wd.join("diagnostics.json"), d)?;
            }
        }
        let doc = StateDoc {
            format_version: 1,
            space: self.space.clone(),
            targets: self.targets.clone(),
            flagged: self.flagged.clone(),
            stopping: self.stopping.clone(),
            waves: self
                .waves
                .iter()
                .map(|w| WaveMeta {
                    index: w.index,
                    outputs: w.outputs.clone(),
                    train_rows: w.train_rows.clone(),
                    failed: w.failed.clone(),
                    empty: w.empty,
                })
                .collect(),
        };
        write_json(&dir.join("state.json"), &doc)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<WaveState> {
        let dir = dir.as_ref();
        let doc: StateDoc = serde_json::from_str(&fs::read_to_string(dir.join("state.json"))?)?;
        if doc.format_version != 1 {
            return Err(Error::Schema(format!("unsupported state format {}", doc.format_version)));
        }
        let mut waves = Vec::new();
        for m in doc.waves {
            let wd = dir.join(format!("wave_{}", m.index));
            let opt_csv = |name: &str| -> Result<Option<RunTable>> {
                let p = wd.join(name);
                if p.exists() {
                    Ok(Some(RunTable::read_csv_path(p, &doc.space)?))
                } else {
                    Ok(None)
                }
            };
            let emulators = match wd.join("emulators.json") {
                p if p.exists() => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
                _ => None,
            };
            let diagnostics = match wd.join("diagnostics.json") {
                p if p.exists() => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
                _ => None,
            };
            waves.push(WaveRecord {
                index: m.index,
                outputs: m.outputs,
                emulators,
                diagnostics,
                design: opt_csv("design.csv")?,
                runs: opt_csv("runs.csv")?,
                train_rows: m.train_rows,
                failed: m.failed,
                empty: m.empty,
            });
        }
        Ok(WaveState {
            space: doc.space,
            targets: doc.targets,
            waves,
            flagged: doc.flagged,
            stopping: doc.stopping,
        })
    }
}
