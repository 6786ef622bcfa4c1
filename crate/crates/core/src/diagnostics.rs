//! Emulator validation: comparison with simulator runs, misclassification
//! against targets and standardised prediction errors.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emulator::{adjust_points, Target, Targets, TrainedEmulator};
use crate::error::{Error, Result};
use crate::set::EmulatorSet;
use crate::table::RunTable;
use crate::variance::aggregate_replicates;

/// Leave-one-out switches from refitting to the closed form above this size.
pub const LOO_REFIT_LIMIT: usize = 50;
/// Standardised errors beyond this magnitude count as failures.
pub const STANDARDIZED_LIMIT: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticMode {
    Validation,
    LeaveOneOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmulatorRole {
    Expectation,
    Variance,
}

/// Values behind the three tests at one validation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostic {
    pub row: usize,
    pub observed: f64,
    pub exp: f64,
    pub sd: f64,
    pub i_em: Option<f64>,
    pub i_sim: Option<f64>,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulatorDiagnostics {
    pub output: String,
    pub role: EmulatorRole,
    pub points: Vec<PointDiagnostic>,
    pub comparison_failures: Vec<usize>,
    /// `None` when no target was available.
    pub classification_failures: Option<Vec<usize>>,
    pub standardized_failures: Vec<usize>,
    pub warnings: Vec<String>,
}

impl EmulatorDiagnostics {
    /// Rows failing any test.
    pub fn failing_rows(&self) -> BTreeSet<usize> {
        let mut s: BTreeSet<usize> = self.comparison_failures.iter().copied().collect();
        s.extend(self.classification_failures.iter().flatten().copied());
        s.extend(self.standardized_failures.iter().copied());
        s
    }

    fn file_stem(&self) -> String {
        match self.role {
            EmulatorRole::Expectation => self.output.clone(),
            EmulatorRole::Variance => format!("{}_variance", self.output),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub mode: DiagnosticMode,
    pub cutoff: f64,
    pub input_names: Vec<String>,
    pub emulators: Vec<EmulatorDiagnostics>,
    /// Union of failing rows over emulators and tests. Rows index the
    /// validation table, its replicate groups, or the training runs.
    pub failing_rows: Vec<usize>,
    pub failing_points: Vec<Vec<f64>>,
}

impl DiagnosticReport {
    pub fn passed(&self) -> bool {
        self.failing_rows.is_empty()
    }

    /// Write one CSV per emulator and test into `dir`.
    pub fn write_plot_data(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for em in &self.emulators {
            let stem = em.file_stem();
            let cmp: BTreeSet<usize> = em.comparison_failures.iter().copied().collect();
            let mut w = csv::Writer::from_path(dir.join(format!("{stem}_comparison.csv")))?;
            w.write_record(["row", "observed", "exp", "lower", "upper", "fail"])?;
            for p in &em.points {
                w.write_record([
                    p.row.to_string(),
                    p.observed.to_string(),
                    p.exp.to_string(),
                    (p.exp - self.cutoff * p.sd).to_string(),
                    (p.exp + self.cutoff * p.sd).to_string(),
                    cmp.contains(&p.row).to_string(),
                ])?;
            }
            w.flush()?;

            if let Some(fails) = &em.classification_failures {
                let fails: BTreeSet<usize> = fails.iter().copied().collect();
                let mut w = csv::Writer::from_path(dir.join(format!("{stem}_classification.csv")))?;
                w.write_record(["row", "i_sim", "i_em", "type_one"])?;
                for p in &em.points {
                    w.write_record([
                        p.row.to_string(),
                        p.i_sim.unwrap_or(f64::NAN).to_string(),
                        p.i_em.unwrap_or(f64::NAN).to_string(),
                        fails.contains(&p.row).to_string(),
                    ])?;
                }
                w.flush()?;
            }

            let mut w = csv::Writer::from_path(dir.join(format!("{stem}_standardized.csv")))?;
            w.write_record(["bin_lower", "bin_upper", "count"])?;
            for (lo, hi, n) in histogram(&em.points.iter().map(|p| p.u).collect::<Vec<_>>()) {
                w.write_record([lo.to_string(), hi.to_string(), n.to_string()])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

// Unit-width bins covering the data, always including [-3, 3].
fn histogram(u: &[f64]) -> Vec<(f64, f64, usize)> {
    let lo = u.iter().copied().fold(-3.0f64, f64::min).floor();
    let hi = u.iter().copied().fold(3.0f64, f64::max).ceil();
    let n = (hi - lo) as usize;
    let mut counts = vec![0usize; n.max(1)];
    for &x in u {
        let b = (((x - lo).floor()) as usize).min(counts.len() - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64, lo + i as f64 + 1.0, c))
        .collect()
}

/// Inputs to the tests for one emulator at a batch of points.
struct Evidence<'a> {
    rows: Vec<usize>,
    observed: Vec<f64>,
    exp: Vec<f64>,
    /// Emulator variance of the quantity being emulated.
    em_var: Vec<f64>,
    /// Sampling variance of the observed value about that quantity.
    sample_var: Vec<f64>,
    /// Added to both implausibility denominators (discrepancy and
    /// stochastic variance).
    extra_var: Vec<f64>,
    target: Option<&'a Target>,
}

fn negligible(err: f64, scale: f64) -> bool {
    err <= 1e-8 * scale.abs().max(1.0)
}

fn evaluate(output: &str, role: EmulatorRole, ev: Evidence<'_>, c: f64) -> Result<EmulatorDiagnostics> {
    let mut points = Vec::with_capacity(ev.rows.len());
    let mut comparison = Vec::new();
    let mut classification = ev.target.map(|_| Vec::new());
    let mut standardized = Vec::new();
    for i in 0..ev.rows.len() {
        let row = ev.rows[i];
        let f = ev.observed[i];
        let e = ev.exp[i];
        let sd = (ev.em_var[i] + ev.sample_var[i]).max(0.0).sqrt();
        let err = f - e;
        let exact = negligible(err.abs(), f);
        let u = if exact {
            0.0
        } else if sd > 0.0 {
            err / sd
        } else {
            return Err(Error::Degenerate(format!(
                "emulator `{output}` has zero variance at validation row {row} but does not reproduce it"
            )));
        };
        let (i_em, i_sim) = match ev.target {
            Some(t) => {
                let (z, var_e) = t.moments();
                let base = var_e + ev.extra_var[i];
                let ratio = |d: f64, v: f64| if v > 0.0 { d.abs() / v.sqrt() } else if d == 0.0 { 0.0 } else { f64::INFINITY };
                (Some(ratio(e - z, ev.em_var[i] + base)), Some(ratio(f - z, base)))
            }
            None => (None, None),
        };
        let exempt = i_sim.is_some_and(|s| s > c);
        if !exact && err.abs() > c * sd && !exempt {
            comparison.push(row);
        }
        if u.abs() > STANDARDIZED_LIMIT && !exempt {
            standardized.push(row);
        }
        if let (Some(list), Some(em), Some(sim)) = (classification.as_mut(), i_em, i_sim) {
            if em > c && sim <= c {
                list.push(row);
            }
        }
        points.push(PointDiagnostic {
            row,
            observed: f,
            exp: e,
            sd,
            i_em,
            i_sim,
            u,
        });
    }
    let mut warnings = Vec::new();
    let max_u = points.iter().map(|p| p.u.abs()).fold(0.0, f64::max);
    if !points.is_empty() && max_u < 1.0 {
        let msg = format!(
            "all standardised errors for `{output}` are below 1 in magnitude; this can indicate under-confidence or overfitting"
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(EmulatorDiagnostics {
        output: output.to_string(),
        role,
        points,
        comparison_failures: comparison,
        classification_failures: classification,
        standardized_failures: standardized,
        warnings,
    })
}

fn single_evidence<'a>(em: &TrainedEmulator, validation: &RunTable, target: Option<&'a Target>) -> Result<(Evidence<'a>, Vec<Vec<f64>>)> {
    let pts = validation.points_in(em.space())?;
    let observed = validation.output_column(em.output_name())?;
    let (exp, em_var) = em.predict(&pts)?;
    let n = pts.len();
    Ok((
        Evidence {
            rows: (0..n).collect(),
            observed,
            exp,
            em_var,
            sample_var: vec![0.0; n],
            extra_var: vec![em.discrepancy_var(); n],
            target,
        },
        pts,
    ))
}

/// Rows where the simulator output falls outside `c` emulator standard
/// deviations of the prediction. With a target, rows whose simulator
/// implausibility exceeds `c` are exempt.
pub fn comparison_test(em: &TrainedEmulator, validation: &RunTable, c: f64, target: Option<&Target>) -> Result<Vec<usize>> {
    let (ev, _) = single_evidence(em, validation, target)?;
    Ok(evaluate(em.output_name(), EmulatorRole::Expectation, ev, c)?.comparison_failures)
}

/// Rows the emulator would rule out although the simulator would not.
pub fn classification_test(em: &TrainedEmulator, validation: &RunTable, target: &Target, cutoff: f64) -> Result<Vec<usize>> {
    let (ev, _) = single_evidence(em, validation, Some(target))?;
    Ok(evaluate(em.output_name(), EmulatorRole::Expectation, ev, cutoff)?
        .classification_failures
        .unwrap_or_default())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedErrors {
    pub u: Vec<f64>,
    pub failures: Vec<usize>,
    pub warning: Option<String>,
}

/// Standardised prediction errors at every validation row.
pub fn standardized_errors(em: &TrainedEmulator, validation: &RunTable) -> Result<StandardizedErrors> {
    let (ev, _) = single_evidence(em, validation, None)?;
    let d = evaluate(em.output_name(), EmulatorRole::Expectation, ev, STANDARDIZED_LIMIT)?;
    Ok(StandardizedErrors {
        u: d.points.iter().map(|p| p.u).collect(),
        failures: d.standardized_failures,
        warning: d.warnings.into_iter().next(),
    })
}

/// Held-out moments for every training run of `em`, with the run's own
/// noise variance returned as sampling variance.
fn loo_evidence(em: &TrainedEmulator) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = em.n_train();
    if n < 2 {
        return Err(Error::InsufficientData(
            "leave-one-out needs at least two training runs".into(),
        ));
    }
    let noise: Vec<f64> = em.obs_noise_var().map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if n > LOO_REFIT_LIMIT {
        let (e, v) = em.loo_moments();
        return Ok((e, v, noise));
    }
    let x = em.train_inputs();
    let y = em.train_outputs();
    let held: Vec<Result<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let sub = adjust_points(
                em.prior().clone(),
                keep.iter().map(|&j| x[j].clone()).collect(),
                keep.iter().map(|&j| y[j]).collect(),
                em.obs_noise_var().map(|v| keep.iter().map(|&j| v[j]).collect()),
            )?;
            sub.predict_one(&x[i])
        })
        .collect();
    let (e, v): (Vec<f64>, Vec<f64>) = held.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok((e, v, noise))
}

fn loo_diagnostics(
    em: &TrainedEmulator,
    role: EmulatorRole,
    target: Option<&Target>,
    extra_var: Vec<f64>,
    c: f64,
) -> Result<EmulatorDiagnostics> {
    let (exp, em_var, sample_var) = loo_evidence(em)?;
    let n = exp.len();
    evaluate(
        em.output_name(),
        role,
        Evidence {
            rows: (0..n).collect(),
            observed: em.train_outputs().to_vec(),
            exp,
            em_var,
            sample_var,
            extra_var,
            target,
        },
        c,
    )
}

/// Run every applicable test for each emulator in the set.
///
/// Without `validation`, each emulator is checked by leave-one-out on its
/// own training runs. Without `targets`, the classification test is
/// skipped and no failure is exempted.
pub fn validation_diagnostics(
    set: &EmulatorSet,
    targets: Option<&Targets>,
    validation: Option<&RunTable>,
    c: f64,
) -> Result<DiagnosticReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Argument("the diagnostic cutoff must be positive".into()));
    }
    let space = set.space();
    let outputs = set.output_names();
    let target_of = |o: &str| targets.and_then(|t| t.get(o));
    let (mode, row_points, results): (DiagnosticMode, Vec<Vec<f64>>, Vec<Result<EmulatorDiagnostics>>) = match validation {
        Some(table) => {
            for o in &outputs {
                if !table.has_output(o) {
                    return Err(Error::Schema(format!("validation runs have no column for output `{o}`")));
                }
            }
            if set.is_variance() {
                let agg = aggregate_replicates(table, &outputs, space)?;
                let mut jobs: Vec<(String, EmulatorRole)> = Vec::new();
                for o in &outputs {
                    jobs.push((o.clone(), EmulatorRole::Expectation));
                    jobs.push((o.clone(), EmulatorRole::Variance));
                }
                let results = jobs
                    .par_iter()
                    .map(|(o, role)| variance_set_validation(set, o, *role, &agg, target_of(o), c))
                    .collect();
                (DiagnosticMode::Validation, agg.inputs.clone(), results)
            } else {
                let pts = table.points_in(space)?;
                let results = outputs
                    .par_iter()
                    .map(|o| {
                        let em = set.get(o).expect("output from set");
                        let (ev, _) = single_evidence(em, table, target_of(o))?;
                        evaluate(o, EmulatorRole::Expectation, ev, c)
                    })
                    .collect();
                (DiagnosticMode::Validation, pts, results)
            }
        }
        None => {
            let first = set.mean_map().values().next().expect("non-empty set");
            let results = match set.variance_map() {
                None => outputs
                    .par_iter()
                    .map(|o| {
                        let em = set.get(o).expect("output from set");
                        let extra = vec![em.discrepancy_var(); em.n_train()];
                        loo_diagnostics(em, EmulatorRole::Expectation, target_of(o), extra, c)
                    })
                    .collect(),
                Some(vmap) => {
                    let mut jobs: Vec<(&TrainedEmulator, EmulatorRole, Option<&Target>, Vec<f64>)> = Vec::new();
                    for o in &outputs {
                        let em = set.get(o).expect("output from set");
                        let v = set
                            .stochastic_variance(o, em.train_inputs())?
                            .expect("variance set");
                        let extra = v.iter().map(|s| s + em.discrepancy_var()).collect();
                        jobs.push((em, EmulatorRole::Expectation, target_of(o), extra));
                        let vem = &vmap[o.as_str()];
                        jobs.push((vem, EmulatorRole::Variance, None, vec![0.0; vem.n_train()]));
                    }
                    jobs.into_par_iter()
                        .map(|(em, role, t, extra)| loo_diagnostics(em, role, t, extra, c))
                        .collect()
                }
            };
            (DiagnosticMode::LeaveOneOut, first.train_inputs().to_vec(), results)
        }
    };
    let emulators: Vec<EmulatorDiagnostics> = results
        .into_iter()
        .zip(report_names(set))
        .map(|(r, o)| r.map_err(|e| e.for_output(&o)))
        .collect::<Result<_>>()?;
    // variance emulators are trained on the replicated subset, so their
    // rows index that subset rather than the mean emulator's runs
    let row_points_of = |em: &EmulatorDiagnostics, row: usize| -> Vec<f64> {
        match (mode, em.role) {
            (DiagnosticMode::LeaveOneOut, EmulatorRole::Variance) => {
                set.variance_map().expect("variance set")[em.output.as_str()].train_inputs()[row].clone()
            }
            _ => row_points[row].clone(),
        }
    };
    let mut union: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut failing_rows = BTreeSet::new();
    let mut failing_points = Vec::new();
    for em in &emulators {
        for row in em.failing_rows() {
            let p = row_points_of(em, row);
            if union.insert(p.iter().map(|v| v.to_bits()).collect()) {
                failing_points.push(p.clone());
            }
            if let Some(r) = row_points.iter().position(|q| *q == p) {
                failing_rows.insert(r);
            }
        }
    }
    Ok(DiagnosticReport {
        mode,
        cutoff: c,
        input_names: space.names(),
        emulators,
        failing_rows: failing_rows.into_iter().collect(),
        failing_points,
    })
}

fn report_names(set: &EmulatorSet) -> Vec<String> {
    let mut v = Vec::new();
    for o in set.output_names() {
        v.push(o.clone());
        if set.is_variance() {
            v.push(o);
        }
    }
    v
}

fn variance_set_validation(
    set: &EmulatorSet,
    output: &str,
    role: EmulatorRole,
    agg: &crate::variance::Aggregated,
    target: Option<&Target>,
    c: f64,
) -> Result<EmulatorDiagnostics> {
    let vhat = set.stochastic_variance(output, &agg.inputs)?.expect("variance set");
    match role {
        EmulatorRole::Expectation => {
            let em = set.get(output).expect("output from set");
            let (exp, em_var) = em.predict(&agg.inputs)?;
            let n = agg.len();
            evaluate(
                output,
                role,
                Evidence {
                    rows: (0..n).collect(),
                    observed: agg.means[output].clone(),
                    exp,
                    em_var,
                    sample_var: (0..n).map(|g| vhat[g] / agg.counts[g] as f64).collect(),
                    extra_var: vhat.iter().map(|v| v + em.discrepancy_var()).collect(),
                    target,
                },
                c,
            )
        }
        EmulatorRole::Variance => {
            let em = &set.variance_map().expect("variance set")[output];
            let rows: Vec<usize> = (0..agg.len()).filter(|&g| agg.counts[g] >= 2).collect();
            let pts: Vec<Vec<f64>> = rows.iter().map(|&g| agg.inputs[g].clone()).collect();
            let (exp, em_var) = em.predict(&pts)?;
            evaluate(
                output,
                role,
                Evidence {
                    observed: rows.iter().map(|&g| agg.variances[output][g]).collect(),
                    exp,
                    em_var,
                    sample_var: rows
                        .iter()
                        .map(|&g| 2.0 * vhat[g] * vhat[g] / (agg.counts[g] - 1) as f64)
                        .collect(),
                    extra_var: vec![0.0; rows.len()],
                    rows,
                    target: None,
                },
                c,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{Correlator, KernelKind};
    use crate::emulator::EmulatorPrior;
    use crate::set::EmulatorMap;
    use crate::space::ParameterSpace;
    use proptest::prelude::*;

    fn space() -> ParameterSpace {
        ParameterSpace::new([("a", 0.0, 1.0), ("b", 0.0, 1.0)]).unwrap()
    }

    fn f(x: &[f64]) -> f64 {
        (3.0 * x[0]).sin() + x[1] * x[1]
    }

    fn grid(n: usize, offset: f64) -> Vec<Vec<f64>> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                v.push(vec![(i as f64 + offset) / n as f64, (j as f64 + offset) / n as f64]);
            }
        }
        v
    }

    fn table(pts: Vec<Vec<f64>>, shift: f64) -> RunTable {
        let y: Vec<Vec<f64>> = pts.iter().map(|x| vec![f(x) + shift]).collect();
        RunTable::from_space_points(&space(), pts).unwrap().with_outputs(vec!["y".into()], y).unwrap()
    }

    fn trained(mean: f64) -> TrainedEmulator {
        let prior = EmulatorPrior::constant("y", space(), mean, 1.0, Correlator::new(KernelKind::ExpSq, 0.6, 0.0).unwrap()).unwrap();
        let t = table(grid(4, 0.5), 0.0);
        crate::emulator::adjust(prior, &t, None).unwrap()
    }

    #[test]
    fn training_points_pass() {
        let em = trained(0.5);
        let t = table(grid(4, 0.5), 0.0);
        assert!(comparison_test(&em, &t, 3.0, None).unwrap().is_empty());
        let s = standardized_errors(&em, &t).unwrap();
        assert!(s.failures.is_empty());
        assert!(s.u.iter().all(|&u| u == 0.0));
        assert!(s.warning.is_some());
    }

    #[test]
    fn shifted_expectation_fails_everywhere() {
        let em = trained(0.5);
        let v = table(grid(5, 0.3), 0.0);
        let (_, var) = em.predict(&v.points_in(&space()).unwrap()).unwrap();
        let sd_max = var.iter().copied().fold(0.0, f64::max).sqrt();
        let shifted = table(grid(5, 0.3), 10.0 * sd_max + 1.0);
        let fails = comparison_test(&em, &shifted, 3.0, None).unwrap();
        assert_eq!(fails.len(), 25);
    }

    #[test]
    fn far_points_are_exempt_with_targets() {
        let em = trained(0.5);
        let shifted = table(grid(5, 0.3), 50.0);
        let target = Target::value(0.0, 0.1).unwrap();
        assert!(comparison_test(&em, &shifted, 3.0, Some(&target)).unwrap().is_empty());
    }

    #[test]
    fn biased_emulator_misclassifies() {
        let em = trained(0.5);
        let x = vec![vec![0.31, 0.77]];
        let (e, v) = em.predict(&x).unwrap();
        // target centred on the simulator value, emulator pushed far away
        let truth = e[0] + 20.0 * v[0].sqrt() + 1.0;
        let t = RunTable::from_space_points(&space(), x).unwrap().with_outputs(vec!["y".into()], vec![vec![truth]]).unwrap();
        let target = Target::value(truth, 0.01).unwrap();
        assert_eq!(classification_test(&em, &t, &target, 3.0).unwrap(), vec![0]);
    }

    #[test]
    fn perfect_emulator_has_no_type_one() {
        let em = trained(0.5);
        let t = table(grid(4, 0.5), 0.0);
        for cut in [0.5, 1.0, 3.0, 6.0] {
            let target = Target::value(0.7, 0.2).unwrap();
            assert!(classification_test(&em, &t, &target, cut).unwrap().is_empty());
        }
    }

    #[test]
    fn u_definition_and_boundary() {
        let em = trained(0.5);
        let x = vec![vec![0.33, 0.61], vec![0.9, 0.1]];
        let (e, v) = em.predict(&x).unwrap();
        let obs = vec![vec![e[0] + 2.0 * v[0].sqrt()], vec![e[1] - 3.5 * v[1].sqrt()]];
        let t = RunTable::from_space_points(&space(), x).unwrap().with_outputs(vec!["y".into()], obs).unwrap();
        let s = standardized_errors(&em, &t).unwrap();
        assert!((s.u[0] - 2.0).abs() < 1e-9);
        assert!((s.u[1] + 3.5).abs() < 1e-9);
        assert_eq!(s.failures, vec![1]);
        assert!(s.warning.is_none());
    }

    #[test]
    fn zero_variance_off_training_is_degenerate() {
        let em = trained(0.5);
        let ev = Evidence {
            rows: vec![0],
            observed: vec![1.0],
            exp: vec![0.0],
            em_var: vec![0.0],
            sample_var: vec![0.0],
            extra_var: vec![0.0],
            target: None,
        };
        assert!(matches!(evaluate(em.output_name(), EmulatorRole::Expectation, ev, 3.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn loo_smoke_and_union() {
        let mut m = EmulatorMap::new();
        let t = table(grid(4, 0.5), 0.0).select_rows(&(0..10).collect::<Vec<_>>());
        let prior = EmulatorPrior::constant("y", space(), 0.5, 1.0, Correlator::new(KernelKind::ExpSq, 0.6, 0.0).unwrap()).unwrap();
        m.insert("y".into(), crate::emulator::adjust(prior, &t, None).unwrap());
        let set = EmulatorSet::deterministic(m).unwrap();
        let r = validation_diagnostics(&set, None, None, 3.0).unwrap();
        assert_eq!(r.mode, DiagnosticMode::LeaveOneOut);
        assert_eq!(r.emulators[0].points.len(), 10);
        let expect: Vec<usize> = r.emulators[0].failing_rows().into_iter().collect();
        assert_eq!(r.failing_rows, expect);
        for (row, p) in r.failing_rows.iter().zip(&r.failing_points) {
            assert_eq!(&t.points_in(&space()).unwrap()[*row], p);
        }
    }

    #[test]
    fn missing_output_column_is_schema_error() {
        let mut m = EmulatorMap::new();
        m.insert("y".into(), trained(0.5));
        let set = EmulatorSet::deterministic(m).unwrap();
        let t = RunTable::from_space_points(&space(), grid(2, 0.5)).unwrap();
        assert!(matches!(validation_diagnostics(&set, None, Some(&t), 3.0), Err(Error::Schema(_))));
    }

    #[test]
    fn plot_files_are_named_by_output_and_test() {
        let mut m = EmulatorMap::new();
        m.insert("y".into(), trained(0.5));
        let set = EmulatorSet::deterministic(m).unwrap();
        let mut targets = Targets::new();
        targets.insert("y".into(), Target::interval(0.0, 1.0).unwrap());
        let r = validation_diagnostics(&set, Some(&targets), Some(&table(grid(5, 0.3), 0.0)), 3.0).unwrap();
        let dir = std::env::temp_dir().join(format!("hm-diag-{}", std::process::id()));
        r.write_plot_data(&dir).unwrap();
        for t in ["comparison", "classification", "standardized"] {
            assert!(dir.join(format!("y_{t}.csv")).exists());
        }
        let back: DiagnosticReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn histogram_covers_values() {
        let h = histogram(&[-4.2, 0.5, 0.7, 2.9]);
        assert_eq!(h.first().unwrap().0, -5.0);
        assert_eq!(h.last().unwrap().1, 3.0);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 4);
    }

    proptest! {
        #[test]
        fn em_implausibility_identity(e in -5.0f64..5.0, vd in 0.0f64..4.0, ve in 0.01f64..2.0, z in -5.0f64..5.0) {
            let target = Target::value(z, ve.sqrt()).unwrap();
            let ev = Evidence {
                rows: vec![0],
                observed: vec![e],
                exp: vec![e],
                em_var: vec![vd],
                sample_var: vec![0.0],
                extra_var: vec![0.0],
                target: Some(&target),
            };
            let d = evaluate("y", EmulatorRole::Expectation, ev, 3.0).unwrap();
            let p = &d.points[0];
            let want = p.i_sim.unwrap() * (ve / (vd + ve)).sqrt();
            prop_assert!((p.i_em.unwrap() - want).abs() <= 1e-9 * want.max(1.0));
            prop_assert!(p.i_em.unwrap() <= p.i_sim.unwrap() + 1e-12);
        }

        #[test]
        fn union_is_union_of_tests(shift in -3.0f64..3.0, z in -1.0f64..2.0) {
            let mut m = EmulatorMap::new();
            m.insert("y".into(), trained(0.5));
            let set = EmulatorSet::deterministic(m).unwrap();
            let mut targets = Targets::new();
            targets.insert("y".into(), Target::value(z, 0.3).unwrap());
            let v = table(grid(4, 0.2), shift);
            let r = validation_diagnostics(&set, Some(&targets), Some(&v), 3.0).unwrap();
            let e = &r.emulators[0];
            let mut want: BTreeSet<usize> = e.comparison_failures.iter().copied().collect();
            want.extend(e.classification_failures.clone().unwrap());
            want.extend(e.standardized_failures.iter().copied());
            prop_assert_eq!(r.failing_rows.clone(), want.into_iter().collect::<Vec<_>>());
            prop_assert!(r.failing_rows.iter().all(|&i| i < v.len()));
        }
    }
}
