//! Two-level emulation for stochastic simulators: emulate the sample
//! variance across replicates, then emulate replicate means with the
//! predicted variance as known run noise.

use indexmap::IndexMap;
use log::info;

use crate::error::{Error, Result};
use crate::set::EmulatorSet;
use crate::space::ParameterSpace;
use crate::table::RunTable;
use crate::training::{emulator_from_noisy_data, TrainingOptions};

/// Replicates collapsed to one row per distinct parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregated {
    pub inputs: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    pub means: IndexMap<String, Vec<f64>>,
    /// Unbiased sample variances; zero for single-run groups.
    pub variances: IndexMap<String, Vec<f64>>,
    /// Rows of the source table in each group.
    pub members: Vec<Vec<usize>>,
}

impl Aggregated {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Group rows by replicate key, or by identical inputs when the table has
/// none. Groups appear in order of first occurrence.
pub fn aggregate_replicates(runs: &RunTable, output_names: &[String], space: &ParameterSpace) -> Result<Aggregated> {
    let pts = runs.points_in(space)?;
    let mut members: Vec<Vec<usize>> = Vec::new();
    match runs.replicate_key() {
        Some(key) => {
            let mut index: IndexMap<u64, usize> = IndexMap::new();
            for (row, k) in key.iter().enumerate() {
                let g = *index.entry(*k).or_insert_with(|| {
                    members.push(Vec::new());
                    members.len() - 1
                });
                members[g].push(row);
            }
            for m in &members {
                if m.iter().any(|&r| pts[r] != pts[m[0]]) {
                    return Err(Error::Schema("a replicate group mixes different parameter sets".into()));
                }
            }
        }
        None => {
            let mut index: IndexMap<Vec<u64>, usize> = IndexMap::new();
            for (row, x) in pts.iter().enumerate() {
                let bits: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                let g = *index.entry(bits).or_insert_with(|| {
                    members.push(Vec::new());
                    members.len() - 1
                });
                members[g].push(row);
            }
        }
    }
    let mut means = IndexMap::new();
    let mut variances = IndexMap::new();
    for o in output_names {
        let col = runs.output_column(o)?;
        let (m, v): (Vec<f64>, Vec<f64>) = members
            .iter()
            .map(|g| {
                let n = g.len() as f64;
                let mean = g.iter().map(|&r| col[r]).sum::<f64>() / n;
                let var = if g.len() > 1 {
                    g.iter().map(|&r| (col[r] - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (mean, var)
            })
            .unzip();
        means.insert(o.clone(), m);
        variances.insert(o.clone(), v);
    }
    Ok(Aggregated {
        inputs: members.iter().map(|g| pts[g[0]].clone()).collect(),
        counts: members.iter().map(Vec::len).collect(),
        means,
        variances,
        members,
    })
}

/// Train variance and expectation emulators from unaggregated replicates.
pub fn train_variance_emulators(
    runs: &RunTable,
    output_names: &[String],
    space: &ParameterSpace,
    opts: &TrainingOptions,
) -> Result<EmulatorSet> {
    opts.validate()?;
    for o in output_names {
        if !runs.has_output(o) {
            return Err(Error::Schema(format!("output `{o}` is not in the run table")));
        }
    }
    let agg = aggregate_replicates(runs, output_names, space)?;
    let rep: Vec<usize> = (0..agg.len()).filter(|&g| agg.counts[g] >= 2).collect();
    if rep.is_empty() {
        return Err(Error::InsufficientData(
            "every parameter set was run once; train a deterministic emulator instead".into(),
        ));
    }
    let need = 10 * space.dim();
    if rep.len() < need {
        return Err(Error::InsufficientData(format!(
            "variance emulation needs at least {need} parameter sets with two or more replicates, found {}",
            rep.len()
        )));
    }
    info!("Training variance emulators on {} replicated parameter sets...", rep.len());
    let rep_inputs: Vec<Vec<f64>> = rep.iter().map(|&g| agg.inputs[g].clone()).collect();
    let mut var_data = IndexMap::new();
    for o in output_names {
        let s2 = &agg.variances[o];
        let y: Vec<f64> = rep.iter().map(|&g| s2[g]).collect();
        let noise: Vec<f64> = rep
            .iter()
            .map(|&g| 2.0 * s2[g] * s2[g] / (agg.counts[g] - 1) as f64 * opts.kurtosis_multiplier)
            .collect();
        var_data.insert(o.clone(), (y, noise));
    }
    let mut variance = emulator_from_noisy_data(&rep_inputs, &var_data, space, opts)?;
    for em in variance.values_mut() {
        let mut prior = em.prior().clone();
        let note = if opts.kurtosis_multiplier == 1.0 {
            "sample-variance noise from normal theory (2 s^4 / (N - 1))".to_string()
        } else {
            format!(
                "sample-variance noise from normal theory scaled by {}",
                opts.kurtosis_multiplier
            )
        };
        prior.flags.push(note);
        *em = em.readjust(prior)?;
    }

    info!("Training expectation emulators on {} parameter sets...", agg.len());
    let mut mean_data = IndexMap::new();
    for o in output_names {
        let vhat = variance[o].expectation(&agg.inputs)?;
        let noise: Vec<f64> = vhat
            .iter()
            .zip(&agg.counts)
            .map(|(v, &n)| v.max(0.0) / n as f64)
            .collect();
        mean_data.insert(o.clone(), (agg.means[o].clone(), noise));
    }
    let expectation = emulator_from_noisy_data(&agg.inputs, &mean_data, space, opts)?;
    EmulatorSet::variance(expectation, variance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> ParameterSpace {
        ParameterSpace::new([("a", 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn aggregates_by_key_and_by_input() {
        let t = RunTable::from_space_points(&space(), vec![vec![0.1], vec![0.1], vec![0.5], vec![0.1]])
            .unwrap()
            .with_outputs(vec!["y".into()], vec![vec![1.0], vec![3.0], vec![2.0], vec![5.0]])
            .unwrap();
        let a = aggregate_replicates(&t, &["y".into()], &space()).unwrap();
        assert_eq!(a.counts, vec![3, 1]);
        assert_eq!(a.means["y"], vec![3.0, 2.0]);
        assert_eq!(a.variances["y"], vec![4.0, 0.0]);
        let keyed = t.with_replicate_key(vec![7, 7, 2, 9]).unwrap();
        let b = aggregate_replicates(&keyed, &["y".into()], &space()).unwrap();
        assert_eq!(b.counts, vec![2, 1, 1]);
        assert_eq!(b.means["y"], vec![2.0, 2.0, 5.0]);
    }

    #[test]
    fn single_runs_everywhere_is_an_error() {
        let t = RunTable::from_space_points(&space(), (0..20).map(|i| vec![i as f64 / 20.0]).collect())
            .unwrap()
            .with_outputs(vec!["y".into()], vec![vec![1.0]; 20])
            .unwrap();
        let r = train_variance_emulators(&t, &["y".into()], &space(), &TrainingOptions::default());
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn identical_replicates_behave_deterministically() {
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for i in 0..12 {
            let x = (i as f64 + 0.5) / 12.0;
            for _ in 0..3 {
                inputs.push(vec![x]);
                outputs.push(vec![(4.0 * x).sin()]);
            }
        }
        let t = RunTable::from_space_points(&space(), inputs)
            .unwrap()
            .with_outputs(vec!["y".into()], outputs)
            .unwrap();
        let set = train_variance_emulators(&t, &["y".into()], &space(), &TrainingOptions::default()).unwrap();
        let em = set.get("y").unwrap();
        let (e, v) = em.predict(&[vec![0.5 / 12.0]]).unwrap();
        assert!((e[0] - (4.0 * 0.5 / 12.0f64).sin()).abs() < 1e-6);
        assert!(v[0] < 1e-8);
    }
}
