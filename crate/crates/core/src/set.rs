//! Named collections of trained emulators and their joint implausibility.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::emulator::{implausibility_value, Discrepancy, Targets, TrainedEmulator};
use crate::error::{Error, Result};
use crate::space::ParameterSpace;

pub type EmulatorMap = IndexMap<String, TrainedEmulator>;

/// Emulators for a group of outputs.
///
/// A variance set pairs an emulator of each output's mean with an emulator
/// of its stochastic variance; implausibility then adds the predicted
/// variance to the denominator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EmulatorSet {
    Deterministic { emulators: EmulatorMap },
    Variance { expectation: EmulatorMap, variance: EmulatorMap },
}

impl EmulatorSet {
    pub fn deterministic(emulators: EmulatorMap) -> Result<Self> {
        if emulators.is_empty() {
            return Err(Error::Argument("an emulator set needs at least one emulator".into()));
        }
        let set = EmulatorSet::Deterministic { emulators };
        set.check_space()?;
        Ok(set)
    }

    pub fn variance(expectation: EmulatorMap, variance: EmulatorMap) -> Result<Self> {
        if expectation.is_empty() {
            return Err(Error::Argument("an emulator set needs at least one emulator".into()));
        }
        if !expectation.keys().eq(variance.keys()) {
            return Err(Error::Schema(
                "variance and expectation emulators must cover the same outputs".into(),
            ));
        }
        let set = EmulatorSet::Variance { expectation, variance };
        set.check_space()?;
        Ok(set)
    }

    fn check_space(&self) -> Result<()> {
        let names = self.space().names();
        let all = self.mean_map().values().chain(self.variance_map().into_iter().flat_map(|m| m.values()));
        for em in all {
            if em.space().names() != names {
                return Err(Error::Schema("emulators in a set must share parameter names".into()));
            }
        }
        Ok(())
    }

    pub fn is_variance(&self) -> bool {
        matches!(self, EmulatorSet::Variance { .. })
    }

    /// Emulators of output means (the only emulators of a deterministic set).
    pub fn mean_map(&self) -> &EmulatorMap {
        match self {
            EmulatorSet::Deterministic { emulators } => emulators,
            EmulatorSet::Variance { expectation, .. } => expectation,
        }
    }

    pub fn variance_map(&self) -> Option<&EmulatorMap> {
        match self {
            EmulatorSet::Deterministic { .. } => None,
            EmulatorSet::Variance { variance, .. } => Some(variance),
        }
    }

    pub fn output_names(&self) -> Vec<String> {
        self.mean_map().keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.mean_map().len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_map().is_empty()
    }

    pub fn get(&self, output: &str) -> Option<&TrainedEmulator> {
        self.mean_map().get(output)
    }

    /// Parameter space of the first emulator; all members share names.
    pub fn space(&self) -> &ParameterSpace {
        self.mean_map().values().next().expect("non-empty set").space()
    }

    /// Keep only the listed outputs, in the given order.
    pub fn subset(&self, outputs: &[String]) -> Result<EmulatorSet> {
        let pick = |m: &EmulatorMap| -> Result<EmulatorMap> {
            outputs
                .iter()
                .map(|o| {
                    m.get(o)
                        .cloned()
                        .map(|e| (o.clone(), e))
                        .ok_or_else(|| Error::Schema(format!("no emulator for output `{o}`")))
                })
                .collect()
        };
        match self {
            EmulatorSet::Deterministic { emulators } => EmulatorSet::deterministic(pick(emulators)?),
            EmulatorSet::Variance { expectation, variance } => {
                EmulatorSet::variance(pick(expectation)?, pick(variance)?)
            }
        }
    }

    /// Apply `f` to every mean emulator, leaving variance emulators alone.
    pub fn map_mean<F>(&self, f: F) -> Result<EmulatorSet>
    where
        F: Fn(&TrainedEmulator) -> Result<TrainedEmulator>,
    {
        let apply = |m: &EmulatorMap| -> Result<EmulatorMap> {
            m.iter().map(|(k, e)| Ok((k.clone(), f(e)?))).collect()
        };
        Ok(match self {
            EmulatorSet::Deterministic { emulators } => EmulatorSet::Deterministic {
                emulators: apply(emulators)?,
            },
            EmulatorSet::Variance { expectation, variance } => EmulatorSet::Variance {
                expectation: apply(expectation)?,
                variance: variance.clone(),
            },
        })
    }

    /// Set the same discrepancy on every mean emulator.
    pub fn with_discrepancies(&self, d: &IndexMap<String, Discrepancy>) -> Result<EmulatorSet> {
        self.map_mean(|e| {
            Ok(match d.get(e.output_name()) {
                Some(x) => e.clone().with_discrepancy(*x),
                None => e.clone(),
            })
        })
    }

    /// Predicted stochastic variance of `output` at the points, clamped at
    /// zero, or `None` for deterministic sets.
    pub fn stochastic_variance(&self, output: &str, points: &[Vec<f64>]) -> Result<Option<Vec<f64>>> {
        match self.variance_map() {
            None => Ok(None),
            Some(v) => {
                let em = v
                    .get(output)
                    .ok_or_else(|| Error::Schema(format!("no variance emulator for `{output}`")))?;
                Ok(Some(em.expectation(points)?.into_iter().map(|x| x.max(0.0)).collect()))
            }
        }
    }

    /// Adjusted mean moments of `output` plus the predicted stochastic
    /// variance, as `(expectation, emulator variance, stochastic variance)`.
    pub fn moments(&self, output: &str, points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let em = self
            .get(output)
            .ok_or_else(|| Error::Schema(format!("no emulator for output `{output}`")))?;
        let (e, v) = em.predict(points)?;
        let s = self
            .stochastic_variance(output, points)?
            .unwrap_or_else(|| vec![0.0; points.len()]);
        Ok((e, v, s))
    }

    /// Implausibility of every point for each output, indexed `[output][point]`.
    pub fn implausibilities(&self, points: &[Vec<f64>], targets: &Targets) -> Result<Vec<Vec<f64>>> {
        self.mean_map()
            .iter()
            .map(|(name, em)| {
                let t = targets
                    .get(name)
                    .ok_or_else(|| Error::Schema(format!("no target given for output `{name}`")))?;
                let (e, v, s) = self.moments(name, points)?;
                let disc = em.discrepancy_var();
                Ok((0..points.len())
                    .map(|i| implausibility_value(e[i], v[i], t, disc + s[i]))
                    .collect())
            })
            .collect()
    }

    /// Per point, the `nth` largest implausibility across outputs. `nth` is
    /// clamped to the number of outputs.
    pub fn nth_implausibility(&self, points: &[Vec<f64>], targets: &Targets, nth: usize) -> Result<Vec<f64>> {
        if nth == 0 {
            return Err(Error::Argument("nth must be at least 1".into()));
        }
        let imps = self.implausibilities(points, targets)?;
        Ok(nth_largest_columns(&imps, points.len(), nth))
    }
}

/// For each column `j` of `rows[i][j]`, the `nth` largest entry.
pub(crate) fn nth_largest_columns(rows: &[Vec<f64>], n_cols: usize, nth: usize) -> Vec<f64> {
    let k = nth.min(rows.len()).max(1);
    (0..n_cols)
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(|a, b| b.total_cmp(a));
            col[k - 1]
        })
        .collect()
}

/// Measure across several waves: each wave's nth-maximum implausibility,
/// then the maximum over waves.
pub fn wave_implausibility(
    waves: &[EmulatorSet],
    points: &[Vec<f64>],
    targets: &Targets,
    nth: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0f64; points.len()];
    for set in waves {
        let imp = set.nth_implausibility(points, targets, nth)?;
        for (o, v) in out.iter_mut().zip(imp) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{Correlator, KernelKind};
    use crate::emulator::{adjust_points, EmulatorPrior, Target};
    use proptest::prelude::*;

    fn const_em(name: &str, mean: f64) -> TrainedEmulator {
        let s = ParameterSpace::new([("a", 0.0, 1.0)]).unwrap();
        let p = EmulatorPrior::constant(name, s, mean, 1.0, Correlator::new(KernelKind::ExpSq, 0.01, 0.0).unwrap()).unwrap();
        adjust_points(p, vec![vec![0.0]], vec![mean], None).unwrap()
    }

    #[test]
    fn nth_order_statistics() {
        let rows = vec![vec![1.0], vec![2.0], vec![4.0]];
        assert_eq!(nth_largest_columns(&rows, 1, 1), vec![4.0]);
        assert_eq!(nth_largest_columns(&rows, 1, 2), vec![2.0]);
        assert_eq!(nth_largest_columns(&rows, 1, 3), vec![1.0]);
    }

    #[test]
    fn set_implausibility_matches_single() {
        let mut m = EmulatorMap::new();
        m.insert("y".into(), const_em("y", 2.0));
        let set = EmulatorSet::deterministic(m).unwrap();
        let mut t = Targets::new();
        t.insert("y".into(), Target::value(0.0, 1.0).unwrap());
        let pts = vec![vec![0.5], vec![0.9]];
        let a = set.nth_implausibility(&pts, &t, 1).unwrap();
        let b = set.get("y").unwrap().implausibility_points(&pts, &t["y"], None).unwrap();
        assert_eq!(a, b);
        // prior variance 1, observation variance 1
        assert!((a[0] - 2.0 / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn missing_target_is_schema_error() {
        let mut m = EmulatorMap::new();
        m.insert("y".into(), const_em("y", 2.0));
        let set = EmulatorSet::deterministic(m).unwrap();
        assert!(matches!(
            set.nth_implausibility(&[vec![0.5]], &Targets::new(), 1),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn variance_set_adds_stochastic_variance() {
        let mut e = EmulatorMap::new();
        e.insert("y".into(), const_em("y", 2.0));
        let mut v = EmulatorMap::new();
        v.insert("y".into(), const_em("y", 3.0));
        let set = EmulatorSet::variance(e, v).unwrap();
        let mut t = Targets::new();
        t.insert("y".into(), Target::value(0.0, 1.0).unwrap());
        let i = set.nth_implausibility(&[vec![0.5]], &t, 1).unwrap();
        assert!((i[0] - 2.0 / 5f64.sqrt()).abs() < 1e-9);
        let json = serde_json::to_string(&set).unwrap();
        let back: EmulatorSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
    }

    proptest! {
        #[test]
        fn nth_is_monotone(rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 5), 1..6)) {
            let m = rows.len();
            for n in 1..m {
                let a = nth_largest_columns(&rows, 5, n);
                let b = nth_largest_columns(&rows, 5, n + 1);
                for j in 0..5 {
                    prop_assert!(b[j] <= a[j]);
                }
            }
        }
    }
}
