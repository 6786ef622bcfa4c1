//! The JSON run configuration.

use std::path::Path;

use histmatch_core::analysis::{StoppingRule, WaveOptions};
use histmatch_core::sims::{sirs_space, sirs_targets};
use histmatch_core::{Discrepancy, Error, Parameter, ParameterSpace, ProposalOptions, Result, Targets, TrainingOptions};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Wave sizes and validation policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveSettings {
    pub n_train: usize,
    pub n_valid: usize,
    pub max_type_one_fraction: f64,
    pub carry_over: bool,
}

impl Default for WaveSettings {
    fn default() -> Self {
        let w = WaveOptions::default();
        WaveSettings {
            n_train: w.n_train,
            n_valid: w.n_valid,
            max_type_one_fraction: w.max_type_one_fraction,
            carry_over: w.carry_over,
        }
    }
}

/// Where simulator runs come from during `wave`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SimulatorSpec {
    SirsOde,
    SirsGillespie {
        reps: usize,
    },
    /// An external program that reads a design as CSV on stdin and writes
    /// runs as CSV on stdout.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        outputs: Vec<String>,
    },
}

impl SimulatorSpec {
    pub fn output_names(&self) -> Vec<String> {
        match self {
            SimulatorSpec::Command { outputs, .. } => outputs.clone(),
            _ => ["nS", "nI", "nR"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Parameter name to `[lower, upper]`, in column order.
    pub parameters: IndexMap<String, [f64; 2]>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub targets: Targets,
    /// Outputs to emulate; every targeted output when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub discrepancies: IndexMap<String, Discrepancy>,
    #[serde(default)]
    pub training: TrainingOptions,
    #[serde(default)]
    pub proposal: ProposalOptions,
    #[serde(default)]
    pub stopping: StoppingRule,
    #[serde(default)]
    pub wave: WaveSettings,
    #[serde(default)]
    pub variance_mode: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator: Option<SimulatorSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Config {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Argument(format!("cannot read config {}: {e}", path.display())))?;
        Config::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Config> {
        let c: Config = serde_json::from_str(text).map_err(|e| Error::Schema(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn space(&self) -> Result<ParameterSpace> {
        ParameterSpace::from_parameters(
            self.parameters
                .iter()
                .map(|(name, [lower, upper])| Parameter {
                    name: name.clone(),
                    lower: *lower,
                    upper: *upper,
                })
                .collect(),
        )
    }

    /// Checks that need nothing beyond the file itself.
    pub fn validate(&self) -> Result<()> {
        self.space()?;
        self.training.validate()?;
        self.proposal.validate()?;
        self.stopping.validate()?;
        if let Some(sim) = &self.simulator {
            let known = sim.output_names();
            if known.is_empty() {
                return Err(Error::Schema("the simulator declares no outputs".into()));
            }
            for o in self.targets.keys().chain(self.discrepancies.keys()) {
                if !known.contains(o) {
                    return Err(Error::Schema(format!("`{o}` is not an output of the simulator")));
                }
            }
            if let SimulatorSpec::SirsGillespie { reps: 0 } = sim {
                return Err(Error::Argument("the Gillespie simulator needs at least one replicate".into()));
            }
        }
        if let Some(q) = &self.outputs {
            if q.is_empty() {
                return Err(Error::Schema("`outputs` must name at least one output".into()));
            }
            if !self.targets.is_empty() {
                for o in q {
                    if !self.targets.contains_key(o) {
                        return Err(Error::Schema(format!("output `{o}` has no target")));
                    }
                }
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Argument("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Outputs to emulate given the columns available.
    pub fn emulated_outputs(&self, available: &[String]) -> Result<Vec<String>> {
        let wanted: Vec<String> = match (&self.outputs, self.targets.is_empty()) {
            (Some(q), _) => q.clone(),
            (None, false) => self.targets.keys().cloned().collect(),
            (None, true) => available.to_vec(),
        };
        for o in &wanted {
            if !available.contains(o) {
                return Err(Error::Schema(format!("output `{o}` is not a column of the run table")));
            }
        }
        Ok(wanted)
    }

    pub fn wave_options(&self) -> WaveOptions {
        WaveOptions {
            n_train: self.wave.n_train,
            n_valid: self.wave.n_valid,
            variance_mode: self.variance_mode,
            outputs: self.outputs.clone(),
            max_type_one_fraction: self.wave.max_type_one_fraction,
            carry_over: self.wave.carry_over,
            training: self.training.clone(),
            proposal: self.proposal.clone(),
            stopping: self.stopping.clone(),
            seed: self.seed,
        }
    }

    /// The SIRS demonstration set-up.
    pub fn sirs_demo(stochastic: bool) -> Config {
        let parameters = sirs_space()
            .parameters()
            .iter()
            .map(|p| (p.name.clone(), [p.lower, p.upper]))
            .collect();
        let mut c = Config {
            parameters,
            targets: sirs_targets(),
            outputs: None,
            discrepancies: IndexMap::new(),
            training: TrainingOptions::default(),
            proposal: ProposalOptions::default(),
            stopping: StoppingRule::default(),
            wave: WaveSettings::default(),
            variance_mode: stochastic,
            simulator: Some(SimulatorSpec::SirsOde),
            seed: 0,
            workers: None,
        };
        if stochastic {
            c.simulator = Some(SimulatorSpec::SirsGillespie { reps: 10 });
            c.wave.n_train = 40;
            c.wave.n_valid = 20;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_config_round_trips() {
        let c = Config::sirs_demo(false);
        let back = Config::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn both_target_forms_parse() {
        let c = Config::from_json(
            r#"{"parameters": {"a": [0, 1]},
                "targets": {"y": [1, 2], "z": {"val": 3, "sigma": 0.5}}}"#,
        )
        .unwrap();
        assert_eq!(c.targets.len(), 2);
    }

    #[test]
    fn unknown_fields_and_outputs_are_schema_errors() {
        let bad = [
            r#"{"parameters": {"a": [0, 1]}, "colour": 1}"#,
            r#"{"parameters": {"a": [0, 1]}, "targets": {"q": [0, 1]}, "simulator": {"kind": "sirs-ode"}}"#,
            r#"{"parameters": {"a": [0, 1]}, "targets": {"y": [0, 1]}, "outputs": ["z"]}"#,
        ];
        for b in bad {
            assert!(matches!(Config::from_json(b), Err(Error::Schema(_))), "{b}");
        }
        assert!(Config::from_json(r#"{"parameters": {"a": [1, 0]}}"#).is_err());
    }
}
