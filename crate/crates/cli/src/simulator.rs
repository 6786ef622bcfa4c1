//! Simulators named in a config, including external programs.

use std::io::Write;
use std::process::{Command, Stdio};

use histmatch_core::rng::derive_seed;
use histmatch_core::sims::{SirsGillespie, SirsOde};
use histmatch_core::{Error, ParameterSpace, Result, RunTable, Simulator};

use crate::config::SimulatorSpec;

/// Runs an external program once per batch. The design goes to its stdin
/// as CSV (parameter columns only) and runs are read back from its stdout,
/// in the same CSV layout plus one column per output. The batch seed is
/// passed in `HISTMATCH_SEED`.
#[derive(Clone, Debug)]
pub struct CommandSimulator {
    pub program: String,
    pub args: Vec<String>,
    pub outputs: Vec<String>,
    pub space: ParameterSpace,
    pub workers: usize,
}

impl CommandSimulator {
    fn run_batch(&self, design: &RunTable, seed: u64) -> Result<RunTable> {
        let mut input = Vec::new();
        design.inputs_only().write_csv(&mut input)?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .env("HISTMATCH_SEED", seed.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Simulator(format!("cannot start `{}`: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let out = child
            .wait_with_output()
            .map_err(|e| Error::Simulator(format!("`{}`: {e}", self.program)))?;
        writer
            .join()
            .expect("stdin writer")
            .map_err(|e| Error::Simulator(format!("writing to `{}`: {e}", self.program)))?;
        if !out.status.success() {
            return Err(Error::Simulator(format!("`{}` exited with {}", self.program, out.status)));
        }
        let runs = RunTable::read_csv(out.stdout.as_slice(), &self.space)
            .map_err(|e| Error::Simulator(format!("`{}` wrote unreadable output: {e}", self.program)))?;
        for o in &self.outputs {
            if !runs.has_output(o) {
                return Err(Error::Simulator(format!("`{}` did not report output `{o}`", self.program)));
            }
        }
        Ok(runs)
    }
}

impl Simulator for CommandSimulator {
    fn output_names(&self) -> Vec<String> {
        self.outputs.clone()
    }

    fn simulate(&self, design: &RunTable, seed: u64) -> Result<RunTable> {
        let n = design.len();
        let chunk = n.div_ceil(self.workers.max(1)).max(1);
        let batches: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(chunk).map(<[usize]>::to_vec).collect();
        let results: Vec<Result<RunTable>> = std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .iter()
                .enumerate()
                .map(|(b, rows)| {
                    let part = design.select_rows(rows);
                    let seed = derive_seed(seed, &format!("batch{b}"));
                    s.spawn(move || self.run_batch(&part, seed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("simulator thread")).collect()
        });
        let mut acc: Option<RunTable> = None;
        for r in results {
            let r = r?;
            acc = Some(match acc {
                None => r,
                Some(a) => a.concat(&r)?,
            });
        }
        acc.ok_or_else(|| Error::Simulator("empty design".into()))
    }
}

pub fn build(spec: &SimulatorSpec, space: &ParameterSpace, workers: usize) -> Box<dyn Simulator> {
    match spec {
        SimulatorSpec::SirsOde => Box::new(SirsOde),
        SimulatorSpec::SirsGillespie { reps } => Box::new(SirsGillespie { reps: *reps }),
        SimulatorSpec::Command { program, args, outputs } => Box::new(CommandSimulator {
            program: program.clone(),
            args: args.clone(),
            outputs: outputs.clone(),
            space: space.clone(),
            workers,
        }),
    }
}
