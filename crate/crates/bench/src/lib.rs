//! Shared fixtures for the benchmarks.

use histmatch_core::sims::{make_wave0, sirs_space};
use histmatch_core::{emulator_from_data, latin_hypercube, EmulatorSet, RunTable, TrainingOptions};

pub fn sirs_outputs() -> Vec<String> {
    ["nS", "nI", "nR"].iter().map(|s| s.to_string()).collect()
}

/// Wave-one SIRS training runs for a seed.
pub fn sirs_training(seed: u64) -> RunTable {
    make_wave0(&sirs_space(), 30, 60, seed).expect("demo design").0
}

/// Emulators trained on [`sirs_training`].
pub fn sirs_emulators(seed: u64) -> EmulatorSet {
    emulator_from_data(&sirs_training(seed), &sirs_outputs(), &sirs_space(), &TrainingOptions::default())
        .expect("demo training")
}

/// `n` points spread over the SIRS box.
pub fn sirs_points(n: usize, seed: u64) -> Vec<Vec<f64>> {
    latin_hypercube(n, &sirs_space(), seed).expect("design").inputs().to_vec()
}
