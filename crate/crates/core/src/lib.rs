//! Bayes linear emulation and history matching for expensive simulators.
//!
//! The crate trains fast statistical surrogates from simulator runs,
//! validates them, rules out implausible regions of parameter space and
//! proposes new space-filling designs inside what remains.

pub mod analysis;
pub mod correlation;
pub mod design;
pub mod diagnostics;
pub mod emulator;
pub mod proposal;
pub mod error;
pub mod rng;
pub mod set;
pub mod sims;
pub mod space;
pub mod table;
pub mod training;
pub mod variance;

pub use correlation::{default_correlator, Correlator, KernelKind};
pub use design::{enclosing_hyperrectangle, latin_hypercube, maximin_thin};
pub use emulator::{
    adjust, adjust_points, target_moments, BasisFunction, Covariance, Discrepancy, EmulatorPrior, Target,
    Targets, TrainedEmulator,
};
pub use error::{Error, Result};
pub use set::{wave_implausibility, EmulatorMap, EmulatorSet};
pub use sims::{Simulator, SirsGillespie, SirsOde};
pub use space::{Parameter, ParameterSpace};
pub use table::RunTable;
pub use training::{emulator_from_data, BetaMode, TrainingOptions};
pub use diagnostics::{validation_diagnostics, DiagnosticReport};
pub use proposal::{generate_design, generate_new_design, AcceptanceMeasure, ImplausibilityMeasure, Proposal, ProposalOptions};
pub use analysis::{run_wave, space_removed, lattice_summary, match_count, slice, WaveOptions, WaveState, StoppingRule};
pub use variance::train_variance_emulators;
