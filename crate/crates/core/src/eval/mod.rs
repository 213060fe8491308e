//! Phantoms with known deformations, landmark statistics and seed sweeps.

pub mod metrics;
pub mod phantom;
pub mod sweep;

pub use metrics::{
    failure_rate, propagation_consensus, propagation_discrepancy, separating_threshold, tre,
    uncertainty_correlation, TreStats,
};
pub use phantom::{
    compression_amplitude_for_det, generate_phantom, Phantom, PhantomKind, PhantomSpec, TrueField,
    MIN_DET, NUM_LANDMARKS,
};
pub use sweep::{
    assemble_sweep, read_sweep, run_seed, run_sweep, sweep_json, write_sweep_outputs, SeedResult,
    Strategy, SweepInputs, SweepResult, FAILURE_TABLE_FILE, SCATTER_FILE, SEED_TABLE_FILE,
    SWEEP_FILE,
};
