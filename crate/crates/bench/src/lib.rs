//! Shared fixtures for the benchmark targets.

use ivgp_core::engine::ramped_half_and_half;
use ivgp_core::problems::SyntheticProblem;
use ivgp_core::{ExprTree, GpConfig, IntervalEnv, Problem, SafetyMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_square_env() -> IntervalEnv {
    IntervalEnv::uniform(2, 0.0, 1.0)
}

pub fn keijzer10(seed: u64) -> Problem {
    SyntheticProblem::Keijzer10.generate(&mut rng(seed))
}

pub fn small_config(mode: SafetyMode) -> GpConfig {
    GpConfig {
        population_size: 64,
        generations: 10,
        mode,
        ..GpConfig::default()
    }
}

/// A ramped population over the unit square with the default depth range.
pub fn ramped_trees(n: usize, mode: SafetyMode, seed: u64) -> Vec<ExprTree> {
    let cfg = GpConfig { population_size: n, mode, ..GpConfig::default() };
    ramped_half_and_half(&cfg, &unit_square_env(), &mut rng(seed))
}
