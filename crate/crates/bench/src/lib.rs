//! Benchmark fixtures.

use featgraph::synth::{desk_scenario, generate_dataset};
use featgraph::Dataset;

/// Records from the twelve-feature desk scenario.
pub fn desk_data(n: usize, seed: u64) -> Dataset {
    generate_dataset(&desk_scenario(), n, seed).expect("desk scenario generates")
}
