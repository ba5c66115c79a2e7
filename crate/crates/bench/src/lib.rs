//! Fixtures shared by the benchmarks.

use fleetmon_core::data::{apply_normalization, fit_normalization, simulate_fleet, ConstantFeaturePolicy, SimConfig};
use fleetmon_core::{ArchitectureSpec, TurbineDataset};

/// A normalized single-unit dataset with `rows` rows.
pub fn normalized_unit(rows: usize, seed: u64) -> TurbineDataset {
    let cfg = SimConfig {
        rows_per_unit: vec![rows],
        seed,
        ..SimConfig::default()
    };
    let fleet = simulate_fleet(&cfg).expect("default simulation is valid");
    let ds = &fleet.datasets[0];
    let stats = fit_normalization(ds, ConstantFeaturePolicy::Drop).expect("features vary");
    apply_normalization(ds, &stats).expect("stats fit this dataset")
}

/// `name` is `a1` or `a2`, sized for `input_dim` features.
pub fn arch(name: &str, input_dim: usize) -> ArchitectureSpec {
    ArchitectureSpec::preset(name)
        .expect("known preset")
        .with_input_dim(input_dim)
        .with_output_scale(2050.0)
}
