#![allow(dead_code)]

use gridrisk::features::{split_tracts, Dataset, FeatureMask, SplitAssignment};
use gridrisk::ingest::WeatherSchema;
use gridrisk::synth::{generate_world, World, WorldSpec};
use gridrisk::train::RunConfig;
use gridrisk::Diagnostics;

pub fn world_and_dataset(spec: &WorldSpec) -> (World, Dataset, Diagnostics) {
    let world = generate_world(spec).unwrap();
    let mut diag = Diagnostics::new();
    let dataset = Dataset::prepare(
        &world.raw_data(),
        &WeatherSchema::default(),
        FeatureMask::ALL,
        None,
        &mut diag,
    )
    .unwrap();
    (world, dataset, diag)
}

pub fn small_spec(seed: u64) -> WorldSpec {
    WorldSpec {
        seed,
        n_tracts: 20,
        n_hours: 300,
        storm_rate: 15.0,
        outage_fraction: 0.03,
        ..WorldSpec::default()
    }
}

/// Narrow networks and few epochs for quick checks.
pub fn quick_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        epochs: 3,
        batch_size: 256,
        n_runs: 1,
        hidden: vec![16, 8],
        base_hidden: vec![16, 8],
        cond_hidden: vec![8, 4],
        head_hidden: vec![4],
        ..RunConfig::default()
    }
}

pub fn split(dataset: &Dataset, seed: u64) -> SplitAssignment {
    split_tracts(&dataset.tract_ids(), seed).unwrap()
}
