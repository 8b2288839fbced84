#![allow(dead_code)]

use spikecl::data::{generate_synthetic, Dataset, SyntheticSpec};
use spikecl::train::RunConfig;

pub fn synthetic(classes: usize, per_class: usize, temporal: bool, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        classes,
        samples_per_class: per_class,
        image_side: 8,
        temporal,
        seed,
        event_steps: 4,
        channels: 3,
        noise: 0.1,
    })
    .unwrap()
}

/// Run config JSON for tiny-sew on inline synthetic data.
pub fn run_json(family: &str, extra_loss: &str, epochs: usize, seed: u64, temporal: bool, augment: &str) -> String {
    format!(
        r#"{{
  "loss": {{"family": "{family}"{extra_loss}}},
  "optim": {{"epochs": {epochs}, "batch_size": 16, "seed": {seed}}},
  "time_steps": 3,
  "augment": {{"preset": "{augment}"}},
  "data": {{
    "train": {{"synthetic": {{"classes": 3, "samples_per_class": 16, "image_side": 8, "temporal": {temporal}, "seed": 1}}}},
    "eval": {{"synthetic": {{"classes": 3, "samples_per_class": 8, "image_side": 8, "temporal": {temporal}, "seed": 2}}}}
  }}
}}"#
    )
}

pub fn run_config(family: &str, extra_loss: &str, epochs: usize, seed: u64) -> RunConfig {
    RunConfig::from_json(&run_json(family, extra_loss, epochs, seed, false, "standard")).unwrap()
}
