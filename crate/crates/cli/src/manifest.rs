//! Run manifests: the resolved configuration plus content hashes of the
//! code and the data.

use std::path::Path;

use equidiag::objective::Sample;
use equidiag::training::Dataset;
use equidiag::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const SOURCE_HASH: &str = env!("EQUIDIAG_SOURCE_HASH");

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub source_hash: &'a str,
    pub dataset_hash: String,
    pub seed: u64,
    pub streams: Streams,
    pub threads: usize,
    pub config: &'a ExperimentConfig,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Streams {
    pub train: u64,
    pub measure: u64,
    pub probe: u64,
    pub data: u64,
    pub init: u64,
    pub analysis: u64,
}

impl Default for Streams {
    fn default() -> Self {
        use equidiag::rng::streams::*;
        Self { train: TRAIN, measure: MEASURE, probe: PROBE, data: DATA, init: INIT, analysis: ANALYSIS }
    }
}

fn hash_samples(h: &mut Sha256, samples: &[Sample]) {
    h.update((samples.len() as u64).to_le_bytes());
    for s in samples {
        for v in s.x.iter().chain(&s.y) {
            h.update(v.to_le_bytes());
        }
    }
}

/// SHA-256 over the little-endian bytes of both splits.
pub fn dataset_hash(data: &Dataset) -> String {
    let mut h = Sha256::new();
    hash_samples(&mut h, &data.train);
    hash_samples(&mut h, &data.heldout);
    hex::encode(h.finalize())
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig, data: &Dataset, artifacts: Vec<String>) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            source_hash: SOURCE_HASH,
            dataset_hash: dataset_hash(data),
            seed: config.seed,
            streams: Streams::default(),
            threads: rayon::current_num_threads(),
            config,
            artifacts,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
