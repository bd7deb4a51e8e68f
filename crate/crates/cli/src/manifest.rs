//! Run manifests written next to every command's outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub const MANIFEST_SCHEMA: &str = "fna-run-manifest/v1";

/// JSON Schema the manifests conform to.
#[cfg(test)]
pub const MANIFEST_JSON_SCHEMA: &str = include_str!("../schema/run_manifest.schema.json");

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    /// True when the seed was drawn at random because none was given.
    pub seed_generated: bool,
    pub threads: usize,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
    pub exit_code: i32,
}

/// Collects outputs while a command runs.
pub struct Recorder {
    command: String,
    out_dir: PathBuf,
    seed: u64,
    seed_generated: bool,
    start: Instant,
    outputs: Vec<String>,
}

impl Recorder {
    pub fn new(command: &str, out_dir: &Path, seed: u64, seed_generated: bool) -> Self {
        Self {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            seed,
            seed_generated,
            start: Instant::now(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Replaces the recorded seed, e.g. with one taken from a config file.
    pub fn set_seed(&mut self, seed: u64, generated: bool) {
        self.seed = seed;
        self.seed_generated = generated;
    }

    pub fn seed_generated(&self) -> bool {
        self.seed_generated
    }

    /// Path of `name` inside the output directory, recorded as an output.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let path = self.out_dir.join(name);
        self.outputs.push(path.display().to_string());
        path
    }

    pub fn finish(self, config: serde_json::Value, exit_code: i32) -> anyhow::Result<PathBuf> {
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA,
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            seed_generated: self.seed_generated,
            threads: rayon::current_num_threads(),
            config,
            outputs: self.outputs,
            wall_time_secs: self.start.elapsed().as_secs_f64(),
            exit_code,
        };
        let path = self.out_dir.join(format!("{}_manifest.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}
