use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run a command: its name, the resolved settings,
/// seeds and the digests of the files it read.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub prng: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub timings: BTreeMap<String, f64>,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: &[String], config: serde_json::Value, seed: u64) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("master".to_owned(), seed);
        Self {
            manifest: RunManifest {
                command: command.to_owned(),
                argv: argv.to_vec(),
                version: vecmatch::VERSION.to_owned(),
                prng: vecmatch::rng::PRNG_NAME.to_owned(),
                config,
                seeds,
                inputs: Vec::new(),
                outputs: Vec::new(),
                timings: BTreeMap::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path)?;
        self.manifest.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_owned(), value);
    }

    pub fn output(&mut self, name: &str) {
        self.manifest.outputs.push(name.to_owned());
    }

    pub fn write(mut self, dir: &Path) -> CliResult<PathBuf> {
        self.manifest.timings.insert("elapsed_seconds".into(), self.started.elapsed().as_secs_f64());
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(path)
    }
}
