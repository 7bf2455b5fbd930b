use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Everything needed to rerun an invocation. Written to stderr as one JSON
/// line so stdout stays pure CSV.
///
/// Two runs whose manifests agree on every field except `wall_time_seconds`
/// print identical CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub params: serde_json::Value,
    pub model_sha256: Option<String>,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub threads: usize,
    /// Oracle memory budget in bytes, for subcommands that use it.
    pub memory_budget: Option<u64>,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, params: serde_json::Value) -> Self {
        RunManifest {
            subcommand,
            params,
            model_sha256: None,
            seed: None,
            version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            memory_budget: None,
            wall_time_seconds: 0.0,
        }
    }

    pub fn finish(&mut self, elapsed: Duration) {
        self.wall_time_seconds = elapsed.as_secs_f64();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("manifest is plain data")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
