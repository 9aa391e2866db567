//! Run manifests: every study run writes one JSON manifest naming its
//! configuration, seeds, verdicts, and output files, plus a content hash
//! over everything except wall time. Reruns of an identical study produce
//! the identical hash, which is the determinism contract callers can check.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Verdict {
            name: name.to_string(),
            pass,
            detail,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{}: {} ({})",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub study: String,
    /// Fully resolved configuration, overrides applied.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Wall time is informational only and excluded from the hash.
    pub wall_ms: u64,
    pub verdicts: Vec<Verdict>,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub content_hash: String,
    /// True when the study aborted and the outputs are partial.
    pub incomplete: bool,
}

impl RunManifest {
    pub fn all_pass(&self) -> bool {
        !self.incomplete && self.verdicts.iter().all(|v| v.pass)
    }
}

/// Hash of the resolved config, seeds, verdict lines, and output bytes.
/// serde_json maps are sorted, so the config serialization is canonical.
pub fn content_hash(
    study: &str,
    config: &serde_json::Value,
    seeds: &[u64],
    verdicts: &[Verdict],
    outputs: &[(String, Vec<u8>)],
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(study.as_bytes());
    hasher.update([0u8]);
    hasher.update(config.to_string().as_bytes());
    hasher.update([0u8]);
    for s in seeds {
        hasher.update(s.to_le_bytes());
    }
    hasher.update([0u8]);
    for v in verdicts {
        hasher.update(v.render().as_bytes());
        hasher.update([0u8]);
    }
    for (name, bytes) in outputs {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(bytes);
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}
