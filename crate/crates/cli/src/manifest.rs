use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use motion_fatigue::nn::checkpoint;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

/// SHA-256 of the compact JSON form. Object keys serialize sorted, so equal
/// configs hash equally regardless of how they were written.
pub fn config_hash(config: &Value) -> String {
    let text = serde_json::to_string(config).expect("json values always serialize");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &impl Serialize,
    outputs: Vec<String>,
) -> motion_fatigue::Result<RunManifest> {
    let config = serde_json::to_value(config)?;
    let mut versions = BTreeMap::new();
    versions.insert("motion-fatigue".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("checkpoint-format".to_string(), checkpoint::VERSION.to_string());
    let manifest = RunManifest {
        command: command.to_string(),
        argv: std::env::args().collect(),
        seed,
        config_hash: config_hash(&config),
        config,
        versions,
        outputs,
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(FILE_NAME), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"x": 1, "y": [2, 3]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"y": [2, 3], "x": 1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&json!({"x": 2, "y": [2, 3]})));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
