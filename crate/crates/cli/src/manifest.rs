use std::path::Path;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// One produced file, held in memory until the run has fully succeeded.
pub struct Output {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub wall_time_seconds: f64,
    pub config: RunConfig,
    pub outputs: Vec<OutputRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Write via a sibling temporary file and rename, so readers never see a partial file.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<()> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.partial"));
    let io = |source| CliError::Io {
        path: target.clone(),
        source,
    };
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, &target).map_err(io)
}

/// Writes every output, then the manifest last. Nothing is written unless all
/// outputs were produced.
pub fn commit(
    config: &RunConfig,
    outputs: Vec<Output>,
    elapsed: Duration,
) -> CliResult<RunManifest> {
    let dir = config.output_dir();
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut records = Vec::with_capacity(outputs.len());
    for out in &outputs {
        write_atomic(dir, &out.name, &out.bytes)?;
        records.push(OutputRecord {
            file: out.name.clone(),
            bytes: out.bytes.len(),
            sha256: sha256_hex(&out.bytes),
        });
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: elapsed.as_secs_f64(),
        config: config.clone(),
        outputs: records,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(dir, "manifest.json", &json)?;
    Ok(manifest)
}
