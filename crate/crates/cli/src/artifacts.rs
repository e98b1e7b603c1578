//! Atomic writes, config-hash stamps, the run lock and the run log.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Writes through `<name>.tmp` and a rename, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    let mut f = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// JSON artifact carrying the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub stage: String,
    pub version: String,
    pub body: T,
}

impl<T: Serialize> Stamped<T> {
    pub fn new(config_hash: &str, stage: &str, body: T) -> Self {
        Stamped {
            config_hash: config_hash.into(),
            stage: stage.into(),
            version: VERSION.into(),
            body,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self).map_err(crowdspeak::Error::from)?;
        write_atomic(path, &bytes)
    }
}

impl<T: DeserializeOwned> Stamped<T> {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::BadInput {
            path: path.into(),
            msg: e.to_string(),
        })
    }
}

/// Only the stamp of any artifact, whatever its body.
#[derive(Debug, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
}

pub fn read_stamp(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let s: Stamp = serde_json::from_str(&text).map_err(|e| CliError::BadInput {
        path: path.into(),
        msg: e.to_string(),
    })?;
    Ok(s.config_hash)
}

/// Exclusive hold on an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub const FILE: &'static str = ".crowdspeak.lock";

    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(Self::FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(path)),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogEntry {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub wall_seconds: f64,
    pub status: String,
}

/// Appends one JSON line to `dir/run.log`.
pub fn append_log(dir: &Path, entry: &LogEntry) -> Result<()> {
    let path = dir.join("run.log");
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(&path, e))?;
    let line = serde_json::to_string(entry).map_err(crowdspeak::Error::from)?;
    writeln!(f, "{line}").map_err(|e| CliError::io(&path, e))
}

const FV_MAGIC: &[u8; 5] = b"CSFV1";

/// Per-example Fisher vectors (`None` = nothing selected) with the config hash.
pub fn write_fv_matrix(
    path: &Path,
    config_hash: &str,
    dims: usize,
    rows: &[Option<Vec<f64>>],
) -> Result<()> {
    let mut out = Vec::with_capacity(FV_MAGIC.len() + 72 + rows.len() * (1 + 4 * dims));
    out.extend_from_slice(FV_MAGIC);
    let mut h = [0u8; 64];
    let hb = config_hash.as_bytes();
    h[..hb.len().min(64)].copy_from_slice(&hb[..hb.len().min(64)]);
    out.extend_from_slice(&h);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dims as u32).to_le_bytes());
    for r in rows {
        match r {
            Some(v) => {
                if v.len() != dims {
                    return Err(CliError::Validation(format!(
                        "FV row has {} dims, expected {dims}",
                        v.len()
                    )));
                }
                out.push(1);
                for &x in v {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            None => out.push(0),
        }
    }
    write_atomic(path, &out)
}

pub struct FvMatrix {
    pub config_hash: String,
    pub dims: usize,
    pub rows: Vec<Option<Vec<f64>>>,
}

pub fn read_fv_matrix(path: &Path) -> Result<FvMatrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    let bad = |offset: usize, msg: &str| CliError::BadInput {
        path: path.into(),
        msg: format!("byte offset {offset}: {msg}"),
    };
    if bytes.len() < 77 || &bytes[..5] != FV_MAGIC {
        return Err(bad(0, "bad magic, expected CSFV1"));
    }
    let config_hash = String::from_utf8_lossy(&bytes[5..69])
        .trim_end_matches('\0')
        .to_string();
    let n = u32::from_le_bytes(bytes[69..73].try_into().unwrap()) as usize;
    let dims = u32::from_le_bytes(bytes[73..77].try_into().unwrap()) as usize;
    let mut pos = 77;
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        match bytes.get(pos) {
            Some(0) => {
                rows.push(None);
                pos += 1;
            }
            Some(1) => {
                let end = pos + 1 + 4 * dims;
                if end > bytes.len() {
                    return Err(bad(pos, &format!("truncated row {k} of {n}")));
                }
                let v = bytes[pos + 1..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect();
                rows.push(Some(v));
                pos = end;
            }
            Some(_) => return Err(bad(pos, "bad row flag")),
            None => return Err(bad(pos, &format!("truncated row {k} of {n}"))),
        }
    }
    Ok(FvMatrix {
        config_hash,
        dims,
        rows,
    })
}
