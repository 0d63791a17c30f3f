//! Per-stage run manifests and lineage checks.
//!
//! Every stage writes `manifest.json` into its directory last, after all
//! outputs are in place. Paths under the work directory are stored
//! relative to it; external inputs keep the path they were given.

use std::collections::HashSet;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use dmsrec_core::encoder::write_atomic;
use dmsrec_core::seed::sha256_hex;

use crate::error::{io, CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub config_fingerprint: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn is_internal(rel: &str) -> bool {
    let p = Path::new(rel);
    p.is_relative() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

pub fn resolve(work: &Path, rel: &str) -> PathBuf {
    if is_internal(rel) {
        work.join(rel)
    } else {
        PathBuf::from(rel)
    }
}

pub fn digest(work: &Path, rel: &str) -> CliResult<FileDigest> {
    let path = resolve(work, rel);
    let bytes = std::fs::read(&path).map_err(|e| io(&path, e))?;
    Ok(FileDigest {
        path: rel.to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

pub fn read_manifest(dir: &Path) -> CliResult<Option<RunManifest>> {
    let path = dir.join(MANIFEST_FILE);
    match std::fs::read(&path) {
        Ok(b) => serde_json::from_slice(&b)
            .map(Some)
            .map_err(|e| CliError::Lineage(format!("{} is unreadable: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io(&path, e)),
    }
}

pub fn write_manifest(dir: &Path, m: &RunManifest) -> CliResult<()> {
    let mut js = serde_json::to_vec_pretty(m).map_err(dmsrec_core::Error::from)?;
    js.push(b'\n');
    Ok(write_atomic(&dir.join(MANIFEST_FILE), &js)?)
}

/// Walks upstream from `inputs`: each internal file must be a recorded,
/// unmodified output of the manifest beside it, and every upstream
/// manifest's own inputs must still match what it consumed.
pub fn verify_lineage(work: &Path, inputs: &[String]) -> CliResult<()> {
    let mut seen = HashSet::new();
    let mut stack: Vec<String> = inputs.iter().filter(|r| is_internal(r)).cloned().collect();
    while let Some(rel) = stack.pop() {
        if !seen.insert(rel.clone()) {
            continue;
        }
        let dir = resolve(work, &rel).parent().map(Path::to_path_buf).unwrap_or_default();
        let m = read_manifest(&dir)?
            .ok_or_else(|| CliError::Lineage(format!("{rel} has no manifest; run its stage first")))?;
        let recorded = m
            .outputs
            .iter()
            .find(|o| o.path == rel)
            .ok_or_else(|| CliError::Lineage(format!("{rel} is not an output of stage {}", m.stage)))?;
        if digest(work, &rel)?.sha256 != recorded.sha256 {
            return Err(CliError::Lineage(format!("{rel} changed after stage {} wrote it", m.stage)));
        }
        for input in &m.inputs {
            let now = digest(work, &input.path)
                .map_err(|_| CliError::Lineage(format!("{} (input of {}) is missing", input.path, m.stage)))?;
            if now.sha256 != input.sha256 {
                return Err(CliError::Lineage(format!(
                    "stage {} is stale: {} changed since it ran",
                    m.stage, input.path
                )));
            }
            if is_internal(&input.path) {
                stack.push(input.path.clone());
            }
        }
    }
    Ok(())
}

/// True when the stage already ran with this configuration over these
/// exact inputs and its outputs are untouched.
pub fn up_to_date(work: &Path, dir: &Path, fingerprint: &str, inputs: &[FileDigest]) -> bool {
    let Ok(Some(m)) = read_manifest(dir) else {
        return false;
    };
    m.config_fingerprint == fingerprint
        && m.inputs == inputs
        && m
            .outputs
            .iter()
            .all(|o| digest(work, &o.path).is_ok_and(|d| d == *o))
}

/// Exclusive claim on a stage directory, released on drop.
#[derive(Debug)]
pub struct StageLock(PathBuf);

impl StageLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Runtime(format!(
                "{} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(io(&path, e)),
        }
    }
}

impl Drop for StageLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage(work: &Path, name: &str, inputs: &[&str], outputs: &[(&str, &str)]) {
        let dir = work.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        let mut outs = Vec::new();
        for (file, body) in outputs {
            std::fs::write(dir.join(file), body).unwrap();
            outs.push(digest(work, &format!("{name}/{file}")).unwrap());
        }
        let m = RunManifest {
            stage: name.into(),
            tool_version: "0".into(),
            config: serde_json::Value::Null,
            config_fingerprint: "f".into(),
            inputs: inputs.iter().map(|r| digest(work, r).unwrap()).collect(),
            outputs: outs,
            started_unix: 0,
            finished_unix: 0,
        };
        write_manifest(&dir, &m).unwrap();
    }

    #[test]
    fn lineage_catches_upstream_edits() {
        let tmp = tempfile::tempdir().unwrap();
        let w = tmp.path();
        stage(w, "a", &[], &[("x.txt", "1")]);
        stage(w, "b", &["a/x.txt"], &[("y.txt", "2")]);
        verify_lineage(w, &["b/y.txt".into()]).unwrap();

        std::fs::write(w.join("a/x.txt"), "tampered").unwrap();
        let err = verify_lineage(w, &["b/y.txt".into()]).unwrap_err();
        assert!(matches!(err, CliError::Lineage(_)), "{err}");
    }

    #[test]
    fn lineage_needs_manifests() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("a")).unwrap();
        std::fs::write(tmp.path().join("a/x.txt"), "1").unwrap();
        assert!(matches!(
            verify_lineage(tmp.path(), &["a/x.txt".into()]),
            Err(CliError::Lineage(_))
        ));
    }

    #[test]
    fn up_to_date_tracks_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let w = tmp.path();
        stage(w, "a", &[], &[("x.txt", "1")]);
        assert!(up_to_date(w, &w.join("a"), "f", &[]));
        assert!(!up_to_date(w, &w.join("a"), "g", &[]));
        std::fs::write(w.join("a/x.txt"), "changed").unwrap();
        assert!(!up_to_date(w, &w.join("a"), "f", &[]));
    }

    #[test]
    fn lock_is_exclusive() {
        let tmp = tempfile::tempdir().unwrap();
        let held = StageLock::acquire(tmp.path()).unwrap();
        assert!(StageLock::acquire(tmp.path()).is_err());
        drop(held);
        StageLock::acquire(tmp.path()).unwrap();
    }
}
