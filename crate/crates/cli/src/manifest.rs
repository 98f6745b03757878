//! Run manifests: one `key=value` record per line.
//!
//! ```text
//! manifest_version=1
//! command=run hcs-vs-none
//! status=ok | failed
//! failed_stage=<stage>          (only when failed)
//! started_unix=<seconds>
//! finished_unix=<seconds>
//! checkpoint_format=CHVT v1
//! dataset_format=MCDS v1
//! config.<key>=<value>          (full resolved config)
//! stage.<name>=ok | failed
//! output.<relative path>=sha256:<hex>
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: u32 = 1;
pub const FILE_NAME: &str = "manifest.txt";

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?;
    let tmp = dir
        .map_or_else(PathBuf::new, Path::to_path_buf)
        .join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub started: u64,
    pub finished: Option<u64>,
    pub stages: Vec<(String, bool)>,
    /// Paths relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub failed_stage: Option<String>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: Vec<(String, String)>) -> Self {
        RunManifest {
            command: command.into(),
            config,
            started: unix_now(),
            finished: None,
            stages: Vec::new(),
            outputs: Vec::new(),
            failed_stage: None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.failed_stage.is_none()
    }

    pub fn record_stage(&mut self, name: &str, ok: bool) {
        self.stages.push((name.to_string(), ok));
        if !ok && self.failed_stage.is_none() {
            self.failed_stage = Some(name.to_string());
        }
    }

    pub fn add_output(&mut self, rel: impl Into<PathBuf>) {
        self.outputs.push(rel.into());
    }

    /// Renders the manifest, hashing every listed output under `root`.
    pub fn render(&self, root: &Path) -> Result<String> {
        let mut lines = vec![
            format!("manifest_version={MANIFEST_VERSION}"),
            format!("command={}", self.command),
            format!("status={}", if self.succeeded() { "ok" } else { "failed" }),
        ];
        if let Some(s) = &self.failed_stage {
            lines.push(format!("failed_stage={s}"));
        }
        lines.push(format!("started_unix={}", self.started));
        lines.push(format!("finished_unix={}", self.finished.unwrap_or_else(unix_now)));
        lines.push(format!(
            "checkpoint_format={} v{}",
            String::from_utf8_lossy(channelvit::models::checkpoint::MAGIC),
            channelvit::models::checkpoint::VERSION
        ));
        lines.push(format!(
            "dataset_format={} v{}",
            String::from_utf8_lossy(channelvit::data::MAGIC),
            channelvit::data::VERSION
        ));
        for (k, v) in &self.config {
            lines.push(format!("config.{k}={v}"));
        }
        for (name, ok) in &self.stages {
            lines.push(format!("stage.{name}={}", if *ok { "ok" } else { "failed" }));
        }
        for rel in &self.outputs {
            let path = root.join(rel);
            let bytes = fs::read(&path).with_context(|| format!("hashing {}", path.display()))?;
            lines.push(format!("output.{}=sha256:{}", rel.display(), sha256_hex(&bytes)));
        }
        let mut text = lines.join("\n");
        text.push('\n');
        Ok(text)
    }

    pub fn write(&mut self, root: &Path) -> Result<PathBuf> {
        self.finished = Some(unix_now());
        let path = root.join(FILE_NAME);
        write_atomic(&path, self.render(root)?.as_bytes())?;
        Ok(path)
    }
}

/// Value of `key` in rendered manifest text.
#[cfg(test)]
pub fn lookup<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn failed_stage_is_recorded_once() {
        let mut m = RunManifest::new("run x", Vec::new());
        m.record_stage("gen", true);
        m.record_stage("train", false);
        m.record_stage("eval", false);
        let dir = tempfile::tempdir().unwrap();
        let text = m.render(dir.path()).unwrap();
        assert_eq!(lookup(&text, "status"), Some("failed"));
        assert_eq!(lookup(&text, "failed_stage"), Some("train"));
        assert_eq!(lookup(&text, "stage.gen"), Some("ok"));
    }

    #[test]
    fn outputs_are_hashed_and_write_is_atomic() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), b"abc").unwrap();
        let mut m = RunManifest::new("run x", vec![("seed".into(), "3".into())]);
        m.record_stage("gen", true);
        m.add_output("a.csv");
        let path = m.write(dir.path()).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(lookup(&text, "config.seed"), Some("3"));
        assert!(lookup(&text, "output.a.csv").unwrap().starts_with("sha256:ba7816bf"));
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
