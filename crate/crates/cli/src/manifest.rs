use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Data,
    Config,
    Basis,
    Model,
    Table,
    Log,
    /// `ny × nx` matrix CSV rendered as a heatmap.
    Map,
    Image,
    Variogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: PathBuf,
    pub kind: ArtifactKind,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "FAILED")]
    Failed,
    #[serde(rename = "RUNNING")]
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub status: RunStatus,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            status: RunStatus::Running,
            stages: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("missing manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Records (or re-hashes) a file under `dir`.
    pub fn add(&mut self, dir: &Path, relative: impl AsRef<Path>, kind: ArtifactKind) -> Result<()> {
        let relative = relative.as_ref().to_path_buf();
        let sha256 = sha256_file(&dir.join(&relative))?;
        self.artifacts.retain(|a| a.path != relative);
        self.artifacts.push(Artifact {
            path: relative,
            kind,
            sha256,
        });
        Ok(())
    }

    /// Records every file of a subdirectory, in name order.
    pub fn add_dir(&mut self, dir: &Path, relative: impl AsRef<Path>, kind: ArtifactKind) -> Result<()> {
        let relative = relative.as_ref();
        let mut names: Vec<PathBuf> = std::fs::read_dir(dir.join(relative))?
            .map(|e| e.map(|e| e.file_name().into()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        for name in names {
            self.add(dir, relative.join(name), kind)?;
        }
        Ok(())
    }

    pub fn artifact(&self, relative: impl AsRef<Path>) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == relative.as_ref())
    }
}

/// Runs named stages in order, keeping the manifest on disk current so a
/// failure leaves the artifacts written so far plus a `FAILED` status.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    pub fn start(dir: &Path, command: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let run = Self {
            dir: dir.to_path_buf(),
            manifest: Manifest::new(command, seed),
        };
        run.manifest.save(dir)?;
        Ok(run)
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        match f(self) {
            Ok(v) => {
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    ok: true,
                    error: None,
                });
                self.manifest.save(&self.dir)?;
                Ok(v)
            }
            Err(e) => {
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    ok: false,
                    error: Some(format!("{e:#}")),
                });
                self.manifest.status = RunStatus::Failed;
                self.manifest.save(&self.dir)?;
                Err(e.context(format!("stage `{name}` failed")))
            }
        }
    }

    pub fn add(&mut self, relative: impl AsRef<Path>, kind: ArtifactKind) -> Result<()> {
        self.manifest.add(&self.dir, relative, kind)
    }

    pub fn add_dir(&mut self, relative: impl AsRef<Path>, kind: ArtifactKind) -> Result<()> {
        self.manifest.add_dir(&self.dir, relative, kind)
    }

    pub fn path(&self, relative: impl AsRef<Path>) -> PathBuf {
        self.dir.join(relative)
    }

    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.status = RunStatus::Ok;
        self.manifest.save(&self.dir)?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_stage_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = Run::start(dir.path(), "run", 1).unwrap();
        run.stage("write", |r| {
            std::fs::write(r.path("a.txt"), "abc")?;
            r.add("a.txt", ArtifactKind::Table)
        })
        .unwrap();
        let err = run.stage("boom", |_| -> Result<()> { anyhow::bail!("nope") });
        assert!(err.is_err());
        let m = Manifest::load(dir.path()).unwrap();
        assert_eq!(m.status, RunStatus::Failed);
        assert_eq!(m.stages.len(), 2);
        assert!(m.stages[1].error.as_deref().unwrap().contains("nope"));
        // sha256("abc")
        assert_eq!(
            m.artifact("a.txt").unwrap().sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("\"FAILED\""));
    }
}
