use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{save_image, ImageBuffer};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Record of one run: what went in, how long each stage took, what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputFingerprint>,
    pub stages: Vec<StageTiming>,
    /// Paths relative to the run directory, in write order.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// File name of the manifest inside every run directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// The single writer of a run directory. Every artifact goes through it so
/// the manifest lists exactly what was written; [`RunDir::finish`] writes
/// the manifest and consumes the writer.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
    stage_start: Option<(String, Instant)>,
}

impl RunDir {
    pub fn create(root: impl AsRef<Path>, command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                seed,
                config: serde_json::to_value(config)?,
                inputs: Vec::new(),
                stages: Vec::new(),
                outputs: Vec::new(),
            },
            stage_start: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(InputFingerprint { path: path.display().to_string(), sha256 });
        Ok(())
    }

    /// Closes the running stage (if any) and starts timing `name`.
    pub fn stage(&mut self, name: &str) {
        self.end_stage();
        self.stage_start = Some((name.to_string(), Instant::now()));
    }

    fn end_stage(&mut self) {
        if let Some((stage, t)) = self.stage_start.take() {
            self.manifest.stages.push(StageTiming { stage, seconds: t.elapsed().as_secs_f64() });
        }
    }

    fn target(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.manifest.outputs.push(rel.to_string());
        Ok(path)
    }

    pub fn write_text(&mut self, rel: &str, content: &str) -> Result<PathBuf> {
        let path = self.target(rel)?;
        std::fs::write(&path, content)?;
        Ok(path)
    }

    pub fn write_image<T: Scalar>(&mut self, rel: &str, img: &ImageBuffer<T>) -> Result<PathBuf> {
        let path = self.target(rel)?;
        save_image(img, &path)?;
        Ok(path)
    }

    /// Registers a file written by other code at `rel`.
    pub fn register(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        self.manifest.outputs.push(rel.to_string());
        Ok(path)
    }

    /// Path for an artifact produced by other code; call [`RunDir::register`] after writing.
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.end_stage();
        self.manifest.outputs.push(MANIFEST_FILE.to_string());
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(self.root.join(MANIFEST_FILE), text + "\n")?;
        Ok(self.manifest)
    }
}
