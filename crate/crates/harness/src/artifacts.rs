//! Output directories with a checksum manifest. Files are written into a
//! staging directory that only replaces the final one on success.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::HarnessError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn short_id(text: &str) -> String {
    sha256_hex(text.as_bytes())[..16].to_string()
}

pub struct ArtifactDir {
    staging: PathBuf,
    target: PathBuf,
    files: Vec<String>,
    done: bool,
}

impl ArtifactDir {
    pub fn create(target: PathBuf) -> Result<Self, HarnessError> {
        let name = target
            .file_name()
            .ok_or_else(|| HarnessError::Config(format!("bad output directory {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let staging = target.with_file_name(format!(".{name}.partial"));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        Ok(Self { staging, target, files: Vec::new(), done: false })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    /// Writes `name` (a relative path) through a buffered writer.
    pub fn write<F>(&mut self, name: &str, body: F) -> Result<(), HarnessError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), HarnessError>,
    {
        let path = self.staging.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes the manifest and moves the directory into place.
    pub fn finish(mut self) -> Result<PathBuf, HarnessError> {
        self.files.sort();
        let mut manifest = String::new();
        for name in &self.files {
            let bytes = fs::read(self.staging.join(name))?;
            manifest.push_str(&format!("{}  {}\n", sha256_hex(&bytes), name));
        }
        fs::write(self.staging.join("manifest"), manifest)?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)?;
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for ArtifactDir {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
