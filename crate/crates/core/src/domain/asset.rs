use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::{sha256_file, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssetKind {
    Image,
    FrameSequence,
}

/// A file (or directory of frames) on disk plus the digest of its bytes.
///
/// `path` is relative to whatever root the owning record is stored under
/// (the run directory for manifests, the store directory for bank indexes);
/// absolute paths are kept as-is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub path: PathBuf,
    pub kind: AssetKind,
    pub digest: String,
}

impl AssetRef {
    /// Reference to an existing image, digesting its current contents.
    pub fn image(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let digest = sha256_file(&path)?;
        Ok(Self {
            path,
            kind: AssetKind::Image,
            digest,
        })
    }

    /// Reference to a directory of `frame_*.png` files.
    pub fn frame_sequence(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let path = dir.into();
        let digest = frame_sequence_digest(&path)?;
        Ok(Self {
            path,
            kind: AssetKind::FrameSequence,
            digest,
        })
    }

    /// Resolves `path` against `base` unless it is already absolute.
    pub fn resolve(&self, base: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            base.join(&self.path)
        }
    }

    /// Recomputes the digest of the resolved asset and compares.
    pub fn verify(&self, base: &Path) -> io::Result<bool> {
        let full = self.resolve(base);
        let actual = match self.kind {
            AssetKind::Image => sha256_file(&full)?,
            AssetKind::FrameSequence => frame_sequence_digest(&full)?,
        };
        Ok(actual == self.digest)
    }

    /// Same asset, path rewritten relative to `base` when it lies under it.
    pub fn relative_to(&self, base: &Path) -> Self {
        let path = match self.path.strip_prefix(base) {
            Ok(rel) => rel.to_path_buf(),
            Err(_) => self.path.clone(),
        };
        Self {
            path,
            ..self.clone()
        }
    }

    /// Ordered frame files of a frame-sequence asset.
    pub fn frames(&self, base: &Path) -> io::Result<Vec<PathBuf>> {
        match self.kind {
            AssetKind::Image => Ok(vec![self.resolve(base)]),
            AssetKind::FrameSequence => list_frames(&self.resolve(base)),
        }
    }
}

/// `frame_*.png` files in `dir`, sorted by name.
pub(crate) fn list_frames(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_frame = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png"));
        if is_frame {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

fn frame_sequence_digest(dir: &Path) -> io::Result<String> {
    let frames = list_frames(dir)?;
    if frames.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("no frames in {}", dir.display()),
        ));
    }
    let mut listing = String::new();
    for frame in &frames {
        let name = frame.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        listing.push_str(name);
        listing.push(':');
        listing.push_str(&sha256_file(frame)?);
        listing.push('\n');
    }
    Ok(sha256_hex(listing.as_bytes()))
}
