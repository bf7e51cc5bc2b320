use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use videomemory::backends::{Backends, MockImage, MockText, MockVideo};
use videomemory::digest::sha256_file;

/// Mock backends plus handles that share their call counters.
pub struct Mocks {
    pub backends: Backends,
    pub text: MockText,
    pub image: MockImage,
    pub video: MockVideo,
}

pub fn mocks(text: MockText, frames: usize) -> Mocks {
    let image = MockImage::new();
    let video = MockVideo::new(frames).unwrap();
    Mocks {
        backends: Backends {
            text: Box::new(text.clone()),
            image: Box::new(image.clone()),
            video: Box::new(video.clone()),
        },
        text,
        image,
        video,
    }
}

/// Every regular file under `root`, recursively, in path order.
pub fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

/// SHA-256 of every file under `root`, keyed by path relative to `root`.
pub fn tree_digests(root: &Path) -> BTreeMap<String, String> {
    files_under(root)
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            (rel, sha256_file(&p).unwrap())
        })
        .collect()
}
