use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled frame range (one tree or row) with its optional visual count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub first_frame: usize,
    pub last_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_count: Option<usize>,
}

impl Segment {
    pub fn contains(&self, frame: usize) -> bool {
        (self.first_frame..=self.last_frame).contains(&frame)
    }
}

/// Dataset description. Paths are stored as written in the manifest, i.e.
/// relative to [`DatasetManifest::root`] unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub frames: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// Simulator ground truth, used by the ground-truth flow provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub segments: Vec<Segment>,
}

impl DatasetManifest {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn frame_path(&self, k: usize) -> PathBuf {
        self.resolve(&self.frames[k])
    }

    pub fn mask_path(&self, k: usize) -> PathBuf {
        self.resolve(&self.masks[k])
    }

    /// Segments from the manifest, or one segment spanning every frame.
    pub fn effective_segments(&self) -> Vec<Segment> {
        if self.segments.is_empty() && !self.frames.is_empty() {
            vec![Segment {
                id: "all".into(),
                first_frame: 0,
                last_frame: self.frames.len() - 1,
                visual_count: None,
            }]
        } else {
            self.segments.clone()
        }
    }

    fn referenced_files(&self) -> Vec<PathBuf> {
        let mut files: Vec<PathBuf> = self.frames.iter().chain(&self.masks).cloned().collect();
        files.extend(self.poses.iter().cloned());
        files.extend(self.features.iter().cloned());
        files.extend(self.ground_truth.iter().cloned());
        if let Some(labels) = &self.labels {
            files.extend(labels.iter().cloned());
        }
        files
    }

    /// Checks list lengths, segment layout, and that every file exists.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.masks.len() {
            return Err(Error::LengthMismatch {
                frames: self.frames.len(),
                masks: self.masks.len(),
            });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.frames.len() {
                return Err(Error::MalformedManifest(format!(
                    "{} label files for {} frames",
                    labels.len(),
                    self.frames.len()
                )));
            }
        }
        let mut segs: Vec<&Segment> = self.segments.iter().collect();
        segs.sort_by_key(|s| s.first_frame);
        for s in &segs {
            if s.first_frame > s.last_frame || s.last_frame >= self.frames.len() {
                return Err(Error::MalformedManifest(format!(
                    "segment {} range {}..={} outside 0..{}",
                    s.id,
                    s.first_frame,
                    s.last_frame,
                    self.frames.len()
                )));
            }
        }
        for w in segs.windows(2) {
            if w[1].first_frame <= w[0].last_frame {
                return Err(Error::MalformedManifest(format!(
                    "segments {} and {} overlap",
                    w[0].id, w[1].id
                )));
            }
        }
        for f in self.referenced_files() {
            let p = self.resolve(&f);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
        }
        Ok(())
    }
}

/// Reads and validates a manifest JSON file.
pub fn load_dataset(manifest_path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(manifest_path.to_path_buf()),
        _ => Error::io(manifest_path, e),
    })?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    manifest.root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
