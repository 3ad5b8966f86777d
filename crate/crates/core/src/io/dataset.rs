//! Frame directories: `frame_000000.png`, `frame_000001.png`, ... plus a
//! `manifest.json` and, for synthetic data, a `labels.json` with the ground
//! truth of every frame.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::{SceneObject, SyntheticScene};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Frames `[0, train_count)` are for training, the rest for testing.
    pub train_count: usize,
    /// Index of each stored frame in its source (video frame number, or
    /// scene number for synthetic data).
    pub source_frames: Vec<usize>,
    pub has_labels: bool,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dataset(format!("manifest: {m}")));
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                kind: "manifest",
                found: self.schema_version,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        if self.count == 0 || self.width == 0 || self.height == 0 {
            return bad("empty dataset or zero resolution".into());
        }
        if self.train_count > self.count {
            return bad(format!("train_count {} exceeds count {}", self.train_count, self.count));
        }
        if self.source_frames.len() != self.count {
            return bad(format!(
                "{} source frame numbers for {} frames",
                self.source_frames.len(),
                self.count
            ));
        }
        if self.source_frames.windows(2).any(|w| w[0] >= w[1]) {
            return bad("source frame numbers must increase".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::Dataset(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }
}

/// Temporal split: the first `train_count` frames train, the rest test.
pub fn split_dataset(count: usize, train_count: usize) -> Result<(Range<usize>, Range<usize>)> {
    if train_count == 0 || train_count >= count {
        return Err(Error::InvalidArgument(format!(
            "train_count must lie in [1, {}), got {train_count}",
            count
        )));
    }
    Ok((0..train_count, train_count..count))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

impl FrameDataset {
    /// Writes frames, then labels, then the manifest last so a failed write
    /// never leaves a manifest behind.
    pub fn create(
        root: &Path,
        frames: &[Image],
        source_frames: Vec<usize>,
        train_count: usize,
        labels: Option<&[Vec<SceneObject>]>,
    ) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Dataset("no frames to write".into()))?;
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            count: frames.len(),
            width: first.width(),
            height: first.height(),
            train_count,
            source_frames,
            has_labels: labels.is_some(),
        };
        manifest.validate()?;
        if let Some(l) = labels {
            if l.len() != frames.len() {
                return Err(Error::Dataset("one label list per frame is required".into()));
            }
        }
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        for (i, f) in frames.iter().enumerate() {
            if (f.width(), f.height()) != (manifest.width, manifest.height) {
                return Err(Error::Dataset(format!("frame {i} has a different resolution")));
            }
            f.save_png(&root.join(frame_name(i)))?;
        }
        if let Some(l) = labels {
            write_json(&root.join(LABELS_FILE), &l)?;
        }
        write_json(&root.join(MANIFEST_FILE), &manifest)?;
        Ok(FrameDataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn from_scenes(root: &Path, scenes: &[SyntheticScene], train_count: usize) -> Result<Self> {
        let frames: Vec<Image> = scenes.iter().map(|s| s.image.clone()).collect();
        let labels: Vec<Vec<SceneObject>> = scenes.iter().map(|s| s.objects.clone()).collect();
        FrameDataset::create(root, &frames, (0..scenes.len()).collect(), train_count, Some(&labels))
    }

    /// Reads the manifest and runs [`verify`](Self::verify).
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::parse(&text)?;
        let ds = FrameDataset {
            root: root.to_path_buf(),
            manifest,
        };
        ds.verify()?;
        Ok(ds)
    }

    /// Re-counts frame files and checks every resolution against the
    /// manifest.
    pub fn verify(&self) -> Result<()> {
        let m = &self.manifest;
        let entries = std::fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let mut on_disk = 0;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("frame_") && name.ends_with(".png") {
                on_disk += 1;
            }
        }
        if on_disk != m.count {
            return Err(Error::Dataset(format!(
                "manifest lists {} frames, directory holds {on_disk}",
                m.count
            )));
        }
        for i in 0..m.count {
            let path = self.frame_path(i);
            let (w, h) = image::image_dimensions(&path).map_err(|e| Error::image(&path, e))?;
            if (w as usize, h as usize) != (m.width, m.height) {
                return Err(Error::Dataset(format!(
                    "{} is {w}x{h}, manifest says {}x{}",
                    path.display(),
                    m.width,
                    m.height
                )));
            }
        }
        if m.has_labels && !self.root.join(LABELS_FILE).is_file() {
            return Err(Error::Dataset("manifest promises labels but labels.json is missing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.root.join(frame_name(index))
    }

    pub fn indices(&self, split: Split) -> Range<usize> {
        let m = &self.manifest;
        match split {
            Split::Train => 0..m.train_count,
            Split::Test => m.train_count..m.count,
            Split::All => 0..m.count,
        }
    }

    pub fn load_frames(&self, range: Range<usize>) -> Result<Vec<Image>> {
        range.map(|i| Image::load(&self.frame_path(i))).collect()
    }

    pub fn labels(&self) -> Result<Option<Vec<Vec<SceneObject>>>> {
        if !self.manifest.has_labels {
            return Ok(None);
        }
        let path = self.root.join(LABELS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let labels: Vec<Vec<SceneObject>> =
            serde_json::from_str(&text).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        if labels.len() != self.manifest.count {
            return Err(Error::Dataset(format!(
                "labels.json has {} entries for {} frames",
                labels.len(),
                self.manifest.count
            )));
        }
        Ok(Some(labels))
    }

    /// Frames of `range` paired with their ground truth.
    pub fn load_scenes(&self, range: Range<usize>) -> Result<Vec<SyntheticScene>> {
        let labels = self
            .labels()?
            .ok_or_else(|| Error::Dataset("dataset has no ground-truth labels".into()))?;
        range
            .map(|i| {
                Ok(SyntheticScene {
                    image: Image::load(&self.frame_path(i))?,
                    objects: labels[i].clone(),
                })
            })
            .collect()
    }
}
