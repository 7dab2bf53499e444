use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{load_mask, load_raster, BinaryMask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split {other:?}"))),
        }
    }
}

/// One line of a manifest. Relative paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub split: Split,
    /// Micrometres per pixel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory relative paths resolve against.
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(dir: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            dir: dir.into(),
            entries,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for e in &self.entries {
            match e.split {
                Split::Train => c.train += 1,
                Split::Val => c.val += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> + '_ {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Reads a JSON-lines manifest, checking splits, duplicate paths and that
/// every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let fail = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut manifest = Manifest::new(dir, Vec::new());
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(raw).map_err(|e| fail(line, e.to_string()))?;
        for p in std::iter::once(&entry.image).chain(entry.mask.as_ref()) {
            if !seen.insert(p.clone()) {
                return Err(fail(line, format!("duplicate path {}", p.display())));
            }
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(fail(line, format!("missing file {}", full.display())));
            }
        }
        if let Some(s) = entry.scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(fail(line, format!("scale must be positive, got {s}")));
            }
        }
        manifest.entries.push(entry);
    }
    let c = manifest.counts();
    log::info!(
        "{}: {} train, {} val, {} test",
        path.display(),
        c.train,
        c.val,
        c.test
    );
    Ok(manifest)
}

pub fn save_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// An image with its annotation, as listed in a manifest.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub entry: ManifestEntry,
    pub image: Raster,
    pub mask: BinaryMask,
}

/// Loads every annotated entry of `split`, in manifest order.
pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<LabeledImage>> {
    manifest
        .split(split)
        .filter(|e| e.mask.is_some())
        .map(|e| {
            let image = load_raster(manifest.resolve(&e.image))?;
            let mask = load_mask(manifest.resolve(e.mask.as_ref().expect("filtered")))?;
            if image.width() != mask.width() || image.height() != mask.height() {
                return Err(Error::DimensionMismatch(format!(
                    "{}: image {}x{} vs mask {}x{}",
                    e.image.display(),
                    image.width(),
                    image.height(),
                    mask.width(),
                    mask.height()
                )));
            }
            Ok(LabeledImage {
                entry: e.clone(),
                image,
                mask,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) -> PathBuf {
        let p = PathBuf::from(name);
        fs::write(dir.join(&p), b"x").unwrap();
        p
    }

    fn entry(image: PathBuf, mask: Option<PathBuf>, split: Split) -> ManifestEntry {
        ManifestEntry {
            image,
            mask,
            split,
            scale: None,
            source: String::new(),
        }
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().entries.is_empty());
    }

    #[test]
    fn round_trip_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for i in 0..76 {
            let split = match i {
                0..62 => Split::Train,
                62..68 => Split::Val,
                _ => Split::Test,
            };
            let img = touch(dir.path(), &format!("img{i}.png"));
            let mask = touch(dir.path(), &format!("mask{i}.png"));
            let mut e = entry(img, Some(mask), split);
            e.scale = (i % 2 == 0).then_some(1.5);
            e.source = format!("batch{}", i % 3);
            entries.push(e);
        }
        let p = dir.path().join("m.jsonl");
        save_manifest(&entries, &p).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.entries, entries);
        assert_eq!(m.counts(), SplitCounts { train: 62, val: 6, test: 8 });
    }

    #[test]
    fn missing_mask_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let img = touch(dir.path(), "a.png");
        let p = dir.path().join("m.jsonl");
        save_manifest(&[entry(img, Some("gone.png".into()), Split::Train)], &p).unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("m.jsonl:1:") && err.contains("gone.png"), "{err}");
    }

    #[test]
    fn duplicate_and_bad_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = touch(dir.path(), "a.png");
        let p = dir.path().join("m.jsonl");
        save_manifest(&[entry(img.clone(), None, Split::Train), entry(img, None, Split::Val)], &p).unwrap();
        assert!(load_manifest(&p).unwrap_err().to_string().contains("duplicate"));

        fs::write(&p, r#"{"image":"a.png","split":"holdout"}"#).unwrap();
        assert!(load_manifest(&p).is_err());
    }
}
