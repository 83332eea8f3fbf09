//! JSON manifests. Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_bytes, read_color, read_mask};
use crate::error::{Error, Result};
use crate::eval::Extent;
use crate::features::ColorImage;
use crate::mask::{Annotation, AnnotationStack};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub id: String,
    pub mask: String,
}

/// Annotations of one (possibly composite) image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub annotations: Vec<AnnotationEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extents: Option<Vec<Extent>>,
}

#[derive(Debug, Clone)]
pub struct LoadedStack {
    pub stack: AnnotationStack,
    pub image: Option<ColorImage>,
    pub extents: Option<Vec<Extent>>,
    /// Every file read, manifest first.
    pub files: Vec<PathBuf>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| Error::format(path, e.to_string()))
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != MANIFEST_VERSION {
        return Err(Error::format(
            path,
            format!("manifest version {version} is not supported (expected {MANIFEST_VERSION})"),
        ));
    }
    Ok(())
}

impl StackManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let m: StackManifest = parse(path)?;
        check_version(path, m.version)?;
        if m.annotations.is_empty() {
            return Err(Error::format(path, "manifest lists no annotations"));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// Read the manifest and every file it references.
    pub fn load(path: &Path) -> Result<LoadedStack> {
        let m = StackManifest::read(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut files = vec![path.to_path_buf()];
        let mut annotators = Vec::new();
        for e in &m.annotations {
            let p = resolve(base, &e.mask);
            annotators.push(Annotation {
                id: e.id.clone(),
                mask: read_mask(&p)?,
            });
            files.push(p);
        }
        let roi = match &m.roi {
            Some(r) => {
                let p = resolve(base, r);
                let mask = read_mask(&p)?;
                files.push(p);
                Some(mask)
            }
            None => None,
        };
        let image = match &m.image {
            Some(i) => {
                let p = resolve(base, i);
                let img = read_color(&p)?;
                files.push(p);
                Some(img)
            }
            None => None,
        };
        let stack = AnnotationStack::new(annotators, roi)?;
        if let Some(img) = &image {
            stack.grid().check(&img.grid())?;
        }
        Ok(LoadedStack {
            stack,
            image,
            extents: m.extents,
            files,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEntry {
    pub name: String,
    pub path: String,
}

/// Named files, e.g. detector responses or ground truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedList {
    pub version: u32,
    pub entries: Vec<NamedEntry>,
}

impl NamedList {
    /// Entries with their paths resolved.
    pub fn read(path: &Path) -> Result<Vec<(String, PathBuf)>> {
        let list: NamedList = parse(path)?;
        check_version(path, list.version)?;
        if list.entries.is_empty() {
            return Err(Error::format(path, "list has no entries"));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(list
            .entries
            .into_iter()
            .map(|e| (e.name, resolve(base, &e.path)))
            .collect())
    }
}
