//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/train/<class_name>/*.png
//! <root>/test/<class_name>/*.png
//! ```
//!
//! The manifest lists the class names in label order; label `k` is the
//! `k`-th entry. Images must be RGB (or grayscale, promoted) PNG files of
//! the declared size.

use std::fs;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::{DatasetIndex, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub classes: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl DatasetManifest {
    pub const FORMAT: &'static str = "genifer-dataset";

    pub fn new(classes: Vec<String>, height: usize, width: usize, channels: usize) -> Self {
        Self {
            format: Self::FORMAT.to_owned(),
            version: MANIFEST_VERSION,
            classes,
            height,
            width,
            channels,
        }
    }
}

fn split_dir(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.format != DatasetManifest::FORMAT {
        return Err(Error::Format(format!("unexpected manifest format {:?}", m.format)));
    }
    if m.version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            m.version
        )));
    }
    if m.channels != 3 {
        return Err(Error::Format("only 3-channel datasets are supported".into()));
    }
    Ok(m)
}

/// Loads one split. Files inside a class directory are read in sorted
/// filename order so the resulting index is reproducible.
pub fn load_dataset_dir(root: &Path, split: Split) -> Result<(DatasetManifest, DatasetIndex)> {
    let m = read_manifest(root)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (label, name) in m.classes.iter().enumerate() {
        let dir = root.join(split_dir(split)).join(name);
        let mut files: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for f in files {
            let img = image::open(&f)
                .map_err(|e| Error::Format(format!("{}: {e}", f.display())))?
                .to_rgb8();
            if img.height() as usize != m.height || img.width() as usize != m.width {
                return Err(Error::Shape(format!(
                    "{} is {}x{}, manifest declares {}x{}",
                    f.display(),
                    img.width(),
                    img.height(),
                    m.width,
                    m.height
                )));
            }
            data.extend(img.as_raw().iter().map(|&b| b as f64 / 255.0));
            labels.push(label);
        }
    }
    let n = labels.len();
    let images = Array4::from_shape_vec((n, m.height, m.width, 3), data)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let index = DatasetIndex::new(images, labels, m.classes.len(), split)?;
    Ok((m, index))
}

/// Writes a split as 8-bit PNGs plus the manifest.
pub fn write_dataset_dir(root: &Path, manifest: &DatasetManifest, index: &DatasetIndex) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mpath = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    let (h, w, c) = index.image_shape();
    let mut counters = vec![0usize; manifest.classes.len()];
    for (i, &label) in index.labels().iter().enumerate() {
        let dir = root.join(split_dir(index.split())).join(&manifest.classes[label]);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let raw: Vec<u8> = index
            .images()
            .index_axis(ndarray::Axis(0), i)
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        debug_assert_eq!(raw.len(), h * w * c);
        let img = image::RgbImage::from_raw(w as u32, h as u32, raw)
            .ok_or_else(|| Error::Shape("image buffer size".into()))?;
        let path = dir.join(format!("{:06}.png", counters[label]));
        counters[label] += 1;
        img.save(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
