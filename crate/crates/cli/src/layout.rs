//! File naming inside frame directories.
//!
//! A frame with stem `frame_0007` is stored as `frame_0007.png` (color),
//! `frame_0007.depth.png`, `frame_0007.mask.png` and `frame_0007.normal.png`.
//! The SfM `images.txt` names each view by its color file.

use std::path::{Path, PathBuf};

use labelfuse::{Error, Result};

const CHANNELS: [&str; 3] = ["depth", "mask", "normal"];

pub fn color_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.png"))
}

pub fn depth_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.depth.png"))
}

pub fn mask_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.mask.png"))
}

pub fn normal_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.normal.png"))
}

pub fn frame_stem(index: usize) -> String {
    format!("frame_{index:04}")
}

/// Stem of a view name: the file name without directories or extension.
pub fn stem_of(name: &str) -> String {
    let file = Path::new(name);
    file.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

/// Stems of the color images in `dir`, sorted by name. Depth, mask and
/// normal rasters are skipped.
pub fn color_stems(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut stems = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".png") else {
            continue;
        };
        let channel = stem.rsplit_once('.').map(|(_, c)| c);
        if channel.is_some_and(|c| CHANNELS.contains(&c)) {
            continue;
        }
        stems.push(stem.to_string());
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no color images in {}",
            dir.display()
        )));
    }
    Ok(stems)
}
