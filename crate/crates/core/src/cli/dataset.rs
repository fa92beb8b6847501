//! Dataset directories: numbered frames plus motion tables and metadata.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Image, LrStack};
use crate::io::{create_dir, load_image, read_motion, read_text, save_image, write_motion, write_text};
use crate::motion::MotionSet;
use crate::simulate::{Dataset, SimulationSpec};

pub const GROUND_TRUTH: &str = "ground_truth.png";
pub const MOTION_TRUE: &str = "motion_true.csv";
pub const MOTION_INIT: &str = "motion_init.csv";
pub const SPEC: &str = "spec.json";
pub const OUTLIERS: &str = "outliers.csv";

pub fn frame_name(k: usize) -> String {
    format!("frame_{:03}.png", k + 1)
}

/// Writes every artifact of a simulated dataset into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    create_dir(dir)?;
    for (k, frame) in ds.stack.frames().iter().enumerate() {
        save_image(&dir.join(frame_name(k)), frame)?;
    }
    save_image(&dir.join(GROUND_TRUTH), &ds.ground_truth)?;
    write_motion(&dir.join(MOTION_TRUE), &ds.theta_true)?;
    write_motion(&dir.join(MOTION_INIT), &ds.theta_init)?;
    let spec = serde_json::to_string_pretty(&ds.spec).expect("spec serializes");
    write_text(&dir.join(SPEC), &(spec + "\n"))?;

    let width = ds.stack.width();
    let mut outliers = String::from("k,row,col\n");
    for (k, pixels) in ds.outlier_pixels.iter().enumerate() {
        for &i in pixels {
            outliers.push_str(&format!("{},{},{}\n", k + 1, i / width, i % width));
        }
    }
    write_text(&dir.join(OUTLIERS), &outliers)
}

/// Inputs of a reconstruction read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub stack: LrStack,
    pub theta_init: MotionSet,
    pub theta_true: Option<MotionSet>,
    pub ground_truth: Option<Image>,
    pub spec: Option<SimulationSpec>,
}

fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|source| Error::Io { path: dir.to_path_buf(), source })?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("frame_") && (name.ends_with(".png") || name.ends_with(".pgm")) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format { path: dir.to_path_buf(), reason: "no frame_*.png files".into() });
    }
    Ok(paths)
}

fn optional<T>(path: &Path, load: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load(path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let frames = frame_paths(dir)?.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    let stack = LrStack::new(frames)?;
    let theta_init = read_motion(&dir.join(MOTION_INIT))?;
    if theta_init.len() != stack.len() {
        return Err(Error::Format {
            path: dir.join(MOTION_INIT),
            reason: format!("{} motion rows for {} frames", theta_init.len(), stack.len()),
        });
    }
    let spec_path = dir.join(SPEC);
    let spec = optional(&spec_path, |p| {
        serde_json::from_str::<SimulationSpec>(&read_text(p)?)
            .map_err(|e| Error::Format { path: p.to_path_buf(), reason: e.to_string() })
    })?;
    Ok(LoadedDataset {
        stack,
        theta_init,
        theta_true: optional(&dir.join(MOTION_TRUE), read_motion)?,
        ground_truth: optional(&dir.join(GROUND_TRUTH), load_image)?,
        spec,
    })
}
