//! File formats: 16-bit grayscale rasters, motion tables and traces.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::motion::{MotionSet, RigidMotion};
use crate::solver::SolverTrace;

const MAX16: f64 = 65535.0;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| Error::Format { path: path.to_path_buf(), reason: e.to_string() }
}

/// Reads any supported raster as grayscale normalized to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    let decoded = image::ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?
        .decode()
        .map_err(img_err(path))?;
    let gray = decoded.into_luma16();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| v as f64 / MAX16).collect();
    Image::new(w as usize, h as usize, data)
}

/// Writes a 16-bit grayscale PNG, or binary PGM for `.pgm`/`.pnm` paths.
/// Intensities are clamped to `[0, 1]`.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * MAX16).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer sized from image");
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm") | Some("pnm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    buf.save_with_format(path, format).map_err(img_err(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct MotionRow {
    k: usize,
    phi_deg: f64,
    t_u: f64,
    t_v: f64,
}

/// Writes `k,phi_deg,t_u,t_v` with 1-based frame numbers.
pub fn write_motion(path: &Path, motion: &MotionSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for (k, m) in motion.frames().iter().enumerate() {
        w.serialize(MotionRow { k: k + 1, phi_deg: m.phi_degrees(), t_u: m.t_u, t_v: m.t_v })
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_motion(path: &Path) -> Result<MotionSet> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let mut frames = Vec::new();
    for (i, row) in r.deserialize::<MotionRow>().enumerate() {
        let row = row.map_err(csv_err(path))?;
        if row.k != i + 1 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("row {} has frame number {}, expected {}", i + 1, row.k, i + 1),
            });
        }
        let m = RigidMotion::new(row.phi_deg.to_radians(), row.t_u, row.t_v);
        m.validate()?;
        frames.push(m);
    }
    if frames.is_empty() {
        return Err(Error::Format { path: path.to_path_buf(), reason: "no motion rows".into() });
    }
    Ok(MotionSet::new(frames))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const TRACE_HEADER: &str =
    "mode,iteration,energy,weighted_residual,mu,cg_iterations,delta_theta_norm,delta_x_norm,relative_change,sigma_noise,sigma_prior,psnr";

/// Trace as CSV text, one row per outer iteration.
pub fn trace_csv(trace: &SolverTrace) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in &trace.records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            trace.mode,
            r.iteration,
            r.energy,
            r.weighted_residual,
            r.mu,
            r.cg_iterations,
            r.delta_theta_norm,
            r.delta_x_norm,
            r.relative_change,
            r.sigma_noise,
            r.sigma_prior,
            fmt_opt(r.psnr)
        ));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}
