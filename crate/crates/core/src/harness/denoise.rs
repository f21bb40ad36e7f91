use std::path::{Path, PathBuf};

use crate::data::{coarse_side, downsample_square};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{dynamics_step_batch, ModelState};
use crate::rng::RngState;

use super::output::{fmt_f64, write_pgm};

/// Two denoisers compared on the same corrupted images at the coarse
/// resolution.
#[derive(Clone, Debug)]
pub struct DenoiseReport {
    pub block: usize,
    pub steps: usize,
    pub noise_std: f64,
    pub side: usize,
    pub coarse_side: usize,
    /// Coarse versions of the clean and corrupted inputs, `N_j × m`.
    pub clean: Matrix,
    pub noisy: Matrix,
    /// Downsampled endpoint of the full-resolution model.
    pub big: Matrix,
    /// Endpoint of the coarse model started from the downsampled input.
    pub small: Matrix,
    /// RMS over pixels of `big − small`, per image.
    pub per_image_rms: Vec<f64>,
    pub rms_difference: f64,
    pub big_error_rms: f64,
    pub small_error_rms: f64,
}

fn downsample_columns(x: &Matrix, side: usize, block: usize) -> Matrix {
    let n = coarse_side(side, block).pow(2);
    let mut out = Matrix::zeros(n, x.cols());
    for c in 0..x.cols() {
        out.set_col(c, &downsample_square(&x.col(c), side, block));
    }
    out
}

fn run(model: &ModelState, x: &Matrix, steps: usize) -> Matrix {
    (0..steps).fold(x.clone(), |s, _| dynamics_step_batch(model, &s, 1.0))
}

/// Runs `steps` full-size updates (`dt = 1`) of `big` on the corrupted
/// images and of `small` on their `block`-downsampled versions, then
/// compares the downsampled big endpoint with the small endpoint. `clean`
/// holds square images as columns, in the models' centered coordinates.
pub fn denoise_compare(
    big: &ModelState,
    small: &ModelState,
    clean: &Matrix,
    block: usize,
    noise_std: f64,
    steps: usize,
    rng: &mut RngState,
) -> Result<DenoiseReport> {
    let side = (clean.rows() as f64).sqrt().round() as usize;
    if side * side != clean.rows() {
        return Err(Error::Dimension(format!("{} pixels is not a square image", clean.rows())));
    }
    if block == 0 || block > side {
        return Err(Error::Config(format!("block {block} must lie in 1..={side}")));
    }
    if big.visible() != clean.rows() {
        return Err(Error::Dimension(format!(
            "full-size model has N={}, images have {} pixels",
            big.visible(),
            clean.rows()
        )));
    }
    let cs = coarse_side(side, block);
    if small.visible() != cs * cs {
        return Err(Error::Dimension(format!(
            "coarse model has N={}, block {block} gives {}",
            small.visible(),
            cs * cs
        )));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Config("noise_std must be non-negative".into()));
    }

    let mut noisy_full = clean.clone();
    for v in noisy_full.as_mut_slice() {
        *v += noise_std * rng.normal();
    }
    let big_end = downsample_columns(&run(big, &noisy_full, steps), side, block);
    let noisy = downsample_columns(&noisy_full, side, block);
    let small_end = run(small, &noisy, steps);
    let coarse_clean = downsample_columns(clean, side, block);

    let diff = big_end.sub(&small_end);
    let per_image_rms = (0..diff.cols())
        .map(|c| {
            let col = diff.col(c);
            (col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64).sqrt()
        })
        .collect();
    Ok(DenoiseReport {
        block,
        steps,
        noise_std,
        side,
        coarse_side: cs,
        rms_difference: diff.rms(),
        big_error_rms: big_end.sub(&coarse_clean).rms(),
        small_error_rms: small_end.sub(&coarse_clean).rms(),
        clean: coarse_clean,
        noisy,
        big: big_end,
        small: small_end,
        per_image_rms,
    })
}

/// Writes one PGM strip per image (clean, corrupted, big endpoint, small
/// endpoint, left to right, each upscaled by `block`) and a CSV of
/// per-image RMS differences. `mean` is the per-pixel mean at full
/// resolution that was removed from the inputs.
pub fn emit_denoise(report: &DenoiseReport, mean: &[f64], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let coarse_mean = downsample_square(mean, report.side, report.block);
    let cs = report.coarse_side;
    let up = report.block;
    let panel = cs * up;
    let mut paths = Vec::new();
    for i in 0..report.clean.cols() {
        let panels = [&report.clean, &report.noisy, &report.big, &report.small];
        let width = panel * panels.len();
        let mut px = vec![0.0; width * panel];
        for (p, m) in panels.iter().enumerate() {
            let col = m.col(i);
            for y in 0..panel {
                for x in 0..panel {
                    let v = col[(y / up) * cs + x / up] + coarse_mean[(y / up) * cs + x / up];
                    px[y * width + p * panel + x] = v;
                }
            }
        }
        let path = dir.join(format!("denoise_j{}_{i:03}.pgm", report.block));
        write_pgm(&path, width, panel, &px)?;
        paths.push(path);
    }
    let csv_path = dir.join(format!("denoise_j{}.csv", report.block));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::io(&csv_path, std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    w.write_record(["image", "block", "steps", "noise_std", "rms_difference"]).map_err(io)?;
    for (i, r) in report.per_image_rms.iter().enumerate() {
        w.write_record([
            i.to_string(),
            report.block.to_string(),
            report.steps.to_string(),
            fmt_f64(report.noise_std),
            fmt_f64(*r),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    paths.push(csv_path);
    Ok(paths)
}
