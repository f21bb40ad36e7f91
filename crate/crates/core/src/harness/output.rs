//! CSV, SVG, PGM and JSON artifacts.
//!
//! `<name>_trace.csv` has one row per (cell, epoch), or per diagnostics
//! record when several fall in one epoch:
//!
//! | column | meaning |
//! |---|---|
//! | `experiment` | config name |
//! | `scale` | ladder entry (`N`, `K` or plaquette block) |
//! | `n`, `k`, `p`, `b` | cell dimensions |
//! | `eta0`, `seed` | cell coordinates |
//! | `epoch` | zero-based epoch |
//! | `step` | optimizer steps before the diagnostics batch |
//! | `mse` | per-entry `‖F − Y‖²/(NB)` averaged over the epoch's batches; empty in the diverging epoch |
//! | `diverged` | `1` on the row where the cell diverged, else `0` |
//! | `lambda_max`, `lambda2` | top Gram eigenvalues over `K` |
//! | `lambda_max_raw`, `lambda2_raw` | unnormalized |
//! | `k_eff`, `k_eff_centered` | softmax participation ratios |
//! | `k_eff_centered_infinite` | `1` when the centered ratio is `+∞` |
//! | `rms_z`, `rms_f` | per-entry RMS of `Z` and `F` |
//! | `rms_dw1` … `rms_dc` | per-entry RMS of every SGD update term |
//! | `adam_update_rms`, `adam_row_mean_rms` | Adam `U` and its row mean |
//!
//! Diagnostics fields are empty when no record exists for the row. Numbers
//! are written with 17 significant digits and never as NaN.
//!
//! `<name>_final.csv` has one row per cell: `experiment, scale, n, k, p, b,
//! eta0, seed, initial_mse, final_mse, diverged, diverged_epoch, unstable,
//! argmin`, where `argmin` marks the seed-averaged best `η₀` of the scale.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::train::{CellResult, SweepResult, UNSTABLE_FACTOR};
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::model::ModelState;

pub const TRACE_COLUMNS: [&str; 33] = [
    "experiment",
    "scale",
    "n",
    "k",
    "p",
    "b",
    "eta0",
    "seed",
    "epoch",
    "step",
    "mse",
    "diverged",
    "lambda_max",
    "lambda2",
    "lambda_max_raw",
    "lambda2_raw",
    "k_eff",
    "k_eff_centered",
    "k_eff_centered_infinite",
    "rms_z",
    "rms_f",
    "rms_dw1",
    "rms_dw2",
    "rms_dz1",
    "rms_dz2",
    "rms_df11",
    "rms_df12",
    "rms_df21",
    "rms_df22",
    "rms_db",
    "rms_dc",
    "adam_update_rms",
    "adam_row_mean_rms",
];

pub const FINAL_COLUMNS: [&str; 14] = [
    "experiment",
    "scale",
    "n",
    "k",
    "p",
    "b",
    "eta0",
    "seed",
    "initial_mse",
    "final_mse",
    "diverged",
    "diverged_epoch",
    "unstable",
    "argmin",
];

/// 17 significant digits; empty for non-finite values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn diag_fields(d: Option<&DiagnosticsRecord>) -> Vec<String> {
    let Some(d) = d else {
        return vec![String::new(); 21];
    };
    let inf = d.k_eff_centered == Some(f64::INFINITY);
    let mut out = vec![
        fmt_f64(d.lambda_max),
        fmt_f64(d.lambda2),
        fmt_f64(d.lambda_max_raw),
        fmt_f64(d.lambda2_raw),
        fmt_opt(d.k_eff),
        fmt_opt(d.k_eff_centered),
        if d.k_eff_centered.is_some() { (inf as u8).to_string() } else { String::new() },
        fmt_f64(d.z_rms),
        fmt_f64(d.f_rms),
    ];
    match &d.update {
        Some(u) => out.extend(
            [u.dw1, u.dw2, u.dz1, u.dz2, u.df11, u.df12, u.df21, u.df22, u.db, u.dc].map(fmt_f64),
        ),
        None => out.extend(std::iter::repeat_n(String::new(), 10)),
    }
    out.push(fmt_opt(d.adam_update_rms));
    out.push(fmt_opt(d.adam_row_mean_rms));
    out
}

fn cell_prefix(name: &str, c: &CellResult) -> Vec<String> {
    vec![
        name.to_string(),
        c.cell.scale.to_string(),
        c.dims.n.to_string(),
        c.dims.k.to_string(),
        c.dims.p.to_string(),
        c.dims.b.to_string(),
        fmt_f64(c.cell.eta0),
        c.cell.seed.to_string(),
    ]
}

/// Writes the per-epoch trace CSV.
pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(TRACE_COLUMNS).map_err(|e| csv_error(path, e))?;
    for c in &result.cells {
        let epochs = c.mse_trace.len() + c.diverged() as usize;
        for epoch in 0..epochs {
            let mse = fmt_opt(c.mse_trace.get(epoch).copied());
            let diverged = (c.diverged_epoch == Some(epoch)) as u8;
            let records: Vec<&DiagnosticsRecord> = c.diagnostics.iter().filter(|d| d.epoch == epoch).collect();
            let rows: Vec<Option<&DiagnosticsRecord>> = if records.is_empty() {
                vec![None]
            } else {
                records.into_iter().map(Some).collect()
            };
            for d in rows {
                let mut rec = cell_prefix(&result.name, c);
                rec.push(epoch.to_string());
                rec.push(d.map(|d| d.step.to_string()).unwrap_or_default());
                rec.push(mse.clone());
                rec.push(diverged.to_string());
                rec.extend(diag_fields(d));
                w.write_record(&rec).map_err(|e| csv_error(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the per-cell summary CSV.
pub fn emit_final_csv(result: &SweepResult, path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(FINAL_COLUMNS).map_err(|e| csv_error(path, e))?;
    for c in &result.cells {
        let best = result.argmin_eta(c.cell.scale) == Some(c.cell.eta0);
        let mut rec = cell_prefix(&result.name, c);
        rec.extend([
            fmt_f64(c.initial_mse),
            fmt_opt(c.final_mse()),
            (c.diverged() as u8).to_string(),
            c.diverged_epoch.map(|e| e.to_string()).unwrap_or_default(),
            (c.unstable() as u8).to_string(),
            (best as u8).to_string(),
        ]);
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Metadata<'a> {
    experiment: &'a str,
    seeds: &'a [u64],
    seed_averaging: &'static str,
    unstable_factor: f64,
    argmin: Vec<(usize, Option<f64>)>,
    config: &'a ExperimentConfig,
}

/// Writes every artifact of a sweep into `dir` and returns the paths.
pub fn emit_all(cfg: &ExperimentConfig, result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let base = dir.join(&result.name);
    let with = |suffix: &str| PathBuf::from(format!("{}{suffix}", base.display()));
    let paths = [
        with("_trace.csv"),
        with("_final.csv"),
        with("_final_mse.svg"),
        with("_traces.svg"),
        with("_meta.json"),
    ];
    emit_csv(result, &paths[0])?;
    emit_final_csv(result, &paths[1])?;
    emit_svg(result, &paths[2], &paths[3])?;
    let meta = Metadata {
        experiment: &result.name,
        seeds: &result.seeds,
        seed_averaging: "final MSE per grid point is the mean over seeds; a grid point with any diverged seed has no value",
        unstable_factor: UNSTABLE_FACTOR,
        argmin: result.scales.iter().map(|&s| (s, result.argmin_eta(s))).collect(),
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&paths[4], json).map_err(|e| Error::io(&paths[4], e))?;
    Ok(paths.to_vec())
}

// ---------------------------------------------------------------------------
// SVG

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn axis_value(v: f64, log: bool) -> Option<f64> {
    if !v.is_finite() {
        return None;
    }
    if log {
        (v > 0.0).then(|| v.log10())
    } else {
        Some(v)
    }
}

fn tick_label(t: f64, log: bool) -> String {
    let v = if log { 10f64.powf(t) } else { t };
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let (w, h) = (720.0, 460.0);
        let (l, r, t, b) = (80.0, 150.0, 40.0, 60.0);
        let pts: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .filter_map(|&(x, y)| Some((axis_value(x, self.log_x)?, axis_value(y, self.log_y)?)))
                    .collect()
            })
            .collect();
        let all = pts.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pw = w - l - r;
        let ph = h - t - b;
        let sx = |x: f64| l + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| t + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        s.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        s.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            l + pw / 2.0,
            escape(&self.title)
        ));
        s.push_str(&format!(
            "<rect x=\"{l}\" y=\"{t}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>\n"
        ));
        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
                sx(xv),
                t + ph + 18.0,
                tick_label(xv, self.log_x)
            ));
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
                l - 6.0,
                sy(yv) + 4.0,
                tick_label(yv, self.log_y)
            ));
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            l + pw / 2.0,
            h - 16.0,
            escape(&self.x_label)
        ));
        s.push_str(&format!(
            "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
            t + ph / 2.0,
            t + ph / 2.0,
            escape(&self.y_label)
        ));
        for (i, (series, p)) in self.series.iter().zip(&pts).enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            s.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"><title>{}</title></polyline>\n",
                coords.join(" "),
                escape(&series.label)
            ));
            let ly = t + 14.0 + 18.0 * i as f64;
            s.push_str(&format!(
                "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                w - r + 12.0,
                w - r + 34.0
            ));
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\">{}</text>\n",
                w - r + 40.0,
                ly + 4.0,
                escape(&series.label)
            ));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn scale_label(result: &SweepResult, scale: usize) -> String {
    match result.cells_at(scale).next() {
        Some(c) => format!("scale {scale} (N={}, K={})", c.dims.n, c.dims.k),
        None => format!("scale {scale}"),
    }
}

/// Final MSE against `η₀` per scale.
pub fn final_mse_chart(result: &SweepResult) -> Chart {
    Chart {
        title: format!("{}: final MSE", result.name),
        x_label: "eta0".into(),
        y_label: "final MSE".into(),
        log_x: true,
        log_y: true,
        series: result
            .scales
            .iter()
            .map(|&s| Series {
                label: scale_label(result, s),
                points: result
                    .eta_grid
                    .iter()
                    .zip(result.final_mse_curve(s))
                    .filter_map(|(&e, m)| m.map(|m| (e, m)))
                    .collect(),
            })
            .collect(),
    }
}

/// MSE per epoch at each scale's best `η₀` (first seed).
pub fn trace_chart(result: &SweepResult) -> Chart {
    Chart {
        title: format!("{}: training loss at the best eta0", result.name),
        x_label: "epoch".into(),
        y_label: "MSE".into(),
        log_x: false,
        log_y: true,
        series: result
            .scales
            .iter()
            .map(|&s| {
                let cell = result.argmin_index(s).and_then(|i| result.cell(s, i, result.seeds[0]));
                Series {
                    label: scale_label(result, s),
                    points: cell
                        .map(|c| c.mse_trace.iter().enumerate().map(|(e, &m)| (e as f64, m)).collect())
                        .unwrap_or_default(),
                }
            })
            .collect(),
    }
}

pub fn emit_svg(result: &SweepResult, final_path: &Path, trace_path: &Path) -> Result<()> {
    for (chart, path) in [(final_mse_chart(result), final_path), (trace_chart(result), trace_path)] {
        create_parent(path)?;
        std::fs::write(path, chart.to_svg()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Images and models

/// Binary greyscale PGM; values are clamped to `[0, 1]`.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    assert_eq!(values.len(), width * height, "pixel count mismatch");
    create_parent(path)?;
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &ModelState, path: &Path) -> Result<()> {
    create_parent(path)?;
    let json = serde_json::to_string(model).expect("model serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("not a saved model: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::tests::LINEAR;
    use crate::harness::train::{lr_sweep, Source};
    use crate::model::Activation;
    use crate::rng::RngState;

    fn sweep() -> (ExperimentConfig, SweepResult) {
        let mut cfg = ExperimentConfig::from_toml(LINEAR).unwrap();
        cfg.sweep.eta0 = Some(vec![0.004, 0.015, 1e4]);
        let r = lr_sweep(&cfg, Source::Synthetic).unwrap();
        (cfg, r)
    }

    #[test]
    fn empty_result_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        emit_csv(&SweepResult::empty("none"), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.trim_end(), TRACE_COLUMNS.join(","));
    }

    #[test]
    fn csv_round_trips_at_full_precision() {
        let (_, r) = sweep();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        emit_csv(&r, &p).unwrap();
        let mut rd = csv::Reader::from_path(&p).unwrap();
        let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, TRACE_COLUMNS);
        let col = |name: &str| TRACE_COLUMNS.iter().position(|c| *c == name).unwrap();
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        let mut checked = 0;
        for c in &r.cells {
            for (epoch, &m) in c.mse_trace.iter().enumerate() {
                let row = rows
                    .iter()
                    .find(|row| {
                        row[col("eta0")].parse::<f64>().unwrap() == c.cell.eta0
                            && row[col("scale")] == c.cell.scale.to_string()
                            && row[col("epoch")] == epoch.to_string()
                    })
                    .unwrap();
                assert_eq!(row[col("mse")].parse::<f64>().unwrap().to_bits(), m.to_bits());
                let d = c.diagnostics.iter().find(|d| d.epoch == epoch).unwrap();
                assert_eq!(row[col("lambda_max")].parse::<f64>().unwrap().to_bits(), d.lambda_max.to_bits());
                assert_eq!(
                    row[col("rms_dz1")].parse::<f64>().unwrap().to_bits(),
                    d.update.unwrap().dz1.to_bits()
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
        for row in &rows {
            assert!(!row.iter().any(|f| f.to_ascii_lowercase().contains("nan")));
        }
        let flagged = rows.iter().filter(|row| &row[col("diverged")] == "1").count();
        assert_eq!(flagged, 2, "one diverging row per scale");
    }

    #[test]
    fn summary_marks_argmin() {
        let (cfg, r) = sweep();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_all(&cfg, &r, dir.path()).unwrap();
        let mut rd = csv::Reader::from_path(&paths[1]).unwrap();
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|r| &r[13] == "1").count(), 2);
        assert!(rows.iter().filter(|r| &r[10] == "1").all(|r| r[9].is_empty()));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&paths[4]).unwrap()).unwrap();
        assert_eq!(meta["seeds"], serde_json::json!([0]));
    }

    #[test]
    fn svg_parses_with_one_polyline_per_scale() {
        let (_, r) = sweep();
        for chart in [final_mse_chart(&r), trace_chart(&r)] {
            let text = chart.to_svg();
            let doc = roxmltree::Document::parse(&text).unwrap();
            let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
            assert_eq!(lines, r.scales.len());
        }
        let empty = final_mse_chart(&SweepResult::empty("x <&> y")).to_svg();
        assert!(roxmltree::Document::parse(&empty).is_ok());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = emit_csv(&SweepResult::empty("e"), &blocker.join("sub/out.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn model_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ModelState::gaussian(&mut RngState::new(4), 6, 4, 0.5, 0.25, Activation::softmax(), true);
        let p = dir.path().join("m.json");
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
        std::fs::write(&p, "{}").unwrap();
        assert!(matches!(load_model(&p), Err(Error::Format { .. })));

        let img = dir.path().join("a.pgm");
        write_pgm(&img, 2, 2, &[0.0, 0.5, 1.0, 2.0]).unwrap();
        let bytes = std::fs::read(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 128, 255, 255]);
    }
}
