//! Metrics CSV, text summary tables and graymap figures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dynmri_core::metrics::{joint_rescale, MetricReport};
use dynmri_core::ImageSeries;

use crate::error::{CliError, CliResult};

pub const METRICS_HEADER: [&str; 8] = ["method", "accel", "series_id", "psnr_db", "one_minus_ssim", "rmse", "seconds", "agg"];

/// One line of the metrics CSV. Aggregate lines carry `series_id` `mean` or
/// `std` and `agg = true`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub accel: u32,
    pub series_id: String,
    pub psnr_db: f64,
    pub one_minus_ssim: f64,
    pub rmse: f64,
    pub seconds: f64,
    pub agg: bool,
}

/// Per-series rows followed by the mean and std rows. With `zero_seconds`
/// the seconds column is written as 0 so the file is reproducible.
pub fn rows_for(method: &str, accel: u32, ids: &[String], report: &MetricReport, zero_seconds: bool) -> Vec<MetricRow> {
    let secs = |s: f64| if zero_seconds { 0.0 } else { s };
    let mut rows: Vec<MetricRow> = ids
        .iter()
        .zip(&report.per_series)
        .map(|(id, s)| MetricRow {
            method: method.into(),
            accel,
            series_id: id.clone(),
            psnr_db: s.psnr_db,
            one_minus_ssim: s.one_minus_ssim,
            rmse: s.rmse,
            seconds: secs(s.seconds),
            agg: false,
        })
        .collect();
    for (label, pick) in [("mean", true), ("std", false)] {
        let v = |a: dynmri_core::metrics::Aggregate| if pick { a.mean } else { a.std };
        rows.push(MetricRow {
            method: method.into(),
            accel,
            series_id: label.into(),
            psnr_db: v(report.psnr_db),
            one_minus_ssim: v(report.one_minus_ssim),
            rmse: v(report.rmse),
            seconds: if zero_seconds { 0.0 } else { v(report.seconds) },
            agg: true,
        });
    }
    rows
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> CliResult<()> {
    let err = |e: csv::Error| CliError::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(METRICS_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.accel.to_string(),
            r.series_id.clone(),
            r.psnr_db.to_string(),
            r.one_minus_ssim.to_string(),
            r.rmse.to_string(),
            r.seconds.to_string(),
            r.agg.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> CliResult<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(CliError::Data(format!("{}: unexpected header {:?}", path.display(), header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let bad = |field: &str| CliError::Data(format!("{}: row {}: bad {field}", path.display(), i + 2));
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(METRICS_HEADER[k]));
        rows.push(MetricRow {
            method: rec[0].to_string(),
            accel: rec[1].parse().map_err(|_| bad("accel"))?,
            series_id: rec[2].to_string(),
            psnr_db: num(3)?,
            one_minus_ssim: num(4)?,
            rmse: num(5)?,
            seconds: num(6)?,
            agg: rec[7].parse().map_err(|_| bad("agg"))?,
        });
    }
    Ok(rows)
}

/// Seconds per reconstruction, one row per series.
pub fn write_timings_csv(path: &Path, rows: &[(String, u32, String, f64)]) -> CliResult<()> {
    let err = |e: csv::Error| CliError::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["method", "accel", "series_id", "seconds"]).map_err(err)?;
    for (m, a, id, s) in rows {
        w.write_record([m.clone(), a.to_string(), id.clone(), s.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Aggregate cell of the summary table.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct SummaryLine {
    pub method: String,
    pub accel: u32,
    pub n: usize,
    pub psnr_db: Cell,
    pub one_minus_ssim: Cell,
    pub rmse: Cell,
    pub seconds: Cell,
}

/// Gather aggregate rows into summary lines, in first-seen method order and
/// ascending acceleration.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryLine> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        let mut accels: Vec<u32> = rows.iter().filter(|r| r.method == m).map(|r| r.accel).collect();
        accels.sort_unstable();
        accels.dedup();
        for a in accels {
            let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.method == m && r.accel == a).collect();
            let find = |id: &str| sel.iter().find(|r| r.agg && r.series_id == id);
            let (Some(mean), Some(std)) = (find("mean"), find("std")) else { continue };
            let cell = |f: fn(&MetricRow) -> f64| Cell { mean: f(mean), std: f(std) };
            out.push(SummaryLine {
                method: m.to_string(),
                accel: a,
                n: sel.iter().filter(|r| !r.agg).count(),
                psnr_db: cell(|r| r.psnr_db),
                one_minus_ssim: cell(|r| r.one_minus_ssim),
                rmse: cell(|r| r.rmse),
                seconds: cell(|r| r.seconds),
            });
        }
    }
    out
}

fn fmt_cell(c: Cell, digits: usize) -> String {
    if c.mean.is_infinite() {
        return "inf".into();
    }
    format!("{:.*} ± {:.*}", digits, c.mean, digits, c.std)
}

/// Fixed-width text table: method x acceleration, mean ± std per metric.
pub fn render_table(lines: &[SummaryLine]) -> String {
    let header = ["method", "accel", "n", "PSNR (dB)", "1-SSIM", "RMSE", "seconds"];
    let body: Vec<[String; 7]> = lines
        .iter()
        .map(|l| {
            [
                l.method.clone(),
                format!("{}x", l.accel),
                l.n.to_string(),
                fmt_cell(l.psnr_db, 2),
                fmt_cell(l.one_minus_ssim, 4),
                fmt_cell(l.rmse, 4),
                fmt_cell(l.seconds, 2),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header.map(String::from));
    line(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>());
    for row in &body {
        line(row);
    }
    out
}

/// 8-bit binary graymap of `values` in `[0, 1]`, row-major `height x width`.
pub fn encode_pgm(values: &[f32], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Figure of one case: reference, reconstruction and absolute difference as
/// three rows, phase bins left to right, all on the joint `[0, 1]` scale
/// used for scoring.
pub fn write_case_figure(path: &Path, pred: &ImageSeries, gt: &ImageSeries) -> CliResult<()> {
    let (p, g) = joint_rescale(pred, gt)?;
    let (n, h, w) = p.dim();
    let mut px = vec![0.0f32; 3 * h * n * w];
    for b in 0..n {
        for r in 0..h {
            for c in 0..w {
                let (gv, pv) = (g.frame(b)[[r, c]], p.frame(b)[[r, c]]);
                let col = b * w + c;
                px[r * n * w + col] = gv;
                px[(h + r) * n * w + col] = pv;
                px[(2 * h + r) * n * w + col] = (pv - gv).abs();
            }
        }
    }
    fs::write(path, encode_pgm(&px, 3 * h, n * w)).map_err(|e| CliError::io(path, e))
}
