//! Method comparison over the held-out subjects.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use dynmri_core::cs::cs_reconstruct;
use dynmri_core::denoiser::UNet;
use dynmri_core::metrics::{evaluate_series, timed};
use dynmri_core::ImageSeries;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{LoadedManifest, PairRecord};
use crate::report::{render_table, rows_for, summarize, write_case_figure, write_metrics_csv, write_timings_csv, MetricRow};
use crate::series_io::{read_series, write_series};
use crate::simulate::{acquire_case, binned_at, zero_filled_image};
use crate::train::{cmd_reconstruct, subject_split};
use crate::seeds;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ZeroFilled,
    Cs,
    Diffusion,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::ZeroFilled => "zero-filled",
            Self::Cs => "cs",
            Self::Diffusion => "diffusion",
        }
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "zero-filled" => Ok(Self::ZeroFilled),
            "cs" => Ok(Self::Cs),
            "diffusion" => Ok(Self::Diffusion),
            _ => Err(CliError::Config(format!("unknown method {s:?}"))),
        }
    }
}

pub struct SweepOptions<'a> {
    /// Methods besides zero-filled, which always runs.
    pub methods: Vec<Method>,
    pub net: Option<&'a UNet<f32>>,
    pub deterministic: bool,
    pub write_figures: bool,
}

pub struct SweepOutcome {
    pub rows: Vec<MetricRow>,
    pub table: String,
    /// Reconstructions that failed; their rows are missing from the report.
    pub failures: Vec<String>,
}

struct Recon {
    method: Method,
    accel: u32,
    result: CliResult<(ImageSeries, f64)>,
}

struct CaseResult {
    series_id: String,
    stem: String,
    gt: ImageSeries,
    recons: Vec<Recon>,
}

fn run_case(cfg: &ExperimentConfig, m: &LoadedManifest, pairs: &[&PairRecord], opts: &SweepOptions) -> CliResult<CaseResult> {
    let first = pairs[0];
    let subject = m
        .manifest
        .subject(&first.subject)
        .ok_or_else(|| CliError::Data(format!("manifest has no subject {}", first.subject)))?;
    let gt = read_series(&m.resolve(&first.y0))?;
    let (full, signal) = acquire_case(cfg, subject, first.case)?;
    let mut recons = Vec::new();
    for p in pairs {
        let binned = binned_at(cfg, &full, &signal, p.accel, p.kept_spokes, p.case)?;
        let (zf, secs) = timed(|| zero_filled_image(&binned));
        let zf = zf?;
        let stored = read_series(&m.resolve(&p.x))?;
        if zf != stored {
            return Err(CliError::Data(format!("{}: stored condition differs from the regenerated acquisition", p.x)));
        }
        recons.push(Recon { method: Method::ZeroFilled, accel: p.accel, result: Ok((zf, secs)) });
        for &method in &opts.methods {
            let result = match method {
                Method::ZeroFilled => continue,
                Method::Cs => {
                    let (r, secs) = timed(|| cs_reconstruct(&binned, &cfg.cs_config()));
                    r.map(|s| (s, secs)).map_err(CliError::from)
                }
                Method::Diffusion => match opts.net {
                    Some(net) => cmd_reconstruct(cfg, net, &stored, seeds::sample(cfg.run.seed, p.accel, p.case)),
                    None => Err(CliError::Data("diffusion requested without a checkpoint".into())),
                },
            };
            recons.push(Recon { method, accel: p.accel, result });
        }
    }
    Ok(CaseResult {
        series_id: format!("{}/sl{}", first.subject, first.slice),
        stem: format!("{}_sl{}", first.subject, first.slice),
        gt,
        recons,
    })
}

/// Reconstruct every held-out case at every acceleration with each method,
/// score against the fully sampled reference and write the report into
/// `out_dir`. The zero-filled rows are always written; failed
/// reconstructions of other methods are listed in the outcome.
pub fn cmd_sweep(cfg: &ExperimentConfig, m: &LoadedManifest, opts: &SweepOptions, out_dir: &Path) -> CliResult<SweepOutcome> {
    m.manifest.check_config(cfg)?;
    if opts.methods.contains(&Method::Diffusion) && opts.net.is_none() {
        return Err(CliError::Data("the diffusion method needs a checkpoint".into()));
    }
    let (_, test_ids) = subject_split(cfg, m)?;
    let mut cases: Vec<Vec<&PairRecord>> = Vec::new();
    for p in m.manifest.pairs.iter().filter(|p| test_ids.contains(&p.subject)) {
        match cases.iter_mut().find(|c| c[0].case == p.case) {
            Some(c) => c.push(p),
            None => cases.push(vec![p]),
        }
    }
    if cases.is_empty() {
        return Err(CliError::Data("no held-out cases in the manifest".into()));
    }
    let run = |c: &Vec<&PairRecord>| {
        let r = run_case(cfg, m, c, opts);
        eprintln!("sweep: {} slice {} done", c[0].subject, c[0].slice);
        r
    };
    let results: Vec<CliResult<CaseResult>> =
        if opts.deterministic { cases.iter().map(run).collect() } else { cases.par_iter().map(run).collect() };
    let results: Vec<CaseResult> = results.into_iter().collect::<CliResult<_>>()?;

    let recon_dir = out_dir.join("recon");
    let fig_dir = out_dir.join("figures");
    fs::create_dir_all(&recon_dir).map_err(|e| CliError::io(&recon_dir, e))?;
    if opts.write_figures {
        fs::create_dir_all(&fig_dir).map_err(|e| CliError::io(&fig_dir, e))?;
    }

    let mut methods = vec![Method::ZeroFilled];
    methods.extend(opts.methods.iter().filter(|&&x| x != Method::ZeroFilled));
    let mut rows = Vec::new();
    let mut table_rows = Vec::new();
    let mut timings = Vec::new();
    let mut failures = Vec::new();
    for &method in &methods {
        for &accel in &m.manifest.accelerations {
            let (mut ids, mut preds, mut gts, mut secs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for case in &results {
                let Some(r) = case.recons.iter().find(|r| r.method == method && r.accel == accel) else { continue };
                match &r.result {
                    Ok((pred, s)) => {
                        let stem = format!("{}_{}_x{accel:02}", method.name(), case.stem);
                        write_series(&recon_dir.join(format!("{stem}.cirs")), pred)?;
                        if opts.write_figures {
                            write_case_figure(&fig_dir.join(format!("{stem}.pgm")), pred, &case.gt)?;
                        }
                        ids.push(case.series_id.clone());
                        preds.push(pred.clone());
                        gts.push(case.gt.clone());
                        secs.push(*s);
                        timings.push((method.name().to_string(), accel, case.series_id.clone(), *s));
                    }
                    Err(e) if method == Method::ZeroFilled => return Err(CliError::Data(e.to_string())),
                    Err(e) => failures.push(format!("{} {accel}x {}: {e}", method.name(), case.series_id)),
                }
            }
            if preds.is_empty() {
                continue;
            }
            let report = evaluate_series(&preds, &gts, &secs, cfg.ssim_window())?;
            rows.extend(rows_for(method.name(), accel, &ids, &report, opts.deterministic));
            table_rows.extend(rows_for(method.name(), accel, &ids, &report, false));
        }
    }
    write_metrics_csv(&out_dir.join(METRICS_FILE), &rows)?;
    // wall-clock timings are not reproducible; in deterministic mode they only
    // appear in the text summary
    if !opts.deterministic {
        write_timings_csv(&out_dir.join(TIMINGS_FILE), &timings)?;
    }
    let table = render_table(&summarize(&table_rows));
    let summary = out_dir.join(SUMMARY_FILE);
    fs::write(&summary, &table).map_err(|e| CliError::io(&summary, e))?;
    Ok(SweepOutcome { rows, table, failures })
}
