//! Synthetic cohort generation.

use std::fs;
use std::path::Path;

use dynmri_core::cs::zero_filled;
use dynmri_core::kspace::{acquire_dynamic, bin_by_phase, golden_angle_trajectory, undersample_spokes, BinnedKSpace, KSpaceData};
use dynmri_core::phantom::{is_irregular, regularity_score, respiratory_signal, Anatomy, BreathingPhantom, MotionModel, SelfGatingSignal};
use dynmri_core::rng::{rng_from_seed, stream};
use dynmri_core::ImageSeries;
use rand::RngCore;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{write_manifest, Manifest, PairRecord, RejectedRecord, SubjectRecord, MANIFEST_VERSION};
use crate::series_io::write_series;
use crate::seeds;

pub const SERIES_DIR: &str = "series";

/// Draw candidates for subject slot `index` until one breathes regularly.
pub fn select_subject(cfg: &ExperimentConfig, index: usize) -> CliResult<(SubjectRecord, Vec<RejectedRecord>)> {
    let mut rng = stream(cfg.run.seed, "subject", index as u64);
    let a = &cfg.acquisition;
    let duration = a.full_spokes as f64 / a.spoke_rate_hz;
    let mut rejected = Vec::new();
    for attempt in 0..cfg.phantom.max_attempts {
        // 63 bits: the manifest stores seeds as TOML (signed 64-bit) integers
        let motion_seed = rng.next_u64() >> 1;
        let motion = cfg.draw_motion(&mut rng, motion_seed);
        let signal = respiratory_signal(&motion, duration, 1.0 / a.spoke_rate_hz)?;
        match regularity_score(&signal) {
            Ok(score) if !is_irregular(score) => {
                let record = SubjectRecord {
                    id: format!("subj{index:02}"),
                    index,
                    attempt,
                    period_s: motion.period_s,
                    amplitude_px: motion.amplitude_px,
                    drift_px_per_cycle: motion.drift_px_per_cycle,
                    jitter_frac: motion.jitter_frac,
                    motion_seed,
                    regularity: score,
                };
                return Ok((record, rejected));
            }
            Ok(score) => rejected.push(RejectedRecord { index, attempt, reason: format!("regularity {score:.4} > 0.20") }),
            Err(e) => rejected.push(RejectedRecord { index, attempt, reason: e.to_string() }),
        }
    }
    Err(CliError::Numeric(format!(
        "subject {index}: no regular breather in {} candidates",
        cfg.phantom.max_attempts
    )))
}

pub fn motion_of(s: &SubjectRecord) -> MotionModel {
    MotionModel {
        period_s: s.period_s,
        amplitude_px: s.amplitude_px,
        drift_px_per_cycle: s.drift_px_per_cycle,
        jitter_frac: s.jitter_frac,
        seed: s.motion_seed,
    }
}

/// Continuous full acquisition of one slice.
pub fn acquire_case(cfg: &ExperimentConfig, subject: &SubjectRecord, case: usize) -> CliResult<(KSpaceData, SelfGatingSignal)> {
    let a = &cfg.acquisition;
    let n = cfg.phantom.size;
    let anatomy = Anatomy::random(&mut rng_from_seed(seeds::anatomy(cfg.run.seed, case)));
    let duration = a.full_spokes as f64 / a.spoke_rate_hz;
    let phantom = BreathingPhantom::new(anatomy, motion_of(subject), n, n, duration + 1.0)?;
    let traj = golden_angle_trajectory(a.full_spokes, a.samples_per_spoke, n)?;
    Ok(acquire_dynamic(&phantom, &traj, a.spoke_rate_hz)?)
}

/// Retrospectively undersampled and binned k-space of a case.
pub fn binned_at(
    cfg: &ExperimentConfig,
    full: &KSpaceData,
    signal: &SelfGatingSignal,
    accel: u32,
    kept: usize,
    case: usize,
) -> CliResult<BinnedKSpace> {
    let ks = if kept == full.n_spokes() { full.clone() } else { undersample_spokes(full, kept, seeds::undersample(cfg.run.seed, accel, case))? };
    Ok(bin_by_phase(&ks, signal, cfg.acquisition.n_bins)?)
}

/// Magnitude of the density-compensated adjoint reconstruction.
pub fn zero_filled_image(binned: &BinnedKSpace) -> CliResult<ImageSeries> {
    Ok(zero_filled(binned)?.magnitude())
}

/// Target and per-acceleration conditions of one case.
pub struct CaseImages {
    pub y0: ImageSeries,
    pub x: Vec<ImageSeries>,
}

pub fn simulate_case(cfg: &ExperimentConfig, subject: &SubjectRecord, case: usize) -> CliResult<CaseImages> {
    let (full, signal) = acquire_case(cfg, subject, case)?;
    let y0 = zero_filled_image(&bin_by_phase(&full, &signal, cfg.acquisition.n_bins)?)?;
    let x = cfg
        .acquisition
        .accelerations
        .iter()
        .zip(cfg.kept_spokes())
        .map(|(&r, kept)| zero_filled_image(&binned_at(cfg, &full, &signal, r, kept, case)?))
        .collect::<CliResult<_>>()?;
    Ok(CaseImages { y0, x })
}

pub fn y0_name(subject: &str, slice: usize) -> String {
    format!("{SERIES_DIR}/{subject}_sl{slice}_y0.cirs")
}

pub fn x_name(subject: &str, slice: usize, accel: u32) -> String {
    format!("{SERIES_DIR}/{subject}_sl{slice}_x{accel:02}.cirs")
}

/// Simulate the cohort into `out_dir` and write its manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path, deterministic: bool) -> CliResult<Manifest> {
    fs::create_dir_all(out_dir.join(SERIES_DIR)).map_err(|e| CliError::io(out_dir, e))?;
    let p = &cfg.phantom;
    let mut subjects = Vec::with_capacity(p.subjects);
    let mut rejected = Vec::new();
    for index in 0..p.subjects {
        let (s, r) = select_subject(cfg, index)?;
        subjects.push(s);
        rejected.extend(r);
    }
    let cases: Vec<(usize, usize)> = (0..p.subjects).flat_map(|s| (0..p.slices).map(move |sl| (s, sl))).collect();
    let run = |&(s, slice): &(usize, usize)| -> CliResult<Vec<PairRecord>> {
        let subject = &subjects[s];
        let case = s * p.slices + slice;
        let images = simulate_case(cfg, subject, case)?;
        let y0 = y0_name(&subject.id, slice);
        write_series(&out_dir.join(&y0), &images.y0)?;
        let mut pairs = Vec::new();
        for ((&accel, kept), x) in cfg.acquisition.accelerations.iter().zip(cfg.kept_spokes()).zip(&images.x) {
            let name = x_name(&subject.id, slice, accel);
            write_series(&out_dir.join(&name), x)?;
            pairs.push(PairRecord { subject: subject.id.clone(), slice, case, accel, kept_spokes: kept, x: name, y0: y0.clone() });
        }
        Ok(pairs)
    };
    let per_case: Vec<CliResult<Vec<PairRecord>>> =
        if deterministic { cases.iter().map(run).collect() } else { cases.par_iter().map(run).collect() };
    let mut pairs = Vec::new();
    for r in per_case {
        pairs.extend(r?);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        master_seed: cfg.run.seed,
        fingerprint: cfg.simulation_fingerprint(),
        size: p.size,
        n_bins: cfg.acquisition.n_bins,
        full_spokes: cfg.acquisition.full_spokes,
        slices: p.slices,
        accelerations: cfg.acquisition.accelerations.clone(),
        kept_spokes: cfg.kept_spokes(),
        subjects,
        rejected,
        pairs,
    };
    write_manifest(out_dir, &manifest)?;
    let cfg_path = out_dir.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| CliError::io(&cfg_path, e))?;
    Ok(manifest)
}
