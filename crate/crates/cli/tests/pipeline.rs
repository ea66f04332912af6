use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dynmri_cli::manifest::LoadedManifest;
use dynmri_cli::report::{read_metrics_csv, rows_for, METRICS_HEADER};
use dynmri_cli::simulate::cmd_simulate;
use dynmri_cli::sweep::{cmd_sweep, Method, SweepOptions, METRICS_FILE};
use dynmri_cli::train::cmd_train;
use dynmri_cli::{CliError, ExperimentConfig};
use dynmri_core::metrics::{evaluate_series, SsimWindow};

const TINY: &str = include_str!("../configs/tiny.toml");

fn tiny() -> ExperimentConfig {
    ExperimentConfig::parse(TINY).unwrap()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn simulate_lists_subjects_times_accelerations() {
    let mut cfg = tiny();
    cfg.phantom.subjects = 2;
    let dir = tempfile::tempdir().unwrap();
    let m = cmd_simulate(&cfg, dir.path(), true).unwrap();
    assert_eq!(m.subjects.len(), 2);
    assert_eq!(m.pairs.len(), 2 * 2);
    assert_eq!(m.kept_spokes, vec![200, 20]);
    let loaded = LoadedManifest::load(dir.path()).unwrap();
    assert_eq!(loaded.manifest, m);
    for p in &m.pairs {
        assert!(loaded.resolve(&p.x).is_file());
        assert!(loaded.resolve(&p.y0).is_file());
    }
}

#[test]
fn simulate_is_reproducible_and_parallel_matches_serial() {
    let cfg = tiny();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_simulate(&cfg, a.path(), true).unwrap();
    cmd_simulate(&cfg, b.path(), true).unwrap();
    cmd_simulate(&cfg, c.path(), false).unwrap();
    let ta = tree(a.path());
    assert!(ta.len() > 3);
    assert_eq!(ta, tree(b.path()));
    assert_eq!(ta, tree(c.path()));
    let mut other = cfg.clone();
    other.run.seed += 1;
    let d = tempfile::tempdir().unwrap();
    cmd_simulate(&other, d.path(), true).unwrap();
    assert_ne!(ta, tree(d.path()));
}

#[test]
fn identical_prediction_scores_zero_rmse() {
    let gt = dynmri_core::ImageSeries::new(ndarray::Array3::from_shape_fn((2, 8, 8), |(b, r, c)| (b + r * c) as f32)).unwrap();
    let report = evaluate_series(&[gt.clone()], &[gt], &[0.5], SsimWindow::default()).unwrap();
    let rows = rows_for("zero-filled", 3, &["s/sl0".into()], &report, false);
    assert_eq!(rows[0].rmse, 0.0);
    assert!(rows[0].psnr_db.is_infinite());
    assert_eq!(rows[0].one_minus_ssim, 0.0);
    assert_eq!(rows.iter().filter(|r| r.agg).count(), 2);
}

#[test]
fn train_and_sweep_write_parsable_reports() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path(), true).unwrap();
    let m = LoadedManifest::load(dir.path()).unwrap();

    let out = dir.path().join("model");
    let trained = cmd_train(&cfg, &m, &out, |_| {}).unwrap();
    assert_eq!(trained.history.rows.len(), cfg.train.iterations);
    assert_eq!(trained.train_subjects.len(), 2);
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert!(loss.starts_with("iteration,train_loss,val_loss,lr\n"));
    assert_eq!(loss.lines().count(), cfg.train.iterations + 1);

    let no_net = SweepOptions { methods: vec![Method::Cs, Method::Diffusion], net: None, deterministic: true, write_figures: false };
    assert!(matches!(cmd_sweep(&cfg, &m, &no_net, &dir.path().join("x")), Err(CliError::Data(_))));

    let sweep_dir = dir.path().join("sweep");
    fs::create_dir_all(&sweep_dir).unwrap();
    let opts = SweepOptions { methods: vec![Method::Cs, Method::Diffusion], net: Some(&trained.net), deterministic: false, write_figures: true };
    let outcome = cmd_sweep(&cfg, &m, &opts, &sweep_dir).unwrap();
    assert!(outcome.failures.is_empty());
    let rows = read_metrics_csv(&sweep_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(rows, outcome.rows);
    let header = fs::read_to_string(sweep_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(header.lines().next().unwrap(), METRICS_HEADER.join(","));
    // 3 methods x 2 accelerations x (1 series + mean + std)
    assert_eq!(rows.len(), 3 * 2 * 3);
    for method in ["zero-filled", "cs", "diffusion"] {
        assert!(rows.iter().any(|r| r.method == method && r.agg && r.series_id == "mean"));
    }
    assert!(rows.iter().filter(|r| !r.agg).all(|r| r.seconds > 0.0));
    assert!(outcome.table.contains("PSNR (dB)"));
    let figs = fs::read_dir(sweep_dir.join("figures")).unwrap().count();
    assert_eq!(figs, 3 * 2);
    let first = fs::read_dir(sweep_dir.join("figures")).unwrap().next().unwrap().unwrap().path();
    let pgm = fs::read(first).unwrap();
    // three 32-row bands, eight 32-column bins
    let header = b"P5\n256 96\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 96 * 256);
}

#[test]
fn sweep_rejects_mismatched_config() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path(), true).unwrap();
    let m = LoadedManifest::load(dir.path()).unwrap();
    let mut other = cfg.clone();
    other.run.seed = 99;
    let opts = SweepOptions { methods: vec![], net: None, deterministic: true, write_figures: false };
    assert!(matches!(cmd_sweep(&other, &m, &opts, dir.path()), Err(CliError::Config(_))));
}

#[test]
fn desk_phantom_sweep_degrades_with_acceleration() {
    let mut cfg = ExperimentConfig::default();
    cfg.phantom.subjects = 2;
    cfg.phantom.slices = 1;
    cfg.acquisition.accelerations = vec![3, 10, 30];
    cfg.train.holdout_fraction = 0.5;
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path(), true).unwrap();
    let m = LoadedManifest::load(dir.path()).unwrap();
    let opts = SweepOptions { methods: vec![Method::Cs], net: None, deterministic: true, write_figures: false };
    let outcome = cmd_sweep(&cfg, &m, &opts, dir.path()).unwrap();
    print!("{}", outcome.table);
    for method in ["zero-filled", "cs"] {
        let means: Vec<f64> = [3, 10, 30]
            .iter()
            .map(|&a| outcome.rows.iter().find(|r| r.method == method && r.accel == a && r.series_id == "mean").unwrap().psnr_db)
            .collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "{method}: {means:?}");
    }
}
