use dynmri_cli::config::DESK_CONFIG;
use dynmri_cli::{CliError, ExperimentConfig};

#[test]
fn documented_desk_file_matches_builtin_defaults() {
    let parsed = ExperimentConfig::parse(DESK_CONFIG).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
}

#[test]
fn empty_file_is_the_default() {
    assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
}

#[test]
fn serialized_config_parses_back() {
    let cfg = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn desk_accelerations_keep_expected_spokes() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.acquisition.full_spokes, 1200);
    assert_eq!(cfg.kept_spokes(), vec![400, 200, 120, 60, 40]);
}

#[test]
fn derived_module_configs() {
    let cfg = ExperimentConfig::default();
    let d = cfg.denoiser_config();
    assert_eq!((d.n_bins, d.height, d.width), (8, 64, 64));
    assert_eq!(cfg.schedule().unwrap().n_steps(), 800);
    let t = cfg.train_config();
    assert_eq!((t.iterations, t.batch_size, t.warmup_iters), (20_000, 4, 1_000));
    let mut other = cfg.clone();
    other.run.seed = 5;
    assert_ne!(other.train_config().seed, t.seed);
}

#[test]
fn bad_values_are_config_errors() {
    for text in [
        "[phantom]\nsize = 30\n",
        "[phantom]\nsubjects = 0\n",
        "[acquisition]\naccelerations = []\n",
        "[acquisition]\naccelerations = [3, 3]\n",
        "[acquisition]\nfull_spokes = 300\n",
        "[train]\nholdout_fraction = 1.5\n",
        "[cs]\nlambda_t = -1.0\n",
        "[cs]\nstep_rule = \"sometimes\"\n",
        "[denoiser]\nbase_width = 12\n",
        "[metrics]\nssim_window = 0\n",
        "[phantom]\nsizee = 64\n",
        "[unknown]\n",
        "not toml",
    ] {
        match ExperimentConfig::parse(text) {
            Err(CliError::Config(_)) => {}
            other => panic!("{text:?} gave {other:?}"),
        }
    }
}

#[test]
fn simulation_fingerprint_ignores_training_settings() {
    let a = ExperimentConfig::default();
    let mut b = a.clone();
    b.train.iterations = 7;
    b.cs.lambda_t = 0.2;
    assert_eq!(a.simulation_fingerprint(), b.simulation_fingerprint());
    b.phantom.subjects = 3;
    assert_ne!(a.simulation_fingerprint(), b.simulation_fingerprint());
}
