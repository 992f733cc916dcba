use amsa::experiment::{analyze_dir, read_curves, run_experiment, ExperimentConfig, ExperimentEnv};

const CONFIG: &str = r#"{
  "config_version": 1,
  "name": "round-trip",
  "problem": {
    "kind": "nested-linear", "dims": [2, 2], "delta_target": 0.5,
    "coupling_scale": 0.1, "sigma": 0.5, "kernel_kind": "fixed",
    "n_states": 4, "seed": 3
  },
  "solvers": [
    { "kind": "amsa", "schedule": { "form": "practical", "delta": 0.5, "h": 100 } },
    { "kind": "msa", "schedule": { "form": "practical", "delta": 0.5, "h": 100, "lower": [10] } }
  ],
  "horizon": 20000,
  "seeds": { "count": 3, "base": 5 },
  "record": { "kind": "log-spaced", "per_decade": 20, "cap": 256 },
  "fit": { "decades": 1.0 },
  "dump_trajectories": true
}"#;

#[test]
fn written_report_reads_back() {
    let config = ExperimentConfig::from_json(CONFIG).unwrap();
    let report = run_experiment(&config, &ExperimentEnv::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();

    // Curves survive the CSV round trip exactly.
    let curves = read_curves(&dir.path().join("curves.csv")).unwrap();
    for (kind, quantities) in &report.curves {
        assert_eq!(&curves[kind.as_str()], quantities);
    }

    // Refitting from disk reproduces the in-run fits.
    let fits = analyze_dir(dir.path(), config.fit.decades).unwrap();
    for (name, summary) in &report.summary.solvers {
        assert_eq!(fits[name].fit, summary.fit(), "{name}");
    }

    let dumped = std::fs::read_dir(dir.path().join("trajectories")).unwrap().count();
    assert!(dumped >= 6, "{dumped} trajectory files");
    assert!(dir.path().join("plot_V.svg").exists());
}

#[test]
fn config_hash_ignores_output_directory() {
    let mut config = ExperimentConfig::from_json(CONFIG).unwrap();
    let h = config.hash().unwrap();
    config.output = Some("elsewhere".into());
    assert_eq!(config.hash().unwrap(), h);
    config.horizon += 1;
    assert_ne!(config.hash().unwrap(), h);
}

#[test]
fn unknown_fields_are_rejected() {
    let bad = CONFIG.replace("\"horizon\"", "\"horizn\"");
    assert!(ExperimentConfig::from_json(&bad).is_err());
}
