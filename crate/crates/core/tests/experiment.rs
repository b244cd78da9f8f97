use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use tempfile::tempdir;

use drsgt::engine::agent_rng;
use drsgt::experiment::{
    parse_metrics_csv, read_metrics_csv, run_experiment, run_experiment_with, run_sweep,
    ExperimentConfig, SweepAxis, SweepManifest, CSV_HEADER, MANIFEST_FILE,
};
use drsgt::{Point, Problem};

fn small(dir: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::parse(
        "name = small\nagents = 4\nrows_per_agent = 100\ndim = 6\nrank = 2\neigengap = 0.5\nmax_iters = 40\n",
    )
    .unwrap();
    c.output_dir = dir.to_path_buf();
    c
}

fn inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose()
}

#[test]
fn initial_metrics_match_straight_line_recomputation() {
    let dir = tempdir().unwrap();
    let cache = dir.path().join("instance.bin");
    let mut config = small(dir.path());
    config.apply_overrides(&["--init=independent", "--max_iters=0", "--seed=4"]).unwrap();
    config.instance_cache = Some(cache.clone());
    let summary = run_experiment(&config).unwrap();
    let row = &summary.final_row;

    let p = Problem::load(&cache).unwrap();
    let mut rng = agent_rng(4, 0);
    let xs: Vec<DMatrix<f64>> = (0..4)
        .map(|_| Point::random(6, 2, &mut rng).unwrap().matrix().clone())
        .collect();
    let mean = xs.iter().sum::<DMatrix<f64>>() / 4.0;
    let center = &mean * inv_sqrt(&(mean.transpose() * &mean));
    let mut cov = DMatrix::<f64>::zeros(6, 6);
    for i in 0..4 {
        cov += p.data(i).transpose() * p.data(i);
    }
    cov /= 4.0;
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let f_star = -0.5 * (eig.eigenvalues[order[0]] + eig.eigenvalues[order[1]]);
    let x_star = DMatrix::from_fn(6, 2, |i, j| eig.eigenvectors[(i, order[j])]);

    let f = -0.5 * center.dot(&(&cov * &center));
    let g = -(&cov * &center);
    let s = center.transpose() * &g;
    let rgrad = &g - &center * ((&s + s.transpose()) * 0.5);
    let consensus = xs.iter().map(|x| (x - &center).norm_squared()).sum::<f64>().sqrt();
    let cross = center.transpose() * &x_star;
    let nuclear: f64 = SymmetricEigen::new(cross.transpose() * &cross)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let ds = (4.0 - 2.0 * nuclear).max(0.0).sqrt();

    assert_eq!(row.k, 0);
    assert!((row.f_gap - (f - f_star)).abs() < 1e-12);
    assert!((row.grad_norm - rgrad.norm()).abs() < 1e-12);
    assert!((row.consensus - consensus).abs() < 1e-12);
    assert!((row.ds - ds).abs() < 1e-7);
    assert_eq!(row.samples_cum, 4);
    assert_eq!(row.comm_rounds_cum, 0);
}

#[test]
fn default_figure_run_writes_one_row_per_iteration() {
    let dir = tempdir().unwrap();
    let config = ExperimentConfig {
        name: "fig1".into(),
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let summary = run_experiment(&config).unwrap();
    let text = std::fs::read_to_string(config.csv_path()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema=1"));
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows = parse_metrics_csv(&text).unwrap();
    assert_eq!(rows.len(), 1001);
    assert_eq!(summary.rows_written, 1001);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row.k, k as u64);
        assert_eq!(row.wall_ms, 0);
    }
    assert!(rows.windows(2).all(|w| w[0].samples_cum < w[1].samples_cum));
}

#[test]
fn in_process_replay_is_byte_identical() {
    let dir = tempdir().unwrap();
    let config = small(dir.path());
    let p = Arc::new(Problem::generate(&config.instance).unwrap());
    let mut a = Vec::new();
    let mut b = Vec::new();
    let sa = run_experiment_with(&config, p.clone(), &mut a).unwrap();
    let sb = run_experiment_with(&config, p, &mut b).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn schedule_sweep_writes_a_manifest_entry_per_value() {
    let dir = tempdir().unwrap();
    let base = small(dir.path());
    let values: Vec<String> = ["constant:1", "polynomial:1", "geometric:0.9"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let axis = SweepAxis::parse("schedule", &values).unwrap();
    let out = dir.path().join("sweep");
    let manifest = run_sweep(&base, &axis, &out, 3).unwrap();
    assert_eq!(manifest.entries.len(), 3);
    assert_eq!(manifest.failures(), 0);
    let reread = SweepManifest::read(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(reread, manifest);
    for (i, e) in manifest.entries.iter().enumerate() {
        assert_eq!(e.run_id, format!("run-{i:03}"));
        assert_eq!(e.config["schedule"], values[i]);
        let rows = read_metrics_csv(&out.join(&e.csv)).unwrap();
        assert_eq!(rows.len(), 41);
    }
}

#[test]
fn failed_runs_are_recorded_without_aborting_the_sweep() {
    let dir = tempdir().unwrap();
    let base = small(dir.path());
    let axis = SweepAxis::parse("beta", &["0.1".into(), "-1".into(), "0.05".into()]).unwrap();
    let manifest = run_sweep(&base, &axis, dir.path(), 2).unwrap();
    assert_eq!(manifest.failures(), 1);
    let failed = &manifest.entries[1];
    assert_eq!(failed.status, "error");
    assert!(failed.summary.is_none());
    assert!(failed.error.as_deref().unwrap().contains("beta"));
    assert_eq!(manifest.entries[0].status, "ok");
    assert_eq!(manifest.entries[2].status, "ok");
}

#[test]
fn instance_cache_is_reused() {
    let dir = tempdir().unwrap();
    let cache = dir.path().join("cache").join("inst.bin");
    let mut config = small(dir.path());
    config.instance_cache = Some(cache.clone());
    config.max_iters = 3;
    let first = run_experiment(&config).unwrap();
    let written = std::fs::read(&cache).unwrap();
    // a different seed would generate a different instance; the cache wins
    config.instance.seed = 99;
    let second = run_experiment(&config).unwrap();
    assert_eq!(std::fs::read(&cache).unwrap(), written);
    assert_eq!(first.final_row, second.final_row);
    config.instance.dim = 7;
    assert!(run_experiment(&config).is_err());
}

#[test]
fn target_accuracy_stops_the_run() {
    let dir = tempdir().unwrap();
    let mut config = small(dir.path());
    config.apply_overrides(&["--oracle=full", "--max_iters=2000", "--target_eps=1e-10", "--log_every=100"]).unwrap();
    let summary = run_experiment(&config).unwrap();
    let k = summary.reached_target_at.expect("target reached");
    assert_eq!(summary.iterations, k);
    assert!(summary.final_row.grad_norm.powi(2) <= 1e-10);
    let rows = read_metrics_csv(&config.csv_path()).unwrap();
    assert_eq!(rows.last().unwrap().k, k);
}

#[test]
fn missing_config_file_names_the_path() {
    let err = ExperimentConfig::load(std::path::Path::new("/nonexistent/cfg.conf")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/cfg.conf"));
}

#[test]
fn config_text_round_trips() {
    let dir = tempdir().unwrap();
    let mut config = small(dir.path());
    config.apply_overrides(&["--schedule=geometric:0.85", "--oracle=synthetic:0.25", "--topology=star"]).unwrap();
    let again = ExperimentConfig::parse(&config.to_config_text()).unwrap();
    assert_eq!(again, config);
}
