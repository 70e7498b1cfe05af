use dax::harness::{run_experiment, write_outputs, ExperimentConfig};
use dax::{Execution, Method};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        n_trials: 3,
        n_windows: 6,
        ..ExperimentConfig::default()
    }
}

fn read_all(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn identical_runs_write_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_outputs(
        &run_experiment(&small(), Execution::Parallel).unwrap(),
        a.path(),
    )
    .unwrap();
    write_outputs(
        &run_experiment(&small(), Execution::Sequential).unwrap(),
        b.path(),
    )
    .unwrap();
    let fa = read_all(a.path());
    assert_eq!(fa.len(), 5);
    assert_eq!(fa, read_all(b.path()));
}

#[test]
fn csv_headers_and_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_experiment(&small(), Execution::Parallel).unwrap();
    write_outputs(&bundle, dir.path()).unwrap();
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();

    let summary = read("summary.csv");
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "method,spread_mean,spread_std,rmse_mean,rmse_std,gamma_bar_mean,gamma_bar_std,rho_mean,rho_std"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 9));

    let ranks = read("ranks.csv");
    assert_eq!(
        ranks.lines().next().unwrap(),
        "method,rank_bin,count,total,chi2,flatness"
    );
    assert_eq!(ranks.lines().count(), 1 + 3 * 11);

    let bv = read("biasvar.csv");
    assert_eq!(
        bv.lines().next().unwrap(),
        "method,window,bias2,variance,mse"
    );
    assert_eq!(bv.lines().filter(|l| l.contains(",mean,")).count(), 3);
    for l in bv.lines().skip(1) {
        let f: Vec<f64> = l.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        assert!((f[0] + f[1] - f[2]).abs() <= 1e-10 * f[2].max(1.0));
    }

    let series = read("series.csv");
    assert_eq!(
        series.lines().next().unwrap(),
        "method,trial,window,k_w,sigma_w,rmse_w,gamma_w"
    );
    let row: Vec<&str> = series.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "seq-enkf");
    assert_eq!(row[3], "5");
    // 17 significant digits: one leading digit and 16 after the point
    let mantissa = row[4].trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.len(), 18);

    let hashes = read("truth_obs_hash.txt");
    assert_eq!(hashes.lines().count(), 3);
}

#[test]
fn methods_share_observations() {
    let bundle = run_experiment(&small(), Execution::Parallel).unwrap();
    for t in 0..3 {
        let hashes: Vec<&str> = bundle
            .methods
            .iter()
            .map(|m| m.trials[t].obs_hash.as_str())
            .collect();
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn single_method_and_seed_change() {
    let mut cfg = small();
    cfg.methods = vec![Method::QpcaEndcf];
    let a = run_experiment(&cfg, Execution::Parallel).unwrap();
    assert_eq!(a.methods.len(), 1);
    cfg.base_seed = 43;
    let b = run_experiment(&cfg, Execution::Parallel).unwrap();
    assert_ne!(a.obs_hashes, b.obs_hashes);
}

#[test]
fn divergent_trials_are_excluded() {
    // members start far beyond the divergence threshold; the truth does not
    let cfg = ExperimentConfig {
        n_trials: 2,
        n_windows: 3,
        sigma_init: 1e7,
        methods: vec![Method::SeqEnkf],
        ..ExperimentConfig::default()
    };
    let bundle = run_experiment(&cfg, Execution::Sequential).unwrap();
    let m = &bundle.methods[0];
    assert_eq!(m.diverged, vec![0, 1]);
    assert!(m.trials.is_empty() && m.summary.is_none() && m.bias_variance.is_none());
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&bundle, dir.path()).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
}

#[test]
fn shipped_baseline_config_is_the_default() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/baseline.cfg");
    let cfg = dax::harness::load_config(&path).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}
