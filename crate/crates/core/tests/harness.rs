use marginals::harness::{
    emit_plot_data, find_n_epsilon, load_results, persist_results, run_sweep, run_trials, run_trials_serial,
    wilson_interval, SweepConfig, Z95,
};
use marginals::{DistributionSpec, Error, SolverConfig};
use statrs::distribution::{Binomial, Discrete};

fn small_config(seed: u64) -> SweepConfig {
    SweepConfig {
        spec: DistributionSpec::Gaussian { n: 2 },
        n_grid: vec![2, 3, 4],
        p: 3.0,
        q: None,
        epsilon: 1.0,
        delta: 0.1,
        trials_per_point: 40,
        n_min: 16,
        n_max: 4096,
        resolution: 0.25,
        master_seed: seed,
        solver: SolverConfig {
            net_dim_cap: 0,
            ..SolverConfig::default()
        },
        large_t: 1.0,
        record_timing: false,
        envelope_samples: 24,
    }
}

#[test]
fn persisted_tables_are_byte_identical_across_runs() {
    let cfg = small_config(11);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let result = run_sweep(&cfg, &mut |_| {}).unwrap();
        persist_results(&result, d.path()).unwrap();
    }
    for name in ["trials.csv", "summary.csv", "probes.csv", "envelope.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn parallel_and_serial_trials_agree() {
    let cfg = small_config(12);
    let parallel = run_trials(&cfg, 3, 100).unwrap();
    let serial = run_trials_serial(&cfg, 3, 100).unwrap();
    assert_eq!(parallel, serial);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    assert_eq!(pool.install(|| run_trials(&cfg, 3, 100).unwrap()), serial);
}

#[test]
fn results_round_trip_and_tampering_is_detected() {
    let cfg = small_config(13);
    let result = run_sweep(&cfg, &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    persist_results(&result, dir.path()).unwrap();
    let back = load_results(dir.path()).unwrap();
    assert_eq!(back.records, result.records);
    assert_eq!(back.probes, result.probes);
    assert_eq!(back.config, result.config);
    assert_eq!(back.slope, result.slope);
    assert_eq!(back.envelopes, result.envelopes);

    let files = emit_plot_data(&result, dir.path()).unwrap();
    assert!(files.iter().any(|f| f.ends_with("complexity.dat")));
    assert!(dir.path().join("plots/deviation_n3.dat").exists());

    let trials = dir.path().join("trials.csv");
    let text = std::fs::read_to_string(&trials).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    std::fs::write(&trials, lines.join("\n") + "\n").unwrap();
    let summary = dir.path().join("summary.csv");
    let text = std::fs::read_to_string(&summary).unwrap();
    std::fs::write(&summary, text.replacen(",0.", ",1.", 1)).unwrap();
    match load_results(dir.path()) {
        Err(Error::Corrupt(problems)) => {
            let joined = problems.join("\n");
            assert!(joined.contains("trials.csv: hash check failed"), "{joined}");
            assert!(joined.contains("trials.csv: row-count check failed"), "{joined}");
            assert!(joined.contains("summary.csv: hash check failed"), "{joined}");
        }
        other => panic!("expected corruption, got {other:?}"),
    }
}

#[test]
fn search_reports_exceeded_range() {
    let cfg = SweepConfig {
        epsilon: 1e-3,
        n_max: 64,
        ..small_config(14)
    };
    let s = find_n_epsilon(&cfg, 2).unwrap();
    assert!(s.exceeds_range());
    assert!(s.trace.iter().all(|p| !p.success));
}

#[test]
fn search_trace_brackets_the_answer() {
    let cfg = small_config(15);
    let s = find_n_epsilon(&cfg, 3).unwrap();
    let ne = s.n_epsilon.unwrap();
    assert!(s.trace.iter().any(|p| p.big_n == ne && p.success));
    if ne > cfg.n_min {
        let below = s.trace.iter().filter(|p| !p.success && p.big_n < ne).map(|p| p.big_n).max().unwrap();
        assert!(ne as f64 <= below as f64 * (1.0 + cfg.resolution) || ne == 2 * below);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = small_config(16);
    let bad = [
        SweepConfig { trials_per_point: 19, ..base.clone() },
        SweepConfig { trials_per_point: 30, ..base.clone() },
        SweepConfig { n_grid: vec![4, 4], ..base.clone() },
        SweepConfig { n_min: 0, ..base.clone() },
        SweepConfig { delta: 1.5, ..base.clone() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

// Exact coverage of the 95% Wilson interval: sum over k of Binom(k; n, p)
// for the k whose interval contains p.
#[test]
fn wilson_coverage_matches_exact_binomial() {
    for n in [10u64, 20, 40, 80] {
        let mut coverages = Vec::new();
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let law = Binomial::new(p, n).unwrap();
            let cover: f64 = (0..=n)
                .filter(|&k| {
                    let (lo, hi) = wilson_interval(k as usize, n as usize, Z95);
                    lo <= p && p <= hi
                })
                .map(|k| law.pmf(k))
                .sum();
            coverages.push(cover);
        }
        let mean = coverages.iter().sum::<f64>() / coverages.len() as f64;
        let min = coverages.iter().copied().fold(1.0, f64::min);
        assert!((0.93..=0.97).contains(&mean), "n={n}: mean coverage {mean}");
        assert!(min >= 0.75, "n={n}: min coverage {min}");
    }
}
