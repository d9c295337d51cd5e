//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=2,6` restricts the run to the listed criteria.

use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use marginals::decouple::{decouple, min_norm_hull_point, verify_certificate, ClusteredEnsemble};
use marginals::dist::{check_assumptions_with_q, exact_moment, ExactOracle, MomentOracle, ParetoMode};
use marginals::estimate::{
    choose_b, deviation_sup, empirical_moment, large_coeff_calls, large_coeff_diag, probe_set, truncated_estimate,
    truncation_threshold,
};
use marginals::harness::{fit_loglog_slope, run_sweep, SweepConfig};
use marginals::norms::{
    gram_offdiag_check, gram_prefix_maxima, opnorm_l2_l2inf, opnorm_l2_lp, rearrangement_failure_rates,
    row_directions, ScalarLaw,
};
use marginals::special::weak_l2_lp_constant;
use marginals::stream::StreamRng;
use marginals::{
    sample_matrix, weak_l2_norm, DistributionSpec, ModelParams, Purpose, SampleMatrix, SolverConfig, StreamId,
};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Regression baselines, recorded from the first full run.
const GRAM_CQ_BASELINE: f64 = 8.5037;
const OPNORM_C_BASELINE: f64 = 0.89007;

/// large_coeff_diag calls made by criteria 3-5.
static LARGE_CALLS_3_TO_5: AtomicU64 = AtomicU64::new(0);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64, trial: u64) -> StreamRng {
    StreamId::new(seed, trial, Purpose::Sample).rng()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn counted<T>(f: impl FnOnce() -> T) -> T {
    let before = large_coeff_calls();
    let out = f();
    LARGE_CALLS_3_TO_5.fetch_add(large_coeff_calls() - before, Ordering::Relaxed);
    out
}

// ---------------------------------------------------------------- 1

/// Zeta by direct summation with a midpoint-corrected integral tail.
fn zeta_direct(s: f64) -> f64 {
    let m = 1_000_000usize;
    let head: f64 = (1..=m).rev().map(|k| (k as f64).powf(-s)).sum();
    head + (m as f64 + 0.5).powf(1.0 - s) / (s - 1.0)
}

fn criterion_1() -> Outcome {
    let mut r = rng(1, 0);
    let corpus: Vec<Vec<f64>> = (0..10_000)
        .map(|i| {
            let len = r.random_range(1..=100);
            (0..len)
                .map(|_| {
                    if i % 3 == 0 {
                        // integer entries force ties
                        r.random_range(-3i32..=3) as f64
                    } else {
                        r.sample::<f64, _>(StandardNormal)
                    }
                })
                .collect()
        })
        .collect();
    let mut mismatches = 0;
    for v in &corpus {
        let mut sorted: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let brute = sorted
            .iter()
            .enumerate()
            .map(|(k, x)| ((k + 1) as f64).sqrt() * x)
            .fold(0.0, f64::max);
        if weak_l2_norm(v) != brute {
            mismatches += 1;
        }
    }
    let mut sandwich_failures = 0;
    let mut worst_const_err: f64 = 0.0;
    for p in [2.5, 3.0, 4.0] {
        let c_p = zeta_direct(p / 2.0).powf(-1.0 / p);
        worst_const_err = worst_const_err.max((c_p - weak_l2_lp_constant(p)).abs());
        for v in &corpus {
            let lp = v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
            let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let w = weak_l2_norm(v);
            // relative 1e-12 absorbs rounding in the equality cases
            let slack = 1e-12 * l2;
            if c_p * lp > w + slack || w > l2 + slack {
                sandwich_failures += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && sandwich_failures == 0 && worst_const_err < 1e-10,
        format!(
            "brute-force mismatches {mismatches}/10000, sandwich failures {sandwich_failures}, |c_p - oracle| {worst_const_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let spec = DistributionSpec::Gaussian { n: 2 };
    let truth = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let s = sample_matrix(&spec, 32, StreamId::new(seed, 0, Purpose::Sample)).unwrap();
        let mut oracle: f64 = 0.0;
        let steps = (std::f64::consts::PI / 1e-3).ceil() as usize;
        for j in 0..steps {
            let th = j as f64 * 1e-3;
            let (c, sn) = (th.cos(), th.sin());
            let emp = s.rows().map(|r| (r[0] * c + r[1] * sn).abs().powi(3)).sum::<f64>() / 32.0;
            oracle = oracle.max((emp - truth).abs());
        }
        let cfg = SolverConfig {
            seed,
            ..SolverConfig::default()
        };
        let got = deviation_sup(&s, &spec, 3.0, &cfg).unwrap().sup_value;
        worst = worst.max((got - oracle).abs());
    }
    outcome(worst <= 1e-3, format!("max |solver - circle enumeration| {worst:.2e} over 20 seeds"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let cfg = SweepConfig {
        spec: DistributionSpec::Gaussian { n: 8 },
        n_grid: vec![8, 16, 32, 64],
        p: 3.0,
        q: Some(12.0),
        epsilon: 0.25,
        delta: 0.1,
        trials_per_point: 40,
        n_min: 64,
        n_max: 1 << 18,
        resolution: 0.25,
        master_seed: 2024,
        solver: SolverConfig::default(),
        large_t: 1.0,
        record_timing: false,
        envelope_samples: 0,
    };
    let result = counted(|| run_sweep(&cfg, &mut |_| {})).unwrap();
    let ns: Vec<String> = result
        .summary
        .iter()
        .map(|r| format!("{}:{}", r.n, r.n_epsilon.map_or("none".into(), |v| v.to_string())))
        .collect();
    match result.slope {
        Some(fit) => outcome(
            (1.0..=2.0).contains(&fit.slope) && fit.stderr < 0.3,
            format!("N_eps {} slope {:.3} stderr {:.3}", ns.join(" "), fit.slope, fit.stderr),
        ),
        None => outcome(false, format!("N_eps {} (no fit)", ns.join(" "))),
    }
}

// ---------------------------------------------------------------- 4

/// Distribution of the number of distinct atoms after `draws` uniform draws
/// from `n` atoms.
fn distinct_count_law(n: usize, draws: usize) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    for _ in 0..draws {
        let mut next = vec![0.0; n + 1];
        for k in 0..=n {
            if p[k] == 0.0 {
                continue;
            }
            next[k] += p[k] * k as f64 / n as f64;
            if k < n {
                next[k + 1] += p[k] * (n - k) as f64 / n as f64;
            }
        }
        p = next;
    }
    p
}

fn criterion_4() -> Outcome {
    let n = 256usize;
    let p = 2.5;
    let big_n = (n as f64).powf(p / 2.0).ceil() as usize;
    let law = distinct_count_law(n, big_n);
    let exact_unsampled: f64 = law.iter().enumerate().map(|(k, w)| (n - k) as f64 * w).sum();
    let closed_form = n as f64 * (1.0 - 1.0 / n as f64).powi(big_n as i32);
    let derived = n as f64 * (-4.0f64).exp();
    let p_some_unsampled = 1.0 - law[n];
    let prelim_ok = big_n == 1024
        && (exact_unsampled - closed_form).abs() < 1e-9
        && (exact_unsampled - derived).abs() / derived < 0.02
        && p_some_unsampled >= 0.9;

    let spec = DistributionSpec::Orthobasis { n };
    let threshold = (n as f64).powf(p / 2.0 - 1.0);
    let b = choose_b(0.25, big_n, n, 4.0 * p, 1.0).unwrap();
    let mut hits = 0;
    counted(|| {
        for seed in 0..50u64 {
            let s = sample_matrix(&spec, big_n, StreamId::new(seed, 4, Purpose::Sample)).unwrap();
            let mut counts = vec![0usize; n];
            for row in s.rows() {
                let j = row.iter().position(|v| *v != 0.0).unwrap();
                counts[j] += 1;
            }
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                large_coeff_diag(&s, &e, b).unwrap();
            }
            if let Some(j) = counts.iter().position(|c| *c == 0) {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let dev = (empirical_moment(&s, &e, p).unwrap() - exact_moment(&spec, &e, p).unwrap()).abs();
                if dev >= threshold {
                    hits += 1;
                }
            }
        }
    });
    outcome(
        prelim_ok && hits >= 45,
        format!(
            "expected unsampled {exact_unsampled:.4} (DP) vs {derived:.4} (n e^-4), P(some unsampled) {p_some_unsampled:.4}; \
             {hits}/50 seeds with an unsampled atom at deviation >= {threshold}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let (n, p, q, eps) = (16usize, 3.0, 12.0, 0.1);
    let big_n = (10.0 * (n as f64).powf(1.5)).round() as usize;
    let spec = DistributionSpec::multidim_pareto(n, 13.0, q, ParetoMode::Compliant).unwrap();
    let report = check_assumptions_with_q(&spec, q, 200_000, StreamId::new(5, 0, Purpose::Assumption)).unwrap();
    let l_hat = report.l_hat;
    let k = truncation_threshold(l_hat, p, q, eps).unwrap();
    let bias = k.powf(p - q) * l_hat.powf(q);
    let oracle = ExactOracle::new(&spec, p).unwrap();
    let b = choose_b(eps, big_n, n, q, 1.0).unwrap();
    let cfg = SolverConfig::default();

    let gaussian = DistributionSpec::Gaussian { n };
    let mut gauss_devs = Vec::new();
    let mut trunc_devs = Vec::new();
    counted(|| {
        for seed in 0..50u64 {
            let g = sample_matrix(&gaussian, big_n, StreamId::new(seed, 50, Purpose::Sample)).unwrap();
            gauss_devs.push(deviation_sup(&g, &gaussian, p, &SolverConfig { seed, ..cfg.clone() }).unwrap().sup_value);

            let s = sample_matrix(&spec, big_n, StreamId::new(seed, 51, Purpose::Sample)).unwrap();
            let mut worst: f64 = 0.0;
            for probe in probe_set(&s, &SolverConfig { seed, ..cfg.clone() }) {
                let est = truncated_estimate(&s, k, &probe.x, p).unwrap();
                worst = worst.max((est - oracle.moment(&probe.x)).abs());
                large_coeff_diag(&s, &probe.x, b).unwrap();
            }
            trunc_devs.push(worst);
        }
    });
    let slack = 2.0 * median(&gauss_devs);
    let bound = eps + bias + slack;
    let med = median(&trunc_devs);
    let first = med <= bound;

    let heavy = DistributionSpec::multidim_pareto(n, 2.5, q, ParetoMode::Violating).unwrap();
    let row_stat = |count: usize, seed: u64| {
        let s = sample_matrix(&heavy, count, StreamId::new(seed, 52, Purpose::Sample)).unwrap();
        row_directions(&s, cfg.row_probe_cap)
            .iter()
            .map(|x| empirical_moment(&s, x, p).unwrap())
            .fold(0.0, f64::max)
    };
    let small = median(&(0..50).map(|seed| row_stat(64, seed)).collect::<Vec<_>>());
    let large = median(&(0..50).map(|seed| row_stat(4096, seed)).collect::<Vec<_>>());
    let second = large > small;
    outcome(
        first && second,
        format!(
            "L_hat {l_hat:.3}, K {k:.3}; truncated median deviation {med:.3} vs bound {bound:.3} \
             (eps {eps} + {bias:.3} + slack {slack:.3}); heavy-tail row statistic median {small:.3} at N=64 -> {large:.3} at N=4096"
        ),
    )
}

// ---------------------------------------------------------------- 6

/// `min |sum w_i p_i|` over the simplex of three points, by enumerating the
/// vertices, edges and the interior critical point.
fn hull3_oracle(pts: &[Vec<f64>; 3]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let comb = |w: [f64; 3]| -> Vec<f64> { (0..3).map(|d| (0..3).map(|i| w[i] * pts[i][d]).sum()).collect() };
    let mut cands: Vec<Vec<f64>> = pts.iter().cloned().collect();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let d: Vec<f64> = (0..3).map(|k| pts[j][k] - pts[i][k]).collect();
        let dd = dot(&d, &d);
        if dd > 0.0 {
            let t = (-dot(&pts[i], &d) / dd).clamp(0.0, 1.0);
            let mut w = [0.0; 3];
            w[i] = 1.0 - t;
            w[j] = t;
            cands.push(comb(w));
        }
    }
    // interior: z = p0 + a (p1 - p0) + b (p2 - p0) orthogonal to both edges
    let e1: Vec<f64> = (0..3).map(|k| pts[1][k] - pts[0][k]).collect();
    let e2: Vec<f64> = (0..3).map(|k| pts[2][k] - pts[0][k]).collect();
    let m = nalgebra::Matrix2::new(dot(&e1, &e1), dot(&e1, &e2), dot(&e1, &e2), dot(&e2, &e2));
    let rhs = nalgebra::Vector2::new(-dot(&pts[0], &e1), -dot(&pts[0], &e2));
    if let Some(sol) = m.lu().solve(&rhs) {
        let (a, b) = (sol[0], sol[1]);
        if a >= 0.0 && b >= 0.0 && a + b <= 1.0 {
            cands.push(comb([1.0 - a - b, a, b]));
        }
    }
    cands
        .into_iter()
        .min_by(|x, y| dot(x, x).total_cmp(&dot(y, y)))
        .unwrap()
}

/// Distance from `y` to the span of `vectors`, through an SVD.
fn span_distance(y: &[f64], vectors: &[&[f64]]) -> f64 {
    let n = y.len();
    let m = DMatrix::from_fn(n, vectors.len(), |r, c| vectors[c][r]);
    let svd = m.svd(true, false);
    let u = svd.u.unwrap();
    let smax = svd.singular_values.max();
    let yv = nalgebra::DVector::from_column_slice(y);
    let mut proj = nalgebra::DVector::zeros(n);
    for (j, sv) in svd.singular_values.iter().enumerate() {
        if *sv > 1e-10 * smax {
            let col = u.column(j);
            proj += col * col.dot(&yv);
        }
    }
    (yv - proj).norm()
}

fn criterion_6() -> Outcome {
    let ens = ClusteredEnsemble::default();
    let mut successes = 0;
    let mut bad_certs = 0;
    for seed in 0..100u64 {
        let stream = StreamId::new(seed, 6, Purpose::Ensemble);
        let input = ens.generate(stream).unwrap();
        let Ok(cert) = decouple(&input, stream, 20) else {
            continue;
        };
        successes += 1;
        let report = verify_certificate(&cert, &input);
        let norm_y = cert.y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let margin = cert
            .subset
            .iter()
            .map(|&i| input.vectors[i].iter().zip(&cert.y).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let complement: Vec<&[f64]> = (0..input.s())
            .filter(|i| !cert.subset.contains(i))
            .map(|i| input.vectors[i].as_slice())
            .collect();
        let independent_ok = margin >= input.a / 4.0
            && cert.subset.len() as f64 >= (1.0 - input.delta) * input.s() as f64
            && (norm_y - 1.0).abs() <= 1e-9
            && span_distance(&cert.y, &complement) <= 1e-8;
        if !report.ok || !independent_ok {
            bad_certs += 1;
        }
    }

    let mut r = rng(6, 1);
    let mut hull_worst: f64 = 0.0;
    for _ in 0..500 {
        let pts: [Vec<f64>; 3] =
            std::array::from_fn(|_| (0..3).map(|_| r.sample::<f64, _>(StandardNormal) + 0.5).collect());
        let want = hull3_oracle(&pts);
        let got = min_norm_hull_point(&pts, 1e-12).unwrap().z;
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        hull_worst = hull_worst.max(err);
    }
    outcome(
        bad_certs == 0 && successes >= 99 && hull_worst <= 1e-6,
        format!(
            "{successes}/100 runs certified within 20 attempts, {bad_certs} certificates rejected; hull vs QP oracle max error {hull_worst:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let law = ScalarLaw::SymmetricPareto { alpha: 10.0 };
    let q = 8.0;
    let ts = [1.0, 2.0];
    let at = |big_n: usize| {
        rearrangement_failure_rates(law, big_n, q, &ts, 100_000, StreamId::new(7, big_n as u64, Purpose::Sample))
            .unwrap()
    };
    let r64 = at(64);
    let r128 = at(128);
    let width = |r: &marginals::norms::RearrangementRate| r.ci.1 - r.ci.0;
    let ratio_ok = r64[1].rate <= (4.0 * 2f64.powf(-q) * r64[0].rate).max(3.0 * width(&r64[1]));
    let decreasing = |a: f64, b: f64| b < a || (a == 0.0 && b == 0.0);
    let decrease_ok = decreasing(r64[0].rate, r128[0].rate) && decreasing(r64[1].rate, r128[1].rate);
    outcome(
        ratio_ok && decrease_ok,
        format!(
            "N=64: rate(t=1) {:.5}, rate(t=2) {:.5}; N=128: rate(t=1) {:.5}, rate(t=2) {:.5}",
            r64[0].rate, r64[1].rate, r128[0].rate, r128[1].rate
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut mismatches = 0;
    let mut cq_mismatch: f64 = 0.0;
    let params = ModelParams {
        q: 12.0,
        ..ModelParams::new(3.0, 0.25, 0.1)
    };
    for seed in 0..50u64 {
        let s = sample_matrix(&DistributionSpec::Gaussian { n: 5 }, 10, StreamId::new(seed, 8, Purpose::Sample)).unwrap();
        let big_n = 10;
        let mut brute_cq: f64 = 0.0;
        for k in 0..big_n {
            let others: Vec<usize> = (0..big_n).filter(|&i| i != k).collect();
            let sq: Vec<f64> = others
                .iter()
                .map(|&i| {
                    let d: f64 = s.row(i).iter().zip(s.row(k)).map(|(a, b)| a * b).sum();
                    d * d
                })
                .collect();
            let mut best = vec![0.0f64; big_n - 1];
            for mask in 1u32..(1 << (big_n - 1)) {
                let size = mask.count_ones() as usize;
                let total: f64 = (0..big_n - 1).filter(|b| mask >> b & 1 == 1).map(|b| sq[b]).sum();
                best[size - 1] = best[size - 1].max(total / size as f64);
            }
            let fast = gram_prefix_maxima(&s, k);
            for (a, b) in fast.iter().zip(&best) {
                if (a - b).abs() > 1e-12 * b.abs().max(1e-300) {
                    mismatches += 1;
                }
            }
            for (j, v) in best.iter().enumerate() {
                let sz = (j + 1) as f64;
                brute_cq = brute_cq.max(v / (5.0 * (big_n as f64 / sz).powf(4.0 / params.q)));
            }
        }
        let got = gram_offdiag_check(&s, &params, 1.0).unwrap().min_feasible_cq;
        cq_mismatch = cq_mismatch.max((got - brute_cq).abs() / brute_cq);
    }

    let max_cq = (0..100u64)
        .map(|seed| {
            let s = sample_matrix(&DistributionSpec::Gaussian { n: 16 }, 128, StreamId::new(seed, 80, Purpose::Sample))
                .unwrap();
            gram_offdiag_check(&s, &params, 1.0).unwrap().min_feasible_cq
        })
        .fold(0.0, f64::max);
    outcome(
        mismatches == 0 && cq_mismatch < 1e-12 && max_cq <= 1.5 * GRAM_CQ_BASELINE,
        format!(
            "prefix vs exhaustive mismatches {mismatches}, C_q relative gap {cq_mismatch:.1e}; \
             max min_feasible_Cq {max_cq:.5} vs baseline {GRAM_CQ_BASELINE} x1.5"
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let cfg = SolverConfig::default();
    let mut closed_err: f64 = 0.0;
    let mut check = |got: f64, want: f64| closed_err = closed_err.max((got - want).abs());
    let n = 6;
    let identity = SampleMatrix::from_rows(&(0..n).map(|j| (0..n).map(|i| f64::from(i == j)).collect()).collect::<Vec<Vec<f64>>>()).unwrap();
    let row = vec![0.3, -1.2, 2.0, 0.0, 0.7, -0.4];
    let row_m = SampleMatrix::from_rows(&[row.clone()]).unwrap();
    let row_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c = [3.0, -0.5, 1.5, 2.0, -2.5, 0.25];
    let scaled =
        SampleMatrix::from_rows(&(0..n).map(|j| (0..n).map(|i| if i == j { c[j] } else { 0.0 }).collect()).collect::<Vec<Vec<f64>>>())
            .unwrap();
    for p in [3.0, 4.0] {
        check(opnorm_l2_lp(&identity, p, &cfg).unwrap().value, 1.0);
        check(opnorm_l2_lp(&row_m, p, &cfg).unwrap().value, row_norm);
        check(opnorm_l2_lp(&scaled, p, &cfg).unwrap().value, 3.0);
    }
    check(opnorm_l2_l2inf(&identity, &cfg).unwrap().value, 1.0);
    check(opnorm_l2_l2inf(&row_m, &cfg).unwrap().value, row_norm);
    // max_k sqrt(k) (sum_{j<=k} c*_j^{-2})^{-1/2} over the sorted |c|
    let mut sorted: Vec<f64> = c.iter().map(|v: &f64| v.abs()).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let scaled_weak = sorted
        .iter()
        .enumerate()
        .map(|(k, v)| {
            acc += v.powi(-2);
            ((k + 1) as f64 / acc).sqrt()
        })
        .fold(0.0, f64::max);
    check(opnorm_l2_l2inf(&scaled, &cfg).unwrap().value, scaled_weak);

    let fitted = |big_n: usize, seed: u64| {
        let s = sample_matrix(&DistributionSpec::Gaussian { n: 32 }, big_n, StreamId::new(seed, big_n as u64, Purpose::Sample))
            .unwrap();
        let v = opnorm_l2_lp(&s, 4.0, &SolverConfig { seed, ..cfg.clone() }).unwrap().value;
        v / (32f64.sqrt() + (big_n as f64).powf(0.25))
    };
    let base: Vec<f64> = (0..100).map(|seed| fitted(1024, seed)).collect();
    let max_c = base.iter().copied().fold(0.0, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut points = vec![(1024.0, mean(&base))];
    for big_n in [2048, 4096] {
        let cs: Vec<f64> = (0..100).map(|seed| fitted(big_n, seed)).collect();
        points.push((big_n as f64, mean(&cs)));
    }
    let slope = fit_loglog_slope(&points).unwrap().slope;
    outcome(
        closed_err <= 1e-9 && max_c <= 1.5 * OPNORM_C_BASELINE && slope.abs() <= 0.15,
        format!(
            "closed-form max error {closed_err:.1e}; max fitted C {max_c:.5} vs baseline {OPNORM_C_BASELINE} x1.5; \
             mean C {:.4}/{:.4}/{:.4} at N=1024/2048/4096, slope {slope:.4}",
            points[0].1, points[1].1, points[2].1
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    // every call asserts the identity, so reaching here means none failed
    let calls = LARGE_CALLS_3_TO_5.load(Ordering::Relaxed);
    outcome(calls >= 10_000, format!("{calls} checked calls across criteria 3-5 (total {})", large_coeff_calls()))
}

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "weak-l2 norm and lp sandwich", Duration::from_secs(10), criterion_1),
        (2, "deviation solver vs circle enumeration", Duration::from_secs(60), criterion_2),
        (3, "sample-complexity exponent", Duration::from_secs(3600), criterion_3),
        (4, "coupon-collector lower bound", Duration::from_secs(300), criterion_4),
        (5, "truncated estimator", Duration::from_secs(900), criterion_5),
        (6, "decoupling certificates and hull oracle", Duration::from_secs(300), criterion_6),
        (7, "rearrangement failure rates", Duration::from_secs(300), criterion_7),
        (8, "gram off-diagonal exactness", Duration::from_secs(300), criterion_8),
        (9, "operator norms", Duration::from_secs(1200), criterion_9),
        (10, "large-coefficient identity", Duration::from_secs(10), criterion_10),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= limit, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {name} [{:.1}s, limit {}s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
