use marginals::linalg::top_singular;
use marginals::norms::{
    gram_prefix_maxima, lp_norm, opnorm_l2_l2inf, opnorm_l2_lp, projected_subset_norm, SubsetMode,
};
use marginals::special::zeta;
use marginals::{sample_matrix, weak_l2_norm, DistributionSpec, Purpose, SampleMatrix, SolverConfig, StreamId};
use proptest::prelude::*;

fn vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..60)
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = SampleMatrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |data| SampleMatrix::new(c, data).unwrap())
    })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn weak_l2_is_below_l2(v in vector()) {
        prop_assert!(weak_l2_norm(&v) <= l2(&v) * (1.0 + 1e-12));
    }

    #[test]
    fn lp_is_below_zeta_times_weak_l2(v in vector(), p in 2.05f64..8.0) {
        let c = zeta(p / 2.0).powf(1.0 / p);
        prop_assert!(lp_norm(&v, p) <= c * weak_l2_norm(&v) * (1.0 + 1e-12));
    }

    #[test]
    fn weak_l2_is_absolutely_homogeneous(v in vector(), a in -50.0f64..50.0) {
        let scaled: Vec<f64> = v.iter().map(|x| a * x).collect();
        let want = a.abs() * weak_l2_norm(&v);
        prop_assert!((weak_l2_norm(&scaled) - want).abs() <= 1e-12 * want.max(1e-300));
    }

    #[test]
    fn opnorm_witnesses_reproduce_values(a in matrix(12, 5), p in prop::sample::select(vec![2.5, 3.0, 4.0, 6.0])) {
        let cfg = SolverConfig::default();
        let mut out = vec![0.0; a.n_samples()];
        let r = opnorm_l2_lp(&a, p, &cfg).unwrap();
        a.apply(&r.witness_x, &mut out);
        prop_assert!((lp_norm(&out, p) - r.value).abs() <= 1e-9 * r.value.max(1e-300));
        prop_assert!((l2(&r.witness_x) - 1.0).abs() < 1e-12);
        let w = opnorm_l2_l2inf(&a, &cfg).unwrap();
        a.apply(&w.witness_x, &mut out);
        prop_assert!((weak_l2_norm(&out) - w.value).abs() <= 1e-9 * w.value.max(1e-300));
    }

    #[test]
    fn small_dimension_solver_reaches_the_net(a in matrix(10, 3), p in prop::sample::select(vec![2.5, 4.0])) {
        let cfg = SolverConfig::default();
        let (sigma, _) = top_singular(a.data(), a.n_samples(), a.dim());
        for r in [opnorm_l2_lp(&a, p, &cfg).unwrap(), opnorm_l2_l2inf(&a, &cfg).unwrap()] {
            let net = r.oracle_value.expect("net oracle runs for n <= 3");
            prop_assert!(r.value >= net - cfg.net_mesh * sigma, "{} < {} - {}", r.value, net, cfg.net_mesh * sigma);
        }
    }

    #[test]
    fn greedy_subset_is_below_exact(a in matrix(10, 4), s in 1usize..10) {
        prop_assume!(s <= a.n_samples());
        let exact = projected_subset_norm(&a, s, SubsetMode::Exact).unwrap();
        let greedy = projected_subset_norm(&a, s, SubsetMode::Greedy).unwrap();
        prop_assert!(exact.exact);
        prop_assert!(greedy.value <= exact.value * (1.0 + 1e-12));
    }

    #[test]
    fn gram_prefix_equals_exhaustive_search(a in matrix(12, 4)) {
        let big_n = a.n_samples();
        prop_assume!(big_n >= 2);
        for k in 0..big_n {
            let sq: Vec<f64> = (0..big_n)
                .filter(|&i| i != k)
                .map(|i| {
                    let d: f64 = a.row(i).iter().zip(a.row(k)).map(|(x, y)| x * y).sum();
                    d * d
                })
                .collect();
            let m = sq.len();
            let mut best = vec![0.0f64; m];
            for mask in 1u32..(1 << m) {
                let size = mask.count_ones() as usize;
                let total: f64 = (0..m).filter(|b| mask >> b & 1 == 1).map(|b| sq[b]).sum();
                best[size - 1] = best[size - 1].max(total / size as f64);
            }
            for (x, y) in gram_prefix_maxima(&a, k).iter().zip(&best) {
                prop_assert!((x - y).abs() <= 1e-12 * y.max(1e-300));
            }
        }
    }
}

#[test]
fn subset_norm_of_identical_rows_is_linear() {
    let a = SampleMatrix::from_rows(&vec![vec![1.0, 2.0, 2.0]; 6]).unwrap();
    for s in 1..=6 {
        let r = projected_subset_norm(&a, s, SubsetMode::Auto).unwrap();
        assert!((r.value - 3.0 * s as f64).abs() < 1e-12);
    }
}

#[test]
fn gaussian_lp_norm_sits_between_its_sandwich() {
    let a = sample_matrix(&DistributionSpec::Gaussian { n: 8 }, 200, StreamId::new(1, 0, Purpose::Sample)).unwrap();
    let cfg = SolverConfig::default();
    let r = opnorm_l2_l2inf(&a, &cfg).unwrap();
    let (lo, hi) = r.sandwich.unwrap();
    assert!(lo <= r.value * (1.0 + 1e-12) && r.value <= hi * (1.0 + 1e-12), "{lo} {} {hi}", r.value);
}
