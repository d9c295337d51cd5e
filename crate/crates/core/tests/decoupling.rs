use marginals::decouple::{
    decouple, min_norm_hull_point, verify_certificate, ClusteredEnsemble, DecouplingInput, DELTA_SHRINK,
};
use marginals::{Error, Purpose, StreamId};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn combine(points: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let d = points[0].len();
    (0..d).map(|j| points.iter().zip(w).map(|(p, wi)| wi * p[j]).sum()).collect()
}

/// Minimum norm over the hull by trying every face: for each subset, the
/// affine minimizer if its barycentric weights are nonnegative.
fn brute_force_hull(points: &[Vec<f64>]) -> f64 {
    let m = points.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        let k = idx.len();
        // [G 1; 1' 0] [w; mu] = [0; 1] with G the Gram matrix of the subset
        let mut a = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[(r, c)] = points[i].iter().zip(&points[j]).map(|(x, y)| x * y).sum::<f64>();
            }
            a[(r, k)] = 1.0;
            a[(k, r)] = 1.0;
        }
        rhs[k] = 1.0;
        let Some(sol) = a.lu().solve(&rhs) else { continue };
        let w: Vec<f64> = (0..k).map(|r| sol[r]).collect();
        if w.iter().all(|v| *v >= -1e-12) {
            let pts: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
            best = best.min(norm(&combine(&pts, &w)));
        }
    }
    best
}

fn point_cloud(max_points: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..3.0, dim), 1..=max_points)
}

proptest! {
    #[test]
    fn hull_point_is_a_convex_combination(points in point_cloud(30, 5)) {
        let h = min_norm_hull_point(&points, 1e-12).unwrap();
        prop_assert!(h.weights.iter().all(|w| *w >= 0.0));
        prop_assert!((h.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let z = combine(&points, &h.weights);
        prop_assert!(norm(&z.iter().zip(&h.z).map(|(a, b)| a - b).collect::<Vec<_>>()) < 1e-12 * (1.0 + norm(&z)));
    }

    #[test]
    fn hull_point_beats_random_combinations(points in point_cloud(12, 4), seed in 0u64..1000) {
        let h = min_norm_hull_point(&points, 1e-12).unwrap();
        let zn = norm(&h.z);
        let mut rng = StreamId::new(seed, 0, Purpose::Probe).rng();
        for _ in 0..1000 {
            let mut u: Vec<f64> = (0..points.len()).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = u.iter().sum();
            u.iter_mut().for_each(|v| *v /= total);
            prop_assert!(zn <= norm(&combine(&points, &u)) + 1e-9);
        }
    }

    #[test]
    fn hull_point_matches_face_enumeration(points in point_cloud(4, 3)) {
        let h = min_norm_hull_point(&points, 1e-12).unwrap();
        let want = brute_force_hull(&points);
        prop_assert!((norm(&h.z) - want).abs() <= 1e-6, "{} vs {}", norm(&h.z), want);
    }
}

#[test]
fn decoupled_certificates_verify_and_selectors_have_the_right_mean() {
    let ens = ClusteredEnsemble::default();
    let mut selected = 0usize;
    let mut draws = 0usize;
    let mut centered_ok = 0usize;
    let mut attempts = 0usize;
    for seed in 0..400u64 {
        let stream = StreamId::new(seed, 0, Purpose::Ensemble);
        let input = ens.generate(stream).unwrap();
        let cert = decouple(&input, stream, 40).unwrap();
        assert!(verify_certificate(&cert, &input).ok);
        for a in &cert.attempt_log {
            selected += a.selected;
            draws += input.s();
            attempts += 1;
            centered_ok += usize::from(a.centered_norm_control);
        }
    }
    let d = ens.delta / DELTA_SHRINK;
    let freq = selected as f64 / draws as f64;
    let se = (d * (1.0 - d) / draws as f64).sqrt();
    assert!((freq - d).abs() <= 3.0 * se, "selector frequency {freq} vs {d} (se {se})");
    let rate = centered_ok as f64 / attempts as f64;
    assert!(rate >= 0.85, "norm control held in {centered_ok}/{attempts} attempts");
}

#[test]
fn too_few_vectors_is_degenerate() {
    let ens = ClusteredEnsemble {
        s: 20,
        ..ClusteredEnsemble::default()
    };
    match ens.generate(StreamId::new(0, 0, Purpose::Ensemble)) {
        Err(Error::Degenerate(msg)) => assert!(msg.contains("delta_int")),
        other => panic!("expected a degenerate-input error, got {other:?}"),
    }
}

#[test]
fn hypotheses_fail_at_unit_constant() {
    let ens = ClusteredEnsemble {
        c_impl: 1.0,
        ..ClusteredEnsemble::default()
    };
    assert!(matches!(
        ens.generate(StreamId::new(0, 0, Purpose::Ensemble)),
        Err(Error::InvalidArgument(_))
    ));
    let input = ClusteredEnsemble::default().generate(StreamId::new(0, 0, Purpose::Ensemble)).unwrap();
    let relaxed = DecouplingInput::unchecked(
        input.vectors.clone(),
        input.x.clone(),
        input.b,
        input.m,
        input.delta,
        input.admissible_c() * (1.0 - 1e-9),
    )
    .unwrap();
    assert!(relaxed.check().is_ok());
}
