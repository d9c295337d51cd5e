//! Empirical marginal moments and their uniform deviation from the truth.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{DistributionSpec, ExactOracle, MomentOracle, SampleMatrix, SampleOracle};
use crate::linalg::{self, dot, norm2, normalize};
use crate::norms::{half_sphere_net, reduce_best, row_directions, weak_l2_norm};
use crate::special::pow_abs;
use crate::stream::{Purpose, StreamId};
use crate::{Error, Result};

/// Knobs of the multi-start sphere solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Random starts; also the number of best probes ascended from.
    pub starts: usize,
    pub max_iters: usize,
    /// Relative stopping tolerance on the tangent gradient and on progress.
    pub grad_tol: f64,
    /// Initial step, as an angle on the sphere.
    pub step_init: f64,
    pub step_shrink: f64,
    pub min_step: f64,
    /// Armijo sufficient-increase fraction.
    pub armijo: f64,
    /// Run a net oracle when `n <= net_dim_cap`.
    pub net_dim_cap: usize,
    /// Angular step of the net.
    pub net_mesh: f64,
    /// Normalized rows used as probes and starts (largest norms first).
    pub row_probe_cap: usize,
    /// Largest accepted 99% half-width of a Monte Carlo oracle at the witness.
    pub mc_ci_budget: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iters: 200,
            grad_tol: 1e-9,
            step_init: 0.5,
            step_shrink: 0.5,
            min_step: 1e-12,
            armijo: 1e-4,
            net_dim_cap: 3,
            net_mesh: 0.01,
            row_probe_cap: 256,
            mc_ci_budget: 0.01,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("solver: {m}")));
        if self.starts < 8 {
            return bad("starts must be >= 8");
        }
        if !(self.net_mesh > 0.0 && self.net_mesh <= 0.5) {
            return bad("net_mesh must lie in (0, 1/2]");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return bad("step_shrink must lie in (0, 1)");
        }
        if !(self.step_init > 0.0 && self.min_step > 0.0 && self.grad_tol >= 0.0 && self.armijo >= 0.0) {
            return bad("step_init, min_step must be positive; grad_tol, armijo nonnegative");
        }
        if !(self.mc_ci_budget > 0.0) {
            return bad("mc_ci_budget must be positive");
        }
        Ok(())
    }
}

fn check_unit(x: &[f64]) -> Result<()> {
    let nrm = norm2(x);
    if (nrm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("direction must be a unit vector (norm {nrm})")));
    }
    Ok(())
}

/// `(1/N) sum_i |<X_i, x>|^p` for a unit `x`.
pub fn empirical_moment(s: &SampleMatrix, x: &[f64], p: f64) -> Result<f64> {
    if x.len() != s.dim() {
        return Err(Error::InvalidArgument("direction has the wrong dimension".into()));
    }
    check_unit(x)?;
    Ok(empirical_moment_unchecked(s, x, p))
}

pub(crate) fn empirical_moment_unchecked(s: &SampleMatrix, x: &[f64], p: f64) -> f64 {
    let mut acc = 0.0;
    for row in s.rows() {
        acc += pow_abs(dot(row, x), p);
    }
    acc / s.n_samples() as f64
}

/// Gradient of `x -> (1/N) sum |<X_i, x>|^p`, written into `out`.
pub(crate) fn empirical_gradient(s: &SampleMatrix, x: &[f64], p: f64, out: &mut [f64]) {
    empirical_value_grad(s, x, p, out);
}

fn empirical_value_grad(s: &SampleMatrix, x: &[f64], p: f64, out: &mut [f64]) -> f64 {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut acc = 0.0;
    for row in s.rows() {
        let u = dot(row, x);
        if u == 0.0 {
            continue;
        }
        let a = pow_abs(u, p - 1.0);
        acc += a * u.abs();
        let w = a * u.signum();
        out.iter_mut().zip(row).for_each(|(o, r)| *o += w * r);
    }
    let big_n = s.n_samples() as f64;
    out.iter_mut().for_each(|v| *v *= p / big_n);
    acc / big_n
}

/// `(1/N) sum_i |X_ij|^p` for every coordinate `j` in one pass.
pub fn basis_moments(s: &SampleMatrix, p: f64) -> Vec<f64> {
    let mut acc = vec![0.0; s.dim()];
    for row in s.rows() {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += pow_abs(*v, p));
    }
    let big_n = s.n_samples() as f64;
    acc.iter_mut().for_each(|a| *a /= big_n);
    acc
}

/// Where a probe or start direction came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ProbeOrigin {
    Basis(usize),
    Row(usize),
    Random(usize),
    Net(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub origin: ProbeOrigin,
    pub x: Vec<f64>,
}

/// Basis vectors, normalized rows (at most `cfg.row_probe_cap`, largest
/// norms first) and `cfg.starts` random directions.
pub fn probe_set(s: &SampleMatrix, cfg: &SolverConfig) -> Vec<Probe> {
    let n = s.dim();
    let mut probes: Vec<Probe> = (0..n)
        .map(|j| Probe {
            origin: ProbeOrigin::Basis(j),
            x: linalg::basis_vector(n, j),
        })
        .collect();
    probes.extend(row_directions(s, cfg.row_probe_cap).into_iter().enumerate().map(|(i, x)| Probe {
        origin: ProbeOrigin::Row(i),
        x,
    }));
    let mut rng = StreamId::new(cfg.seed, 0x7072, Purpose::Solver).rng();
    probes.extend((0..cfg.starts).map(|k| Probe {
        origin: ProbeOrigin::Random(k),
        x: linalg::random_unit(n, &mut rng),
    }));
    probes
}

/// Whether the empirical moment sits above or below the truth at the witness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapDirection {
    EmpiricalAbove,
    EmpiricalBelow,
    Equal,
}

/// One ascent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub origin: ProbeOrigin,
    /// +1 maximizes empirical minus truth, -1 the reverse.
    pub sign: i8,
    pub start_value: f64,
    pub end_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub sup_value: f64,
    pub witness_x: Vec<f64>,
    pub empirical: f64,
    pub truth: f64,
    pub direction_of_gap: GapDirection,
    /// Largest deviation over the probe set alone.
    pub probe_max: f64,
    pub trace: Vec<StartTrace>,
    /// Largest deviation over a net of the sphere (small `n` only).
    pub oracle_value: Option<f64>,
}

/// `s * (empirical - truth)` on the sphere.
struct DevObjective<'a> {
    s: &'a SampleMatrix,
    oracle: &'a dyn MomentOracle,
    p: f64,
    sign: f64,
}

impl DevObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.sign * (empirical_moment_unchecked(self.s, x, self.p) - self.oracle.moment(x))
    }

    fn value_grad(&self, x: &[f64], g: &mut [f64], scratch: &mut [f64]) -> f64 {
        let emp = empirical_value_grad(self.s, x, self.p, g);
        self.oracle.gradient(x, scratch);
        g.iter_mut().zip(scratch.iter()).for_each(|(gi, oi)| *gi = self.sign * (*gi - oi));
        self.sign * (emp - self.oracle.moment(x))
    }
}

/// Riemannian gradient ascent with Armijo backtracking and normalization as
/// the retraction.
fn ascend(obj: &DevObjective<'_>, x0: &[f64], cfg: &SolverConfig) -> (f64, Vec<f64>, usize, bool) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut g, &mut scratch);
    let mut step = cfg.step_init;
    for it in 1..=cfg.max_iters {
        let gx = dot(&g, &x);
        g.iter_mut().zip(&x).for_each(|(gi, xi)| *gi -= gx * xi);
        let gn = norm2(&g);
        let scale = f.abs().max(1.0);
        if gn <= cfg.grad_tol * scale {
            return (f, x, it, true);
        }
        let mut accepted = None;
        while step >= cfg.min_step {
            trial.iter_mut()
                .zip(x.iter().zip(&g))
                .for_each(|(t, (xi, gi))| *t = xi + step * gi / gn);
            normalize(&mut trial);
            let ft = obj.value(&trial);
            if ft >= f + cfg.armijo * step * gn {
                accepted = Some(ft);
                break;
            }
            step *= cfg.step_shrink;
        }
        let Some(ft) = accepted else {
            return (f, x, it, true);
        };
        x.copy_from_slice(&trial);
        let gain = ft - f;
        f = obj.value_grad(&x, &mut g, &mut scratch);
        step = (step * 2.0).min(1.0);
        if gain <= cfg.grad_tol * scale {
            return (f, x, it, true);
        }
    }
    (f, x, cfg.max_iters, false)
}

/// Oracle for `spec`: closed form when one exists.
pub fn oracle_for(spec: &DistributionSpec, p: f64) -> Result<ExactOracle> {
    ExactOracle::new(spec, p).map_err(|e| match e {
        Error::NoClosedForm(kind) => Error::MissingOracle(kind),
        other => other,
    })
}

/// `sup_{|x|=1} |(1/N) sum |<X_i,x>|^p - E|<X,x>|^p|` from below, with the
/// closed-form oracle of `spec`.
pub fn deviation_sup(s: &SampleMatrix, spec: &DistributionSpec, p: f64, cfg: &SolverConfig) -> Result<DeviationResult> {
    if spec.dim() != s.dim() {
        return Err(Error::InvalidArgument("spec and sample dimensions differ".into()));
    }
    let oracle = oracle_for(spec, p)?;
    deviation_sup_with_oracle(s, &oracle, p, cfg)
}

/// [`deviation_sup`] against any oracle (for example a [`SampleOracle`]).
pub fn deviation_sup_with_oracle(
    s: &SampleMatrix,
    oracle: &dyn MomentOracle,
    p: f64,
    cfg: &SolverConfig,
) -> Result<DeviationResult> {
    cfg.validate()?;
    if !(p > 2.0) {
        return Err(Error::InvalidArgument("p must exceed 2".into()));
    }
    let n = s.dim();
    let probes = probe_set(s, cfg);
    let basis = basis_moments(s, p);
    let devs: Vec<f64> = probes
        .par_iter()
        .map(|pr| match pr.origin {
            ProbeOrigin::Basis(j) => basis[j] - oracle.moment(&pr.x),
            _ => empirical_moment_unchecked(s, &pr.x, p) - oracle.moment(&pr.x),
        })
        .collect();
    let probe_best = reduce_best(devs.iter().zip(&probes).map(|(d, pr)| (d.abs(), pr.x.clone())).collect())
        .expect("probe set is nonempty");

    // per sign: the best `starts / 2` probes, ties to the earlier probe
    let per_sign = cfg.starts.div_ceil(2);
    let mut jobs = Vec::new();
    for sign in [1.0, -1.0] {
        let mut order: Vec<usize> = (0..probes.len()).collect();
        order.sort_by(|&i, &j| (sign * devs[j]).total_cmp(&(sign * devs[i])).then(i.cmp(&j)));
        jobs.extend(order.into_iter().take(per_sign).map(|i| (sign, i)));
    }
    let runs: Vec<(StartTrace, f64, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(sign, i)| {
            let obj = DevObjective { s, oracle, p, sign };
            let (val, x, iterations, converged) = ascend(&obj, &probes[i].x, cfg);
            let trace = StartTrace {
                origin: probes[i].origin,
                sign: sign as i8,
                start_value: sign * devs[i],
                end_value: val,
                iterations,
                converged,
            };
            (trace, val, x)
        })
        .collect();
    let mut trace = Vec::with_capacity(runs.len());
    let mut cands = vec![probe_best.clone()];
    for (t, val, x) in runs {
        trace.push(t);
        cands.push((val, x));
    }

    let mut oracle_value = None;
    if n <= cfg.net_dim_cap {
        let (net, _) = half_sphere_net(n, cfg.net_mesh);
        let best = reduce_best(
            net.into_par_iter()
                .map(|x| ((empirical_moment_unchecked(s, &x, p) - oracle.moment(&x)).abs(), x))
                .collect(),
        )
        .expect("net is nonempty");
        oracle_value = Some(best.0);
        cands.push(best);
    }
    let (_, witness) = reduce_best(cands).expect("candidates are nonempty");

    // certificate: recompute at the witness
    let empirical = empirical_moment_unchecked(s, &witness, p);
    let truth = oracle.moment(&witness);
    let ci = oracle.ci_halfwidth(&witness);
    if ci > cfg.mc_ci_budget {
        return Err(Error::OracleTooNoisy {
            ci,
            budget: cfg.mc_ci_budget,
        });
    }
    let gap = empirical - truth;
    Ok(DeviationResult {
        sup_value: gap.abs(),
        witness_x: witness,
        empirical,
        truth,
        direction_of_gap: if gap > 0.0 {
            GapDirection::EmpiricalAbove
        } else if gap < 0.0 {
            GapDirection::EmpiricalBelow
        } else {
            GapDirection::Equal
        },
        probe_max: probe_best.0,
        trace,
        oracle_value,
    })
}

/// `|emp - truth|` at every probe, in probe order.
pub fn probe_deviations(s: &SampleMatrix, oracle: &dyn MomentOracle, p: f64, probes: &[Probe]) -> Vec<f64> {
    probes
        .par_iter()
        .map(|pr| (empirical_moment_unchecked(s, &pr.x, p) - oracle.moment(&pr.x)).abs())
        .collect()
}

/// Indices with `|X_i|_2 <= K sqrt(n)`.
pub fn retained_indices(s: &SampleMatrix, k: f64) -> Vec<usize> {
    let bound = k * (s.dim() as f64).sqrt();
    s.rows()
        .enumerate()
        .filter(|(_, r)| norm2(r) <= bound)
        .map(|(i, _)| i)
        .collect()
}

/// `(1/N) sum_{i in I} |<X_i, x>|^p` with `I` the rows inside the `K sqrt(n)`
/// ball; still divided by the full `N`.
pub fn truncated_estimate(s: &SampleMatrix, k: f64, x: &[f64], p: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    if x.len() != s.dim() {
        return Err(Error::InvalidArgument("direction has the wrong dimension".into()));
    }
    check_unit(x)?;
    let bound = k * (s.dim() as f64).sqrt();
    let mut acc = 0.0;
    for row in s.rows() {
        if norm2(row) <= bound {
            acc += pow_abs(dot(row, x), p);
        }
    }
    Ok(acc / s.n_samples() as f64)
}

/// The sample with every row outside the `K sqrt(n)` ball replaced by 0.
/// Its empirical moments are the truncated estimates.
pub fn truncate_sample(s: &SampleMatrix, k: f64) -> Result<SampleMatrix> {
    let bound = k * (s.dim() as f64).sqrt();
    let mut data = s.data().to_vec();
    for row in data.chunks_exact_mut(s.dim()) {
        if norm2(row) > bound {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    SampleMatrix::new(s.dim(), data)
}

/// Smallest `K` with `K^{p-q} L^q <= eps`: `L^{q/(q-p)} eps^{-1/(q-p)}`.
pub fn truncation_threshold(l: f64, p: f64, q: f64, epsilon: f64) -> Result<f64> {
    if !(q > p) {
        return Err(Error::InvalidArgument("q must exceed p".into()));
    }
    if !(l > 0.0) || !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument("need L > 0 and epsilon in (0, 1]".into()));
    }
    Ok(l.powf(q / (q - p)) * epsilon.powf(-1.0 / (q - p)))
}

/// `t (eps N / n)^{2/(q-4)}`.
pub fn choose_b(epsilon: f64, big_n: usize, n: usize, q: f64, t: f64) -> Result<f64> {
    if !(q > 4.0) {
        return Err(Error::InvalidArgument("q must exceed 4".into()));
    }
    Ok(t * (epsilon * big_n as f64 / n as f64).powf(2.0 / (q - 4.0)))
}

/// Indices with large coefficients at `x_used` and their weak-l2 size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeCoeffDiag {
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "E_B")]
    pub e_b: Vec<usize>,
    pub size: usize,
    pub weak_l2_of_large: f64,
    /// `max_k k (c*_k)^2`, the square of `weak_l2_of_large` without a root.
    pub weak_l2_sq: f64,
    pub x_used: Vec<f64>,
}

static LARGE_COEFF_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of [`large_coeff_diag`] calls in this process; each one checked
/// `size B^2 <= weak_l2^2`.
pub fn large_coeff_calls() -> u64 {
    LARGE_COEFF_CALLS.load(Ordering::Relaxed)
}

/// `E_B(x) = {i : |<X_i, x>| >= B}` and the weak-l2 norm of the restricted
/// coefficients.
///
/// # Panics
/// If `size B^2 > weak_l2^2`, which the definitions rule out.
pub fn large_coeff_diag(s: &SampleMatrix, x: &[f64], b: f64) -> Result<LargeCoeffDiag> {
    if !(b > 0.0) {
        return Err(Error::InvalidArgument("B must be positive".into()));
    }
    if x.len() != s.dim() {
        return Err(Error::InvalidArgument("direction has the wrong dimension".into()));
    }
    let mut e_b = Vec::new();
    let mut coeffs = Vec::new();
    for (i, row) in s.rows().enumerate() {
        let c = dot(row, x);
        if c.abs() >= b {
            e_b.push(i);
            coeffs.push(c);
        }
    }
    let sorted = crate::norms::nonincreasing_rearrangement(&coeffs);
    let weak_l2_sq = sorted
        .iter()
        .enumerate()
        .map(|(k, c)| (k + 1) as f64 * (c * c))
        .fold(0.0, f64::max);
    let size = e_b.len();
    assert!(
        size as f64 * (b * b) <= weak_l2_sq,
        "large-coefficient identity violated: |E_B| B^2 = {} > {}",
        size as f64 * b * b,
        weak_l2_sq
    );
    LARGE_COEFF_CALLS.fetch_add(1, Ordering::Relaxed);
    Ok(LargeCoeffDiag {
        b,
        e_b,
        size,
        weak_l2_of_large: weak_l2_norm(&coeffs),
        weak_l2_sq,
        x_used: x.to_vec(),
    })
}

/// Terms of the reduction to large coefficients at one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub left: f64,
    /// `(1/N) sum_{E_B(x)} |<X_i, x>|^p`.
    pub large_empirical: f64,
    /// `E |<X, x>|^p 1{|<X, x>| >= B}`.
    pub large_expected: f64,
    pub holds: bool,
    pub slack: f64,
}

/// `left(x) <= 16 t B^{p-1} sqrt(n/N) + sup_x term2 + sup_x term3`, with both
/// suprema taken over the probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub b: f64,
    pub t: f64,
    pub first_term: f64,
    pub sup_large_empirical: f64,
    pub sup_large_expected: f64,
    pub rows: Vec<DecompositionRow>,
    pub all_hold: bool,
    pub min_slack: f64,
}

pub fn deviation_decomposition(
    s: &SampleMatrix,
    oracle: &dyn MomentOracle,
    p: f64,
    b: f64,
    t: f64,
    probes: &[Vec<f64>],
) -> Result<DecompositionReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("probe set is empty".into()));
    }
    if !(t >= 1.0) || !(b > 0.0) {
        return Err(Error::InvalidArgument("need t >= 1 and B > 0".into()));
    }
    let big_n = s.n_samples() as f64;
    let first_term = 16.0 * t * b.powf(p - 1.0) * (s.dim() as f64 / big_n).sqrt();
    let partial = probes
        .iter()
        .map(|x| {
            let diag = large_coeff_diag(s, x, b)?;
            let large_empirical =
                diag.e_b.iter().map(|&i| pow_abs(dot(s.row(i), x), p)).sum::<f64>() / big_n;
            let large_expected = oracle
                .tail_moment(x, b)
                .ok_or(Error::MissingOracle("tail moment"))?;
            let left = (empirical_moment_unchecked(s, x, p) - oracle.moment(x)).abs();
            Ok((left, large_empirical, large_expected))
        })
        .collect::<Result<Vec<_>>>()?;
    let sup_large_empirical = partial.iter().map(|r| r.1).fold(0.0, f64::max);
    let sup_large_expected = partial.iter().map(|r| r.2).fold(0.0, f64::max);
    let right = first_term + sup_large_empirical + sup_large_expected;
    let rows: Vec<DecompositionRow> = partial
        .into_iter()
        .map(|(left, large_empirical, large_expected)| DecompositionRow {
            left,
            large_empirical,
            large_expected,
            holds: left <= right,
            slack: right - left,
        })
        .collect();
    Ok(DecompositionReport {
        b,
        t,
        first_term,
        sup_large_empirical,
        sup_large_expected,
        all_hold: rows.iter().all(|r| r.holds),
        min_slack: rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min),
        rows,
    })
}

/// [`deviation_decomposition`] for a spec: closed-form tails where they exist,
/// otherwise a reference sample of `reference_draws` rows.
pub fn deviation_decomposition_for_spec(
    s: &SampleMatrix,
    spec: &DistributionSpec,
    p: f64,
    b: f64,
    t: f64,
    probes: &[Vec<f64>],
    reference_draws: usize,
    stream: StreamId,
) -> Result<DecompositionReport> {
    let exact = ExactOracle::new(spec, p).ok();
    match exact {
        Some(o) if o.tail_moment(&linalg::basis_vector(spec.dim(), 0), b).is_some() => {
            deviation_decomposition(s, &o, p, b, t, probes)
        }
        _ => {
            let reference = SampleOracle::draw(spec, p, reference_draws, stream.with_purpose(Purpose::Oracle))?;
            deviation_decomposition(s, &reference, p, b, t, probes)
        }
    }
}
