//! Vector quasi-norms, operator-norm solvers and the envelope checks built on
//! them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decouple::min_norm_hull_point;
use crate::dist::{ModelParams, SampleMatrix};
use crate::estimate::SolverConfig;
use crate::linalg::{self, dot, norm2, normalize};
use crate::special::{pow_abs, weak_l2_lp_constant, NormalizedPareto};
use crate::stream::{Purpose, StreamId, StreamRng};
use crate::{Error, Result};

/// `(|v_k|)` sorted in non-increasing order.
pub fn nonincreasing_rearrangement(v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    out.sort_unstable_by(|a, b| b.total_cmp(a));
    out
}

/// `max_k sqrt(k) v*_k`; zero for the empty vector.
pub fn weak_l2_norm(v: &[f64]) -> f64 {
    weak_l2_active(v).0
}

/// Weak-l2 norm with the 1-based maximizing index `k` (smallest on ties).
pub fn weak_l2_active(v: &[f64]) -> (f64, usize) {
    let sorted = nonincreasing_rearrangement(v);
    let mut best = (0.0, 1);
    for (i, s) in sorted.iter().enumerate() {
        let val = ((i + 1) as f64).sqrt() * s;
        if val > best.0 {
            best = (val, i + 1);
        }
    }
    best
}

pub fn lp_norm(v: &[f64], p: f64) -> f64 {
    let m = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| pow_abs(x / m, p)).sum::<f64>().powf(1.0 / p)
}

/// Solver bookkeeping reported with every operator-norm estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub starts: usize,
    pub iterations: usize,
    pub converged: usize,
}

/// Certified lower bound on an operator norm with its witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNormEstimate {
    pub value: f64,
    pub witness_x: Vec<f64>,
    pub solver_stats: SolverStats,
    /// Largest value over a net of the sphere (small `n` only).
    pub oracle_value: Option<f64>,
    /// Covering radius of that net.
    pub net_beta: Option<f64>,
    /// Upper bound `oracle_value / (1 - beta)` on the true norm.
    pub oracle_upper: Option<f64>,
    /// `(lower, upper)` bounds from neighbouring norms, when computed.
    pub sandwich: Option<(f64, f64)>,
}

/// Points on the half sphere `{x_1 >= 0}` of `R^n` on a hyperspherical angle
/// grid with step at most `h`. Every unit vector is within `(h/2) sqrt(n-1)`
/// of the net or of its negation.
pub fn half_sphere_net(n: usize, h: f64) -> (Vec<Vec<f64>>, f64) {
    assert!(n >= 1 && h > 0.0);
    if n == 1 {
        return (vec![vec![1.0]], 0.0);
    }
    let grid = |lo: f64, hi: f64, closed: bool| -> Vec<f64> {
        let steps = ((hi - lo) / h).ceil().max(1.0) as usize;
        let count = if closed { steps + 1 } else { steps };
        (0..count).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect()
    };
    use std::f64::consts::PI;
    // n = 2: a single angle over the upper half circle
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    if n == 2 {
        axes.push(grid(-PI / 2.0, PI / 2.0, true));
    } else {
        axes.push(grid(0.0, PI / 2.0, true));
        for _ in 1..n - 2 {
            axes.push(grid(0.0, PI, true));
        }
        axes.push(grid(0.0, 2.0 * PI, false));
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; axes.len()];
    loop {
        let angles: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        out.push(if n == 2 {
            vec![angles[0].cos(), angles[0].sin()]
        } else {
            from_angles(&angles)
        });
        let mut d = 0;
        loop {
            if d == idx.len() {
                let beta = 0.5 * h * ((n - 1) as f64).sqrt();
                return (out, beta);
            }
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn from_angles(angles: &[f64]) -> Vec<f64> {
    let n = angles.len() + 1;
    let mut x = vec![0.0; n];
    let mut sin_prod = 1.0;
    for (i, a) in angles.iter().enumerate() {
        x[i] = sin_prod * a.cos();
        sin_prod *= a.sin();
    }
    x[n - 1] = sin_prod;
    x
}

/// Normalized rows, keeping the `cap` rows of largest norm when `N > cap`.
pub fn row_directions(a: &SampleMatrix, cap: usize) -> Vec<Vec<f64>> {
    let norms = a.row_norms();
    let mut order: Vec<usize> = (0..a.n_samples()).filter(|&i| norms[i] > 0.0).collect();
    if order.len() > cap {
        order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
        order.truncate(cap);
        order.sort_unstable();
    }
    order
        .into_iter()
        .map(|i| a.row(i).iter().map(|v| v / norms[i]).collect())
        .collect()
}

/// `(value, witness)` max with ties to the lexicographically smaller witness.
fn better(a: &(f64, Vec<f64>), b: &(f64, Vec<f64>)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => {
            for (x, y) in a.1.iter().zip(&b.1) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Less => return true,
                    std::cmp::Ordering::Greater => return false,
                    _ => {}
                }
            }
            false
        }
    }
}

pub(crate) fn reduce_best(results: Vec<(f64, Vec<f64>)>) -> Option<(f64, Vec<f64>)> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in results {
        if best.as_ref().is_none_or(|b| better(&r, b)) {
            best = Some(r);
        }
    }
    best
}

fn lp_of_image(a: &SampleMatrix, x: &[f64], p: f64) -> f64 {
    let mut u = vec![0.0; a.n_samples()];
    a.apply(x, &mut u);
    lp_norm(&u, p)
}

fn weak_of_image(a: &SampleMatrix, x: &[f64]) -> f64 {
    let mut u = vec![0.0; a.n_samples()];
    a.apply(x, &mut u);
    weak_l2_norm(&u)
}

/// Candidate directions: normalized rows, the top right singular vector and
/// `cfg.starts` random points.
fn start_candidates(a: &SampleMatrix, cfg: &SolverConfig, salt: u64) -> Vec<Vec<f64>> {
    let mut cands = row_directions(a, cfg.row_probe_cap);
    let (sigma, v) = linalg::top_singular(a.data(), a.n_samples(), a.dim());
    if sigma > 0.0 {
        cands.push(v);
    }
    let mut rng: StreamRng = StreamId::new(cfg.seed, salt, Purpose::Solver).rng();
    for _ in 0..cfg.starts {
        cands.push(linalg::random_unit(a.dim(), &mut rng));
    }
    cands
}

/// Indices of the `k` best candidate values plus all non-row candidates
/// (singular direction and random starts), which always sit at the end.
fn ascent_indices(values: &[f64], k: usize, tail: usize) -> Vec<usize> {
    let head = values.len() - tail;
    let mut order: Vec<usize> = (0..head).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    order.truncate(k);
    order.extend(head..values.len());
    order
}

/// `max_{|x|_2 = 1} |A x|_p` by the monotone power iteration
/// `x <- A^T(sign(Ax)|Ax|^{p-1})`, normalized, from several starts.
pub fn opnorm_l2_lp(a: &SampleMatrix, p: f64, cfg: &SolverConfig) -> Result<OpNormEstimate> {
    if !(p > 2.0) {
        return Err(Error::InvalidArgument("p must exceed 2".into()));
    }
    cfg.validate()?;
    let n = a.dim();
    let cands = start_candidates(a, cfg, 0x6c70);
    let values: Vec<f64> = cands.par_iter().map(|x| lp_of_image(a, x, p)).collect();
    let tail = cands.len() - row_directions(a, cfg.row_probe_cap).len();
    let picks = ascent_indices(&values, cfg.starts, tail);

    let runs: Vec<(f64, Vec<f64>, usize, bool)> = picks
        .par_iter()
        .map(|&i| power_iteration(a, &cands[i], p, cfg))
        .collect();
    let mut stats = SolverStats::default();
    let mut results = Vec::with_capacity(runs.len());
    for (val, x, iters, conv) in runs {
        stats.starts += 1;
        stats.iterations += iters;
        stats.converged += usize::from(conv);
        results.push((val, x));
    }
    let (mut value, mut witness) = reduce_best(results).unwrap_or((0.0, linalg::basis_vector(n, 0)));

    let (mut oracle_value, mut net_beta, mut oracle_upper) = (None, None, None);
    if n <= cfg.net_dim_cap {
        let (net, beta) = half_sphere_net(n, cfg.net_mesh);
        let best = reduce_best(net.into_par_iter().map(|x| (lp_of_image(a, &x, p), x)).collect())
            .expect("net is nonempty");
        if best.0 > value {
            (value, witness) = best.clone();
        }
        oracle_value = Some(best.0);
        net_beta = Some(beta);
        oracle_upper = Some(best.0 / (1.0 - beta));
    }
    if value == 0.0 {
        witness = linalg::basis_vector(n, 0);
    }
    // certificate: recompute at the witness
    let value = lp_of_image(a, &witness, p);
    Ok(OpNormEstimate {
        value,
        witness_x: witness,
        solver_stats: stats,
        oracle_value,
        net_beta,
        oracle_upper,
        sandwich: None,
    })
}

fn power_iteration(a: &SampleMatrix, x0: &[f64], p: f64, cfg: &SolverConfig) -> (f64, Vec<f64>, usize, bool) {
    let big_n = a.n_samples();
    let mut x = x0.to_vec();
    let mut u = vec![0.0; big_n];
    let mut g = vec![0.0; a.dim()];
    a.apply(&x, &mut u);
    let mut val = lp_norm(&u, p);
    for it in 1..=cfg.max_iters {
        let m = u.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if m == 0.0 {
            return (val, x, it, true);
        }
        let w: Vec<f64> = u.iter().map(|v| v.signum() * pow_abs(v / m, p - 1.0)).collect();
        a.apply_transpose(&w, &mut g);
        if normalize(&mut g) == 0.0 {
            return (val, x, it, true);
        }
        a.apply(&g, &mut u);
        let new_val = lp_norm(&u, p);
        if new_val < val {
            // rounding only; the iteration is monotone
            return (val, x, it, true);
        }
        let gain = new_val - val;
        x.copy_from_slice(&g);
        val = new_val;
        if gain <= cfg.grad_tol * val.max(1e-300) {
            return (val, x, it, true);
        }
    }
    (val, x, cfg.max_iters, false)
}

/// `max_{|x|_2 = 1} |A x|_{2,inf}` by active-index subgradient ascent with
/// backtracking, each phase followed by an exact max-min step over the active
/// top-k set. Reports `(c_4 |A|_{2->4}, |A|_{2->2})` as sandwich bounds.
pub fn opnorm_l2_l2inf(a: &SampleMatrix, cfg: &SolverConfig) -> Result<OpNormEstimate> {
    cfg.validate()?;
    let n = a.dim();
    let sandwich_p = 4.0;
    let lp = opnorm_l2_lp(a, sandwich_p, cfg)?;
    let (sigma, _) = linalg::top_singular(a.data(), a.n_samples(), n);
    let lower = weak_l2_lp_constant(sandwich_p) * lp.value;

    let mut cands = start_candidates(a, cfg, 0x7769);
    let rows = row_directions(a, cfg.row_probe_cap).len();
    cands.push(lp.witness_x.clone());
    let tail = cands.len() - rows;
    let values: Vec<f64> = cands.par_iter().map(|x| weak_of_image(a, x)).collect();
    let picks = ascent_indices(&values, cfg.starts, tail);
    let runs: Vec<(f64, Vec<f64>, usize, bool)> =
        picks.par_iter().map(|&i| weak_ascent(a, &cands[i], cfg)).collect();
    let mut stats = SolverStats::default();
    let mut results = Vec::new();
    for (val, x, iters, conv) in runs {
        stats.starts += 1;
        stats.iterations += iters;
        stats.converged += usize::from(conv);
        results.push((val, x));
    }
    let (mut value, mut witness) = reduce_best(results).unwrap_or((0.0, linalg::basis_vector(n, 0)));
    let mut oracle_value = None;
    let mut net_beta = None;
    if n <= cfg.net_dim_cap {
        let (net, beta) = half_sphere_net(n, cfg.net_mesh);
        let best = reduce_best(net.into_par_iter().map(|x| (weak_of_image(a, &x), x)).collect())
            .expect("net is nonempty");
        if best.0 > value {
            (value, witness) = best.clone();
        }
        oracle_value = Some(best.0);
        net_beta = Some(beta);
    }
    if value == 0.0 {
        witness = linalg::basis_vector(n, 0);
    }
    let value = weak_of_image(a, &witness);
    Ok(OpNormEstimate {
        value,
        witness_x: witness,
        solver_stats: stats,
        oracle_value,
        net_beta,
        oracle_upper: None,
        sandwich: Some((lower, sigma)),
    })
}

fn weak_ascent(a: &SampleMatrix, x0: &[f64], cfg: &SolverConfig) -> (f64, Vec<f64>, usize, bool) {
    let big_n = a.n_samples();
    let n = a.dim();
    let mut x = x0.to_vec();
    let mut u = vec![0.0; big_n];
    a.apply(&x, &mut u);
    let mut val = weak_l2_norm(&u);
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        let start_val = val;
        // subgradient of the active piece sqrt(k) |<A_j, x>|
        let (_, k) = weak_l2_active(&u);
        let order = top_indices(&u, k);
        let j = order[k - 1];
        let s = (k as f64).sqrt() * u[j].signum();
        let mut g: Vec<f64> = a.row(j).iter().map(|r| s * r).collect();
        let gx = dot(&g, &x);
        g.iter_mut().zip(&x).for_each(|(gi, xi)| *gi -= gx * xi);
        let gn = norm2(&g);
        if gn > 0.0 {
            let mut step = cfg.step_init;
            let mut trial = vec![0.0; n];
            while step >= cfg.min_step {
                trial.iter_mut()
                    .zip(x.iter().zip(&g))
                    .for_each(|(t, (xi, gi))| *t = xi + step * gi / gn);
                normalize(&mut trial);
                let tv = weak_of_image(a, &trial);
                if tv > val {
                    x.copy_from_slice(&trial);
                    a.apply(&x, &mut u);
                    val = weak_l2_norm(&u);
                    break;
                }
                step *= cfg.step_shrink;
            }
        }
        // max-min over the active top-k set with frozen signs
        let (_, k) = weak_l2_active(&u);
        let order = top_indices(&u, k);
        let pts: Vec<Vec<f64>> = order
            .iter()
            .map(|&i| {
                let sg = if u[i] < 0.0 { -1.0 } else { 1.0 };
                a.row(i).iter().map(|r| sg * r).collect()
            })
            .collect();
        if let Ok(hull) = min_norm_hull_point(&pts, 1e-10) {
            let mut y = hull.z;
            if normalize(&mut y) > 0.0 {
                let yv = weak_of_image(a, &y);
                if yv > val {
                    x = y;
                    a.apply(&x, &mut u);
                    val = weak_l2_norm(&u);
                }
            }
        }
        if val - start_val <= cfg.grad_tol * val.max(1e-300) {
            return (val, x, iters, true);
        }
    }
    (val, x, iters, false)
}

/// Indices of the `k` largest `|u_i|`, ties to the smaller index.
fn top_indices(u: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&i, &j| u[j].abs().total_cmp(&u[i].abs()).then(i.cmp(&j)));
    order.truncate(k);
    order
}

/// How [`projected_subset_norm`] searches subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    Exact,
    Greedy,
    /// Exact when the enumeration fits the budget, greedy otherwise.
    Auto,
}

pub const EXACT_SUBSET_BUDGET: f64 = 1e6;

/// `binomial(n, k)` as a float (exact well past the enumeration budget).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Result of a subset search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetNorm {
    pub value: f64,
    pub indices: Vec<usize>,
    pub exact: bool,
}

/// `max_{|I| = s} |sum_{i in I} X_i|_2`.
pub fn projected_subset_norm(a: &SampleMatrix, s: usize, mode: SubsetMode) -> Result<SubsetNorm> {
    let big_n = a.n_samples();
    if s == 0 || s > big_n {
        return Err(Error::InvalidArgument(format!("subset size {s} outside 1..={big_n}")));
    }
    let fits = binomial(big_n, s) <= EXACT_SUBSET_BUDGET;
    match mode {
        SubsetMode::Exact if !fits => Err(Error::InvalidArgument(format!(
            "exact mode needs binomial({big_n}, {s}) <= {EXACT_SUBSET_BUDGET}"
        ))),
        SubsetMode::Exact => Ok(exact_subset(a, s)),
        SubsetMode::Auto if fits => Ok(exact_subset(a, s)),
        _ => Ok(greedy_subset(a, s)),
    }
}

fn exact_subset(a: &SampleMatrix, s: usize) -> SubsetNorm {
    struct Dfs<'a> {
        a: &'a SampleMatrix,
        s: usize,
        chosen: Vec<usize>,
        best: f64,
        best_set: Vec<usize>,
    }
    impl Dfs<'_> {
        fn go(&mut self, start: usize, sum: &[f64]) {
            if self.chosen.len() == self.s {
                let v = norm2(sum);
                if v > self.best {
                    self.best = v;
                    self.best_set = self.chosen.clone();
                }
                return;
            }
            let remaining = self.s - self.chosen.len();
            let mut next = vec![0.0; sum.len()];
            for i in start..=self.a.n_samples() - remaining {
                next.iter_mut()
                    .zip(sum.iter().zip(self.a.row(i)))
                    .for_each(|(o, (x, r))| *o = x + r);
                self.chosen.push(i);
                self.go(i + 1, &next);
                self.chosen.pop();
            }
        }
    }
    let mut dfs = Dfs {
        a,
        s,
        chosen: Vec::with_capacity(s),
        best: -1.0,
        best_set: Vec::new(),
    };
    dfs.go(0, &vec![0.0; a.dim()]);
    SubsetNorm {
        value: dfs.best,
        indices: dfs.best_set,
        exact: true,
    }
}

fn greedy_subset(a: &SampleMatrix, s: usize) -> SubsetNorm {
    let mut used = vec![false; a.n_samples()];
    let mut sum = vec![0.0; a.dim()];
    let mut indices = Vec::with_capacity(s);
    for _ in 0..s {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, row) in a.rows().enumerate() {
            if used[i] {
                continue;
            }
            let v: f64 = sum.iter().zip(row).map(|(x, r)| (x + r) * (x + r)).sum();
            if v > best.0 {
                best = (v, i);
            }
        }
        used[best.1] = true;
        indices.push(best.1);
        sum.iter_mut().zip(a.row(best.1)).for_each(|(x, r)| *x += r);
    }
    indices.sort_unstable();
    SubsetNorm {
        value: norm2(&sum),
        indices,
        exact: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTheoremRow {
    pub s: usize,
    pub max_norm: f64,
    pub envelope: f64,
    pub ratio: f64,
    pub exact_flag: bool,
}

/// Subset sums against `sqrt(n s) + t s (N/s)^{2/q}` over a geometric grid
/// of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTheoremReport {
    pub rows: Vec<NormTheoremRow>,
    pub min_feasible_c: f64,
    pub t: f64,
    pub q: f64,
}

impl NormTheoremReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["s", "max_norm", "envelope", "ratio", "exact_flag"])?;
        for r in &self.rows {
            w.write_record([
                r.s.to_string(),
                format!("{:e}", r.max_norm),
                format!("{:e}", r.envelope),
                format!("{:e}", r.ratio),
                r.exact_flag.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "min_feasible_C": self.min_feasible_c,
            "t": self.t,
            "q": self.q,
            "grid": self.rows.iter().map(|r| r.s).collect::<Vec<_>>(),
        })
    }
}

/// `1, 2, 4, ...` up to `N`, always ending at `N`.
pub fn geometric_grid(big_n: usize) -> Vec<usize> {
    let mut grid = Vec::new();
    let mut s = 1;
    while s < big_n {
        grid.push(s);
        s *= 2;
    }
    grid.push(big_n);
    grid
}

pub fn check_norm_theorem(a: &SampleMatrix, params: &ModelParams, t: f64, mode: SubsetMode) -> Result<NormTheoremReport> {
    if !(t >= 1.0) {
        return Err(Error::InvalidArgument("t must be >= 1".into()));
    }
    if !(params.q > 4.0) {
        return Err(Error::InvalidArgument("q must exceed 4".into()));
    }
    let big_n = a.n_samples();
    let n = a.dim() as f64;
    let grid = geometric_grid(big_n);
    let rows = grid
        .par_iter()
        .map(|&s| {
            let sub = projected_subset_norm(a, s, mode)?;
            let sf = s as f64;
            let envelope = (n * sf).sqrt() + t * sf * (big_n as f64 / sf).powf(2.0 / params.q);
            Ok(NormTheoremRow {
                s,
                max_norm: sub.value,
                envelope,
                ratio: sub.value / envelope,
                exact_flag: sub.exact,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_feasible_c = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(NormTheoremReport {
        rows,
        min_feasible_c,
        t,
        q: params.q,
    })
}

/// Smallest constant in the off-diagonal Gram bound and where it binds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramCheck {
    pub min_feasible_cq: f64,
    /// `(k, s)`: row index and subset size of the binding constraint.
    pub worst: (usize, usize),
}

/// `max_{|E| = s, k not in E} (1/s) sum_{i in E} <X_i, X_k>^2` for
/// `s = 1..N-1`: the prefix means of the squared inner products sorted in
/// decreasing order.
pub fn gram_prefix_maxima(a: &SampleMatrix, k: usize) -> Vec<f64> {
    let xk = a.row(k);
    let mut sq: Vec<f64> = (0..a.n_samples())
        .filter(|&i| i != k)
        .map(|i| {
            let d = dot(a.row(i), xk);
            d * d
        })
        .collect();
    sq.sort_unstable_by(|x, y| y.total_cmp(x));
    let mut prefix = 0.0;
    sq.iter()
        .enumerate()
        .map(|(j, v)| {
            prefix += v;
            prefix / (j + 1) as f64
        })
        .collect()
}

/// For each `k` the worst `E` of size `s` in
/// `(1/s) sum_{i in E} <X_i, X_k>^2 <= C t^2 K^2 L^2 (N/s)^{4/q} n`
/// is the top-`s` prefix of the sorted squares, so every `(k, s)` is exact.
pub fn gram_offdiag_check(a: &SampleMatrix, params: &ModelParams, t: f64) -> Result<GramCheck> {
    if !(t >= 1.0) {
        return Err(Error::InvalidArgument("t must be >= 1".into()));
    }
    let big_n = a.n_samples();
    let n = a.dim() as f64;
    let scale = t * t * params.k * params.k * params.l * params.l * n;
    let per_k: Vec<(f64, usize)> = (0..big_n)
        .into_par_iter()
        .map(|k| {
            let mut best = (0.0, 1);
            for (j, mean) in gram_prefix_maxima(a, k).into_iter().enumerate() {
                let s = (j + 1) as f64;
                let c = mean / (scale * (big_n as f64 / s).powf(4.0 / params.q));
                if c > best.0 {
                    best = (c, j + 1);
                }
            }
            best
        })
        .collect();
    let mut out = GramCheck {
        min_feasible_cq: 0.0,
        worst: (0, 1),
    };
    for (k, (c, s)) in per_k.into_iter().enumerate() {
        if c > out.min_feasible_cq {
            out = GramCheck {
                min_feasible_cq: c,
                worst: (k, s),
            };
        }
    }
    Ok(out)
}

/// Whether `Z*_i <= t B (N/i)^{2/q}` for every `i`.
pub fn rearrangement_bound_check(z: &[f64], b: f64, q: f64, t: f64) -> bool {
    rearrangement_ratio(z, b, q) <= t
}

/// `max_i Z*_i / (B (N/i)^{2/q})`: the smallest `t` passing the check.
pub fn rearrangement_ratio(z: &[f64], b: f64, q: f64) -> f64 {
    let big_n = z.len() as f64;
    nonincreasing_rearrangement(z)
        .iter()
        .enumerate()
        .map(|(i, v)| v / (b * (big_n / (i + 1) as f64).powf(2.0 / q)))
        .fold(0.0, f64::max)
}

/// Scalar laws for the rearrangement experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarLaw {
    /// `Z = b` almost surely.
    Constant { b: f64 },
    /// `|xi|` for a symmetrized normalized Pareto `xi`.
    SymmetricPareto { alpha: f64 },
}

impl ScalarLaw {
    /// `B = (E Z^q)^{1/q}`.
    pub fn moment_bound(&self, q: f64) -> Result<f64> {
        match *self {
            ScalarLaw::Constant { b } => Ok(b.abs()),
            ScalarLaw::SymmetricPareto { alpha } => NormalizedPareto::new(alpha)
                .ok_or_else(|| Error::InvalidArgument("alpha must exceed 2".into()))?
                .abs_moment(q)
                .map(|m| m.powf(1.0 / q))
                .ok_or(Error::InfiniteMoment { order: q, tail: alpha }),
        }
    }

    fn draw(&self, rng: &mut StreamRng) -> f64 {
        use rand::Rng;
        match *self {
            ScalarLaw::Constant { b } => b.abs(),
            ScalarLaw::SymmetricPareto { alpha } => {
                let law = NormalizedPareto { alpha };
                let u = 1.0 - rng.random::<f64>();
                law.from_uniform(u, rng.random::<bool>()).abs()
            }
        }
    }
}

/// Failure frequency of the rearrangement bound with its Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RearrangementRate {
    pub t: f64,
    pub rate: f64,
    pub failures: usize,
    pub trials: usize,
    pub ci: (f64, f64),
    /// `t^{-q} / N`.
    pub bound: f64,
    /// `rate / bound`.
    pub fitted_c: f64,
    pub b: f64,
}

/// Monte Carlo failure frequency of [`rearrangement_bound_check`] at one `t`.
pub fn rearrangement_failure_rate(
    law: ScalarLaw,
    big_n: usize,
    q: f64,
    t: f64,
    trials: usize,
    stream: StreamId,
) -> Result<RearrangementRate> {
    Ok(rearrangement_failure_rates(law, big_n, q, &[t], trials, stream)?.remove(0))
}

/// Same as [`rearrangement_failure_rate`] for several `t` on the same draws.
pub fn rearrangement_failure_rates(
    law: ScalarLaw,
    big_n: usize,
    q: f64,
    ts: &[f64],
    trials: usize,
    stream: StreamId,
) -> Result<Vec<RearrangementRate>> {
    if big_n == 0 || trials == 0 {
        return Err(Error::InvalidArgument("N and trials must be >= 1".into()));
    }
    if ts.iter().any(|t| !(*t >= 1.0)) {
        return Err(Error::InvalidArgument("t must be >= 1".into()));
    }
    let b = law.moment_bound(q)?;
    let mut rng = stream.rng();
    let mut z = vec![0.0; big_n];
    let mut failures = vec![0usize; ts.len()];
    for _ in 0..trials {
        z.iter_mut().for_each(|v| *v = law.draw(&mut rng));
        let r = rearrangement_ratio(&z, b, q);
        for (f, t) in failures.iter_mut().zip(ts) {
            *f += usize::from(r > *t);
        }
    }
    Ok(ts
        .iter()
        .zip(failures)
        .map(|(&t, f)| {
            let rate = f as f64 / trials as f64;
            let bound = t.powf(-q) / big_n as f64;
            RearrangementRate {
                t,
                rate,
                failures: f,
                trials,
                ci: crate::harness::wilson_interval(f, trials, crate::harness::Z95),
                bound,
                fitted_c: rate / bound,
                b,
            }
        })
        .collect())
}
