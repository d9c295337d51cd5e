//! Constructive decoupling: move a direction `x` into the span of a few of the
//! vectors while keeping large inner products with the rest.
//!
//! The construction separates the hull of `X_i / a` from the origin by its
//! minimum-norm point, writes the separating direction as a combination of
//! the `X_i`, and thins that combination with random selectors. Every output
//! is re-verified from raw data; failed draws are retried.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, dot, norm2, orthonormal_basis, span_residual};
use crate::stream::{Purpose, StreamId};
use crate::{Error, Result};

/// Minimum-norm point of a convex hull with its convex weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullPoint {
    pub z: Vec<f64>,
    pub weights: Vec<f64>,
    /// `max_i <z - p_i, z>` at exit.
    pub gap: f64,
    pub iterations: usize,
}

/// Up to this many points the exact active-set method is used.
pub const ACTIVE_SET_MAX_POINTS: usize = 16;

/// `argmin |z|_2` over `conv(points)`, stopping when
/// `max_i <z - p_i, z> <= tol |z|^2`.
pub fn min_norm_hull_point<P: AsRef<[f64]>>(points: &[P], tol: f64) -> Result<HullPoint> {
    let pts: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();
    let Some(first) = pts.first() else {
        return Err(Error::InvalidArgument("no points".into()));
    };
    let n = first.len();
    if pts.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidArgument("points have different dimensions".into()));
    }
    if pts.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("hull point coordinate".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let mut out = if pts.len() <= ACTIVE_SET_MAX_POINTS {
        active_set(&pts, tol)
    } else {
        pairwise_frank_wolfe(&pts, tol)
    };
    // rebuild z from the weights so the two always agree
    let sum: f64 = out.weights.iter().sum();
    out.weights.iter_mut().for_each(|w| *w /= sum);
    out.z = combine(&pts, &out.weights);
    out.gap = hull_gap(&pts, &out.z);
    Ok(out)
}

fn combine(pts: &[&[f64]], w: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; pts[0].len()];
    for (p, &wi) in pts.iter().zip(w) {
        if wi != 0.0 {
            z.iter_mut().zip(p.iter()).for_each(|(zi, pi)| *zi += wi * pi);
        }
    }
    z
}

fn hull_gap(pts: &[&[f64]], z: &[f64]) -> f64 {
    let zz = dot(z, z);
    pts.iter().map(|p| zz - dot(p, z)).fold(f64::NEG_INFINITY, f64::max)
}

fn scale_of(pts: &[&[f64]]) -> f64 {
    pts.iter().map(|p| norm2(p)).fold(0.0, f64::max)
}

fn argmin_inner(pts: &[&[f64]], z: &[f64]) -> (usize, f64) {
    pts.iter()
        .enumerate()
        .map(|(i, p)| (i, dot(p, z)))
        .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc })
}

/// Wolfe's active-set method: exact up to rounding, for small point sets.
fn active_set(pts: &[&[f64]], tol: f64) -> HullPoint {
    let m = pts.len();
    let tiny = 1e-14 * scale_of(pts).max(f64::MIN_POSITIVE);
    let start = (0..m)
        .min_by(|&i, &j| norm2(pts[i]).total_cmp(&norm2(pts[j])))
        .expect("nonempty");
    let mut active = vec![start];
    let mut w = vec![0.0; m];
    w[start] = 1.0;
    let mut z = pts[start].to_vec();
    let mut iterations = 0;
    while iterations < 50 * m + 50 {
        iterations += 1;
        let zz = dot(&z, &z);
        if zz.sqrt() <= tiny {
            break;
        }
        let (j, pj) = argmin_inner(pts, &z);
        if zz - pj <= tol * zz || active.contains(&j) {
            break;
        }
        active.push(j);
        loop {
            iterations += 1;
            let alpha = affine_minimizer(pts, &active);
            if alpha.iter().all(|&a| a > 1e-15) {
                for (k, &i) in active.iter().enumerate() {
                    w[i] = alpha[k];
                }
                z = combine(pts, &w);
                break;
            }
            // step from the current weights toward alpha until one hits zero
            let mut theta: f64 = 1.0;
            for (k, &i) in active.iter().enumerate() {
                if alpha[k] <= 1e-15 && w[i] - alpha[k] > 0.0 {
                    theta = theta.min(w[i] / (w[i] - alpha[k]));
                }
            }
            for (k, &i) in active.iter().enumerate() {
                w[i] += theta * (alpha[k] - w[i]);
            }
            active.retain(|&i| w[i] > 1e-15);
            for (i, wi) in w.iter_mut().enumerate() {
                if !active.contains(&i) {
                    *wi = 0.0;
                }
            }
            z = combine(pts, &w);
            if active.len() <= 1 {
                break;
            }
        }
    }
    HullPoint {
        z,
        weights: w,
        gap: 0.0,
        iterations,
    }
}

/// Weights of the minimum-norm point of the affine hull of `pts[active]`.
fn affine_minimizer(pts: &[&[f64]], active: &[usize]) -> Vec<f64> {
    let k = active.len();
    let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in a..k {
            let g = dot(pts[active[a]], pts[active[b]]);
            kkt[(a, b)] = g;
            kkt[(b, a)] = g;
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| {
            kkt.svd(true, true)
                .solve(&rhs, 1e-13)
                .expect("svd solve with both factors")
        });
    sol.iter().take(k).copied().collect()
}

/// Pairwise Frank-Wolfe with exact line search on `|z|^2 / 2`.
fn pairwise_frank_wolfe(pts: &[&[f64]], tol: f64) -> HullPoint {
    let m = pts.len();
    let tiny = 1e-14 * scale_of(pts).max(f64::MIN_POSITIVE);
    let start = (0..m)
        .min_by(|&i, &j| norm2(pts[i]).total_cmp(&norm2(pts[j])))
        .expect("nonempty");
    let mut w = vec![0.0; m];
    w[start] = 1.0;
    let mut z = pts[start].to_vec();
    let max_iters = 200_000;
    let mut iterations = 0;
    let mut inner = vec![0.0; m];
    while iterations < max_iters {
        iterations += 1;
        let zz = dot(&z, &z);
        if zz.sqrt() <= tiny {
            break;
        }
        for (v, p) in inner.iter_mut().zip(pts) {
            *v = dot(p, &z);
        }
        let (s, ps) = inner
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        if zz - ps <= tol * zz {
            break;
        }
        let (v, _) = inner
            .iter()
            .enumerate()
            .filter(|(i, _)| w[*i] > 0.0)
            .fold((s, f64::NEG_INFINITY), |acc, (i, &val)| if val > acc.1 { (i, val) } else { acc });
        if v == s {
            break;
        }
        let d: Vec<f64> = pts[s].iter().zip(pts[v]).map(|(a, b)| a - b).collect();
        let dd = dot(&d, &d);
        if dd == 0.0 {
            break;
        }
        let gamma = (-dot(&z, &d) / dd).clamp(0.0, w[v]);
        if gamma == 0.0 {
            break;
        }
        w[s] += gamma;
        w[v] -= gamma;
        if w[v] < 1e-16 {
            w[v] = 0.0;
        }
        z.iter_mut().zip(&d).for_each(|(zi, di)| *zi += gamma * di);
        if iterations % 64 == 0 {
            z = combine(pts, &w);
        }
    }
    HullPoint {
        z,
        weights: w,
        gap: 0.0,
        iterations,
    }
}

/// `x_bar = z / |z|` for the hull's minimum-norm point `z`, and `lambda =
/// weights / |z|` so that `x_bar = sum lambda_i p_i` with `sum lambda <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub x_bar: Vec<f64>,
    pub lambda: Vec<f64>,
    pub z_norm: f64,
    /// Smallest `<p_i, x_bar>` and where it occurs.
    pub worst: (usize, f64),
}

pub const SEPARATION_TOL: f64 = 1e-10;

/// Direction with `<p_i, x_bar> >= 1` for all points, given that some unit
/// vector achieves it.
pub fn separating_direction<P: AsRef<[f64]>>(points: &[P]) -> Result<Separation> {
    let hull = min_norm_hull_point(points, SEPARATION_TOL)?;
    let z_norm = norm2(&hull.z);
    if z_norm == 0.0 {
        return Err(Error::Degenerate("origin lies in the convex hull; no separating direction".into()));
    }
    let x_bar: Vec<f64> = hull.z.iter().map(|v| v / z_norm).collect();
    let worst = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, dot(p.as_ref(), &x_bar)))
        .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
    if worst.1 < 1.0 - 10.0 * SEPARATION_TOL {
        return Err(Error::Degenerate(format!(
            "separation check failed at point {}: <p, x_bar> = {:.12} < 1",
            worst.0, worst.1
        )));
    }
    Ok(Separation {
        lambda: hull.weights.iter().map(|w| w / z_norm).collect(),
        x_bar,
        z_norm,
        worst,
    })
}

/// Inputs of the decoupling construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecouplingInput {
    pub vectors: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "M")]
    pub m: f64,
    /// The user-facing `delta`: at most `delta * s` indices are given up.
    pub delta: f64,
    /// `B sqrt(n/s) + M`.
    pub a: f64,
    /// `max_k |X_k|_2 / sqrt(n)`.
    #[serde(rename = "K1")]
    pub k1: f64,
    /// `(max_k (1/s) sum_{i != k} <X_i, X_k>^2 / n)^{1/4}`.
    #[serde(rename = "K2")]
    pub k2: f64,
    /// The unnamed absolute constant in the hypotheses on `B` and `M`.
    pub c_impl: f64,
}

/// The construction runs with `delta / 22` internally, which turns the
/// `(1 - 22 delta) s` cardinality of the argument into `(1 - delta) s`.
pub const DELTA_SHRINK: f64 = 22.0;

/// Relative slack in the check `<X_i, x> >= a`.
const MARGIN_HYP_TOL: f64 = 1e-12;

impl DecouplingInput {
    /// Computes `a`, `K1`, `K2` and checks every hypothesis with `c_impl = 1`.
    pub fn new(vectors: Vec<Vec<f64>>, x: Vec<f64>, b: f64, m: f64, delta: f64) -> Result<Self> {
        Self::with_c_impl(vectors, x, b, m, delta, 1.0)
    }

    pub fn with_c_impl(vectors: Vec<Vec<f64>>, x: Vec<f64>, b: f64, m: f64, delta: f64, c_impl: f64) -> Result<Self> {
        let input = Self::unchecked(vectors, x, b, m, delta, c_impl)?;
        input.check()?;
        Ok(input)
    }

    /// Computes the derived constants and checks shapes only.
    pub fn unchecked(vectors: Vec<Vec<f64>>, x: Vec<f64>, b: f64, m: f64, delta: f64, c_impl: f64) -> Result<Self> {
        let s = vectors.len();
        if s == 0 {
            return Err(Error::InvalidArgument("no vectors".into()));
        }
        let n = x.len();
        if vectors.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidArgument("vectors and x have different dimensions".into()));
        }
        if vectors.iter().flatten().chain(&x).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoupling input".into()));
        }
        if !(delta > 0.0 && delta < 1.0) || !(b >= 0.0) || !(m >= 0.0) || !(c_impl > 0.0) {
            return Err(Error::InvalidArgument("need delta in (0,1), B >= 0, M >= 0, C > 0".into()));
        }
        let nf = n as f64;
        let sf = s as f64;
        let a = b * (nf / sf).sqrt() + m;
        let k1 = vectors.iter().map(|v| norm2(v)).fold(0.0, f64::max) / nf.sqrt();
        let mut worst = 0.0f64;
        for (k, xk) in vectors.iter().enumerate() {
            let total: f64 = vectors
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, xi)| dot(xi, xk).powi(2))
                .sum();
            worst = worst.max(total / sf);
        }
        let k2 = (worst / nf).powf(0.25);
        Ok(Self {
            vectors,
            x,
            b,
            m,
            delta,
            a,
            k1,
            k2,
            c_impl,
        })
    }

    pub fn s(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn delta_int(&self) -> f64 {
        self.delta / DELTA_SHRINK
    }

    /// Largest `C` for which the hypotheses on `B` and `M` hold.
    pub fn admissible_c(&self) -> f64 {
        let d = self.delta_int();
        let from_b = if self.k1 > 0.0 { self.b * d.powf(1.5) / self.k1 } else { f64::INFINITY };
        let from_m = if self.k2 > 0.0 {
            self.m * d.sqrt() * self.k1 / (self.k2 * self.k2)
        } else {
            f64::INFINITY
        };
        from_b.min(from_m)
    }

    /// All hypotheses, in the order a user would fix them.
    pub fn check(&self) -> Result<()> {
        if (norm2(&self.x) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("x must be a unit vector".into()));
        }
        let d = self.delta_int();
        let s = self.s() as f64;
        if s < 1.0 / d {
            return Err(Error::Degenerate(format!(
                "s = {} is below 1/delta_int = {:.1} (delta_int = delta/{DELTA_SHRINK}); \
                 the selector step cannot keep (1 - delta) s indices",
                self.s(),
                1.0 / d
            )));
        }
        for (i, v) in self.vectors.iter().enumerate() {
            let ip = dot(v, &self.x);
            if ip < self.a * (1.0 - MARGIN_HYP_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "<X_{i}, x> = {ip:.6e} is below a = B sqrt(n/s) + M = {:.6e}",
                    self.a
                )));
            }
        }
        let need_b = self.c_impl * d.powf(-1.5) * self.k1;
        if self.b < need_b {
            return Err(Error::InvalidArgument(format!(
                "B = {:.6e} is below C delta_int^(-3/2) K1 = {need_b:.6e} (C = {})",
                self.b, self.c_impl
            )));
        }
        if self.k1 > 0.0 {
            let need_m = self.c_impl * d.powf(-0.5) * self.k2 * self.k2 / self.k1;
            if self.m < need_m {
                return Err(Error::InvalidArgument(format!(
                    "M = {:.6e} is below C delta_int^(-1/2) K2^2 / K1 = {need_m:.6e} (C = {})",
                    self.m, self.c_impl
                )));
            }
        }
        Ok(())
    }
}

/// What happened in one selector draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptDiagnostics {
    pub attempt: usize,
    pub selected: usize,
    pub norm_y_bar: f64,
    /// `|y_bar|_2 <= 2 delta_int`.
    pub norm_control: bool,
    /// `|y_bar - delta_int x_bar|_2 <= 2 delta_int`.
    pub centered_norm_control: bool,
    pub subset_size: usize,
    pub cardinality_ok: bool,
    pub margin: f64,
    pub margin_ok: bool,
    pub verified: bool,
}

/// `I`, `y` and the data needed to replay the construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecouplingCertificate {
    #[serde(rename = "I")]
    pub subset: Vec<usize>,
    pub y: Vec<f64>,
    pub margin: f64,
    pub hull_weights: Vec<f64>,
    /// Indices with selector value 1 in the accepted draw.
    pub selector_draws: Vec<usize>,
    pub attempts: usize,
    pub attempt_log: Vec<AttemptDiagnostics>,
}

/// Outcome of [`verify_certificate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub failures: Vec<String>,
    pub margin: f64,
    pub span_residual: f64,
    pub norm_y: f64,
}

pub const SPAN_RESIDUAL_TOL: f64 = 1e-8;
pub const SPAN_RANK_TOL: f64 = 1e-10;

/// Re-checks every certificate property from raw data.
pub fn verify_certificate(cert: &DecouplingCertificate, input: &DecouplingInput) -> VerificationReport {
    let s = input.s();
    let mut failures = Vec::new();
    let mut seen = vec![false; s];
    for &i in &cert.subset {
        if i >= s {
            failures.push(format!("index {i} out of range"));
        } else if std::mem::replace(&mut seen[i], true) {
            failures.push(format!("index {i} repeated"));
        }
    }
    let need = (1.0 - input.delta) * s as f64;
    if (cert.subset.len() as f64) < need {
        failures.push(format!("cardinality: |I| = {} < (1 - delta) s = {need:.2}", cert.subset.len()));
    }
    let norm_y = norm2(&cert.y);
    if cert.y.len() != input.dim() {
        failures.push("y has the wrong dimension".into());
    } else if (norm_y - 1.0).abs() > 1e-9 {
        failures.push(format!("unit norm: |y|_2 = {norm_y:.12}"));
    }

    let complement: Vec<&[f64]> = (0..s).filter(|&i| !seen[i]).map(|i| input.vectors[i].as_slice()).collect();
    let residual = if cert.y.len() == input.dim() {
        let basis = orthonormal_basis(&complement, SPAN_RANK_TOL);
        span_residual(&cert.y, &basis)
    } else {
        f64::INFINITY
    };
    if !(residual <= SPAN_RESIDUAL_TOL * norm_y) {
        failures.push(format!("span: residual {residual:.3e} exceeds {SPAN_RESIDUAL_TOL:e} |y|"));
    }

    let margin = if cert.y.len() == input.dim() {
        cert.subset
            .iter()
            .filter(|&&i| i < s)
            .map(|&i| dot(&input.vectors[i], &cert.y))
            .fold(f64::INFINITY, f64::min)
    } else {
        f64::NEG_INFINITY
    };
    if !(margin >= input.a / 4.0) {
        failures.push(format!("margin: {margin:.6e} < a/4 = {:.6e}", input.a / 4.0));
    }
    if margin.is_finite() && (cert.margin - margin).abs() > 1e-12 * margin.abs().max(1.0) {
        failures.push(format!("recorded margin {:.6e} differs from {margin:.6e}", cert.margin));
    }
    if cert.hull_weights.len() != s
        || cert.hull_weights.iter().any(|w| !(*w >= 0.0))
        || cert.hull_weights.iter().sum::<f64>() > 1.0 + 1e-9
    {
        failures.push("hull weights must be s nonnegative numbers summing to at most 1".into());
    }
    VerificationReport {
        ok: failures.is_empty(),
        failures,
        margin,
        span_residual: residual,
        norm_y,
    }
}

/// Runs the construction, redrawing selectors until a certificate verifies.
/// Attempt `k` uses the `k`-th block of the selector stream.
pub fn decouple(input: &DecouplingInput, stream: StreamId, max_attempts: usize) -> Result<DecouplingCertificate> {
    input.check()?;
    if max_attempts == 0 {
        return Err(Error::InvalidArgument("max_attempts must be >= 1".into()));
    }
    let s = input.s();
    let n = input.dim();
    let a = input.a;
    let d = input.delta_int();
    let scaled: Vec<Vec<f64>> = input.vectors.iter().map(|v| v.iter().map(|c| c / a).collect()).collect();
    let sep = separating_direction(&scaled)?;
    let lambda = sep.lambda;
    let in_e: Vec<bool> = lambda.iter().map(|&l| l <= 1.0 / (d * s as f64)).collect();

    // the part of y_bar that does not depend on the selectors
    let mut fixed = vec![0.0; n];
    for i in (0..s).filter(|&i| !in_e[i]) {
        fixed.iter_mut().zip(&scaled[i]).for_each(|(f, v)| *f += d * lambda[i] * v);
    }

    let mut rng = stream.with_purpose(Purpose::Selector).rng();
    let mut log = Vec::with_capacity(max_attempts);
    for attempt in 1..=max_attempts {
        let chosen: Vec<bool> = (0..s).map(|i| in_e[i] && rng.random::<f64>() < d).collect();
        let mut y_bar = fixed.clone();
        for i in (0..s).filter(|&i| chosen[i]) {
            y_bar.iter_mut().zip(&scaled[i]).for_each(|(y, v)| *y += lambda[i] * v);
        }
        let norm_y_bar = norm2(&y_bar);
        let centered: Vec<f64> = y_bar.iter().zip(&sep.x_bar).map(|(y, x)| y - d * x).collect();
        let subset: Vec<usize> = (0..s)
            .filter(|&k| in_e[k] && !chosen[k] && dot(&scaled[k], &y_bar) >= d / 2.0)
            .collect();
        let mut diag = AttemptDiagnostics {
            attempt,
            selected: chosen.iter().filter(|c| **c).count(),
            norm_y_bar,
            norm_control: norm_y_bar <= 2.0 * d,
            centered_norm_control: norm2(&centered) <= 2.0 * d,
            subset_size: subset.len(),
            cardinality_ok: subset.len() as f64 >= (1.0 - input.delta) * s as f64,
            margin: f64::NAN,
            margin_ok: false,
            verified: false,
        };
        if norm_y_bar > 0.0 {
            let y: Vec<f64> = y_bar.iter().map(|v| v / norm_y_bar).collect();
            let margin = subset
                .iter()
                .map(|&i| dot(&input.vectors[i], &y))
                .fold(f64::INFINITY, f64::min);
            diag.margin = margin;
            diag.margin_ok = margin >= a / 4.0;
            let cert = DecouplingCertificate {
                subset,
                y,
                margin,
                hull_weights: lambda.clone(),
                selector_draws: (0..s).filter(|&i| chosen[i]).collect(),
                attempts: attempt,
                attempt_log: Vec::new(),
            };
            if verify_certificate(&cert, input).ok {
                diag.verified = true;
                log.push(diag);
                return Ok(DecouplingCertificate { attempt_log: log, ..cert });
            }
        }
        log.push(diag);
    }
    let summary = summarize_failures(&log);
    Err(Error::DecouplingFailed {
        attempts: max_attempts,
        summary,
    })
}

fn summarize_failures(log: &[AttemptDiagnostics]) -> String {
    let count = |f: fn(&AttemptDiagnostics) -> bool| log.iter().filter(|d| f(d)).count();
    format!(
        "norm control failed {}x, cardinality failed {}x, margin failed {}x, empty selection {}x",
        count(|d| !d.norm_control),
        count(|d| !d.cardinality_ok),
        count(|d| !d.margin_ok),
        count(|d| d.norm_y_bar == 0.0),
    )
}

/// Clustered ensemble: `X_i = a x + r_i` with `r_i` orthogonal to `x` and
/// `|r_i| <= rel_perturbation * a`; `a` is split as `B sqrt(n/s) = b_share a`
/// and `M = (1 - b_share) a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteredEnsemble {
    pub s: usize,
    pub n: usize,
    pub delta: f64,
    pub a: f64,
    pub rel_perturbation: f64,
    pub b_share: f64,
    pub c_impl: f64,
}

impl Default for ClusteredEnsemble {
    fn default() -> Self {
        Self {
            s: 200,
            n: 50,
            delta: 0.25,
            a: 1.0,
            rel_perturbation: 0.01,
            b_share: 0.5,
            c_impl: 0.008,
        }
    }
}

impl ClusteredEnsemble {
    pub fn generate(&self, stream: StreamId) -> Result<DecouplingInput> {
        if self.n < 2 || self.s == 0 {
            return Err(Error::InvalidArgument("need n >= 2 and s >= 1".into()));
        }
        if !(self.b_share > 0.0 && self.b_share < 1.0) {
            return Err(Error::InvalidArgument("b_share must lie in (0, 1)".into()));
        }
        let mut rng = stream.with_purpose(Purpose::Ensemble).rng();
        let x = linalg::random_unit(self.n, &mut rng);
        let vectors = (0..self.s)
            .map(|_| {
                let mut r = linalg::random_unit(self.n, &mut rng);
                let c = dot(&r, &x);
                r.iter_mut().zip(&x).for_each(|(ri, xi)| *ri -= c * xi);
                linalg::normalize(&mut r);
                let len = self.rel_perturbation * self.a * rng.random::<f64>();
                // a touch above a so rounding cannot break <X_i, x> >= a
                let along = self.a * (1.0 + 1e-9);
                x.iter().zip(&r).map(|(xi, ri)| along * xi + len * ri).collect()
            })
            .collect();
        let b = self.b_share * self.a * (self.s as f64 / self.n as f64).sqrt();
        let m = (1.0 - self.b_share) * self.a;
        DecouplingInput::with_c_impl(vectors, x, b, m, self.delta, self.c_impl)
    }
}

/// Success rate of [`decouple`] at one value of `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub c: f64,
    /// Inputs whose hypotheses hold at this `C`.
    pub admissible: usize,
    pub successes: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
    /// Smallest `C` whose success rate exceeds the target (0.8).
    pub smallest_c: Option<f64>,
    pub target_rate: f64,
}

/// For each `C` in `c_grid`, runs [`decouple`] on every generated input that
/// is admissible at `C` and records the success rate. Inputs vary the
/// perturbation size and the `B`/`M` split across `perturbations x shares`.
pub fn calibrate_c_impl(
    base: &ClusteredEnsemble,
    perturbations: &[f64],
    shares: &[f64],
    seeds: u64,
    c_grid: &[f64],
    max_attempts: usize,
    master_seed: u64,
) -> Result<CalibrationReport> {
    let target_rate = 0.8;
    struct Case {
        admissible_c: f64,
        success: bool,
    }
    let mut cases = Vec::new();
    for (pi, &rp) in perturbations.iter().enumerate() {
        for (si, &share) in shares.iter().enumerate() {
            for seed in 0..seeds {
                let ens = ClusteredEnsemble {
                    rel_perturbation: rp,
                    b_share: share,
                    c_impl: f64::MIN_POSITIVE,
                    ..base.clone()
                };
                let key = crate::stream::trial_key(&[pi as u64, si as u64, seed]);
                let stream = StreamId::new(master_seed, key, Purpose::Ensemble);
                let input = ens.generate(stream)?;
                let admissible_c = input.admissible_c();
                let success = decouple(&input, stream, max_attempts).is_ok();
                cases.push(Case { admissible_c, success });
            }
        }
    }
    let rows: Vec<CalibrationRow> = c_grid
        .iter()
        .map(|&c| {
            let adm: Vec<&Case> = cases.iter().filter(|k| k.admissible_c >= c).collect();
            let successes = adm.iter().filter(|k| k.success).count();
            CalibrationRow {
                c,
                admissible: adm.len(),
                successes,
                rate: if adm.is_empty() { f64::NAN } else { successes as f64 / adm.len() as f64 },
            }
        })
        .collect();
    let smallest_c = rows
        .iter()
        .filter(|r| r.rate > target_rate)
        .map(|r| r.c)
        .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.min(c))));
    Ok(CalibrationReport {
        rows,
        smallest_c,
        target_rate,
    })
}
