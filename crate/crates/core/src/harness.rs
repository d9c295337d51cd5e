//! Reproducible Monte Carlo runs: trials, success probabilities, the search
//! for `N(n, p, eps)`, slope fits and on-disk results.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::{sample_matrix, DistributionSpec};
use crate::estimate::{choose_b, deviation_sup, large_coeff_diag, SolverConfig};
use crate::norms::{check_norm_theorem, NormTheoremRow, SubsetMode};
use crate::stream::{trial_key, Purpose, StreamId};
use crate::{Error, Result};

/// z-quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// One experiment over a grid of dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Law template; its dimension is replaced by each `n` of the grid.
    pub spec: DistributionSpec,
    pub n_grid: Vec<usize>,
    pub p: f64,
    #[serde(default)]
    pub q: Option<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub trials_per_point: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Relative resolution of the bisection on `N`.
    #[serde(default = "default_resolution")]
    pub resolution: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    /// `t` in the large-coefficient threshold `B = t (eps N/n)^{2/(q-4)}`.
    #[serde(default = "default_t")]
    pub large_t: f64,
    /// Fill `wall_ms` in trials.csv (makes tables run-dependent).
    #[serde(default)]
    pub record_timing: bool,
    /// When positive, one sample of this size per `n` is checked against the
    /// subset-sum envelope.
    #[serde(default)]
    pub envelope_samples: usize,
}

fn default_resolution() -> f64 {
    0.25
}

fn default_t() -> f64 {
    1.0
}

impl SweepConfig {
    pub fn q(&self) -> f64 {
        self.q.unwrap_or(4.0 * self.p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly increasing".into());
        }
        if self.trials_per_point < 20 {
            return bad("trials_per_point must be >= 20".into());
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad("need 1 <= n_min <= n_max".into());
        }
        if allowed_failures(self.trials_per_point, 1.0 - self.delta).is_none() {
            return bad(format!(
                "{} trials cannot certify success probability {}",
                self.trials_per_point,
                1.0 - self.delta
            ));
        }
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive".into());
        }
        if !(self.p > 2.0) || !(self.q() > 4.0) {
            return bad("need p > 2 and q > 4".into());
        }
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("need epsilon > 0 and delta in (0, 1)".into());
        }
        if !(self.large_t >= 1.0) {
            return bad("large_t must be >= 1".into());
        }
        self.solver.validate()?;
        for &n in &self.n_grid {
            self.spec.with_dim(n)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// One `(sample, deviation)` evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub trial_id: u64,
    pub deviation: f64,
    /// Largest deviation over the fixed probe set alone.
    pub probe_deviation: f64,
    pub wall_ms: u64,
    /// `|E_B|` at the witness.
    pub large_count: usize,
}

fn trial_stream(master_seed: u64, n: usize, big_n: usize, trial: u64) -> StreamId {
    StreamId::new(master_seed, trial_key(&[n as u64, big_n as u64, trial]), Purpose::Sample)
}

fn run_one(config: &SweepConfig, spec: &DistributionSpec, n: usize, big_n: usize, trial: u64) -> Result<TrialRecord> {
    let started = Instant::now();
    let stream = trial_stream(config.master_seed, n, big_n, trial);
    let solver = SolverConfig {
        seed: stream.trial,
        ..config.solver.clone()
    };
    let body = || -> Result<TrialRecord> {
        let sample = sample_matrix(spec, big_n, stream)?;
        let dev = deviation_sup(&sample, spec, config.p, &solver)?;
        let b = choose_b(config.epsilon, big_n, n, config.q(), config.large_t)?;
        let large = large_coeff_diag(&sample, &dev.witness_x, b)?;
        Ok(TrialRecord {
            n,
            big_n,
            trial_id: trial,
            deviation: dev.sup_value,
            probe_deviation: dev.probe_max,
            wall_ms: if config.record_timing { started.elapsed().as_millis() as u64 } else { 0 },
            large_count: large.size,
        })
    };
    body().map_err(|e| Error::Trial {
        trial,
        source: Box::new(e),
    })
}

/// `trials_per_point` evaluations at `(n, N)`, ordered by trial id.
pub fn run_trials(config: &SweepConfig, n: usize, big_n: usize) -> Result<Vec<TrialRecord>> {
    run_trial_range(config, n, big_n, 0..config.trials_per_point as u64, true)
}

/// [`run_trials`] on one thread; identical output.
pub fn run_trials_serial(config: &SweepConfig, n: usize, big_n: usize) -> Result<Vec<TrialRecord>> {
    run_trial_range(config, n, big_n, 0..config.trials_per_point as u64, false)
}

fn run_trial_range(
    config: &SweepConfig,
    n: usize,
    big_n: usize,
    ids: std::ops::Range<u64>,
    parallel: bool,
) -> Result<Vec<TrialRecord>> {
    let spec = config.spec.with_dim(n)?;
    if parallel {
        ids.into_par_iter().map(|t| run_one(config, &spec, n, big_n, t)).collect()
    } else {
        ids.map(|t| run_one(config, &spec, n, big_n, t)).collect()
    }
}

/// Fraction of deviations at most `epsilon`, with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessEstimate {
    pub fraction: f64,
    pub successes: usize,
    pub trials: usize,
    pub ci: (f64, f64),
}

pub fn success_probability(deviations: &[f64], epsilon: f64) -> Result<SuccessEstimate> {
    if deviations.is_empty() {
        return Err(Error::InvalidArgument("no deviations".into()));
    }
    let successes = deviations.iter().filter(|d| **d <= epsilon).count();
    Ok(SuccessEstimate {
        fraction: successes as f64 / deviations.len() as f64,
        successes,
        trials: deviations.len(),
        ci: wilson_interval(successes, deviations.len(), Z95),
    })
}

/// One probed sample size in the search for `N_epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub trials: usize,
    pub successes: usize,
    pub fraction: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub success: bool,
    /// Stopped once the Wilson bound could no longer be reached.
    pub stopped_early: bool,
}

/// Result of [`find_n_epsilon`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSearch {
    pub n: usize,
    /// `None` when even `n_max` fails ("exceeds range").
    pub n_epsilon: Option<usize>,
    pub trace: Vec<ProbeRecord>,
    pub records: Vec<TrialRecord>,
}

impl NSearch {
    pub fn exceeds_range(&self) -> bool {
        self.n_epsilon.is_none()
    }
}

/// Most failures out of `trials` that still keep the Wilson lower bound at
/// or above `target`; `None` when even zero failures fall short.
pub fn allowed_failures(trials: usize, target: f64) -> Option<usize> {
    let mut allowed = None;
    for f in 0..=trials {
        if wilson_interval(trials - f, trials, Z95).0 >= target {
            allowed = Some(f);
        } else {
            break;
        }
    }
    allowed
}

/// Trials are evaluated in blocks of this many; a probe stops after the
/// first block that makes success impossible.
const PROBE_BLOCK: u64 = 8;

fn probe(config: &SweepConfig, n: usize, big_n: usize) -> Result<(ProbeRecord, Vec<TrialRecord>)> {
    let total = config.trials_per_point as u64;
    let allowed = allowed_failures(config.trials_per_point, 1.0 - config.delta);
    let mut records = Vec::new();
    let mut failures = 0usize;
    let mut next = 0;
    let mut stopped_early = false;
    while next < total {
        let end = (next + PROBE_BLOCK).min(total);
        let block = run_trial_range(config, n, big_n, next..end, true)?;
        failures += block.iter().filter(|r| !(r.deviation <= config.epsilon)).count();
        records.extend(block);
        next = end;
        if allowed.is_none_or(|a| failures > a) && next < total {
            stopped_early = true;
            break;
        }
    }
    let devs: Vec<f64> = records.iter().map(|r| r.deviation).collect();
    let est = success_probability(&devs, config.epsilon)?;
    let success = !stopped_early && est.ci.0 >= 1.0 - config.delta;
    Ok((
        ProbeRecord {
            n,
            big_n,
            trials: est.trials,
            successes: est.successes,
            fraction: est.fraction,
            ci_lo: est.ci.0,
            ci_hi: est.ci.1,
            success,
            stopped_early,
        },
        records,
    ))
}

/// Smallest probed `N` whose Wilson lower bound reaches `1 - delta`:
/// doubling from `n_min`, then geometric bisection to `resolution`.
pub fn find_n_epsilon(config: &SweepConfig, n: usize) -> Result<NSearch> {
    config.validate()?;
    let mut trace = Vec::new();
    let mut records = Vec::new();
    let mut run = |big_n: usize, trace: &mut Vec<ProbeRecord>| -> Result<bool> {
        let (rec, recs) = probe(config, n, big_n)?;
        let ok = rec.success;
        trace.push(rec);
        records.extend(recs);
        Ok(ok)
    };
    let mut hi = None;
    let mut lo = None;
    let mut big_n = config.n_min;
    loop {
        if run(big_n, &mut trace)? {
            hi = Some(big_n);
            break;
        }
        lo = Some(big_n);
        if big_n >= config.n_max {
            break;
        }
        big_n = (big_n * 2).min(config.n_max);
    }
    if let (Some(mut l), Some(mut h)) = (lo, hi) {
        while (h as f64) > (l as f64) * (1.0 + config.resolution) {
            let mid = ((l as f64) * (h as f64)).sqrt().round() as usize;
            if mid <= l || mid >= h {
                break;
            }
            if run(mid, &mut trace)? {
                h = mid;
            } else {
                l = mid;
            }
        }
        hi = Some(h);
    }
    Ok(NSearch {
        n,
        n_epsilon: hi,
        trace,
        records,
    })
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument("slope fit needs at least 3 points".into()));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0) || !(*y > 0.0)) {
        return Err(Error::InvalidArgument("slope fit needs positive points".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = points.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-300 {
        return Err(Error::Degenerate("all x values are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = if points.len() > 2 { (rss / (m - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        points: points.len(),
    })
}

/// Per-`n` row of summary.csv: statistics at `N_epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    #[serde(rename = "N_epsilon")]
    pub n_epsilon: Option<usize>,
    pub success_fraction: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Subset-sum envelope row tagged with its dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub n: usize,
    pub s: usize,
    pub max_norm: f64,
    pub envelope: f64,
    pub ratio: f64,
    pub exact_flag: bool,
}

impl EnvelopeRow {
    fn new(n: usize, row: NormTheoremRow) -> Self {
        Self {
            n,
            s: row.s,
            max_norm: row.max_norm,
            envelope: row.envelope,
            ratio: row.ratio,
            exact_flag: row.exact_flag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SweepConfig,
    pub config_hash: String,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub slope: Option<SlopeFit>,
    pub files: BTreeMap<String, FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub records: Vec<TrialRecord>,
    pub probes: Vec<ProbeRecord>,
    pub summary: Vec<SummaryRow>,
    pub envelopes: Vec<EnvelopeRow>,
    pub slope: Option<SlopeFit>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl SweepResult {
    /// A result with no rows, e.g. for a dry run.
    pub fn empty(config: SweepConfig) -> Self {
        Self {
            config,
            records: Vec::new(),
            probes: Vec::new(),
            summary: Vec::new(),
            envelopes: Vec::new(),
            slope: None,
            started_unix: 0,
            finished_unix: 0,
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Runs [`find_n_epsilon`] for every `n` and fits the log-log slope.
pub fn run_sweep(config: &SweepConfig, progress: &mut dyn FnMut(&str)) -> Result<SweepResult> {
    config.validate()?;
    let started_unix = unix_now();
    let mut result = SweepResult::empty(config.clone());
    result.started_unix = started_unix;
    for &n in &config.n_grid {
        let search = find_n_epsilon(config, n)?;
        for p in &search.trace {
            progress(&format!(
                "n={n} N={} successes={}/{} ci=[{:.3},{:.3}] {}",
                p.big_n,
                p.successes,
                p.trials,
                p.ci_lo,
                p.ci_hi,
                if p.success { "ok" } else { "fail" }
            ));
        }
        let at = search
            .n_epsilon
            .and_then(|ne| search.trace.iter().find(|p| p.big_n == ne));
        result.summary.push(SummaryRow {
            n,
            n_epsilon: search.n_epsilon,
            success_fraction: at.map_or(f64::NAN, |p| p.fraction),
            ci_lo: at.map_or(f64::NAN, |p| p.ci_lo),
            ci_hi: at.map_or(f64::NAN, |p| p.ci_hi),
        });
        result.probes.extend(search.trace);
        result.records.extend(search.records);
        if config.envelope_samples > 0 {
            let spec = config.spec.with_dim(n)?;
            let stream = StreamId::new(config.master_seed, trial_key(&[n as u64, u64::MAX]), Purpose::Sample);
            let sample = sample_matrix(&spec, config.envelope_samples, stream)?;
            let params = crate::dist::ModelParams {
                q: config.q(),
                ..crate::dist::ModelParams::new(config.p, 0.5, config.delta)
            };
            let report = check_norm_theorem(&sample, &params, config.large_t, SubsetMode::Auto)?;
            result.envelopes.extend(report.rows.into_iter().map(|row| EnvelopeRow::new(n, row)));
        }
    }
    let pts: Vec<(f64, f64)> = result
        .summary
        .iter()
        .filter_map(|r| r.n_epsilon.map(|ne| (r.n as f64, ne as f64)))
        .collect();
    if pts.len() >= 3 {
        result.slope = Some(fit_loglog_slope(&pts)?);
    }
    result.finished_unix = unix_now();
    Ok(result)
}

const TABLES: [&str; 4] = ["trials.csv", "summary.csv", "probes.csv", "envelope.csv"];

fn write_table<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<usize> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows.len())
}

fn read_table<T: serde::de::DeserializeOwned>(path: &Path) -> std::result::Result<Vec<T>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(|e| e.to_string())
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Writes trials.csv, summary.csv, probes.csv, envelope.csv and
/// manifest.json under `dir`.
pub fn persist_results(result: &SweepResult, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    let counts = [
        write_table(
            &dir.join("trials.csv"),
            &["n", "N", "trial_id", "deviation", "probe_deviation", "wall_ms", "large_count"],
            &result.records,
        )?,
        write_table(
            &dir.join("summary.csv"),
            &["n", "N_epsilon", "success_fraction", "ci_lo", "ci_hi"],
            &result.summary,
        )?,
        write_table(
            &dir.join("probes.csv"),
            &["n", "N", "trials", "successes", "fraction", "ci_lo", "ci_hi", "success", "stopped_early"],
            &result.probes,
        )?,
        write_table(
            &dir.join("envelope.csv"),
            &["n", "s", "max_norm", "envelope", "ratio", "exact_flag"],
            &result.envelopes,
        )?,
    ];
    for (name, rows) in TABLES.iter().zip(counts) {
        files.insert(
            name.to_string(),
            FileEntry {
                sha256: file_sha256(&dir.join(name))?,
                rows,
            },
        );
    }
    let manifest = Manifest {
        config: result.config.clone(),
        config_hash: result.config.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: result.started_unix,
        finished_unix: result.finished_unix,
        slope: result.slope,
        files,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a results directory back, checking the config hash, every file's
/// digest and row count. All problems are reported together.
pub fn load_results(dir: &Path) -> Result<SweepResult> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Corrupt(vec![format!("manifest.json: {e}")]))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(vec![format!("manifest.json: {e}")]))?;
    let mut problems = Vec::new();
    if manifest.config.hash() != manifest.config_hash {
        problems.push("manifest.json: config hash mismatch".to_string());
    }
    for name in TABLES {
        let path = dir.join(name);
        let Some(entry) = manifest.files.get(name) else {
            problems.push(format!("{name}: not listed in manifest"));
            continue;
        };
        match file_sha256(&path) {
            Err(e) => {
                problems.push(format!("{name}: {e}"));
                continue;
            }
            Ok(h) if h != entry.sha256 => problems.push(format!("{name}: hash check failed")),
            Ok(_) => {}
        }
        let rows = match name {
            "trials.csv" => read_table::<TrialRecord>(&path).map(|v| v.len()),
            "summary.csv" => read_table::<SummaryRow>(&path).map(|v| v.len()),
            "probes.csv" => read_table::<ProbeRecord>(&path).map(|v| v.len()),
            _ => read_table::<EnvelopeRow>(&path).map(|v| v.len()),
        };
        match rows {
            Ok(r) if r != entry.rows => {
                problems.push(format!("{name}: row-count check failed ({r} rows, manifest says {})", entry.rows))
            }
            Err(e) => problems.push(format!("{name}: unreadable: {e}")),
            Ok(_) => {}
        }
    }
    if !problems.is_empty() {
        return Err(Error::Corrupt(problems));
    }
    let bad = |name: &str, e: String| Error::Corrupt(vec![format!("{name}: {e}")]);
    Ok(SweepResult {
        config: manifest.config,
        records: read_table(&dir.join("trials.csv")).map_err(|e| bad("trials.csv", e))?,
        summary: read_table(&dir.join("summary.csv")).map_err(|e| bad("summary.csv", e))?,
        probes: read_table(&dir.join("probes.csv")).map_err(|e| bad("probes.csv", e))?,
        envelopes: read_table(&dir.join("envelope.csv")).map_err(|e| bad("envelope.csv", e))?,
        slope: manifest.slope,
        started_unix: manifest.started_unix,
        finished_unix: manifest.finished_unix,
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median of a slice (NaN when empty).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Whitespace-separated files under `dir/plots`: `complexity.dat`,
/// `deviation_n{n}.dat` per grid dimension and `envelope.dat`.
pub fn emit_plot_data(result: &SweepResult, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    use std::fmt::Write as _;
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let mut written = Vec::new();

    let mut text = String::from("# n N_epsilon ln_n ln_N_epsilon\n");
    for r in &result.summary {
        if let Some(ne) = r.n_epsilon {
            writeln!(text, "{} {} {} {}", r.n, ne, (r.n as f64).ln(), (ne as f64).ln()).unwrap();
        }
    }
    let path = plots.join("complexity.dat");
    std::fs::write(&path, text)?;
    written.push(path);

    for &n in &result.config.n_grid {
        let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in result.records.iter().filter(|r| r.n == n) {
            by_n.entry(r.big_n).or_default().push(r.deviation);
        }
        let mut text = String::from("# N trials median mean q90 success_fraction\n");
        for (big_n, mut devs) in by_n {
            devs.sort_by(f64::total_cmp);
            let mean = devs.iter().sum::<f64>() / devs.len() as f64;
            let ok = devs.iter().filter(|d| **d <= result.config.epsilon).count() as f64 / devs.len() as f64;
            writeln!(
                text,
                "{big_n} {} {} {mean} {} {ok}",
                devs.len(),
                quantile(&devs, 0.5),
                quantile(&devs, 0.9)
            )
            .unwrap();
        }
        let path = plots.join(format!("deviation_n{n}.dat"));
        std::fs::write(&path, text)?;
        written.push(path);
    }

    let mut text = String::from("# n s max_norm envelope ratio exact\n");
    for e in &result.envelopes {
        writeln!(
            text,
            "{} {} {} {} {} {}",
            e.n,
            e.s,
            e.max_norm,
            e.envelope,
            e.ratio,
            u8::from(e.exact_flag)
        )
        .unwrap();
    }
    let path = plots.join("envelope.dat");
    std::fs::write(&path, text)?;
    written.push(path);
    Ok(written)
}
