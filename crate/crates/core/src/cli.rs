//! The `marginals` command line: one subcommand per experiment, a sectioned
//! TOML config, outputs under `--out`.
//!
//! Every run writes `run.log`. It starts with the resolved config as TOML and
//! continues with log lines written as TOML comments, so the whole file
//! re-parses to the same config.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::decouple::{decouple, verify_certificate, ClusteredEnsemble};
use crate::dist::{sample_matrix, DistributionSpec, ModelParams, SampleMatrix};
use crate::estimate::{choose_b, deviation_decomposition_for_spec, deviation_sup, large_coeff_diag, SolverConfig};
use crate::harness::{emit_plot_data, persist_results, run_sweep, SweepConfig};
use crate::norms::{gram_offdiag_check, opnorm_l2_l2inf, opnorm_l2_lp, rearrangement_failure_rates, ScalarLaw};
use crate::stream::{Purpose, StreamId};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "marginals", version, about = "Uniform approximation of marginal moments, by simulation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML config file; missing sections take their defaults
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Master seed, overriding [run].seed
    #[arg(long, global = true, env = "MARGINALS_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores), overriding [run].threads
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Echo log lines to stderr
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// Print a single JSON summary object on stdout
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Use a sample CSV instead of drawing one from [dist]/[sample]
    #[arg(long, value_name = "CSV")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a sample matrix and write sample.csv
    Sample,
    /// Sup over the sphere of the empirical moment deviation
    Deviation(InputArgs),
    /// l2 -> lp or l2 -> weak-l2 operator norm of the sample matrix
    Opnorm(InputArgs),
    /// Decoupling certificate on a clustered ensemble
    Decouple,
    /// Search N(n, p, eps) over a dimension grid and fit the exponent
    Sweep,
    /// Failure frequency of the decreasing-rearrangement bound
    CheckRearrangement,
    /// Off-diagonal Gram bound constant
    CheckGram(InputArgs),
    /// Large coefficients at the deviation witness
    DiagnoseLarge(InputArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Deviation(_) => "deviation",
            Command::Opnorm(_) => "opnorm",
            Command::Decouple => "decouple",
            Command::Sweep => "sweep",
            Command::CheckRearrangement => "check-rearrangement",
            Command::CheckGram(_) => "check-gram",
            Command::DiagnoseLarge(_) => "diagnose-large",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, threads: 0 }
    }
}

/// Sample size and moment order for the single-sample subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    #[serde(rename = "N")]
    pub big_n: usize,
    pub p: f64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { big_n: 256, p: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpnormTarget {
    Lp,
    WeakL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpnormSection {
    pub target: OpnormTarget,
    pub p: f64,
}

impl Default for OpnormSection {
    fn default() -> Self {
        Self {
            target: OpnormTarget::Lp,
            p: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoupleSection {
    pub max_attempts: usize,
}

impl Default for DecoupleSection {
    fn default() -> Self {
        Self { max_attempts: 20 }
    }
}

/// Everything in [`SweepConfig`] except the law, solver and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n_grid: Vec<usize>,
    pub p: f64,
    pub q: Option<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub trials_per_point: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub resolution: f64,
    pub large_t: f64,
    pub record_timing: bool,
    pub envelope_samples: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_grid: vec![8, 16, 32, 64],
            p: 3.0,
            q: None,
            epsilon: 0.25,
            delta: 0.1,
            trials_per_point: 40,
            n_min: 64,
            n_max: 1 << 17,
            resolution: 0.25,
            large_t: 1.0,
            record_timing: false,
            envelope_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RearrangementSection {
    pub law: ScalarLaw,
    pub q: f64,
    #[serde(rename = "N")]
    pub big_n: Vec<usize>,
    pub t: Vec<f64>,
    pub trials: usize,
}

impl Default for RearrangementSection {
    fn default() -> Self {
        Self {
            law: ScalarLaw::SymmetricPareto { alpha: 10.0 },
            q: 8.0,
            big_n: vec![64, 128],
            t: vec![1.0, 2.0],
            trials: 100_000,
        }
    }
}

/// Bound parameters shared by check-gram and diagnose-large.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    /// Defaults to `4 p`.
    pub q: Option<f64>,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub t: f64,
    pub epsilon: f64,
    /// Reference rows for tail moments without a closed form.
    pub reference_draws: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            q: None,
            k: 1.0,
            l: 1.0,
            t: 1.0,
            epsilon: 0.25,
            reference_draws: 100_000,
        }
    }
}

fn default_spec() -> DistributionSpec {
    DistributionSpec::Gaussian { n: 8 }
}

/// The resolved configuration: file values over defaults, flags over both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default = "default_spec")]
    pub dist: DistributionSpec,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub opnorm: OpnormSection,
    #[serde(default)]
    pub ensemble: ClusteredEnsemble,
    #[serde(default)]
    pub decouple: DecoupleSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub rearrangement: RearrangementSection,
    #[serde(default)]
    pub bounds: BoundsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            dist: default_spec(),
            sample: SampleSection::default(),
            solver: SolverConfig::default(),
            opnorm: OpnormSection::default(),
            ensemble: ClusteredEnsemble::default(),
            decouple: DecoupleSection::default(),
            sweep: SweepSection::default(),
            rearrangement: RearrangementSection::default(),
            bounds: BoundsSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses config text; errors carry the line and field.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_named(text, "config")
    }

    fn parse_named(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("{source}: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let s = &self.sweep;
        SweepConfig {
            spec: self.dist.clone(),
            n_grid: s.n_grid.clone(),
            p: s.p,
            q: s.q,
            epsilon: s.epsilon,
            delta: s.delta,
            trials_per_point: s.trials_per_point,
            n_min: s.n_min,
            n_max: s.n_max,
            resolution: s.resolution,
            master_seed: self.run.seed,
            solver: self.solver.clone(),
            large_t: s.large_t,
            record_timing: s.record_timing,
            envelope_samples: s.envelope_samples,
        }
    }

    fn bounds_params(&self) -> ModelParams {
        let p = self.sample.p;
        ModelParams {
            q: self.bounds.q.unwrap_or(4.0 * p),
            k: self.bounds.k,
            l: self.bounds.l,
            ..ModelParams::new(p, self.bounds.epsilon, 0.1)
        }
    }

    /// Checks every section, so a bad value fails before any work starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        self.dist.validate()?;
        self.solver.validate()?;
        if self.sample.big_n == 0 {
            return bad("sample.N must be >= 1");
        }
        if !(self.sample.p >= 1.0) {
            return bad("sample.p must be >= 1");
        }
        if !(self.opnorm.p >= 1.0) {
            return bad("opnorm.p must be >= 1");
        }
        if self.decouple.max_attempts == 0 {
            return bad("decouple.max_attempts must be >= 1");
        }
        self.sweep_config().validate()?;
        let r = &self.rearrangement;
        if r.big_n.is_empty() || r.big_n.contains(&0) || r.trials == 0 {
            return bad("rearrangement needs nonempty N >= 1 and trials >= 1");
        }
        if r.t.is_empty() || r.t.iter().any(|t| !(*t >= 1.0)) {
            return bad("rearrangement.t values must be >= 1");
        }
        r.law.moment_bound(r.q)?;
        self.bounds_params().validate()?;
        if !(self.bounds.t >= 1.0) {
            return bad("bounds.t must be >= 1");
        }
        Ok(())
    }
}

/// Appends to run.log and optionally echoes to stderr.
struct RunLog {
    file: std::fs::File,
    verbose: bool,
}

impl RunLog {
    fn create(dir: &Path, config: &RunConfig, command: &str) -> Result<Self> {
        let mut file = std::fs::File::create(dir.join("run.log"))?;
        writeln!(file, "# marginals {} {command}", env!("CARGO_PKG_VERSION"))?;
        writeln!(file, "# resolved config")?;
        file.write_all(config.to_toml().as_bytes())?;
        writeln!(file, "\n# log")?;
        Ok(Self { file, verbose: false })
    }

    fn line(&mut self, msg: &str) {
        for l in msg.lines() {
            let _ = writeln!(self.file, "# {l}");
        }
        if self.verbose {
            eprintln!("{msg}");
        }
    }
}

/// Reads the resolved config back out of a run.log.
pub fn config_from_log(text: &str) -> Result<RunConfig> {
    RunConfig::parse(text)
}

/// Exit code for an error: 2 for bad input, 1 for runtime failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidSpec(_) | Error::InvalidArgument(_) | Error::Degenerate(_) => 2,
        _ => 1,
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
            RunConfig::parse_named(&text, &path.display().to_string())?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.run.seed = seed;
    }
    if let Some(threads) = global.threads {
        config.run.threads = threads;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = resolve_config(&cli.global)?;
    if config.run.threads > 0 {
        // fails only if a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.run.threads).build_global();
    }
    let out = &cli.global.out;
    std::fs::create_dir_all(out)?;
    let mut log = RunLog::create(out, &config, cli.command.name())?;
    log.verbose = cli.global.verbose;
    let summary = match &cli.command {
        Command::Sample => cmd_sample(&config, out, &mut log)?,
        Command::Deviation(i) => cmd_deviation(&config, i, out, &mut log)?,
        Command::Opnorm(i) => cmd_opnorm(&config, i, out, &mut log)?,
        Command::Decouple => cmd_decouple(&config, out, &mut log)?,
        Command::Sweep => cmd_sweep(&config, out, &mut log)?,
        Command::CheckRearrangement => cmd_rearrangement(&config, out, &mut log)?,
        Command::CheckGram(i) => cmd_gram(&config, i, out, &mut log)?,
        Command::DiagnoseLarge(i) => cmd_large(&config, i, out, &mut log)?,
    };
    log.line(&format!("summary {summary}"));
    if cli.global.json {
        println!("{summary}");
    } else {
        println!("{}", human_summary(&summary));
    }
    Ok(())
}

fn human_summary(v: &serde_json::Value) -> String {
    let mut s = String::new();
    if let Some(map) = v.as_object() {
        for (k, val) in map {
            let _ = writeln!(s, "{k}: {val}");
        }
    }
    s.trim_end().to_string()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_or_draw(config: &RunConfig, input: &InputArgs, log: &mut RunLog) -> Result<SampleMatrix> {
    match &input.input {
        Some(path) => {
            let s = SampleMatrix::read_csv(path)?;
            if s.dim() != config.dist.dim() {
                return Err(Error::InvalidArgument(format!(
                    "sample has dimension {}, [dist] has {}",
                    s.dim(),
                    config.dist.dim()
                )));
            }
            log.line(&format!("read {} rows from {}", s.n_samples(), path.display()));
            Ok(s)
        }
        None => {
            let stream = StreamId::new(config.run.seed, 0, Purpose::Sample);
            log.line(&format!("drawing N={} from {}", config.sample.big_n, config.dist));
            sample_matrix(&config.dist, config.sample.big_n, stream)
        }
    }
}

fn cmd_sample(config: &RunConfig, out: &Path, log: &mut RunLog) -> Result<serde_json::Value> {
    let s = load_or_draw(config, &InputArgs { input: None }, log)?;
    let path = out.join("sample.csv");
    s.write_csv(&path)?;
    Ok(json!({ "file": path, "N": s.n_samples(), "n": s.dim() }))
}

fn cmd_deviation(config: &RunConfig, input: &InputArgs, out: &Path, log: &mut RunLog) -> Result<serde_json::Value> {
    let s = load_or_draw(config, input, log)?;
    let r = deviation_sup(&s, &config.dist, config.sample.p, &config.solver)?;
    log.line(&format!("sup deviation {} ({:?})", r.sup_value, r.direction_of_gap));
    write_json(&out.join("deviation.json"), &r)?;
    Ok(json!({
        "sup_value": r.sup_value,
        "empirical": r.empirical,
        "truth": r.truth,
        "probe_max": r.probe_max,
        "oracle_value": r.oracle_value,
    }))
}

fn cmd_opnorm(config: &RunConfig, input: &InputArgs, out: &Path, log: &mut RunLog) -> Result<serde_json::Value> {
    let s = load_or_draw(config, input, log)?;
    let r = match config.opnorm.target {
        OpnormTarget::Lp => opnorm_l2_lp(&s, config.opnorm.p, &config.solver)?,
        OpnormTarget::WeakL2 => opnorm_l2_l2inf(&s, &config.solver)?,
    };
    log.line(&format!("operator norm {}", r.value));
    write_json(&out.join("opnorm.json"), &r)?;
    let envelope = (s.dim() as f64).sqrt() + (s.n_samples() as f64).powf(1.0 / config.opnorm.p);
    Ok(json!({
        "value": r.value,
        "fitted_C": r.value / envelope,
        "oracle_value": r.oracle_value,
        "oracle_upper": r.oracle_upper,
        "sandwich": r.sandwich,
    }))
}

fn cmd_decouple(config: &RunConfig, out: &Path, log: &mut RunLog) -> Result<serde_json::Value> {
    let stream = StreamId::new(config.run.seed, 0, Purpose::Ensemble);
    let input = config.ensemble.generate(stream)?;
    log.line(&format!(
        "s={} n={} delta_int={} admissible C={}",
        input.s(),
        input.dim(),
        input.delta_int(),
        input.admissible_c()
    ));
    let cert = decouple(&input, stream, config.decouple.max_attempts)?;
    let report = verify_certificate(&cert, &input);
    log.line(&format!("attempts {} |I|={} margin={}", cert.attempts, cert.subset.len(), cert.margin));
    write_json(&out.join("certificate.json"), &cert)?;
    write_json(&out.join("verification.json"), &report)?;
    if !report.ok {
        return Err(Error::DecouplingFailed {
            attempts: cert.attempts,
            summary: report.failures.join("; "),
        });
    }
    Ok(json!({
        "attempts": cert.attempts,
        "subset_size": cert.subset.len(),
        "margin": cert.margin,
        "span_residual": report.span_residual,
        "verified": report.ok,
    }))
}

fn cmd_sweep(config: &RunConfig, out: &Path, log: &mut RunLog) -> Result<serde_json::Value> {
    let sweep = config.sweep_config();
    let result = run_sweep(&sweep, &mut |m| log.line(m))?;
    let manifest = persist_results(&result, out)?;
    emit_plot_data(&result, out)?;
    Ok(json!({
        "N_epsilon": result.summary.iter().map(|r| json!({"n": r.n, "N_epsilon": r.n_epsilon})).collect::<Vec<_>>(),
        "slope": result.slope,
        "config_hash": manifest.config_hash,
    }))
}

fn cmd_rearrangement(config: &RunConfig, out: &Path, log: &mut RunLog) -> Result<serde_json::Value> {
    let r = &config.rearrangement;
    let mut rows = Vec::new();
    for &big_n in &r.big_n {
        let stream = StreamId::new(config.run.seed, big_n as u64, Purpose::Sample);
        for rate in rearrangement_failure_rates(r.law, big_n, r.q, &r.t, r.trials, stream)? {
            log.line(&format!("N={big_n} t={} failures={}/{}", rate.t, rate.failures, rate.trials));
            rows.push(json!({ "N": big_n, "rate": rate }));
        }
    }
    write_json(&out.join("rearrangement.json"), &rows)?;
    Ok(json!({ "rows": rows }))
}

fn cmd_gram(config: &RunConfig, input: &InputArgs, out: &Path, log: &mut RunLog) -> Result<serde_json::Value> {
    let s = load_or_draw(config, input, log)?;
    let g = gram_offdiag_check(&s, &config.bounds_params(), config.bounds.t)?;
    log.line(&format!("min feasible C_q {} at {:?}", g.min_feasible_cq, g.worst));
    write_json(&out.join("gram.json"), &g)?;
    Ok(json!({ "min_feasible_cq": g.min_feasible_cq, "worst": g.worst }))
}

fn cmd_large(config: &RunConfig, input: &InputArgs, out: &Path, log: &mut RunLog) -> Result<serde_json::Value> {
    let s = load_or_draw(config, input, log)?;
    let params = config.bounds_params();
    let dev = deviation_sup(&s, &config.dist, params.p, &config.solver)?;
    let b = choose_b(params.epsilon, s.n_samples(), s.dim(), params.q, config.bounds.t)?;
    let diag = large_coeff_diag(&s, &dev.witness_x, b)?;
    log.line(&format!("B={b} |E_B|={} weak-l2={}", diag.size, diag.weak_l2_of_large));
    let decomposition = deviation_decomposition_for_spec(
        &s,
        &config.dist,
        params.p,
        b,
        config.bounds.t,
        std::slice::from_ref(&dev.witness_x),
        config.bounds.reference_draws,
        StreamId::new(config.run.seed, 0, Purpose::Oracle),
    )?;
    write_json(&out.join("large.json"), &json!({ "diag": diag, "decomposition": decomposition }))?;
    Ok(json!({
        "B": b,
        "size": diag.size,
        "weak_l2_of_large": diag.weak_l2_of_large,
        "decomposition_holds": decomposition.all_hold,
    }))
}
