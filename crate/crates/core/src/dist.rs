//! Random vectors on `R^n`, their sample matrices, and moment oracles.
//!
//! Every law here is isotropic or deterministic. Laws with a closed-form
//! marginal moment expose it through [`ExactOracle`]; the others are handled
//! by a [`SampleOracle`] built on a large independent reference sample.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, dot, norm2};
use crate::special::{normal_abs_moment, normal_abs_tail_moment, pow_abs, NormalizedPareto};
use crate::stream::{Purpose, StreamId, StreamRng};
use crate::{Error, Result};

/// z-quantile for a two-sided 99% interval.
pub const Z99: f64 = 2.575_829_303_548_900_4;

/// Model constants: moment order `p`, assumption order `q`, norm bound `K`
/// (in units of `sqrt(n)`), marginal moment bound `L`, accuracy and failure
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub p: f64,
    pub q: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl ModelParams {
    /// `q = 4p`, `K = L = 1`.
    pub fn new(p: f64, epsilon: f64, delta: f64) -> Self {
        Self {
            p,
            q: 4.0 * p,
            k: 1.0,
            l: 1.0,
            epsilon,
            delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.p > 2.0) {
            return bad("p must exceed 2");
        }
        if !(self.q > 4.0) {
            return bad("q must exceed 4");
        }
        if !(self.k > 0.0 && self.l > 0.0) {
            return bad("K and L must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        Ok(())
    }

    /// Whether `q >= 4p`, the order needed by the main approximation result.
    pub fn main_hypotheses_claimed(&self) -> bool {
        self.q >= 4.0 * self.p
    }
}

/// A random-vector law on `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRecord", into = "SpecRecord")]
pub enum DistributionSpec {
    /// Standard normal vector.
    Gaussian { n: usize },
    /// Uniform over `{sqrt(n) e_1, ..., sqrt(n) e_n}`.
    Orthobasis { n: usize },
    /// Independent symmetrized normalized Pareto coordinates.
    IidPowerlaw { n: usize, tail_exponent: f64 },
    /// Standard normal vector times an independent normalized Pareto scalar.
    MultidimPareto { n: usize, tail_exponent: f64 },
    /// Point mass at a fixed vector.
    Constant { vector: Vec<f64> },
    /// `X 1{|X|_2 <= K sqrt(n)}` for `X` drawn from `inner`.
    Truncated {
        inner: Box<DistributionSpec>,
        threshold_k: f64,
    },
}

/// Whether a multidimensional Pareto law should satisfy or violate the
/// `q`-th moment assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParetoMode {
    Compliant,
    Violating,
}

impl DistributionSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::Orthobasis { .. } => "orthobasis",
            Self::IidPowerlaw { .. } => "iid_powerlaw",
            Self::MultidimPareto { .. } => "multidim_pareto",
            Self::Constant { .. } => "constant",
            Self::Truncated { .. } => "truncated",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { n }
            | Self::Orthobasis { n }
            | Self::IidPowerlaw { n, .. }
            | Self::MultidimPareto { n, .. } => *n,
            Self::Constant { vector } => vector.len(),
            Self::Truncated { inner, .. } => inner.dim(),
        }
    }

    /// Multidimensional Pareto whose tail exponent is checked against `q`:
    /// strictly above it for [`ParetoMode::Compliant`], at most `q` otherwise.
    pub fn multidim_pareto(n: usize, tail_exponent: f64, q: f64, mode: ParetoMode) -> Result<Self> {
        let ok = match mode {
            ParetoMode::Compliant => tail_exponent > q,
            ParetoMode::Violating => tail_exponent <= q,
        };
        if !ok {
            return Err(Error::InvalidSpec(format!(
                "tail exponent {tail_exponent} does not fit {mode:?} mode for q = {q}"
            )));
        }
        let spec = Self::MultidimPareto { n, tail_exponent };
        spec.validate()?;
        Ok(spec)
    }

    /// The same family in dimension `n`. Constant laws cannot be resized.
    pub fn with_dim(&self, n: usize) -> Result<Self> {
        let spec = match self {
            Self::Gaussian { .. } => Self::Gaussian { n },
            Self::Orthobasis { .. } => Self::Orthobasis { n },
            Self::IidPowerlaw { tail_exponent, .. } => Self::IidPowerlaw {
                n,
                tail_exponent: *tail_exponent,
            },
            Self::MultidimPareto { tail_exponent, .. } => Self::MultidimPareto {
                n,
                tail_exponent: *tail_exponent,
            },
            Self::Constant { vector } if vector.len() == n => self.clone(),
            Self::Constant { .. } => {
                return Err(Error::InvalidSpec("constant law has a fixed dimension".into()))
            }
            Self::Truncated { inner, threshold_k } => Self::Truncated {
                inner: Box::new(inner.with_dim(n)?),
                threshold_k: *threshold_k,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        match self {
            Self::Gaussian { n } | Self::Orthobasis { n } if *n == 0 => bad("n must be >= 1".into()),
            Self::IidPowerlaw { n, tail_exponent } | Self::MultidimPareto { n, tail_exponent } => {
                if *n == 0 {
                    bad("n must be >= 1".into())
                } else if !(*tail_exponent > 2.0) || !tail_exponent.is_finite() {
                    bad(format!(
                        "tail_exponent must be a finite number > 2 (got {tail_exponent}); \
                         unit variance needs a finite second moment"
                    ))
                } else {
                    Ok(())
                }
            }
            Self::Constant { vector } => {
                if vector.is_empty() {
                    bad("constant vector must be nonempty".into())
                } else if vector.iter().any(|v| !v.is_finite()) {
                    bad("constant vector must be finite".into())
                } else {
                    Ok(())
                }
            }
            Self::Truncated { inner, threshold_k } => {
                if matches!(**inner, Self::Truncated { .. }) {
                    bad("nested truncation is not supported".into())
                } else if !(*threshold_k > 0.0) {
                    bad("threshold_k must be positive".into())
                } else {
                    inner.validate()
                }
            }
            _ => Ok(()),
        }
    }

    fn pareto(&self) -> Option<NormalizedPareto> {
        match self {
            Self::IidPowerlaw { tail_exponent, .. } | Self::MultidimPareto { tail_exponent, .. } => {
                NormalizedPareto::new(*tail_exponent)
            }
            _ => None,
        }
    }

    /// Draws one vector into `out` (length `dim()`).
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Self::Gaussian { .. } => out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
            Self::Orthobasis { n } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let j = rng.random_range(0..*n);
                out[j] = (*n as f64).sqrt();
            }
            Self::IidPowerlaw { .. } => {
                let law = self.pareto().expect("validated");
                for v in out.iter_mut() {
                    *v = draw_pareto(&law, rng);
                }
            }
            Self::MultidimPareto { .. } => {
                let law = self.pareto().expect("validated");
                let scale = draw_pareto(&law, rng);
                out.iter_mut()
                    .for_each(|v| *v = scale * rng.sample::<f64, _>(StandardNormal));
            }
            Self::Constant { vector } => out.copy_from_slice(vector),
            Self::Truncated { inner, threshold_k } => {
                inner.draw_into(rng, out);
                let bound = threshold_k * (out.len() as f64).sqrt();
                if norm2(out) > bound {
                    out.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
    }

    /// Flat `key = value` text block.
    pub fn to_kv(&self) -> String {
        toml::to_string(&SpecRecord::from(self.clone())).expect("flat record serializes")
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::IidPowerlaw { n, tail_exponent } | Self::MultidimPareto { n, tail_exponent } => {
                write!(f, "{}(n={n}, tail={tail_exponent})", self.kind())
            }
            Self::Truncated { inner, threshold_k } => write!(f, "truncated({inner}, K={threshold_k})"),
            _ => write!(f, "{}(n={})", self.kind(), self.dim()),
        }
    }
}

#[inline]
fn draw_pareto<R: Rng + ?Sized>(law: &NormalizedPareto, rng: &mut R) -> f64 {
    // 1 - U lies in (0, 1]
    let u = 1.0 - rng.random::<f64>();
    law.from_uniform(u, rng.random::<bool>())
}

/// Flat on-disk form of [`DistributionSpec`]. A truncated law stores its inner
/// kind in `inner` and shares the remaining fields with it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecRecord {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_k: Option<f64>,
}

impl From<DistributionSpec> for SpecRecord {
    fn from(spec: DistributionSpec) -> Self {
        match spec {
            DistributionSpec::Gaussian { n } | DistributionSpec::Orthobasis { n } => SpecRecord {
                kind: spec.kind().into(),
                n: Some(n),
                ..Default::default()
            },
            DistributionSpec::IidPowerlaw { n, tail_exponent }
            | DistributionSpec::MultidimPareto { n, tail_exponent } => SpecRecord {
                kind: spec.kind().into(),
                n: Some(n),
                tail_exponent: Some(tail_exponent),
                ..Default::default()
            },
            DistributionSpec::Constant { ref vector } => SpecRecord {
                kind: spec.kind().into(),
                n: Some(vector.len()),
                fixed_vector: Some(vector.clone()),
                ..Default::default()
            },
            DistributionSpec::Truncated { inner, threshold_k } => {
                let mut rec = SpecRecord::from(*inner);
                rec.inner = Some(std::mem::replace(&mut rec.kind, "truncated".into()));
                rec.threshold_k = Some(threshold_k);
                rec
            }
        }
    }
}

impl TryFrom<SpecRecord> for DistributionSpec {
    type Error = Error;

    fn try_from(rec: SpecRecord) -> Result<Self> {
        let need_n = |rec: &SpecRecord| {
            rec.n
                .ok_or_else(|| Error::InvalidSpec(format!("field `n` is required for kind `{}`", rec.kind)))
        };
        let need_tail = |rec: &SpecRecord| {
            rec.tail_exponent.ok_or_else(|| {
                Error::InvalidSpec(format!("field `tail_exponent` is required for kind `{}`", rec.kind))
            })
        };
        let spec = match rec.kind.as_str() {
            "gaussian" => Self::Gaussian { n: need_n(&rec)? },
            "orthobasis" => Self::Orthobasis { n: need_n(&rec)? },
            "iid_powerlaw" => Self::IidPowerlaw {
                n: need_n(&rec)?,
                tail_exponent: need_tail(&rec)?,
            },
            "multidim_pareto" => Self::MultidimPareto {
                n: need_n(&rec)?,
                tail_exponent: need_tail(&rec)?,
            },
            "constant" => {
                let vector = rec
                    .fixed_vector
                    .clone()
                    .ok_or_else(|| Error::InvalidSpec("field `fixed_vector` is required for kind `constant`".into()))?;
                if let Some(n) = rec.n {
                    if n != vector.len() {
                        return Err(Error::InvalidSpec(format!(
                            "field `n` = {n} disagrees with fixed_vector length {}",
                            vector.len()
                        )));
                    }
                }
                Self::Constant { vector }
            }
            "truncated" => {
                let inner_kind = rec
                    .inner
                    .clone()
                    .ok_or_else(|| Error::InvalidSpec("field `inner` is required for kind `truncated`".into()))?;
                let threshold_k = rec
                    .threshold_k
                    .ok_or_else(|| Error::InvalidSpec("field `threshold_k` is required for kind `truncated`".into()))?;
                let inner = SpecRecord {
                    kind: inner_kind,
                    inner: None,
                    threshold_k: None,
                    ..rec
                };
                Self::Truncated {
                    inner: Box::new(Self::try_from(inner)?),
                    threshold_k,
                }
            }
            other => return Err(Error::InvalidSpec(format!("unknown kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Where a sample matrix came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: DistributionSpec,
    pub stream: StreamId,
}

/// `N x n` matrix whose rows are the samples `X_1, ..., X_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n: usize,
    data: Vec<f64>,
    provenance: Option<Provenance>,
}

impl SampleMatrix {
    /// Row-major data of length `N * n`.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() % n != 0 {
            return Err(Error::InvalidArgument(format!(
                "data length {} is not a multiple of n = {n}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample matrix entry".into()));
        }
        Ok(Self {
            n,
            data,
            provenance: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InvalidArgument("no rows".into()))?;
        if rows.iter().any(|r| r.as_ref().len() != n) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::new(n, rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect())
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n)
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.rows().map(norm2).collect()
    }

    /// `out = A x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.rows()) {
            *o = dot(row, x);
        }
    }

    /// `out = A^T w`.
    pub fn apply_transpose(&self, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (wi, row) in w.iter().zip(self.rows()) {
            if *wi != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, r)| *o += wi * r);
            }
        }
    }

    /// Rows restricted to `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.row(i)).collect();
        Self::from_rows(&rows)
    }

    /// CSV with a `# provenance` comment line, a header `x1..xn`, and one row
    /// per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        match &self.provenance {
            Some(prov) => writeln!(file, "# provenance {}", serde_json::to_string(prov)?)?,
            None => writeln!(file, "# provenance none")?,
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record((1..=self.n).map(|j| format!("x{j}")))?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut reader = std::io::BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let provenance = match first.trim().strip_prefix("# provenance ") {
            Some("none") => None,
            Some(json) => Some(serde_json::from_str(json)?),
            None => return Err(Error::Corrupt(vec![format!("{}: missing provenance line", path.display())])),
        };
        let mut csv_reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let n = csv_reader.headers()?.len();
        let mut data = Vec::new();
        for rec in csv_reader.records() {
            let rec = rec?;
            for field in rec.iter() {
                data.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::Corrupt(vec![format!("{}: bad value `{field}`: {e}", path.display())])
                })?);
            }
        }
        let mut m = Self::new(n, data)?;
        m.provenance = provenance;
        Ok(m)
    }
}

/// Draws `count` i.i.d. rows from `spec` on `stream`.
pub fn sample_matrix(spec: &DistributionSpec, count: usize, stream: StreamId) -> Result<SampleMatrix> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("N must be >= 1".into()));
    }
    let n = spec.dim();
    let mut rng = stream.rng();
    let mut data = vec![0.0; count * n];
    for row in data.chunks_exact_mut(n) {
        spec.draw_into(&mut rng, row);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("draw from {spec}")));
    }
    Ok(SampleMatrix {
        n,
        data,
        provenance: Some(Provenance {
            spec: spec.clone(),
            stream,
        }),
    })
}

fn check_unit(x: &[f64]) -> Result<()> {
    let nrm = norm2(x);
    if (nrm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("direction must be a unit vector (norm {nrm})")));
    }
    Ok(())
}

/// `E|<X, x>|^p` in closed form.
pub fn exact_moment(spec: &DistributionSpec, x: &[f64], p: f64) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(Error::InvalidArgument("direction has the wrong dimension".into()));
    }
    check_unit(x)?;
    ExactOracle::new(spec, p).map(|o| o.moment(x))
}

/// A value for `E|<X, x>|^p` (and its gradient) at any direction.
pub trait MomentOracle: Sync {
    fn moment(&self, x: &[f64]) -> f64;

    /// Euclidean gradient of `x -> E|<X, x>|^p` on `R^n`.
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    /// `E |<X, x>|^p 1{|<X, x>| >= b}` when available in closed form.
    fn tail_moment(&self, x: &[f64], b: f64) -> Option<f64>;

    /// Half-width of the 99% interval around `moment(x)`; zero when exact.
    fn ci_halfwidth(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// Closed-form oracle for Gaussian, orthobasis, constant and multidimensional
/// Pareto laws.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    p: f64,
    form: ExactForm,
}

#[derive(Debug, Clone)]
enum ExactForm {
    /// `c |x|^p` with `c = E|g|^p` (times the scalar factor's moment).
    Radial { c: f64, gaussian: bool },
    Orthobasis { n: usize },
    Constant { v: Vec<f64> },
}

impl ExactOracle {
    pub fn new(spec: &DistributionSpec, p: f64) -> Result<Self> {
        if !(p > 0.0) {
            return Err(Error::InvalidArgument("p must be positive".into()));
        }
        let form = match spec {
            DistributionSpec::Gaussian { .. } => ExactForm::Radial {
                c: normal_abs_moment(p),
                gaussian: true,
            },
            DistributionSpec::Orthobasis { n } => ExactForm::Orthobasis { n: *n },
            DistributionSpec::Constant { vector } => ExactForm::Constant { v: vector.clone() },
            DistributionSpec::MultidimPareto { tail_exponent, .. } => {
                let scalar = NormalizedPareto::new(*tail_exponent)
                    .ok_or_else(|| Error::InvalidSpec("tail_exponent must exceed 2".into()))?
                    .abs_moment(p)
                    .ok_or(Error::InfiniteMoment {
                        order: p,
                        tail: *tail_exponent,
                    })?;
                ExactForm::Radial {
                    c: normal_abs_moment(p) * scalar,
                    gaussian: false,
                }
            }
            DistributionSpec::IidPowerlaw { .. } | DistributionSpec::Truncated { .. } => {
                return Err(Error::NoClosedForm(spec.kind()))
            }
        };
        Ok(Self { p, form })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl MomentOracle for ExactOracle {
    fn moment(&self, x: &[f64]) -> f64 {
        let p = self.p;
        match &self.form {
            ExactForm::Radial { c, .. } => c * pow_abs(norm2(x), p),
            ExactForm::Orthobasis { n } => {
                let nf = *n as f64;
                nf.powf(p / 2.0 - 1.0) * x.iter().map(|&v| pow_abs(v, p)).sum::<f64>()
            }
            ExactForm::Constant { v } => pow_abs(dot(v, x), p),
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let p = self.p;
        match &self.form {
            ExactForm::Radial { c, .. } => {
                let r = norm2(x);
                let s = if r == 0.0 { 0.0 } else { c * p * pow_abs(r, p - 2.0) };
                out.iter_mut().zip(x).for_each(|(o, xi)| *o = s * xi);
            }
            ExactForm::Orthobasis { n } => {
                let scale = (*n as f64).powf(p / 2.0 - 1.0) * p;
                out.iter_mut()
                    .zip(x)
                    .for_each(|(o, &xi)| *o = scale * xi.signum() * pow_abs(xi, p - 1.0));
            }
            ExactForm::Constant { v } => {
                let u = dot(v, x);
                let s = p * u.signum() * pow_abs(u, p - 1.0);
                out.iter_mut().zip(v).for_each(|(o, vi)| *o = s * vi);
            }
        }
    }

    fn tail_moment(&self, x: &[f64], b: f64) -> Option<f64> {
        let p = self.p;
        match &self.form {
            ExactForm::Radial { gaussian: true, .. } => {
                let r = norm2(x);
                if r == 0.0 {
                    return Some(0.0);
                }
                Some(pow_abs(r, p) * normal_abs_tail_moment(p, b / r))
            }
            ExactForm::Radial { gaussian: false, .. } => None,
            ExactForm::Orthobasis { n } => {
                let root = (*n as f64).sqrt();
                let total: f64 = x
                    .iter()
                    .map(|&v| root * v)
                    .filter(|u| u.abs() >= b)
                    .map(|u| pow_abs(u, p))
                    .sum();
                Some(total / *n as f64)
            }
            ExactForm::Constant { v } => {
                let u = dot(v, x);
                Some(if u.abs() >= b { pow_abs(u, p) } else { 0.0 })
            }
        }
    }
}

/// Oracle backed by a reference sample: `moment(x)` is the reference sample's
/// empirical moment. Smooth in `x`, so the solver can use its gradient.
#[derive(Debug, Clone)]
pub struct SampleOracle {
    reference: SampleMatrix,
    p: f64,
}

impl SampleOracle {
    pub fn new(reference: SampleMatrix, p: f64) -> Self {
        Self { reference, p }
    }

    /// Draws `draws` fresh reference rows from `spec`.
    pub fn draw(spec: &DistributionSpec, p: f64, draws: usize, stream: StreamId) -> Result<Self> {
        Ok(Self::new(sample_matrix(spec, draws, stream)?, p))
    }

    pub fn reference(&self) -> &SampleMatrix {
        &self.reference
    }

    fn mean_and_sd(&self, x: &[f64]) -> (f64, f64) {
        let m = self.reference.n_samples() as f64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for row in self.reference.rows() {
            let v = pow_abs(dot(row, x), self.p);
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / m;
        let var = if m > 1.0 { ((s2 - m * mean * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
        (mean, var.sqrt())
    }
}

impl MomentOracle for SampleOracle {
    fn moment(&self, x: &[f64]) -> f64 {
        crate::estimate::empirical_moment_unchecked(&self.reference, x, self.p)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        crate::estimate::empirical_gradient(&self.reference, x, self.p, out);
    }

    fn tail_moment(&self, x: &[f64], b: f64) -> Option<f64> {
        let m = self.reference.n_samples() as f64;
        let total: f64 = self
            .reference
            .rows()
            .map(|row| dot(row, x))
            .filter(|u| u.abs() >= b)
            .map(|u| pow_abs(u, self.p))
            .sum();
        Some(total / m)
    }

    fn ci_halfwidth(&self, x: &[f64]) -> f64 {
        let (_, sd) = self.mean_and_sd(x);
        Z99 * sd / (self.reference.n_samples() as f64).sqrt()
    }
}

/// Monte Carlo estimate of a marginal moment with its 99% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub draws: usize,
}

/// Minimum number of draws accepted by [`moment_mc_oracle`].
pub const MC_MIN_DRAWS: usize = 10_000;

/// Sample mean of `|<X, x>|^p` over `draws` fresh vectors and a 99% CLT
/// half-width.
pub fn moment_mc_oracle(
    spec: &DistributionSpec,
    x: &[f64],
    p: f64,
    draws: usize,
    stream: StreamId,
) -> Result<McEstimate> {
    spec.validate()?;
    if draws < MC_MIN_DRAWS {
        return Err(Error::InvalidArgument(format!("need at least {MC_MIN_DRAWS} draws")));
    }
    if x.len() != spec.dim() {
        return Err(Error::InvalidArgument("direction has the wrong dimension".into()));
    }
    check_unit(x)?;
    let mut rng = stream.rng();
    let mut row = vec![0.0; spec.dim()];
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        spec.draw_into(&mut rng, &mut row);
        let v = pow_abs(dot(&row, x), p);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("|<X,x>|^p under {spec}")));
        }
        s1 += v;
        s2 += v * v;
    }
    let m = draws as f64;
    let mean = s1 / m;
    let var = ((s2 - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok(McEstimate {
        estimate: mean,
        ci_halfwidth: Z99 * (var / m).sqrt(),
        draws,
    })
}

/// Empirical constants of the boundedness and moment assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `max |X|_2 / sqrt(n)` over the draws.
    pub k_hat: f64,
    /// `max_x (mean |<X, x>|^q)^{1/q}` over the probe directions.
    pub l_hat: f64,
    pub q_used: f64,
    pub draws: usize,
    /// `k_hat` on growing prefixes of the draws.
    pub k_hat_growth: Vec<(usize, f64)>,
    /// `(mean |X|_2^q)^{2/q} / (l_hat^2 n)`; at most 1 by Minkowski.
    pub norm_moment_ratio: f64,
    pub violations: Vec<String>,
}

/// Measures `K` and `L` with `q = 4p`.
pub fn check_assumptions(spec: &DistributionSpec, p: f64, draws: usize, stream: StreamId) -> Result<AssumptionReport> {
    check_assumptions_with_q(spec, 4.0 * p, draws, stream)
}

/// Measures `K` and `L` for an explicit order `q`. Probes are the basis
/// vectors and eight random unit vectors.
pub fn check_assumptions_with_q(
    spec: &DistributionSpec,
    q: f64,
    draws: usize,
    stream: StreamId,
) -> Result<AssumptionReport> {
    spec.validate()?;
    if draws == 0 {
        return Err(Error::InvalidArgument("draws must be >= 1".into()));
    }
    let n = spec.dim();
    let mut rng = stream.rng();
    let mut probe_rng: StreamRng = stream.with_purpose(Purpose::Probe).rng();
    let random_probes: Vec<Vec<f64>> = (0..8).map(|_| linalg::random_unit(n, &mut probe_rng)).collect();

    let checkpoints = [draws.div_ceil(64), draws.div_ceil(8), draws];
    let mut growth = Vec::new();
    let mut basis_acc = vec![0.0; n];
    let mut random_acc = vec![0.0; random_probes.len()];
    let mut norm_q_acc = 0.0;
    let mut max_norm: f64 = 0.0;
    let mut row = vec![0.0; n];
    for i in 1..=draws {
        spec.draw_into(&mut rng, &mut row);
        let nrm = norm2(&row);
        max_norm = max_norm.max(nrm);
        norm_q_acc += pow_abs(nrm, q);
        for (acc, v) in basis_acc.iter_mut().zip(&row) {
            *acc += pow_abs(*v, q);
        }
        for (acc, probe) in random_acc.iter_mut().zip(&random_probes) {
            *acc += pow_abs(dot(&row, probe), q);
        }
        if checkpoints.contains(&i) && growth.last().map(|g: &(usize, f64)| g.0) != Some(i) {
            growth.push((i, max_norm / (n as f64).sqrt()));
        }
    }
    let m = draws as f64;
    let l_hat = basis_acc
        .iter()
        .chain(&random_acc)
        .map(|acc| (acc / m).powf(1.0 / q))
        .fold(0.0, f64::max);
    let k_hat = max_norm / (n as f64).sqrt();
    let norm_moment_ratio = (norm_q_acc / m).powf(2.0 / q) / (l_hat * l_hat * n as f64);
    if !k_hat.is_finite() || !l_hat.is_finite() {
        return Err(Error::NonFinite(format!("assumption statistics under {spec}")));
    }

    let mut violations = Vec::new();
    match spec {
        DistributionSpec::Gaussian { .. } => violations.push("norm is not almost surely bounded".to_string()),
        DistributionSpec::IidPowerlaw { tail_exponent, .. } | DistributionSpec::MultidimPareto { tail_exponent, .. } => {
            violations.push("norm is not almost surely bounded".to_string());
            if *tail_exponent <= q {
                violations.push(format!(
                    "marginal moment of order q = {q} is infinite (tail exponent {tail_exponent})"
                ));
            }
        }
        _ => {}
    }
    if let (Some(first), Some(last)) = (growth.first(), growth.last()) {
        if first.1 > 0.0 && last.1 / first.1 > 1.5 {
            violations.push(format!(
                "K_hat still growing with draws ({:.3} at {} -> {:.3} at {})",
                first.1, first.0, last.1, last.0
            ));
        }
    }
    Ok(AssumptionReport {
        k_hat,
        l_hat,
        q_used: q,
        draws,
        k_hat_growth: growth,
        norm_moment_ratio,
        violations,
    })
}
