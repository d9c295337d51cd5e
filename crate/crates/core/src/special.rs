//! Closed-form moments and a few special functions.

use statrs::function::beta::beta;
use statrs::function::gamma::{gamma, gamma_ur};

/// `|u|^p` as `exp(p ln|u|)`, with `0^p = 0`. Small integer orders use
/// repeated multiplication.
#[inline]
pub fn pow_abs(u: f64, p: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else if p.fract() == 0.0 && p.abs() <= 32.0 {
        u.abs().powi(p as i32)
    } else {
        (p * u.abs().ln()).exp()
    }
}

/// `E|g|^p` for a standard normal `g`: `2^{p/2} Gamma((p+1)/2) / sqrt(pi)`.
pub fn normal_abs_moment(p: f64) -> f64 {
    2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
}

/// `E |g|^p 1{|g| >= b}` for a standard normal `g` and `b >= 0`.
pub fn normal_abs_tail_moment(p: f64, b: f64) -> f64 {
    if b <= 0.0 {
        return normal_abs_moment(p);
    }
    normal_abs_moment(p) * gamma_ur((p + 1.0) / 2.0, b * b / 2.0)
}

/// Riemann zeta for real `s > 1` by Euler-Maclaurin summation.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta diverges at s <= 1");
    const HEAD: usize = 32;
    let mut sum = 0.0;
    for k in 1..HEAD {
        sum += (k as f64).powf(-s);
    }
    let m = HEAD as f64;
    // tail from HEAD: integral + half endpoint + Bernoulli corrections
    sum += m.powf(1.0 - s) / (s - 1.0) + 0.5 * m.powf(-s);
    let b2k = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0];
    let mut rising = s; // s (s+1) ... (s+2k-2)
    let mut fact = 2.0; // (2k)!
    for (j, b) in b2k.iter().enumerate() {
        let k = j + 1;
        sum += b / fact * rising * m.powf(-s - (2 * k - 1) as f64);
        rising *= (s + (2 * k - 1) as f64) * (s + (2 * k) as f64);
        fact *= ((2 * k + 1) * (2 * k + 2)) as f64;
    }
    sum
}

/// The constant `c_p` in `c_p |v|_p <= |v|_{2,inf}` for `p > 2`.
///
/// From `(v*_k)^p <= M^p k^{-p/2}` one gets `|v|_p^p <= zeta(p/2) M^p`, so
/// `c_p = zeta(p/2)^{-1/p}`.
pub fn weak_l2_lp_constant(p: f64) -> f64 {
    zeta(p / 2.0).powf(-1.0 / p)
}

/// Pareto variable `P` with scale 1 and shape `alpha`, centred, scaled to unit
/// variance: `xi = (P - mean) / sd`. Sampling symmetrizes with a random sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPareto {
    pub alpha: f64,
}

impl NormalizedPareto {
    pub fn new(alpha: f64) -> Option<Self> {
        (alpha > 2.0 && alpha.is_finite()).then_some(Self { alpha })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha - 1.0)
    }

    pub fn sd(&self) -> f64 {
        let a = self.alpha;
        (a / ((a - 1.0) * (a - 1.0) * (a - 2.0))).sqrt()
    }

    /// Maps a uniform `u` in (0, 1] and a sign to a draw of `xi`.
    #[inline]
    pub fn from_uniform(&self, u: f64, negative: bool) -> f64 {
        let p = u.powf(-1.0 / self.alpha);
        let v = (p - self.mean()) / self.sd();
        if negative {
            -v
        } else {
            v
        }
    }

    /// `E|xi|^r`, or `None` when `r >= alpha`.
    ///
    /// Splits `E|P - mu|^r` at `mu`. Above `mu` the substitution `u = mu / v`
    /// gives `alpha mu^{r-alpha} B(alpha - r, r + 1)`. Below `mu` the factor
    /// `(mu - w)^{-alpha-1}` is expanded as a binomial series in `w / mu`,
    /// which converges because `w / mu <= 1 / alpha`.
    pub fn abs_moment(&self, r: f64) -> Option<f64> {
        let a = self.alpha;
        if r >= a {
            return None;
        }
        if r == 0.0 {
            return Some(1.0);
        }
        let mu = self.mean();
        let upper = a * mu.powf(r - a) * beta(a - r, r + 1.0);

        let h = mu - 1.0;
        let mut coeff = 1.0; // Gamma(a+1+j) / (Gamma(a+1) j!)
        let mut lower = 0.0;
        for j in 0..10_000 {
            let jf = j as f64;
            let term = coeff * mu.powf(-jf) * h.powf(r + jf + 1.0) / (r + jf + 1.0);
            lower += term;
            if term.abs() <= 1e-18 * lower.abs() {
                break;
            }
            coeff *= (a + 1.0 + jf) / (jf + 1.0);
        }
        lower *= a * mu.powf(-a - 1.0);
        Some((upper + lower) / self.sd().powf(r))
    }
}
