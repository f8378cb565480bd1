//! Time-uniform confidence widths for mixed-mean estimates.
//!
//! The threshold `beta_delta` combines a calibration function `g_M`, obtained
//! by a one-dimensional minimization over the mixture parameter `lambda`, with
//! an iterated-logarithm term in the per-agent sample counts.

use log::warn;

use crate::error::{Error, Result};

/// Terms summed directly before the Euler-Maclaurin tail.
const ZETA_DIRECT_TERMS: u32 = 32;

/// `B_{2j} / (2j)!` for j = 1..=4.
const EM_COEFFS: [f64; 4] = [
    1.0 / 12.0,         // B2 / 2!  = (1/6) / 2
    -1.0 / 720.0,       // B4 / 4!  = (-1/30) / 24
    1.0 / 30_240.0,     // B6 / 6!  = (1/42) / 720
    -1.0 / 1_209_600.0, // B8 / 8!  = (-1/30) / 40320
];

/// Riemann zeta function for real `s > 1`.
///
/// Sums `n^{-s}` for `n < N = 32` and adds the Euler-Maclaurin tail
/// `N^{1-s}/(s-1) + N^{-s}/2 + sum_{j<=4} B_{2j}/(2j)! (s)_{2j-1} N^{-s-2j+1}`.
/// The remainder is bounded by the first omitted term,
/// `|B_10|/10! (s)_9 N^{-s-9}`, which is below `4e-16` for `s <= 2` and
/// decays faster than any growth of the rising factorial for larger `s`.
pub fn zeta(s: f64) -> Result<f64> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::domain(format!("zeta requires finite s > 1, got {s}")));
    }
    let big_n = f64::from(ZETA_DIRECT_TERMS);
    // Small terms first.
    let mut sum = 0.0;
    for n in (1..ZETA_DIRECT_TERMS).rev() {
        sum += f64::from(n).powf(-s);
    }
    let mut tail = big_n.powf(1.0 - s) / (s - 1.0) + 0.5 * big_n.powf(-s);
    // rising = s (s+1) ... (s+2j-2), power = N^{-s-2j+1}
    let mut rising = s;
    let mut power = big_n.powf(-s - 1.0);
    for (j, coeff) in EM_COEFFS.iter().enumerate() {
        if j > 0 {
            let base = s + (2 * j - 1) as f64;
            rising *= base * (base + 1.0);
            power /= big_n * big_n;
        }
        tail += coeff * rising * power;
    }
    Ok(sum + tail)
}

/// `g_G(lambda) = 2 lambda - 2 lambda ln(4 lambda) + ln zeta(2 lambda) - 0.5 ln(1 - lambda)`
/// on the open interval `(0.5, 1)`.
pub fn g_g(lambda: f64) -> Result<f64> {
    if !(lambda > 0.5 && lambda < 1.0) {
        return Err(Error::domain(format!("g_G requires lambda in (0.5, 1), got {lambda}")));
    }
    Ok(2.0 * lambda - 2.0 * lambda * (4.0 * lambda).ln() + zeta(2.0 * lambda)?.ln() - 0.5 * (1.0 - lambda).ln())
}

/// Closed search interval for the mixture parameter.
pub const LAMBDA_LO: f64 = 0.5 + 1e-6;
pub const LAMBDA_HI: f64 = 1.0 - 1e-6;
const LAMBDA_GRID: usize = 1_000;
const GOLDEN_TOL: f64 = 1e-10;

/// `C^{g_G}(x) = min_{lambda in (0.5, 1)} (g_G(lambda) + x) / lambda`.
///
/// A 1,000-point grid locates the minimizing bracket; golden-section search
/// then refines it to `1e-10` in `lambda`. If the grid minimum sits on the
/// boundary of the search interval the grid value is returned as is.
pub fn c_gg(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::domain(format!("C^gG requires finite x >= 0, got {x}")));
    }
    let objective = |lambda: f64| -> f64 {
        // lambda stays inside the open interval, so g_g cannot fail here.
        (g_g(lambda).expect("lambda in range") + x) / lambda
    };
    let step = (LAMBDA_HI - LAMBDA_LO) / (LAMBDA_GRID - 1) as f64;
    let grid = |i: usize| LAMBDA_LO + step * i as f64;
    let (best_i, best_v) = (0..LAMBDA_GRID)
        .map(|i| (i, objective(grid(i))))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    if best_i == 0 || best_i == LAMBDA_GRID - 1 {
        warn!("C^gG({x}): grid minimum at the search boundary (index {best_i}); not refined");
        return Ok(best_v);
    }
    let (lambda, value) = golden_section(objective, grid(best_i - 1), grid(best_i + 1), GOLDEN_TOL);
    Ok(value.min(best_v).min(objective(lambda)))
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, f(mid))
}

/// `g_M(delta) = M C^{g_G}(ln(1/delta) / M)`.
pub fn g_m(delta: f64, agents: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("g_M requires delta in (0, 1), got {delta}")));
    }
    if agents == 0 {
        return Err(Error::domain("g_M requires M >= 1"));
    }
    let m = agents as f64;
    Ok(m * c_gg((1.0 / delta).ln() / m)?)
}

/// Confidence level and problem size, with the calibration `g_M(delta/(KM))`
/// computed once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    delta: f64,
    arms: usize,
    agents: usize,
    calibration: f64,
}

impl Threshold {
    pub fn new(delta: f64, arms: usize, agents: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
        }
        if arms == 0 || agents == 0 {
            return Err(Error::domain("K and M must be positive"));
        }
        let calibration = g_m(delta / (arms * agents) as f64, agents)?;
        Ok(Threshold {
            delta,
            arms,
            agents,
            calibration,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    /// `g_M(delta / (K M))`.
    pub fn calibration(&self) -> f64 {
        self.calibration
    }

    /// `beta_delta(n) = 2 (g_M(delta/KM) + 2 sum_m ln(4 + ln n_m))`.
    pub fn beta(&self, counts: &[u64]) -> Result<f64> {
        if counts.len() != self.agents {
            return Err(Error::domain(format!(
                "count vector has length {}, expected M = {}",
                counts.len(),
                self.agents
            )));
        }
        if counts.contains(&0) {
            return Err(Error::domain("beta_delta requires every count >= 1"));
        }
        Ok(self.beta_unchecked(counts))
    }

    pub(crate) fn beta_unchecked(&self, counts: &[u64]) -> f64 {
        let iterated: f64 = counts.iter().map(|&n| (4.0 + (n as f64).ln()).ln()).sum();
        2.0 * (self.calibration + 2.0 * iterated)
    }

    /// `Omega = sqrt(beta_delta(n) sum_n w_n^2 / n_n)` for one arm and one
    /// mixing column `w`.
    pub fn omega(&self, counts: &[u64], weight_column: &[f64]) -> Result<f64> {
        let beta = self.beta(counts)?;
        if weight_column.len() != counts.len() {
            return Err(Error::domain("weight column and counts differ in length"));
        }
        Ok((beta * inverse_count_sum(counts, weight_column)).sqrt())
    }
}

/// `sum_n w_n^2 / n_n`.
pub fn inverse_count_sum(counts: &[u64], weight_column: &[f64]) -> f64 {
    counts.iter().zip(weight_column).map(|(&n, &w)| w * w / n as f64).sum()
}

/// Default exponent of the phase-indexed union bound.
pub const PF_BETA_EXP: f64 = 2.0;

/// Radius `B_r(delta) = sqrt(2 ln(K M zeta(beta) r^beta / delta) / (M F_r))`
/// used by the fixed-schedule personalized baseline after phase `r`, where
/// `F_r` is the cumulative sampling effort up to phase `r`.
pub fn pf_radius(delta: f64, arms: usize, agents: usize, r: u32, cumulative_effort: f64, beta_exp: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if r == 0 {
        return Err(Error::domain("B_r is undefined for r = 0 (F(0) = 0)"));
    }
    if !(cumulative_effort > 0.0) {
        return Err(Error::domain("cumulative effort F_r must be positive"));
    }
    let km = (arms * agents) as f64;
    let log_term = (km * zeta(beta_exp)? * f64::from(r).powf(beta_exp) / delta).ln();
    Ok((2.0 * log_term / (agents as f64 * cumulative_effort)).sqrt())
}
