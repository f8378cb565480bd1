//! Integer sample counts for one arm in one phase.
//!
//! Given the counts `n` collected so far, continuous targets `t` and a
//! count-dependent threshold `beta`, the phase needs the fewest new samples
//! `d` such that `(n_m + d_m) / beta(n + d) >= t_m` for every agent. Because
//! `beta` is nondecreasing, the update
//! `d_m <- max(0, ceil(t_m beta(n + d) - n_m))` is monotone, and iterating it
//! from `d = 0` climbs to its least fixed point. Any feasible `d'` is itself a
//! post-fixed point, so the least fixed point is coordinatewise below every
//! feasible vector and in particular minimizes `sum_m d_m`.

use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 10_000;
/// Largest per-agent target count represented exactly.
const MAX_COUNT: f64 = 9.0e15;
/// Tolerance on `(n + d) / beta >= t` when rounding targets up.
pub const CEIL_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegerAllocation {
    pub d: Vec<u64>,
    /// Whether the initial counts already satisfied every constraint.
    pub satisfied: bool,
    /// Sweeps that changed at least one coordinate.
    pub iterations: usize,
}

/// Smallest `d >= 0` with `(n + d) / beta >= t - CEIL_GUARD`.
fn required(n: u64, t: f64, beta: f64) -> u64 {
    if t <= 0.0 {
        return 0;
    }
    let target = t * beta;
    let gap = target - n as f64;
    if gap <= 0.0 {
        return 0;
    }
    let mut d = gap.ceil() as u64;
    if d > 0 && (n + d - 1) as f64 / beta >= t - CEIL_GUARD {
        d -= 1;
    }
    d
}

/// Least fixed point of the monotone update; see the module docs.
///
/// `threshold` must be nondecreasing in every coordinate.
pub fn integer_allocation<F>(n_prev: &[u64], t: &[f64], threshold: F) -> Result<IntegerAllocation>
where
    F: Fn(&[u64]) -> f64,
{
    if n_prev.len() != t.len() {
        return Err(Error::domain("counts and targets differ in length"));
    }
    if n_prev.contains(&0) {
        return Err(Error::domain("integer allocation requires every previous count >= 1"));
    }
    if t.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::domain("targets must be finite and nonnegative"));
    }
    let agents = n_prev.len();
    let mut d = vec![0u64; agents];
    let mut totals = n_prev.to_vec();
    let mut iterations = 0;
    for _ in 0..MAX_SWEEPS {
        let beta = threshold(&totals);
        if !beta.is_finite() || t.iter().any(|&t| t * beta > MAX_COUNT) {
            return Err(Error::AllocationDivergence { sweeps: iterations });
        }
        let mut changed = false;
        for m in 0..agents {
            let next = required(n_prev[m], t[m], beta);
            debug_assert!(next >= d[m], "fixed-point iterates must not decrease");
            if next != d[m] {
                d[m] = next;
                totals[m] = n_prev[m] + next;
                changed = true;
            }
        }
        if !changed {
            return Ok(IntegerAllocation {
                satisfied: iterations == 0,
                d,
                iterations,
            });
        }
        iterations += 1;
    }
    Err(Error::AllocationDivergence { sweeps: MAX_SWEEPS })
}

/// Checks the feasibility invariant `(n + d) / beta(n + d) >= t - CEIL_GUARD`.
pub fn is_feasible<F>(n_prev: &[u64], t: &[f64], d: &[u64], threshold: F) -> bool
where
    F: Fn(&[u64]) -> f64,
{
    let totals: Vec<u64> = n_prev.iter().zip(d).map(|(n, d)| n + d).collect();
    let beta = threshold(&totals);
    totals
        .iter()
        .zip(t)
        .all(|(&total, &t)| total as f64 / beta >= t - CEIL_GUARD)
}

/// The near-minimality certificate: wherever `d_m > 0`,
/// `n_m + d_m < t_m beta(n + d) + 1`.
pub fn certificate_holds<F>(n_prev: &[u64], t: &[f64], d: &[u64], threshold: F) -> bool
where
    F: Fn(&[u64]) -> f64,
{
    let totals: Vec<u64> = n_prev.iter().zip(d).map(|(n, d)| n + d).collect();
    let beta = threshold(&totals);
    (0..d.len()).all(|m| d[m] == 0 || (totals[m] as f64) < t[m] * beta + 1.0)
}
