//! Phased-elimination algorithms run in lockstep: the server computes sampling
//! counts, every agent samples and reports empirical means, and the server
//! prunes each agent's candidate set.
//!
//! The weighted engine serves both best-arm identification (`N = 1`) and
//! top-N identification; the personalized baseline uses a fixed geometric
//! sampling schedule instead of solved allocations.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::allocation::integer_allocation;
use crate::concentration::{pf_radius, Threshold, PF_BETA_EXP};
use crate::error::{Error, Result};
use crate::model::{personalization_weights, BanditInstance, MixedView};
use crate::optimizer::oracle_allocation_arm;
use crate::simulation::Environment;

/// Safety net against instances whose gaps are too small to ever resolve.
pub const MAX_PHASES: u32 = 60;
/// Relative slack allowed in the `Omega <= proxy gap` check.
pub const PROXY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record a per-phase trace.
    pub trace: bool,
    /// Compare estimates with the true mixed means at every phase.
    pub instrument: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub r: u32,
    pub active: Vec<Vec<usize>>,
    pub active_sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_sum: Option<f64>,
    pub samples: u64,
    pub exploration_cost: u64,
}

/// Ground-truth checks collected in instrumented runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Every mixed-mean estimate stayed within its confidence width.
    pub good_event: bool,
    /// Largest `Omega / proxy gap` ratio seen (weighted engine only).
    pub max_proxy_ratio: Option<f64>,
    /// The true answer of every agent was never eliminated.
    pub truth_retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Per-agent output: a single arm for best-arm identification, a set for top-N.
    pub guesses: Vec<Vec<usize>>,
    pub correct: bool,
    pub exploration_cost: u64,
    pub comm_rounds: u32,
    pub elapsed_rounds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<PhaseTrace>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

/// Mutable state of one weighted phased-elimination run.
#[derive(Debug, Clone)]
pub struct PhaseState {
    pub r: u32,
    pub active: Vec<Vec<usize>>,
    pub union_active: Vec<usize>,
    pub proxy_gaps: DMatrix<f64>,
    pub counts: DMatrix<u64>,
    pub reward_sums: DMatrix<f64>,
    pub exploration_cost: u64,
    pub comm_rounds: u32,
    pub elapsed_rounds: u64,
}

impl PhaseState {
    fn new(arms: usize, agents: usize) -> Self {
        PhaseState {
            r: 0,
            active: vec![(0..arms).collect(); agents],
            union_active: (0..arms).collect(),
            proxy_gaps: DMatrix::from_element(arms, agents, 1.0),
            counts: DMatrix::zeros(arms, agents),
            reward_sums: DMatrix::zeros(arms, agents),
            exploration_cost: 0,
            comm_rounds: 0,
            elapsed_rounds: 0,
        }
    }

    fn pull(&mut self, env: &mut Environment, k: usize, m: usize, times: u64) {
        if times == 0 {
            return;
        }
        self.reward_sums[(k, m)] += env.sample_sum(k, m, times);
        self.counts[(k, m)] += times;
        self.exploration_cost += times;
    }

    fn refresh_union(&mut self) {
        let arms = self.proxy_gaps.nrows();
        self.union_active = (0..arms)
            .filter(|k| self.active.iter().any(|set| set.contains(k)))
            .collect();
    }

    fn counts_row(&self, k: usize) -> Vec<u64> {
        self.counts.row(k).iter().copied().collect()
    }

    /// `mu_hat' = mu_hat W`; agents with zero weight may have no samples.
    fn mixed_estimates(&self, weights: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (arms, agents) = self.counts.shape();
        let mut out = DMatrix::zeros(arms, agents);
        for k in 0..arms {
            for m in 0..agents {
                let mut value = 0.0;
                for n in 0..agents {
                    let w = weights[(n, m)];
                    if w == 0.0 {
                        continue;
                    }
                    let count = self.counts[(k, n)];
                    if count == 0 {
                        return Err(Error::Invariant(format!(
                            "arm {k} has no samples at agent {n} but agent {m} needs them"
                        )));
                    }
                    value += w * self.reward_sums[(k, n)] / count as f64;
                }
                out[(k, m)] = value;
            }
        }
        Ok(out)
    }
}

/// Keeps the arms of `active` whose upper bound reaches the `n`-th largest
/// lower bound over `active`. `estimates` and `radii` are indexed by arm.
/// Sets with at most `n` arms are returned unchanged.
pub fn eliminate(active: &[usize], estimates: &[f64], radii: &[f64], n: usize) -> Vec<usize> {
    if active.len() <= n {
        return active.to_vec();
    }
    let mut lower: Vec<f64> = active.iter().map(|&k| estimates[k] - radii[k]).collect();
    lower.sort_by(|a, b| b.total_cmp(a));
    let threshold = lower[n - 1];
    active
        .iter()
        .copied()
        .filter(|&k| estimates[k] + radii[k] >= threshold)
        .collect()
}

fn is_correct(guesses: &[Vec<usize>], truth: &[Vec<usize>]) -> bool {
    guesses
        .iter()
        .zip(truth)
        .all(|(g, t)| !g.is_empty() && g.iter().all(|k| t.contains(k)))
}

/// Best-arm identification with the weighted collaborative engine.
pub fn run_wcpe_bai(env: &mut Environment, delta: f64, opts: RunOptions) -> Result<RunResult> {
    run_wcpe(env, 1, delta, opts)
}

/// Top-N identification with the weighted collaborative engine. `n = K` is
/// allowed and stops right after initialization.
pub fn run_wcpe_topn(env: &mut Environment, n: usize, delta: f64, opts: RunOptions) -> Result<RunResult> {
    run_wcpe(env, n, delta, opts)
}

fn truth_sets(instance: &BanditInstance, n: usize) -> Result<Vec<Vec<usize>>> {
    let view = instance.mixed_view()?;
    if n == 1 {
        return Ok(view.best_arm.iter().map(|&k| vec![k]).collect());
    }
    if n == instance.arms() {
        return Ok(vec![(0..n).collect(); instance.agents()]);
    }
    Ok(view.topn(n)?.top_sets)
}

/// Caches per-arm continuous targets keyed by the arm's proxy gaps.
struct TargetCache<'a> {
    weights: &'a DMatrix<f64>,
    entries: HashMap<Vec<u64>, Vec<f64>>,
}

impl TargetCache<'_> {
    fn targets(&mut self, proxy_row: &[f64]) -> Result<&[f64]> {
        let key: Vec<u64> = proxy_row.iter().map(|v| v.to_bits()).collect();
        if !self.entries.contains_key(&key) {
            let gaps: Vec<f64> = proxy_row.iter().map(|g| std::f64::consts::SQRT_2 * g).collect();
            let solved = oracle_allocation_arm(&gaps, self.weights)?;
            self.entries.insert(key.clone(), solved.values);
        }
        Ok(&self.entries[&key])
    }
}

fn run_wcpe(env: &mut Environment, n: usize, delta: f64, opts: RunOptions) -> Result<RunResult> {
    let instance = env.instance().clone();
    let (arms, agents) = (instance.arms(), instance.agents());
    if n == 0 || n > arms {
        return Err(Error::domain(format!("N must satisfy 1 <= N <= K = {arms}, got {n}")));
    }
    let truth = truth_sets(&instance, n)?;
    let view = if opts.instrument {
        Some(instance.mixed_view()?)
    } else {
        None
    };
    let weights = instance.weights();
    let threshold = Threshold::new(delta, arms, agents)?;
    let mut cache = TargetCache {
        weights,
        entries: HashMap::new(),
    };

    let mut state = PhaseState::new(arms, agents);
    for m in 0..agents {
        for k in 0..arms {
            state.pull(env, k, m, 1);
        }
    }
    state.elapsed_rounds = arms as u64;

    let mut trace = opts.trace.then(Vec::new);
    let mut diagnostics = opts.instrument.then_some(Diagnostics {
        good_event: true,
        max_proxy_ratio: Some(0.0),
        truth_retained: true,
    });

    while state.active.iter().any(|set| set.len() > n) {
        if state.r >= MAX_PHASES {
            return Err(Error::PhaseLimit { phases: MAX_PHASES });
        }
        check_proxy_law(&state, n)?;

        let mut target_sum = 0.0;
        let mut d = DMatrix::<u64>::zeros(arms, agents);
        for k in 0..arms {
            let proxy_row: Vec<f64> = state.proxy_gaps.row(k).iter().copied().collect();
            let t = cache.targets(&proxy_row)?.to_vec();
            target_sum += t.iter().sum::<f64>();
            let alloc = integer_allocation(&state.counts_row(k), &t, |c| threshold.beta_unchecked(c))?;
            let in_union = state.union_active.contains(&k);
            for (m, &dm) in alloc.d.iter().enumerate() {
                if dm > 0 && !in_union {
                    return Err(Error::Invariant(format!(
                        "arm {k} is inactive everywhere but was allocated {dm} samples"
                    )));
                }
                d[(k, m)] = dm;
            }
        }

        let d_max = (0..agents).map(|m| d.column(m).sum()).max().unwrap_or(0);
        for m in 0..agents {
            for k in 0..arms {
                state.pull(env, k, m, d[(k, m)]);
            }
        }
        state.elapsed_rounds += d_max;
        state.comm_rounds += 1;

        let estimates = state.mixed_estimates(weights)?;
        let mut radii = DMatrix::zeros(arms, agents);
        for k in 0..arms {
            let counts = state.counts_row(k);
            for m in 0..agents {
                let column: Vec<f64> = weights.column(m).iter().copied().collect();
                radii[(k, m)] = threshold.omega(&counts, &column)?;
            }
        }

        if let (Some(diag), Some(view)) = (diagnostics.as_mut(), view.as_ref()) {
            record_wcpe_diagnostics(diag, view, &estimates, &radii, &state, &truth);
        }

        let mut next = Vec::with_capacity(agents);
        for m in 0..agents {
            let est: Vec<f64> = estimates.column(m).iter().copied().collect();
            let rad: Vec<f64> = radii.column(m).iter().copied().collect();
            let kept = eliminate(&state.active[m], &est, &rad, n);
            if kept.is_empty() {
                return Err(Error::Invariant(format!("candidate set of agent {m} became empty")));
            }
            next.push(kept);
        }
        for (m, set) in next.iter().enumerate() {
            if set.len() > n {
                for &k in set {
                    state.proxy_gaps[(k, m)] *= 0.5;
                }
            }
        }
        state.active = next;
        state.refresh_union();

        if let Some(trace) = trace.as_mut() {
            trace.push(PhaseTrace {
                r: state.r,
                active_sizes: state.active.iter().map(Vec::len).collect(),
                active: state.active.clone(),
                target_sum: Some(target_sum),
                samples: d.iter().sum(),
                exploration_cost: state.exploration_cost,
            });
        }
        state.r += 1;
    }

    let total: u64 = state.counts.iter().sum();
    if total != state.exploration_cost {
        return Err(Error::Invariant("exploration cost differs from recorded pulls".into()));
    }
    let guesses = state.active.clone();
    Ok(RunResult {
        correct: is_correct(&guesses, &truth),
        guesses,
        exploration_cost: state.exploration_cost,
        comm_rounds: state.comm_rounds,
        elapsed_rounds: state.elapsed_rounds,
        phases: trace,
        diagnostics,
    })
}

/// Agents still running hold active proxy gaps equal to `2^-r`.
fn check_proxy_law(state: &PhaseState, n: usize) -> Result<()> {
    let expected = 0.5f64.powi(state.r as i32);
    for (m, set) in state.active.iter().enumerate() {
        if set.len() <= n {
            continue;
        }
        for &k in set {
            if state.proxy_gaps[(k, m)] != expected {
                return Err(Error::Invariant(format!(
                    "proxy gap of arm {k} at agent {m} is {} in phase {}",
                    state.proxy_gaps[(k, m)],
                    state.r
                )));
            }
        }
    }
    Ok(())
}

fn record_wcpe_diagnostics(
    diag: &mut Diagnostics,
    view: &MixedView,
    estimates: &DMatrix<f64>,
    radii: &DMatrix<f64>,
    state: &PhaseState,
    truth: &[Vec<usize>],
) {
    let ratio = diag.max_proxy_ratio.get_or_insert(0.0);
    for k in 0..view.arms() {
        for m in 0..view.agents() {
            if (estimates[(k, m)] - view.mu_prime[(k, m)]).abs() > radii[(k, m)] {
                diag.good_event = false;
            }
            *ratio = ratio.max(radii[(k, m)] / state.proxy_gaps[(k, m)]);
        }
    }
    if !truth
        .iter()
        .zip(&state.active)
        .all(|(t, set)| t.iter().all(|k| set.contains(k)) || set.iter().all(|k| t.contains(k)))
    {
        diag.truth_retained = false;
    }
}

/// Baseline with a fixed sampling schedule `f(r) = 2^r ln(1/delta)` for the
/// personalization family of weights. Phases are numbered from 1.
pub fn run_pfucb_bai(env: &mut Environment, alpha: f64, delta: f64, opts: RunOptions) -> Result<RunResult> {
    let instance = env.instance().clone();
    let (arms, agents) = (instance.arms(), instance.agents());
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let expected = personalization_weights(agents, alpha)?;
    if (instance.weights() - &expected).amax() > 1e-12 {
        return Err(Error::domain(format!(
            "the personalized baseline needs personalization weights with alpha = {alpha}"
        )));
    }
    let truth = truth_sets(&instance, 1)?;
    let view = if opts.instrument {
        Some(instance.mixed_view()?)
    } else {
        None
    };
    let weights = instance.weights();
    let log_inv = (1.0 / delta).ln();

    let mut state = PhaseState::new(arms, agents);
    let mut guesses: Vec<Vec<usize>> = vec![Vec::new(); agents];
    let mut cumulative = 0.0;
    let mut trace = opts.trace.then(Vec::new);
    let mut diagnostics = opts.instrument.then_some(Diagnostics {
        good_event: true,
        max_proxy_ratio: None,
        truth_retained: true,
    });
    let mut r: u32 = 1;
    loop {
        for m in 0..agents {
            if state.active[m].len() == 1 {
                guesses[m] = std::mem::take(&mut state.active[m]);
            }
        }
        state.refresh_union();
        if state.union_active.is_empty() {
            break;
        }
        if r > MAX_PHASES {
            return Err(Error::PhaseLimit { phases: MAX_PHASES });
        }
        state.r = r;
        let effort = 2f64.powi(r as i32) * log_inv;
        cumulative += effort;
        let global = ((1.0 - alpha) * effort).ceil() as u64;
        let local = (alpha * agents as f64 * effort).ceil() as u64;

        let mut per_agent = vec![0u64; agents];
        let mut samples = 0;
        for m in 0..agents {
            for k in state.union_active.clone() {
                let times = global + if state.active[m].contains(&k) { local } else { 0 };
                state.pull(env, k, m, times);
                per_agent[m] += times;
                samples += times;
            }
        }
        state.elapsed_rounds += per_agent.iter().copied().max().unwrap_or(0);
        state.comm_rounds += 1;

        let radius = pf_radius(delta, arms, agents, r, cumulative, PF_BETA_EXP)?;
        let estimates = state.mixed_estimates(weights)?;
        let radii = vec![radius; arms];
        if let (Some(diag), Some(view)) = (diagnostics.as_mut(), view.as_ref()) {
            for (m, set) in state.active.iter().enumerate() {
                for &k in set {
                    if (estimates[(k, m)] - view.mu_prime[(k, m)]).abs() > radius {
                        diag.good_event = false;
                    }
                }
                if !set.is_empty() && !set.contains(&truth[m][0]) {
                    diag.truth_retained = false;
                }
            }
        }
        for m in 0..agents {
            if state.active[m].is_empty() {
                continue;
            }
            let est: Vec<f64> = estimates.column(m).iter().copied().collect();
            let kept = eliminate(&state.active[m], &est, &radii, 1);
            if kept.is_empty() {
                return Err(Error::Invariant(format!("candidate set of agent {m} became empty")));
            }
            state.active[m] = kept;
        }
        if let Some(trace) = trace.as_mut() {
            trace.push(PhaseTrace {
                r,
                active_sizes: state.active.iter().map(Vec::len).collect(),
                active: state.active.clone(),
                target_sum: None,
                samples,
                exploration_cost: state.exploration_cost,
            });
        }
        r += 1;
    }

    Ok(RunResult {
        correct: is_correct(&guesses, &truth),
        guesses,
        exploration_cost: state.exploration_cost,
        comm_rounds: state.comm_rounds,
        elapsed_rounds: state.elapsed_rounds,
        phases: trace,
        diagnostics,
    })
}
