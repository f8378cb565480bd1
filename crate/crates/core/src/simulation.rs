//! Seeded Gaussian environment and repeated experiments.
//!
//! Randomness: each run owns one ChaCha8 generator per `(arm, agent)` pair,
//! all seeded with the run seed through `seed_from_u64` and separated by
//! `set_stream(k * M + m)`. Rewards are `mu + Z` with `Z` drawn by the
//! ziggurat `StandardNormal` sampler of `rand_distr`. Run seeds are derived
//! from the base seed with the SplitMix64 finalizer, so results do not depend
//! on the order in which runs execute.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{run_pfucb_bai, run_wcpe_bai, run_wcpe_topn, RunOptions, RunResult};
use crate::error::{Error, Result};
use crate::model::{BanditInstance, InstanceFile};
use crate::optimizer::{complexity, ComplexityKind};

pub struct Environment<'a> {
    instance: &'a BanditInstance,
    streams: Vec<ChaCha8Rng>,
}

impl<'a> Environment<'a> {
    pub fn new(instance: &'a BanditInstance, seed: u64) -> Self {
        let count = instance.arms() * instance.agents();
        let streams = (0..count as u64)
            .map(|stream| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                rng
            })
            .collect();
        Environment { instance, streams }
    }

    pub fn instance(&self) -> &'a BanditInstance {
        self.instance
    }

    /// One reward `N(mu_{k,m}, 1)`.
    pub fn sample_reward(&mut self, k: usize, m: usize) -> f64 {
        let stream = k * self.instance.agents() + m;
        let z: f64 = self.streams[stream].sample(StandardNormal);
        self.instance.mu()[(k, m)] + z
    }

    /// Sum of `times` consecutive rewards of `(k, m)`.
    pub fn sample_sum(&mut self, k: usize, m: usize, times: u64) -> f64 {
        (0..times).map(|_| self.sample_reward(k, m)).sum()
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `index`: the `index + 1`-th SplitMix64 output from state `base`.
pub fn run_seed(base: u64, index: usize) -> u64 {
    splitmix64(base.wrapping_add((index as u64 + 1).wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum AlgorithmSpec {
    WcpeBai,
    WcpeTopn { n: usize },
    PfucbBai { alpha: f64 },
}

impl AlgorithmSpec {
    pub fn run(&self, env: &mut Environment, delta: f64, opts: RunOptions) -> Result<RunResult> {
        match *self {
            AlgorithmSpec::WcpeBai => run_wcpe_bai(env, delta, opts),
            AlgorithmSpec::WcpeTopn { n } => run_wcpe_topn(env, n, delta, opts),
            AlgorithmSpec::PfucbBai { alpha } => run_pfucb_bai(env, alpha, delta, opts),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmSpec::WcpeBai => "wcpe-bai",
            AlgorithmSpec::WcpeTopn { .. } => "wcpe-topn",
            AlgorithmSpec::PfucbBai { .. } => "pfucb-bai",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: AlgorithmSpec,
    pub delta: f64,
    pub runs: usize,
    pub base_seed: u64,
    pub instance: InstanceFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub correct: bool,
    pub exploration_cost: u64,
    pub comm_rounds: u32,
    pub elapsed_rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub runs: usize,
    pub c_hat: f64,
    /// Sample standard deviation of the cost, rounded up.
    pub c_std: u64,
    pub r_hat: f64,
    pub r_std: u64,
    pub delta_hat: f64,
    /// `ceil(T ln(1/(2.4 delta)))` with the matching lower-bound complexity;
    /// absent when it is undefined for this instance or confidence level.
    pub c_star: Option<u64>,
    #[serde(skip)]
    pub wall_time: f64,
}

impl ExperimentSummary {
    pub fn cost_ratio(&self) -> Option<f64> {
        self.c_star.filter(|&c| c > 0).map(|c| self.c_hat / c as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_run: Vec<RunRecord>,
    pub summary: ExperimentSummary,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Oracle baseline `c*`; uses the top-N lower bound for top-N runs.
pub fn oracle_cost(instance: &BanditInstance, algorithm: &AlgorithmSpec, delta: f64) -> Result<Option<u64>> {
    let scale = (1.0 / (2.4 * delta)).ln();
    if scale <= 0.0 || !instance.has_positive_diagonal() {
        return Ok(None);
    }
    let view = instance.mixed_view()?;
    let value = match *algorithm {
        AlgorithmSpec::WcpeTopn { n } if n > 1 => {
            if n >= instance.arms() {
                return Ok(Some(0));
            }
            let top = view.topn(n)?;
            complexity(ComplexityKind::NStar, instance, &view, Some(&top))?.value
        }
        _ => complexity(ComplexityKind::TStar, instance, &view, None)?.value,
    };
    Ok(Some((value * scale).ceil() as u64))
}

pub fn summarize(per_run: &[RunRecord], c_star: Option<u64>, wall_time: f64) -> Result<ExperimentSummary> {
    if per_run.is_empty() {
        return Err(Error::domain("an experiment needs at least one run"));
    }
    let costs: Vec<f64> = per_run.iter().map(|r| r.exploration_cost as f64).collect();
    let rounds: Vec<f64> = per_run.iter().map(|r| f64::from(r.comm_rounds)).collect();
    let (c_hat, c_std) = mean_and_std(&costs);
    let (r_hat, r_std) = mean_and_std(&rounds);
    let errors = per_run.iter().filter(|r| !r.correct).count();
    Ok(ExperimentSummary {
        runs: per_run.len(),
        c_hat,
        c_std: c_std.ceil() as u64,
        r_hat,
        r_std: r_std.ceil() as u64,
        delta_hat: errors as f64 / per_run.len() as f64,
        c_star,
        wall_time,
    })
}

/// Runs `runs` independent repetitions on the current rayon pool.
pub fn run_experiment(
    instance: &BanditInstance,
    algorithm: AlgorithmSpec,
    delta: f64,
    runs: usize,
    base_seed: u64,
) -> Result<ExperimentReport> {
    if runs == 0 {
        return Err(Error::domain("R must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let start = Instant::now();
    let outcomes: Vec<Result<RunRecord>> = (0..runs)
        .into_par_iter()
        .map(|run_id| {
            let seed = run_seed(base_seed, run_id);
            let mut env = Environment::new(instance, seed);
            let res = algorithm.run(&mut env, delta, RunOptions::default())?;
            Ok(RunRecord {
                run_id,
                seed,
                correct: res.correct,
                exploration_cost: res.exploration_cost,
                comm_rounds: res.comm_rounds,
                elapsed_rounds: res.elapsed_rounds,
            })
        })
        .collect();
    let mut per_run = Vec::with_capacity(runs);
    for (run, outcome) in outcomes.into_iter().enumerate() {
        per_run.push(outcome.map_err(|e| Error::RunAborted {
            run,
            source: Box::new(e),
        })?);
    }
    let c_star = oracle_cost(instance, &algorithm, delta)?;
    let summary = summarize(&per_run, c_star, start.elapsed().as_secs_f64())?;
    Ok(ExperimentReport {
        config: ExperimentConfig {
            algorithm,
            delta,
            runs,
            base_seed,
            instance: instance.to_file(),
        },
        per_run,
        summary,
    })
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for record in &self.per_run {
            writer.serialize(record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightSpec;

    fn instance() -> BanditInstance {
        BanditInstance::new(
            vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.0, 0.2]],
            WeightSpec::Personalization { alpha: 0.5 },
        )
        .unwrap()
    }

    #[test]
    fn identical_seeds_identical_draws() {
        let inst = instance();
        let mut a = Environment::new(&inst, 42);
        let mut b = Environment::new(&inst, 42);
        for i in 0..100 {
            let (k, m) = (i % 3, i % 2);
            assert_eq!(a.sample_reward(k, m).to_bits(), b.sample_reward(k, m).to_bits());
        }
        let mut c = Environment::new(&inst, 43);
        assert_ne!(a.sample_reward(0, 0), c.sample_reward(0, 0));
    }

    #[test]
    fn streams_are_independent_of_interleaving() {
        let inst = instance();
        let mut a = Environment::new(&inst, 9);
        let mut b = Environment::new(&inst, 9);
        let xa: Vec<f64> = (0..5).map(|_| a.sample_reward(1, 1)).collect();
        b.sample_sum(0, 0, 17);
        let xb: Vec<f64> = (0..5).map(|_| b.sample_reward(1, 1)).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn law_of_large_numbers() {
        let inst = instance();
        let mut env = Environment::new(&inst, 2024);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| env.sample_reward(1, 1)).collect();
        let (mean, std) = mean_and_std(&draws);
        assert!((mean - 0.7).abs() < 0.005, "mean {mean}");
        assert!((std * std - 1.0).abs() < 0.02, "variance {}", std * std);
    }

    #[test]
    fn run_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| run_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(run_seed(7, 0), run_seed(8, 0));
    }

    #[test]
    fn single_run_summary() {
        let report = run_experiment(&instance(), AlgorithmSpec::WcpeBai, 0.1, 1, 3).unwrap();
        let run = &report.per_run[0];
        assert_eq!(report.summary.c_hat, run.exploration_cost as f64);
        assert_eq!(report.summary.c_std, 0);
        assert_eq!(report.summary.r_std, 0);
        assert_eq!(report.summary.r_hat, f64::from(run.comm_rounds));
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
    }

    #[test]
    fn reproducible_and_order_independent() {
        let inst = instance();
        let a = run_experiment(&inst, AlgorithmSpec::PfucbBai { alpha: 0.5 }, 0.1, 8, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| run_experiment(&inst, AlgorithmSpec::PfucbBai { alpha: 0.5 }, 0.1, 8, 11))
            .unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.summary.delta_hat, 0.0);
    }

    #[test]
    fn zero_runs_rejected() {
        assert!(run_experiment(&instance(), AlgorithmSpec::WcpeBai, 0.1, 0, 1).is_err());
    }

    #[test]
    fn aborted_run_reports_index() {
        let err = run_experiment(&instance(), AlgorithmSpec::PfucbBai { alpha: 0.3 }, 0.1, 2, 1).unwrap_err();
        assert!(matches!(err, Error::RunAborted { run: 0, .. }));
    }
}
