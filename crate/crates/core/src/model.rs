//! Bandit instances, weight matrices, and the mixed-reward quantities derived
//! from them.
//!
//! Orientation convention: `mu[(k, n)]` is the local mean of arm `k` for agent
//! `n`, and `weights[(n, m)]` is the weight of agent `n`'s local mean inside
//! agent `m`'s mixed mean. Column `m` of the weight matrix mixes for agent `m`
//! and sums to one.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for uniqueness of best arms and top-N sets.
pub const TIE_TOL: f64 = 1e-12;
/// Tolerance on column sums of a weight matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Number of rejected draws after which instance generation gives up.
pub const MAX_GENERATION_ATTEMPTS: usize = 10_000;

/// How the weight matrix of an instance was specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightSpec {
    Matrix { values: Vec<Vec<f64>> },
    Personalization { alpha: f64 },
}

impl WeightSpec {
    pub fn to_matrix(&self, agents: usize) -> Result<DMatrix<f64>> {
        match self {
            WeightSpec::Matrix { values } => {
                if values.len() != agents || values.iter().any(|row| row.len() != agents) {
                    return Err(Error::InvalidInstance(format!(
                        "weight matrix must be {agents}x{agents}"
                    )));
                }
                Ok(DMatrix::from_fn(agents, agents, |n, m| values[n][m]))
            }
            WeightSpec::Personalization { alpha } => personalization_weights(agents, *alpha),
        }
    }

    pub fn identity(agents: usize) -> Self {
        WeightSpec::Matrix {
            values: (0..agents)
                .map(|n| (0..agents).map(|m| if n == m { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            WeightSpec::Personalization { alpha } => Some(*alpha),
            WeightSpec::Matrix { .. } => None,
        }
    }
}

/// Weight matrix of federated learning with personalization level `alpha`:
/// `alpha + (1 - alpha)/M` on the diagonal, `(1 - alpha)/M` elsewhere.
pub fn personalization_weights(agents: usize, alpha: f64) -> Result<DMatrix<f64>> {
    if agents == 0 {
        return Err(Error::domain("agent count must be positive"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("alpha = {alpha} is outside [0, 1]")));
    }
    let shared = (1.0 - alpha) / agents as f64;
    Ok(DMatrix::from_fn(agents, agents, |n, m| {
        if n == m {
            alpha + shared
        } else {
            shared
        }
    }))
}

/// Local means of `K` arms for `M` agents together with the weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    mu: DMatrix<f64>,
    weights: DMatrix<f64>,
    spec: WeightSpec,
}

impl BanditInstance {
    /// Builds and validates an instance. `mu` is given row-per-arm.
    pub fn new(mu: Vec<Vec<f64>>, spec: WeightSpec) -> Result<Self> {
        let arms = mu.len();
        let agents = mu.first().map_or(0, Vec::len);
        if mu.iter().any(|row| row.len() != agents) {
            return Err(Error::InvalidInstance("ragged mean matrix".into()));
        }
        let mu = DMatrix::from_fn(arms, agents, |k, m| mu[k][m]);
        Self::from_parts(mu, spec)
    }

    pub fn from_parts(mu: DMatrix<f64>, spec: WeightSpec) -> Result<Self> {
        let weights = spec.to_matrix(mu.ncols())?;
        let instance = BanditInstance { mu, weights, spec };
        instance.validate()?;
        Ok(instance)
    }

    fn validate(&self) -> Result<()> {
        let (arms, agents) = self.mu.shape();
        if arms < 2 {
            return Err(Error::InvalidInstance(format!("need K >= 2 arms, got {arms}")));
        }
        if agents < 1 {
            return Err(Error::InvalidInstance("need M >= 1 agents".into()));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("means must be finite".into()));
        }
        validate_weights(&self.weights)
    }

    pub fn arms(&self) -> usize {
        self.mu.nrows()
    }

    pub fn agents(&self) -> usize {
        self.mu.ncols()
    }

    pub fn mu(&self) -> &DMatrix<f64> {
        &self.mu
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight_spec(&self) -> &WeightSpec {
        &self.spec
    }

    /// Same means, different weights.
    pub fn with_weights(&self, spec: WeightSpec) -> Result<Self> {
        Self::from_parts(self.mu.clone(), spec)
    }

    /// Lower-bound computations need `w_{m,m} > 0` for every agent.
    pub fn has_positive_diagonal(&self) -> bool {
        (0..self.agents()).all(|m| self.weights[(m, m)] > 0.0)
    }

    pub fn mixed_view(&self) -> Result<MixedView> {
        MixedView::new(self)
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            arms: self.arms(),
            agents: self.agents(),
            mu: self.mu.row_iter().map(|r| r.iter().copied().collect()).collect(),
            weights: self.spec.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: InstanceFile = serde_json::from_str(&text)?;
        file.into_instance()
    }

    /// Canonical pretty JSON, newline-terminated.
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&self.to_file())?;
        text.push('\n');
        Ok(text)
    }
}

pub fn validate_weights(weights: &DMatrix<f64>) -> Result<()> {
    if !weights.is_square() {
        return Err(Error::InvalidInstance("weight matrix must be square".into()));
    }
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::InvalidInstance("weights must lie in [0, 1]".into()));
    }
    for (m, column) in weights.column_iter().enumerate() {
        let total: f64 = column.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInstance(format!(
                "column {m} of the weight matrix sums to {total}, not 1"
            )));
        }
    }
    Ok(())
}

/// On-disk instance format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "K")]
    pub arms: usize,
    #[serde(rename = "M")]
    pub agents: usize,
    pub mu: Vec<Vec<f64>>,
    pub weights: WeightSpec,
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<BanditInstance> {
        if self.mu.len() != self.arms || self.mu.iter().any(|r| r.len() != self.agents) {
            return Err(Error::InvalidInstance(format!(
                "mu must be {}x{} (row per arm, column per agent)",
                self.arms, self.agents
            )));
        }
        BanditInstance::new(self.mu, self.weights)
    }
}

/// Mixed means, gaps and best arms of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedView {
    pub mu_prime: DMatrix<f64>,
    pub gaps: DMatrix<f64>,
    pub best_arm: Vec<usize>,
    pub delta_min: f64,
}

impl MixedView {
    pub fn new(instance: &BanditInstance) -> Result<Self> {
        let mu_prime = mixed_means(instance.mu(), instance.weights());
        Self::from_mixed_means(mu_prime)
    }

    pub fn from_mixed_means(mu_prime: DMatrix<f64>) -> Result<Self> {
        let (arms, agents) = mu_prime.shape();
        let mut best_arm = Vec::with_capacity(agents);
        let mut gaps = DMatrix::zeros(arms, agents);
        for m in 0..agents {
            let column = mu_prime.column(m);
            let sorted = sorted_desc(column.iter().copied());
            if sorted[0] - sorted[1] <= TIE_TOL {
                return Err(Error::NonUniqueBestArm { agent: m });
            }
            let best = column.iter().position(|&v| v == sorted[0]).expect("max is present");
            best_arm.push(best);
            let top = column[best];
            let mut runner_gap = f64::INFINITY;
            for k in 0..arms {
                if k != best {
                    let gap = top - column[k];
                    gaps[(k, m)] = gap;
                    runner_gap = runner_gap.min(gap);
                }
            }
            gaps[(best, m)] = runner_gap;
        }
        let delta_min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(MixedView {
            mu_prime,
            gaps,
            best_arm,
            delta_min,
        })
    }

    pub fn arms(&self) -> usize {
        self.mu_prime.nrows()
    }

    pub fn agents(&self) -> usize {
        self.mu_prime.ncols()
    }

    pub fn topn(&self, n: usize) -> Result<TopNView> {
        TopNView::new(self, n)
    }
}

/// `mu' = mu W`, i.e. `mu'_{k,m} = sum_n w_{n,m} mu_{k,n}`.
pub fn mixed_means(mu: &DMatrix<f64>, weights: &DMatrix<f64>) -> DMatrix<f64> {
    let (arms, agents) = mu.shape();
    DMatrix::from_fn(arms, agents, |k, m| {
        (0..agents).map(|n| weights[(n, m)] * mu[(k, n)]).sum()
    })
}

fn sorted_desc(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Top-N sets and Top-N gaps of each agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TopNView {
    pub n: usize,
    /// Arm indices of each agent's top set, in decreasing order of mixed mean.
    pub top_sets: Vec<Vec<usize>>,
    pub gaps_n: DMatrix<f64>,
}

impl TopNView {
    pub fn new(view: &MixedView, n: usize) -> Result<Self> {
        let arms = view.arms();
        if n == 0 || n >= arms {
            return Err(Error::domain(format!("N must satisfy 1 <= N < K = {arms}, got {n}")));
        }
        let mut top_sets = Vec::with_capacity(view.agents());
        let mut gaps_n = DMatrix::zeros(arms, view.agents());
        for m in 0..view.agents() {
            let column = view.mu_prime.column(m);
            let mut order: Vec<usize> = (0..arms).collect();
            order.sort_by(|&a, &b| column[b].total_cmp(&column[a]));
            // N-th and (N+1)-th order statistics, counted with multiplicity.
            let nth = column[order[n - 1]];
            let next = column[order[n]];
            if nth - next <= TIE_TOL {
                return Err(Error::NonUniqueTopSet { agent: m, n });
            }
            let top: Vec<usize> = order[..n].to_vec();
            for k in 0..arms {
                gaps_n[(k, m)] = if top.contains(&k) {
                    column[k] - next
                } else {
                    nth - column[k]
                };
            }
            top_sets.push(top);
        }
        Ok(TopNView { n, top_sets, gaps_n })
    }
}

/// Result of [`generate_instance`].
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub instance: BanditInstance,
    pub attempts: usize,
}

/// Draws Gaussian means normalized to unit Frobenius norm, redrawing until the
/// smallest mixed gap under `spec` reaches `delta_min_floor`.
pub fn generate_instance(
    arms: usize,
    agents: usize,
    spec: &WeightSpec,
    seed: u64,
    delta_min_floor: f64,
) -> Result<GeneratedInstance> {
    if arms < 2 || agents < 1 {
        return Err(Error::domain(format!(
            "need K >= 2 and M >= 1, got K={arms}, M={agents}"
        )));
    }
    let weights = spec.to_matrix(agents)?;
    validate_weights(&weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=MAX_GENERATION_ATTEMPTS {
        // Row-major draw order: arm by arm, agent by agent.
        let mut raw = DMatrix::zeros(arms, agents);
        for k in 0..arms {
            for m in 0..agents {
                raw[(k, m)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let norm = raw.norm();
        if norm == 0.0 {
            continue;
        }
        let mu = raw / norm;
        let accepted = match MixedView::from_mixed_means(mixed_means(&mu, &weights)) {
            Ok(view) => view.delta_min >= delta_min_floor,
            Err(_) => false,
        };
        if accepted {
            let instance = BanditInstance::from_parts(mu, spec.clone())?;
            return Ok(GeneratedInstance {
                instance,
                attempts: attempt,
            });
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_GENERATION_ATTEMPTS,
        floor: delta_min_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_agent_example() -> BanditInstance {
        let s = 1.0 / 1.9;
        BanditInstance::new(
            vec![vec![0.9, 0.8], vec![0.1, 0.5]],
            WeightSpec::Matrix {
                values: vec![vec![s, 0.9 * s], vec![0.9 * s, s]],
            },
        )
        .unwrap()
    }

    #[test]
    fn personalization_corner_cases() {
        let w = personalization_weights(3, 1.0).unwrap();
        assert_eq!(w, DMatrix::identity(3, 3));
        let w = personalization_weights(2, 0.0).unwrap();
        assert!(w.iter().all(|&v| v == 0.5));
        let w = personalization_weights(3, 0.5).unwrap();
        for n in 0..3 {
            for m in 0..3 {
                let expected = if n == m { 2.0 / 3.0 } else { 1.0 / 6.0 };
                assert!((w[(n, m)] - expected).abs() < 1e-15);
            }
        }
        assert!(matches!(personalization_weights(3, 1.5), Err(Error::Domain(_))));
        assert!(matches!(personalization_weights(3, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn two_agent_example_mixed_view() {
        let view = two_agent_example().mixed_view().unwrap();
        assert!((view.mu_prime[(0, 0)] - 1.62 / 1.9).abs() < 1e-12);
        assert!((view.mu_prime[(0, 0)] - 0.852632).abs() < 1e-6);
        assert!((view.gaps[(1, 0)] - 0.563158).abs() < 1e-6);
        assert!((view.gaps[(1, 1)] - 0.536842).abs() < 1e-6);
        assert_eq!(view.best_arm, vec![0, 0]);
        // best arm carries the smallest gap of the other arms
        assert_eq!(view.gaps[(0, 0)], view.gaps[(1, 0)]);
    }

    #[test]
    fn identity_weights_keep_means() {
        let inst = BanditInstance::new(
            vec![vec![0.3, -0.2], vec![0.1, 0.4], vec![-0.5, 0.0]],
            WeightSpec::identity(2),
        )
        .unwrap();
        let view = inst.mixed_view().unwrap();
        assert_eq!(&view.mu_prime, inst.mu());
    }

    #[test]
    fn equal_agents_give_equal_mixed_means() {
        let inst = BanditInstance::new(
            vec![vec![0.7, 0.7, 0.7], vec![0.2, 0.2, 0.2]],
            WeightSpec::Personalization { alpha: 0.3 },
        )
        .unwrap();
        let view = inst.mixed_view().unwrap();
        for m in 0..3 {
            assert!((view.mu_prime[(0, m)] - 0.7).abs() < 1e-12);
            assert!((view.mu_prime[(1, m)] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn tied_best_arm_is_rejected() {
        let inst = BanditInstance::new(vec![vec![0.5, 0.1], vec![0.5, 0.0]], WeightSpec::identity(2)).unwrap();
        assert!(matches!(inst.mixed_view(), Err(Error::NonUniqueBestArm { agent: 0 })));
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let bad = BanditInstance::new(
            vec![vec![0.5, 0.1], vec![0.2, 0.0]],
            WeightSpec::Matrix {
                values: vec![vec![0.6, 0.5], vec![0.5, 0.5]],
            },
        );
        assert!(matches!(bad, Err(Error::InvalidInstance(_))));
        let one_arm = BanditInstance::new(vec![vec![0.5]], WeightSpec::identity(1));
        assert!(matches!(one_arm, Err(Error::InvalidInstance(_))));
    }

    #[test]
    fn topn_definition_example() {
        let mu_prime = DMatrix::from_column_slice(3, 1, &[0.9, 0.5, 0.1]);
        let view = MixedView::from_mixed_means(mu_prime).unwrap();
        let top = view.topn(2).unwrap();
        assert_eq!(top.top_sets[0], vec![0, 1]);
        assert!((top.gaps_n[(2, 0)] - 0.4).abs() < 1e-12);
        assert!((top.gaps_n[(1, 0)] - 0.4).abs() < 1e-12);
        assert!((top.gaps_n[(0, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn topn_all_but_last() {
        let mu_prime = DMatrix::from_column_slice(4, 1, &[0.4, 0.3, 0.2, 0.1]);
        let view = MixedView::from_mixed_means(mu_prime).unwrap();
        let top = view.topn(3).unwrap();
        assert_eq!(top.top_sets[0], vec![0, 1, 2]);
        assert!(view.topn(4).is_err());
        assert!(view.topn(0).is_err());
    }

    #[test]
    fn topn_boundary_tie_is_rejected() {
        let mu_prime = DMatrix::from_column_slice(3, 1, &[0.9, 0.5, 0.5]);
        let view = MixedView::from_mixed_means(mu_prime).unwrap();
        assert!(matches!(view.topn(2), Err(Error::NonUniqueTopSet { agent: 0, n: 2 })));
    }

    #[test]
    fn generation_is_deterministic_and_normalized() {
        let spec = WeightSpec::Personalization { alpha: 0.5 };
        let a = generate_instance(6, 3, &spec, 11, 0.05).unwrap();
        let b = generate_instance(6, 3, &spec, 11, 0.05).unwrap();
        assert_eq!(a.instance, b.instance);
        assert_eq!(a.attempts, b.attempts);
        assert!((a.instance.mu().norm() - 1.0).abs() < 1e-9);
        assert!(a.instance.mixed_view().unwrap().delta_min >= 0.05);
    }

    #[test]
    fn impossible_floor_fails() {
        let spec = WeightSpec::Personalization { alpha: 0.5 };
        let err = generate_instance(6, 3, &spec, 1, 10.0).unwrap_err();
        assert!(matches!(err, Error::GenerationFailed { .. }));
    }

    #[test]
    fn json_round_trip() {
        let inst = two_agent_example();
        let text = inst.to_json().unwrap();
        let file: InstanceFile = serde_json::from_str(&text).unwrap();
        assert_eq!(file.into_instance().unwrap(), inst);
        let personal: InstanceFile = serde_json::from_str(
            r#"{"K":2,"M":2,"mu":[[0.1,0.2],[0.3,0.4]],"weights":{"kind":"personalization","alpha":0.25}}"#,
        )
        .unwrap();
        let inst = personal.into_instance().unwrap();
        assert_eq!(inst.weight_spec().alpha(), Some(0.25));
    }

    #[test]
    fn json_shape_mismatch_is_rejected() {
        let file: InstanceFile = serde_json::from_str(
            r#"{"K":3,"M":2,"mu":[[0.1,0.2],[0.3,0.4]],"weights":{"kind":"personalization","alpha":0.25}}"#,
        )
        .unwrap();
        assert!(file.into_instance().is_err());
    }
}
