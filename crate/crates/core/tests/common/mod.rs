#![allow(dead_code)]

use collab_bandit::model::{BanditInstance, WeightSpec};
use collab_bandit::optimizer::ReciprocalProgram;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn two_agent_example() -> BanditInstance {
    let s = 1.0 / 1.9;
    BanditInstance::new(
        vec![vec![0.9, 0.8], vec![0.1, 0.5]],
        WeightSpec::Matrix {
            values: vec![vec![s, 0.9 * s], vec![0.9 * s, s]],
        },
    )
    .unwrap()
}

/// Column-stochastic matrix with a strictly positive diagonal.
pub fn random_weights(rng: &mut ChaCha8Rng, agents: usize) -> Vec<Vec<f64>> {
    let mut w: Vec<Vec<f64>> = (0..agents)
        .map(|n| {
            (0..agents)
                .map(|m| rng.random::<f64>() + if n == m { 0.3 } else { 0.0 })
                .collect()
        })
        .collect();
    for m in 0..agents {
        let total: f64 = (0..agents).map(|n| w[n][m]).sum();
        for row in w.iter_mut() {
            row[m] /= total;
        }
    }
    w
}

/// Random instance with unique best arms and mixed gaps at least `floor`;
/// alternates personalization and arbitrary weight matrices.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    arms: usize,
    agents: usize,
    personalized: bool,
    floor: f64,
) -> BanditInstance {
    loop {
        let spec = if personalized {
            WeightSpec::Personalization {
                alpha: rng.random_range(0.05..1.0),
            }
        } else {
            WeightSpec::Matrix {
                values: random_weights(rng, agents),
            }
        };
        let mu: Vec<Vec<f64>> = (0..arms)
            .map(|_| (0..agents).map(|_| rng.random::<f64>()).collect())
            .collect();
        let Ok(instance) = BanditInstance::new(mu, spec) else {
            continue;
        };
        if let Ok(view) = instance.mixed_view() {
            if view.delta_min >= floor {
                return instance;
            }
        }
    }
}

fn feasible(program: &ReciprocalProgram, x: &[f64]) -> bool {
    (0..program.constraints.len()).all(|i| program.load(i, x) <= program.constraints[i].rhs)
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Brute-force minimum of a two-variable program over a 400 x 400 log grid,
/// zoomed around the incumbent (40 cells each way) a few times. The initial box comes from the
/// constraints alone: each term is at most its rhs, and scaling every
/// variable by the number of terms gives a feasible point.
pub fn grid_minimum(program: &ReciprocalProgram) -> (f64, [f64; 2]) {
    assert_eq!(program.var_count(), 2);
    let mut lo = [f64::INFINITY; 2];
    let mut start = [0.0f64; 2];
    for con in &program.constraints {
        for &(j, a) in &con.terms {
            lo[j] = lo[j].min(a / con.rhs);
            start[j] = start[j].max(con.terms.len() as f64 * a / con.rhs);
        }
    }
    let upper = program.objective(&start);
    let mut hi = [upper / program.costs[0], upper / program.costs[1]];
    for j in 0..2 {
        lo[j] = lo[j].min(hi[j]) * 0.5;
        hi[j] *= 1.01;
    }
    const POINTS: usize = 400;
    let mut best = (f64::INFINITY, start);
    for _ in 0..8 {
        let gx = log_grid(lo[0], hi[0], POINTS);
        let gy = log_grid(lo[1], hi[1], POINTS);
        for &x in &gx {
            for &y in &gy {
                let p = [x, y];
                let obj = program.objective(&p);
                if obj < best.0 && feasible(program, &p) {
                    best = (obj, p);
                }
            }
        }
        for j in 0..2 {
            let ratio = (hi[j] / lo[j]).powf(40.0 / (POINTS - 1) as f64);
            lo[j] = best.1[j] / ratio;
            hi[j] = best.1[j] * ratio;
        }
    }
    best
}

/// Smallest total `sum d` over every `d` with `sum d <= bound` satisfying
/// `(n + d) / beta(n + d) >= t`, by exhaustive enumeration.
pub fn enumerate_min_total(n_prev: &[u64], t: &[f64], bound: u64, beta: &dyn Fn(&[u64]) -> f64) -> Option<u64> {
    let agents = n_prev.len();
    let mut best: Option<u64> = None;
    let mut d = vec![0u64; agents];
    fn recurse(
        idx: usize,
        remaining: u64,
        d: &mut Vec<u64>,
        n_prev: &[u64],
        t: &[f64],
        beta: &dyn Fn(&[u64]) -> f64,
        best: &mut Option<u64>,
    ) {
        if idx == d.len() {
            let totals: Vec<u64> = n_prev.iter().zip(d.iter()).map(|(n, d)| n + d).collect();
            let b = beta(&totals);
            if totals.iter().zip(t).all(|(&c, &t)| c as f64 / b >= t - 1e-12) {
                let sum = d.iter().sum();
                if best.is_none_or(|v| sum < v) {
                    *best = Some(sum);
                }
            }
            return;
        }
        for v in 0..=remaining {
            d[idx] = v;
            recurse(idx + 1, remaining - v, d, n_prev, t, beta, best);
        }
        d[idx] = 0;
    }
    recurse(0, bound, &mut d, n_prev, t, beta, &mut best);
    let _ = agents;
    best
}

/// Smallest `c` with `P(Bin(n, p) <= c) >= level`.
pub fn binomial_upper_quantile(n: u64, p: f64, level: f64) -> u64 {
    let mut pmf = (1.0 - p).powf(n as f64);
    let mut cdf = pmf;
    let mut c = 0;
    while cdf < level && c < n {
        pmf *= (n - c) as f64 / (c + 1) as f64 * p / (1.0 - p);
        c += 1;
        cdf += pmf;
    }
    c
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
