//! Exact reference computations for small single-title instances: the
//! finite-horizon dynamic program, the fluid LP upper bound, and the exact
//! expected reward of the near-optimal policy.
//!
//! Everything here enumerates the full inventory lattice `prod_a (c_a + 1)`,
//! so instances are capped at 8 copies and 12 periods.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fulfillment::{approx_value, compute_gammas_general, decide_general, GammaTable, PatronDemand};
use crate::io;
use crate::model::{compatibility, PatronClass};

pub const MAX_COPIES: u32 = 8;
pub const MAX_HORIZON: usize = 12;
pub const STATE_LIMIT: u64 = 10_000_000;

const FLOW_EPS: f64 = 1e-12;

/// A single-title network with at most one arrival per period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallInstance {
    pub capacities: Vec<u32>,
    pub patrons: Vec<PatronDemand>,
    pub horizon: usize,
}

impl SmallInstance {
    /// Branch-structured instance: copy classes `(i, Reserve)`, `(i, Open)`
    /// and patron classes `(i, Browse)`, `(i, Hold)` in dense index order.
    pub fn library(capacities: Vec<u32>, rates: &[f64], rewards: &[f64], horizon: usize) -> Self {
        let n = capacities.len() / 2;
        let patrons = (0..2 * n)
            .map(|j| PatronDemand {
                rate: rates[j],
                reward: rewards[j],
                compatible: compatibility(PatronClass::from_index(j), n)
                    .into_iter()
                    .map(|a| a.index())
                    .collect(),
            })
            .collect();
        SmallInstance {
            capacities,
            patrons,
            horizon,
        }
    }

    pub fn state_count(&self) -> u64 {
        self.capacities.iter().map(|&c| u64::from(c) + 1).product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInstance(msg));
        let copies: u32 = self.capacities.iter().sum();
        if copies > MAX_COPIES {
            return bad(format!("{copies} copies exceed the limit of {MAX_COPIES}"));
        }
        if self.horizon == 0 || self.horizon > MAX_HORIZON {
            return bad(format!("horizon {} not in 1..={MAX_HORIZON}", self.horizon));
        }
        let mut total_rate = 0.0;
        for (j, p) in self.patrons.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.rate) {
                return bad(format!("patron {j}: rate {} not in [0,1]", p.rate));
            }
            if !(p.reward.is_finite() && p.reward >= 0.0) {
                return bad(format!("patron {j}: reward {} must be non-negative", p.reward));
            }
            if p.compatible.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("patron {j}: compatible classes must be strictly ascending"));
            }
            if p.compatible.iter().any(|&a| a >= self.capacities.len()) {
                return bad(format!("patron {j}: compatible class out of range"));
            }
            total_rate += p.rate;
        }
        if total_rate > 1.0 + 1e-12 {
            return bad(format!("arrival probabilities sum to {total_rate} > 1"));
        }
        let states = self.state_count().saturating_mul(self.horizon as u64);
        if states > STATE_LIMIT {
            return Err(Error::StateSpaceTooLarge {
                states,
                limit: STATE_LIMIT,
            });
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let inst: SmallInstance = io::load_json(path)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn gammas(&self) -> GammaTable {
        compute_gammas_general(&self.capacities, &self.patrons, self.horizon)
    }
}

/// Mixed-radix addressing of inventory vectors `0 <= x <= c`.
#[derive(Clone, Debug)]
struct Lattice {
    caps: Vec<u32>,
    strides: Vec<usize>,
    size: usize,
}

impl Lattice {
    fn new(caps: &[u32]) -> Self {
        let mut strides = Vec::with_capacity(caps.len());
        let mut size = 1usize;
        for &c in caps {
            strides.push(size);
            size *= c as usize + 1;
        }
        Lattice {
            caps: caps.to_vec(),
            strides,
            size,
        }
    }

    fn index(&self, x: &[u32]) -> usize {
        x.iter().zip(&self.strides).map(|(&v, &s)| v as usize * s).sum()
    }

    /// Visits every state in index order with its decoded vector.
    fn for_each(&self, mut visit: impl FnMut(usize, &[u32])) {
        let mut x = vec![0u32; self.caps.len()];
        for s in 0..self.size {
            visit(s, &x);
            for (a, v) in x.iter_mut().enumerate() {
                if *v < self.caps[a] {
                    *v += 1;
                    break;
                }
                *v = 0;
            }
        }
    }
}

/// `V_t(x)` for every `t in 1..=T+1` and every `x <= c`.
#[derive(Clone, Debug)]
pub struct ValueTable {
    lattice: Lattice,
    horizon: usize,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn value(&self, t: usize, x: &[u32]) -> f64 {
        assert!((1..=self.horizon + 1).contains(&t));
        self.values[(t - 1) * self.lattice.size + self.lattice.index(x)]
    }

    pub fn initial(&self) -> f64 {
        self.value(1, &self.lattice.caps)
    }

    pub fn capacities(&self) -> &[u32] {
        &self.lattice.caps
    }
}

/// Backward induction of
/// `V_t(x) = V_{t+1}(x) + sum_j lambda_j 1(stock) (r_j + max_a V_{t+1}(x - e_a) - V_{t+1}(x))^+`.
pub fn solve_dp(inst: &SmallInstance) -> Result<ValueTable> {
    inst.validate()?;
    let lattice = Lattice::new(&inst.capacities);
    let size = lattice.size;
    let horizon = inst.horizon;
    let mut values = vec![0.0; (horizon + 1) * size];
    for t in (1..=horizon).rev() {
        let (head, tail) = values.split_at_mut(t * size);
        let current = &mut head[(t - 1) * size..];
        let next = &tail[..size];
        lattice.for_each(|s, x| {
            let stay = next[s];
            let mut v = stay;
            for p in &inst.patrons {
                let best = p
                    .compatible
                    .iter()
                    .filter(|&&a| x[a] > 0)
                    .map(|&a| next[s - lattice.strides[a]])
                    .fold(f64::NEG_INFINITY, f64::max);
                if best > f64::NEG_INFINITY {
                    v += p.rate * (p.reward + best - stay).max(0.0);
                }
            }
            current[s] = v;
        });
    }
    Ok(ValueTable {
        lattice,
        horizon,
        values,
    })
}

/// Fluid LP `max sum_j r_j sum_a z_ja` subject to per-patron expected demand
/// `T lambda_j` and per-class capacity `c_a`.
///
/// The reward depends only on the patron class, so the servable demand sets
/// form a polymatroid and the greedy order is optimal: patrons are admitted in
/// descending reward (stable by index), each pushing as much flow as the
/// residual bipartite network allows via augmenting paths.
pub fn lp_bound(inst: &SmallInstance) -> f64 {
    let classes = inst.capacities.len();
    let k = inst.patrons.len();
    let cap: Vec<f64> = inst.capacities.iter().map(|&c| f64::from(c)).collect();
    let mut load = vec![0.0; classes];
    let mut flow = vec![vec![0.0; classes]; k];
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| inst.patrons[b].reward.total_cmp(&inst.patrons[a].reward));

    let mut value = 0.0;
    for &j in &order {
        let demand = inst.horizon as f64 * inst.patrons[j].rate;
        let mut remaining = demand;
        while remaining > FLOW_EPS {
            let Some((path, sink)) = augmenting_path(inst, j, &cap, &load, &flow) else {
                break;
            };
            // every hop after the first moves patron p off the class it came through
            let mut delta = remaining.min(cap[sink] - load[sink]);
            for w in path.windows(2) {
                let (p, _) = w[1];
                let (_, from) = w[0];
                delta = delta.min(flow[p][from]);
            }
            apply_path(&path, sink, j, delta, &mut flow, &mut load);
            remaining -= delta;
        }
        value += inst.patrons[j].reward * (demand - remaining.max(0.0));
    }
    value
}

/// BFS over the residual graph from patron `source`. Returns the sequence of
/// `(patron, class)` edges taken in alternating order together with the class
/// that has spare capacity.
fn augmenting_path(
    inst: &SmallInstance,
    source: usize,
    cap: &[f64],
    load: &[f64],
    flow: &[Vec<f64>],
) -> Option<(Vec<(usize, usize)>, usize)> {
    let classes = cap.len();
    let k = inst.patrons.len();
    // parent of a class: the patron we came from; parent of a patron: the class
    let mut class_parent: Vec<Option<usize>> = vec![None; classes];
    let mut patron_parent: Vec<Option<usize>> = vec![None; k];
    let mut seen_patron = vec![false; k];
    seen_patron[source] = true;
    let mut queue = std::collections::VecDeque::from([source]);
    while let Some(p) = queue.pop_front() {
        for &a in &inst.patrons[p].compatible {
            if cap[a] <= 0.0 || class_parent[a].is_some() {
                continue;
            }
            class_parent[a] = Some(p);
            if cap[a] - load[a] > FLOW_EPS {
                let mut edges = Vec::new();
                let mut class = a;
                loop {
                    let patron = class_parent[class].expect("visited class has parent");
                    edges.push((patron, class));
                    if patron == source {
                        break;
                    }
                    class = patron_parent[patron].expect("visited patron has parent");
                }
                edges.reverse();
                return Some((edges, a));
            }
            for q in 0..k {
                if !seen_patron[q] && flow[q][a] > FLOW_EPS {
                    seen_patron[q] = true;
                    patron_parent[q] = Some(a);
                    queue.push_back(q);
                }
            }
        }
    }
    None
}

/// Pushes `delta` along a path `source -> a0 <- p1 -> a1 <- p2 ... -> sink`.
fn apply_path(
    edges: &[(usize, usize)],
    sink: usize,
    source: usize,
    delta: f64,
    flow: &mut [Vec<f64>],
    load: &mut [f64],
) {
    debug_assert_eq!(edges[0].0, source);
    for (idx, &(p, a)) in edges.iter().enumerate() {
        flow[p][a] += delta;
        if idx > 0 {
            // patron p previously drew from the class we arrived through
            let (_, from) = edges[idx - 1];
            flow[p][from] -= delta;
        }
    }
    load[sink] += delta;
}

/// Exact `R_1(c)` of the near-optimal policy driven by `gammas`.
pub fn policy_value(inst: &SmallInstance, gammas: &GammaTable) -> Result<f64> {
    inst.validate()?;
    if gammas.horizon() != inst.horizon || gammas.class_count() != inst.capacities.len() {
        return Err(Error::InvalidInstance(
            "coefficient table does not match the instance".into(),
        ));
    }
    let lattice = Lattice::new(&inst.capacities);
    let size = lattice.size;
    let mut next = vec![0.0; size];
    let mut current = vec![0.0; size];
    for t in (1..=inst.horizon).rev() {
        lattice.for_each(|s, x| {
            let stay = next[s];
            let mut v = stay;
            for p in &inst.patrons {
                if let Some(a) = decide_general(gammas, x, t, &p.compatible, p.reward) {
                    v += p.rate * (p.reward + next[s - lattice.strides[a]] - stay);
                }
            }
            current[s] = v;
        });
        std::mem::swap(&mut next, &mut current);
    }
    Ok(next[lattice.index(&inst.capacities)])
}

/// All oracle quantities for one instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleReport {
    pub dp_value: f64,
    pub lp_value: f64,
    pub approx_value: f64,
    pub policy_value: f64,
}

impl OracleReport {
    pub fn policy_ratio(&self) -> f64 {
        if self.dp_value == 0.0 {
            1.0
        } else {
            self.policy_value / self.dp_value
        }
    }

    pub fn approx_ratio(&self) -> f64 {
        if self.lp_value == 0.0 {
            1.0
        } else {
            self.approx_value / self.lp_value
        }
    }
}

pub fn evaluate(inst: &SmallInstance) -> Result<OracleReport> {
    let dp = solve_dp(inst)?;
    let gammas = inst.gammas();
    Ok(OracleReport {
        dp_value: dp.initial(),
        lp_value: lp_bound(inst),
        approx_value: approx_value(&gammas, &inst.capacities, 1),
        policy_value: policy_value(inst, &gammas)?,
    })
}

/// Random branch-structured instance with dyadic rates (multiples of 1/64,
/// summing to at most 1) and dyadic rewards (multiples of 1/8).
pub fn random_library_instance<R: Rng + ?Sized>(
    rng: &mut R,
    max_branches: usize,
    max_copies: u32,
    max_horizon: usize,
) -> SmallInstance {
    let n = rng.random_range(1..=max_branches);
    let classes = 2 * n;
    let copies = rng.random_range(1..=max_copies);
    let mut capacities = vec![0u32; classes];
    for _ in 0..copies {
        capacities[rng.random_range(0..classes)] += 1;
    }
    let raw: Vec<u32> = (0..classes).map(|_| rng.random_range(0..=32)).collect();
    let total: u32 = raw.iter().sum();
    let rates: Vec<f64> = raw
        .iter()
        .map(|&u| {
            let k = if total > 64 { u * 64 / total } else { u };
            f64::from(k) / 64.0
        })
        .collect();
    let uniform = rng.random_bool(0.3);
    let rewards: Vec<f64> = (0..classes)
        .map(|_| {
            if uniform {
                1.0
            } else {
                f64::from(rng.random_range(0..=8u32)) / 8.0
            }
        })
        .collect();
    let horizon = rng.random_range(1..=max_horizon);
    SmallInstance::library(capacities, &rates, &rewards, horizon)
}
