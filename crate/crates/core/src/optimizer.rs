//! Two-objective search over browser reserve fractions.
//!
//! Step one searches `beta` under near-optimal fulfillment with an
//! NSGA-II style proposer (non-dominated rank, crowding distance, blend
//! crossover, clipped Gaussian perturbation). Step two re-evaluates every
//! frontier point as a tiered policy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fulfillment::RewardVector;
use crate::model::{Fulfillment, PolicySpec, Scenario};
use crate::objectives;
use crate::rng::{self, Stream};
use crate::simulator::{self, Baselines, SimConfig};

/// Objective estimate for one `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub f: f64,
    pub g: f64,
    pub se_f: f64,
    pub se_g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub beta: Vec<f64>,
    pub f: f64,
    pub g: f64,
    pub se_f: f64,
    pub se_g: f64,
    pub seed: u64,
    pub replications: u32,
    /// Archive hypervolume right after this entry was inserted.
    pub hypervolume: f64,
}

/// `a` weakly dominates `b`: at least as good in both objectives.
fn weakly_dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 >= b.1
}

fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    weakly_dominates(a, b) && a != b
}

/// Mutually non-dominated `(f, g)` points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    entries: Vec<ArchiveEntry>,
}

impl ParetoArchive {
    pub fn new() -> Self {
        ParetoArchive::default()
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.f, e.g)).collect()
    }

    /// Inserts unless an existing entry is at least as good in both
    /// objectives; evicts entries the newcomer dominates. Returns whether
    /// the entry was kept.
    pub fn insert(&mut self, mut entry: ArchiveEntry) -> bool {
        let point = (entry.f, entry.g);
        if self.entries.iter().any(|e| weakly_dominates((e.f, e.g), point)) {
            return false;
        }
        self.entries.retain(|e| !weakly_dominates(point, (e.f, e.g)));
        self.entries.push(entry.clone());
        entry.hypervolume = self.hypervolume();
        *self.entries.last_mut().expect("just pushed") = entry;
        true
    }

    pub fn hypervolume(&self) -> f64 {
        hypervolume(&self.points())
    }

    /// Entries ordered by decreasing `f`.
    pub fn sorted(&self) -> Vec<ArchiveEntry> {
        let mut out = self.entries.clone();
        out.sort_by(|a, b| b.f.total_cmp(&a.f).then(a.g.total_cmp(&b.g)));
        out
    }
}

/// Area dominated by `points` relative to the origin.
pub fn hypervolume(points: &[(f64, f64)]) -> f64 {
    let mut sorted: Vec<(f64, f64)> = points.iter().map(|&(f, g)| (f.max(0.0), g.max(0.0))).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut covered = 0.0;
    let mut area = 0.0;
    for (f, g) in sorted {
        if g > covered {
            area += f * (g - covered);
            covered = g;
        }
    }
    area
}

/// Maps a reserve vector to objective estimates.
pub trait Evaluator: Sync {
    fn branch_count(&self) -> usize;
    fn evaluate(&self, beta: &[f64]) -> Result<Estimate>;
    fn seed(&self) -> u64 {
        0
    }
    fn replications(&self) -> u32 {
        1
    }
}

/// Simulation-backed evaluation under near-optimal fulfillment with
/// usage-aligned rewards and common random numbers.
pub struct SimEvaluator<'a> {
    pub scenario: &'a Scenario,
    pub baselines: &'a Baselines,
    pub rewards: RewardVector,
    pub config: SimConfig,
}

impl<'a> SimEvaluator<'a> {
    pub fn new(scenario: &'a Scenario, baselines: &'a Baselines, config: SimConfig) -> Result<Self> {
        Ok(SimEvaluator {
            rewards: crate::fulfillment::usage_rewards(scenario, &baselines.baseline_co)?,
            scenario,
            baselines,
            config,
        })
    }

    pub fn evaluate_policy(&self, policy: &PolicySpec) -> Result<objectives::Evaluation> {
        let output = simulator::run(self.scenario, policy, Some(&self.rewards), &self.config)?;
        objectives::evaluate(self.scenario, self.baselines, &output)
    }
}

impl Evaluator for SimEvaluator<'_> {
    fn branch_count(&self) -> usize {
        self.scenario.branch_count()
    }

    fn evaluate(&self, beta: &[f64]) -> Result<Estimate> {
        let e = self.evaluate_policy(&PolicySpec::new(beta.to_vec(), Fulfillment::NearOptimal))?;
        Ok(Estimate {
            f: e.point.f,
            g: e.point.g,
            se_f: e.se_f,
            se_g: e.se_g,
        })
    }

    fn seed(&self) -> u64 {
        self.config.master_seed
    }

    fn replications(&self) -> u32 {
        self.config.replications
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub population_cap: usize,
    pub crossover_rate: f64,
    /// Standard deviation of the per-coordinate perturbation.
    pub mutation_scale: f64,
    /// Probability that a coordinate is perturbed.
    pub mutation_rate: f64,
    pub seed: u64,
    pub replications: u32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            batch_size: 16,
            iterations: 100,
            population_cap: 64,
            crossover_rate: 0.9,
            mutation_scale: 0.15,
            mutation_rate: 0.3,
            seed: 0,
            replications: 10,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.population_cap < 2 {
            return Err(Error::Config("population_cap must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config("crossover_rate and mutation_rate must lie in [0, 1]".into()));
        }
        if !(self.mutation_scale >= 0.0) {
            return Err(Error::Config("mutation_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// An evaluated search point.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub beta: Vec<f64>,
    pub estimate: Estimate,
}

impl Candidate {
    fn point(&self) -> (f64, f64) {
        (self.estimate.f, self.estimate.g)
    }
}

/// Source of new reserve vectors given the current population.
pub trait Proposer {
    fn propose(&mut self, population: &[Candidate], count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>>;
}

/// Non-dominated front index of each point (0 = first front).
pub fn nondominated_ranks(points: &[(f64, f64)]) -> Vec<usize> {
    let n = points.len();
    let mut rank = vec![usize::MAX; n];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut level = 0;
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&k| dominates(points[k], points[i])))
            .collect();
        for &i in &front {
            rank[i] = level;
        }
        remaining.retain(|i| rank[*i] == usize::MAX);
        level += 1;
    }
    rank
}

/// Crowding distance within each front; boundary points get infinity.
pub fn crowding_distances(points: &[(f64, f64)], ranks: &[usize]) -> Vec<f64> {
    let mut distance = vec![0.0; points.len()];
    let fronts = ranks.iter().copied().max().map_or(0, |m| m + 1);
    for level in 0..fronts {
        let members: Vec<usize> = (0..points.len()).filter(|&i| ranks[i] == level).collect();
        for objective in 0..2 {
            let value = |i: usize| if objective == 0 { points[i].0 } else { points[i].1 };
            let mut order = members.clone();
            order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
            let (Some(&lo), Some(&hi)) = (order.first(), order.last()) else {
                continue;
            };
            let span = value(hi) - value(lo);
            distance[lo] = f64::INFINITY;
            distance[hi] = f64::INFINITY;
            if span <= 0.0 {
                continue;
            }
            for w in order.windows(3) {
                distance[w[1]] += (value(w[2]) - value(w[0])) / span;
            }
        }
    }
    distance
}

/// Keeps the best `cap` candidates by (front, crowding).
fn truncate_population(population: &mut Vec<Candidate>, cap: usize) {
    if population.len() <= cap {
        return;
    }
    let points: Vec<(f64, f64)> = population.iter().map(Candidate::point).collect();
    let ranks = nondominated_ranks(&points);
    let crowd = crowding_distances(&points, &ranks);
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| ranks[a].cmp(&ranks[b]).then(crowd[b].total_cmp(&crowd[a])).then(a.cmp(&b)));
    order.truncate(cap);
    order.sort_unstable();
    let mut keep = vec![false; population.len()];
    for i in order {
        keep[i] = true;
    }
    let mut k = 0;
    population.retain(|_| {
        k += 1;
        keep[k - 1]
    });
}

#[derive(Clone, Debug)]
pub struct EvolutionaryProposer {
    pub crossover_rate: f64,
    pub mutation_scale: f64,
    pub mutation_rate: f64,
    /// Blend crossover extension beyond the parents' interval.
    pub blend_alpha: f64,
}

impl EvolutionaryProposer {
    pub fn from_config(config: &SearchConfig) -> Self {
        EvolutionaryProposer {
            crossover_rate: config.crossover_rate,
            mutation_scale: config.mutation_scale,
            mutation_rate: config.mutation_rate,
            blend_alpha: 0.5,
        }
    }

    fn tournament(&self, ranks: &[usize], crowd: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let a = rng.random_range(0..ranks.len());
        let b = rng.random_range(0..ranks.len());
        let better = |x: usize, y: usize| ranks[x] < ranks[y] || (ranks[x] == ranks[y] && crowd[x] > crowd[y]);
        if better(b, a) {
            b
        } else {
            a
        }
    }
}

impl Proposer for EvolutionaryProposer {
    fn propose(&mut self, population: &[Candidate], count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let points: Vec<(f64, f64)> = population.iter().map(Candidate::point).collect();
        let ranks = nondominated_ranks(&points);
        let crowd = crowding_distances(&points, &ranks);
        let noise = Normal::new(0.0, self.mutation_scale.max(f64::MIN_POSITIVE)).expect("finite scale");
        (0..count)
            .map(|_| {
                let p1 = &population[self.tournament(&ranks, &crowd, rng)].beta;
                let p2 = &population[self.tournament(&ranks, &crowd, rng)].beta;
                let mut child: Vec<f64> = if rng.random::<f64>() < self.crossover_rate {
                    p1.iter()
                        .zip(p2)
                        .map(|(&a, &b)| {
                            let (lo, hi) = (a.min(b), a.max(b));
                            let ext = self.blend_alpha * (hi - lo);
                            rng.random_range(lo - ext..=hi + ext)
                        })
                        .collect()
                } else {
                    p1.clone()
                };
                for x in &mut child {
                    if rng.random::<f64>() < self.mutation_rate {
                        *x += rng.sample(noise);
                    }
                    *x = x.clamp(0.0, 1.0);
                }
                child
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub archive: ParetoArchive,
    /// Every evaluation, in evaluation order.
    pub evaluated: Vec<Candidate>,
    /// Archive hypervolume after initialisation and after each iteration.
    pub hypervolume_trace: Vec<f64>,
}

/// The uniform grid `beta = k / (batch - 1)` used to seed the search.
pub fn initial_batch(branch_count: usize, batch_size: usize) -> Vec<Vec<f64>> {
    (0..batch_size)
        .map(|k| {
            let level = if batch_size == 1 { 0.0 } else { k as f64 / (batch_size - 1) as f64 };
            vec![level; branch_count]
        })
        .collect()
}

pub fn optimize<E: Evaluator>(evaluator: &E, search: &SearchConfig) -> Result<SearchResult> {
    optimize_with(evaluator, &mut EvolutionaryProposer::from_config(search), search)
}

pub fn optimize_with<E: Evaluator, P: Proposer>(
    evaluator: &E,
    proposer: &mut P,
    search: &SearchConfig,
) -> Result<SearchResult> {
    search.validate()?;
    let mut rng = rng::stream(search.seed, 0, 0, Stream::Search);
    let mut archive = ParetoArchive::new();
    let mut population: Vec<Candidate> = Vec::new();
    let mut evaluated = Vec::new();
    let mut trace = Vec::with_capacity(search.iterations + 1);

    let mut batch = initial_batch(evaluator.branch_count(), search.batch_size);
    for iteration in 0..=search.iterations {
        if iteration > 0 {
            batch = proposer.propose(&population, search.batch_size, &mut rng);
        }
        let estimates: Vec<Result<Estimate>> = batch.par_iter().map(|beta| evaluator.evaluate(beta)).collect();
        for (beta, estimate) in batch.drain(..).zip(estimates) {
            let estimate = estimate?;
            archive.insert(ArchiveEntry {
                beta: beta.clone(),
                f: estimate.f,
                g: estimate.g,
                se_f: estimate.se_f,
                se_g: estimate.se_g,
                seed: evaluator.seed(),
                replications: evaluator.replications(),
                hypervolume: 0.0,
            });
            let candidate = Candidate { beta, estimate };
            population.push(candidate.clone());
            evaluated.push(candidate);
        }
        truncate_population(&mut population, search.population_cap);
        trace.push(archive.hypervolume());
    }
    Ok(SearchResult {
        archive,
        evaluated,
        hypervolume_trace: trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TieredPoint {
    pub beta: Vec<f64>,
    pub f_nearopt: f64,
    pub g_nearopt: f64,
    pub f_tiered: f64,
    pub g_tiered: f64,
    pub se_f_tiered: f64,
    pub se_g_tiered: f64,
    pub policy: PolicySpec,
}

/// Derives tiers for every archived `beta` after a near-optimal warm-up and
/// simulates the resulting tiered policy, in archive order (decreasing `f`).
pub fn reevaluate_tiered(archive: &ParetoArchive, evaluator: &SimEvaluator<'_>) -> Result<Vec<TieredPoint>> {
    archive
        .sorted()
        .into_iter()
        .map(|entry| {
            let near = PolicySpec::new(entry.beta.clone(), Fulfillment::NearOptimal);
            let policy = simulator::tierify(evaluator.scenario, &near, &evaluator.rewards, &evaluator.config)?;
            let e = evaluator.evaluate_policy(&policy)?;
            Ok(TieredPoint {
                beta: entry.beta,
                f_nearopt: entry.f,
                g_nearopt: entry.g,
                f_tiered: e.point.f,
                g_tiered: e.point.g,
                se_f_tiered: e.se_f,
                se_g_tiered: e.se_g,
                policy,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(f: f64, g: f64) -> ArchiveEntry {
        ArchiveEntry {
            beta: vec![],
            f,
            g,
            se_f: 0.0,
            se_g: 0.0,
            seed: 0,
            replications: 1,
            hypervolume: 0.0,
        }
    }

    #[test]
    fn hypervolume_examples() {
        assert!((hypervolume(&[(1.0, 0.8), (0.6, 1.0)]) - 0.92).abs() < 1e-15);
        assert_eq!(hypervolume(&[(1.0, 1.0)]), 1.0);
        assert_eq!(hypervolume(&[]), 0.0);
        assert!((hypervolume(&[(1.0, 0.8), (0.6, 1.0), (0.5, 0.5)]) - 0.92).abs() < 1e-15);
    }

    #[test]
    fn archive_keeps_only_nondominated() {
        let mut a = ParetoArchive::new();
        assert!(a.insert(entry(0.5, 0.5)));
        assert!(!a.insert(entry(0.5, 0.5)));
        assert!(!a.insert(entry(0.4, 0.5)));
        assert!(a.insert(entry(0.9, 0.2)));
        assert!(a.insert(entry(0.6, 0.6)));
        assert_eq!(a.points(), vec![(0.9, 0.2), (0.6, 0.6)]);
        assert!((a.entries()[1].hypervolume - a.hypervolume()).abs() < 1e-15);
    }

    #[test]
    fn ranks_and_crowding() {
        let pts = [(1.0, 0.0), (0.5, 0.5), (0.0, 1.0), (0.4, 0.4), (0.1, 0.1)];
        let ranks = nondominated_ranks(&pts);
        assert_eq!(ranks, vec![0, 0, 0, 1, 2]);
        let crowd = crowding_distances(&pts, &ranks);
        assert!(crowd[0].is_infinite() && crowd[2].is_infinite());
        assert!((crowd[1] - 2.0).abs() < 1e-12);
    }

    struct Analytic;

    impl Evaluator for Analytic {
        fn branch_count(&self) -> usize {
            3
        }

        fn evaluate(&self, beta: &[f64]) -> Result<Estimate> {
            let m = beta.iter().sum::<f64>() / beta.len() as f64;
            let spread = beta.iter().map(|b| (b - m).abs()).sum::<f64>();
            Ok(Estimate {
                f: 1.0 - 0.4 * m * m - 0.1 * spread,
                g: 0.8 + 0.2 * m.sqrt() - 0.1 * spread,
                se_f: 0.0,
                se_g: 0.0,
            })
        }
    }

    #[test]
    fn search_is_deterministic_and_monotone() {
        let search = SearchConfig {
            batch_size: 6,
            iterations: 8,
            ..SearchConfig::default()
        };
        let a = optimize(&Analytic, &search).unwrap();
        let b = optimize(&Analytic, &search).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.evaluated.len(), 6 * 9);
        assert!(a.hypervolume_trace.windows(2).all(|w| w[1] >= w[0]));
        let beta0 = a.evaluated[0].estimate;
        let beta1 = a.evaluated[5].estimate;
        assert!(beta0.f >= beta1.f && beta1.g >= beta0.g);
    }

    #[test]
    fn single_candidate_batch() {
        assert_eq!(initial_batch(2, 1), vec![vec![0.0, 0.0]]);
        assert_eq!(initial_batch(1, 3), vec![vec![0.0], vec![0.5], vec![1.0]]);
    }
}
