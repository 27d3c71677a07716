//! Synthetic scenario generator.
//!
//! Branches get a synthetic income rank; hold fractions follow that rank
//! with strength `hold_corr` (Gaussian-copula style mixing of normal
//! scores). Titles are drawn as candidates and kept only when stocked at
//! `availability_min_branches` branches or more.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Branch, Scenario, Title};
use crate::rng::{self, Stream};

/// Candidate titles drawn per requested title before giving up.
const ATTEMPTS_PER_TITLE: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    fn at(&self, u: f64) -> f64 {
        self.low + (self.high - self.low) * u
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub branch_count: usize,
    pub title_count: usize,
    pub seed: u64,
    pub demand_dist: Range,
    /// Range the hold fractions are spread over.
    pub hold_dist: Range,
    /// Rank coupling between income and hold fraction, in `[-1, 1]`.
    pub hold_corr: f64,
    /// Beta distribution shape parameters for desirability.
    pub desirability_shape: [f64; 2],
    pub copies_mean: f64,
    /// How far per-branch copy means follow demand size: 0 stocks every
    /// branch alike, 1 stocks in proportion to `p_i`.
    pub copies_follow_demand: f64,
    pub availability_min_branches: usize,
    pub loan_days: u32,
    pub warmup_days: u32,
    pub sim_days: u32,
    pub calibration_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            branch_count: 50,
            title_count: 500,
            seed: 1,
            demand_dist: Range::new(0.01, 0.05),
            hold_dist: Range::new(0.2, 0.9),
            hold_corr: 0.7,
            desirability_shape: [2.0, 3.0],
            copies_mean: 0.6,
            copies_follow_demand: 0.0,
            availability_min_branches: 20,
            loan_days: 21,
            warmup_days: 100,
            sim_days: 365,
            calibration_scale: 1.0,
        }
    }
}

impl GeneratorConfig {
    /// Sized like the full system: 84 branches and 3,809 titles.
    pub fn full_size() -> Self {
        GeneratorConfig {
            branch_count: 84,
            title_count: 3809,
            copies_mean: 0.406,
            ..GeneratorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.branch_count == 0 || self.title_count == 0 {
            return bad("branch_count and title_count must be positive");
        }
        let d = self.demand_dist;
        if !(d.low > 0.0 && d.low <= d.high && d.high <= 1.0) {
            return bad("demand_dist must satisfy 0 < low <= high <= 1");
        }
        let h = self.hold_dist;
        if !(h.low >= 0.0 && h.low <= h.high && h.high <= 1.0) {
            return bad("hold_dist must satisfy 0 <= low <= high <= 1");
        }
        if !(-1.0..=1.0).contains(&self.hold_corr) {
            return bad("hold_corr must lie in [-1, 1]");
        }
        if !self.desirability_shape.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return bad("desirability_shape parameters must be positive");
        }
        if !(self.copies_mean > 0.0 && self.copies_mean.is_finite()) {
            return bad("copies_mean must be positive");
        }
        if !(0.0..=1.0).contains(&self.copies_follow_demand) {
            return bad("copies_follow_demand must lie in [0, 1]");
        }
        if self.availability_min_branches > self.branch_count {
            return bad("availability_min_branches exceeds branch_count");
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let config: GeneratorConfig = io::load_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::save_json(path, self)
    }
}

/// A generated scenario together with each branch's income rank
/// (0 = lowest income).
#[derive(Clone, Debug)]
pub struct Generated {
    pub scenario: Scenario,
    pub income_rank: Vec<usize>,
}

pub fn generate(config: &GeneratorConfig) -> Result<Scenario> {
    generate_with_income(config).map(|g| g.scenario)
}

pub fn generate_with_income(config: &GeneratorConfig) -> Result<Generated> {
    config.validate()?;
    let n = config.branch_count;
    let mut rng = rng::stream(config.seed, 0, 0, Stream::Scenario);

    let mut income_rank: Vec<usize> = (0..n).collect();
    income_rank.shuffle(&mut rng);

    let mut scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    scores.sort_by(f64::total_cmp);
    let rho = config.hold_corr;
    let mixed: Vec<f64> = (0..n)
        .map(|i| {
            let noise: f64 = rng.sample(StandardNormal);
            rho * scores[income_rank[i]] + (1.0 - rho * rho).sqrt() * noise
        })
        .collect();
    let hold_rank = ranks(&mixed);

    let branches: Vec<Branch> = (0..n)
        .map(|i| {
            let jitter: f64 = rng.random();
            Branch {
                demand_size: config.demand_dist.at(rng.random()),
                hold_fraction: config.hold_dist.at((hold_rank[i] as f64 + jitter) / n as f64),
                label: format!("Q{}", 1 + 4 * income_rank[i] / n),
            }
        })
        .collect();

    let mean_p = branches.iter().map(|b| b.demand_size).sum::<f64>() / n as f64;
    let copy_dists: Vec<Poisson<f64>> = branches
        .iter()
        .map(|b| {
            let w = config.copies_follow_demand;
            let mean = config.copies_mean * ((1.0 - w) + w * b.demand_size / mean_p);
            Poisson::new(mean).expect("positive mean")
        })
        .collect();
    let beta = Beta::new(config.desirability_shape[0], config.desirability_shape[1]).expect("validated shape");

    let mut titles = Vec::with_capacity(config.title_count);
    let mut columns: Vec<Vec<u32>> = Vec::with_capacity(config.title_count);
    for _ in 0..config.title_count * ATTEMPTS_PER_TITLE {
        if titles.len() == config.title_count {
            break;
        }
        let desirability = beta.sample(&mut rng).clamp(1e-3, 1.0);
        let column: Vec<u32> = copy_dists.iter().map(|dist| dist.sample(&mut rng) as u32).collect();
        let stocked = column.iter().filter(|&&c| c > 0).count();
        if stocked > 0 && stocked >= config.availability_min_branches {
            titles.push(Title { desirability });
            columns.push(column);
        }
    }
    if titles.is_empty() {
        return Err(Error::EmptyScenario);
    }

    let inventory = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let scenario = Scenario {
        branches,
        titles,
        inventory,
        loan_days: config.loan_days,
        warmup_days: config.warmup_days,
        sim_days: config.sim_days,
        calibration_scale: config.calibration_scale,
    };
    scenario.validate()?;
    Ok(Generated { scenario, income_rank })
}

/// Rank of each value (0 = smallest), ties broken by position.
fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut rank = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Spearman rank correlation of two samples without ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ra, rb) = (ranks(a), ranks(b));
    let d2: f64 = ra.iter().zip(&rb).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
