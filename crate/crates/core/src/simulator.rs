//! Day-by-day holds simulator.
//!
//! Titles never interact, so each `(replication, title)` pair is simulated
//! start to finish on its own seeded streams and the per-title outcomes are
//! reduced in fixed order. Output is therefore identical for any worker count.
//!
//! One simulated day for one title:
//! 1. loans due today return to the class they were taken from;
//! 2. at every window start (each `loan_days` days) the near-optimal policy
//!    rebuilds its coefficient table from the copies on the shelf;
//! 3. each patron class independently produces a request with its daily
//!    arrival probability;
//! 4. the day's requests are shuffled and served one by one against live stock;
//! 5. a served copy is away for the checkout day plus `loan_days` full days;
//! 6. after the warm-up, checkouts, availability and hold transfers are tallied.

use std::collections::VecDeque;
use std::path::Path;

use rand::distr::{Bernoulli, Distribution};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Binomial;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fulfillment::{
    compute_gammas, decide_near_optimal, decide_random_available, decide_tiered, Decision,
    GammaTable, RewardVector, TierAssignment, UnitRewardAccumulator,
};
use crate::io;
use crate::model::{arrival_rates, ArrivalRates, Fulfillment, Mode, PatronClass, PolicySpec, Pool, Scenario};
use crate::objectives;
use crate::rng::{self, Stream};

/// Desirability weights on hold transfers are tallied in units of `2^-40`
/// so that flow totals and net inflows are exact integers.
pub const FLOW_SCALE: f64 = 1_099_511_627_776.0;

pub fn desirability_units(desirability: f64) -> i128 {
    (desirability * FLOW_SCALE).round() as i128
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub replications: u32,
    pub master_seed: u64,
    pub measure_days: u32,
}

impl SimConfig {
    pub fn new(replications: u32, master_seed: u64, measure_days: u32) -> Self {
        SimConfig {
            replications,
            master_seed,
            measure_days,
        }
    }

    /// Measures over the scenario's own `sim_days`.
    pub fn for_scenario(scenario: &Scenario, replications: u32, master_seed: u64) -> Self {
        SimConfig::new(replications, master_seed, scenario.sim_days)
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.measure_days == 0 {
            return Err(Error::Config("measure_days must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Loan {
    pub return_day: u32,
    pub home_class: u32,
}

/// Shelf stock per copy class plus outstanding loans of one title.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TitleState {
    pub on_shelf: Vec<u32>,
    pub loans: VecDeque<Loan>,
}

impl TitleState {
    pub fn total_copies(&self) -> u32 {
        self.on_shelf.iter().sum::<u32>() + self.loans.len() as u32
    }

    pub fn open_stock(&self) -> Vec<u32> {
        self.on_shelf.iter().skip(1).step_by(2).copied().collect()
    }
}

/// Splits every branch's copies of `title` into reserve `~ Binomial(c, beta_i)`
/// and open `c - reserve`.
pub fn init_title<R: Rng + ?Sized>(scenario: &Scenario, beta: &[f64], title: usize, rng: &mut R) -> TitleState {
    let n = scenario.branch_count();
    let mut on_shelf = vec![0u32; 2 * n];
    for i in 0..n {
        let copies = scenario.copies(i, title);
        let reserve = if copies == 0 {
            0
        } else {
            Binomial::new(u64::from(copies), beta[i])
                .expect("beta validated into [0, 1]")
                .sample(rng) as u32
        };
        on_shelf[2 * i] = reserve;
        on_shelf[2 * i + 1] = copies - reserve;
    }
    TitleState {
        on_shelf,
        loans: VecDeque::new(),
    }
}

/// Reserve initialisation for every title of one replication, each title on
/// its own stream.
pub fn init_reserves(scenario: &Scenario, beta: &[f64], master_seed: u64, replication: u32) -> Vec<TitleState> {
    (0..scenario.title_count())
        .map(|l| {
            let mut rng = rng::stream(master_seed, u64::from(replication), l as u64, Stream::Reserves);
            init_title(scenario, beta, l, &mut rng)
        })
        .collect()
}

/// Desirability-weighted hold transfers `source -> pickup`, kept in exact
/// fixed-point units and summed over replications.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowLedger {
    branches: usize,
    units: Vec<i128>,
}

impl FlowLedger {
    pub fn new(branches: usize) -> Self {
        FlowLedger {
            branches,
            units: vec![0; branches * branches],
        }
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn record(&mut self, source: usize, pickup: usize, desirability: f64) {
        self.units[source * self.branches + pickup] += desirability_units(desirability);
    }

    pub fn units(&self, source: usize, pickup: usize) -> i128 {
        self.units[source * self.branches + pickup]
    }

    fn add_units(&mut self, source: usize, pickup: usize, units: i128) {
        self.units[source * self.branches + pickup] += units;
    }

    fn merge(&mut self, other: &FlowLedger) {
        for (a, b) in self.units.iter_mut().zip(&other.units) {
            *a += b;
        }
    }

    /// `received - shipped` per branch, in units.
    pub fn net_units(&self) -> Vec<i128> {
        let n = self.branches;
        (0..n)
            .map(|i| (0..n).filter(|&k| k != i).map(|k| self.units(k, i) - self.units(i, k)).sum())
            .collect()
    }
}

/// Tallies over the measured days. Counts are replication means; `flows`
/// holds totals over all `replications`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimMetrics {
    pub replications: u32,
    pub measure_days: u32,
    pub co_browse: Vec<f64>,
    pub co_hold: Vec<f64>,
    /// `availability[branch][title]`: days ending with a copy on the shelf.
    pub availability: Vec<Vec<f64>>,
    pub flows: FlowLedger,
    pub hold_requests: f64,
    pub rejected_holds: f64,
    pub browse_requests: f64,
    pub rejected_browses: f64,
}

impl SimMetrics {
    pub fn branch_count(&self) -> usize {
        self.co_browse.len()
    }

    pub fn checkouts(&self, branch: usize) -> f64 {
        self.co_browse[branch] + self.co_hold[branch]
    }

    /// Mean desirability-weighted transfers from `source` to `pickup`.
    pub fn flow(&self, source: usize, pickup: usize) -> f64 {
        self.flows.units(source, pickup) as f64 / FLOW_SCALE / f64::from(self.replications)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub metrics: SimMetrics,
    pub per_replication: Vec<SimMetrics>,
}

/// Per-day invariant checks collected by [`audit`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub title_days_checked: u64,
    pub conservation_violations: u64,
    pub reserve_hold_violations: u64,
    pub empty_class_violations: u64,
    pub net_inflow_violations: u64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.conservation_violations == 0
            && self.reserve_hold_violations == 0
            && self.empty_class_violations == 0
            && self.net_inflow_violations == 0
    }

    fn merge(&mut self, other: &AuditReport) {
        self.title_days_checked += other.title_days_checked;
        self.conservation_violations += other.conservation_violations;
        self.reserve_hold_violations += other.reserve_hold_violations;
        self.empty_class_violations += other.empty_class_violations;
        self.net_inflow_violations += other.net_inflow_violations;
    }
}

enum Rule<'a> {
    NearOptimal(&'a RewardVector),
    Tiered { tiers: TierAssignment, local_first: bool },
    RandomAvailable,
}

struct Context<'a> {
    scenario: &'a Scenario,
    rates: ArrivalRates,
    beta: &'a [f64],
    rule: Rule<'a>,
    config: &'a SimConfig,
}

impl<'a> Context<'a> {
    fn new(
        scenario: &'a Scenario,
        policy: &'a PolicySpec,
        rewards: Option<&'a RewardVector>,
        config: &'a SimConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut checked = policy.clone();
        checked.validate(scenario.branch_count())?;
        if checked.beta != policy.beta {
            return Err(Error::InvalidPolicy("beta must lie in [0, 1]".into()));
        }
        let rule = match policy.fulfillment {
            Fulfillment::NearOptimal => {
                let rewards = rewards.ok_or_else(|| {
                    Error::Config("NearOptimal fulfillment needs a reward vector".into())
                })?;
                if rewards.as_slice().len() != 2 * scenario.branch_count() {
                    return Err(Error::Config("reward vector does not match branch count".into()));
                }
                Rule::NearOptimal(rewards)
            }
            Fulfillment::Tiered => {
                let tiers = policy.tier_assignment.clone().ok_or_else(|| {
                    Error::Config("Tiered fulfillment needs a tier assignment".into())
                })?;
                Rule::Tiered {
                    tiers: TierAssignment::from_tiers(tiers)?,
                    local_first: policy.local_first,
                }
            }
            Fulfillment::RandomAvailable => Rule::RandomAvailable,
        };
        Ok(Context {
            scenario,
            rates: arrival_rates(scenario)?,
            beta: &policy.beta,
            rule,
            config,
        })
    }

    fn total_days(&self) -> u32 {
        self.scenario.warmup_days + self.config.measure_days
    }
}

/// Where to stop a title run.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Horizon {
    Full,
    /// Stop at the start of the first measured day, after returns.
    WarmupEnd,
}

#[derive(Default)]
struct TitleOutcome {
    co_browse: Vec<u32>,
    co_hold: Vec<u32>,
    availability: Vec<u32>,
    transfers: Vec<(u32, u32)>,
    hold_requests: u32,
    rejected_holds: u32,
    browse_requests: u32,
    rejected_browses: u32,
    audit: AuditReport,
    /// Set for `Horizon::WarmupEnd`: open-class coefficients at `t = 1` and
    /// open stock, per branch.
    warmup_snapshot: Option<(Vec<f64>, Vec<u32>)>,
}

fn simulate_title(ctx: &Context<'_>, replication: u32, title: usize, horizon: Horizon, audit: bool) -> TitleOutcome {
    let scenario = ctx.scenario;
    let n = scenario.branch_count();
    let seed = ctx.config.master_seed;
    let rep = u64::from(replication);
    let loan_days = scenario.loan_days;
    let warmup = scenario.warmup_days;
    let total_days = ctx.total_days();

    let mut reserve_rng = rng::stream(seed, rep, title as u64, Stream::Reserves);
    let mut arrival_rng = rng::stream(seed, rep, title as u64, Stream::Arrivals);
    let mut decision_rng = rng::stream(seed, rep, title as u64, Stream::Decisions);

    let mut state = init_title(scenario, ctx.beta, title, &mut reserve_rng);
    let initial_copies = state.total_copies();
    let rates = ctx.rates.title(title);
    let arrivals: Vec<(usize, Bernoulli)> = rates
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(j, &p)| (j, Bernoulli::new(p).expect("rate validated into [0, 1]")))
        .collect();

    let mut out = TitleOutcome {
        co_browse: vec![0; n],
        co_hold: vec![0; n],
        availability: vec![0; n],
        ..TitleOutcome::default()
    };
    let mut gammas: Option<GammaTable> = None;
    let mut requests: Vec<usize> = Vec::with_capacity(arrivals.len());
    let mut net_units = if audit { vec![0i128; n] } else { Vec::new() };
    let weight = desirability_units(scenario.titles[title].desirability);

    for day in 0..total_days {
        while state.loans.front().is_some_and(|loan| loan.return_day == day) {
            let loan = state.loans.pop_front().expect("front exists");
            state.on_shelf[loan.home_class as usize] += 1;
        }

        if horizon == Horizon::WarmupEnd && day == warmup {
            let rewards = match &ctx.rule {
                Rule::NearOptimal(r) => *r,
                _ => unreachable!("warm-up snapshots use the near-optimal rule"),
            };
            let table = compute_gammas(rates, &state.on_shelf, rewards, loan_days as usize);
            let first = table.period(1);
            let gamma_open = (0..n).map(|i| first[2 * i + 1]).collect();
            out.warmup_snapshot = Some((gamma_open, state.open_stock()));
            return out;
        }

        let position = day % loan_days;
        if let Rule::NearOptimal(rewards) = &ctx.rule {
            if position == 0 {
                gammas = Some(
                    compute_gammas(rates, &state.on_shelf, rewards, loan_days as usize).with_window_start(day),
                );
            }
        }
        let t = position as usize + 1;

        requests.clear();
        for (j, arrival) in &arrivals {
            if arrival.sample(&mut arrival_rng) {
                requests.push(*j);
            }
        }
        if requests.len() > 1 {
            requests.shuffle(&mut arrival_rng);
        }

        let measuring = day >= warmup;
        for &j in &requests {
            let patron = PatronClass::from_index(j);
            let decision = match &ctx.rule {
                Rule::NearOptimal(rewards) => decide_near_optimal(
                    gammas.as_ref().expect("window table built on day 0"),
                    &state.on_shelf,
                    t,
                    patron,
                    rewards,
                ),
                Rule::Tiered { tiers, local_first } => decide_tiered(tiers, &state.on_shelf, patron, *local_first),
                Rule::RandomAvailable => decide_random_available(&state.on_shelf, patron, &mut decision_rng),
            };
            let pickup = patron.branch.0;
            let hold = patron.mode == Mode::Hold;
            match decision {
                Decision::Serve(class) => {
                    let a = class.index();
                    if audit {
                        if state.on_shelf[a] == 0 {
                            out.audit.empty_class_violations += 1;
                        }
                        if hold && class.pool == Pool::Reserve {
                            out.audit.reserve_hold_violations += 1;
                        }
                    }
                    state.on_shelf[a] -= 1;
                    state.loans.push_back(Loan {
                        return_day: day + loan_days + 1,
                        home_class: a as u32,
                    });
                    let source = class.branch.0;
                    if hold && source != pickup && audit {
                        net_units[pickup] += weight;
                        net_units[source] -= weight;
                    }
                    if measuring {
                        if hold {
                            out.co_hold[pickup] += 1;
                            if source != pickup {
                                out.transfers.push((source as u32, pickup as u32));
                            }
                        } else {
                            out.co_browse[pickup] += 1;
                        }
                    }
                }
                Decision::Reject => {
                    if measuring {
                        if hold {
                            out.rejected_holds += 1;
                        } else {
                            out.rejected_browses += 1;
                        }
                    }
                }
            }
            if measuring {
                if hold {
                    out.hold_requests += 1;
                } else {
                    out.browse_requests += 1;
                }
            }
        }

        if measuring {
            for i in 0..n {
                if state.on_shelf[2 * i] + state.on_shelf[2 * i + 1] > 0 {
                    out.availability[i] += 1;
                }
            }
        }

        if audit {
            out.audit.title_days_checked += 1;
            if state.total_copies() != initial_copies {
                out.audit.conservation_violations += 1;
            }
            if net_units.iter().sum::<i128>() != 0 {
                out.audit.net_inflow_violations += 1;
            }
        }
    }
    out
}

fn run_all(ctx: &Context<'_>, horizon: Horizon, audit: bool) -> Vec<TitleOutcome> {
    let titles = ctx.scenario.title_count();
    let jobs = ctx.config.replications as usize * titles;
    (0..jobs)
        .into_par_iter()
        .map(|k| simulate_title(ctx, (k / titles) as u32, k % titles, horizon, audit))
        .collect()
}

fn replication_metrics(scenario: &Scenario, measure_days: u32, outcomes: &[TitleOutcome]) -> SimMetrics {
    let n = scenario.branch_count();
    let mut co_browse = vec![0u64; n];
    let mut co_hold = vec![0u64; n];
    let mut availability = vec![vec![0.0; scenario.title_count()]; n];
    let mut flows = FlowLedger::new(n);
    let (mut hold_requests, mut rejected_holds, mut browse_requests, mut rejected_browses) = (0u64, 0u64, 0u64, 0u64);
    for (l, out) in outcomes.iter().enumerate() {
        let weight = desirability_units(scenario.titles[l].desirability);
        for i in 0..n {
            co_browse[i] += u64::from(out.co_browse[i]);
            co_hold[i] += u64::from(out.co_hold[i]);
            availability[i][l] = f64::from(out.availability[i]);
        }
        for &(source, pickup) in &out.transfers {
            flows.add_units(source as usize, pickup as usize, weight);
        }
        hold_requests += u64::from(out.hold_requests);
        rejected_holds += u64::from(out.rejected_holds);
        browse_requests += u64::from(out.browse_requests);
        rejected_browses += u64::from(out.rejected_browses);
    }
    SimMetrics {
        replications: 1,
        measure_days,
        co_browse: co_browse.into_iter().map(|c| c as f64).collect(),
        co_hold: co_hold.into_iter().map(|c| c as f64).collect(),
        availability,
        flows,
        hold_requests: hold_requests as f64,
        rejected_holds: rejected_holds as f64,
        browse_requests: browse_requests as f64,
        rejected_browses: rejected_browses as f64,
    }
}

/// Replication means of `runs`, summed in replication order.
fn mean_metrics(runs: &[SimMetrics]) -> SimMetrics {
    let reps = runs.len() as f64;
    let first = &runs[0];
    let n = first.branch_count();
    let titles = first.availability.first().map_or(0, Vec::len);
    let mean_of = |pick: &dyn Fn(&SimMetrics) -> f64| runs.iter().map(pick).sum::<f64>() / reps;
    let mut flows = FlowLedger::new(n);
    for run in runs {
        flows.merge(&run.flows);
    }
    SimMetrics {
        replications: runs.len() as u32,
        measure_days: first.measure_days,
        co_browse: (0..n).map(|i| mean_of(&|m| m.co_browse[i])).collect(),
        co_hold: (0..n).map(|i| mean_of(&|m| m.co_hold[i])).collect(),
        availability: (0..n)
            .map(|i| (0..titles).map(|l| mean_of(&|m| m.availability[i][l])).collect())
            .collect(),
        flows,
        hold_requests: mean_of(&|m| m.hold_requests),
        rejected_holds: mean_of(&|m| m.rejected_holds),
        browse_requests: mean_of(&|m| m.browse_requests),
        rejected_browses: mean_of(&|m| m.rejected_browses),
    }
}

/// Simulates `policy` for `config.replications` replications.
///
/// `rewards` is required for near-optimal fulfillment and ignored otherwise.
pub fn run(
    scenario: &Scenario,
    policy: &PolicySpec,
    rewards: Option<&RewardVector>,
    config: &SimConfig,
) -> Result<SimOutput> {
    let ctx = Context::new(scenario, policy, rewards, config)?;
    let outcomes = run_all(&ctx, Horizon::Full, false);
    let titles = scenario.title_count();
    let per_replication: Vec<SimMetrics> = outcomes
        .chunks(titles)
        .map(|chunk| replication_metrics(scenario, config.measure_days, chunk))
        .collect();
    Ok(SimOutput {
        metrics: mean_metrics(&per_replication),
        per_replication,
    })
}

/// Runs `policy` with per-day invariant checks on every title.
pub fn audit(
    scenario: &Scenario,
    policy: &PolicySpec,
    rewards: Option<&RewardVector>,
    config: &SimConfig,
) -> Result<AuditReport> {
    let ctx = Context::new(scenario, policy, rewards, config)?;
    let mut report = AuditReport::default();
    for out in run_all(&ctx, Horizon::Full, true) {
        report.merge(&out.audit);
    }
    Ok(report)
}

/// Runs the warm-up under near-optimal fulfillment, rebuilds every title's
/// coefficients from the shelf at the first measured day, and ranks branches
/// into tiers by average open-copy coefficient (pooled over replications).
pub fn derive_tier_assignment(
    scenario: &Scenario,
    beta: &[f64],
    rewards: &RewardVector,
    config: &SimConfig,
) -> Result<TierAssignment> {
    let policy = PolicySpec::new(beta.to_vec(), Fulfillment::NearOptimal);
    let ctx = Context::new(scenario, &policy, Some(rewards), config)?;
    let mut acc = UnitRewardAccumulator::new(scenario.branch_count());
    for out in run_all(&ctx, Horizon::WarmupEnd, false) {
        let (gamma_open, open_stock) = out.warmup_snapshot.expect("warm-up runs return a snapshot");
        acc.add_title(&gamma_open, &open_stock);
    }
    Ok(acc.into_tiers())
}

/// Converts a near-optimal policy into its tiered counterpart with the same
/// reserve fractions.
pub fn tierify(
    scenario: &Scenario,
    policy: &PolicySpec,
    rewards: &RewardVector,
    config: &SimConfig,
) -> Result<PolicySpec> {
    if policy.fulfillment != Fulfillment::NearOptimal {
        return Err(Error::InvalidPolicy(
            "tierify expects a NearOptimal policy".into(),
        ));
    }
    let tiers = derive_tier_assignment(scenario, &policy.beta, rewards, config)?;
    Ok(PolicySpec::tiered(policy.beta.clone(), tiers.tiers().to_vec(), policy.local_first))
}

/// Denominators of the usage and browser-experience ratios, computed once
/// per scenario and reused with the same seeds for every evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baselines {
    pub baseline_co: Vec<f64>,
    pub baseline_cq: Vec<f64>,
    pub master_seed: u64,
    pub replications: u32,
    pub measure_days: u32,
}

impl Baselines {
    pub fn config(&self) -> SimConfig {
        SimConfig::new(self.replications, self.master_seed, self.measure_days)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        io::load_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::save_json(path, self)
    }
}

/// Checkouts under no reserves with near-optimal fulfillment and unit
/// rewards, and collection quality under full reserves.
pub fn freeze_baselines(scenario: &Scenario, config: &SimConfig) -> Result<Baselines> {
    let n = scenario.branch_count();
    let uniform = RewardVector::uniform(n);
    let open = run(
        scenario,
        &PolicySpec::uniform(n, 0.0, Fulfillment::NearOptimal),
        Some(&uniform),
        config,
    )?;
    let baseline_co: Vec<f64> = (0..n).map(|i| open.metrics.checkouts(i)).collect();
    if let Some(branch) = baseline_co.iter().position(|&c| c <= 0.0) {
        return Err(Error::ZeroBaseline { branch });
    }
    let reserved = run(
        scenario,
        &PolicySpec::uniform(n, 1.0, Fulfillment::NearOptimal),
        Some(&uniform),
        config,
    )?;
    let baseline_cq = objectives::collection_quality(&reserved.metrics, &scenario.desirabilities());
    if let Some(branch) = baseline_cq.iter().position(|&c| c <= 0.0) {
        return Err(Error::ZeroBaseline { branch });
    }
    Ok(Baselines {
        baseline_co,
        baseline_cq,
        master_seed: config.master_seed,
        replications: config.replications,
        measure_days: config.measure_days,
    })
}
