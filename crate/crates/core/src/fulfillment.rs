//! Hold fulfillment policies.
//!
//! The near-optimal policy keeps a linear value approximation
//! `H_t(x) = sum_a gamma[a][t] * x_a` whose per-copy coefficients come from a
//! backward inventory-balancing pass over the planning window. A request is
//! served from the stocked compatible class with the smallest next-period
//! coefficient, and only when its reward covers that coefficient.
//!
//! The tiered policy is the static approximation: branches are ranked once by
//! their average open-copy coefficient and holds are paged tier by tier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CopyClass, Mode, PatronClass, Pool, Scenario};

/// Per-checkout reward for every patron class, indexed by patron class.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!("reward {v} must be finite and non-negative")));
        }
        Ok(RewardVector(values))
    }

    /// `r = 1` for every patron class of `branch_count` branches.
    pub fn uniform(branch_count: usize) -> Self {
        RewardVector(vec![1.0; 2 * branch_count])
    }

    pub fn get(&self, j: PatronClass) -> f64 {
        self.0[j.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RewardVector(self.0.iter().map(|r| r * factor).collect())
    }
}

/// Usage-aligned rewards: both patron classes of branch `i` earn
/// `(p_i / sum p) / baseline_co[i]`, rescaled so the largest reward is 1.
pub fn usage_rewards(scenario: &Scenario, baseline_co: &[f64]) -> Result<RewardVector> {
    let n = scenario.branch_count();
    if baseline_co.len() != n {
        return Err(Error::Config(format!(
            "baseline has {} branches, scenario has {n}",
            baseline_co.len()
        )));
    }
    if let Some(branch) = baseline_co.iter().position(|co| !(*co > 0.0)) {
        return Err(Error::ZeroBaseline { branch });
    }
    let total: f64 = scenario.branches.iter().map(|b| b.demand_size).sum();
    let weights: Vec<f64> = scenario
        .branches
        .iter()
        .zip(baseline_co)
        .map(|(b, co)| b.demand_size / total / co)
        .collect();
    let max = weights.iter().cloned().fold(0.0, f64::max);
    let mut rewards = Vec::with_capacity(2 * n);
    for w in weights {
        let r = w / max;
        rewards.push(r);
        rewards.push(r);
    }
    RewardVector::new(rewards)
}

/// Coefficients `gamma[a][t]` for `t in 1..=T+1`, with `gamma[a][T+1] = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaTable {
    horizon: usize,
    classes: usize,
    values: Vec<f64>,
    capacities: Vec<u32>,
    window_start: u32,
}

impl GammaTable {
    fn zeros(capacities: &[u32], horizon: usize) -> Self {
        let classes = capacities.len();
        GammaTable {
            horizon,
            classes,
            values: vec![0.0; (horizon + 1) * classes],
            capacities: capacities.to_vec(),
            window_start: 0,
        }
    }

    pub fn with_window_start(mut self, day: u32) -> Self {
        self.window_start = day;
        self
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    pub fn window_start(&self) -> u32 {
        self.window_start
    }

    /// All coefficients of period `t` (1-based, up to `T + 1`).
    pub fn period(&self, t: usize) -> &[f64] {
        assert!((1..=self.horizon + 1).contains(&t), "period {t} out of range");
        &self.values[(t - 1) * self.classes..t * self.classes]
    }

    pub fn gamma(&self, class: usize, t: usize) -> f64 {
        self.period(t)[class]
    }

    fn period_pair_mut(&mut self, t: usize) -> (&mut [f64], &[f64]) {
        let (head, tail) = self.values.split_at_mut(t * self.classes);
        (&mut head[(t - 1) * self.classes..], &tail[..self.classes])
    }
}

/// One patron class of a general flexible network: arrival probability,
/// reward, and the copy classes able to serve it (ascending indices).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatronDemand {
    pub rate: f64,
    pub reward: f64,
    pub compatible: Vec<usize>,
}

/// Backward coefficient pass over an arbitrary compatibility structure.
///
/// For each period `t = T..1` and each patron class the best copy class is the
/// stocked compatible class maximizing `(r_j - gamma[a][t+1])^+`; its
/// coefficient grows by `rate / c_a` times that margin.
///
/// Classes with zero capacity are never selected and leave every other
/// coefficient untouched. They still get a shadow coefficient, valuing one
/// copy placed there: a patron whose margin at the empty class beats its best
/// stocked margin adds `rate` times that margin. Copies returning mid-window
/// to an empty class are then priced like any other copy instead of at 0.
pub fn compute_gammas_general(
    capacities: &[u32],
    patrons: &[PatronDemand],
    horizon: usize,
) -> GammaTable {
    let mut table = GammaTable::zeros(capacities, horizon);
    for t in (1..=horizon).rev() {
        let (current, next) = table.period_pair_mut(t);
        current.copy_from_slice(next);
        for patron in patrons {
            let mut best: Option<(usize, f64)> = None;
            for &a in &patron.compatible {
                if capacities[a] == 0 {
                    continue;
                }
                let margin = (patron.reward - next[a]).max(0.0);
                if best.is_none_or(|(_, m)| margin > m) {
                    best = Some((a, margin));
                }
            }
            let best_margin = best.map_or(0.0, |(_, m)| m);
            for &a in &patron.compatible {
                if capacities[a] == 0 {
                    let margin = (patron.reward - next[a]).max(0.0);
                    if margin > best_margin {
                        current[a] += patron.rate * margin;
                    }
                }
            }
            if let Some((a, margin)) = best {
                current[a] += patron.rate / f64::from(capacities[a]) * margin;
            }
        }
    }
    table
}

/// The same pass specialised to the branch structure: every hold class shares
/// one best open class per period, so each period costs `O(branches)`.
///
/// `rates` and `rewards` are indexed by patron class, `capacities` by copy
/// class.
pub fn compute_gammas(
    rates: &[f64],
    capacities: &[u32],
    rewards: &RewardVector,
    horizon: usize,
) -> GammaTable {
    let n = capacities.len() / 2;
    debug_assert_eq!(rates.len(), 2 * n);
    let rewards = rewards.as_slice();
    let mut table = GammaTable::zeros(capacities, horizon);

    // Hold demand sorted by reward, for the shadow coefficients of empty open
    // classes: `surplus(g) = sum over holds with r_j > g of rate_j (r_j - g)`.
    let mut holds: Vec<(f64, f64)> = (0..n)
        .filter(|&i| rates[2 * i + 1] > 0.0)
        .map(|i| (rewards[2 * i + 1], rates[2 * i + 1]))
        .collect();
    let has_empty_open = (0..n).any(|i| capacities[2 * i + 1] == 0);
    if has_empty_open {
        holds.sort_by(|a, b| b.0.total_cmp(&a.0));
    }
    let mut rate_prefix = vec![0.0; holds.len() + 1];
    let mut reward_prefix = vec![0.0; holds.len() + 1];
    for (k, &(r, rate)) in holds.iter().enumerate() {
        rate_prefix[k + 1] = rate_prefix[k] + rate;
        reward_prefix[k + 1] = reward_prefix[k] + rate * r;
    }
    let surplus = |g: f64| {
        let k = holds.partition_point(|&(r, _)| r > g);
        (reward_prefix[k] - g * rate_prefix[k]).max(0.0)
    };

    for t in (1..=horizon).rev() {
        let (current, next) = table.period_pair_mut(t);
        current.copy_from_slice(next);

        let mut open_best: Option<(usize, f64)> = None;
        for i in 0..n {
            let a = 2 * i + 1;
            if capacities[a] > 0 && open_best.is_none_or(|(_, g)| next[a] < g) {
                open_best = Some((a, next[a]));
            }
        }
        if has_empty_open {
            for i in 0..n {
                let a = 2 * i + 1;
                if capacities[a] == 0 && open_best.is_none_or(|(_, g)| next[a] < g) {
                    current[a] += surplus(next[a]);
                }
            }
        }

        for i in 0..n {
            let browse = 2 * i;
            let rate = rates[browse];
            if rate > 0.0 {
                let (reserve, open) = (2 * i, 2 * i + 1);
                let pick = match (capacities[reserve] > 0, capacities[open] > 0) {
                    (true, true) if next[open] < next[reserve] => Some(open),
                    (true, _) => Some(reserve),
                    (false, true) => Some(open),
                    (false, false) => None,
                };
                for a in [reserve, open] {
                    if capacities[a] == 0 && pick.is_none_or(|p| next[a] < next[p]) {
                        current[a] += rate * (rewards[browse] - next[a]).max(0.0);
                    }
                }
                if let Some(a) = pick {
                    let margin = (rewards[browse] - next[a]).max(0.0);
                    current[a] += rate / f64::from(capacities[a]) * margin;
                }
            }

            let hold = 2 * i + 1;
            let rate = rates[hold];
            if rate > 0.0 {
                if let Some((a, g)) = open_best {
                    let margin = (rewards[hold] - g).max(0.0);
                    current[a] += rate / f64::from(capacities[a]) * margin;
                }
            }
        }
    }
    table
}

/// `H_t(x) = sum_a gamma[a][t] * x_a`.
pub fn approx_value(gammas: &GammaTable, x: &[u32], t: usize) -> f64 {
    gammas
        .period(t)
        .iter()
        .zip(x)
        .map(|(g, &xa)| g * f64::from(xa))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Serve(CopyClass),
    Reject,
}

impl Decision {
    pub fn served(self) -> Option<CopyClass> {
        match self {
            Decision::Serve(a) => Some(a),
            Decision::Reject => None,
        }
    }
}

/// Stocked candidate with the smallest next-period coefficient. Ties go to
/// the larger stock, then to the lower class index.
fn cheapest_stocked(
    next: &[f64],
    x: &[u32],
    candidates: impl Iterator<Item = usize>,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for a in candidates {
        if x[a] == 0 {
            continue;
        }
        best = match best {
            None => Some(a),
            Some(b) if next[a] < next[b] || (next[a] == next[b] && x[a] > x[b]) => Some(a),
            keep => keep,
        };
    }
    best
}

/// Near-optimal rule over an arbitrary compatible set: serve from the
/// stocked class with the lowest `gamma[a][t+1]` iff `reward >= gamma`.
pub fn decide_general(
    gammas: &GammaTable,
    x: &[u32],
    t: usize,
    compatible: &[usize],
    reward: f64,
) -> Option<usize> {
    let next = gammas.period(t + 1);
    cheapest_stocked(next, x, compatible.iter().copied()).filter(|&a| reward >= next[a])
}

/// Near-optimal rule for a patron class of the branch structure.
pub fn decide_near_optimal(
    gammas: &GammaTable,
    x: &[u32],
    t: usize,
    j: PatronClass,
    rewards: &RewardVector,
) -> Decision {
    let next = gammas.period(t + 1);
    let i = j.branch.0;
    let pick = match j.mode {
        Mode::Browse => cheapest_stocked(next, x, [2 * i, 2 * i + 1].into_iter()),
        Mode::Hold => cheapest_stocked(next, x, (0..x.len() / 2).map(|b| 2 * b + 1)),
    };
    match pick {
        Some(a) if rewards.get(j) >= next[a] => Decision::Serve(CopyClass::from_index(a)),
        _ => Decision::Reject,
    }
}

/// Browsers outside the near-optimal policy take a reserve copy first, then
/// a local open copy.
pub fn decide_browse_reserve_first(x: &[u32], branch: usize) -> Decision {
    if x[2 * branch] > 0 {
        Decision::Serve(CopyClass::new(branch, Pool::Reserve))
    } else if x[2 * branch + 1] > 0 {
        Decision::Serve(CopyClass::new(branch, Pool::Open))
    } else {
        Decision::Reject
    }
}

/// Historical proxy: a hold goes to a uniformly random branch holding an
/// open copy.
pub fn decide_random_available<R: Rng + ?Sized>(x: &[u32], j: PatronClass, rng: &mut R) -> Decision {
    match j.mode {
        Mode::Browse => decide_browse_reserve_first(x, j.branch.0),
        Mode::Hold => {
            let n = x.len() / 2;
            let stocked = (0..n).filter(|&b| x[2 * b + 1] > 0).count();
            if stocked == 0 {
                return Decision::Reject;
            }
            let k = if stocked == 1 { 0 } else { rng.random_range(0..stocked) };
            let b = (0..n).filter(|&b| x[2 * b + 1] > 0).nth(k).expect("k < stocked");
            Decision::Serve(CopyClass::new(b, Pool::Open))
        }
    }
}

/// Static three-tier paging list.
#[derive(Clone, Debug, PartialEq)]
pub struct TierAssignment {
    tiers: Vec<u8>,
    average_unit_reward: Vec<f64>,
    members: [Vec<usize>; 3],
}

impl TierAssignment {
    /// Builds an assignment from explicit tiers (1..=3 per branch).
    pub fn from_tiers(tiers: Vec<u8>) -> Result<Self> {
        let mut members: [Vec<usize>; 3] = Default::default();
        for (i, &t) in tiers.iter().enumerate() {
            if !(1..=3).contains(&t) {
                return Err(Error::InvalidPolicy(format!("tier {t} outside 1..=3")));
            }
            members[usize::from(t - 1)].push(i);
        }
        Ok(TierAssignment {
            average_unit_reward: vec![f64::NAN; tiers.len()],
            tiers,
            members,
        })
    }

    pub fn tiers(&self) -> &[u8] {
        &self.tiers
    }

    /// Per-branch average open-copy coefficient used for ranking; `+inf`
    /// for branches without any stocked title, NaN when tiers were given.
    pub fn average_unit_reward(&self) -> &[f64] {
        &self.average_unit_reward
    }

    pub fn tier_sizes(&self) -> [usize; 3] {
        [self.members[0].len(), self.members[1].len(), self.members[2].len()]
    }
}

/// Running per-branch average of `gamma[(i, Open)][1]` over the titles with
/// open stock at `i`.
#[derive(Clone, Debug)]
pub struct UnitRewardAccumulator {
    sum: Vec<f64>,
    count: Vec<u64>,
}

impl UnitRewardAccumulator {
    pub fn new(branch_count: usize) -> Self {
        UnitRewardAccumulator {
            sum: vec![0.0; branch_count],
            count: vec![0; branch_count],
        }
    }

    /// `gamma_open` and `open_stock` are per branch for a single title.
    pub fn add_title(&mut self, gamma_open: &[f64], open_stock: &[u32]) {
        for (i, (&g, &c)) in gamma_open.iter().zip(open_stock).enumerate() {
            if c > 0 {
                self.sum[i] += g;
                self.count[i] += 1;
            }
        }
    }

    pub fn add_table(&mut self, gammas: &GammaTable, open_stock: &[u32]) {
        let first = gammas.period(1);
        let gamma_open: Vec<f64> = (0..self.sum.len()).map(|i| first[2 * i + 1]).collect();
        self.add_title(&gamma_open, open_stock);
    }

    pub fn averages(&self) -> Vec<f64> {
        self.sum
            .iter()
            .zip(&self.count)
            .map(|(&s, &c)| if c == 0 { f64::INFINITY } else { s / c as f64 })
            .collect()
    }

    /// Ranks branches ascending by average and cuts them into three groups
    /// whose sizes differ by at most one, extras going to the lower tiers.
    pub fn into_tiers(self) -> TierAssignment {
        let averages = self.averages();
        let n = averages.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| averages[a].total_cmp(&averages[b]).then(a.cmp(&b)));
        let (base, extra) = (n / 3, n % 3);
        let mut tiers = vec![0u8; n];
        let mut pos = 0;
        for tier in 0..3 {
            let size = base + usize::from(tier < extra);
            for &branch in &order[pos..pos + size] {
                tiers[branch] = tier as u8 + 1;
            }
            pos += size;
        }
        let mut assignment = TierAssignment::from_tiers(tiers).expect("tiers within 1..=3");
        assignment.average_unit_reward = averages;
        assignment
    }
}

/// Tiers from per-title coefficient tables at `t = 1` and the open stock
/// `open_stock[branch][title]` they were built from.
pub fn derive_tiers(gammas_per_title: &[GammaTable], open_stock: &[Vec<u32>]) -> TierAssignment {
    let n = open_stock.len();
    let mut acc = UnitRewardAccumulator::new(n);
    for (l, gammas) in gammas_per_title.iter().enumerate() {
        let stock: Vec<u32> = open_stock.iter().map(|row| row[l]).collect();
        acc.add_table(gammas, &stock);
    }
    acc.into_tiers()
}

/// Tiered paging for holds; browsers use reserve-first local service.
///
/// Within a tier the branch with the most open copies wins, ties to the lowest
/// index. With `local_first` the patron's own open pool is tried before tier 1.
pub fn decide_tiered(tiers: &TierAssignment, x: &[u32], j: PatronClass, local_first: bool) -> Decision {
    let own = j.branch.0;
    if j.mode == Mode::Browse {
        return decide_browse_reserve_first(x, own);
    }
    if local_first && x[2 * own + 1] > 0 {
        return Decision::Serve(CopyClass::new(own, Pool::Open));
    }
    for members in &tiers.members {
        let mut best: Option<usize> = None;
        for &b in members {
            let stock = x[2 * b + 1];
            if stock > 0 && best.is_none_or(|c| stock > x[2 * c + 1]) {
                best = Some(b);
            }
        }
        if let Some(b) = best {
            return Decision::Serve(CopyClass::new(b, Pool::Open));
        }
    }
    Decision::Reject
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_class(rate: f64, reward: f64, horizon: usize) -> GammaTable {
        compute_gammas_general(
            &[1],
            &[PatronDemand {
                rate,
                reward,
                compatible: vec![0],
            }],
            horizon,
        )
    }

    #[test]
    fn single_class_recurrence_by_hand() {
        // gamma_2 = 0 + 0.5 * (1 - 0) = 0.5; gamma_1 = 0.5 + 0.5 * 0.5 = 0.75
        let g = single_class(0.5, 1.0, 2);
        assert_eq!(g.gamma(0, 3), 0.0);
        assert!((g.gamma(0, 2) - 0.5).abs() < 1e-15);
        assert!((g.gamma(0, 1) - 0.75).abs() < 1e-15);
        assert!((approx_value(&g, &[1], 1) - 0.75).abs() < 1e-15);
        assert_eq!(approx_value(&g, &[0], 1), 0.0);
    }

    #[test]
    fn zero_rates_give_zero_coefficients() {
        let rates = vec![0.0; 6];
        let g = compute_gammas(&rates, &[1, 2, 0, 3, 1, 1], &RewardVector::uniform(3), 21);
        for t in 1..=22 {
            assert!(g.period(t).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn empty_classes_price_one_copy() {
        // an empty class gets the single-copy recursion: 0.5, then 0.75
        let g = compute_gammas(&[0.5, 0.0], &[0, 0], &RewardVector::uniform(1), 2);
        for a in 0..2 {
            assert!((g.gamma(a, 2) - 0.5).abs() < 1e-15);
            assert!((g.gamma(a, 1) - 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_classes_leave_stocked_ones_alone() {
        let rates = [0.1, 0.2, 0.1, 0.2];
        let rewards = RewardVector::uniform(2);
        let with_empty = compute_gammas(&rates, &[1, 0, 0, 2], &rewards, 10);
        let patrons = [
            PatronDemand { rate: 0.1, reward: 1.0, compatible: vec![0] },
            PatronDemand { rate: 0.2, reward: 1.0, compatible: vec![3] },
            PatronDemand { rate: 0.1, reward: 1.0, compatible: vec![3] },
            PatronDemand { rate: 0.2, reward: 1.0, compatible: vec![3] },
        ];
        let reference = compute_gammas_general(&[1, 0, 0, 2], &patrons, 10);
        for t in 1..=11 {
            for a in [0, 3] {
                assert!((with_empty.gamma(a, t) - reference.gamma(a, t)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn decide_prefers_lowest_coefficient() {
        // two open classes at branches 0 and 1 with next-period gammas 0.3 / 0.6
        let mut g = GammaTable::zeros(&[0, 1, 0, 1], 2);
        g.values[4..8].copy_from_slice(&[0.0, 0.3, 0.0, 0.6]);
        let x = [0, 1, 0, 1];
        let hold = PatronClass::new(0, Mode::Hold);
        let rewards = RewardVector::new(vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(
            decide_near_optimal(&g, &x, 1, hold, &rewards),
            Decision::Serve(CopyClass::new(0, Pool::Open))
        );
        let low = RewardVector::new(vec![0.2; 4]).unwrap();
        assert_eq!(decide_near_optimal(&g, &x, 1, hold, &low), Decision::Reject);
    }

    #[test]
    fn decide_never_uses_empty_or_reserve_for_holds() {
        let rates = vec![0.1, 0.3, 0.2, 0.2, 0.05, 0.1];
        let caps = [2, 1, 1, 0, 0, 3];
        let g = compute_gammas(&rates, &caps, &RewardVector::uniform(3), 21);
        let x = [1, 0, 1, 0, 0, 2];
        for t in 1..=21 {
            for j in 0..6 {
                let patron = PatronClass::from_index(j);
                if let Decision::Serve(a) = decide_near_optimal(&g, &x, t, patron, &RewardVector::uniform(3)) {
                    assert!(x[a.index()] > 0);
                    if patron.mode == Mode::Hold {
                        assert_eq!(a.pool, Pool::Open);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_rewards_never_reject_with_stock() {
        let rates = vec![0.3, 0.4, 0.2, 0.1];
        let caps = [1, 2, 1, 1];
        let g = compute_gammas(&rates, &caps, &RewardVector::uniform(2), 21);
        for t in 1..=22 {
            assert!(g.period(t).iter().all(|&v| v <= 1.0 + 1e-12));
        }
        for t in 1..=21 {
            for j in 0..4 {
                let d = decide_near_optimal(&g, &[0, 1, 1, 0], t, PatronClass::from_index(j), &RewardVector::uniform(2));
                assert_ne!(d, Decision::Reject, "t={t} j={j}");
            }
        }
    }

    #[test]
    fn usage_rewards_examples() {
        use crate::model::{Branch, Title};
        let scenario = |ps: &[f64]| Scenario {
            branches: ps
                .iter()
                .map(|&p| Branch {
                    demand_size: p,
                    hold_fraction: 0.5,
                    label: String::new(),
                })
                .collect(),
            titles: vec![Title { desirability: 0.5 }],
            inventory: ps.iter().map(|_| vec![1]).collect(),
            loan_days: 21,
            warmup_days: 100,
            sim_days: 365,
            calibration_scale: 1.0,
        };
        let r = usage_rewards(&scenario(&[0.5, 0.5]), &[100.0, 100.0]).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        let r = usage_rewards(&scenario(&[0.8, 0.2]), &[100.0, 100.0]).unwrap();
        assert_eq!(r.as_slice()[0], 1.0);
        assert!((r.as_slice()[0] / r.as_slice()[2] - 4.0).abs() < 1e-12);
        assert_eq!(r.as_slice()[0], r.as_slice()[1]);
        let r = usage_rewards(&scenario(&[0.3]), &[17.0]).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 1.0]);
        assert!(matches!(
            usage_rewards(&scenario(&[0.5, 0.5]), &[100.0, 0.0]),
            Err(Error::ZeroBaseline { branch: 1 })
        ));
    }

    #[test]
    fn unit_reward_average_ignores_unstocked_titles() {
        let mut acc = UnitRewardAccumulator::new(1);
        acc.add_title(&[0.4], &[2]);
        acc.add_title(&[0.9], &[0]);
        acc.add_title(&[0.2], &[1]);
        assert!((acc.averages()[0] - 0.3).abs() < 1e-15);
    }

    fn tiers_for(averages: &[f64]) -> TierAssignment {
        let mut acc = UnitRewardAccumulator::new(averages.len());
        acc.add_title(averages, &vec![1; averages.len()]);
        acc.into_tiers()
    }

    #[test]
    fn tier_sizes_are_balanced() {
        assert_eq!(tiers_for(&vec![0.5; 84]).tier_sizes(), [28, 28, 28]);
        assert_eq!(tiers_for(&vec![0.5; 8]).tier_sizes(), [3, 3, 2]);
        assert_eq!(tiers_for(&vec![0.5; 4]).tier_sizes(), [2, 1, 1]);
    }

    #[test]
    fn tiers_rank_ascending_and_unstocked_last() {
        let mut acc = UnitRewardAccumulator::new(4);
        acc.add_title(&[0.9, 0.1, 0.5, 0.0], &[1, 1, 1, 0]);
        let tiers = acc.into_tiers();
        // sizes 2/1/1: branch 1 (0.1) and 2 (0.5) first, 0 (0.9), then unstocked 3
        assert_eq!(tiers.tiers(), &[2, 1, 1, 3]);
        assert_eq!(tiers.average_unit_reward()[3], f64::INFINITY);
    }

    #[test]
    fn derive_tiers_reads_open_coefficients() {
        let rates = vec![0.1, 0.2, 0.1, 0.0, 0.1, 0.0];
        let g = compute_gammas(&rates, &[0, 1, 0, 1, 0, 1], &RewardVector::uniform(3), 5);
        let tiers = derive_tiers(std::slice::from_ref(&g), &[vec![1], vec![1], vec![1]]);
        let avg = tiers.average_unit_reward();
        for i in 0..3 {
            assert_eq!(avg[i], g.gamma(2 * i + 1, 1));
        }
    }

    #[test]
    fn tiered_falls_through_tiers() {
        let tiers = TierAssignment::from_tiers(vec![1, 2]).unwrap();
        let hold_a = PatronClass::new(0, Mode::Hold);
        assert_eq!(
            decide_tiered(&tiers, &[0, 0, 0, 1], hold_a, false),
            Decision::Serve(CopyClass::new(1, Pool::Open))
        );
        let same = TierAssignment::from_tiers(vec![1, 1]).unwrap();
        assert_eq!(
            decide_tiered(&same, &[0, 2, 0, 1], hold_a, false),
            Decision::Serve(CopyClass::new(0, Pool::Open))
        );
        assert_eq!(decide_tiered(&same, &[3, 0, 2, 0], hold_a, false), Decision::Reject);
    }

    #[test]
    fn tiered_local_first_and_browsers() {
        let tiers = TierAssignment::from_tiers(vec![1, 2]).unwrap();
        let hold_b = PatronClass::new(1, Mode::Hold);
        assert_eq!(
            decide_tiered(&tiers, &[0, 1, 0, 1], hold_b, false),
            Decision::Serve(CopyClass::new(0, Pool::Open))
        );
        assert_eq!(
            decide_tiered(&tiers, &[0, 1, 0, 1], hold_b, true),
            Decision::Serve(CopyClass::new(1, Pool::Open))
        );
        let browse = PatronClass::new(0, Mode::Browse);
        assert_eq!(
            decide_tiered(&tiers, &[1, 1, 0, 0], browse, false),
            Decision::Serve(CopyClass::new(0, Pool::Reserve))
        );
        assert_eq!(
            decide_tiered(&tiers, &[0, 1, 0, 0], browse, false),
            Decision::Serve(CopyClass::new(0, Pool::Open))
        );
    }

    #[test]
    fn random_available_picks_stocked_open_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = [5, 0, 0, 2, 0, 0, 0, 1];
        let hold = PatronClass::new(2, Mode::Hold);
        let mut seen = [0usize; 4];
        for _ in 0..400 {
            match decide_random_available(&x, hold, &mut rng) {
                Decision::Serve(a) => {
                    assert_eq!(a.pool, Pool::Open);
                    seen[a.branch.0] += 1;
                }
                Decision::Reject => panic!("stock exists"),
            }
        }
        assert_eq!(seen[0] + seen[2], 0);
        assert!(seen[1] > 150 && seen[3] > 150);
        assert_eq!(decide_random_available(&[1, 0, 1, 0], hold, &mut rng), Decision::Reject);
    }
}
