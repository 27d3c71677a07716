mod common;

use holdsim::fulfillment::{
    compute_gammas, decide_near_optimal, decide_tiered, Decision, RewardVector, TierAssignment,
    UnitRewardAccumulator,
};
use holdsim::model::{Branch, Fulfillment, Mode, PatronClass, PolicySpec, Scenario, Title};
use holdsim::objectives::{self, quality_ratio_objective, usage_ratio_objective};
use holdsim::optimizer::{ArchiveEntry, ParetoArchive};
use holdsim::oracles::{self, random_library_instance};
use holdsim::scenario::{generate_with_income, spearman, GeneratorConfig};
use holdsim::simulator::{self, FlowLedger, SimConfig, SimMetrics};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Branch-structured inputs: capacities per copy class, dyadic rates summing
/// to at most 1, rewards in eighths.
fn library_inputs() -> impl Strategy<Value = (Vec<u32>, Vec<f64>, Vec<f64>, usize)> {
    (1usize..=5).prop_flat_map(|n| {
        (
            prop::collection::vec(0u32..4, 2 * n),
            prop::collection::vec(0u32..=16, 2 * n),
            prop::collection::vec(0u32..=8, 2 * n),
            1usize..=21,
        )
            .prop_map(move |(caps, raw, rewards, horizon)| {
                let total: u32 = raw.iter().sum::<u32>().max(1);
                let scale = if total > 64 { 64.0 / f64::from(total) } else { 1.0 };
                let rates = raw.iter().map(|&u| (f64::from(u) * scale).floor() / 64.0).collect();
                let rewards = rewards.iter().map(|&r| f64::from(r) / 8.0).collect();
                (caps, rates, rewards, horizon)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn specialised_pass_matches_general((caps, rates, rewards, horizon) in library_inputs()) {
        let inst = oracles::SmallInstance::library(caps.clone(), &rates, &rewards, horizon);
        let general = inst.gammas();
        let fast = compute_gammas(&rates, &caps, &RewardVector::new(rewards).unwrap(), horizon);
        for t in 1..=horizon + 1 {
            for a in 0..caps.len() {
                prop_assert!(
                    close(general.gamma(a, t), fast.gamma(a, t), 1e-12),
                    "class {} period {}: {} vs {}", a, t, general.gamma(a, t), fast.gamma(a, t)
                );
            }
        }
    }

    #[test]
    fn reward_scaling_scales_coefficients_and_keeps_decisions(
        (caps, rates, rewards, horizon) in library_inputs(),
        k in 1u32..8,
    ) {
        let factor = f64::from(k) * 0.5;
        let base = RewardVector::new(rewards).unwrap();
        let scaled = base.scaled(factor);
        let g1 = compute_gammas(&rates, &caps, &base, horizon);
        let g2 = compute_gammas(&rates, &caps, &scaled, horizon);
        for t in 1..=horizon + 1 {
            for a in 0..caps.len() {
                prop_assert!(close(g2.gamma(a, t), factor * g1.gamma(a, t), 1e-12));
            }
        }
        let n = caps.len() / 2;
        for t in 1..=horizon {
            for j in 0..2 * n {
                let j = PatronClass::from_index(j);
                prop_assert_eq!(
                    decide_near_optimal(&g1, &caps, t, j, &base),
                    decide_near_optimal(&g2, &caps, t, j, &scaled)
                );
            }
        }
    }

    #[test]
    fn holds_never_take_reserve_copies(
        (caps, rates, rewards, horizon) in library_inputs(),
        t_pick in 0usize..21,
    ) {
        let gammas = compute_gammas(&rates, &caps, &RewardVector::new(rewards.clone()).unwrap(), horizon);
        let t = 1 + t_pick % horizon;
        let rewards = RewardVector::new(rewards).unwrap();
        for i in 0..caps.len() / 2 {
            if let Decision::Serve(a) = decide_near_optimal(&gammas, &caps, t, PatronClass::new(i, Mode::Hold), &rewards) {
                prop_assert_eq!(a.index() % 2, 1);
                prop_assert!(caps[a.index()] > 0);
            }
        }
    }

    #[test]
    fn tiers_follow_branch_permutations(
        averages in prop::collection::btree_set(0u32..10_000, 3..20),
        seed in any::<u64>(),
    ) {
        let averages: Vec<f64> = averages.into_iter().map(|v| f64::from(v) / 1000.0).collect();
        let n = averages.len();
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let tiers_of = |values: &[f64]| {
            let mut acc = UnitRewardAccumulator::new(values.len());
            acc.add_title(values, &vec![1; values.len()]);
            acc.into_tiers()
        };
        let plain = tiers_of(&averages);
        let permuted_values: Vec<f64> = perm.iter().map(|&p| averages[p]).collect();
        let permuted = tiers_of(&permuted_values);
        for (k, &p) in perm.iter().enumerate() {
            prop_assert_eq!(permuted.tiers()[k], plain.tiers()[p]);
        }
        let sizes = plain.tier_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn tiered_holds_come_from_open_stock(
        tiers in prop::collection::vec(1u8..=3, 1..8),
        stock in prop::collection::vec(0u32..3, 16),
        local_first in any::<bool>(),
    ) {
        let n = tiers.len();
        let x = &stock[..2 * n];
        let assignment = TierAssignment::from_tiers(tiers).unwrap();
        for i in 0..n {
            match decide_tiered(&assignment, x, PatronClass::new(i, Mode::Hold), local_first) {
                Decision::Serve(a) => prop_assert!(a.index() % 2 == 1 && x[a.index()] > 0),
                Decision::Reject => prop_assert!((0..n).all(|b| x[2 * b + 1] == 0)),
            }
        }
    }

    #[test]
    fn archive_stays_mutually_nondominated(points in prop::collection::vec((0u32..20, 0u32..20), 1..60)) {
        let mut archive = ParetoArchive::new();
        let mut last_hv = 0.0;
        for (f, g) in points {
            archive.insert(ArchiveEntry {
                beta: vec![],
                f: f64::from(f) / 10.0,
                g: f64::from(g) / 10.0,
                se_f: 0.0,
                se_g: 0.0,
                seed: 0,
                replications: 1,
                hypervolume: 0.0,
            });
            let pts = archive.points();
            for (a, p) in pts.iter().enumerate() {
                for (b, q) in pts.iter().enumerate() {
                    prop_assert!(a == b || !(p.0 >= q.0 && p.1 >= q.1));
                }
            }
            let hv = archive.hypervolume();
            prop_assert!(hv >= last_hv);
            last_hv = hv;
        }
    }

    #[test]
    fn objectives_ignore_branch_order(
        rows in prop::collection::vec((1u32..100, 1u32..100, 1u32..100, 1u32..100, 0u32..=10), 2..10),
        seed in any::<u64>(),
    ) {
        let co: Vec<f64> = rows.iter().map(|r| f64::from(r.0)).collect();
        let base: Vec<f64> = rows.iter().map(|r| f64::from(r.1)).collect();
        let p: Vec<f64> = rows.iter().map(|r| f64::from(r.2) / 100.0).collect();
        let cq: Vec<f64> = rows.iter().map(|r| f64::from(r.3)).collect();
        let h: Vec<f64> = rows.iter().map(|r| f64::from(r.4) / 20.0).collect();
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pick = |v: &[f64]| perm.iter().map(|&k| v[k]).collect::<Vec<f64>>();

        let f1 = usage_ratio_objective(&co, &base, &p).unwrap().0;
        let f2 = usage_ratio_objective(&pick(&co), &pick(&base), &pick(&p)).unwrap().0;
        prop_assert!(close(f1, f2, 1e-12));
        let b1 = quality_ratio_objective(&cq, &base, &h).unwrap();
        let b2 = quality_ratio_objective(&pick(&cq), &pick(&base), &pick(&h)).unwrap();
        prop_assert!(close(b1.g, b2.g, 1e-12));
        prop_assert!(close(b1.g_nash, b2.g_nash, 1e-12));

        let uniform = vec![0.3; rows.len()];
        let b = quality_ratio_objective(&cq, &base, &uniform).unwrap();
        prop_assert!(b.g_nash <= b.g * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn bounds_chain_on_small_instances(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_library_instance(&mut rng, 2, 5, 8);
        let report = oracles::evaluate(&inst).unwrap();
        prop_assert!(report.lp_value >= report.dp_value - 1e-9);
        prop_assert!(2.0 * report.approx_value >= report.lp_value - 1e-9);
        prop_assert!(report.policy_value >= 0.5 * report.dp_value - 1e-9);
        prop_assert!(report.policy_value <= report.dp_value + 1e-9);
    }

    #[test]
    fn greedy_lp_matches_exact_simplex(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_library_instance(&mut rng, 2, 4, 6);
        let exact = common::to_f64(&common::exact_lp(&inst));
        prop_assert!((oracles::lp_bound(&inst) - exact).abs() <= 1e-12);
    }
}

#[test]
fn net_inflow_of_one_transfer() {
    let mut flows = FlowLedger::new(2);
    // pickup at A (0) sourced from B (1)
    flows.record(1, 0, 0.7);
    let metrics = SimMetrics {
        replications: 1,
        measure_days: 1,
        co_browse: vec![0.0; 2],
        co_hold: vec![1.0, 0.0],
        availability: vec![vec![0.0], vec![0.0]],
        flows,
        hold_requests: 1.0,
        rejected_holds: 0.0,
        browse_requests: 0.0,
        rejected_browses: 0.0,
    };
    let inflow = objectives::net_inflow(&metrics);
    assert!((inflow.values[0] - 0.7).abs() < 1e-12);
    assert!((inflow.values[1] + 0.7).abs() < 1e-12);
    assert_eq!(inflow.units.iter().sum::<i128>(), 0);
}

#[test]
fn uncoupled_hold_fractions_are_rank_independent() {
    let runs = 25;
    let mut total = 0.0;
    for seed in 0..runs {
        let config = GeneratorConfig {
            branch_count: 200,
            title_count: 5,
            hold_corr: 0.0,
            seed,
            ..GeneratorConfig::default()
        };
        let generated = generate_with_income(&config).unwrap();
        let income: Vec<f64> = generated.income_rank.iter().map(|&r| r as f64).collect();
        total += spearman(&income, &generated.scenario.hold_fractions());
    }
    let mean = total / f64::from(runs as u32);
    assert!(mean.abs() < 0.1, "mean rank correlation {mean}");
}

#[test]
fn coupled_hold_fractions_follow_income() {
    let config = GeneratorConfig {
        branch_count: 200,
        title_count: 5,
        hold_corr: 0.9,
        ..GeneratorConfig::default()
    };
    let generated = generate_with_income(&config).unwrap();
    let income: Vec<f64> = generated.income_rank.iter().map(|&r| r as f64).collect();
    assert!(spearman(&income, &generated.scenario.hold_fractions()) > 0.7);
}

fn symmetric_scenario() -> Scenario {
    let branches = 2;
    let titles = 40;
    Scenario {
        branches: (0..branches)
            .map(|_| Branch {
                demand_size: 0.3,
                hold_fraction: 0.5,
                label: String::new(),
            })
            .collect(),
        titles: (0..titles).map(|l| Title { desirability: 0.2 + 0.02 * f64::from(l % 30) }).collect(),
        inventory: vec![vec![2; titles as usize]; branches],
        loan_days: 21,
        warmup_days: 42,
        sim_days: 300,
        calibration_scale: 1.0,
    }
}

#[test]
fn symmetric_branches_get_matching_baselines() {
    let scenario = symmetric_scenario();
    let n = scenario.branch_count();
    let config = SimConfig::new(8, 5, 300);
    let uniform = RewardVector::uniform(n);
    let out = simulator::run(
        &scenario,
        &PolicySpec::uniform(n, 0.0, Fulfillment::NearOptimal),
        Some(&uniform),
        &config,
    )
    .unwrap();
    let per_rep: Vec<f64> = out.per_replication.iter().map(|m| m.checkouts(0) - m.checkouts(1)).collect();
    let se = objectives::standard_error(&per_rep);
    let gap = out.metrics.checkouts(0) - out.metrics.checkouts(1);
    assert!(gap.abs() <= 3.0 * se.max(1.0), "gap {gap}, se {se}");
}

#[test]
fn runs_are_reproducible_and_conserve_flow() {
    let scenario = symmetric_scenario();
    let policy = PolicySpec::uniform(2, 0.4, Fulfillment::RandomAvailable);
    let config = SimConfig::new(3, 9, 200);
    let a = simulator::run(&scenario, &policy, None, &config).unwrap();
    let b = simulator::run(&scenario, &policy, None, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.metrics.flows.net_units().iter().sum::<i128>(), 0);
    for m in &a.per_replication {
        for row in &m.availability {
            assert!(row.iter().all(|&d| (0.0..=200.0).contains(&d)));
        }
    }
}

#[test]
fn tierify_at_full_reserves_matches_near_optimal() {
    // with every copy reserved no hold is ever served, so both fulfillment
    // rules see the same sample path
    let scenario = symmetric_scenario();
    let n = scenario.branch_count();
    let config = SimConfig::new(2, 3, 100);
    let rewards = RewardVector::uniform(n);
    let near = PolicySpec::uniform(n, 1.0, Fulfillment::NearOptimal);
    let tiered = simulator::tierify(&scenario, &near, &rewards, &config).unwrap();
    let a = simulator::run(&scenario, &near, Some(&rewards), &config).unwrap();
    let b = simulator::run(&scenario, &tiered, Some(&rewards), &config).unwrap();
    assert_eq!(a.metrics, b.metrics);
}
