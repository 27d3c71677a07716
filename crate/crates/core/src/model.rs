//! Domain types shared across the crate: branches, titles, copy and patron
//! classes, scenarios and policies.
//!
//! Copy classes and patron classes are addressed by dense indices so that the
//! hot loops never hash: copy class `(i, pool)` lives at `2 * i + pool` with
//! `Reserve = 0`, `Open = 1`; patron class `(i, mode)` lives at `2 * i + mode`
//! with `Browse = 0`, `Hold = 1`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TitleId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pool {
    Reserve,
    Open,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Browse,
    Hold,
}

/// A `(branch, pool)` pair. Reserve copies serve only local browsers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CopyClass {
    pub branch: BranchId,
    pub pool: Pool,
}

impl CopyClass {
    pub fn new(branch: usize, pool: Pool) -> Self {
        CopyClass {
            branch: BranchId(branch),
            pool,
        }
    }

    pub fn index(self) -> usize {
        2 * self.branch.0
            + match self.pool {
                Pool::Reserve => 0,
                Pool::Open => 1,
            }
    }

    pub fn from_index(index: usize) -> Self {
        let pool = if index.is_multiple_of(2) { Pool::Reserve } else { Pool::Open };
        CopyClass::new(index / 2, pool)
    }
}

impl fmt::Display for CopyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {:?})", self.branch.0, self.pool)
    }
}

/// A `(branch, mode)` pair describing where and how a patron checks out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatronClass {
    pub branch: BranchId,
    pub mode: Mode,
}

impl PatronClass {
    pub fn new(branch: usize, mode: Mode) -> Self {
        PatronClass {
            branch: BranchId(branch),
            mode,
        }
    }

    pub fn index(self) -> usize {
        2 * self.branch.0
            + match self.mode {
                Mode::Browse => 0,
                Mode::Hold => 1,
            }
    }

    pub fn from_index(index: usize) -> Self {
        let mode = if index.is_multiple_of(2) { Mode::Browse } else { Mode::Hold };
        PatronClass::new(index / 2, mode)
    }
}

/// Copy classes able to serve patron class `j`, in ascending class index.
///
/// Browsers use either pool at their own branch; holds draw on the open pool
/// of every branch.
pub fn compatibility(j: PatronClass, branch_count: usize) -> Vec<CopyClass> {
    match j.mode {
        Mode::Browse => vec![
            CopyClass {
                branch: j.branch,
                pool: Pool::Reserve,
            },
            CopyClass {
                branch: j.branch,
                pool: Pool::Open,
            },
        ],
        Mode::Hold => (0..branch_count)
            .map(|i| CopyClass::new(i, Pool::Open))
            .collect(),
    }
}

fn default_loan_days() -> u32 {
    21
}

fn default_warmup_days() -> u32 {
    100
}

fn default_sim_days() -> u32 {
    365
}

fn default_calibration_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub demand_size: f64,
    pub hold_fraction: f64,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Title {
    pub desirability: f64,
}

/// The simulated world: branch and title parameters plus the starting
/// inventory `inventory[branch][title]`.
///
/// `sim_days` is the default number of measured days following the warm-up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub branches: Vec<Branch>,
    pub titles: Vec<Title>,
    pub inventory: Vec<Vec<u32>>,
    #[serde(default = "default_loan_days")]
    pub loan_days: u32,
    #[serde(default = "default_warmup_days")]
    pub warmup_days: u32,
    #[serde(default = "default_sim_days")]
    pub sim_days: u32,
    #[serde(default = "default_calibration_scale")]
    pub calibration_scale: f64,
}

impl Scenario {
    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn title_count(&self) -> usize {
        self.titles.len()
    }

    pub fn copies(&self, branch: usize, title: usize) -> u32 {
        self.inventory[branch][title]
    }

    pub fn title_copies(&self, title: usize) -> u32 {
        self.inventory.iter().map(|row| row[title]).sum()
    }

    pub fn total_copies(&self) -> u64 {
        self.inventory
            .iter()
            .flat_map(|row| row.iter())
            .map(|&c| u64::from(c))
            .sum()
    }

    pub fn demand_sizes(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.demand_size).collect()
    }

    pub fn hold_fractions(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.hold_fraction).collect()
    }

    pub fn desirabilities(&self) -> Vec<f64> {
        self.titles.iter().map(|t| t.desirability).collect()
    }

    /// Checks every range and shape constraint, including that no arrival
    /// probability exceeds 1.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.branches.is_empty() {
            return bad("no branches".into());
        }
        if self.titles.is_empty() {
            return bad("no titles".into());
        }
        for (i, b) in self.branches.iter().enumerate() {
            if !(b.demand_size > 0.0 && b.demand_size <= 1.0) {
                return bad(format!("branch {i}: demand_size {} not in (0,1]", b.demand_size));
            }
            if !(0.0..=1.0).contains(&b.hold_fraction) {
                return bad(format!("branch {i}: hold_fraction {} not in [0,1]", b.hold_fraction));
            }
        }
        for (l, t) in self.titles.iter().enumerate() {
            if !(t.desirability > 0.0 && t.desirability <= 1.0) {
                return bad(format!("title {l}: desirability {} not in (0,1]", t.desirability));
            }
        }
        if self.inventory.len() != self.branches.len() {
            return bad(format!(
                "inventory has {} rows for {} branches",
                self.inventory.len(),
                self.branches.len()
            ));
        }
        for (i, row) in self.inventory.iter().enumerate() {
            if row.len() != self.titles.len() {
                return bad(format!(
                    "inventory row {i} has {} entries for {} titles",
                    row.len(),
                    self.titles.len()
                ));
            }
        }
        for l in 0..self.title_count() {
            if self.title_copies(l) == 0 {
                return bad(format!("title {l} has no copies in the system"));
            }
        }
        if self.loan_days == 0 {
            return bad("loan_days must be positive".into());
        }
        if self.sim_days == 0 {
            return bad("sim_days must be positive".into());
        }
        if !(self.calibration_scale > 0.0 && self.calibration_scale.is_finite()) {
            return bad(format!(
                "calibration_scale {} must be positive",
                self.calibration_scale
            ));
        }
        arrival_rates(self).map(|_| ())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let scenario: Scenario = io::load_json(path)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::save_json(path, self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fulfillment {
    NearOptimal,
    Tiered,
    RandomAvailable,
}

/// Browser reserve fractions plus the hold fulfillment rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub beta: Vec<f64>,
    pub fulfillment: Fulfillment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier_assignment: Option<Vec<u8>>,
    #[serde(default)]
    pub local_first: bool,
}

impl PolicySpec {
    pub fn new(beta: Vec<f64>, fulfillment: Fulfillment) -> Self {
        PolicySpec {
            beta: beta.into_iter().map(|b| b.clamp(0.0, 1.0)).collect(),
            fulfillment,
            tier_assignment: None,
            local_first: false,
        }
    }

    pub fn uniform(branch_count: usize, beta: f64, fulfillment: Fulfillment) -> Self {
        PolicySpec::new(vec![beta; branch_count], fulfillment)
    }

    pub fn tiered(beta: Vec<f64>, tiers: Vec<u8>, local_first: bool) -> Self {
        PolicySpec {
            tier_assignment: Some(tiers),
            local_first,
            ..PolicySpec::new(beta, Fulfillment::Tiered)
        }
    }

    /// Clamps `beta` into `[0, 1]` and checks shape against `branch_count`.
    pub fn validate(&mut self, branch_count: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPolicy(msg));
        if self.beta.len() != branch_count {
            return bad(format!(
                "beta has {} entries for {branch_count} branches",
                self.beta.len()
            ));
        }
        if self.beta.iter().any(|b| b.is_nan()) {
            return bad("beta contains NaN".into());
        }
        for b in &mut self.beta {
            *b = b.clamp(0.0, 1.0);
        }
        match (&self.fulfillment, &self.tier_assignment) {
            (Fulfillment::Tiered, None) => bad("Tiered fulfillment requires tier_assignment".into()),
            (Fulfillment::Tiered, Some(tiers)) => {
                if tiers.len() != branch_count {
                    return bad(format!(
                        "tier_assignment has {} entries for {branch_count} branches",
                        tiers.len()
                    ));
                }
                if let Some(t) = tiers.iter().find(|t| !(1..=3).contains(*t)) {
                    return bad(format!("tier {t} outside 1..=3"));
                }
                Ok(())
            }
            (_, Some(_)) => bad("tier_assignment is only valid with Tiered fulfillment".into()),
            (_, None) => Ok(()),
        }
    }

    pub fn load(path: impl AsRef<Path>, branch_count: usize) -> Result<Self> {
        let mut policy: PolicySpec = io::load_json(path)?;
        policy.validate(branch_count)?;
        Ok(policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::save_json(path, self)
    }
}

/// Daily arrival probabilities per `(title, patron class)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalRates {
    branch_count: usize,
    rates: Vec<f64>,
}

impl ArrivalRates {
    pub fn branch_count(&self) -> usize {
        self.branch_count
    }

    /// Rates of one title, indexed by patron class.
    pub fn title(&self, title: usize) -> &[f64] {
        let width = 2 * self.branch_count;
        &self.rates[title * width..(title + 1) * width]
    }

    pub fn rate(&self, title: usize, j: PatronClass) -> f64 {
        self.title(title)[j.index()]
    }
}

/// Per-class daily arrival probabilities: holds arrive at
/// `scale * d * p * h`, browsers at `scale * d * p * (1 - h)`.
pub fn arrival_rates(scenario: &Scenario) -> Result<ArrivalRates> {
    let n = scenario.branch_count();
    let scale = scenario.calibration_scale;
    let mut rates = Vec::with_capacity(scenario.title_count() * 2 * n);
    for (l, title) in scenario.titles.iter().enumerate() {
        for (i, branch) in scenario.branches.iter().enumerate() {
            let base = scale * title.desirability * branch.demand_size;
            let hold = base * branch.hold_fraction;
            let browse = base * (1.0 - branch.hold_fraction);
            for rate in [browse, hold] {
                if rate > 1.0 {
                    return Err(Error::CalibrationOverflow {
                        branch: i,
                        title: l,
                        rate,
                    });
                }
            }
            rates.push(browse);
            rates.push(hold);
        }
    }
    Ok(ArrivalRates {
        branch_count: n,
        rates,
    })
}
