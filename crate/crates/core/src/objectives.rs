//! Usage and browser-experience objectives, plus per-branch diagnostics.

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::simulator::{Baselines, SimMetrics, SimOutput, FLOW_SCALE};

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectivePoint {
    pub f: f64,
    pub g: f64,
    pub g_nash: f64,
    pub usage_ratio: Vec<f64>,
    pub quality_ratio: Vec<f64>,
    pub net_inflow: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrowserObjective {
    pub g: f64,
    pub g_nash: f64,
    pub quality_ratio: Vec<f64>,
}

fn ratios(values: &[f64], baseline: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .zip(baseline)
        .enumerate()
        .map(|(branch, (&v, &b))| {
            if b > 0.0 {
                Ok(v / b)
            } else {
                Err(Error::ZeroBaseline { branch })
            }
        })
        .collect()
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

/// `(f, usage ratios)`: demand-weighted mean of `CO_i / baseline_CO_i`.
pub fn usage_ratio_objective(checkouts: &[f64], baseline_co: &[f64], demand_sizes: &[f64]) -> Result<(f64, Vec<f64>)> {
    let r = ratios(checkouts, baseline_co)?;
    Ok((weighted_mean(&r, demand_sizes), r))
}

pub fn usage_objective(metrics: &SimMetrics, baseline_co: &[f64], demand_sizes: &[f64]) -> Result<(f64, Vec<f64>)> {
    let checkouts: Vec<f64> = (0..metrics.branch_count()).map(|i| metrics.checkouts(i)).collect();
    usage_ratio_objective(&checkouts, baseline_co, demand_sizes)
}

/// `CQ_i = Σ_l d_l D[i][l]`.
pub fn collection_quality(metrics: &SimMetrics, desirabilities: &[f64]) -> Vec<f64> {
    metrics
        .availability
        .iter()
        .map(|days| days.iter().zip(desirabilities).map(|(d, w)| d * w).sum())
        .collect()
}

/// Browse-weighted mean and unweighted geometric mean of quality ratios.
pub fn quality_ratio_objective(quality: &[f64], baseline_cq: &[f64], hold_fractions: &[f64]) -> Result<BrowserObjective> {
    let r = ratios(quality, baseline_cq)?;
    let weights: Vec<f64> = hold_fractions.iter().map(|h| 1.0 - h).collect();
    let g = weighted_mean(&r, &weights);
    let g_nash = if r.contains(&0.0) {
        0.0
    } else {
        (r.iter().map(|x| x.ln()).sum::<f64>() / r.len() as f64).exp()
    };
    Ok(BrowserObjective {
        g,
        g_nash,
        quality_ratio: r,
    })
}

pub fn browser_objective(
    metrics: &SimMetrics,
    baseline_cq: &[f64],
    desirabilities: &[f64],
    hold_fractions: &[f64],
) -> Result<BrowserObjective> {
    quality_ratio_objective(&collection_quality(metrics, desirabilities), baseline_cq, hold_fractions)
}

/// Net desirability inflow per branch.
#[derive(Clone, Debug, PartialEq)]
pub struct NetInflow {
    /// Exact totals over all replications, in units of `1 / FLOW_SCALE`.
    pub units: Vec<i128>,
    /// Replication means.
    pub values: Vec<f64>,
}

pub fn net_inflow(metrics: &SimMetrics) -> NetInflow {
    let units = metrics.flows.net_units();
    let scale = FLOW_SCALE * f64::from(metrics.replications);
    let values = units.iter().map(|&u| u as f64 / scale).collect();
    NetInflow { units, values }
}

pub fn objective_point(scenario: &Scenario, baselines: &Baselines, metrics: &SimMetrics) -> Result<ObjectivePoint> {
    let (f, usage_ratio) = usage_objective(metrics, &baselines.baseline_co, &scenario.demand_sizes())?;
    let browser = browser_objective(
        metrics,
        &baselines.baseline_cq,
        &scenario.desirabilities(),
        &scenario.hold_fractions(),
    )?;
    Ok(ObjectivePoint {
        f,
        g: browser.g,
        g_nash: browser.g_nash,
        usage_ratio,
        quality_ratio: browser.quality_ratio,
        net_inflow: net_inflow(metrics).values,
    })
}

/// Objectives of a full simulation, with standard errors from the spread of
/// per-replication objectives.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub point: ObjectivePoint,
    pub f_replications: Vec<f64>,
    pub g_replications: Vec<f64>,
    pub se_f: f64,
    pub se_g: f64,
    pub rejected_holds: f64,
}

/// Standard error of the mean; zero for fewer than two samples.
pub fn standard_error(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

pub fn evaluate(scenario: &Scenario, baselines: &Baselines, output: &SimOutput) -> Result<Evaluation> {
    let point = objective_point(scenario, baselines, &output.metrics)?;
    let p = scenario.demand_sizes();
    let d = scenario.desirabilities();
    let h = scenario.hold_fractions();
    let mut f_replications = Vec::with_capacity(output.per_replication.len());
    let mut g_replications = Vec::with_capacity(output.per_replication.len());
    for run in &output.per_replication {
        f_replications.push(usage_objective(run, &baselines.baseline_co, &p)?.0);
        g_replications.push(browser_objective(run, &baselines.baseline_cq, &d, &h)?.g);
    }
    Ok(Evaluation {
        se_f: standard_error(&f_replications),
        se_g: standard_error(&g_replications),
        rejected_holds: output.metrics.rejected_holds,
        point,
        f_replications,
        g_replications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_examples() {
        let (f, r) = usage_ratio_objective(&[4.0, 1.0], &[4.0, 2.0], &[0.75, 0.25]).unwrap();
        assert_eq!(r, vec![1.0, 0.5]);
        assert!((f - 0.875).abs() < 1e-15);
        assert_eq!(usage_ratio_objective(&[6.0], &[5.0], &[0.4]).unwrap().0, 1.2);
        assert!(matches!(
            usage_ratio_objective(&[1.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]),
            Err(Error::ZeroBaseline { branch: 1 })
        ));
    }

    #[test]
    fn browser_examples() {
        let b = quality_ratio_objective(&[1.0, 4.0], &[2.0, 2.0], &[0.5, 0.5]).unwrap();
        assert!((b.g_nash - 1.0).abs() < 1e-15);
        let b = quality_ratio_objective(&[0.8, 0.2], &[1.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!((b.g - 0.8).abs() < 1e-15);
        let b = quality_ratio_objective(&[3.0, 5.0], &[3.0, 5.0], &[0.2, 0.9]).unwrap();
        assert_eq!((b.g, b.g_nash), (1.0, 1.0));
        let b = quality_ratio_objective(&[0.0, 5.0], &[3.0, 5.0], &[0.2, 0.9]).unwrap();
        assert_eq!(b.g_nash, 0.0);
    }

    #[test]
    fn standard_error_of_constant_is_zero() {
        assert!(standard_error(&[0.4, 0.4, 0.4]) < 1e-15);
        assert_eq!(standard_error(&[1.0]), 0.0);
        assert!((standard_error(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
