//! In-context datamodels: fit g(S') = theta . 1_{S'} + theta0 by
//! L1-regularized least squares over (indicator, metric) pairs, via cyclic
//! coordinate descent with soft-thresholding, and evaluate held-out
//! predictive correlation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::collector::{RunDataset, SubsetRecord};
use crate::corpus::ExampleId;
use crate::error::{Error, Result};
use crate::influence::Sign;
use crate::stats;

pub const CONVERGENCE_TOL: f64 = 1e-7;
pub const MAX_SWEEPS: usize = 10_000;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_HELDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatamodelWeights {
    pub theta: BTreeMap<ExampleId, f64>,
    pub theta0: f64,
    pub lambda: f64,
    pub train_record_count: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_rho: f64,
    pub n_heldout: usize,
    pub mse: f64,
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

struct Design {
    feature_ids: Vec<ExampleId>,
    /// record indices containing each feature
    rows: Vec<Vec<usize>>,
    y: Vec<f64>,
}

impl Design {
    fn from_records(train_ids: &[ExampleId], records: &[SubsetRecord]) -> Self {
        let feature_ids = train_ids.to_vec();
        let col_of: BTreeMap<ExampleId, usize> = feature_ids
            .iter()
            .enumerate()
            .map(|(j, &id)| (id, j))
            .collect();
        let mut rows = vec![Vec::new(); feature_ids.len()];
        for (i, rec) in records.iter().enumerate() {
            for id in &rec.subset_ids {
                rows[col_of[id]].push(i);
            }
        }
        Design {
            feature_ids,
            rows,
            y: records.iter().map(|r| r.metric).collect(),
        }
    }
}

/// Objective value (1/(2n)) * sum (pred - y)^2 + lambda * |theta|_1 with an
/// unpenalized intercept.
pub fn objective(run_records: &[SubsetRecord], weights: &DatamodelWeights) -> f64 {
    let n = run_records.len() as f64;
    let mut sse = 0.0;
    for rec in run_records {
        let pred: f64 = weights.theta0
            + rec
                .subset_ids
                .iter()
                .map(|id| weights.theta.get(id).copied().unwrap_or(0.0))
                .sum::<f64>();
        sse += (pred - rec.metric) * (pred - rec.metric);
    }
    let l1: f64 = weights.theta.values().map(|t| t.abs()).sum();
    sse / (2.0 * n) + weights.lambda * l1
}

/// Max KKT violation at the solution: for theta_j != 0 the stationarity
/// residual |grad_j + lambda*sign(theta_j)|, for theta_j = 0 the excess
/// max(|grad_j| - lambda, 0). Smooth-part gradient is (1/n) X^T (pred - y).
pub fn kkt_violation(run_records: &[SubsetRecord], weights: &DatamodelWeights) -> f64 {
    let n = run_records.len() as f64;
    let mut residual: Vec<f64> = Vec::with_capacity(run_records.len());
    for rec in run_records {
        let pred: f64 = weights.theta0
            + rec
                .subset_ids
                .iter()
                .map(|id| weights.theta.get(id).copied().unwrap_or(0.0))
                .sum::<f64>();
        residual.push(pred - rec.metric);
    }
    let mut grad: BTreeMap<ExampleId, f64> = weights.theta.keys().map(|&id| (id, 0.0)).collect();
    for (i, rec) in run_records.iter().enumerate() {
        for id in &rec.subset_ids {
            if let Some(g) = grad.get_mut(id) {
                *g += residual[i] / n;
            }
        }
    }
    let mut worst = 0.0f64;
    for (id, &t) in &weights.theta {
        let g = grad[id];
        let v = if t != 0.0 {
            (g + weights.lambda * t.signum()).abs()
        } else {
            (g.abs() - weights.lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    // intercept stationarity (unpenalized)
    worst.max((residual.iter().sum::<f64>() / n).abs())
}

/// Fit on a record list (already holdout-separated).
pub fn fit_on_records(
    train_ids: &[ExampleId],
    records: &[SubsetRecord],
    lambda: f64,
) -> Result<DatamodelWeights> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be non-negative".into()));
    }
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 training records, got {}",
            records.len()
        )));
    }
    let design = Design::from_records(train_ids, records);
    let n = design.y.len();
    let nf = n as f64;

    let mut theta = vec![0.0f64; design.feature_ids.len()];
    let mut theta0 = design.y.iter().sum::<f64>() / nf;
    // residual r_i = y_i - prediction_i
    let mut residual: Vec<f64> = design.y.iter().map(|y| y - theta0).collect();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut max_delta = 0.0f64;

        for j in 0..theta.len() {
            let rows = &design.rows[j];
            if rows.is_empty() {
                continue;
            }
            let z = rows.len() as f64 / nf; // (1/n) sum x_ij^2 for binary features
            let old = theta[j];
            // rho = (1/n) sum_i x_ij (r_i + x_ij * theta_j)
            let rho = rows.iter().map(|&i| residual[i]).sum::<f64>() / nf + z * old;
            let new = soft_threshold(rho, lambda) / z;
            if new != old {
                let delta = new - old;
                for &i in rows {
                    residual[i] -= delta;
                }
                theta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }

        // unpenalized intercept
        let shift = residual.iter().sum::<f64>() / nf;
        if shift != 0.0 {
            theta0 += shift;
            for r in &mut residual {
                *r -= shift;
            }
            max_delta = max_delta.max(shift.abs());
        }

        if max_delta < CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }

    Ok(DatamodelWeights {
        theta: design
            .feature_ids
            .iter()
            .zip(&theta)
            .map(|(&id, &t)| (id, t))
            .collect(),
        theta0,
        lambda,
        train_record_count: n,
        converged,
    })
}

/// Fit a datamodel on a run dataset, holding out a uniformly random fraction
/// of records that are never touched during fitting.
pub fn fit_datamodel(
    run: &RunDataset,
    lambda: f64,
    heldout_fraction: f64,
    seed: u64,
) -> Result<(DatamodelWeights, Vec<SubsetRecord>)> {
    if !(0.0..1.0).contains(&heldout_fraction) {
        return Err(Error::InvalidArgument(
            "heldout_fraction must be in [0, 1)".into(),
        ));
    }
    let n_held = (run.records.len() as f64 * heldout_fraction).round() as usize;
    let mut order: Vec<usize> = (0..run.records.len()).collect();
    let mut rng = crate::seeded_rng(seed);
    order.shuffle(&mut rng);
    let held_idx: std::collections::BTreeSet<usize> = order.into_iter().take(n_held).collect();
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, rec) in run.records.iter().enumerate() {
        if held_idx.contains(&i) {
            held.push(rec.clone());
        } else {
            train.push(rec.clone());
        }
    }
    let weights = fit_on_records(&run.meta.train_ids, &train, lambda)?;
    Ok((weights, held))
}

/// g(S') = theta0 + sum_{j in S'} theta_j.
pub fn predict(weights: &DatamodelWeights, subset_ids: &[ExampleId]) -> Result<f64> {
    let mut sum = weights.theta0;
    for id in subset_ids {
        sum += weights.theta.get(id).ok_or(Error::UnknownId(*id))?;
    }
    Ok(sum)
}

/// Pearson correlation and MSE between predictions and actual metrics on
/// held-out records.
pub fn heldout_correlation(
    weights: &DatamodelWeights,
    heldout: &[SubsetRecord],
) -> Result<CorrelationReport> {
    if heldout.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 heldout records".into(),
        ));
    }
    let actuals: Vec<f64> = heldout.iter().map(|r| r.metric).collect();
    let preds: Vec<f64> = heldout
        .iter()
        .map(|r| predict(weights, &r.subset_ids))
        .collect::<Result<_>>()?;
    let rho = stats::pearson(&preds, &actuals)
        .ok_or_else(|| Error::InvalidArgument("correlation undefined: constant actuals".into()))?;
    let mse = preds
        .iter()
        .zip(&actuals)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / heldout.len() as f64;
    Ok(CorrelationReport {
        pearson_rho: rho,
        n_heldout: heldout.len(),
        mse,
    })
}

/// Top-k ids by signed theta; same contract as influence selection. The
/// second return value flags a fully degenerate (all-equal) weight vector.
pub fn datamodel_select(
    weights: &DatamodelWeights,
    k: usize,
    sign: Sign,
) -> Result<(Vec<ExampleId>, bool)> {
    if k > weights.theta.len() {
        return Err(Error::InvalidArgument(format!(
            "k {k} exceeds {} weighted ids",
            weights.theta.len()
        )));
    }
    let mut ids = crate::influence::ranked_ids(&weights.theta, sign);
    ids.truncate(k);
    let mut values: Vec<f64> = weights.theta.values().copied().collect();
    values.dedup();
    let degenerate = values.len() <= 1;
    Ok((ids, degenerate))
}
