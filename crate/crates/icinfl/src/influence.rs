//! In-context influence scores: for each train example, the mean metric of
//! runs that included it minus the mean metric of runs that omitted it.
//! Plus ranking, percentile bins, selection, and cross-model overlap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::collector::RunDataset;
use crate::corpus::ExampleId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    /// I(x_j) for every id with 0 < N_j < M.
    pub scores: BTreeMap<ExampleId, f64>,
    pub n_included: BTreeMap<ExampleId, u64>,
    pub m_total: u64,
    /// Ids with N_j in {0, M}: influence undefined, excluded from ranking.
    pub undefined_ids: Vec<ExampleId>,
}

/// Streaming computation of influence scores: one pass accumulating the
/// global metric sum plus per-id include-sums, then
/// I(x_j) = include_sum/N_j - (total - include_sum)/(M - N_j).
pub fn influence_scores(run: &RunDataset) -> Result<InfluenceReport> {
    let m = run.records.len() as u64;
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 records to estimate influences, got {m}"
        )));
    }
    let mut total = 0.0f64;
    let mut include_sum: BTreeMap<ExampleId, f64> = BTreeMap::new();
    let mut include_count: BTreeMap<ExampleId, u64> = BTreeMap::new();
    for rec in &run.records {
        total += rec.metric;
        for &id in &rec.subset_ids {
            *include_sum.entry(id).or_insert(0.0) += rec.metric;
            *include_count.entry(id).or_insert(0) += 1;
        }
    }

    let mut scores = BTreeMap::new();
    let mut n_included = BTreeMap::new();
    let mut undefined_ids = Vec::new();
    for &id in &run.meta.train_ids {
        let n = include_count.get(&id).copied().unwrap_or(0);
        n_included.insert(id, n);
        if n == 0 || n == m {
            undefined_ids.push(id);
            continue;
        }
        let inc = include_sum[&id];
        let score = inc / n as f64 - (total - inc) / (m - n) as f64;
        scores.insert(id, score);
    }
    Ok(InfluenceReport {
        scores,
        n_included,
        m_total: m,
        undefined_ids,
    })
}

/// Ordered ids sorted by signed score: descending for positive selection,
/// ascending for negative; ties broken by ascending id.
pub fn ranked_ids(scores: &BTreeMap<ExampleId, f64>, sign: Sign) -> Vec<ExampleId> {
    let mut ids: Vec<ExampleId> = scores.keys().copied().collect();
    ids.sort_by(|a, b| {
        let (sa, sb) = (scores[a], scores[b]);
        let ord = match sign {
            Sign::Positive => sb.partial_cmp(&sa).unwrap(),
            Sign::Negative => sa.partial_cmp(&sb).unwrap(),
        };
        ord.then(a.cmp(b))
    });
    ids
}

/// Top-k examples by signed influence. Final prompt ordering is randomized
/// by the caller.
pub fn select_examples(report: &InfluenceReport, k: usize, sign: Sign) -> Result<Vec<ExampleId>> {
    if k > report.scores.len() {
        return Err(Error::InvalidArgument(format!(
            "k {k} exceeds {} scored ids",
            report.scores.len()
        )));
    }
    let mut ids = ranked_ids(&report.scores, sign);
    ids.truncate(k);
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileBins {
    /// Lowest influence first.
    pub bins: Vec<Vec<ExampleId>>,
    pub n_bins: usize,
}

/// Partition scored ids into contiguous influence bins, lowest first.
/// Remainder ids go to the lowest bins.
pub fn percentile_bins(report: &InfluenceReport, n_bins: usize) -> Result<PercentileBins> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument("n_bins must be at least 2".into()));
    }
    let n = report.scores.len();
    if n < n_bins {
        return Err(Error::InvalidArgument(format!(
            "{n} scored ids is fewer than {n_bins} bins"
        )));
    }
    // ascending by score then id; negative ranking order is exactly that
    let ids = ranked_ids(&report.scores, Sign::Negative);
    let base = n / n_bins;
    let extra = n % n_bins;
    let mut bins = Vec::with_capacity(n_bins);
    let mut rest = ids;
    for b in 0..n_bins {
        let size = base + usize::from(b < extra);
        let tail = rest.split_off(size);
        bins.push(rest);
        rest = tail;
    }
    Ok(PercentileBins { bins, n_bins })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinEvaluation {
    /// One accuracy per evaluated prompt (seed).
    pub accuracies: Vec<f64>,
    pub n_queries: usize,
    pub k: usize,
}

/// Mean accuracy difference between top-bin and bottom-bin prompts, in
/// percentage points.
pub fn influence_gap(top: &BinEvaluation, bottom: &BinEvaluation) -> Result<f64> {
    if top.n_queries != bottom.n_queries || top.k != bottom.k {
        return Err(Error::InvalidArgument(
            "gap requires identical query sets and k".into(),
        ));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok((mean(&top.accuracies) - mean(&bottom.accuracies)) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinSide {
    Top,
    Bottom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub intersection: usize,
    pub union: usize,
    pub per_report: Vec<usize>,
}

/// Intersection/union of the selected-fraction id sets across per-model
/// reports sharing one id universe.
pub fn overlap_analysis(
    reports: &[&InfluenceReport],
    side: BinSide,
    frac: f64,
) -> Result<OverlapCounts> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 reports".into()));
    }
    let universe: BTreeSet<ExampleId> = reports[0].n_included.keys().copied().collect();
    for r in &reports[1..] {
        let u: BTreeSet<ExampleId> = r.n_included.keys().copied().collect();
        if u != universe {
            return Err(Error::InvalidArgument(
                "reports cover different id universes".into(),
            ));
        }
    }
    let mut intersection: Option<BTreeSet<ExampleId>> = None;
    let mut union: BTreeSet<ExampleId> = BTreeSet::new();
    let mut per_report = Vec::new();
    for r in reports {
        let take = ((r.scores.len() as f64) * frac).round() as usize;
        let sign = match side {
            BinSide::Top => Sign::Positive,
            BinSide::Bottom => Sign::Negative,
        };
        let ids: BTreeSet<ExampleId> = ranked_ids(&r.scores, sign).into_iter().take(take).collect();
        per_report.push(ids.len());
        union.extend(ids.iter().copied());
        intersection = Some(match intersection {
            None => ids,
            Some(acc) => acc.intersection(&ids).copied().collect(),
        });
    }
    Ok(OverlapCounts {
        intersection: intersection.map(|s| s.len()).unwrap_or(0),
        union: union.len(),
        per_report,
    })
}
