//! Positional case study: estimate per-(example, position) and per-position
//! influences over all k! orderings of fixed example groups to quantify
//! recency bias.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::collector::evaluate_subset;
use crate::corpus::{Example, ExampleId, ExampleIndex, TaskTemplate};
use crate::error::{Error, Result};
use crate::stats;

/// Permutation count guard: beyond 6 positions the k! orderings are not
/// tractable to evaluate exhaustively.
pub const MAX_POSITIONS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalRecord {
    /// One id per group, in group order.
    pub assignment: Vec<ExampleId>,
    /// Lexicographic index of the ordering permutation.
    pub perm_index: usize,
    /// The context actually prompted: assignment permuted.
    pub ordering: Vec<ExampleId>,
    pub metric: f64,
    pub n_dev: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalRun {
    pub groups: Vec<Vec<ExampleId>>,
    pub k: usize,
    pub records: Vec<PositionalRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub mean_influence: f64,
    pub mean_abs_influence: f64,
    /// Interquartile range of per-pair influences at this position.
    pub spread: f64,
    pub stderr: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalInfluence {
    pub per_pair: BTreeMap<(ExampleId, usize), f64>,
    pub per_position: BTreeMap<usize, PositionStats>,
}

/// All permutations of 0..k in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // next lexicographic permutation
        let Some(i) = (0..k.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            break;
        };
        let j = (i + 1..k).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
    out
}

/// Evaluate sampled assignments (one id per group) under every one of the k!
/// orderings: exhaustive in ordering, sampled in assignment.
pub fn run_position_study<R: Rng>(
    groups: &[Vec<ExampleId>],
    n_assignments: usize,
    dev: &[Example],
    backend: &dyn Backend,
    template: &TaskTemplate,
    index: &ExampleIndex,
    rng: &mut R,
) -> Result<PositionalRun> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 groups".into()));
    }
    if k > MAX_POSITIONS {
        return Err(Error::InvalidArgument(format!(
            "permutation budget exceeded: {k}! orderings with k > {MAX_POSITIONS}"
        )));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for g in groups {
            if g.is_empty() {
                return Err(Error::InvalidArgument("empty example group".into()));
            }
            for id in g {
                if !seen.insert(*id) {
                    return Err(Error::InvalidArgument(format!(
                        "id {id} appears in two groups"
                    )));
                }
            }
        }
    }
    let perms = permutations(k);
    let mut records = Vec::with_capacity(n_assignments * perms.len());
    for _ in 0..n_assignments {
        let assignment: Vec<ExampleId> = groups
            .iter()
            .map(|g| g[rng.gen_range(0..g.len())])
            .collect();
        for (perm_index, perm) in perms.iter().enumerate() {
            let ordering: Vec<ExampleId> = perm.iter().map(|&p| assignment[p]).collect();
            let eval = evaluate_subset(&ordering, dev, backend, template, index)?;
            records.push(PositionalRecord {
                assignment: assignment.clone(),
                perm_index,
                ordering,
                metric: eval.metric,
                n_dev: eval.n_dev,
            });
        }
    }
    Ok(PositionalRun {
        groups: groups.to_vec(),
        k,
        records,
    })
}

/// Per-pair influence: mean metric of records with the example at position p
/// minus mean metric of all other records (example elsewhere or absent).
/// Pairs never observed are omitted.
pub fn positional_influence(run: &PositionalRun) -> Result<PositionalInfluence> {
    if run.records.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 records".into()));
    }
    let m = run.records.len() as f64;
    let total: f64 = run.records.iter().map(|r| r.metric).sum();

    let mut at_sum: BTreeMap<(ExampleId, usize), f64> = BTreeMap::new();
    let mut at_count: BTreeMap<(ExampleId, usize), u64> = BTreeMap::new();
    for rec in &run.records {
        for (pos, &id) in rec.ordering.iter().enumerate() {
            *at_sum.entry((id, pos)).or_insert(0.0) += rec.metric;
            *at_count.entry((id, pos)).or_insert(0) += 1;
        }
    }

    let mut per_pair = BTreeMap::new();
    for ((id, pos), &n) in &at_count {
        let n = n as f64;
        if n == 0.0 || n == m {
            continue; // complement empty: influence undefined for this pair
        }
        let inc = at_sum[&(*id, *pos)];
        per_pair.insert((*id, *pos), inc / n - (total - inc) / (m - n));
    }

    let mut per_position = BTreeMap::new();
    for pos in 0..run.k {
        let vals: Vec<f64> = per_pair
            .iter()
            .filter(|((_, p), _)| *p == pos)
            .map(|(_, &v)| v)
            .collect();
        if vals.is_empty() {
            continue;
        }
        let abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
        per_position.insert(
            pos,
            PositionStats {
                mean_influence: stats::mean(&vals),
                mean_abs_influence: stats::mean(&abs),
                spread: stats::iqr(&vals),
                stderr: stats::stderr(&vals),
                n_pairs: vals.len(),
            },
        );
    }

    Ok(PositionalInfluence {
        per_pair,
        per_position,
    })
}
