//! Non-influence selection baselines (random, best observed set, one-shot,
//! semantic similarity, perplexity) and rank aggregation across methods and
//! tasks.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{cosine_similarity, parallel_map_ordered, Backend};
use crate::collector::{evaluate_subset, RunDataset};
use crate::corpus::{
    render_example, sample_label_balanced, Example, ExampleId, ExampleIndex, TaskTemplate,
};
use crate::error::{Error, Result};
use crate::influence::Sign;
use crate::stats;

/// A total order over the train universe under one method's criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRanking {
    pub method: String,
    /// Best first under the method's own criterion and sign.
    pub ordered_ids: Vec<ExampleId>,
    pub scores: BTreeMap<ExampleId, f64>,
    pub sign: Sign,
}

impl MethodRanking {
    /// Order ids by score; `higher_is_better` describes the positive-sign
    /// direction of the criterion, which `sign` then possibly mirrors.
    fn from_scores(
        method: &str,
        scores: BTreeMap<ExampleId, f64>,
        sign: Sign,
        higher_is_better: bool,
    ) -> Self {
        let descending = higher_is_better == (sign == Sign::Positive);
        let mut ids: Vec<ExampleId> = scores.keys().copied().collect();
        ids.sort_by(|a, b| {
            let (sa, sb) = (scores[a], scores[b]);
            let ord = if descending {
                sb.partial_cmp(&sa).unwrap()
            } else {
                sa.partial_cmp(&sb).unwrap()
            };
            ord.then(a.cmp(b))
        });
        MethodRanking {
            method: method.to_string(),
            ordered_ids: ids,
            scores,
            sign,
        }
    }

    pub fn top_k(&self, k: usize) -> &[ExampleId] {
        &self.ordered_ids[..k.min(self.ordered_ids.len())]
    }
}

/// Random baseline: a label-balanced random sample.
pub fn random_selection<R: Rng>(
    train: &[Example],
    k: usize,
    rng: &mut R,
) -> Result<Vec<ExampleId>> {
    sample_label_balanced(train, k, rng)
}

/// Membership of the best (or worst) metric record observed during
/// collection; ties broken by earliest record.
pub fn best_observed_set(run: &RunDataset, sign: Sign) -> Result<Vec<ExampleId>> {
    if run.records.is_empty() {
        return Err(Error::InvalidArgument("run dataset is empty".into()));
    }
    let mut best = 0usize;
    for (i, rec) in run.records.iter().enumerate() {
        let better = match sign {
            Sign::Positive => rec.metric > run.records[best].metric,
            Sign::Negative => rec.metric < run.records[best].metric,
        };
        if better {
            best = i;
        }
    }
    Ok(run.records[best].subset_ids.clone())
}

/// One-shot prompting on each train example, ranked by dev accuracy.
pub fn oneshot_ranking(
    train: &[Example],
    dev: &[Example],
    backend: &dyn Backend,
    template: &TaskTemplate,
    index: &ExampleIndex,
    sign: Sign,
) -> Result<MethodRanking> {
    let mut scores = BTreeMap::new();
    for ex in train {
        let eval = evaluate_subset(&[ex.id], dev, backend, template, index)?;
        scores.insert(ex.id, eval.metric);
    }
    Ok(MethodRanking::from_scores("oneshot", scores, sign, true))
}

/// Mean cosine similarity between each train example's unlabeled rendering
/// and every dev query's unlabeled rendering.
pub fn similarity_ranking(
    train: &[Example],
    dev: &[Example],
    backend: &dyn Backend,
    template: &TaskTemplate,
    sign: Sign,
) -> Result<MethodRanking> {
    let max_in_flight = backend.descriptor().max_in_flight;
    let dev_embeddings: Vec<Vec<f64>> = parallel_map_ordered(dev, max_in_flight, |query| {
        backend.embed(&render_example(template, query, false)?)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let scored = parallel_map_ordered(train, max_in_flight, |ex| {
        let v = backend.embed(&render_example(template, ex, false)?)?;
        let mean_sim = dev_embeddings
            .iter()
            .map(|d| cosine_similarity(&v, d))
            .sum::<f64>()
            / dev_embeddings.len() as f64;
        Ok((ex.id, mean_sim))
    });
    let scores: BTreeMap<ExampleId, f64> = scored.into_iter().collect::<Result<_>>()?;
    Ok(MethodRanking::from_scores("similarity", scores, sign, true))
}

/// Perplexity of each labeled rendered example (separator excluded); lower
/// perplexity ranks first under positive selection.
pub fn perplexity_ranking(
    train: &[Example],
    backend: &dyn Backend,
    template: &TaskTemplate,
    sign: Sign,
) -> Result<MethodRanking> {
    let max_in_flight = backend.descriptor().max_in_flight;
    let scored = parallel_map_ordered(train, max_in_flight, |ex| {
        let text = render_example(template, ex, true)?;
        Ok((ex.id, backend.perplexity(&text)?))
    });
    let scores: BTreeMap<ExampleId, f64> = scored.into_iter().collect::<Result<_>>()?;
    Ok(MethodRanking::from_scores("perplexity", scores, sign, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankAggregate {
    /// (method, task) -> rank within the task; ties share the mean rank.
    pub per_task_rank: BTreeMap<(String, String), f64>,
    pub mean_rank: BTreeMap<String, f64>,
}

/// Rank methods by per-task accuracy (rank 1 = best for the given sign,
/// ties averaged) and aggregate by taking the mean rank across tasks.
pub fn rank_aggregate(
    accuracy: &BTreeMap<(String, String), f64>,
    sign: Sign,
) -> Result<RankAggregate> {
    let mut methods: Vec<String> = Vec::new();
    let mut tasks: Vec<String> = Vec::new();
    for (method, task) in accuracy.keys() {
        if !methods.contains(method) {
            methods.push(method.clone());
        }
        if !tasks.contains(task) {
            tasks.push(task.clone());
        }
    }
    let mut per_task_rank = BTreeMap::new();
    for task in &tasks {
        let mut values = Vec::with_capacity(methods.len());
        for method in &methods {
            let acc = accuracy
                .get(&(method.clone(), task.clone()))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("missing cell ({method}, {task})"))
                })?;
            // rank 1 = best: highest accuracy under positive selection,
            // lowest under negative
            let keyed = match sign {
                Sign::Positive => -acc,
                Sign::Negative => *acc,
            };
            values.push(keyed);
        }
        let ranks = stats::fractional_ranks(&values);
        for (method, rank) in methods.iter().zip(ranks) {
            per_task_rank.insert((method.clone(), task.clone()), rank);
        }
    }
    let mut mean_rank = BTreeMap::new();
    for method in &methods {
        let sum: f64 = tasks
            .iter()
            .map(|t| per_task_rank[&(method.clone(), t.clone())])
            .sum();
        mean_rank.insert(method.clone(), sum / tasks.len() as f64);
    }
    Ok(RankAggregate {
        per_task_rank,
        mean_rank,
    })
}
