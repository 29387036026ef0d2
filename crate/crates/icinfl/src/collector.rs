//! Subset collection: sample M random k-subsets of the train split, evaluate
//! each on the dev split through a backend, and keep the run dataset
//! D = {(S_i, f(S_i))} with coverage and token accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{parallel_map_ordered, Backend, BackendDescriptor};
use crate::corpus::{
    build_prompt, sample_label_balanced, DatasetSplits, Example, ExampleId, ExampleIndex,
    TaskTemplate,
};
use crate::error::{Error, Result};
use crate::StableHash;

/// Average inclusion count below which influence estimates are flagged as
/// under-covered.
pub const COVERAGE_TARGET: f64 = 30.0;

/// One evaluated subset: membership, the ordering actually prompted, and the
/// measured dev metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRecord {
    /// Sorted membership of S_i.
    pub subset_ids: Vec<ExampleId>,
    /// The permutation used in the prompt.
    pub ordering: Vec<ExampleId>,
    /// correct_count / n_dev.
    pub metric: f64,
    pub n_dev: usize,
    pub tokens_spent: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub task: String,
    pub k: usize,
    pub train_ids: Vec<ExampleId>,
    pub backend: BackendDescriptor,
    pub seed: u64,
    /// Content hash of the inputs this run was produced from, for staleness
    /// detection downstream.
    #[serde(default)]
    pub input_hash: Option<String>,
}

/// The collection D = {(S_i, f(S_i))}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDataset {
    pub meta: RunMeta,
    pub records: Vec<SubsetRecord>,
}

impl RunDataset {
    pub fn m(&self) -> usize {
        self.records.len()
    }

    pub fn validate(&self) -> Result<()> {
        let universe: std::collections::BTreeSet<ExampleId> =
            self.meta.train_ids.iter().copied().collect();
        for (i, rec) in self.records.iter().enumerate() {
            if rec.subset_ids.len() != self.meta.k {
                return Err(Error::Record {
                    index: i,
                    message: format!(
                        "subset size {} != k {}",
                        rec.subset_ids.len(),
                        self.meta.k
                    ),
                });
            }
            if !rec.subset_ids.iter().all(|id| universe.contains(id)) {
                return Err(Error::Record {
                    index: i,
                    message: "subset id outside train universe".into(),
                });
            }
            let mut sorted = rec.ordering.clone();
            sorted.sort_unstable();
            if sorted != rec.subset_ids {
                return Err(Error::Record {
                    index: i,
                    message: "ordering is not a permutation of subset_ids".into(),
                });
            }
            if !(0.0..=1.0).contains(&rec.metric) {
                return Err(Error::Record {
                    index: i,
                    message: format!("metric {} outside [0,1]", rec.metric),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetEvaluation {
    pub metric: f64,
    pub correct: usize,
    pub n_dev: usize,
    pub tokens_spent: u64,
}

/// Evaluate one context ordering over every dev query: metric is the
/// fraction of dev queries where classify returns the gold label.
pub fn evaluate_subset(
    ordering: &[ExampleId],
    dev: &[Example],
    backend: &dyn Backend,
    template: &TaskTemplate,
    index: &ExampleIndex,
) -> Result<SubsetEvaluation> {
    if dev.is_empty() {
        return Err(Error::InvalidArgument("dev split is empty".into()));
    }
    let max_in_flight = backend.descriptor().max_in_flight;
    let outcomes = parallel_map_ordered(dev, max_in_flight, |query| {
        let prompt = build_prompt(template, ordering, query.id, index)?;
        let predicted = backend.classify(&prompt)?;
        let prompt_tokens = backend.count_tokens(&prompt.prompt_text) as u64;
        let tokens: u64 = prompt
            .choices
            .iter()
            .map(|c| prompt_tokens + backend.count_tokens(c) as u64)
            .sum();
        Ok((predicted == query.label_index, tokens))
    });
    let mut correct = 0usize;
    let mut tokens = 0u64;
    for outcome in outcomes {
        let (ok, t) = outcome?;
        if ok {
            correct += 1;
        }
        tokens += t;
    }
    Ok(SubsetEvaluation {
        metric: correct as f64 / dev.len() as f64,
        correct,
        n_dev: dev.len(),
        tokens_spent: tokens,
    })
}

/// Smallest M achieving the target expected coverage: ceil(target * |S| / k).
pub fn default_m(train_len: usize, k: usize, target: f64) -> usize {
    ((target * train_len as f64) / k as f64).ceil() as usize
}

#[derive(Debug, Clone)]
pub struct CollectReport {
    pub run: RunDataset,
    pub expected_coverage: f64,
    pub coverage_warning: bool,
}

/// Collect M subset records. Each record's sampling stream is derived from
/// (seed, record index), so collection can resume from `start_at` and still
/// produce the records a fresh run would have produced.
pub fn collect<F>(
    splits: &DatasetSplits,
    template: &TaskTemplate,
    backend: &dyn Backend,
    task: &str,
    k: usize,
    m: usize,
    seed: u64,
    start_at: usize,
    mut sink: F,
) -> Result<CollectReport>
where
    F: FnMut(&SubsetRecord) -> Result<()>,
{
    if m == 0 {
        return Err(Error::InvalidArgument("M must be positive".into()));
    }
    if k > template.k_max {
        return Err(Error::InvalidArgument(format!(
            "k {k} exceeds template k_max {}",
            template.k_max
        )));
    }
    let index = splits.index();
    let train_ids = splits.train_ids();
    let expected_coverage = m as f64 * k as f64 / train_ids.len() as f64;
    let coverage_warning = expected_coverage < COVERAGE_TARGET;

    let mut records = Vec::with_capacity(m);
    for i in 0..m {
        let record_seed = StableHash::new()
            .write_u64(seed)
            .write_str("subset")
            .write_u64(i as u64)
            .finish();
        let mut rng = crate::seeded_rng(record_seed);
        let ordering = sample_label_balanced(&splits.train, k, &mut rng)?;
        if i < start_at {
            continue; // already persisted by a previous attempt
        }
        let eval = evaluate_subset(&ordering, &splits.dev, backend, template, &index)?;
        let mut subset_ids = ordering.clone();
        subset_ids.sort_unstable();
        let record = SubsetRecord {
            subset_ids,
            ordering,
            metric: eval.metric,
            n_dev: eval.n_dev,
            tokens_spent: eval.tokens_spent,
        };
        sink(&record)?;
        records.push(record);
    }

    Ok(CollectReport {
        run: RunDataset {
            meta: RunMeta {
                task: task.to_string(),
                k,
                train_ids,
                backend: backend.descriptor().clone(),
                seed,
                input_hash: None,
            },
            records,
        },
        expected_coverage,
        coverage_warning,
    })
}

/// Inclusion count N_j per train id; never-sampled ids map to 0.
pub fn coverage(run: &RunDataset) -> BTreeMap<ExampleId, u64> {
    let mut counts: BTreeMap<ExampleId, u64> =
        run.meta.train_ids.iter().map(|&id| (id, 0)).collect();
    for rec in &run.records {
        for id in &rec.subset_ids {
            *counts.entry(*id).or_insert(0) += 1;
        }
    }
    counts
}

/// Total prompt+continuation tokens actually scored across the run.
pub fn tokens_spent(run: &RunDataset) -> u64 {
    run.records.iter().map(|r| r.tokens_spent).sum()
}
