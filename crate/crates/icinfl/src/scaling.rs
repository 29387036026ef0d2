//! Resource diagnostics: accuracy of selection methods as a function of the
//! collection token budget, and k-shot generalization of influences estimated
//! at a single large k.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::baselines::{
    oneshot_ranking, perplexity_ranking, random_selection, similarity_ranking, MethodRanking,
};
use crate::collector::{collect, default_m, evaluate_subset, RunDataset, COVERAGE_TARGET};
use crate::corpus::{DatasetSplits, TaskTemplate};
use crate::datamodel::{datamodel_select, fit_datamodel, DEFAULT_HELDOUT_FRACTION, DEFAULT_LAMBDA};
use crate::error::{Error, Result};
use crate::influence::{influence_scores, select_examples, Sign};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Tokens,
    Shots,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Influence,
    Datamodel,
    Random,
    Oneshot,
    Similarity,
    Perplexity,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Influence => "influence",
            Method::Datamodel => "datamodel",
            Method::Random => "random",
            Method::Oneshot => "oneshot",
            Method::Similarity => "similarity",
            Method::Perplexity => "perplexity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "influence" => Ok(Method::Influence),
            "datamodel" => Ok(Method::Datamodel),
            "random" => Ok(Method::Random),
            "oneshot" => Ok(Method::Oneshot),
            "similarity" => Ok(Method::Similarity),
            "perplexity" => Ok(Method::Perplexity),
            other => Err(Error::InvalidArgument(format!(
                "unknown selection method '{other}'"
            ))),
        }
    }

    /// Whether the method's selection is derived from the run dataset.
    fn uses_run(self) -> bool {
        matches!(self, Method::Influence | Method::Datamodel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodPoint {
    pub mean: f64,
    pub stderr: f64,
    /// False when the x value could not support the method (e.g. a token
    /// budget below one subset evaluation); mean/stderr are NaN then.
    pub available: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    /// Collection tokens actually consumed at this point (tokens axis only).
    pub tokens_spent: u64,
    pub methods: BTreeMap<String, MethodPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// One row per (x, method): `x,method,mean,stderr`; unavailable points
    /// leave mean/stderr empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,method,mean,stderr\n");
        for p in &self.points {
            for (name, mp) in &p.methods {
                if mp.available {
                    out.push_str(&format!(
                        "{},{},{:.6},{:.6}\n",
                        p.x, name, mp.mean, mp.stderr
                    ));
                } else {
                    out.push_str(&format!("{},{},,\n", p.x, name));
                }
            }
        }
        out
    }
}

/// Evaluate a fixed selection on dev, once per seed with a seed-shuffled
/// ordering; returns (mean, stderr) over the seeds.
fn evaluate_over_seeds(
    selection: &[crate::corpus::ExampleId],
    splits: &DatasetSplits,
    backend: &dyn Backend,
    template: &TaskTemplate,
    seeds: &[u64],
) -> Result<(f64, f64)> {
    let index = splits.index();
    let mut metrics = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut ordering = selection.to_vec();
        ordering.shuffle(&mut crate::seeded_rng(seed));
        metrics.push(evaluate_subset(&ordering, &splits.dev, backend, template, &index)?.metric);
    }
    Ok((stats::mean(&metrics), stats::stderr(&metrics)))
}

/// Mean/stderr where the selection itself is redrawn per seed (random
/// baseline).
fn evaluate_random_over_seeds(
    splits: &DatasetSplits,
    k: usize,
    backend: &dyn Backend,
    template: &TaskTemplate,
    seeds: &[u64],
) -> Result<(f64, f64)> {
    let index = splits.index();
    let mut metrics = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = crate::seeded_rng(seed);
        let ordering = random_selection(&splits.train, k, &mut rng)?;
        metrics.push(evaluate_subset(&ordering, &splits.dev, backend, template, &index)?.metric);
    }
    Ok((stats::mean(&metrics), stats::stderr(&metrics)))
}

fn select_from_run(
    method: Method,
    run: &RunDataset,
    k: usize,
    seed: u64,
) -> Result<Vec<crate::corpus::ExampleId>> {
    match method {
        Method::Influence => {
            let report = influence_scores(run)?;
            select_examples(&report, k, Sign::Positive)
        }
        Method::Datamodel => {
            let (weights, _) = fit_datamodel(run, DEFAULT_LAMBDA, DEFAULT_HELDOUT_FRACTION, seed)?;
            Ok(datamodel_select(&weights, k, Sign::Positive)?.0)
        }
        _ => unreachable!("not a run-based method"),
    }
}

/// Rankings that are independent of the run dataset, computed once per sweep.
fn static_ranking(
    method: Method,
    splits: &DatasetSplits,
    backend: &dyn Backend,
    template: &TaskTemplate,
) -> Result<Option<MethodRanking>> {
    let index = splits.index();
    Ok(match method {
        Method::Oneshot => Some(oneshot_ranking(
            &splits.train,
            &splits.dev,
            backend,
            template,
            &index,
            Sign::Positive,
        )?),
        Method::Similarity => Some(similarity_ranking(
            &splits.train,
            &splits.dev,
            backend,
            template,
            Sign::Positive,
        )?),
        Method::Perplexity => Some(perplexity_ranking(
            &splits.train,
            backend,
            template,
            Sign::Positive,
        )?),
        _ => None,
    })
}

/// Collect once, then re-estimate and re-select on token-budget prefixes of
/// the record stream. Run-independent methods are computed once and repeated
/// at every budget.
pub fn budget_sweep(
    splits: &DatasetSplits,
    k: usize,
    budgets: &[u64],
    backend: &dyn Backend,
    template: &TaskTemplate,
    methods: &[Method],
    seed: u64,
) -> Result<SweepResult> {
    if budgets.is_empty() || methods.is_empty() {
        return Err(Error::InvalidArgument(
            "budget sweep needs at least one budget and one method".into(),
        ));
    }
    if !budgets.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument(
            "budgets must be strictly increasing".into(),
        ));
    }
    let m = default_m(splits.train.len(), k, COVERAGE_TARGET);
    let report = collect(splits, template, backend, "sweep", k, m, seed, 0, |_| Ok(()))?;
    let full = report.run;

    let mut static_points: BTreeMap<String, MethodPoint> = BTreeMap::new();
    for &method in methods {
        if method.uses_run() {
            continue;
        }
        let (mean, stderr) = match static_ranking(method, splits, backend, template)? {
            Some(ranking) => {
                if ranking.ordered_ids.len() < k {
                    return Err(Error::InsufficientExamples {
                        required: k,
                        available: ranking.ordered_ids.len(),
                    });
                }
                evaluate_over_seeds(
                    ranking.top_k(k),
                    splits,
                    backend,
                    template,
                    &crate::ORDERING_SEEDS,
                )?
            }
            None => evaluate_random_over_seeds(splits, k, backend, template, &crate::ORDERING_SEEDS)?,
        };
        static_points.insert(
            method.name().to_string(),
            MethodPoint {
                mean,
                stderr,
                available: true,
            },
        );
    }

    let mut points = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let mut spent = 0u64;
        let mut n_records = 0usize;
        for rec in &full.records {
            if spent + rec.tokens_spent > budget {
                break;
            }
            spent += rec.tokens_spent;
            n_records += 1;
        }
        let prefix = RunDataset {
            meta: full.meta.clone(),
            records: full.records[..n_records].to_vec(),
        };
        let mut per_method = static_points.clone();
        for &method in methods {
            if !method.uses_run() {
                continue;
            }
            let point = if n_records < 2 {
                MethodPoint {
                    mean: f64::NAN,
                    stderr: f64::NAN,
                    available: false,
                }
            } else {
                let selection = select_from_run(method, &prefix, k, seed)?;
                let (mean, stderr) = evaluate_over_seeds(
                    &selection,
                    splits,
                    backend,
                    template,
                    &crate::ORDERING_SEEDS,
                )?;
                MethodPoint {
                    mean,
                    stderr,
                    available: true,
                }
            };
            per_method.insert(method.name().to_string(), point);
        }
        points.push(SweepPoint {
            x: budget as f64,
            tokens_spent: spent,
            methods: per_method,
        });
    }
    Ok(SweepResult {
        axis: Axis::Tokens,
        points,
    })
}

/// Estimate influences once at the template's k_max, then evaluate top-k
/// prefixes of each method's ranking for every k in `ks` over the seed list.
pub fn shot_sweep(
    splits: &DatasetSplits,
    ks: &[usize],
    backend: &dyn Backend,
    template: &TaskTemplate,
    methods: &[Method],
    seeds: &[u64],
    seed: u64,
) -> Result<SweepResult> {
    if ks.is_empty() || methods.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "shot sweep needs at least one k, method, and seed".into(),
        ));
    }
    if !ks.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("ks must be strictly increasing".into()));
    }
    let k_est = template.k_max.min(splits.train.len());
    if *ks.last().unwrap() > k_est {
        return Err(Error::InvalidArgument(format!(
            "max k {} exceeds estimation k {k_est}",
            ks.last().unwrap()
        )));
    }

    let mut rankings: BTreeMap<Method, Vec<crate::corpus::ExampleId>> = BTreeMap::new();
    if methods.iter().any(|m| m.uses_run()) {
        let m = default_m(splits.train.len(), k_est, COVERAGE_TARGET);
        let run = collect(splits, template, backend, "sweep", k_est, m, seed, 0, |_| Ok(()))?.run;
        for &method in methods {
            if !method.uses_run() {
                continue;
            }
            // full-length ranking over every scored id; top-k prefixes are
            // taken below
            let ranking = match method {
                Method::Influence => {
                    let report = influence_scores(&run)?;
                    crate::influence::ranked_ids(&report.scores, Sign::Positive)
                }
                Method::Datamodel => {
                    let (weights, _) =
                        fit_datamodel(&run, DEFAULT_LAMBDA, DEFAULT_HELDOUT_FRACTION, seed)?;
                    datamodel_select(&weights, weights.theta.len(), Sign::Positive)?.0
                }
                _ => unreachable!(),
            };
            rankings.insert(method, ranking);
        }
    }
    for &method in methods {
        if let Some(ranking) = static_ranking(method, splits, backend, template)? {
            rankings.insert(method, ranking.ordered_ids);
        }
    }

    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut per_method = BTreeMap::new();
        for &method in methods {
            let (mean, stderr) = match rankings.get(&method) {
                Some(ranking) => {
                    if ranking.len() < k {
                        return Err(Error::InsufficientExamples {
                            required: k,
                            available: ranking.len(),
                        });
                    }
                    evaluate_over_seeds(&ranking[..k], splits, backend, template, seeds)?
                }
                None => evaluate_random_over_seeds(splits, k, backend, template, seeds)?,
            };
            per_method.insert(
                method.name().to_string(),
                MethodPoint {
                    mean,
                    stderr,
                    available: true,
                },
            );
        }
        points.push(SweepPoint {
            x: k as f64,
            tokens_spent: 0,
            methods: per_method,
        });
    }
    Ok(SweepResult {
        axis: Axis::Shots,
        points,
    })
}
