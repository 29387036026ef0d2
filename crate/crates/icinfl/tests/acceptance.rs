//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N (...): PASS|FAIL` line (run with `--nocapture` to see the
//! lines for passing tests too).

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::time::Instant;

use icinfl::backend::{Backend, BackendDescriptor, SyntheticBackend, SyntheticOracleConfig};
use icinfl::baselines::rank_aggregate;
use icinfl::collector::{collect, evaluate_subset, RunDataset, RunMeta, SubsetRecord};
use icinfl::corpus::{build_prompt, DatasetSplits, Example, ExampleId, TaskTemplate};
use icinfl::datamodel::{
    fit_datamodel, fit_on_records, heldout_correlation, kkt_violation, objective,
};
use icinfl::influence::{influence_scores, percentile_bins, select_examples, Sign};
use icinfl::positional::{positional_influence, run_position_study};
use icinfl::stats;

fn criterion(n: u32, name: &str, f: impl FnOnce() -> Result<(), String>) {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => println!("criterion {n} ({name}): PASS"),
        Ok(Err(msg)) => {
            println!("criterion {n} ({name}): FAIL - {msg}");
            panic!("criterion {n} failed: {msg}");
        }
        Err(cause) => {
            println!("criterion {n} ({name}): FAIL - panicked");
            std::panic::resume_unwind(cause);
        }
    }
}

fn ensure(cond: bool, msg: impl Fn() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- shared fixtures ----

fn toy_example(id: ExampleId, label: usize) -> Example {
    let mut fields = BTreeMap::new();
    fields.insert("goal".to_string(), format!("text {id}"));
    Example {
        id,
        fields,
        label_index: label,
        choices: vec!["yes".into(), "no".into()],
    }
}

fn template(k_max: usize) -> TaskTemplate {
    TaskTemplate::new("toy", "Goal: {goal}\nAnswer: {answer}", "\n###\n", k_max).unwrap()
}

fn toy_splits(n_train: u64, n_dev: u64) -> DatasetSplits {
    DatasetSplits {
        train: (0..n_train).map(|i| toy_example(i, (i % 2) as usize)).collect(),
        dev: (0..n_dev)
            .map(|i| toy_example(1000 + i, (i % 2) as usize))
            .collect(),
        test: vec![],
    }
}

fn run_from(train_ids: Vec<ExampleId>, k: usize, subsets: Vec<(Vec<ExampleId>, f64)>) -> RunDataset {
    RunDataset {
        meta: RunMeta {
            task: "toy".into(),
            k,
            train_ids,
            backend: BackendDescriptor::synthetic("oracle", 1 << 20),
            seed: 0,
            input_hash: None,
        },
        records: subsets
            .into_iter()
            .map(|(ids, metric)| SubsetRecord {
                subset_ids: {
                    let mut s = ids.clone();
                    s.sort_unstable();
                    s
                },
                ordering: ids,
                metric,
                n_dev: 100,
                tokens_spent: 0,
            })
            .collect(),
    }
}

/// The planted-quality oracle shared by criteria 3, 5 and 6: 40 examples,
/// k=8, 100 dev queries, 150 subsets, uniform position weights, qualities
/// linearly spaced in [-0.05, 0.05].
struct PlantedSetup {
    splits: DatasetSplits,
    backend: SyntheticBackend,
    qualities: BTreeMap<ExampleId, f64>,
}

fn planted_setup(noise: bool, seed: u64) -> PlantedSetup {
    let splits = toy_splits(40, 100);
    let ids = splits.train_ids();
    let qualities = SyntheticOracleConfig::linspace_qualities(&ids, -0.05, 0.05);
    let mut cfg = SyntheticOracleConfig::new(qualities.clone(), vec![2.0; 8], 0.5, seed);
    cfg.noise_enabled = noise;
    cfg.query_difficulty_spread = 0.49;
    let backend =
        SyntheticBackend::new(BackendDescriptor::synthetic("oracle", 1 << 28), cfg).unwrap();
    PlantedSetup {
        splits,
        backend,
        qualities,
    }
}

fn planted_collection(noise: bool, seed: u64) -> (PlantedSetup, RunDataset) {
    let setup = planted_setup(noise, seed);
    let run = collect(
        &setup.splits,
        &template(8),
        &setup.backend,
        "planted",
        8,
        150,
        seed,
        0,
        |_| Ok(()),
    )
    .unwrap()
    .run;
    (setup, run)
}

// ---- criteria ----

#[test]
fn criterion_1_streaming_influence_matches_two_pass() {
    criterion(1, "streaming influence equals direct two-pass estimate", || {
        let start = Instant::now();
        let ids: Vec<ExampleId> = (0..6).collect();
        // all C(6,2) = 15 subsets with assigned metrics
        let mut subsets = Vec::new();
        let mut counter = 0u64;
        for a in 0..6u64 {
            for b in (a + 1)..6u64 {
                let metric = ((counter * 37 + 11) % 19) as f64 / 19.0;
                subsets.push((vec![a, b], metric));
                counter += 1;
            }
        }
        assert_eq!(subsets.len(), 15);
        let run = run_from(ids.clone(), 2, subsets.clone());
        let report = influence_scores(&run).unwrap();

        // independent two-pass estimate: mean of including subsets minus
        // mean of excluding subsets, computed from scratch per example
        for &j in &ids {
            let included: Vec<f64> = subsets
                .iter()
                .filter(|(s, _)| s.contains(&j))
                .map(|&(_, m)| m)
                .collect();
            let excluded: Vec<f64> = subsets
                .iter()
                .filter(|(s, _)| !s.contains(&j))
                .map(|&(_, m)| m)
                .collect();
            let direct = included.iter().sum::<f64>() / included.len() as f64
                - excluded.iter().sum::<f64>() / excluded.len() as f64;
            let diff = (report.scores[&j] - direct).abs();
            ensure(diff <= 1e-12, || {
                format!("example {j}: streaming differs from two-pass by {diff:e}")
            })?;
        }
        ensure(start.elapsed().as_secs_f64() < 1.0, || {
            format!("took {:?}, budget 1s", start.elapsed())
        })
    });
}

#[test]
fn criterion_2_influence_shift_invariance() {
    criterion(2, "influence invariant to constant metric shift", || {
        let ids: Vec<ExampleId> = (0..6).collect();
        let mut subsets = Vec::new();
        for a in 0..6u64 {
            for b in (a + 1)..6u64 {
                subsets.push((vec![a, b], ((a * 5 + b * 3) % 17) as f64 / 17.0));
            }
        }
        let base = influence_scores(&run_from(ids.clone(), 2, subsets.clone())).unwrap();
        let shifted_subsets: Vec<_> = subsets
            .iter()
            .map(|(s, m)| (s.clone(), m + 0.123))
            .collect();
        let shifted = influence_scores(&run_from(ids, 2, shifted_subsets)).unwrap();
        for (j, v) in &base.scores {
            let diff = (shifted.scores[j] - v).abs();
            ensure(diff <= 1e-12, || {
                format!("example {j}: shift moved influence by {diff:e}")
            })?;
        }
        Ok(())
    });
}

#[test]
fn criterion_3_planted_quality_recovery() {
    criterion(3, "influence recovers planted qualities (Spearman >= 0.8)", || {
        let start = Instant::now();
        for seed in [41u64, 42, 43, 44, 45] {
            let (setup, run) = planted_collection(true, seed);
            let report = influence_scores(&run).unwrap();
            let mut est = Vec::new();
            let mut planted = Vec::new();
            for (id, score) in &report.scores {
                est.push(*score);
                planted.push(setup.qualities[id]);
            }
            let rho = stats::spearman(&est, &planted)
                .ok_or_else(|| "spearman undefined".to_string())?;
            ensure(rho >= 0.8, || format!("seed {seed}: spearman {rho:.4} < 0.8"))?;
        }
        ensure(start.elapsed().as_secs_f64() < 120.0, || {
            format!("took {:?}, budget 2 min", start.elapsed())
        })
    });
}

#[test]
fn criterion_4_lasso_against_proximal_gradient() {
    criterion(4, "coordinate descent matches proximal-gradient reference", || {
        // 8-feature, 200-record synthetic regression with planted weights
        let ids: Vec<ExampleId> = (0..8).collect();
        let planted: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.02).collect();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            // splitmix64 for a self-contained deterministic stream
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        };
        let mut records = Vec::new();
        for _ in 0..200 {
            let members: Vec<ExampleId> =
                ids.iter().copied().filter(|_| next() < 0.5).collect();
            let y = 0.5
                + members.iter().map(|&j| planted[j as usize]).sum::<f64>()
                + 0.01 * (next() - 0.5);
            records.push(SubsetRecord {
                subset_ids: members.clone(),
                ordering: members,
                metric: y,
                n_dev: 100,
                tokens_spent: 0,
            });
        }

        let lambda = 1e-4;
        let fitted = fit_on_records(&ids, &records, lambda).unwrap();

        // reference: proximal gradient (ISTA) on the same objective
        let (ref_theta, ref_theta0) = ista_reference(&ids, &records, lambda);
        let mut reference = fitted.clone();
        reference.theta = ids.iter().map(|&j| (j, ref_theta[j as usize])).collect();
        reference.theta0 = ref_theta0;
        let obj_cd = objective(&records, &fitted);
        let obj_ref = objective(&records, &reference);
        ensure((obj_cd - obj_ref).abs() <= 1e-6, || {
            format!("objective gap {:.3e} (cd {obj_cd}, ista {obj_ref})", (obj_cd - obj_ref).abs())
        })?;

        // lambda = 0 recovers the closed-form least squares solution
        let ls = fit_on_records(&ids, &records, 0.0).unwrap();
        let (exact_theta, exact_theta0) = normal_equations(&ids, &records);
        for &j in &ids {
            let diff = (ls.theta[&j] - exact_theta[j as usize]).abs();
            ensure(diff <= 1e-6, || {
                format!("theta_{j}: CD {} vs closed form {}", ls.theta[&j], exact_theta[j as usize])
            })?;
        }
        ensure((ls.theta0 - exact_theta0).abs() <= 1e-6, || {
            format!("intercept: CD {} vs closed form {exact_theta0}", ls.theta0)
        })?;

        let kkt = kkt_violation(&records, &fitted);
        ensure(kkt <= 1e-5, || format!("KKT violation {kkt:.3e} > 1e-5"))
    });
}

/// ISTA on (1/(2n))||X theta + theta0 - y||^2 + lambda ||theta||_1 with exact
/// intercept updates.
fn ista_reference(
    ids: &[ExampleId],
    records: &[SubsetRecord],
    lambda: f64,
) -> (Vec<f64>, f64) {
    let n = records.len();
    let nf = n as f64;
    let p = ids.len();
    let x: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            ids.iter()
                .map(|j| if r.subset_ids.contains(j) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let y: Vec<f64> = records.iter().map(|r| r.metric).collect();
    // Lipschitz bound for the smooth part: largest eigenvalue of X^T X / n,
    // bounded by the trace
    let l: f64 = (0..p)
        .map(|j| x.iter().map(|row| row[j] * row[j]).sum::<f64>() / nf)
        .sum();
    let step = 1.0 / l;
    let mut theta = vec![0.0f64; p];
    let mut theta0 = y.iter().sum::<f64>() / nf;
    for _ in 0..200_000 {
        let residual: Vec<f64> = (0..n)
            .map(|i| theta0 + (0..p).map(|j| x[i][j] * theta[j]).sum::<f64>() - y[i])
            .collect();
        let mut max_move = 0.0f64;
        for j in 0..p {
            let grad = (0..n).map(|i| x[i][j] * residual[i]).sum::<f64>() / nf;
            let raw = theta[j] - step * grad;
            let new = raw.signum() * (raw.abs() - step * lambda).max(0.0);
            max_move = max_move.max((new - theta[j]).abs());
            theta[j] = new;
        }
        // exact intercept given theta
        let mean_err: f64 = (0..n)
            .map(|i| y[i] - (0..p).map(|j| x[i][j] * theta[j]).sum::<f64>())
            .sum::<f64>()
            / nf;
        max_move = max_move.max((mean_err - theta0).abs());
        theta0 = mean_err;
        if max_move < 1e-12 {
            break;
        }
    }
    (theta, theta0)
}

/// Dense least squares via Gaussian elimination on the normal equations,
/// intercept included as an extra column.
fn normal_equations(ids: &[ExampleId], records: &[SubsetRecord]) -> (Vec<f64>, f64) {
    let p = ids.len() + 1; // last column is the intercept
    let rows: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let mut row: Vec<f64> = ids
                .iter()
                .map(|j| if r.subset_ids.contains(j) { 1.0 } else { 0.0 })
                .collect();
            row.push(1.0);
            row
        })
        .collect();
    let y: Vec<f64> = records.iter().map(|r| r.metric).collect();
    let mut a = vec![vec![0.0f64; p + 1]; p];
    for (row, &yi) in rows.iter().zip(&y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * yi;
        }
    }
    // Gaussian elimination with partial pivoting
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        for row in 0..p {
            if row != col {
                let f = a[row][col] / a[col][col];
                for j in col..=p {
                    a[row][j] -= f * a[col][j];
                }
            }
        }
    }
    let solution: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
    (solution[..p - 1].to_vec(), solution[p - 1])
}

#[test]
fn criterion_5_datamodel_predictivity() {
    criterion(5, "held-out datamodel correlation (0.95 clean / 0.85 noisy)", || {
        for (noise, floor) in [(false, 0.95), (true, 0.85)] {
            let (_, run) = planted_collection(noise, 42);
            let (weights, heldout) = fit_datamodel(&run, 1e-4, 0.1, 42).unwrap();
            let report = heldout_correlation(&weights, &heldout).unwrap();
            ensure(report.pearson_rho >= floor, || {
                format!(
                    "noise={noise}: held-out pearson {:.4} < {floor}",
                    report.pearson_rho
                )
            })?;
        }
        Ok(())
    });
}

#[test]
fn criterion_6_selection_bin_ordering() {
    criterion(6, "influence bins order prompts; gap matches closed form", || {
        let (setup, run) = planted_collection(true, 42);
        let report = influence_scores(&run).unwrap();
        let bins = percentile_bins(&report, 5).unwrap();
        let tpl = template(8);
        let index = setup.splits.index();

        let mut means = Vec::new();
        for bin in &bins.bins {
            let mut accs = Vec::new();
            for &seed in &icinfl::ORDERING_SEEDS {
                use rand::seq::SliceRandom;
                let mut ordering = bin.clone();
                ordering.shuffle(&mut icinfl::seeded_rng(seed));
                accs.push(
                    evaluate_subset(&ordering, &setup.splits.dev, &setup.backend, &tpl, &index)
                        .unwrap()
                        .metric,
                );
            }
            means.push(stats::mean(&accs));
        }
        for w in means.windows(2) {
            ensure(w[1] >= w[0], || {
                format!("bin accuracies not monotone: {means:?}")
            })?;
        }

        // closed form: expected accuracy difference between the selected top
        // and bottom bins under the oracle's own probabilities
        let cfg = setup.backend.config();
        let expected_acc = |ctx: &[ExampleId]| -> f64 {
            let ps: Vec<f64> = setup
                .splits
                .dev
                .iter()
                .map(|q| cfg.correct_probability(ctx, q.id).unwrap())
                .collect();
            stats::mean(&ps)
        };
        let closed_gap = 100.0 * (expected_acc(&bins.bins[4]) - expected_acc(&bins.bins[0]));
        let observed_gap = 100.0 * (means[4] - means[0]);
        ensure((observed_gap - closed_gap).abs() <= 3.0, || {
            format!("gap {observed_gap:.2} pts vs closed form {closed_gap:.2} pts")
        })
    });
}

#[test]
fn criterion_7_positional_recovery() {
    criterion(7, "positional influence tracks planted position weights", || {
        let start = Instant::now();
        // Every group gets the same symmetric mean-zero quality set, so
        // group-level effects cancel between a pair's records and its
        // complement; what remains per position is weight * quality plus
        // co-assignee sampling noise.
        let splits = toy_splits(24, 64);
        let ids = splits.train_ids();
        let groups: Vec<Vec<ExampleId>> = (0..3).map(|g| ids[g * 8..(g + 1) * 8].to_vec()).collect();
        let mut qualities = BTreeMap::new();
        for (i, &id) in ids.iter().enumerate() {
            qualities.insert(id, -0.9 + (i % 8) as f64 * (1.8 / 7.0));
        }
        let tpl = template(3);
        let index = splits.index();

        let study = |weights: Vec<f64>| {
            let mut cfg = SyntheticOracleConfig::new(qualities.clone(), weights, 0.5, 42);
            cfg.noise_enabled = false;
            cfg.query_difficulty_spread = 0.4;
            let backend =
                SyntheticBackend::new(BackendDescriptor::synthetic("oracle", 1 << 28), cfg)
                    .unwrap();
            let run = run_position_study(
                &groups,
                600,
                &splits.dev,
                &backend,
                &tpl,
                &index,
                &mut icinfl::seeded_rng(42),
            )
            .unwrap();
            positional_influence(&run).unwrap()
        };

        let graded = study(vec![0.00, 0.03, 0.09]);
        let mean_abs: Vec<f64> = (0..3).map(|p| graded.per_position[&p].mean_abs_influence).collect();
        for w in mean_abs.windows(2) {
            ensure(w[1] > w[0], || {
                format!("per-position mean |influence| not strictly increasing: {mean_abs:?}")
            })?;
        }

        let flat = study(vec![0.04; 3]);
        for (pos, st) in &flat.per_position {
            ensure(st.mean_influence.abs() < 3.0 * st.stderr, || {
                format!(
                    "equal weights, position {pos}: |mean| {:.5} >= 3 stderr {:.5}",
                    st.mean_influence.abs(),
                    3.0 * st.stderr
                )
            })?;
        }
        ensure(start.elapsed().as_secs_f64() < 180.0, || {
            format!("took {:?}, budget 3 min", start.elapsed())
        })
    });
}

#[test]
fn criterion_8_published_rank_aggregation() {
    criterion(8, "published table cells reproduce printed rank aggregate", || {
        let tasks = ["piqa", "boolq", "rte", "wic", "wsc", "arc_c", "arc_e", "hs", "obqa"];
        let cells: [(&str, [f64; 9]); 7] = [
            ("perplexity", [76.8, 72.7, 61.9, 53.5, 43.5, 40.3, 76.3, 56.6, 28.5]),
            ("random", [77.0, 71.1, 63.2, 54.8, 49.1, 41.5, 76.0, 55.4, 29.6]),
            ("similarity", [77.7, 70.1, 63.9, 53.3, 57.1, 42.0, 76.2, 56.7, 29.3]),
            ("oneshot", [77.5, 76.5, 52.4, 51.1, 61.6, 41.5, 76.1, 56.6, 31.2]),
            ("best_set", [76.9, 72.6, 64.1, 55.1, 54.8, 40.8, 75.8, 56.1, 31.5]),
            ("datamodel", [78.1, 77.0, 65.9, 51.4, 56.4, 42.1, 76.6, 58.2, 31.7]),
            ("influence", [78.0, 74.1, 64.6, 52.5, 51.4, 41.6, 77.0, 57.4, 33.3]),
        ];
        let mut table = BTreeMap::new();
        for (method, accs) in &cells {
            for (task, acc) in tasks.iter().zip(accs) {
                table.insert((method.to_string(), task.to_string()), *acc);
            }
        }
        let agg = rank_aggregate(&table, Sign::Positive).unwrap();
        let mut order: Vec<&String> = agg.mean_rank.keys().collect();
        order.sort_by(|a, b| agg.mean_rank[*a].partial_cmp(&agg.mean_rank[*b]).unwrap());
        ensure(order[0] == "influence" && order[1] == "datamodel", || {
            format!(
                "aggregate order {:?} with mean ranks {:?}",
                order, agg.mean_rank
            )
        })?;
        let infl = agg.mean_rank["influence"];
        let icd = agg.mean_rank["datamodel"];
        ensure((infl - 2.96).abs() <= 0.01, || {
            format!("influence mean rank {infl:.2}, published 2.96")
        })?;
        ensure((icd - 2.98).abs() <= 0.01, || {
            format!("datamodel mean rank {icd:.2}, published 2.98")
        })
    });
}

/// Backend wrapper that records every query id it is asked to score.
struct RecordingBackend<'a> {
    inner: &'a SyntheticBackend,
    seen: std::sync::Mutex<std::collections::BTreeSet<ExampleId>>,
}

impl<'a> Backend for RecordingBackend<'a> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }
    fn score_continuation(
        &self,
        prompt: &icinfl::corpus::PromptSpec,
        choice_index: usize,
    ) -> icinfl::Result<icinfl::backend::ScoredContinuation> {
        self.seen.lock().unwrap().insert(prompt.query_id);
        self.inner.score_continuation(prompt, choice_index)
    }
    fn perplexity(&self, text: &str) -> icinfl::Result<f64> {
        self.inner.perplexity(text)
    }
    fn embed(&self, text: &str) -> icinfl::Result<Vec<f64>> {
        self.inner.embed(text)
    }
}

#[test]
fn criterion_9_leakage_guards() {
    criterion(9, "test split never reaches the selection path", || {
        let mut splits = toy_splits(20, 30);
        splits.test = (0..25u64).map(|i| toy_example(5000 + i, (i % 2) as usize)).collect();
        let test_ids: std::collections::BTreeSet<ExampleId> =
            splits.test.iter().map(|e| e.id).collect();
        let ids = splits.train_ids();
        let cfg = SyntheticOracleConfig::new(
            SyntheticOracleConfig::linspace_qualities(&ids, -0.2, 0.2),
            vec![1.0; 4],
            0.5,
            42,
        );
        let inner =
            SyntheticBackend::new(BackendDescriptor::synthetic("oracle", 1 << 28), cfg).unwrap();
        let backend = RecordingBackend {
            inner: &inner,
            seen: std::sync::Mutex::new(Default::default()),
        };
        let tpl = template(4);
        let index = splits.index();

        // the full selection path: collection, estimation, baselines, selection
        let run = collect(&splits, &tpl, &backend, "toy", 4, 40, 42, 0, |_| Ok(())).unwrap().run;
        let report = influence_scores(&run).unwrap();
        let _ = select_examples(&report, 4, Sign::Positive).unwrap();
        let _ = fit_datamodel(&run, 1e-4, 0.1, 42).unwrap();
        let _ = icinfl::baselines::oneshot_ranking(
            &splits.train,
            &splits.dev,
            &backend,
            &tpl,
            &index,
            Sign::Positive,
        )
        .unwrap();
        let _ = icinfl::baselines::perplexity_ranking(&splits.train, &backend, &tpl, Sign::Positive)
            .unwrap();
        let _ =
            icinfl::baselines::similarity_ranking(&splits.train, &splits.dev, &backend, &tpl, Sign::Positive)
                .unwrap();

        let seen = backend.seen.lock().unwrap().clone();
        let leaked: Vec<ExampleId> = seen.intersection(&test_ids).copied().collect();
        ensure(leaked.is_empty(), || {
            format!("test queries reached the selection path: {leaked:?}")
        })?;
        ensure(!seen.is_empty(), || "no queries recorded".to_string())?;

        // prompts must reject the query appearing in its own context
        let err = build_prompt(&tpl, &[0, 1, 2], 1, &index).unwrap_err();
        ensure(
            matches!(err, icinfl::Error::QueryInContext(1)),
            || format!("expected QueryInContext, got {err}"),
        )
    });
}

#[test]
fn criterion_10_end_to_end_determinism() {
    criterion(10, "synthetic pipeline twice gives byte-identical CSVs", || {
        let bin = env!("CARGO_BIN_EXE_icinfl");
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("toy.jsonl");
        let mut data = String::new();
        for i in 0..100u64 {
            data.push_str(&format!(
                "{{\"goal\": \"example text {i} about topic {}\", \"label\": {}}}\n",
                i % 7,
                i % 2
            ));
        }
        std::fs::write(&dataset, data).unwrap();
        let tpl_path = dir.path().join("toy.toml");
        std::fs::write(
            &tpl_path,
            "name = \"toy\"\nseparator = \"\\n###\\n\"\nk_max = 8\nbody = \"\"\"\nGoal: {goal}\nAnswer: {answer}\"\"\"\n",
        )
        .unwrap();

        let run_pipeline = |out: &std::path::Path| -> Result<(), String> {
            let config = dir.path().join(format!(
                "{}.toml",
                out.file_name().unwrap().to_str().unwrap()
            ));
            std::fs::write(
                &config,
                format!(
                    r#"
task = "toy"
dataset = "{dataset}"
template = "{tpl}"
output_dir = "{out}"
k = 4
m = 60

[splits]
train = 40
dev = 20
test = 30

[schema]
label_key = "label"
fixed_choices = ["yes", "no"]
[schema.slots]
goal = "goal"

[backend]
kind = "synthetic"
model = "oracle"
token_budget = 100000000

[backend.synthetic]
quality_lo = -0.2
quality_hi = 0.2
query_difficulty_spread = 0.3
"#,
                    dataset = dataset.display(),
                    tpl = tpl_path.display(),
                    out = out.display(),
                ),
            )
            .unwrap();
            for args in [
                vec!["split"],
                vec!["collect"],
                vec!["influence"],
                vec!["datamodel"],
                vec!["select", "--method", "influence"],
                vec!["eval", "--split", "dev"],
                vec!["eval", "--split", "test"],
            ] {
                let output = std::process::Command::new(bin)
                    .arg("--config")
                    .arg(&config)
                    .args(&args)
                    .output()
                    .map_err(|e| format!("spawn failed: {e}"))?;
                if !output.status.success() {
                    return Err(format!(
                        "{args:?} failed: {}",
                        String::from_utf8_lossy(&output.stderr)
                    ));
                }
            }
            Ok(())
        };

        let out1 = dir.path().join("out1");
        let out2 = dir.path().join("out2");
        run_pipeline(&out1)?;
        run_pipeline(&out2)?;
        for name in ["eval_dev.csv", "eval_test.csv"] {
            let a = std::fs::read(out1.join(name)).map_err(|e| format!("{name}: {e}"))?;
            let b = std::fs::read(out2.join(name)).map_err(|e| format!("{name}: {e}"))?;
            ensure(a == b, || format!("{name} differs between runs"))?;
            ensure(!a.is_empty(), || format!("{name} is empty"))?;
        }
        // intermediate artifacts byte-identical too
        for name in ["splits.jsonl", "run.jsonl", "influence.jsonl", "selection.jsonl"] {
            let a = std::fs::read(out1.join(name)).unwrap();
            let b = std::fs::read(out2.join(name)).unwrap();
            ensure(a == b, || format!("{name} differs between runs"))?;
        }
        Ok(())
    });
}
