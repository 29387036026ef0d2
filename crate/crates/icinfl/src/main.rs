use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use icinfl::baselines::{
    best_observed_set, oneshot_ranking, perplexity_ranking, random_selection, similarity_ranking,
    MethodRanking,
};
use icinfl::backend::Backend;
use icinfl::collector::{collect, evaluate_subset, RunMeta};
use icinfl::config::PipelineConfig;
use icinfl::corpus::{load_dataset, split_dataset, DatasetSplits, TaskTemplate};
use icinfl::datamodel::{
    datamodel_select, fit_datamodel, heldout_correlation, CorrelationReport, DatamodelWeights,
};
use icinfl::error::{Error, Result};
use icinfl::influence::{influence_scores, select_examples, InfluenceReport, Sign};
use icinfl::persist::{
    hash_file, load_report, load_run, save_report, write_atomic, RunWriter, Selection,
};
use icinfl::positional::{positional_influence, run_position_study};
use icinfl::scaling::{budget_sweep, shot_sweep, Method};
use icinfl::stats;

#[derive(Parser)]
#[command(name = "icinfl", about = "In-context example influence pipeline")]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true, default_value = "icinfl.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SignArg {
    Positive,
    Negative,
}

impl From<SignArg> for Sign {
    fn from(s: SignArg) -> Sign {
        match s {
            SignArg::Positive => Sign::Positive,
            SignArg::Negative => Sign::Negative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectMethod {
    Influence,
    Datamodel,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Dev,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepAxis {
    Tokens,
    Shots,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset and persist train/dev/test splits.
    Split,
    /// Evaluate random label-balanced subsets and persist the run dataset.
    Collect {
        /// Continue an interrupted collection instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Estimate per-example influences from a persisted run.
    Influence,
    /// Fit the linear datamodel on a persisted run.
    Datamodel,
    /// Select top-k examples from a persisted estimate.
    Select {
        #[arg(long, value_enum)]
        method: SelectMethod,
        #[arg(long, value_enum, default_value = "positive")]
        sign: SignArg,
        /// Defaults to the configured k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Evaluate the persisted selection over the seed list.
    Eval {
        #[arg(long, value_enum, default_value = "dev")]
        split: EvalSplit,
    },
    /// Rank examples under every baseline method and compare dev accuracies.
    Baselines,
    /// Exhaustive-ordering positional influence study.
    PositionStudy {
        #[arg(long, default_value_t = 25)]
        assignments: usize,
    },
    /// Token-budget or k-shot sweep.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        /// Selection methods to compare.
        #[arg(long, value_delimiter = ',', default_value = "influence,random")]
        methods: Vec<String>,
    },
}

#[derive(Serialize, Deserialize)]
struct DatamodelArtifact {
    weights: DatamodelWeights,
    correlation: CorrelationReport,
}

struct Paths {
    splits: PathBuf,
    run: PathBuf,
    influence: PathBuf,
    datamodel: PathBuf,
    selection: PathBuf,
    out: PathBuf,
}

impl Paths {
    fn new(cfg: &PipelineConfig) -> Paths {
        let out = cfg.output_dir.clone();
        Paths {
            splits: out.join("splits.jsonl"),
            run: out.join("run.jsonl"),
            influence: out.join("influence.jsonl"),
            datamodel: out.join("datamodel.jsonl"),
            selection: out.join("selection.jsonl"),
            out,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        // machine-readable error record on stderr
        eprintln!(
            "{}",
            serde_json::json!({ "error": { "message": err.to_string() } })
        );
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = PipelineConfig::load(&cli.config)?;
    let paths = Paths::new(&cfg);
    std::fs::create_dir_all(&paths.out)?;
    match &cli.command {
        Command::Split => cmd_split(&cfg, &paths),
        Command::Collect { resume } => cmd_collect(&cfg, &paths, *resume),
        Command::Influence => cmd_influence(&paths),
        Command::Datamodel => cmd_datamodel(&cfg, &paths),
        Command::Select { method, sign, k } => {
            cmd_select(&cfg, &paths, *method, (*sign).into(), k.unwrap_or(cfg.k))
        }
        Command::Eval { split } => cmd_eval(&cfg, &paths, *split),
        Command::Baselines => cmd_baselines(&cfg, &paths),
        Command::PositionStudy { assignments } => cmd_position_study(&cfg, &paths, *assignments),
        Command::Sweep {
            axis,
            budgets,
            ks,
            methods,
        } => cmd_sweep(&cfg, &paths, *axis, budgets, ks, methods),
    }
}

/// Error when an artifact's recorded input hash no longer matches the input
/// file on disk. Missing inputs are not an error: the artifact may have been
/// copied in from elsewhere.
fn check_fresh(recorded: &Option<String>, input: &Path) -> Result<()> {
    if let Some(expected) = recorded {
        if input.exists() {
            let actual = hash_file(input)?;
            if &actual != expected {
                return Err(Error::Config(format!(
                    "stale artifact: {} changed since this file was produced",
                    input.display()
                )));
            }
        }
    }
    Ok(())
}

fn load_splits(paths: &Paths, cfg: &PipelineConfig) -> Result<DatasetSplits> {
    let (header, splits): (_, DatasetSplits) = load_report(&paths.splits, "splits")?;
    check_fresh(&header.input_hash, &cfg.dataset)?;
    Ok(splits)
}

fn status(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_split(cfg: &PipelineConfig, paths: &Paths) -> Result<()> {
    let examples = load_dataset(&cfg.dataset, &cfg.schema.to_schema())?;
    let splits = split_dataset(
        &examples,
        (cfg.splits.train, cfg.splits.dev, cfg.splits.test),
        cfg.splits.seed,
    )?;
    save_report(&paths.splits, "splits", Some(hash_file(&cfg.dataset)?), &splits)?;
    status(serde_json::json!({
        "split": { "train": splits.train.len(), "dev": splits.dev.len(), "test": splits.test.len() }
    }));
    Ok(())
}

fn cmd_collect(cfg: &PipelineConfig, paths: &Paths, resume: bool) -> Result<()> {
    let splits = load_splits(paths, cfg)?;
    let template = TaskTemplate::load(&cfg.template)?;
    let train_ids = splits.train_ids();
    let backend = cfg.build_backend(&train_ids, cfg.k)?;
    let m = cfg.effective_m(splits.train.len());
    let meta = RunMeta {
        task: cfg.task.clone(),
        k: cfg.k,
        train_ids,
        backend: backend.descriptor().clone(),
        seed: cfg.seed,
        input_hash: None,
    };
    let (mut writer, start_at) = if resume && paths.run.exists() {
        RunWriter::append_to(&paths.run, &meta)?
    } else {
        (
            RunWriter::create(&paths.run, &meta, Some(hash_file(&paths.splits)?))?,
            0,
        )
    };
    let report = collect(
        &splits,
        &template,
        backend.as_ref(),
        &cfg.task,
        cfg.k,
        m,
        cfg.seed,
        start_at,
        |rec| writer.append(rec),
    )?;
    status(serde_json::json!({
        "collect": {
            "m": m,
            "new_records": report.run.records.len(),
            "expected_coverage": report.expected_coverage,
            "coverage_warning": report.coverage_warning,
        }
    }));
    Ok(())
}

fn cmd_influence(paths: &Paths) -> Result<()> {
    let run = load_run(&paths.run)?;
    check_fresh(&run.meta.input_hash, &paths.splits)?;
    let report = influence_scores(&run)?;
    save_report(
        &paths.influence,
        "influence",
        Some(hash_file(&paths.run)?),
        &report,
    )?;
    status(serde_json::json!({
        "influence": { "scored": report.scores.len(), "undefined": report.undefined_ids.len() }
    }));
    Ok(())
}

fn cmd_datamodel(cfg: &PipelineConfig, paths: &Paths) -> Result<()> {
    let run = load_run(&paths.run)?;
    check_fresh(&run.meta.input_hash, &paths.splits)?;
    let (weights, heldout) = fit_datamodel(
        &run,
        cfg.lambda,
        icinfl::datamodel::DEFAULT_HELDOUT_FRACTION,
        cfg.seed,
    )?;
    let correlation = heldout_correlation(&weights, &heldout)?;
    let nonzero = weights.theta.values().filter(|v| **v != 0.0).count();
    save_report(
        &paths.datamodel,
        "datamodel",
        Some(hash_file(&paths.run)?),
        &DatamodelArtifact {
            weights,
            correlation: correlation.clone(),
        },
    )?;
    status(serde_json::json!({
        "datamodel": { "nonzero": nonzero, "heldout_pearson": correlation.pearson_rho }
    }));
    Ok(())
}

fn cmd_select(
    cfg: &PipelineConfig,
    paths: &Paths,
    method: SelectMethod,
    sign: Sign,
    k: usize,
) -> Result<()> {
    let (method_name, ids, input) = match method {
        SelectMethod::Influence => {
            let (header, report): (_, InfluenceReport) = load_report(&paths.influence, "influence")?;
            check_fresh(&header.input_hash, &paths.run)?;
            (
                "influence",
                select_examples(&report, k, sign)?,
                paths.influence.clone(),
            )
        }
        SelectMethod::Datamodel => {
            let (header, artifact): (_, DatamodelArtifact) =
                load_report(&paths.datamodel, "datamodel")?;
            check_fresh(&header.input_hash, &paths.run)?;
            let (ids, degenerate) = datamodel_select(&artifact.weights, k, sign)?;
            if degenerate {
                status(serde_json::json!({
                    "warning": "datamodel selection includes zero-weight ids"
                }));
            }
            ("datamodel", ids, paths.datamodel.clone())
        }
    };
    let _ = cfg;
    let selection = Selection {
        method: method_name.into(),
        sign,
        k,
        ids,
    };
    save_report(
        &paths.selection,
        "selection",
        Some(hash_file(&input)?),
        &selection,
    )?;
    status(serde_json::json!({ "select": { "method": method_name, "ids": selection.ids } }));
    Ok(())
}

fn eval_csv(
    selection: &[icinfl::corpus::ExampleId],
    queries: &[icinfl::corpus::Example],
    splits: &DatasetSplits,
    backend: &dyn Backend,
    template: &TaskTemplate,
    seeds: &[u64],
    input_hash: &str,
) -> Result<String> {
    let index = splits.index();
    let mut csv = format!("# inputs: {input_hash}\nseed,accuracy\n");
    let mut metrics = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut ordering = selection.to_vec();
        ordering.shuffle(&mut icinfl::seeded_rng(seed));
        let metric = evaluate_subset(&ordering, queries, backend, template, &index)?.metric;
        csv.push_str(&format!("{seed},{metric:.6}\n"));
        metrics.push(metric);
    }
    csv.push_str(&format!("mean,{:.6}\n", stats::mean(&metrics)));
    csv.push_str(&format!("stderr,{:.6}\n", stats::stderr(&metrics)));
    Ok(csv)
}

fn cmd_eval(cfg: &PipelineConfig, paths: &Paths, split: EvalSplit) -> Result<()> {
    let (header, selection): (_, Selection) = load_report(&paths.selection, "selection")?;
    let selection_input = match selection.method.as_str() {
        "datamodel" => &paths.datamodel,
        _ => &paths.influence,
    };
    check_fresh(&header.input_hash, selection_input)?;
    let splits = load_splits(paths, cfg)?;
    let template = TaskTemplate::load(&cfg.template)?;
    let backend = cfg.build_backend(&splits.train_ids(), selection.k)?;
    let (queries, name) = match split {
        EvalSplit::Dev => (&splits.dev, "dev"),
        EvalSplit::Test => (&splits.test, "test"),
    };
    let csv = eval_csv(
        &selection.ids,
        queries,
        &splits,
        backend.as_ref(),
        &template,
        &cfg.seeds,
        &hash_file(&paths.selection)?,
    )?;
    let out = paths.out.join(format!("eval_{name}.csv"));
    write_atomic(&out, csv.as_bytes())?;
    status(serde_json::json!({ "eval": { "split": name, "file": out.display().to_string() } }));
    Ok(())
}

fn cmd_baselines(cfg: &PipelineConfig, paths: &Paths) -> Result<()> {
    let splits = load_splits(paths, cfg)?;
    let template = TaskTemplate::load(&cfg.template)?;
    let backend = cfg.build_backend(&splits.train_ids(), cfg.k)?;
    let run = load_run(&paths.run)?;
    check_fresh(&run.meta.input_hash, &paths.splits)?;
    let index = splits.index();
    let sign = Sign::Positive;

    let mut selections: BTreeMap<String, Vec<icinfl::corpus::ExampleId>> = BTreeMap::new();
    let mut rankings: Vec<MethodRanking> = Vec::new();

    let report = influence_scores(&run)?;
    selections.insert("influence".into(), select_examples(&report, cfg.k, sign)?);
    let (weights, _) = fit_datamodel(
        &run,
        cfg.lambda,
        icinfl::datamodel::DEFAULT_HELDOUT_FRACTION,
        cfg.seed,
    )?;
    selections.insert(
        "datamodel".into(),
        datamodel_select(&weights, cfg.k, sign)?.0,
    );
    selections.insert("best_set".into(), best_observed_set(&run, sign)?);
    for ranking in [
        oneshot_ranking(&splits.train, &splits.dev, backend.as_ref(), &template, &index, sign)?,
        similarity_ranking(&splits.train, &splits.dev, backend.as_ref(), &template, sign)?,
        perplexity_ranking(&splits.train, backend.as_ref(), &template, sign)?,
    ] {
        selections.insert(ranking.method.clone(), ranking.top_k(cfg.k).to_vec());
        rankings.push(ranking);
    }

    let run_hash = hash_file(&paths.run)?;
    for ranking in &rankings {
        save_report(
            &paths.out.join(format!("ranking_{}.jsonl", ranking.method)),
            "ranking",
            Some(run_hash.clone()),
            ranking,
        )?;
    }

    // dev accuracy per method over the seed list; random redraws per seed
    let mut results: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (name, ids) in &selections {
        let mut metrics = Vec::new();
        for &seed in &cfg.seeds {
            let mut ordering = ids.clone();
            ordering.shuffle(&mut icinfl::seeded_rng(seed));
            metrics.push(
                evaluate_subset(&ordering, &splits.dev, backend.as_ref(), &template, &index)?
                    .metric,
            );
        }
        results.insert(name.clone(), (stats::mean(&metrics), stats::stderr(&metrics)));
    }
    {
        let mut metrics = Vec::new();
        for &seed in &cfg.seeds {
            let mut rng = icinfl::seeded_rng(seed);
            let ordering = random_selection(&splits.train, cfg.k, &mut rng)?;
            metrics.push(
                evaluate_subset(&ordering, &splits.dev, backend.as_ref(), &template, &index)?
                    .metric,
            );
        }
        results.insert(
            "random".into(),
            (stats::mean(&metrics), stats::stderr(&metrics)),
        );
    }

    let names: Vec<&String> = results.keys().collect();
    let negated: Vec<f64> = names.iter().map(|n| -results[*n].0).collect();
    let ranks = stats::fractional_ranks(&negated);
    let mut csv = format!("# inputs: {run_hash}\nmethod,mean,stderr,rank\n");
    for (i, name) in names.iter().enumerate() {
        let (mean, stderr) = results[*name];
        csv.push_str(&format!("{name},{mean:.6},{stderr:.6},{:.2}\n", ranks[i]));
    }
    write_atomic(&paths.out.join("baselines.csv"), csv.as_bytes())?;
    status(serde_json::json!({ "baselines": results.keys().collect::<Vec<_>>() }));
    Ok(())
}

fn cmd_position_study(cfg: &PipelineConfig, paths: &Paths, assignments: usize) -> Result<()> {
    let splits = load_splits(paths, cfg)?;
    let template = TaskTemplate::load(&cfg.template)?;
    let train_ids = splits.train_ids();
    let backend = cfg.build_backend(&train_ids, cfg.k)?;

    // one group per position: contiguous chunks of the id-sorted train split
    let mut sorted = train_ids.clone();
    sorted.sort_unstable();
    let per_group = sorted.len() / cfg.k;
    if per_group == 0 {
        return Err(Error::Config(format!(
            "train split too small for {} position groups",
            cfg.k
        )));
    }
    let groups: Vec<Vec<icinfl::corpus::ExampleId>> = (0..cfg.k)
        .map(|g| sorted[g * per_group..(g + 1) * per_group].to_vec())
        .collect();

    let index = splits.index();
    let run = run_position_study(
        &groups,
        assignments,
        &splits.dev,
        backend.as_ref(),
        &template,
        &index,
        &mut icinfl::seeded_rng(cfg.seed),
    )?;
    let infl = positional_influence(&run)?;

    let splits_hash = hash_file(&paths.splits)?;
    let mut pos_csv = format!(
        "# inputs: {splits_hash}\nposition,mean,mean_abs,iqr,stderr,n_pairs\n"
    );
    for (pos, st) in &infl.per_position {
        pos_csv.push_str(&format!(
            "{pos},{:.6},{:.6},{:.6},{:.6},{}\n",
            st.mean_influence, st.mean_abs_influence, st.spread, st.stderr, st.n_pairs
        ));
    }
    write_atomic(&paths.out.join("positional_positions.csv"), pos_csv.as_bytes())?;

    let mut pair_csv = format!("# inputs: {splits_hash}\nid,position,influence\n");
    for ((id, pos), v) in &infl.per_pair {
        pair_csv.push_str(&format!("{id},{pos},{v:.6}\n"));
    }
    write_atomic(&paths.out.join("positional_pairs.csv"), pair_csv.as_bytes())?;
    status(serde_json::json!({
        "position_study": { "records": run.records.len(), "pairs": infl.per_pair.len() }
    }));
    Ok(())
}

fn cmd_sweep(
    cfg: &PipelineConfig,
    paths: &Paths,
    axis: SweepAxis,
    budgets: &[u64],
    ks: &[usize],
    method_names: &[String],
) -> Result<()> {
    let splits = load_splits(paths, cfg)?;
    let template = TaskTemplate::load(&cfg.template)?;
    let methods: Vec<Method> = method_names
        .iter()
        .map(|n| Method::from_name(n))
        .collect::<Result<_>>()?;
    let splits_hash = hash_file(&paths.splits)?;
    let (result, name) = match axis {
        SweepAxis::Tokens => {
            let backend = cfg.build_backend(&splits.train_ids(), cfg.k)?;
            (
                budget_sweep(
                    &splits,
                    cfg.k,
                    budgets,
                    backend.as_ref(),
                    &template,
                    &methods,
                    cfg.seed,
                )?,
                "tokens",
            )
        }
        SweepAxis::Shots => {
            let k_est = template.k_max.min(splits.train.len());
            let backend = cfg.build_backend(&splits.train_ids(), k_est)?;
            (
                shot_sweep(
                    &splits,
                    ks,
                    backend.as_ref(),
                    &template,
                    &methods,
                    &cfg.seeds,
                    cfg.seed,
                )?,
                "shots",
            )
        }
    };
    let csv = format!("# inputs: {splits_hash}\n{}", result.to_csv());
    let out = paths.out.join(format!("sweep_{name}.csv"));
    write_atomic(&out, csv.as_bytes())?;
    status(serde_json::json!({ "sweep": { "axis": name, "points": result.points.len() } }));
    Ok(())
}
