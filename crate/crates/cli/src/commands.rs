use std::fs;
use std::path::Path;

use gspect_core::eval::{self, ExperimentPlan, SeedRow};
use gspect_core::graph::Graph;
use gspect_core::plot::{histogram_svg, line_plot_svg};
use gspect_core::synth::{gen_er, size_histogram};
use gspect_core::train::{evaluate as score, fit, predict_all, write_epoch_csv, Prepared};
use gspect_core::{
    build_msg, dataset_statistics, export_tu_dataset, load_tu_dataset, split_indices, stability_report, GraphDataset,
    LipschitzReport, Model, SplitSpec, StatsRecord, TrainConfig, TuOptions,
};
use log::info;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Resolved;
use crate::error::CliError;

const HISTOGRAM_BINS: usize = 20;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Failed(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn load_dataset(cfg: &Resolved) -> Result<GraphDataset, CliError> {
    let path = cfg.dataset_path()?;
    info!("loading {}", path.display());
    Ok(load_tu_dataset(path)?)
}

fn checked_plan(cfg: &Resolved) -> Result<ExperimentPlan, CliError> {
    let plan = cfg.plan();
    plan.validate()?;
    Ok(plan)
}

#[derive(Serialize)]
struct HistogramRow {
    bin_start: f64,
    bin_end: f64,
    count: usize,
}

pub fn generate(cfg: &Resolved, out: &Path) -> Result<(), CliError> {
    let mut msg = cfg.file.msg.clone().unwrap_or_default();
    if let Some(s) = cfg.seed_flag {
        msg.seed = s;
    }
    let build = build_msg(&msg)?;
    let ds = &build.dataset;
    let opts = TuOptions {
        max_degree: msg.max_degree,
    };
    export_tu_dataset(ds, out.join(ds.name()), ds.name(), opts)?;
    let class_names: Vec<&str> = msg
        .classes
        .iter()
        .map(|c| c.name.as_str())
        .filter(|n| !build.excluded.iter().any(|e| e == n))
        .collect();
    let labels = ds.labels();
    for (label, name) in class_names.iter().enumerate() {
        let idx: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == label).collect();
        let class = ds.subset(*name, &idx)?;
        export_tu_dataset(&class, out.join("classes").join(name), name, opts)?;
    }
    let stats = dataset_statistics(ds);
    write_json(&out.join("stats.json"), &stats)?;
    let mut rows: Vec<StatsRecord> = vec![stats.overall.clone()];
    rows.extend(stats.per_class.iter().cloned());
    write_csv(&out.join("stats.csv"), &rows)?;
    let bins = size_histogram(ds, ds.min_nodes(), ds.max_nodes(), HISTOGRAM_BINS);
    let hist: Vec<HistogramRow> = bins
        .iter()
        .map(|&(bin_start, bin_end, count)| HistogramRow { bin_start, bin_end, count })
        .collect();
    write_csv(&out.join("size_histogram.csv"), &hist)?;
    write_text(
        &out.join("size_histogram.svg"),
        &histogram_svg(&format!("{} graph sizes", ds.name()), "nodes", &bins),
    )?;
    write_json(&out.join("msg_config.json"), &msg)?;
    if build.is_lite() {
        println!("excluded classes without empirical sources: {}", build.excluded.join(", "));
    }
    println!(
        "{}: {} graphs in {} classes written to {}",
        ds.name(),
        ds.len(),
        ds.class_count(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    dataset: &'a str,
    seed: u64,
    test_acc: f64,
    best_epoch: usize,
    best_val_acc: f64,
    train_graphs: usize,
    val_graphs: usize,
    test_graphs: usize,
    report: &'a gspect_core::train::TrainReport,
}

pub fn train(cfg: &Resolved, out: &Path) -> Result<(), CliError> {
    let plan = checked_plan(cfg)?;
    let ds = load_dataset(cfg)?;
    let model_cfg = plan.model_for(&ds);
    model_cfg.validate()?;
    let seed = cfg.seed;
    let split = split_indices(&ds, &SplitSpec { seed, ..plan.split })?;
    let data = Prepared::from_dataset(&model_cfg, &ds)?;
    let train_cfg = TrainConfig {
        seed,
        ..plan.train.clone()
    };
    let outcome = fit(Model::new(model_cfg, seed)?, &data, &split.train, &split.val, &train_cfg)?;
    let test = score(&outcome.best, &data, &split.test, train_cfg.beta)?;
    outcome.best.save(&out.join("checkpoint"), seed)?;
    write_epoch_csv(&out.join("epochs.csv"), &outcome.report.epochs)?;
    let row = SeedRow {
        variant: outcome.best.config.variant.name().to_string(),
        seed,
        test_acc: test.accuracy,
        epochs: outcome.report.epochs.len(),
        seconds: plan.record_timing.then_some(outcome.report.seconds),
    };
    eval::write_seed_csv(&out.join("runs.csv"), &[row])?;
    write_json(
        &out.join("report.json"),
        &TrainSummary {
            dataset: ds.name(),
            seed,
            test_acc: test.accuracy,
            best_epoch: outcome.report.best_epoch,
            best_val_acc: outcome.report.best_val_acc,
            train_graphs: split.train.len(),
            val_graphs: split.val.len(),
            test_graphs: split.test.len(),
            report: &outcome.report,
        },
    )?;
    println!(
        "{} seed {seed}: test accuracy {:.4} (best epoch {}, val {:.4})",
        ds.name(),
        test.accuracy,
        outcome.report.best_epoch,
        outcome.report.best_val_acc
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    graph: &'a str,
    label: usize,
    predicted: usize,
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    dataset: &'a str,
    checkpoint_seed: u64,
    split_seed: Option<u64>,
    graphs: usize,
    accuracy: f64,
}

pub fn evaluate(cfg: &Resolved, out: &Path, checkpoint: &Path, all: bool) -> Result<(), CliError> {
    if !checkpoint.exists() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let (model, manifest) = Model::load(checkpoint)?;
    let ds = load_dataset(cfg)?;
    if ds.feature_dim() != model.config.feature_dim || ds.class_count() > model.config.class_count {
        return Err(CliError::Usage(format!(
            "dataset {} has {} features and {} classes; the checkpoint expects {} and {}",
            ds.name(),
            ds.feature_dim(),
            ds.class_count(),
            model.config.feature_dim,
            model.config.class_count
        )));
    }
    let indices = if all {
        (0..ds.len()).collect()
    } else {
        split_indices(&ds, &SplitSpec {
            seed: cfg.seed,
            ..cfg.file.split
        })?
        .test
    };
    let data = Prepared::from_dataset(&model.config, &ds)?;
    let predicted = predict_all(&model, &data, &indices)?;
    let rows: Vec<PredictionRow> = indices
        .iter()
        .zip(&predicted)
        .map(|(&i, &p)| PredictionRow {
            graph: ds.graphs()[i].id(),
            label: ds.graphs()[i].label(),
            predicted: p,
        })
        .collect();
    let correct = rows.iter().filter(|r| r.label == r.predicted).count();
    let accuracy = correct as f64 / rows.len().max(1) as f64;
    write_csv(&out.join("predictions.csv"), &rows)?;
    write_json(
        &out.join("evaluate.json"),
        &EvalSummary {
            dataset: ds.name(),
            checkpoint_seed: manifest.seed,
            split_seed: (!all).then_some(cfg.seed),
            graphs: rows.len(),
            accuracy,
        },
    )?;
    println!("{}: accuracy {accuracy:.4} on {} graphs", ds.name(), rows.len());
    Ok(())
}

#[derive(Serialize)]
struct AblationSummary<'a> {
    dataset: &'a str,
    seeds: &'a [u64],
    aggregates: Vec<eval::Aggregate>,
    gspect_at_least_gcn_diffpool: usize,
    paired_seeds: usize,
    failures: Vec<(&'a str, &'a eval::SeedFailure)>,
}

pub fn ablate(cfg: &Resolved, out: &Path) -> Result<(), CliError> {
    let plan = checked_plan(cfg)?;
    let ds = load_dataset(cfg)?;
    let table = eval::run_ablation(&ds, &plan)?;
    eval::write_seed_csv(&out.join("runs.csv"), &table.rows(plan.record_timing))?;
    eval::write_aggregate_csv(&out.join("aggregate.csv"), &table.aggregates())?;
    let text = table.to_text();
    write_text(&out.join("ablation.txt"), &text)?;
    write_json(
        &out.join("ablation.json"),
        &AblationSummary {
            dataset: ds.name(),
            seeds: &plan.seeds,
            aggregates: table.aggregates(),
            gspect_at_least_gcn_diffpool: table.gspect_wins.0,
            paired_seeds: table.gspect_wins.1,
            failures: table
                .results
                .iter()
                .flat_map(|r| r.failures.iter().map(move |f| (r.variant.name(), f)))
                .collect(),
        },
    )?;
    print!("{text}");
    println!(
        "gspect >= gcn_diffpool on {} of {} seeds",
        table.gspect_wins.0, table.gspect_wins.1
    );
    Ok(())
}

pub fn sweep(cfg: &Resolved, out: &Path) -> Result<(), CliError> {
    let plan = checked_plan(cfg)?;
    if plan.sweep.is_empty() {
        return Err(CliError::Usage(
            "no sweep axis given (use --sweep-f, --sweep-m or --sweep-beta, or `sweep` in the config)".into(),
        ));
    }
    if let Some((axis, _)) = plan.sweep.grids().iter().find(|(_, v)| v.is_empty()) {
        return Err(CliError::Usage(format!("sweep axis {} has no values", axis.name())));
    }
    let ds = load_dataset(cfg)?;
    for (axis, values) in plan.sweep.grids() {
        let grid = eval::run_sensitivity(&ds, &plan, axis, &values)?;
        let name = axis.name();
        let rows = grid.rows();
        eval::write_sweep_csv(&out.join(format!("sweep_{name}.csv")), &rows)?;
        let svg = line_plot_svg(
            &format!("{}: test accuracy vs {name}", ds.name()),
            name,
            "test accuracy",
            &grid.points(),
        );
        write_text(&out.join(format!("sweep_{name}.svg")), &svg)?;
        for r in &rows {
            println!("{name} = {}: {:.4} ± {:.4}", r.value, r.mean, r.std);
        }
        println!("{name} spread: {:.4}", grid.spread());
    }
    Ok(())
}

#[derive(Serialize)]
struct StabilityRow<'a> {
    graph: &'a str,
    nodes: usize,
    k_gwc: f64,
    k_pool: f64,
    k_psi: f64,
    trials: usize,
    violations: usize,
    max_ratio: f64,
}

/// Random connected-ish test graphs with 8 to 32 nodes.
fn random_graphs(count: usize, seed: u64) -> Result<GraphDataset, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..count)
        .map(|i| {
            let n = rng.gen_range(8..=32);
            let g = gen_er(n, 0.3, &mut rng)?;
            Graph::new(format!("random-{i}"), g.adjacency().clone(), g.features().clone(), 0)
        })
        .collect::<gspect_core::Result<Vec<_>>>()?;
    Ok(GraphDataset::new("random", graphs, 1)?)
}

pub fn stability(cfg: &Resolved, out: &Path) -> Result<(), CliError> {
    let settings = &cfg.file.stability;
    if settings.trials == 0 || settings.graphs == 0 {
        return Err(CliError::Usage("stability needs at least one trial and one graph".into()));
    }
    let ds = if cfg.file.dataset.is_some() {
        load_dataset(cfg)?
    } else {
        random_graphs(settings.graphs, cfg.seed)?
    };
    let plan = cfg.plan();
    let model_cfg = plan.model_for(&ds);
    model_cfg.validate()?;
    if !model_cfg.variant.uses_wavelets() {
        return Err(CliError::Usage(format!(
            "stability checks need a wavelet variant, got {}",
            model_cfg.variant
        )));
    }
    let eligible: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.graphs()[i].node_count() <= model_cfg.n_max)
        .collect();
    let k = settings.graphs.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks: Vec<usize> = sample(&mut rng, eligible.len(), k).into_iter().map(|j| eligible[j]).collect();
    picks.sort_unstable();
    let model = Model::new(model_cfg, cfg.seed)?;
    let mut reports: Vec<LipschitzReport> = Vec::with_capacity(picks.len());
    for (j, &i) in picks.iter().enumerate() {
        let g = &ds.graphs()[i];
        let ctx = model.context(g)?;
        let r = stability_report(&model, g, &ctx, settings.trials, cfg.seed.wrapping_add(j as u64))?;
        println!(
            "{} ({} nodes): K1 {:.4}, K2 {:.4}, {} trials, {} violations, max ratio {:.4}",
            r.graph,
            g.node_count(),
            r.k_gwc,
            r.k_pool,
            r.trials,
            r.violations,
            r.max_ratio
        );
        reports.push(r);
    }
    write_json(&out.join("stability.json"), &reports)?;
    let rows: Vec<StabilityRow> = reports
        .iter()
        .zip(&picks)
        .map(|(r, &i)| StabilityRow {
            graph: &r.graph,
            nodes: ds.graphs()[i].node_count(),
            k_gwc: r.k_gwc,
            k_pool: r.k_pool,
            k_psi: r.k_psi,
            trials: r.trials,
            violations: r.violations,
            max_ratio: r.max_ratio,
        })
        .collect();
    write_csv(&out.join("stability.csv"), &rows)?;
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    if violations > 0 {
        return Err(CliError::Failed(format!("{violations} Lipschitz bound violation(s)")));
    }
    Ok(())
}

pub fn stats(cfg: &Resolved, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let stats = dataset_statistics(&ds);
    write_json(&out.join("stats.json"), &stats)?;
    let mut rows = vec![stats.overall.clone()];
    rows.extend(stats.per_class.iter().cloned());
    write_csv(&out.join("stats.csv"), &rows)?;
    println!(
        "{:<24} {:>7} {:>10} {:>10} {:>9} {:>9}",
        "dataset", "graphs", "avg nodes", "avg degree", "sd nodes", "diameter"
    );
    for r in &rows {
        println!(
            "{:<24} {:>7} {:>10.2} {:>10.2} {:>9.2} {:>9.2}",
            r.name, r.graph_count, r.avg_size, r.avg_degree, r.size_std, r.avg_diameter
        );
    }
    Ok(())
}
