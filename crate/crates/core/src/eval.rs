//! Multi-seed experiments, the four-variant ablation grid and one-axis
//! sensitivity sweeps.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{split_indices, GraphDataset, SplitSpec};
use crate::model::{Model, ModelConfig, Variant};
use crate::train::{csv_io, evaluate, fit, Prepared, TrainConfig, TrainReport};

/// Scales used by an F sweep: `F = k` takes the first `k` entries.
pub const DEFAULT_SCALE_LADDER: [f64; 4] = [0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "F")]
    F,
    #[serde(rename = "M")]
    M,
    #[serde(rename = "beta")]
    Beta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::F => "F",
            SweepAxis::M => "M",
            SweepAxis::Beta => "beta",
        }
    }
}

/// Optional value lists, one per sweepable hyperparameter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(rename = "F", skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<usize>>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

impl SweepAxes {
    /// The requested grids in F, M, beta order.
    pub fn grids(&self) -> Vec<(SweepAxis, Vec<f64>)> {
        let mut out = Vec::new();
        if let Some(v) = &self.f {
            out.push((SweepAxis::F, v.iter().map(|&x| x as f64).collect()));
        }
        if let Some(v) = &self.m {
            out.push((SweepAxis::M, v.iter().map(|&x| x as f64).collect()));
        }
        if let Some(v) = &self.beta {
            out.push((SweepAxis::Beta, v.clone()));
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_none() && self.m.is_none() && self.beta.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub seeds: Vec<u64>,
    /// `feature_dim` and `class_count` of 0 are filled in from the dataset.
    pub model: ModelConfig,
    /// `seed` is replaced by each run seed.
    pub train: TrainConfig,
    /// `seed` is replaced by each run seed.
    pub split: SplitSpec,
    pub scale_ladder: Vec<f64>,
    pub sweep: SweepAxes,
    /// Fill the `seconds` CSV column. Off by default so reruns are byte-identical.
    pub record_timing: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            scale_ladder: DEFAULT_SCALE_LADDER.to_vec(),
            sweep: SweepAxes::default(),
            record_timing: false,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("an experiment needs at least one seed".into()));
        }
        self.train.validate()
    }

    /// The model config with zero dimensions filled in from `dataset`.
    pub fn model_for(&self, dataset: &GraphDataset) -> ModelConfig {
        let mut m = self.model.clone();
        if m.feature_dim == 0 {
            m.feature_dim = dataset.feature_dim();
        }
        if m.class_count == 0 {
            m.class_count = dataset.class_count();
        }
        m
    }
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub seed: u64,
    /// Accuracy of the best-validation parameters on the test split.
    pub test_acc: f64,
    pub epochs: usize,
    pub seconds: f64,
    pub train: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

/// Row of the per-seed CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub variant: String,
    pub seed: u64,
    pub test_acc: f64,
    pub epochs: usize,
    pub seconds: Option<f64>,
}

/// Row of the aggregate CSV; `std` is the sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Row of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (n - 1) standard deviation; std is 0 for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub variant: Variant,
    pub runs: Vec<RunReport>,
    pub failures: Vec<SeedFailure>,
    pub aggregate: Aggregate,
}

impl ExperimentResult {
    pub fn rows(&self, record_timing: bool) -> Vec<SeedRow> {
        self.runs
            .iter()
            .map(|r| SeedRow {
                variant: r.variant.name().to_string(),
                seed: r.seed,
                test_acc: r.test_acc,
                epochs: r.epochs,
                seconds: record_timing.then_some(r.seconds),
            })
            .collect()
    }
}

/// Aggregates per-seed rows of one variant.
pub fn aggregate_rows(variant: &str, rows: &[SeedRow]) -> Aggregate {
    let accs: Vec<f64> = rows.iter().map(|r| r.test_acc).collect();
    let (mean, std) = mean_std(&accs);
    Aggregate {
        variant: variant.to_string(),
        mean,
        std,
        n: accs.len(),
    }
}

fn run_seed(dataset: &GraphDataset, data: &Prepared, plan: &ExperimentPlan, model: &ModelConfig, seed: u64) -> Result<RunReport> {
    let split = split_indices(dataset, &SplitSpec { seed, ..plan.split })?;
    let train_cfg = TrainConfig {
        seed,
        ..plan.train.clone()
    };
    let init = Model::new(model.clone(), seed)?;
    let outcome = fit(init, data, &split.train, &split.val, &train_cfg)?;
    let test = evaluate(&outcome.best, data, &split.test, train_cfg.beta)?;
    Ok(RunReport {
        variant: model.variant,
        seed,
        test_acc: test.accuracy,
        epochs: outcome.report.epochs.len(),
        seconds: outcome.report.seconds,
        train: outcome.report,
    })
}

fn run_with(dataset: &GraphDataset, plan: &ExperimentPlan, model: ModelConfig) -> Result<ExperimentResult> {
    plan.validate()?;
    model.validate()?;
    let data = Prepared::from_dataset(&model, dataset)?;
    let outcomes: Vec<(u64, Result<RunReport>)> = plan
        .seeds
        .par_iter()
        .map(|&s| (s, run_seed(dataset, &data, plan, &model, s)))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut first_err = None;
    for (seed, r) in outcomes {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                warn!("{} seed {seed} failed: {e}", model.variant);
                failures.push(SeedFailure {
                    seed,
                    message: e.to_string(),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    if runs.is_empty() {
        return Err(first_err.expect("at least one seed"));
    }
    if !failures.is_empty() {
        warn!(
            "{}: aggregate over {} of {} seeds",
            model.variant,
            runs.len(),
            plan.seeds.len()
        );
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
    let (mean, std) = mean_std(&accs);
    Ok(ExperimentResult {
        variant: model.variant,
        aggregate: Aggregate {
            variant: model.variant.name().to_string(),
            mean,
            std,
            n: runs.len(),
        },
        runs,
        failures,
    })
}

/// Trains one model per seed and reports best-validation test accuracy.
///
/// Split, initialization and shuffling all use the run seed. Seeds that fail
/// are recorded and left out of the aggregate; if every seed fails the first
/// error is returned.
pub fn run_experiment(dataset: &GraphDataset, plan: &ExperimentPlan) -> Result<ExperimentResult> {
    run_with(dataset, plan, plan.model_for(dataset))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    /// One entry per variant, in `Variant::ALL` order.
    pub results: Vec<ExperimentResult>,
    /// Seeds where gspect reached at least the gcn_diffpool accuracy, and the
    /// number of seeds both completed.
    pub gspect_wins: (usize, usize),
}

impl AblationTable {
    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.results.iter().map(|r| r.aggregate.clone()).collect()
    }

    pub fn rows(&self, record_timing: bool) -> Vec<SeedRow> {
        self.results.iter().flat_map(|r| r.rows(record_timing)).collect()
    }

    /// Plain-text table with accuracies as `mean ± std` percentages.
    pub fn to_text(&self) -> String {
        let width = Variant::ALL.iter().map(|v| v.label().len()).max().unwrap_or(0).max("Algorithm".len());
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$} | {}", "Algorithm", self.dataset);
        let _ = writeln!(s, "{}-+-{}", "-".repeat(width), "-".repeat(self.dataset.len().max(14)));
        for r in &self.results {
            let _ = writeln!(
                s,
                "{:<width$} | {:.2} ± {:.2}",
                r.variant.label(),
                100.0 * r.aggregate.mean,
                100.0 * r.aggregate.std
            );
        }
        s
    }
}

/// Runs all four variants with the same seeds and splits.
pub fn run_ablation(dataset: &GraphDataset, plan: &ExperimentPlan) -> Result<AblationTable> {
    let base = plan.model_for(dataset);
    let results = Variant::ALL
        .iter()
        .map(|&variant| run_with(dataset, plan, ModelConfig { variant, ..base.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let acc = |v: Variant, seed: u64| {
        results
            .iter()
            .find(|r| r.variant == v)
            .and_then(|r| r.runs.iter().find(|x| x.seed == seed))
            .map(|x| x.test_acc)
    };
    let mut wins = (0, 0);
    for &seed in &plan.seeds {
        if let (Some(a), Some(b)) = (acc(Variant::Gspect, seed), acc(Variant::GcnDiffpool, seed)) {
            wins.1 += 1;
            if a >= b {
                wins.0 += 1;
            }
        }
    }
    Ok(AblationTable {
        dataset: dataset.name().to_string(),
        results,
        gspect_wins: wins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axis: SweepAxis,
    pub cells: Vec<(f64, ExperimentResult)>,
}

impl SweepGrid {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.cells
            .iter()
            .map(|(value, r)| SweepRow {
                axis: self.axis.name().to_string(),
                value: *value,
                mean: r.aggregate.mean,
                std: r.aggregate.std,
            })
            .collect()
    }

    /// `(value, mean, std)` triples for plotting.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        self.cells
            .iter()
            .map(|(v, r)| (*v, r.aggregate.mean, r.aggregate.std))
            .collect()
    }

    /// Largest minus smallest cell mean.
    pub fn spread(&self) -> f64 {
        let means = self.cells.iter().map(|(_, r)| r.aggregate.mean);
        means.clone().fold(f64::NEG_INFINITY, f64::max) - means.fold(f64::INFINITY, f64::min)
    }
}

/// Repeats `run_experiment` once per value of a single hyperparameter.
pub fn run_sensitivity(dataset: &GraphDataset, plan: &ExperimentPlan, axis: SweepAxis, values: &[f64]) -> Result<SweepGrid> {
    if values.is_empty() {
        return Err(Error::contract(format!("sweep over {} has no values", axis.name())));
    }
    let base = plan.model_for(dataset);
    let mut cells = Vec::with_capacity(values.len());
    for &value in values {
        let mut model = base.clone();
        let mut cell_plan = plan.clone();
        match axis {
            SweepAxis::F => {
                let k = value as usize;
                if value.fract() != 0.0 || k == 0 || k > plan.scale_ladder.len() {
                    return Err(Error::Config(format!(
                        "F = {value} needs an integer in 1..={}",
                        plan.scale_ladder.len()
                    )));
                }
                model.scales = plan.scale_ladder[..k].to_vec();
            }
            SweepAxis::M => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::Config(format!("M = {value} must be a positive integer")));
                }
                model.order = value as usize;
            }
            SweepAxis::Beta => cell_plan.train.beta = value,
        }
        cells.push((value, run_with(dataset, &cell_plan, model)?));
    }
    Ok(SweepGrid { axis, cells })
}

/// Accuracy of always predicting the training split's majority class.
pub fn majority_baseline(dataset: &GraphDataset, split: &SplitSpec, seeds: &[u64]) -> Result<Aggregate> {
    let labels = dataset.labels();
    let mut accs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let idx = split_indices(dataset, &SplitSpec { seed, ..*split })?;
        let mut counts = vec![0usize; dataset.class_count()];
        for &i in &idx.train {
            counts[labels[i]] += 1;
        }
        // Ties go to the lowest class id.
        let majority = (0..counts.len()).fold(0, |best, c| if counts[c] > counts[best] { c } else { best });
        let hits = idx.test.iter().filter(|&&i| labels[i] == majority).count();
        accs.push(hits as f64 / idx.test.len() as f64);
    }
    let (mean, std) = mean_std(&accs);
    Ok(Aggregate {
        variant: "majority".into(),
        mean,
        std,
        n: accs.len(),
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        out.push(row.map_err(|e| Error::Format {
            file: path.display().to_string(),
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// `variant,seed,test_acc,epochs,seconds`
pub fn write_seed_csv(path: &Path, rows: &[SeedRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_seed_csv(path: &Path) -> Result<Vec<SeedRow>> {
    read_rows(path)
}

/// `variant,mean,std,n`
pub fn write_aggregate_csv(path: &Path, rows: &[Aggregate]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<Aggregate>> {
    read_rows(path)
}

/// `axis,value,mean,std`
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    read_rows(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use nalgebra::DMatrix;

    fn toy(per_class: usize) -> GraphDataset {
        let mut graphs = Vec::new();
        for c in 0..2 {
            for j in 0..per_class {
                let n = 5 + j % 3;
                let edges: Vec<(usize, usize)> = if c == 0 {
                    (0..n - 1).map(|i| (i, i + 1)).collect()
                } else {
                    (1..n).map(|i| (0, i)).collect()
                };
                let mut a = DMatrix::zeros(n, n);
                for &(u, v) in &edges {
                    a[(u, v)] = 1.0;
                    a[(v, u)] = 1.0;
                }
                let feats = crate::graph::degree_features(&a, 8);
                graphs.push(Graph::new(format!("{c}-{j}"), a, feats, c).unwrap());
            }
        }
        GraphDataset::new("toy", graphs, 2).unwrap()
    }

    fn small_plan(seeds: Vec<u64>) -> ExperimentPlan {
        ExperimentPlan {
            seeds,
            model: ModelConfig {
                n_max: 8,
                m_out: 2,
                pool_ratio: 2,
                hidden: 4,
                order: 10,
                scales: vec![0.5, 1.0],
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 6,
                batch_size: 4,
                learning_rate: 0.01,
                ..TrainConfig::default()
            },
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn sample_std_matches_hand_value() {
        // mean 4, squared deviations 4 + 0 + 4, divided by n - 1 = 2.
        let (m, s) = mean_std(&[2.0, 4.0, 6.0]);
        assert_eq!(m, 4.0);
        assert!((s - 2.0).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    #[test]
    fn single_seed_reports_zero_std() {
        let r = run_experiment(&toy(10), &small_plan(vec![3])).unwrap();
        assert_eq!(r.aggregate.n, 1);
        assert_eq!(r.aggregate.std, 0.0);
        assert!(r.failures.is_empty());
    }

    #[test]
    fn constant_baseline_on_balanced_set() {
        let agg = majority_baseline(&toy(20), &SplitSpec::default(), &(0..5).collect::<Vec<_>>()).unwrap();
        assert_eq!(agg.mean, 0.5);
        assert_eq!(agg.std, 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_accuracy() {
        let ds = toy(10);
        let mut plan = small_plan(vec![1, 2]);
        plan.train.learning_rate = 0.0;
        plan.train.epochs = 2;
        let table = run_ablation(&ds, &plan).unwrap();
        let order: Vec<Variant> = table.results.iter().map(|r| r.variant).collect();
        assert_eq!(order, Variant::ALL.to_vec());
        for res in &table.results {
            let cfg = ModelConfig {
                variant: res.variant,
                ..plan.model_for(&ds)
            };
            let data = Prepared::from_dataset(&cfg, &ds).unwrap();
            for run in &res.runs {
                assert_eq!(run.train.best_epoch, 0);
                let split = split_indices(&ds, &SplitSpec::with_seed(run.seed)).unwrap();
                let init = Model::new(cfg.clone(), run.seed).unwrap();
                let acc = evaluate(&init, &data, &split.test, plan.train.beta).unwrap().accuracy;
                assert_eq!(run.test_acc, acc, "{}", res.variant);
            }
        }
        let text = table.to_text();
        assert!(text.lines().nth(2).unwrap().starts_with("GCN+Diffpool"));
        assert!(text.lines().nth(5).unwrap().starts_with("GSpect"));
    }

    #[test]
    fn csv_round_trip_recomputes_aggregate() {
        let ds = toy(10);
        let r = run_experiment(&ds, &small_plan(vec![0, 1, 2])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("runs.csv");
        write_seed_csv(&p, &r.rows(false)).unwrap();
        let back = read_seed_csv(&p).unwrap();
        assert_eq!(back, r.rows(false));
        assert_eq!(aggregate_rows("gspect", &back), r.aggregate);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("variant,seed,test_acc,epochs,seconds\n"));

        let pa = dir.path().join("agg.csv");
        write_aggregate_csv(&pa, &[r.aggregate.clone()]).unwrap();
        assert_eq!(read_aggregate_csv(&pa).unwrap(), vec![r.aggregate.clone()]);
        assert!(std::fs::read_to_string(&pa).unwrap().starts_with("variant,mean,std,n\n"));
    }

    #[test]
    fn sweeps_have_expected_shape() {
        let ds = toy(10);
        let plan = small_plan(vec![0, 1]);
        let grid = run_sensitivity(&ds, &plan, SweepAxis::Beta, &[0.0, 0.5, 0.9]).unwrap();
        let rows = grid.rows();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.axis == "beta"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sweep.csv");
        write_sweep_csv(&p, &rows).unwrap();
        assert_eq!(read_sweep_csv(&p).unwrap(), rows);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("axis,value,mean,std\n"));
    }

    #[test]
    fn degenerate_f_sweep_equals_plain_run() {
        let ds = toy(10);
        let mut plan = small_plan(vec![0, 1]);
        plan.model.scales = vec![plan.scale_ladder[0]];
        let grid = run_sensitivity(&ds, &plan, SweepAxis::F, &[1.0]).unwrap();
        let direct = run_experiment(&ds, &plan).unwrap();
        assert_eq!(grid.cells[0].1.aggregate, direct.aggregate);
    }

    #[test]
    fn empty_axis_is_a_contract_violation() {
        let err = run_sensitivity(&toy(4), &small_plan(vec![0]), SweepAxis::M, &[]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = run_sensitivity(&toy(4), &small_plan(vec![0]), SweepAxis::F, &[7.0]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn all_seeds_failing_returns_first_error() {
        // Too few graphs per class for a stratified split at every seed.
        let err = run_experiment(&toy(2), &small_plan(vec![0, 1])).unwrap_err();
        assert!(matches!(err, Error::Split(_)));
    }

    #[test]
    fn sweep_axes_parse_from_json() {
        let axes: SweepAxes = serde_json::from_str(r#"{"F":[1,2],"beta":[0.0,0.5]}"#).unwrap();
        let grids = axes.grids();
        assert_eq!(grids.len(), 2);
        assert_eq!(grids[0].0, SweepAxis::F);
        assert_eq!(grids[1], (SweepAxis::Beta, vec![0.0, 0.5]));
        assert!(SweepAxes::default().is_empty());
    }
}
