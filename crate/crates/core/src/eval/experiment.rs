use std::time::Instant;

use log::info;
use ndarray::{Array1, Axis};
use rayon::prelude::*;

use super::folds::FoldPlan;
use super::metrics::{accuracy, nmse, Metric};
use super::results::{aggregate_rows, ResultRow, Split};
use crate::agent_sim::Transcript;
use crate::config::{fold_seed, ExperimentConfig, Task};
use crate::data::Dataset;
use crate::model::HfnnModel;
use crate::train::train;
use crate::{Error, Result};

/// Aggregate of one (split, metric) pair over folds.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub split: Split,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    /// Mean wall-clock seconds per fold (zero when timing is off).
    pub wall_time_s: f64,
    pub ao_iters: usize,
}

/// What one fold leaves behind besides its metric rows.
#[derive(Clone, Debug)]
pub struct FoldArtifacts {
    pub fold: usize,
    pub model: HfnnModel<f64>,
    pub transcript: Option<Transcript<f64>>,
    pub test_indices: Vec<usize>,
    /// Head outputs on the held-out rows.
    pub test_scores: ndarray::Array2<f64>,
    pub stage1_rounds: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    /// Per-fold rows followed by aggregate rows.
    pub rows: Vec<ResultRow>,
    pub reports: Vec<MetricReport>,
    pub folds: Vec<FoldArtifacts>,
}

impl ExperimentReport {
    pub fn report(&self, split: Split, metric: Metric) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.split == split && r.metric == metric)
    }

    /// Per-fold values of one (split, metric) pair.
    pub fn fold_values(&self, split: Split, metric: Metric) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric && r.fold.parse::<usize>().is_ok())
            .map(|r| r.value)
            .collect()
    }
}

pub(crate) fn task_metric(task: Task) -> Metric {
    match task {
        Task::Regression => Metric::Nmse,
        Task::Classification => Metric::AccuracyPct,
    }
}

pub(crate) fn score(config: &ExperimentConfig, y_true: &Array1<f64>, y_pred: &Array1<f64>) -> Result<f64> {
    match config.task {
        Task::Regression => nmse(y_true.view(), y_pred.view(), config.nmse_normalizer),
        Task::Classification => accuracy(y_true.view(), y_pred.view()),
    }
}

fn labeled(fold: usize, stage: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| Error::Fold {
        fold,
        stage,
        source: Box::new(e),
    }
}

struct FoldOutcome {
    rows: Vec<ResultRow>,
    artifacts: FoldArtifacts,
}

fn run_fold(config: &ExperimentConfig, data: &Dataset, name: &str, plan: &FoldPlan, f: usize) -> Result<FoldOutcome> {
    let start = Instant::now();
    let train_idx = plan.train_indices(f);
    let test_idx = plan.test_indices(f).to_vec();
    let x_train = data.x.select(Axis(0), &train_idx);
    let y_train = data.y.select(Axis(0), &train_idx);
    let x_test = data.x.select(Axis(0), &test_idx);
    let y_test = data.y.select(Axis(0), &test_idx);
    let mut fold_config = config.clone();
    fold_config.seed = fold_seed(config.seed, f);
    let out = train(x_train.view(), y_train.view(), data.feature_names.clone(), &fold_config)
        .map_err(labeled(f, "training"))?;
    let metric = task_metric(config.task);
    let evaluate = |x: &ndarray::Array2<f64>, y: &Array1<f64>| -> Result<f64> {
        let pred = out.model.predict(x.view())?;
        score(config, y, &pred)
    };
    let train_value = evaluate(&x_train, &y_train).map_err(labeled(f, "train evaluation"))?;
    let test_value = evaluate(&x_test, &y_test).map_err(labeled(f, "test evaluation"))?;
    let test_scores = out.model.decision_scores(x_test.view()).map_err(labeled(f, "test evaluation"))?;
    let time_s = if config.record_timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    info!("fold {f}: train {} = {train_value:.6}, test = {test_value:.6}", metric.as_str());
    let row = |split, value| ResultRow {
        dataset: name.to_string(),
        task: config.task.as_str().to_string(),
        fold: f.to_string(),
        split,
        metric,
        value,
        time_s,
    };
    Ok(FoldOutcome {
        rows: vec![row(Split::Train, train_value), row(Split::Test, test_value)],
        artifacts: FoldArtifacts {
            fold: f,
            stage1_rounds: out.stage1.clustering.iter().map(|c| c.rounds).collect(),
            transcript: out.stage1.transcript.clone(),
            model: out.model,
            test_indices: test_idx,
            test_scores,
        },
    })
}

/// Cross-validated two-stage training and evaluation. Folds run
/// concurrently; rows come out in fold order.
pub fn run_experiment(config: &ExperimentConfig, data: &Dataset, name: &str) -> Result<ExperimentReport> {
    config.validate()?;
    let plan = FoldPlan::from_scheme(config.folds, data.len(), data.groups.as_deref(), config.seed)?;
    let outcomes = (0..plan.len())
        .into_par_iter()
        .map(|f| run_fold(config, data, name, &plan, f))
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut folds = Vec::new();
    for o in outcomes {
        let o = o?;
        rows.extend(o.rows);
        folds.push(o.artifacts);
    }
    let aggregates = aggregate_rows(&rows);
    let reports = aggregates
        .chunks(2)
        .map(|pair| MetricReport {
            split: pair[0].split,
            metric: pair[0].metric,
            mean: pair[0].value,
            std: pair[1].value,
            wall_time_s: pair[0].time_s,
            ao_iters: config.ao_iters,
        })
        .collect();
    rows.extend(aggregates);
    Ok(ExperimentReport { rows, reports, folds })
}
