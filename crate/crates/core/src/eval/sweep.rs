use std::io::Write;

use ndarray::Axis;
use rayon::prelude::*;

use super::experiment::{score, task_metric};
use super::folds::FoldPlan;
use super::metrics::Metric;
use crate::ao::AoConfig;
use crate::config::{fold_seed, ExperimentConfig};
use crate::data::Dataset;
use crate::model::LabelEncoding;
use crate::train::{assemble, fit_heads, fit_stage1};
use crate::{Error, Result};

/// Cross-validated scores of one (λ, μ) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub lambda: f64,
    pub mu: f64,
    pub train_mean: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub metric: Metric,
    /// Row-major over (λ, μ): λ outer, μ inner.
    pub cells: Vec<SweepCell>,
    pub best: usize,
    pub best_config: ExperimentConfig,
}

/// Evaluates every (λ, μ) pair by cross-validation and picks the best test
/// mean; ties go to the earliest cell. The consensus clustering does not
/// depend on λ or μ, so it runs once per fold.
pub fn parameter_sweep(config: &ExperimentConfig, data: &Dataset, lambdas: &[f64], mus: &[f64]) -> Result<SweepResult> {
    config.validate()?;
    if lambdas.is_empty() || mus.is_empty() {
        return Err(Error::Config("the parameter grid is empty".into()));
    }
    let grid: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| mus.iter().map(move |&m| (l, m))).collect();
    for &(l, m) in &grid {
        AoConfig::new(l, m, config.ao_iters)?;
    }
    let plan = FoldPlan::from_scheme(config.folds, data.len(), data.groups.as_deref(), config.seed)?;
    // scores[f][cell] = (train, test)
    let scores = (0..plan.len())
        .into_par_iter()
        .map(|f| -> Result<Vec<(f64, f64)>> {
            let train_idx = plan.train_indices(f);
            let test_idx = plan.test_indices(f);
            let x_train = data.x.select(Axis(0), &train_idx);
            let y_train = data.y.select(Axis(0), &train_idx);
            let x_test = data.x.select(Axis(0), test_idx);
            let y_test = data.y.select(Axis(0), test_idx);
            let mut cfg = config.clone();
            cfg.seed = fold_seed(config.seed, f);
            let labels = LabelEncoding::from_targets(cfg.task, y_train.view())?;
            let targets = labels.encode(y_train.view())?;
            let stage1 = fit_stage1(x_train.view(), &cfg).map_err(|e| Error::Fold {
                fold: f,
                stage: "clustering",
                source: Box::new(e),
            })?;
            grid.iter()
                .map(|&(lambda, mu)| {
                    let mut ao = cfg.ao_config()?;
                    ao.lambda = lambda;
                    ao.mu = mu;
                    let heads = fit_heads(&stage1, &targets, &ao, cfg.seed)?;
                    let cell_cfg = ExperimentConfig { lambda, mu, ..cfg.clone() };
                    let model = assemble(&stage1, &heads, labels.clone(), data.feature_names.clone(), &cell_cfg)?;
                    let train_score = score(config, &y_train, &model.predict(x_train.view())?)?;
                    let test_score = score(config, &y_test, &model.predict(x_test.view())?)?;
                    Ok((train_score, test_score))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let folds = scores.len() as f64;
    let metric = task_metric(config.task);
    let cells: Vec<SweepCell> = grid
        .iter()
        .enumerate()
        .map(|(c, &(lambda, mu))| {
            let train_mean = scores.iter().map(|s| s[c].0).sum::<f64>() / folds;
            let test: Vec<f64> = scores.iter().map(|s| s[c].1).collect();
            let test_mean = test.iter().sum::<f64>() / folds;
            let test_std = if test.len() > 1 {
                (test.iter().map(|v| (v - test_mean).powi(2)).sum::<f64>() / (folds - 1.0)).sqrt()
            } else {
                0.0
            };
            SweepCell {
                lambda,
                mu,
                train_mean,
                test_mean,
                test_std,
            }
        })
        .collect();
    let mut best = 0;
    for (c, cell) in cells.iter().enumerate() {
        let better = if metric.maximize() {
            cell.test_mean > cells[best].test_mean
        } else {
            cell.test_mean < cells[best].test_mean
        };
        if better {
            best = c;
        }
    }
    let best_config = ExperimentConfig {
        lambda: cells[best].lambda,
        mu: cells[best].mu,
        ..config.clone()
    };
    Ok(SweepResult {
        metric,
        cells,
        best,
        best_config,
    })
}

/// Grid table `lambda,mu,metric,train_mean,test_mean,test_std`.
pub fn write_sweep_csv<W: Write>(out: W, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "mu", "metric", "train_mean", "test_mean", "test_std"])?;
    for c in &result.cells {
        w.write_record([
            format!("{:?}", c.lambda),
            format!("{:?}", c.mu),
            result.metric.as_str().to_string(),
            format!("{:?}", c.train_mean),
            format!("{:?}", c.test_mean),
            format!("{:?}", c.test_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}
