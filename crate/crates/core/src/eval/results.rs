use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One line of the results table. `fold` is the fold index, or `mean` /
/// `std` on aggregate rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub task: String,
    pub fold: String,
    pub split: Split,
    pub metric: Metric,
    pub value: f64,
    pub time_s: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Mean and sample standard deviation over folds of every (split, metric)
/// pair, in order of first appearance. Time columns aggregate the same way.
pub fn aggregate_rows(per_fold: &[ResultRow]) -> Vec<ResultRow> {
    let mut keys: Vec<(Split, Metric)> = Vec::new();
    for r in per_fold {
        if !keys.contains(&(r.split, r.metric)) {
            keys.push((r.split, r.metric));
        }
    }
    let mut out = Vec::new();
    for (split, metric) in keys {
        let rows: Vec<&ResultRow> = per_fold.iter().filter(|r| r.split == split && r.metric == metric).collect();
        let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
        let times: Vec<f64> = rows.iter().map(|r| r.time_s).collect();
        let (vm, vs) = mean_std(&values);
        let (tm, ts) = mean_std(&times);
        for (fold, value, time_s) in [("mean", vm, tm), ("std", vs, ts)] {
            out.push(ResultRow {
                dataset: rows[0].dataset.clone(),
                task: rows[0].task.clone(),
                fold: fold.into(),
                split,
                metric,
                value,
                time_s,
            });
        }
    }
    out
}

/// Writes `dataset,task,fold,split,metric,value,time_s` with a header.
pub fn write_results_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "task", "fold", "split", "metric", "value", "time_s"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.task.as_str(),
            r.fold.as_str(),
            r.split.as_str(),
            r.metric.as_str(),
            &format!("{:?}", r.value),
            &format!("{:?}", r.time_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}
