//! Trained model, inference, and the versioned JSON model file.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Task};
use crate::data::NormalizationStats;
use crate::fnn::{build_design_matrix, HierarchyWeights, RuleBank};
use crate::{Error, Result, Scalar};

pub const MODEL_FORMAT: &str = "hfnn-model";
pub const MODEL_VERSION: u32 = 1;

/// How targets map to the regression heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelEncoding {
    Regression,
    /// One head fitted to −1 (`negative`) / +1 (`positive`).
    Binary { negative: f64, positive: f64 },
    /// One ±1 head per class; the largest score wins.
    OneVsRest { classes: Vec<f64> },
}

impl LabelEncoding {
    /// Regression passes targets through; classification reads the distinct
    /// target values, in ascending order, as class labels.
    pub fn from_targets(task: Task, y: ArrayView1<'_, f64>) -> Result<Self> {
        if task == Task::Regression {
            return Ok(LabelEncoding::Regression);
        }
        let mut classes: Vec<f64> = y.to_vec();
        classes.sort_by(f64::total_cmp);
        classes.dedup();
        match classes.as_slice() {
            [] | [_] => Err(Error::Config(format!(
                "classification needs at least two classes, found {}",
                classes.len()
            ))),
            [neg, pos] => Ok(LabelEncoding::Binary {
                negative: *neg,
                positive: *pos,
            }),
            _ => Ok(LabelEncoding::OneVsRest { classes }),
        }
    }

    pub fn heads(&self) -> usize {
        match self {
            LabelEncoding::OneVsRest { classes } => classes.len(),
            _ => 1,
        }
    }

    /// Training target of every head.
    pub fn encode(&self, y: ArrayView1<'_, f64>) -> Result<Vec<Array1<f64>>> {
        let sign = |hit: bool| if hit { 1.0 } else { -1.0 };
        match self {
            LabelEncoding::Regression => Ok(vec![y.to_owned()]),
            LabelEncoding::Binary { negative, positive } => {
                if let Some(v) = y.iter().find(|v| *v != negative && *v != positive) {
                    return Err(Error::Config(format!("label {v} is not one of {negative}, {positive}")));
                }
                Ok(vec![y.mapv(|v| sign(v == *positive))])
            }
            LabelEncoding::OneVsRest { classes } => {
                if let Some(v) = y.iter().find(|v| !classes.contains(v)) {
                    return Err(Error::Config(format!("label {v} was not seen in training")));
                }
                Ok(classes.iter().map(|c| y.mapv(|v| sign(v == *c))).collect())
            }
        }
    }

    /// Prediction from one row of head scores.
    pub fn decode(&self, scores: ArrayView1<'_, f64>) -> f64 {
        match self {
            LabelEncoding::Regression => scores[0],
            LabelEncoding::Binary { negative, positive } => {
                if scores[0] >= 0.0 {
                    *positive
                } else {
                    *negative
                }
            }
            LabelEncoding::OneVsRest { classes } => {
                let mut best = 0;
                for (i, &s) in scores.iter().enumerate() {
                    if s > scores[best] {
                        best = i;
                    }
                }
                classes[best]
            }
        }
    }
}

/// One low-level branch: the input columns it reads and its rules.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch<T> {
    pub features: Vec<usize>,
    pub bank: RuleBank<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HfnnModel<T> {
    pub feature_names: Vec<String>,
    pub normalization: NormalizationStats<T>,
    pub branches: Vec<Branch<T>>,
    /// One set of consequent and coordination weights per output head.
    /// Empty until the second training stage has run.
    pub heads: Vec<HierarchyWeights<T>>,
    pub labels: LabelEncoding,
    pub config: ExperimentConfig,
}

impl<T: Scalar> HfnnModel<T> {
    pub fn n_features(&self) -> usize {
        self.normalization.dim()
    }

    pub fn is_finalized(&self) -> bool {
        !self.heads.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_features();
        if self.feature_names.len() != d {
            return Err(Error::shape(format!("{} feature names for {d} features", self.feature_names.len())));
        }
        if self.branches.is_empty() {
            return Err(Error::invalid("a model needs at least one branch"));
        }
        for (b, br) in self.branches.iter().enumerate() {
            if br.features.len() != br.bank.dim() {
                return Err(Error::shape(format!(
                    "branch {b} reads {} features but its rules have {}",
                    br.features.len(),
                    br.bank.dim()
                )));
            }
            if let Some(j) = br.features.iter().find(|&&j| j >= d) {
                return Err(Error::shape(format!("branch {b} reads feature {j} of {d}")));
            }
        }
        let banks: Vec<RuleBank<T>> = self.branches.iter().map(|b| b.bank.clone()).collect();
        for head in &self.heads {
            head.check_banks(&banks)?;
        }
        if self.is_finalized() && self.heads.len() != self.labels.heads() {
            return Err(Error::shape(format!(
                "{} heads for a label encoding with {}",
                self.heads.len(),
                self.labels.heads()
            )));
        }
        Ok(())
    }

    /// Design matrix of every branch for raw (unnormalized) inputs.
    pub fn design_blocks(&self, x: ArrayView2<'_, T>) -> Result<Vec<Array2<T>>> {
        if x.ncols() != self.n_features() {
            return Err(Error::shape(format!(
                "model expects {} features, input has {}",
                self.n_features(),
                x.ncols()
            )));
        }
        let xn = self.normalization.apply(x)?;
        self.branches
            .iter()
            .map(|br| Ok(build_design_matrix(xn.select(Axis(1), &br.features).view(), &br.bank)?.into_inner()))
            .collect()
    }

    /// Output of every head, one column per head.
    pub fn decision_scores(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if !self.is_finalized() {
            return Err(Error::Unfinalized("consequent and coordination weights are not trained".into()));
        }
        let blocks = self.design_blocks(x)?;
        Ok(scores_from_blocks(&blocks, &self.heads))
    }

    /// Regression outputs or class labels.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array1<f64>> {
        let scores = self.decision_scores(x)?.mapv(|v| v.to_f64_lossy());
        Ok(scores.rows().into_iter().map(|r| self.labels.decode(r)).collect())
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Result<HfnnModel<U>> {
        let lit = |v: &T| U::lit(v.to_f64_lossy());
        Ok(HfnnModel {
            feature_names: self.feature_names.clone(),
            normalization: self.normalization.cast(),
            branches: self
                .branches
                .iter()
                .map(|b| {
                    Ok(Branch {
                        features: b.features.clone(),
                        bank: RuleBank::new(b.bank.branch_id(), b.bank.centers().map(lit), b.bank.widths().map(lit))?,
                    })
                })
                .collect::<Result<_>>()?,
            heads: self
                .heads
                .iter()
                .map(|h| HierarchyWeights::new(h.w.iter().map(|w| w.map(lit)).collect(), h.v.map(lit)))
                .collect::<Result<_>>()?,
            labels: self.labels.clone(),
            config: self.config.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&ModelFile::from_model(self))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile<T> = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path.as_ref())?)
    }
}

/// `Σ_b v_b H^b w^b` for every head.
pub fn scores_from_blocks<T: Scalar>(blocks: &[Array2<T>], heads: &[HierarchyWeights<T>]) -> Array2<T> {
    let n = blocks.first().map_or(0, |h| h.nrows());
    let mut out = Array2::zeros((n, heads.len()));
    for (c, head) in heads.iter().enumerate() {
        let mut col = out.column_mut(c);
        for ((h, w), &v) in blocks.iter().zip(&head.w).zip(&head.v) {
            col.scaled_add(v, &h.dot(w));
        }
    }
    out
}

fn rows<T: Scalar>(m: ArrayView2<'_, T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix<T: Scalar>(rows: &[Vec<T>], what: &str) -> Result<Array2<T>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape(format!("{what} rows differ in length")));
    }
    Array2::from_shape_vec((rows.len(), d), rows.concat()).map_err(|e| Error::shape(e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct NormalizationRecord<T> {
    mean: Vec<T>,
    scale: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct BranchRecord<T> {
    features: Vec<usize>,
    centers: Vec<Vec<T>>,
    widths: Vec<Vec<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct HeadRecord<T> {
    w: Vec<Vec<T>>,
    v: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct ModelFile<T> {
    format: String,
    version: u32,
    feature_names: Vec<String>,
    normalization: NormalizationRecord<T>,
    branches: Vec<BranchRecord<T>>,
    heads: Vec<HeadRecord<T>>,
    labels: LabelEncoding,
    config: ExperimentConfig,
}

impl<T: Scalar> ModelFile<T> {
    fn from_model(m: &HfnnModel<T>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            feature_names: m.feature_names.clone(),
            normalization: NormalizationRecord {
                mean: m.normalization.mean.to_vec(),
                scale: m.normalization.scale.to_vec(),
            },
            branches: m
                .branches
                .iter()
                .map(|b| BranchRecord {
                    features: b.features.clone(),
                    centers: rows(b.bank.centers()),
                    widths: rows(b.bank.widths()),
                })
                .collect(),
            heads: m
                .heads
                .iter()
                .map(|h| HeadRecord {
                    w: h.w.iter().map(|w| w.to_vec()).collect(),
                    v: h.v.to_vec(),
                })
                .collect(),
            labels: m.labels.clone(),
            config: m.config.clone(),
        }
    }

    fn into_model(self) -> Result<HfnnModel<T>> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Config(format!("not a model file (format '{}')", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "model file version {} is not supported (expected {MODEL_VERSION})",
                self.version
            )));
        }
        if self.normalization.mean.len() != self.normalization.scale.len() {
            return Err(Error::shape("normalization mean and scale differ in length"));
        }
        let branches = self
            .branches
            .into_iter()
            .enumerate()
            .map(|(b, r)| {
                Ok(Branch {
                    features: r.features,
                    bank: RuleBank::new(b, matrix(&r.centers, "center")?, matrix(&r.widths, "width")?)?,
                })
            })
            .collect::<Result<_>>()?;
        let heads = self
            .heads
            .into_iter()
            .map(|h| HierarchyWeights::new(h.w.into_iter().map(Array1::from).collect(), Array1::from(h.v)))
            .collect::<Result<_>>()?;
        let model = HfnnModel {
            feature_names: self.feature_names,
            normalization: NormalizationStats {
                mean: Array1::from(self.normalization.mean),
                scale: Array1::from(self.normalization.scale),
            },
            branches,
            heads,
            labels: self.labels,
            config: self.config,
        };
        model.validate()?;
        Ok(model)
    }
}
