//! End-to-end training: normalization, partitioning, consensus clustering of
//! every branch, design matrices, and the alternating weight solve.

use log::{debug, info};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::agent_sim::{run_stage1, AgentShard, Transcript};
use crate::ao::{run_stage2, AoConfig, Stage2Outcome};
use crate::clustering::{
    cluster_stds, kmeans_from, moment_init, pooled_std, width_floor, DistributedResult, MomentStats, RoundStats,
};
use crate::config::{branch_seed, derive_seed, ClusteringMode, ExperimentConfig};
use crate::data::{split_features, FeatureSplit, NormalizationStats, PartitionPlan};
use crate::fnn::{build_design_matrix, RuleBank};
use crate::model::{Branch, HfnnModel, LabelEncoding};
use crate::{Error, Result};

const PARTITION_STREAM: u64 = 0x7061_7274;
const HEAD_STREAM: u64 = 0x6865_6164;

/// Feature groups implied by the configuration.
pub fn feature_groups(config: &ExperimentConfig, n_features: usize) -> Result<Vec<Vec<usize>>> {
    let split = match &config.feature_groups {
        Some(groups) => FeatureSplit::Explicit(groups.clone()),
        None => FeatureSplit::EqualChunks(config.branches.unwrap_or(1)),
    };
    split_features(n_features, &split)
}

/// Everything the second stage needs, computed once per training split.
#[derive(Clone, Debug)]
pub struct Stage1Fit {
    pub normalization: NormalizationStats<f64>,
    pub plan: PartitionPlan,
    pub banks: Vec<RuleBank<f64>>,
    pub clustering: Vec<DistributedResult<f64>>,
    /// Present for distributed clustering.
    pub transcript: Option<Transcript<f64>>,
    /// Design matrix of every branch over all training rows.
    pub blocks: Vec<Array2<f64>>,
}

impl Stage1Fit {
    pub fn block_views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.blocks.iter().map(|a| a.view()).collect()
    }
}

fn centralized_branch(x: ArrayView2<'_, f64>, config: &ExperimentConfig, rules: usize, seed: u64) -> Result<DistributedResult<f64>> {
    let init = moment_init(&MomentStats::from_data(x), rules, seed)?;
    let res = kmeans_from(x, init, config.admm_max_iters)?;
    let (s, n) = cluster_stds(x, &res.assignment, res.centers.view());
    let pooled = pooled_std(&[s], &[n], config.pool_denominator, width_floor(x).view())?;
    Ok(DistributedResult {
        centers: res.centers,
        widths: pooled.widths,
        rounds: res.iterations,
        converged: res.iterations < config.admm_max_iters,
        history: Vec::<RoundStats<f64>>::new(),
        empty_clusters: pooled.empty_clusters,
    })
}

/// Normalizes, partitions and clusters the training rows, then builds the
/// design matrices.
pub fn fit_stage1(x: ArrayView2<'_, f64>, config: &ExperimentConfig) -> Result<Stage1Fit> {
    config.validate()?;
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::Config("no training samples".into()));
    }
    let normalization = NormalizationStats::fit(x)?;
    let xn = normalization.apply(x)?;
    let groups = feature_groups(config, d)?;
    let plan = PartitionPlan {
        feature_groups: groups.clone(),
        agent_assignment: crate::data::distribute_samples(
            n,
            config.agents,
            derive_seed(config.seed, PARTITION_STREAM, 0),
        )?,
        agents: config.agents,
        seed: config.seed,
    };
    let branch_x: Vec<Array2<f64>> = groups.iter().map(|g| xn.select(Axis(1), g)).collect();
    let b_count = groups.len();

    let (clustering, transcript) = match config.clustering {
        ClusteringMode::Distributed => {
            let shards = plan.shards();
            let local: Vec<Vec<Array2<f64>>> = branch_x
                .iter()
                .map(|xb| shards.iter().map(|rows| xb.select(Axis(0), rows)).collect())
                .collect();
            let agent_shards: Vec<Vec<AgentShard<'_, f64>>> = local
                .iter()
                .map(|per_agent| {
                    per_agent
                        .iter()
                        .enumerate()
                        .map(|(l, x)| AgentShard { agent_id: l, x: x.view() })
                        .collect()
                })
                .collect();
            let params = (0..b_count)
                .map(|b| {
                    config.admm_params(
                        config.rules_for(b, b_count)?,
                        width_floor(branch_x[b].view()),
                        branch_seed(config.seed, b),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let out = run_stage1(&agent_shards, &params)?;
            (out.branches, Some(out.transcript))
        }
        ClusteringMode::Centralized => {
            let res = (0..b_count)
                .map(|b| {
                    centralized_branch(
                        branch_x[b].view(),
                        config,
                        config.rules_for(b, b_count)?,
                        branch_seed(config.seed, b),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (res, None)
        }
    };
    for (b, c) in clustering.iter().enumerate() {
        info!(
            "branch {b}: {} rules, {} rounds, converged = {}, empty clusters = {:?}",
            c.centers.nrows(),
            c.rounds,
            c.converged,
            c.empty_clusters
        );
    }
    let banks = clustering
        .iter()
        .enumerate()
        .map(|(b, c)| RuleBank::new(b, c.centers.clone(), c.widths.clone()))
        .collect::<Result<Vec<_>>>()?;
    let blocks = branch_x
        .iter()
        .zip(&banks)
        .map(|(xb, bank)| Ok(build_design_matrix(xb.view(), bank)?.into_inner()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Stage1Fit {
        normalization,
        plan,
        banks,
        clustering,
        transcript,
        blocks,
    })
}

/// Fits every output head on the cached design matrices.
pub fn fit_heads(
    stage1: &Stage1Fit,
    targets: &[Array1<f64>],
    ao: &AoConfig<f64>,
    seed: u64,
) -> Result<Vec<Stage2Outcome<f64>>> {
    let blocks = stage1.block_views();
    targets
        .iter()
        .enumerate()
        .map(|(h, y)| {
            let out = run_stage2(&blocks, y.view(), ao, derive_seed(seed, HEAD_STREAM, h as u64))?;
            debug!(
                "head {h}: objective {:?} after {} iterations",
                out.objective_history.last(),
                out.iterations
            );
            Ok(out)
        })
        .collect()
}

/// Assembles a model from the two stages.
pub fn assemble(
    stage1: &Stage1Fit,
    heads: &[Stage2Outcome<f64>],
    labels: LabelEncoding,
    feature_names: Vec<String>,
    config: &ExperimentConfig,
) -> Result<HfnnModel<f64>> {
    let model = HfnnModel {
        feature_names,
        normalization: stage1.normalization.clone(),
        branches: stage1
            .plan
            .feature_groups
            .iter()
            .zip(&stage1.banks)
            .map(|(g, bank)| Branch {
                features: g.clone(),
                bank: bank.clone(),
            })
            .collect(),
        heads: heads.iter().map(|h| h.weights.clone()).collect(),
        labels,
        config: config.clone(),
    };
    model.validate()?;
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: HfnnModel<f64>,
    pub stage1: Stage1Fit,
    pub heads: Vec<Stage2Outcome<f64>>,
}

impl TrainOutput {
    pub fn transcript(&self) -> Option<&Transcript<f64>> {
        self.stage1.transcript.as_ref()
    }
}

/// Full two-stage training on one split.
pub fn train(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    feature_names: Vec<String>,
    config: &ExperimentConfig,
) -> Result<TrainOutput> {
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    let labels = LabelEncoding::from_targets(config.task, y)?;
    let targets = labels.encode(y)?;
    let stage1 = fit_stage1(x, config)?;
    let heads = fit_heads(&stage1, &targets, &config.ao_config()?, config.seed)?;
    let model = assemble(&stage1, &heads, labels, feature_names, config)?;
    Ok(TrainOutput { model, stage1, heads })
}
