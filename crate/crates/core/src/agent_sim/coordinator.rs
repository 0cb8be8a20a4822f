use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use super::agent::{Agent, AgentShard};
use super::message::{matrix_of, rows_of, Payload, RoundMessage, SetupInfo};
use super::transcript::{InProcessTransport, Transcript, Transport};
use crate::clustering::{
    global_from_contributions, moment_init, pooled_std, validate_shards, AdmmParams, ConvergenceCriteria,
    DistributedResult, MomentStats, PooledWidths, RoundStats,
};
use crate::fnn::RuleBank;
use crate::{Error, Result, Scalar};

pub type BranchOutcome<T> = DistributedResult<T>;

#[derive(Clone, Debug)]
pub struct Stage1Output<T> {
    pub banks: Vec<RuleBank<T>>,
    pub branches: Vec<BranchOutcome<T>>,
    pub transcript: Transcript<T>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedTranscript(msg.into())
}

impl<T: Scalar> SetupInfo<T> {
    pub(crate) fn from_params(params: &AdmmParams<T>, agents: usize, dim: usize) -> Self {
        Self {
            agents,
            rules: params.rules,
            dim,
            rho: params.rho,
            eps_primal: params.criteria.eps_primal,
            eps_dual: params.criteria.eps_dual,
            max_iters: params.criteria.max_iters,
            seed: params.seed,
            m_update: params.m_update,
            pool_denominator: params.pool_denominator,
            width_floor: params.width_floor.to_vec(),
        }
    }

    pub(crate) fn criteria(&self) -> ConvergenceCriteria<T> {
        ConvergenceCriteria {
            eps_primal: self.eps_primal,
            eps_dual: self.eps_dual,
            max_iters: self.max_iters,
        }
    }
}

// Coordinator-side computations. Each takes the payloads of one barrier in
// agent order, so the live run and the replay share them.

pub(crate) fn initial_centers<T: Scalar>(setup: &SetupInfo<T>, moments: &[MomentStats<T>]) -> Result<Array2<T>> {
    moment_init(&MomentStats::combine(moments)?, setup.rules, setup.seed)
}

pub(crate) fn consensus<T: Scalar>(setup: &SetupInfo<T>, contributions: &[Array2<T>]) -> Result<Array2<T>> {
    let mut r = Array2::zeros((setup.rules, setup.dim));
    for c in 0..setup.rules {
        let row = global_from_contributions(contributions.iter().map(|m| m.row(c)), setup.rho)?;
        r.row_mut(c).assign(&row);
    }
    Ok(r)
}

/// Largest residuals over all agents and the total number of reassigned
/// samples.
pub(crate) fn round_stats<T: Scalar>(t: usize, acks: &[(T, T, usize)]) -> RoundStats<T> {
    RoundStats {
        round: t,
        primal: acks.iter().map(|a| a.0).fold(T::zero(), T::max),
        dual: acks.iter().map(|a| a.1).fold(T::zero(), T::max),
        reassigned: acks.iter().map(|a| a.2).sum(),
    }
}

pub(crate) fn should_stop<T: Scalar>(setup: &SetupInfo<T>, stats: &RoundStats<T>) -> bool {
    setup.criteria().met(stats.primal, stats.dual) && stats.reassigned == 0
}

pub(crate) fn pool<T: Scalar>(setup: &SetupInfo<T>, widths: &[Array2<T>], counts: &[Vec<usize>]) -> Result<PooledWidths<T>> {
    pooled_std(
        widths,
        counts,
        setup.pool_denominator,
        Array1::from(setup.width_floor.clone()).view(),
    )
}

pub(crate) fn moments_of<T: Scalar>(setup: &SetupInfo<T>, msg: &RoundMessage<T>) -> Result<MomentStats<T>> {
    match &msg.payload {
        Payload::Moments { count, sum, sum_sq } if sum.len() == setup.dim && sum_sq.len() == setup.dim => Ok(MomentStats {
            count: *count,
            sum: Array1::from(sum.clone()),
            sum_sq: Array1::from(sum_sq.clone()),
        }),
        _ => Err(malformed(format!("expected moments from agent {:?}", msg.agent_id))),
    }
}

pub(crate) fn contributions_of<T: Scalar>(setup: &SetupInfo<T>, msg: &RoundMessage<T>) -> Result<Array2<T>> {
    match &msg.payload {
        Payload::LocalCenters { contributions, counts } if counts.len() == setup.rules => {
            matrix_of(contributions, setup.rules, setup.dim)
                .ok_or_else(|| malformed(format!("local centers from agent {:?} have the wrong shape", msg.agent_id)))
        }
        _ => Err(malformed(format!("expected local centers from agent {:?}", msg.agent_id))),
    }
}

pub(crate) fn ack_of<T: Scalar>(msg: &RoundMessage<T>) -> Result<(T, T, usize)> {
    match msg.payload {
        Payload::DualAck {
            primal_residual,
            dual_residual,
            reassigned,
        } => Ok((primal_residual, dual_residual, reassigned)),
        _ => Err(malformed(format!("expected dual ack from agent {:?}", msg.agent_id))),
    }
}

pub(crate) fn widths_of<T: Scalar>(setup: &SetupInfo<T>, msg: &RoundMessage<T>) -> Result<(Array2<T>, Vec<usize>)> {
    match &msg.payload {
        Payload::LocalWidths { widths, counts } if counts.len() == setup.rules => {
            let w = matrix_of(widths, setup.rules, setup.dim)
                .ok_or_else(|| malformed(format!("widths from agent {:?} have the wrong shape", msg.agent_id)))?;
            Ok((w, counts.clone()))
        }
        _ => Err(malformed(format!("expected local widths from agent {:?}", msg.agent_id))),
    }
}

fn broadcast_centers<T: Scalar>(inbox: &[RoundMessage<T>]) -> Result<&[Vec<T>]> {
    match inbox {
        [RoundMessage {
            payload: Payload::GlobalBroadcast { centers },
            ..
        }] => Ok(centers),
        _ => Err(malformed("expected exactly one broadcast")),
    }
}

/// Consensus clustering of one branch, run as message exchange between a
/// coordinator and one agent per shard. Returns the outcome and every
/// message in send order.
pub fn run_branch<T: Scalar>(
    branch: usize,
    shards: &[AgentShard<'_, T>],
    params: &AdmmParams<T>,
) -> Result<(BranchOutcome<T>, Vec<RoundMessage<T>>)> {
    let views: Vec<ArrayView2<'_, T>> = shards.iter().map(|s| s.x).collect();
    let dim = validate_shards(&views)?;
    params.validate(dim)?;
    let setup = SetupInfo::from_params(params, shards.len(), dim);
    let mut agents = shards
        .iter()
        .map(|s| Agent::new(s, branch, params.rules, params.rho, params.m_update))
        .collect::<Result<Vec<_>>>()?;
    let mut net = InProcessTransport::new();
    let coordinator = |t, payload| RoundMessage::from_coordinator(t, branch, payload);

    net.send(coordinator(0, Payload::Setup(setup.clone())))?;
    net.receive_all();
    for a in &agents {
        net.send(a.moments())?;
    }
    let moments = net
        .receive_all()
        .iter()
        .map(|m| moments_of(&setup, m))
        .collect::<Result<Vec<_>>>()?;
    let r0 = initial_centers(&setup, &moments)?;
    net.send(coordinator(0, Payload::GlobalBroadcast { centers: rows_of(r0.view()) }))?;
    let inbox = net.receive_all();
    let centers = broadcast_centers(&inbox)?;
    for a in agents.iter_mut() {
        a.initialize(centers)?;
    }

    let mut global = r0;
    let mut history = Vec::new();
    let mut converged = false;
    let mut rounds = 0;
    for t in 1..=setup.max_iters {
        let local: Vec<RoundMessage<T>> = agents.par_iter_mut().map(|a| a.local_step(t)).collect();
        for m in local {
            net.send(m)?;
        }
        let contributions = net
            .receive_all()
            .iter()
            .map(|m| contributions_of(&setup, m))
            .collect::<Result<Vec<_>>>()?;
        global = consensus(&setup, &contributions)?;
        net.send(coordinator(t, Payload::GlobalBroadcast { centers: rows_of(global.view()) }))?;
        let inbox = net.receive_all();
        let centers = broadcast_centers(&inbox)?;
        let acks = agents
            .par_iter_mut()
            .map(|a| a.dual_step(t, centers))
            .collect::<Result<Vec<_>>>()?;
        for m in acks {
            net.send(m)?;
        }
        let acks = net.receive_all().iter().map(ack_of).collect::<Result<Vec<_>>>()?;
        let stats = round_stats(t, &acks);
        history.push(stats);
        rounds = t;
        if should_stop(&setup, &stats) {
            converged = true;
            break;
        }
    }

    net.send(coordinator(rounds, Payload::Finalize { converged, rounds }))?;
    net.receive_all();
    for a in &agents {
        net.send(a.widths(rounds)?)?;
    }
    let (widths, counts): (Vec<_>, Vec<_>) = net
        .receive_all()
        .iter()
        .map(|m| widths_of(&setup, m))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let pooled = pool(&setup, &widths, &counts)?;
    let outcome = DistributedResult {
        centers: global,
        widths: pooled.widths,
        rounds,
        converged,
        history,
        empty_clusters: pooled.empty_clusters,
    };
    Ok((outcome, net.into_log()))
}

/// Runs every branch (concurrently) and concatenates the transcripts in
/// branch order.
pub fn run_stage1<T: Scalar>(branch_shards: &[Vec<AgentShard<'_, T>>], params: &[AdmmParams<T>]) -> Result<Stage1Output<T>> {
    if branch_shards.is_empty() {
        return Err(Error::Config("at least one branch is required".into()));
    }
    if branch_shards.len() != params.len() {
        return Err(Error::shape(format!(
            "{} branches but {} parameter sets",
            branch_shards.len(),
            params.len()
        )));
    }
    let runs = branch_shards
        .par_iter()
        .zip(params)
        .enumerate()
        .map(|(b, (shards, p))| run_branch(b, shards, p))
        .collect::<Vec<_>>();
    let mut banks = Vec::with_capacity(runs.len());
    let mut branches = Vec::with_capacity(runs.len());
    let mut messages = Vec::new();
    for (b, run) in runs.into_iter().enumerate() {
        let (outcome, log) = run?;
        banks.push(RuleBank::new(b, outcome.centers.clone(), outcome.widths.clone())?);
        branches.push(outcome);
        messages.extend(log);
    }
    Ok(Stage1Output {
        banks,
        branches,
        transcript: Transcript::new(messages),
    })
}
