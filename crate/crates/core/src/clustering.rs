//! Antecedent identification by K-means.
//!
//! Two routes compute rule centers: Lloyd's algorithm on pooled data
//! ([`kmeans_centralized`]) and a consensus K-means solved with ADMM over
//! agent shards. The ADMM route is exposed as per-vector update functions
//! (assignment, local center update, global consensus update, dual ascent,
//! convergence test) plus [`distributed_kmeans`], which runs those updates in
//! a single loop. The message-passing simulation in `agent_sim` executes the
//! very same updates split across agents and a coordinator.
//!
//! For each agent `l` and cluster `k` the augmented Lagrangian is
//!
//! ```text
//! ½ Σ_{x∈C_lk} ‖x − m_lk‖² + β_lkᵀ(m_lk − r_k) + ½ρ ‖m_lk − r_k‖²
//! ```

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// How an agent moves its local centers each round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MUpdate {
    /// Exact minimizer of the augmented Lagrangian in `m`.
    #[default]
    Exact,
    /// Plain cluster mean (the `ρ → 0` limit of `Exact`).
    Mean,
}

/// Denominator used when pooling per-agent widths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolDenominator {
    /// Samples in the cluster, summed over agents.
    #[default]
    Cluster,
    /// All samples held by all agents.
    All,
}

/// Cluster index of every sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment(Vec<usize>);

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for &c in &self.0 {
            counts[c] += 1;
        }
        counts
    }

    /// Number of samples whose cluster differs from `other`.
    pub fn changes_from(&self, other: &ClusterAssignment) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

#[inline]
fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Nearest center under Euclidean distance; ties go to the lowest index.
fn nearest<T: Scalar>(x: ArrayView1<'_, T>, centers: ArrayView2<'_, T>) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for (k, c) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Assigns every sample to its nearest center.
pub fn admm_assign<T: Scalar>(x: ArrayView2<'_, T>, centers: ArrayView2<'_, T>) -> ClusterAssignment {
    ClusterAssignment(x.rows().into_iter().map(|xi| nearest(xi, centers)).collect())
}

/// Per-cluster coordinate sums and member counts.
pub fn cluster_sums<T: Scalar>(
    x: ArrayView2<'_, T>,
    assignment: &ClusterAssignment,
    k: usize,
) -> (Array2<T>, Vec<usize>) {
    let mut sums = Array2::zeros((k, x.ncols()));
    let mut counts = vec![0; k];
    for (xi, &c) in x.rows().into_iter().zip(assignment.labels()) {
        let mut row = sums.row_mut(c);
        row += &xi;
        counts[c] += 1;
    }
    (sums, counts)
}

/// ½ Σ_k Σ_{x∈C_k} ‖x − m_k‖².
pub fn kmeans_objective<T: Scalar>(
    x: ArrayView2<'_, T>,
    centers: ArrayView2<'_, T>,
    assignment: &ClusterAssignment,
) -> T {
    let total: T = x
        .rows()
        .into_iter()
        .zip(assignment.labels())
        .map(|(xi, &c)| sq_dist(xi, centers.row(c)))
        .sum();
    total * T::lit(0.5)
}

/// Draws `k` samples with pairwise-distinct values, in seeded random order.
pub fn init_centers<T: Scalar>(x: ArrayView2<'_, T>, k: usize, seed: u64) -> Result<Array2<T>> {
    if k == 0 {
        return Err(Error::invalid("number of clusters must be at least 1"));
    }
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    for i in order {
        if picked.iter().all(|&p| x.row(p) != x.row(i)) {
            picked.push(i);
            if picked.len() == k {
                return Ok(x.select(Axis(0), &picked));
            }
        }
    }
    Err(Error::invalid(format!(
        "requested {k} clusters but the data has only {} distinct samples",
        picked.len()
    )))
}

/// Per-feature count, sum and sum of squares of a sample set. These are the
/// only statistics an agent discloses to seed the consensus centers.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentStats<T> {
    pub count: usize,
    pub sum: Array1<T>,
    pub sum_sq: Array1<T>,
}

impl<T: Scalar> MomentStats<T> {
    pub fn from_data(x: ArrayView2<'_, T>) -> Self {
        let mut sum = Array1::zeros(x.ncols());
        let mut sum_sq = Array1::zeros(x.ncols());
        for row in x.rows() {
            for ((s, q), &v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(row) {
                *s += v;
                *q += v * v;
            }
        }
        Self {
            count: x.nrows(),
            sum,
            sum_sq,
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.sum.len() != self.sum.len() {
            return Err(Error::shape("moment statistics differ in dimension"));
        }
        self.count += other.count;
        self.sum += &other.sum;
        self.sum_sq += &other.sum_sq;
        Ok(())
    }

    /// Combines per-agent statistics in the order given.
    pub fn combine<'a>(parts: impl IntoIterator<Item = &'a Self>) -> Result<Self>
    where
        T: 'a,
    {
        let mut iter = parts.into_iter();
        let mut total = iter
            .next()
            .ok_or_else(|| Error::invalid("no moment statistics to combine"))?
            .clone();
        for p in iter {
            total.merge(p)?;
        }
        Ok(total)
    }

    pub fn mean(&self) -> Array1<T> {
        let n = T::count(self.count.max(1));
        self.sum.mapv(|s| s / n)
    }

    /// Population standard deviation per feature.
    pub fn std(&self) -> Array1<T> {
        let n = T::count(self.count.max(1));
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&s, &q)| {
                let m = s / n;
                (q / n - m * m).max(T::zero()).sqrt()
            })
            .collect()
    }
}

/// Random initial centers `r_k ~ N(mean, diag(std²))` drawn from pooled
/// moment statistics.
pub fn moment_init<T: Scalar>(stats: &MomentStats<T>, k: usize, seed: u64) -> Result<Array2<T>> {
    if k == 0 {
        return Err(Error::invalid("number of clusters must be at least 1"));
    }
    if stats.count == 0 {
        return Err(Error::invalid("cannot initialize centers from zero samples"));
    }
    let mean = stats.mean();
    let std = stats.std();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Array2::zeros((k, mean.len()));
    for mut row in centers.rows_mut() {
        for ((c, &m), &s) in row.iter_mut().zip(&mean).zip(&std) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *c = m + s * T::lit(z);
        }
    }
    Ok(centers)
}

#[derive(Clone, Debug)]
pub struct KMeansResult<T> {
    pub centers: Array2<T>,
    pub assignment: ClusterAssignment,
    pub iterations: usize,
    /// Objective after initialization and after every Lloyd step.
    pub objective_history: Vec<T>,
}

/// Lloyd's algorithm from `k` distinct seeded samples, run until the
/// assignment is stable or `max_iters` updates have been made.
pub fn kmeans_centralized<T: Scalar>(
    x: ArrayView2<'_, T>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult<T>> {
    kmeans_from(x, init_centers(x, k, seed)?, max_iters)
}

/// Moves every empty cluster onto the sample farthest from its own updated
/// center. Ties go to the lowest row and a sample is used at most once.
fn reseed_empty<T: Scalar>(x: ArrayView2<'_, T>, centers: &mut Array2<T>, assignment: &ClusterAssignment, counts: &[usize]) {
    let mut taken: Vec<usize> = Vec::new();
    for c in (0..counts.len()).filter(|&c| counts[c] == 0) {
        let mut best: Option<(usize, T)> = None;
        for (i, (xi, &a)) in x.rows().into_iter().zip(assignment.labels()).enumerate() {
            if taken.contains(&i) {
                continue;
            }
            let d = sq_dist(xi, centers.row(a));
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            centers.row_mut(c).assign(&x.row(i));
            taken.push(i);
        }
    }
}

/// Lloyd's algorithm from the supplied centers. A cluster that loses all its
/// members is re-seeded at the sample farthest from its assigned center.
pub fn kmeans_from<T: Scalar>(x: ArrayView2<'_, T>, init: Array2<T>, max_iters: usize) -> Result<KMeansResult<T>> {
    if init.nrows() == 0 {
        return Err(Error::invalid("number of clusters must be at least 1"));
    }
    if init.ncols() != x.ncols() {
        return Err(Error::shape(format!(
            "centers have {} features, data has {}",
            init.ncols(),
            x.ncols()
        )));
    }
    let k = init.nrows();
    let mut centers = init;
    let mut assignment = admm_assign(x, centers.view());
    let mut objective_history = vec![kmeans_objective(x, centers.view(), &assignment)];
    let mut iterations = 0;
    while iterations < max_iters {
        let (sums, counts) = cluster_sums(x, &assignment, k);
        for c in 0..k {
            if counts[c] > 0 {
                let n = T::count(counts[c]);
                centers.row_mut(c).assign(&sums.row(c).mapv(|s| s / n));
            }
        }
        reseed_empty(x, &mut centers, &assignment, &counts);
        let next = admm_assign(x, centers.view());
        objective_history.push(kmeans_objective(x, centers.view(), &next));
        iterations += 1;
        let stable = next == assignment;
        assignment = next;
        if stable {
            break;
        }
    }
    Ok(KMeansResult {
        centers,
        assignment,
        iterations,
        objective_history,
    })
}

/// Per-feature spread of a cluster around a supplied center,
/// `σ_j = sqrt(mean_i (x_ij − c_j)²)`.
pub fn local_std<T: Scalar>(x_cluster: ArrayView2<'_, T>, center: ArrayView1<'_, T>) -> Result<Array1<T>> {
    if x_cluster.nrows() == 0 {
        return Err(Error::invalid("cannot take the spread of an empty cluster"));
    }
    if x_cluster.ncols() != center.len() {
        return Err(Error::shape(format!(
            "cluster has {} features, center has {}",
            x_cluster.ncols(),
            center.len()
        )));
    }
    let n = T::count(x_cluster.nrows());
    let mut acc = Array1::zeros(center.len());
    for xi in x_cluster.rows() {
        for ((a, &v), &c) in acc.iter_mut().zip(xi).zip(center) {
            *a += (v - c) * (v - c);
        }
    }
    Ok(acc.mapv(|s: T| (s / n).sqrt()))
}

/// Spread of every cluster around `centers`; empty clusters get zeros.
pub fn cluster_stds<T: Scalar>(
    x: ArrayView2<'_, T>,
    assignment: &ClusterAssignment,
    centers: ArrayView2<'_, T>,
) -> (Array2<T>, Vec<usize>) {
    let k = centers.nrows();
    let mut acc = Array2::zeros(centers.dim());
    let counts = assignment.counts(k);
    for (xi, &c) in x.rows().into_iter().zip(assignment.labels()) {
        for ((a, &v), &m) in acc.row_mut(c).iter_mut().zip(xi).zip(centers.row(c)) {
            *a += (v - m) * (v - m);
        }
    }
    for (mut row, &n) in acc.rows_mut().into_iter().zip(&counts) {
        if n > 0 {
            let n = T::count(n);
            row.mapv_inplace(|s: T| (s / n).sqrt());
        }
    }
    (acc, counts)
}

/// Minimizer of the augmented Lagrangian in one local center:
/// `m = (Σ_{x∈C} x − β + ρ r) / (|C| + ρ)`.
pub fn admm_local_m_update<T: Scalar>(
    cluster_sum: ArrayView1<'_, T>,
    cluster_count: usize,
    beta: ArrayView1<'_, T>,
    r: ArrayView1<'_, T>,
    rho: T,
) -> Array1<T> {
    let denom = T::count(cluster_count) + rho;
    cluster_sum
        .iter()
        .zip(beta)
        .zip(r)
        .map(|((&s, &b), &g)| (s - b + rho * g) / denom)
        .collect()
}

/// Local center update under the configured rule. The mean rule falls back to
/// the exact update for an empty cluster.
pub fn local_center_update<T: Scalar>(
    mode: MUpdate,
    cluster_sum: ArrayView1<'_, T>,
    cluster_count: usize,
    beta: ArrayView1<'_, T>,
    r: ArrayView1<'_, T>,
    rho: T,
) -> Array1<T> {
    match mode {
        MUpdate::Mean if cluster_count > 0 => {
            let n = T::count(cluster_count);
            cluster_sum.mapv(|s| s / n)
        }
        _ => admm_local_m_update(cluster_sum, cluster_count, beta, r, rho),
    }
}

/// An agent's share of the consensus update, `β + ρ m`.
pub fn dual_contribution<T: Scalar>(beta: ArrayView1<'_, T>, m: ArrayView1<'_, T>, rho: T) -> Array1<T> {
    beta.iter().zip(m).map(|(&b, &x)| b + rho * x).collect()
}

/// `r = (1/(Lρ)) Σ_l c_l`, summed in the order given.
pub fn global_from_contributions<'a, T: Scalar>(
    contributions: impl IntoIterator<Item = ArrayView1<'a, T>>,
    rho: T,
) -> Result<Array1<T>> {
    let mut iter = contributions.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::invalid("consensus update needs at least one agent"))?;
    let mut total = first.to_owned();
    let mut agents = 1usize;
    for c in iter {
        if c.len() != total.len() {
            return Err(Error::shape("agent contributions differ in dimension"));
        }
        total += &c;
        agents += 1;
    }
    let scale = T::one() / (T::count(agents) * rho);
    Ok(total.mapv(|s| s * scale))
}

/// Closed-form consensus update `r = (1/(Lρ)) Σ_l (β_l + ρ m_l)`.
pub fn admm_global_update<T: Scalar>(
    m_all: &[ArrayView1<'_, T>],
    beta_all: &[ArrayView1<'_, T>],
    rho: T,
) -> Result<Array1<T>> {
    if m_all.len() != beta_all.len() {
        return Err(Error::shape(format!(
            "{} local centers but {} dual variables",
            m_all.len(),
            beta_all.len()
        )));
    }
    let contributions: Vec<Array1<T>> = m_all
        .iter()
        .zip(beta_all)
        .map(|(m, b)| dual_contribution(b.view(), m.view(), rho))
        .collect();
    global_from_contributions(contributions.iter().map(|a| a.view()), rho)
}

/// Scaled dual ascent `β ← β + ρ (m − r)` for one (agent, cluster) pair.
pub fn admm_dual_update<T: Scalar>(
    beta: ArrayView1<'_, T>,
    m: ArrayView1<'_, T>,
    r: ArrayView1<'_, T>,
    rho: T,
) -> Array1<T> {
    beta.iter()
        .zip(m)
        .zip(r)
        .map(|((&b, &x), &g)| b + rho * (x - g))
        .collect()
}

/// max_k ‖m_k − r_k‖² for one agent.
pub fn primal_residual<T: Scalar>(m: ArrayView2<'_, T>, r: ArrayView2<'_, T>) -> T {
    m.rows()
        .into_iter()
        .zip(r.rows())
        .map(|(a, b)| sq_dist(a, b))
        .fold(T::zero(), T::max)
}

/// max_k ‖β_k(t+1) − β_k(t)‖² for one agent.
pub fn dual_residual<T: Scalar>(beta: ArrayView2<'_, T>, prev: ArrayView2<'_, T>) -> T {
    primal_residual(beta, prev)
}

/// Stopping tolerances of the consensus iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCriteria<T> {
    pub eps_primal: T,
    pub eps_dual: T,
    pub max_iters: usize,
}

impl<T: Scalar> ConvergenceCriteria<T> {
    pub fn new(eps_primal: T, eps_dual: T, max_iters: usize) -> Result<Self> {
        if !(eps_primal >= T::zero() && eps_dual >= T::zero()) {
            return Err(Error::invalid("convergence tolerances must be non-negative"));
        }
        Ok(Self {
            eps_primal,
            eps_dual,
            max_iters,
        })
    }

    pub fn met(&self, primal: T, dual: T) -> bool {
        primal <= self.eps_primal && dual <= self.eps_dual
    }
}

/// Consensus state for one branch: per-agent local centers and duals plus
/// the global centers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState<T> {
    pub local_centers: Vec<Array2<T>>,
    pub global_centers: Array2<T>,
    pub duals: Vec<Array2<T>>,
    pub rho: T,
    pub iteration: usize,
}

impl<T: Scalar> AdmmState<T> {
    /// `m(0) = r(0)`, `β(0) = 0`.
    pub fn new(initial_centers: Array2<T>, agents: usize, rho: T) -> Result<Self> {
        if agents == 0 {
            return Err(Error::invalid("at least one agent is required"));
        }
        if !(rho > T::zero() && rho.is_finite()) {
            return Err(Error::invalid(format!("penalty rho = {rho} must be finite and > 0")));
        }
        Ok(Self {
            local_centers: vec![initial_centers.clone(); agents],
            duals: vec![Array2::zeros(initial_centers.dim()); agents],
            global_centers: initial_centers,
            rho,
            iteration: 0,
        })
    }

    pub fn agents(&self) -> usize {
        self.local_centers.len()
    }

    /// Largest primal and dual residual over all (agent, cluster) pairs.
    pub fn residuals(&self, prev_duals: &[Array2<T>]) -> (T, T) {
        let primal = self
            .local_centers
            .iter()
            .map(|m| primal_residual(m.view(), self.global_centers.view()))
            .fold(T::zero(), T::max);
        let dual = self
            .duals
            .iter()
            .zip(prev_duals)
            .map(|(b, p)| dual_residual(b.view(), p.view()))
            .fold(T::zero(), T::max);
        (primal, dual)
    }
}

/// Both residual criteria hold for every (agent, cluster) pair.
pub fn check_convergence<T: Scalar>(
    state: &AdmmState<T>,
    prev_duals: &[Array2<T>],
    crit: &ConvergenceCriteria<T>,
) -> bool {
    let (primal, dual) = state.residuals(prev_duals);
    crit.met(primal, dual)
}

/// `1e-6 ×` the per-feature range of `x`; a constant feature uses unit range.
pub fn width_floor<T: Scalar>(x: ArrayView2<'_, T>) -> Array1<T> {
    let scale = T::lit(1e-6);
    x.columns()
        .into_iter()
        .map(|col| {
            let lo = col.iter().copied().fold(T::infinity(), T::min);
            let hi = col.iter().copied().fold(T::neg_infinity(), T::max);
            let range = hi - lo;
            if range > T::zero() && range.is_finite() {
                range * scale
            } else {
                scale
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledWidths<T> {
    pub widths: Array2<T>,
    /// Clusters that no agent populated; their widths are the floor.
    pub empty_clusters: Vec<usize>,
}

/// Count-weighted pooling of per-agent widths,
/// `σ̄_k = sqrt(Σ_l n_lk σ_lk² / D)`, floored per feature.
pub fn pooled_std<T: Scalar>(
    local_stds: &[Array2<T>],
    local_counts: &[Vec<usize>],
    denominator: PoolDenominator,
    floor: ArrayView1<'_, T>,
) -> Result<PooledWidths<T>> {
    let first = local_stds
        .first()
        .ok_or_else(|| Error::invalid("pooling needs at least one agent"))?;
    let (k, d) = first.dim();
    if local_counts.len() != local_stds.len() {
        return Err(Error::shape("one count vector per agent is required"));
    }
    if local_stds.iter().any(|s| s.dim() != (k, d)) || local_counts.iter().any(|c| c.len() != k) {
        return Err(Error::shape("per-agent widths and counts must share K and dimension"));
    }
    if floor.len() != d {
        return Err(Error::shape(format!("width floor has {} entries for {d} features", floor.len())));
    }
    let everyone: usize = local_counts.iter().flatten().sum();
    let mut widths = Array2::zeros((k, d));
    let mut empty_clusters = Vec::new();
    for c in 0..k {
        let members: usize = local_counts.iter().map(|n| n[c]).sum();
        if members == 0 {
            warn!("cluster {c} is empty on every agent; using the width floor");
            empty_clusters.push(c);
            widths.row_mut(c).assign(&floor);
            continue;
        }
        let denom = T::count(match denominator {
            PoolDenominator::Cluster => members,
            PoolDenominator::All => everyone,
        });
        for j in 0..d {
            let acc: T = local_stds
                .iter()
                .zip(local_counts)
                .map(|(s, n)| T::count(n[c]) * s[[c, j]] * s[[c, j]])
                .sum();
            widths[[c, j]] = (acc / denom).sqrt().max(floor[j]);
        }
    }
    Ok(PooledWidths {
        widths,
        empty_clusters,
    })
}

/// Parameters of one branch's consensus clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmParams<T> {
    pub rules: usize,
    pub rho: T,
    pub criteria: ConvergenceCriteria<T>,
    pub m_update: MUpdate,
    pub pool_denominator: PoolDenominator,
    pub width_floor: Array1<T>,
    pub seed: u64,
}

impl<T: Scalar> AdmmParams<T> {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.rules == 0 {
            return Err(Error::invalid("number of rules must be at least 1"));
        }
        if !(self.rho > T::zero() && self.rho.is_finite()) {
            return Err(Error::invalid(format!("penalty rho = {} must be finite and > 0", self.rho)));
        }
        if self.width_floor.len() != dim {
            return Err(Error::shape(format!(
                "width floor has {} entries for {dim} features",
                self.width_floor.len()
            )));
        }
        if self.criteria.max_iters == 0 {
            return Err(Error::invalid("at least one consensus round is required"));
        }
        Ok(())
    }
}

/// Residuals observed at the end of one consensus round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStats<T> {
    pub round: usize,
    pub primal: T,
    pub dual: T,
    pub reassigned: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributedResult<T> {
    pub centers: Array2<T>,
    pub widths: Array2<T>,
    pub rounds: usize,
    pub converged: bool,
    pub history: Vec<RoundStats<T>>,
    pub empty_clusters: Vec<usize>,
}

impl<T: Scalar> DistributedResult<T> {
    /// First round at which both residual criteria held.
    pub fn first_round_within(&self, crit: &ConvergenceCriteria<T>) -> Option<usize> {
        self.history.iter().find(|s| crit.met(s.primal, s.dual)).map(|s| s.round)
    }
}

pub(crate) fn validate_shards<T: Scalar>(shards: &[ArrayView2<'_, T>]) -> Result<usize> {
    let first = shards
        .first()
        .ok_or_else(|| Error::Config("at least one agent shard is required".into()))?;
    let dim = first.ncols();
    for (l, s) in shards.iter().enumerate() {
        if s.nrows() == 0 {
            return Err(Error::Config(format!("agent {l} holds no samples")));
        }
        if s.ncols() != dim {
            return Err(Error::shape(format!("agent {l} has {} features, expected {dim}", s.ncols())));
        }
    }
    Ok(dim)
}

/// Consensus K-means over agent shards, executed as one loop.
///
/// Each round: every agent assigns its samples to its local centers and
/// updates them; the global centers are recomputed from all agents in agent
/// order; every agent takes a dual step. Initial centers are drawn from the
/// pooled per-feature moments of all shards. The loop stops once both residual
/// criteria hold and no sample changed cluster, or after `max_iters` rounds.
/// Widths are pooled from each agent's spread around the final global centers.
pub fn distributed_kmeans<T: Scalar>(
    shards: &[ArrayView2<'_, T>],
    params: &AdmmParams<T>,
) -> Result<DistributedResult<T>> {
    let dim = validate_shards(shards)?;
    params.validate(dim)?;
    let k = params.rules;
    let rho = params.rho;
    let moments: Vec<_> = shards.iter().map(|x| MomentStats::from_data(*x)).collect();
    let r0 = moment_init(&MomentStats::combine(&moments)?, k, params.seed)?;
    let mut state = AdmmState::new(r0, shards.len(), rho)?;
    let mut assignments: Vec<Option<ClusterAssignment>> = vec![None; shards.len()];
    let mut history = Vec::new();
    let mut converged = false;

    for t in 1..=params.criteria.max_iters {
        let prev_duals = state.duals.clone();
        let mut reassigned = 0;
        for (l, x) in shards.iter().enumerate() {
            let assignment = admm_assign(*x, state.local_centers[l].view());
            reassigned += match &assignments[l] {
                Some(prev) => assignment.changes_from(prev),
                None => assignment.len(),
            };
            let (sums, counts) = cluster_sums(*x, &assignment, k);
            for c in 0..k {
                let m = local_center_update(
                    params.m_update,
                    sums.row(c),
                    counts[c],
                    state.duals[l].row(c),
                    state.global_centers.row(c),
                    rho,
                );
                state.local_centers[l].row_mut(c).assign(&m);
            }
            assignments[l] = Some(assignment);
        }
        for c in 0..k {
            let ms: Vec<_> = state.local_centers.iter().map(|m| m.row(c)).collect();
            let bs: Vec<_> = state.duals.iter().map(|b| b.row(c)).collect();
            let r = admm_global_update(&ms, &bs, rho)?;
            state.global_centers.row_mut(c).assign(&r);
        }
        for l in 0..shards.len() {
            for c in 0..k {
                let beta = admm_dual_update(
                    state.duals[l].row(c),
                    state.local_centers[l].row(c),
                    state.global_centers.row(c),
                    rho,
                );
                state.duals[l].row_mut(c).assign(&beta);
            }
        }
        state.iteration = t;
        let (primal, dual) = state.residuals(&prev_duals);
        history.push(RoundStats {
            round: t,
            primal,
            dual,
            reassigned,
        });
        if check_convergence(&state, &prev_duals, &params.criteria) && reassigned == 0 {
            converged = true;
            break;
        }
    }

    let mut stds = Vec::with_capacity(shards.len());
    let mut counts = Vec::with_capacity(shards.len());
    for (x, a) in shards.iter().zip(&assignments) {
        let a = a.as_ref().expect("at least one round has run");
        let (s, n) = cluster_stds(*x, a, state.global_centers.view());
        stds.push(s);
        counts.push(n);
    }
    let pooled = pooled_std(&stds, &counts, params.pool_denominator, params.width_floor.view())?;
    Ok(DistributedResult {
        centers: state.global_centers,
        widths: pooled.widths,
        rounds: state.iteration,
        converged,
        history,
        empty_clusters: pooled.empty_clusters,
    })
}
