use ndarray::{Array2, ArrayView2};

use super::message::{matrix_of, rows_of, Payload, RoundMessage};
use crate::clustering::{
    admm_assign, admm_dual_update, cluster_stds, cluster_sums, dual_residual, dual_contribution,
    local_center_update, primal_residual, ClusterAssignment, MomentStats, MUpdate,
};
use crate::{Error, Result, Scalar};

/// Samples held by one agent, restricted to one branch's features.
#[derive(Clone, Debug)]
pub struct AgentShard<'a, T> {
    pub agent_id: usize,
    pub x: ArrayView2<'a, T>,
}

/// Agent-side consensus state. Samples, local centers and duals never leave
/// this struct except as aggregates inside messages.
#[derive(Debug)]
pub struct Agent<'a, T> {
    id: usize,
    branch: usize,
    x: ArrayView2<'a, T>,
    rules: usize,
    rho: T,
    mode: MUpdate,
    global: Array2<T>,
    m: Array2<T>,
    beta: Array2<T>,
    assignment: Option<ClusterAssignment>,
    reassigned: usize,
}

impl<'a, T: Scalar> Agent<'a, T> {
    pub fn new(shard: &AgentShard<'a, T>, branch: usize, rules: usize, rho: T, mode: MUpdate) -> Result<Self> {
        if shard.x.nrows() == 0 {
            return Err(Error::Config(format!(
                "agent {} holds no samples for branch {branch}",
                shard.agent_id
            )));
        }
        let d = shard.x.ncols();
        Ok(Self {
            id: shard.agent_id,
            branch,
            x: shard.x,
            rules,
            rho,
            mode,
            global: Array2::zeros((rules, d)),
            m: Array2::zeros((rules, d)),
            beta: Array2::zeros((rules, d)),
            assignment: None,
            reassigned: 0,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    fn send(&self, t: usize, payload: Payload<T>) -> RoundMessage<T> {
        RoundMessage::from_agent(self.id, t, self.branch, payload)
    }

    pub fn moments(&self) -> RoundMessage<T> {
        let s = MomentStats::from_data(self.x);
        self.send(
            0,
            Payload::Moments {
                count: s.count,
                sum: s.sum.to_vec(),
                sum_sq: s.sum_sq.to_vec(),
            },
        )
    }

    fn read_centers(&self, centers: &[Vec<T>]) -> Result<Array2<T>> {
        matrix_of(centers, self.rules, self.x.ncols())
            .ok_or_else(|| Error::MalformedTranscript("broadcast centers have the wrong shape".into()))
    }

    /// Adopts the initial consensus centers: `m(0) = r(0)`, `β(0) = 0`.
    pub fn initialize(&mut self, centers: &[Vec<T>]) -> Result<()> {
        self.global = self.read_centers(centers)?;
        self.m = self.global.clone();
        self.beta.fill(T::zero());
        Ok(())
    }

    /// Assignment against the local centers, then the local center update.
    pub fn local_step(&mut self, t: usize) -> RoundMessage<T> {
        let assignment = admm_assign(self.x, self.m.view());
        self.reassigned = match &self.assignment {
            Some(prev) => assignment.changes_from(prev),
            None => assignment.len(),
        };
        let (sums, counts) = cluster_sums(self.x, &assignment, self.rules);
        let mut contributions = Vec::with_capacity(self.rules);
        for c in 0..self.rules {
            let m = local_center_update(
                self.mode,
                sums.row(c),
                counts[c],
                self.beta.row(c),
                self.global.row(c),
                self.rho,
            );
            self.m.row_mut(c).assign(&m);
            contributions.push(dual_contribution(self.beta.row(c), self.m.row(c), self.rho).to_vec());
        }
        self.assignment = Some(assignment);
        self.send(t, Payload::LocalCenters { contributions, counts })
    }

    /// Dual ascent against the new consensus centers.
    pub fn dual_step(&mut self, t: usize, centers: &[Vec<T>]) -> Result<RoundMessage<T>> {
        self.global = self.read_centers(centers)?;
        let prev = self.beta.clone();
        for c in 0..self.rules {
            let b = admm_dual_update(self.beta.row(c), self.m.row(c), self.global.row(c), self.rho);
            self.beta.row_mut(c).assign(&b);
        }
        Ok(self.send(
            t,
            Payload::DualAck {
                primal_residual: primal_residual(self.m.view(), self.global.view()),
                dual_residual: dual_residual(self.beta.view(), prev.view()),
                reassigned: self.reassigned,
            },
        ))
    }

    /// Spread of the latest clusters around the final global centers.
    pub fn widths(&self, t: usize) -> Result<RoundMessage<T>> {
        let a = self
            .assignment
            .as_ref()
            .ok_or_else(|| Error::Unfinalized("no consensus round has run".into()))?;
        let (s, counts) = cluster_stds(self.x, a, self.global.view());
        Ok(self.send(
            t,
            Payload::LocalWidths {
                widths: rows_of(s.view()),
                counts,
            },
        ))
    }
}
