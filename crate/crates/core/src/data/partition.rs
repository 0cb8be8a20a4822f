use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSplit {
    Explicit(Vec<Vec<usize>>),
    /// `B` contiguous groups; the first `n mod B` groups get one extra column.
    EqualChunks(usize),
}

/// Assigns every feature column to exactly one branch.
pub fn split_features(n_features: usize, spec: &FeatureSplit) -> Result<Vec<Vec<usize>>> {
    match spec {
        FeatureSplit::EqualChunks(b) => {
            let b = *b;
            if b == 0 || b > n_features {
                return Err(Error::Config(format!(
                    "cannot split {n_features} features into {b} non-empty groups"
                )));
            }
            let base = n_features / b;
            let extra = n_features % b;
            let mut start = 0;
            Ok((0..b)
                .map(|g| {
                    let len = base + usize::from(g < extra);
                    let group = (start..start + len).collect();
                    start += len;
                    group
                })
                .collect())
        }
        FeatureSplit::Explicit(groups) => {
            if groups.is_empty() {
                return Err(Error::Config("at least one feature group is required".into()));
            }
            let mut owner = vec![None; n_features];
            for (g, group) in groups.iter().enumerate() {
                if group.is_empty() {
                    return Err(Error::Config(format!("feature group {g} is empty")));
                }
                for &j in group {
                    let slot = owner.get_mut(j).ok_or_else(|| {
                        Error::Config(format!("feature index {j} in group {g} is out of range ({n_features} features)"))
                    })?;
                    if let Some(prev) = slot.replace(g) {
                        return Err(Error::Config(format!("feature {j} appears in groups {prev} and {g}")));
                    }
                }
            }
            if let Some(j) = owner.iter().position(Option::is_none) {
                return Err(Error::Config(format!("feature {j} is not assigned to any group")));
            }
            Ok(groups.clone())
        }
    }
}

/// Agent id of every sample: a seeded shuffle cut into `agents` contiguous
/// blocks whose sizes differ by at most one.
pub fn distribute_samples(n_samples: usize, agents: usize, seed: u64) -> Result<Vec<usize>> {
    if agents == 0 {
        return Err(Error::Config("at least one agent is required".into()));
    }
    if agents > n_samples {
        return Err(Error::Config(format!("{agents} agents but only {n_samples} samples")));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n_samples / agents;
    let extra = n_samples % agents;
    let mut assignment = vec![0; n_samples];
    let mut pos = 0;
    for l in 0..agents {
        let len = base + usize::from(l < extra);
        for &i in &order[pos..pos + len] {
            assignment[i] = l;
        }
        pos += len;
    }
    Ok(assignment)
}

/// Sample indices held by each agent, in ascending order.
pub fn shard_indices(assignment: &[usize], agents: usize) -> Vec<Vec<usize>> {
    let mut shards = vec![Vec::new(); agents];
    for (i, &l) in assignment.iter().enumerate() {
        shards[l].push(i);
    }
    shards
}

/// Feature groups per branch plus the agent holding each sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub feature_groups: Vec<Vec<usize>>,
    pub agent_assignment: Vec<usize>,
    pub agents: usize,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn new(n_features: usize, split: &FeatureSplit, n_samples: usize, agents: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            feature_groups: split_features(n_features, split)?,
            agent_assignment: distribute_samples(n_samples, agents, seed)?,
            agents,
            seed,
        })
    }

    pub fn branches(&self) -> usize {
        self.feature_groups.len()
    }

    pub fn shards(&self) -> Vec<Vec<usize>> {
        shard_indices(&self.agent_assignment, self.agents)
    }
}
