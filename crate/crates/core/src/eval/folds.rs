use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::FoldScheme;
use crate::{Error, Result};

/// Held-out index sets of a cross-validation run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub scheme: FoldScheme,
    pub test_folds: Vec<Vec<usize>>,
    /// Group label of each fold under the group scheme.
    pub fold_groups: Option<Vec<String>>,
    pub n_samples: usize,
    pub seed: u64,
}

impl FoldPlan {
    /// Seeded shuffle cut into `k` contiguous folds whose sizes differ by at
    /// most one. Each fold's indices are sorted.
    pub fn kfold(n_samples: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("k-fold needs at least 2 folds, got {k}")));
        }
        if k > n_samples {
            return Err(Error::Config(format!("{k} folds but only {n_samples} samples")));
        }
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let base = n_samples / k;
        let extra = n_samples % k;
        let mut pos = 0;
        let test_folds = (0..k)
            .map(|f| {
                let len = base + usize::from(f < extra);
                let mut fold = order[pos..pos + len].to_vec();
                fold.sort_unstable();
                pos += len;
                fold
            })
            .collect();
        Ok(Self {
            scheme: FoldScheme::Kfold { folds: k },
            test_folds,
            fold_groups: None,
            n_samples,
            seed,
        })
    }

    /// One fold per distinct group label, in order of first appearance.
    pub fn leave_one_group_out(groups: &[String]) -> Result<Self> {
        let mut labels: Vec<String> = Vec::new();
        let mut test_folds: Vec<Vec<usize>> = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            match labels.iter().position(|l| l == g) {
                Some(f) => test_folds[f].push(i),
                None => {
                    labels.push(g.clone());
                    test_folds.push(vec![i]);
                }
            }
        }
        if labels.len() < 2 {
            return Err(Error::Config(format!(
                "leave-one-group-out needs at least two groups, found {}",
                labels.len()
            )));
        }
        Ok(Self {
            scheme: FoldScheme::LeaveOneGroupOut,
            test_folds,
            fold_groups: Some(labels),
            n_samples: groups.len(),
            seed: 0,
        })
    }

    pub fn from_scheme(scheme: FoldScheme, n_samples: usize, groups: Option<&[String]>, seed: u64) -> Result<Self> {
        match scheme {
            FoldScheme::Kfold { folds } => Self::kfold(n_samples, folds, seed),
            FoldScheme::LeaveOneGroupOut => {
                let g = groups.ok_or_else(|| Error::Config("leave-one-group-out needs a group column".into()))?;
                Self::leave_one_group_out(g)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.test_folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test_folds.is_empty()
    }

    pub fn test_indices(&self, f: usize) -> &[usize] {
        &self.test_folds[f]
    }

    /// Complement of fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut held = vec![false; self.n_samples];
        for &i in &self.test_folds[f] {
            held[i] = true;
        }
        (0..self.n_samples).filter(|&i| !held[i]).collect()
    }
}
