use serde::{Deserialize, Serialize};

use crate::clustering::{MUpdate, PoolDenominator};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Setup,
    Moments,
    LocalCenters,
    GlobalBroadcast,
    DualAck,
    Finalize,
    LocalWidths,
}

/// Parameters the coordinator announces before round 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SetupInfo<T> {
    pub agents: usize,
    pub rules: usize,
    pub dim: usize,
    pub rho: T,
    pub eps_primal: T,
    pub eps_dual: T,
    pub max_iters: usize,
    pub seed: u64,
    pub m_update: MUpdate,
    pub pool_denominator: PoolDenominator,
    pub width_floor: Vec<T>,
}

/// Message body. Matrices are `K` rows of branch-dimension vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", bound = "T: Scalar")]
pub enum Payload<T> {
    Setup(SetupInfo<T>),
    /// Per-feature count, sum and sum of squares of an agent's shard.
    Moments { count: usize, sum: Vec<T>, sum_sq: Vec<T> },
    /// `β + ρm` for every cluster, with member counts.
    LocalCenters { contributions: Vec<Vec<T>>, counts: Vec<usize> },
    GlobalBroadcast { centers: Vec<Vec<T>> },
    DualAck { primal_residual: T, dual_residual: T, reassigned: usize },
    Finalize { converged: bool, rounds: usize },
    /// Spread around the final global centers, with member counts.
    LocalWidths { widths: Vec<Vec<T>>, counts: Vec<usize> },
}

impl<T> Payload<T> {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Setup(_) => MessageKind::Setup,
            Payload::Moments { .. } => MessageKind::Moments,
            Payload::LocalCenters { .. } => MessageKind::LocalCenters,
            Payload::GlobalBroadcast { .. } => MessageKind::GlobalBroadcast,
            Payload::DualAck { .. } => MessageKind::DualAck,
            Payload::Finalize { .. } => MessageKind::Finalize,
            Payload::LocalWidths { .. } => MessageKind::LocalWidths,
        }
    }
}

/// One line of the transcript: `{kind, t, b, agent_id, payload}`.
/// `agent_id` is absent on coordinator messages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RoundMessage<T> {
    #[serde(flatten)]
    pub payload: Payload<T>,
    pub t: usize,
    pub b: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<usize>,
}

impl<T> RoundMessage<T> {
    pub fn from_agent(agent_id: usize, t: usize, b: usize, payload: Payload<T>) -> Self {
        Self {
            payload,
            t,
            b,
            agent_id: Some(agent_id),
        }
    }

    pub fn from_coordinator(t: usize, b: usize, payload: Payload<T>) -> Self {
        Self {
            payload,
            t,
            b,
            agent_id: None,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

pub(crate) fn rows_of<T: Scalar>(m: ndarray::ArrayView2<'_, T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn matrix_of<T: Scalar>(rows: &[Vec<T>], k: usize, d: usize) -> Option<ndarray::Array2<T>> {
    if rows.len() != k || rows.iter().any(|r| r.len() != d) {
        return None;
    }
    ndarray::Array2::from_shape_vec((k, d), rows.concat()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format_has_flat_kind_and_payload() {
        let msg: RoundMessage<f64> = RoundMessage::from_agent(
            2,
            7,
            1,
            Payload::LocalCenters {
                contributions: vec![vec![0.1, 1.0 / 3.0]],
                counts: vec![4],
            },
        );
        let text = serde_json::to_string(&msg).unwrap();
        assert_eq!(
            text,
            r#"{"kind":"LocalCenters","payload":{"contributions":[[0.1,0.3333333333333333]],"counts":[4]},"t":7,"b":1,"agent_id":2}"#
        );
        let back: RoundMessage<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn broadcast_omits_agent() {
        let msg: RoundMessage<f64> =
            RoundMessage::from_coordinator(0, 0, Payload::GlobalBroadcast { centers: vec![vec![1e-300]] });
        let text = serde_json::to_string(&msg).unwrap();
        assert!(!text.contains("agent_id"));
        assert_eq!(serde_json::from_str::<RoundMessage<f64>>(&text).unwrap(), msg);
    }
}
