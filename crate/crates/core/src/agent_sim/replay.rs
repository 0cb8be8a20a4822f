use std::cmp::Ordering;

use ndarray::Array2;

use super::coordinator::{
    ack_of, consensus, contributions_of, initial_centers, moments_of, pool, round_stats, should_stop, widths_of,
};
use super::message::{matrix_of, MessageKind, Payload, RoundMessage, SetupInfo};
use super::transcript::Transcript;
use crate::{Error, Result, Scalar};

/// Coordinator state recomputed from one branch's messages.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayedBranch<T> {
    pub branch: usize,
    pub centers: Array2<T>,
    pub widths: Array2<T>,
    pub rounds: usize,
    pub converged: bool,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedTranscript(msg.into())
}

struct Cursor<'a, T> {
    msgs: &'a [RoundMessage<T>],
    pos: usize,
    branch: usize,
}

impl<'a, T: Scalar> Cursor<'a, T> {
    fn peek(&self) -> Option<&'a RoundMessage<T>> {
        self.msgs.get(self.pos)
    }

    /// Next message, which must have the given kind, round, and sender.
    fn expect(&mut self, kind: MessageKind, t: usize, agent: Option<usize>) -> Result<&'a RoundMessage<T>> {
        let b = self.branch;
        let msg = self
            .peek()
            .ok_or_else(|| malformed(format!("branch {b}: transcript ends before {kind:?} of round {t}")))?;
        if msg.b != b {
            return Err(malformed(format!("branch {b}: found a branch {} message before {kind:?} of round {t}", msg.b)));
        }
        match msg.t.cmp(&t) {
            Ordering::Greater => {
                return Err(malformed(format!("branch {b}: gap before round {t} (next message is round {})", msg.t)))
            }
            Ordering::Less => {
                return Err(malformed(format!("branch {b}: duplicate or stale round {} while expecting round {t}", msg.t)))
            }
            Ordering::Equal => {}
        }
        if msg.kind() != kind || msg.agent_id != agent {
            return Err(malformed(format!(
                "branch {b}, round {t}: expected {kind:?} from {agent:?}, found {:?} from {:?}",
                msg.kind(),
                msg.agent_id
            )));
        }
        self.pos += 1;
        Ok(msg)
    }

    fn from_all_agents(&mut self, kind: MessageKind, t: usize, agents: usize) -> Result<Vec<&'a RoundMessage<T>>> {
        (0..agents).map(|l| self.expect(kind, t, Some(l))).collect()
    }
}

fn check_broadcast<T: Scalar>(msg: &RoundMessage<T>, expected: &Array2<T>) -> Result<()> {
    let logged = match &msg.payload {
        Payload::GlobalBroadcast { centers } => matrix_of(centers, expected.nrows(), expected.ncols()),
        _ => None,
    };
    match logged {
        Some(m) if m == *expected => Ok(()),
        _ => Err(malformed(format!(
            "branch {}, round {}: broadcast centers disagree with the agents' contributions",
            msg.b, msg.t
        ))),
    }
}

fn replay_branch<T: Scalar>(cur: &mut Cursor<'_, T>) -> Result<ReplayedBranch<T>> {
    let setup: SetupInfo<T> = match &cur.expect(MessageKind::Setup, 0, None)?.payload {
        Payload::Setup(s) => s.clone(),
        _ => unreachable!("kind checked"),
    };
    if setup.agents == 0 || setup.rules == 0 || setup.width_floor.len() != setup.dim {
        return Err(malformed(format!("branch {}: inconsistent setup", cur.branch)));
    }
    let moments = cur
        .from_all_agents(MessageKind::Moments, 0, setup.agents)?
        .into_iter()
        .map(|m| moments_of(&setup, m))
        .collect::<Result<Vec<_>>>()?;
    let mut centers = initial_centers(&setup, &moments)?;
    check_broadcast(cur.expect(MessageKind::GlobalBroadcast, 0, None)?, &centers)?;

    let mut t = 0;
    let mut converged = false;
    loop {
        if let Some(next) = cur.peek() {
            if next.b == cur.branch && next.kind() == MessageKind::Finalize {
                break;
            }
        }
        t += 1;
        if t > setup.max_iters {
            return Err(malformed(format!("branch {}: more rounds than max_iters", cur.branch)));
        }
        let contributions = cur
            .from_all_agents(MessageKind::LocalCenters, t, setup.agents)?
            .into_iter()
            .map(|m| contributions_of(&setup, m))
            .collect::<Result<Vec<_>>>()?;
        centers = consensus(&setup, &contributions)?;
        check_broadcast(cur.expect(MessageKind::GlobalBroadcast, t, None)?, &centers)?;
        let acks = cur
            .from_all_agents(MessageKind::DualAck, t, setup.agents)?
            .into_iter()
            .map(ack_of)
            .collect::<Result<Vec<_>>>()?;
        if should_stop(&setup, &round_stats(t, &acks)) {
            converged = true;
            break;
        }
    }
    if t == 0 {
        return Err(malformed(format!("branch {}: no consensus rounds", cur.branch)));
    }
    match cur.expect(MessageKind::Finalize, t, None)?.payload {
        Payload::Finalize {
            converged: logged,
            rounds,
        } if logged == converged && rounds == t => {}
        _ => {
            return Err(malformed(format!(
                "branch {}: final status disagrees with the logged residuals",
                cur.branch
            )))
        }
    }
    if !converged && t != setup.max_iters {
        return Err(malformed(format!("branch {}: stopped early without converging", cur.branch)));
    }
    let (widths, counts): (Vec<_>, Vec<_>) = cur
        .from_all_agents(MessageKind::LocalWidths, t, setup.agents)?
        .into_iter()
        .map(|m| widths_of(&setup, m))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let pooled = pool(&setup, &widths, &counts)?;
    Ok(ReplayedBranch {
        branch: cur.branch,
        centers,
        widths: pooled.widths,
        rounds: t,
        converged,
    })
}

/// Recomputes every branch's consensus centers and pooled widths from the
/// messages alone, checking that rounds are contiguous and complete.
pub fn replay<T: Scalar>(transcript: &Transcript<T>) -> Result<Vec<ReplayedBranch<T>>> {
    if transcript.is_empty() {
        return Err(malformed("transcript is empty"));
    }
    let mut cur = Cursor {
        msgs: &transcript.messages,
        pos: 0,
        branch: 0,
    };
    let mut out = Vec::new();
    while cur.peek().is_some() {
        out.push(replay_branch(&mut cur)?);
        cur.branch += 1;
    }
    Ok(out)
}
