//! Message-passing simulation of the consensus clustering stage.
//!
//! A coordinator and `L` agents exchange [`RoundMessage`] values over a
//! [`Transport`]. Agents own their samples, local centers and duals; the
//! coordinator only ever sees aggregate statistics. Every message is logged
//! to a [`Transcript`], which [`replay`] can re-run without any sample data
//! and [`privacy_audit`] can inspect field by field.

mod agent;
mod audit;
mod coordinator;
mod message;
mod replay;
mod transcript;

pub use agent::{Agent, AgentShard};
pub use audit::{privacy_audit, privacy_audit_json, AuditReport, RoundPayload};
pub use coordinator::{run_branch, run_stage1, BranchOutcome, Stage1Output};
pub use message::{MessageKind, Payload, RoundMessage, SetupInfo};
pub use replay::{replay, ReplayedBranch};
pub use transcript::{InProcessTransport, Transcript, Transport};
