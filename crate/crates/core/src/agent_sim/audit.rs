use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use super::transcript::Transcript;
use crate::{Result, Scalar};

/// Payload fields each message kind may carry. All are aggregates or
/// protocol parameters.
const ALLOWED: &[(&str, &[&str])] = &[
    (
        "Setup",
        &[
            "agents",
            "rules",
            "dim",
            "rho",
            "eps_primal",
            "eps_dual",
            "max_iters",
            "seed",
            "m_update",
            "pool_denominator",
            "width_floor",
        ],
    ),
    ("Moments", &["count", "sum", "sum_sq"]),
    ("LocalCenters", &["contributions", "counts"]),
    ("GlobalBroadcast", &["centers"]),
    ("DualAck", &["primal_residual", "dual_residual", "reassigned"]),
    ("Finalize", &["converged", "rounds"]),
    ("LocalWidths", &["widths", "counts"]),
];

/// Field names that denote sample-level data.
const RAW: &[&str] = &["x", "row", "rows", "sample", "samples", "data", "raw", "features", "inputs", "targets"];

/// Uplink volume of the local-center exchange in one round of one branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundPayload {
    pub branch: usize,
    pub round: usize,
    pub agents: usize,
    /// Reals sent: every contribution entry plus every count.
    pub reals: usize,
    /// `L·K·(d+1)` from the branch setup, when the setup was seen.
    pub expected: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub messages: usize,
    /// Payload fields whose name marks them as sample-level data.
    pub raw_sample_fields: usize,
    /// Payload fields outside the schema for their kind, as `kind.field`.
    pub unknown_fields: Vec<String>,
    pub rounds: Vec<RoundPayload>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.raw_sample_fields == 0 && self.unknown_fields.is_empty()
    }

    pub fn sizes_match(&self) -> bool {
        self.rounds.iter().all(|r| r.expected == Some(r.reals))
    }
}

fn count_reals(v: &Value) -> usize {
    match v {
        Value::Array(items) => items.iter().map(count_reals).sum(),
        Value::Number(_) => 1,
        _ => 0,
    }
}

/// Audits transcript lines in their wire form.
pub fn privacy_audit_json(lines: &[Value]) -> AuditReport {
    let mut report = AuditReport {
        messages: lines.len(),
        ..Default::default()
    };
    let mut expected: BTreeMap<usize, usize> = BTreeMap::new();
    let mut volume: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for line in lines {
        let kind = line.get("kind").and_then(Value::as_str).unwrap_or("?");
        let b = line.get("b").and_then(Value::as_u64).unwrap_or(0) as usize;
        let t = line.get("t").and_then(Value::as_u64).unwrap_or(0) as usize;
        let allowed = ALLOWED.iter().find(|(k, _)| *k == kind).map_or(&[][..], |(_, f)| *f);
        let payload = line.get("payload").and_then(Value::as_object);
        for (field, value) in payload.into_iter().flatten() {
            if RAW.contains(&field.as_str()) {
                report.raw_sample_fields += 1;
            }
            if !allowed.contains(&field.as_str()) {
                report.unknown_fields.push(format!("{kind}.{field}"));
            }
            if kind == "LocalCenters" {
                let entry = volume.entry((b, t)).or_default();
                entry.1 += count_reals(value);
            }
        }
        match kind {
            "LocalCenters" => volume.entry((b, t)).or_default().0 += 1,
            "Setup" => {
                let p = payload.cloned().unwrap_or_default();
                let get = |f: &str| p.get(f).and_then(Value::as_u64).unwrap_or(0) as usize;
                expected.insert(b, get("agents") * get("rules") * (get("dim") + 1));
            }
            _ => {}
        }
    }
    report.rounds = volume
        .into_iter()
        .map(|((branch, round), (agents, reals))| RoundPayload {
            branch,
            round,
            agents,
            reals,
            expected: expected.get(&branch).copied(),
        })
        .collect();
    report
}

/// Audits a transcript through its serialized form, so the check sees
/// exactly the fields that would go on the wire.
pub fn privacy_audit<T: Scalar>(transcript: &Transcript<T>) -> Result<AuditReport> {
    let lines = transcript
        .messages
        .iter()
        .map(serde_json::to_value)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(privacy_audit_json(&lines))
}
