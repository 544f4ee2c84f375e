//! Replica catalogue and best-replica selection.
//!
//! The catalogue maps a database name to the endpoints serving copies of
//! it. Latency figures come from on-demand probes (one `PING` round trip
//! per replica); costs are declared in the catalogue file:
//!
//! ```text
//! aldrich_300 10.0.0.5:5001 cost=0.5
//! aldrich_300 10.0.0.9:5001
//! ```

use super::client::{ping, CdbClientError, ClientConfig};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaInfo {
    pub endpoint: String,
    /// Declared G$ per request, if the catalogue prices this replica.
    pub declared_cost: Option<f64>,
    /// Most recent probe round trip in seconds.
    pub last_probe: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicaCatalogue {
    pub replicas: BTreeMap<String, Vec<ReplicaInfo>>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplicaError {
    #[error("line {line}: malformed catalogue entry: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate endpoint `{endpoint}` for database `{database}`")]
    DuplicateEndpoint { line: usize, database: String, endpoint: String },
    #[error("no replica registered for database `{0}`")]
    NoReplica(String),
    #[error("replica `{0}` has no probe data; ping it first")]
    MissingProbe(String),
    #[error("replica `{0}` has no declared cost")]
    MissingCost(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionPolicy {
    LowestLatency,
    LowestCost,
    /// `argmin alpha * norm_latency + (1 - alpha) * norm_cost`, each
    /// min-max normalized to [0, 1] across the candidates.
    Weighted(f64),
}

impl ReplicaCatalogue {
    pub fn parse(text: &str) -> Result<Self, ReplicaError> {
        let mut cat = ReplicaCatalogue::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let database = fields
                .next()
                .ok_or_else(|| ReplicaError::Malformed {
                    line: line_no,
                    reason: "missing database name".into(),
                })?
                .to_string();
            let endpoint = fields
                .next()
                .ok_or_else(|| ReplicaError::Malformed {
                    line: line_no,
                    reason: "missing endpoint".into(),
                })?
                .to_string();
            if !endpoint.contains(':') {
                return Err(ReplicaError::Malformed {
                    line: line_no,
                    reason: format!("endpoint `{}` is not host:port", endpoint),
                });
            }
            let mut declared_cost = None;
            for extra in fields {
                match extra.strip_prefix("cost=").map(str::parse::<f64>) {
                    Some(Ok(c)) => declared_cost = Some(c),
                    _ => {
                        return Err(ReplicaError::Malformed {
                            line: line_no,
                            reason: format!("unrecognized field `{}`", extra),
                        })
                    }
                }
            }
            let entry = cat.replicas.entry(database.clone()).or_default();
            if entry.iter().any(|r| r.endpoint == endpoint) {
                return Err(ReplicaError::DuplicateEndpoint { line: line_no, database, endpoint });
            }
            entry.push(ReplicaInfo { endpoint, declared_cost, last_probe: None });
        }
        Ok(cat)
    }

    pub fn register(&mut self, database: &str, info: ReplicaInfo) {
        self.replicas.entry(database.to_string()).or_default().push(info);
    }

    pub fn replicas(&self, database: &str) -> Option<&[ReplicaInfo]> {
        self.replicas.get(database).map(|v| v.as_slice())
    }

    /// Ping every replica of `database` once, recording round trips.
    pub fn probe(&mut self, database: &str, config: &ClientConfig) -> Result<(), CdbClientError> {
        if let Some(replicas) = self.replicas.get_mut(database) {
            for r in replicas {
                r.last_probe = Some(ping(&r.endpoint, config)?);
            }
        }
        Ok(())
    }
}

/// Pick the best replica for `database` under `policy`. Ties break toward
/// the lexicographically smallest endpoint.
pub fn select_replica<'a>(
    catalogue: &'a ReplicaCatalogue,
    database: &str,
    policy: SelectionPolicy,
) -> Result<&'a ReplicaInfo, ReplicaError> {
    let replicas = catalogue
        .replicas(database)
        .filter(|r| !r.is_empty())
        .ok_or_else(|| ReplicaError::NoReplica(database.to_string()))?;
    if replicas.len() == 1 {
        return Ok(&replicas[0]);
    }

    let mut candidates: Vec<&ReplicaInfo> = replicas.iter().collect();
    candidates.sort_by(|a, b| a.endpoint.cmp(&b.endpoint));

    let (need_latency, need_cost) = match policy {
        SelectionPolicy::LowestLatency => (true, false),
        SelectionPolicy::LowestCost => (false, true),
        SelectionPolicy::Weighted(alpha) => (alpha > 0.0, alpha < 1.0),
    };
    for c in &candidates {
        if need_latency && c.last_probe.is_none() {
            return Err(ReplicaError::MissingProbe(c.endpoint.clone()));
        }
        if need_cost && c.declared_cost.is_none() {
            return Err(ReplicaError::MissingCost(c.endpoint.clone()));
        }
    }

    let latencies: Vec<f64> = candidates.iter().map(|c| c.last_probe.unwrap_or(0.0)).collect();
    let costs: Vec<f64> = candidates.iter().map(|c| c.declared_cost.unwrap_or(0.0)).collect();

    let score = |i: usize| -> f64 {
        match policy {
            SelectionPolicy::LowestLatency => latencies[i],
            SelectionPolicy::LowestCost => costs[i],
            SelectionPolicy::Weighted(alpha) => {
                let alpha = alpha.clamp(0.0, 1.0);
                let lat = if alpha > 0.0 { normalize(&latencies, i) } else { 0.0 };
                let cost = if alpha < 1.0 { normalize(&costs, i) } else { 0.0 };
                alpha * lat + (1.0 - alpha) * cost
            }
        }
    };

    let mut best = 0;
    for i in 1..candidates.len() {
        if score(i) < score(best) {
            best = i;
        }
    }
    Ok(candidates[best])
}

/// Min-max normalization of `values[i]` to [0, 1]; a flat series maps to 0.
fn normalize(values: &[f64], i: usize) -> f64 {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        (values[i] - min) / (max - min)
    } else {
        0.0
    }
}
