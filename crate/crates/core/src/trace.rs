//! Exportable record of how the AU graph evolved during one forward pass.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::sacl::{Phase, Snapshot};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "L")]
    pub l: Vec<usize>,
    pub metric: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSnapshot {
    pub stage: usize,
    pub block: usize,
    pub phase: Phase,
    /// `[src, dst]`: `dst` is one of the K neighbours of `src`.
    pub edges: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphTrace {
    pub config: TraceConfig,
    pub snapshots: Vec<TraceSnapshot>,
    pub node_labels: Vec<String>,
}

impl GraphTrace {
    /// Trace of sample `sample` within a batched forward pass.
    pub fn from_snapshots(cfg: &ModelConfig, snapshots: &[Snapshot], sample: usize, node_labels: Vec<String>) -> Result<Self> {
        let snapshots = snapshots
            .iter()
            .map(|s| {
                let g = s
                    .graphs
                    .get(sample)
                    .ok_or_else(|| CoreError::Argument(format!("sample {sample} not in batch")))?;
                Ok(TraceSnapshot {
                    stage: s.stage,
                    block: s.block,
                    phase: s.phase,
                    edges: g.edges(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: TraceConfig {
                k: cfg.k,
                s: cfg.stages,
                l: cfg.blocks.clone(),
                metric: cfg.metric.name().to_string(),
            },
            snapshots,
            node_labels,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialises")
    }

    /// Graphviz rendering of the final snapshot.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph au_graph {\n  node [shape=ellipse];\n");
        for (i, label) in self.node_labels.iter().enumerate() {
            let _ = writeln!(out, "  n{i} [label=\"{label}\"];");
        }
        if let Some(last) = self.snapshots.last() {
            for [a, b] in &last.edges {
                let _ = writeln!(out, "  n{a} -> n{b};");
            }
        }
        out.push_str("}\n");
        out
    }
}
