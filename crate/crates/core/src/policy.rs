use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-node control assignment of a stationary Markov policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyAssignment {
    /// Control index at each node.
    Precise(Vec<usize>),
    /// Probability weights over the control set at each node.
    Relaxed(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    assignment: PolicyAssignment,
    tag: String,
}

impl MarkovPolicy {
    pub fn precise(controls: Vec<usize>, tag: impl Into<String>) -> Self {
        Self {
            assignment: PolicyAssignment::Precise(controls),
            tag: tag.into(),
        }
    }

    pub fn constant(n_nodes: usize, control: usize) -> Self {
        Self::precise(vec![control; n_nodes], format!("constant {control}"))
    }

    pub fn relaxed(weights: Vec<Vec<f64>>, tag: impl Into<String>) -> Result<Self> {
        for (i, w) in weights.iter().enumerate() {
            let s: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("relaxed weights at node {i} must be a probability vector")));
            }
        }
        Ok(Self {
            assignment: PolicyAssignment::Relaxed(weights),
            tag: tag.into(),
        })
    }

    pub fn assignment(&self) -> &PolicyAssignment {
        &self.assignment
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn n_nodes(&self) -> usize {
        match &self.assignment {
            PolicyAssignment::Precise(v) => v.len(),
            PolicyAssignment::Relaxed(w) => w.len(),
        }
    }

    pub fn is_precise(&self) -> bool {
        matches!(self.assignment, PolicyAssignment::Precise(_))
    }

    /// Control index at `node` for precise policies.
    pub fn control_at(&self, node: usize) -> Option<usize> {
        match &self.assignment {
            PolicyAssignment::Precise(v) => v.get(node).copied(),
            PolicyAssignment::Relaxed(_) => None,
        }
    }

    pub fn precise_controls(&self) -> Option<&[usize]> {
        match &self.assignment {
            PolicyAssignment::Precise(v) => Some(v),
            PolicyAssignment::Relaxed(_) => None,
        }
    }

    /// Nonzero `(control, weight)` pairs at `node`.
    pub fn weights_at(&self, node: usize) -> Vec<(usize, f64)> {
        match &self.assignment {
            PolicyAssignment::Precise(v) => vec![(v[node], 1.0)],
            PolicyAssignment::Relaxed(w) => w[node]
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(k, &p)| (k, p))
                .collect(),
        }
    }

    /// Checks that the policy covers `n_nodes` nodes with valid control indices.
    pub fn validate(&self, n_nodes: usize, n_controls: usize) -> Result<()> {
        if self.n_nodes() != n_nodes {
            return Err(Error::invalid(format!(
                "policy '{}' defines {} nodes, grid has {n_nodes}",
                self.tag,
                self.n_nodes()
            )));
        }
        match &self.assignment {
            PolicyAssignment::Precise(v) => {
                if let Some((i, k)) = v.iter().enumerate().find(|(_, &k)| k >= n_controls) {
                    return Err(Error::invalid(format!("policy undefined at node {i}: control {k} out of range")));
                }
            }
            PolicyAssignment::Relaxed(w) => {
                if let Some(i) = w.iter().position(|row| row.len() != n_controls) {
                    return Err(Error::invalid(format!("relaxed policy undefined at node {i}")));
                }
            }
        }
        Ok(())
    }
}
