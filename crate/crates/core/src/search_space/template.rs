//! Cell hypergraph templates.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRole {
    Input,
    Intermediate,
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Extraction,
    Fusion,
    Pyramid,
}

/// Nodes and candidate-op edges of one searchable cell.
///
/// Extraction and fusion cells are densely connected: every intermediate
/// node has an edge from each earlier node, and the output node is the
/// channel concatenation of the intermediates (no edges). The pyramid
/// template is a cascade with one edge between consecutive levels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellTemplate {
    pub kind: CellKind,
    pub nodes: Vec<NodeRole>,
    pub edges: Vec<Edge>,
}

impl CellTemplate {
    fn dense(kind: CellKind, inputs: usize, intermediates: usize) -> Self {
        let mut nodes = vec![NodeRole::Input; inputs];
        nodes.extend(std::iter::repeat_n(NodeRole::Intermediate, intermediates));
        nodes.push(NodeRole::Output);
        let edges = (inputs..inputs + intermediates)
            .flat_map(|dst| (0..dst).map(move |src| Edge { src, dst }))
            .collect();
        CellTemplate { kind, nodes, edges }
    }

    pub fn extraction() -> Self {
        Self::dense(CellKind::Extraction, 2, 4)
    }

    pub fn fusion() -> Self {
        Self::dense(CellKind::Fusion, 3, 2)
    }

    pub fn pyramid() -> Self {
        let levels = 4;
        CellTemplate {
            kind: CellKind::Pyramid,
            nodes: (0..levels)
                .map(|i| if i == 0 { NodeRole::Input } else { NodeRole::Intermediate })
                .collect(),
            edges: (1..levels).map(|dst| Edge { src: dst - 1, dst }).collect(),
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.nodes.iter().filter(|r| **r == NodeRole::Input).count()
    }

    pub fn intermediates(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i] == NodeRole::Intermediate)
            .collect()
    }

    /// Edge indices ending at `dst`, ordered by source node.
    pub fn incoming(&self, dst: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].dst == dst).collect()
    }

    pub fn edge_index(&self, src: usize, dst: usize) -> Option<usize> {
        self.edges.iter().position(|e| e.src == src && e.dst == dst)
    }
}

/// The three templates searched jointly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Templates {
    pub extraction: CellTemplate,
    pub fusion: CellTemplate,
    pub pyramid: CellTemplate,
}

pub fn build_templates() -> Templates {
    Templates {
        extraction: CellTemplate::extraction(),
        fusion: CellTemplate::fusion(),
        pyramid: CellTemplate::pyramid(),
    }
}
