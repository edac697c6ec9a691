use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("invalid node count {n} for {kind} topology")]
    InvalidSize { kind: TopologyKind, n: usize },
    #[error("adjacency is not symmetric between {0} and {1}")]
    Asymmetric(usize, usize),
    #[error("parent relation is not a tree rooted at node 0 (node {0})")]
    NotATree(usize),
    #[error("node {0} is not adjacent to its parent")]
    ParentNotAdjacent(usize),
    #[error("unknown topology kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Line,
    Star,
    BinaryTree,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Line => "line",
            TopologyKind::Star => "star",
            TopologyKind::BinaryTree => "binary_tree",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "line" => Ok(Self::Line),
            "star" => Ok(Self::Star),
            "tree" | "binary_tree" | "binary-tree" => Ok(Self::BinaryTree),
            other => Err(TopologyError::UnknownKind(other.to_string())),
        }
    }
}

/// Logical reachability plus the routing tree toward the sink (node 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<bool>>,
    parent: Vec<Option<usize>>,
}

impl Topology {
    pub fn new(adjacency: Vec<Vec<bool>>, parent: Vec<Option<usize>>) -> Result<Self, TopologyError> {
        let n = adjacency.len();
        for (i, row) in adjacency.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                if adjacency.get(j).and_then(|r| r.get(i)) != Some(&a) {
                    return Err(TopologyError::Asymmetric(i, j));
                }
            }
        }
        if parent.len() != n || parent[0].is_some() {
            return Err(TopologyError::NotATree(0));
        }
        for i in 1..n {
            let p = parent[i].ok_or(TopologyError::NotATree(i))?;
            if p >= n {
                return Err(TopologyError::NotATree(i));
            }
            if !adjacency[i][p] {
                return Err(TopologyError::ParentNotAdjacent(i));
            }
            // walk up; a cycle never reaches the root
            let mut cur = i;
            for _ in 0..n {
                match parent[cur] {
                    Some(q) => cur = q,
                    None => break,
                }
            }
            if cur != 0 {
                return Err(TopologyError::NotATree(i));
            }
        }
        Ok(Self { adjacency, parent })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        a != b && self.adjacency[a][b]
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| self.adjacent(node, j))
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| self.parent[j] == Some(node))
    }

    pub fn is_coordinator(&self, node: usize) -> bool {
        self.children(node).next().is_some()
    }

    pub fn hops_to_sink(&self, node: usize) -> u32 {
        let mut hops = 0;
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            hops += 1;
            cur = p;
        }
        hops
    }

    pub fn depth(&self) -> u32 {
        (0..self.len()).map(|i| self.hops_to_sink(i)).max().unwrap_or(0)
    }

    /// One line per node: `id parent: p neighbors: a b c`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for i in 0..self.len() {
            let p = self.parent[i].map_or("-".to_string(), |p| p.to_string());
            let nb: Vec<String> = self.neighbors(i).map(|j| j.to_string()).collect();
            s.push_str(&format!("{i} parent: {p} neighbors: {}\n", nb.join(" ")));
        }
        s
    }
}

pub fn build_topology(kind: TopologyKind, n: usize) -> Result<Topology, TopologyError> {
    let valid = match kind {
        TopologyKind::Line | TopologyKind::Star => n >= 2,
        TopologyKind::BinaryTree => n >= 3 && (n + 1).is_power_of_two(),
    };
    if !valid {
        return Err(TopologyError::InvalidSize { kind, n });
    }
    let parent: Vec<Option<usize>> = (0..n)
        .map(|i| match (i, kind) {
            (0, _) => None,
            (_, TopologyKind::Line) => Some(i - 1),
            (_, TopologyKind::Star) => Some(0),
            (_, TopologyKind::BinaryTree) => Some((i - 1) / 2),
        })
        .collect();
    let mut adjacency = vec![vec![false; n]; n];
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            adjacency[i][p] = true;
            adjacency[p][i] = true;
        }
    }
    Topology::new(adjacency, parent)
}
