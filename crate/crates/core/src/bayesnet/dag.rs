use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VIOLATED: &str = "violated";
pub const FULFILLED: &str = "fulfilled";
/// State index of `fulfilled` in every SLO indicator.
pub const FULFILLED_STATE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Parameter,
    SloIndicator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDef {
    pub name: String,
    pub kind: VarKind,
    pub states: Vec<String>,
}

impl VariableDef {
    pub fn parameter(name: impl Into<String>, states: Vec<String>) -> Self {
        VariableDef {
            name: name.into(),
            kind: VarKind::Parameter,
            states,
        }
    }

    pub fn slo(name: impl Into<String>) -> Self {
        VariableDef {
            name: name.into(),
            kind: VarKind::SloIndicator,
            states: vec![VIOLATED.into(), FULFILLED.into()],
        }
    }

    pub fn cardinality(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }
}

pub(crate) fn validate_variables(vars: &[VariableDef]) -> Result<()> {
    for (i, v) in vars.iter().enumerate() {
        let min = match v.kind {
            VarKind::Parameter => 1,
            VarKind::SloIndicator => 2,
        };
        if v.states.len() < min {
            return Err(Error::Schema(format!(
                "variable `{}` needs at least {min} states",
                v.name
            )));
        }
        if vars[..i].iter().any(|o| o.name == v.name) {
            return Err(Error::Schema(format!("duplicate variable `{}`", v.name)));
        }
    }
    Ok(())
}

/// Directed acyclic graph over the network variables. Edges never end in a
/// parameter node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    nodes: Vec<VariableDef>,
    edges: BTreeSet<(usize, usize)>,
}

impl Dag {
    pub fn empty(nodes: Vec<VariableDef>) -> Result<Self> {
        validate_variables(&nodes)?;
        Ok(Dag {
            nodes,
            edges: BTreeSet::new(),
        })
    }

    pub fn with_edges(nodes: Vec<VariableDef>, edges: &[(&str, &str)]) -> Result<Self> {
        let mut dag = Dag::empty(nodes)?;
        for (p, c) in edges {
            let pi = dag.require(p)?;
            let ci = dag.require(c)?;
            dag.add_edge(pi, ci)?;
        }
        Ok(dag)
    }

    pub fn nodes(&self) -> &[VariableDef] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown variable `{name}`")))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_names(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(p, c)| (self.nodes[p].name.clone(), self.nodes[c].name.clone()))
            .collect()
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.edges.contains(&(parent, child))
    }

    /// Parents of `node` in ascending index order.
    pub fn parents(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, c)| c == node)
            .map(|&(p, _)| p)
            .collect()
    }

    /// True if a directed path `from → ... → to` exists.
    pub fn has_path(&self, from: usize, to: usize) -> bool {
        let mut stack = vec![from];
        let mut seen = vec![false; self.nodes.len()];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(self.edges.iter().filter(|e| e.0 == n).map(|e| e.1));
        }
        false
    }

    pub fn add_edge(&mut self, parent: usize, child: usize) -> Result<()> {
        let n = self.nodes.len();
        if parent >= n || child >= n {
            return Err(Error::Schema("edge endpoint out of range".into()));
        }
        let (p, c) = (&self.nodes[parent].name, &self.nodes[child].name);
        if parent == child {
            return Err(Error::InvalidModel(format!("self-loop on `{p}`")));
        }
        if self.nodes[child].kind == VarKind::Parameter {
            return Err(Error::InvalidModel(format!(
                "edge {p} -> {c} ends in a parameter node"
            )));
        }
        if self.edges.contains(&(parent, child)) {
            return Err(Error::InvalidModel(format!("duplicate edge {p} -> {c}")));
        }
        if self.has_path(child, parent) {
            return Err(Error::InvalidModel(format!("edge {p} -> {c} closes a cycle")));
        }
        self.edges.insert((parent, child));
        Ok(())
    }

    pub fn remove_edge(&mut self, parent: usize, child: usize) -> bool {
        self.edges.remove(&(parent, child))
    }

    /// Nodes ordered so that every parent precedes its children; ties keep
    /// declaration order.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for &(_, c) in &self.edges {
            indegree[c] += 1;
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        while let Some(&next) = ready.iter().next() {
            ready.remove(&next);
            order.push(next);
            for &(p, c) in &self.edges {
                if p == next {
                    indegree[c] -= 1;
                    if indegree[c] == 0 {
                        ready.insert(c);
                    }
                }
            }
        }
        debug_assert_eq!(order.len(), n, "graph is acyclic by construction");
        order
    }

    /// Undirected edge set `{a, b}` with `a < b` by name.
    pub fn skeleton(&self) -> BTreeSet<(String, String)> {
        self.edge_names()
            .into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect()
    }

    /// Graphviz rendering, one line per edge.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph model {\n");
        for n in &self.nodes {
            let shape = match n.kind {
                VarKind::Parameter => "box",
                VarKind::SloIndicator => "ellipse",
            };
            let _ = writeln!(out, "  \"{}\" [shape={shape}];", n.name);
        }
        for (p, c) in self.edge_names() {
            let _ = writeln!(out, "  \"{p}\" -> \"{c}\";");
        }
        out.push_str("}\n");
        out
    }
}
