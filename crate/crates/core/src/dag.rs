//! Causal DAGs and the back-door adjustment check.
//!
//! [`CausalDag`] is a small (≤ 64 node) directed acyclic graph with latent
//! markers. [`CausalDag::backdoor_check`] decides whether an adjustment set
//! `Z` satisfies the back-door criterion for a treatment/outcome pair:
//!
//! 1. no node of `Z` is a descendant of the treatment, and
//! 2. `Z` blocks every path from treatment to outcome whose first edge
//!    points *into* the treatment (a non-collider blocks when it is in `Z`;
//!    a collider blocks unless it or one of its descendants is in `Z`).
//!
//! [`timeout_dag`] builds the identification structure of this analysis: a
//! timeout decision `A` and its short-term consequence `dpost` are jointly
//! driven by the observed pre-window run `dpre`, observed game context `X`,
//! and an unobservable form/fatigue state `U`. With `U` adjustable the set
//! `{U, X, dpre}` closes every back-door path; the observable subset
//! `{X, dpre}` provably does not, which is why the matched estimate is an
//! association under an explicit assumption rather than a free lunch.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalDag {
    names: Vec<String>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    latent: Vec<bool>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DagError {
    #[error("graphs are limited to 64 nodes")]
    NodeLimit,
    #[error("duplicate node name `{0}`")]
    DuplicateName(String),
    #[error("node index {0} out of range")]
    NodeOutOfRange(usize),
    #[error("self loops are not allowed")]
    SelfLoop,
    #[error("edge already present")]
    DuplicateEdge,
    #[error("graph contains a directed cycle")]
    Cyclic,
    #[error("treatment and outcome must differ")]
    SameEndpoints,
    #[error("adjustment set contains the treatment or outcome")]
    EndpointInAdjustment,
}

impl Default for CausalDag {
    fn default() -> Self {
        Self::new()
    }
}

impl CausalDag {
    pub fn new() -> Self {
        CausalDag { names: Vec::new(), parents: Vec::new(), children: Vec::new(), latent: Vec::new() }
    }

    pub fn add_node(&mut self, name: &str, latent: bool) -> Result<usize, DagError> {
        if self.names.len() >= 64 {
            return Err(DagError::NodeLimit);
        }
        if self.names.iter().any(|n| n == name) {
            return Err(DagError::DuplicateName(name.to_string()));
        }
        self.names.push(name.to_string());
        self.parents.push(Vec::new());
        self.children.push(Vec::new());
        self.latent.push(latent);
        Ok(self.names.len() - 1)
    }

    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<(), DagError> {
        let n = self.names.len();
        if from >= n {
            return Err(DagError::NodeOutOfRange(from));
        }
        if to >= n {
            return Err(DagError::NodeOutOfRange(to));
        }
        if from == to {
            return Err(DagError::SelfLoop);
        }
        if self.children[from].contains(&to) {
            return Err(DagError::DuplicateEdge);
        }
        self.children[from].push(to);
        self.parents[to].push(from);
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn node(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn is_latent(&self, v: usize) -> bool {
        self.latent[v]
    }

    /// Kahn topological check.
    pub fn assert_acyclic(&self) -> Result<(), DagError> {
        let n = self.names.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0usize;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if seen == n {
            Ok(())
        } else {
            Err(DagError::Cyclic)
        }
    }

    /// Bitmask of proper descendants of `v`.
    pub fn descendants(&self, v: usize) -> u64 {
        let mut mask = 0u64;
        let mut stack = self.children[v].clone();
        while let Some(u) = stack.pop() {
            if mask & (1 << u) == 0 {
                mask |= 1 << u;
                stack.extend_from_slice(&self.children[u]);
            }
        }
        mask
    }

    /// Depth-first search for an *open* (unblocked given `z_mask`) simple
    /// path continuing from intermediate node `u` toward `outcome`.
    /// `arrived_into` records whether the edge used to reach `u` points into
    /// it, which determines `u`'s collider status per outgoing branch.
    fn open_path_exists(
        &self,
        u: usize,
        arrived_into: bool,
        visited: u64,
        outcome: usize,
        z_mask: u64,
    ) -> bool {
        let in_z = z_mask & (1 << u) != 0;
        // Branch to parents: the next edge points into `u`.
        let collider_open = arrived_into && {
            let reach = self.descendants(u) | (1 << u);
            reach & z_mask != 0
        };
        let open_toward_parent = if arrived_into { collider_open } else { !in_z };
        if open_toward_parent {
            for &p in &self.parents[u] {
                if visited & (1 << p) != 0 {
                    continue;
                }
                if p == outcome
                    || self.open_path_exists(p, false, visited | (1 << p), outcome, z_mask)
                {
                    return true;
                }
            }
        }
        // Branch to children: the next edge leaves `u`, so `u` is a chain or
        // fork — never a collider.
        if !in_z {
            for &c in &self.children[u] {
                if visited & (1 << c) != 0 {
                    continue;
                }
                if c == outcome
                    || self.open_path_exists(c, true, visited | (1 << c), outcome, z_mask)
                {
                    return true;
                }
            }
        }
        false
    }

    /// Does `z` satisfy the back-door criterion for `treatment -> outcome`?
    pub fn backdoor_check(
        &self,
        treatment: usize,
        outcome: usize,
        z: &[usize],
    ) -> Result<bool, DagError> {
        let n = self.names.len();
        for &v in z.iter().chain([&treatment, &outcome]) {
            if v >= n {
                return Err(DagError::NodeOutOfRange(v));
            }
        }
        if treatment == outcome {
            return Err(DagError::SameEndpoints);
        }
        if z.contains(&treatment) || z.contains(&outcome) {
            return Err(DagError::EndpointInAdjustment);
        }
        self.assert_acyclic()?;

        let z_mask = z.iter().fold(0u64, |m, &v| m | (1 << v));
        if self.descendants(treatment) & z_mask != 0 {
            return Ok(false);
        }
        // Back-door paths start with an edge into the treatment.
        for &p in &self.parents[treatment] {
            if p == outcome {
                return Ok(false); // single-edge back-door path, unblockable
            }
            let visited = (1u64 << treatment) | (1 << p);
            if self.open_path_exists(p, false, visited, outcome, z_mask) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// The identification DAG for timeout effects.
///
/// Nodes: `A` (team timeout), `dpost` (post-window scoring drift), `dpre`
/// (pre-window run), `X` (observed game context), `U` (latent team state).
/// Edges: `dpre -> A`, `dpre -> dpost`, `X -> A`, `X -> dpost`, `U -> A`,
/// `U -> dpre`, `U -> dpost`, `A -> dpost`.
pub fn timeout_dag() -> CausalDag {
    let mut g = CausalDag::new();
    let a = g.add_node("A", false).unwrap();
    let x = g.add_node("X", false).unwrap();
    let u = g.add_node("U", true).unwrap();
    let dpre = g.add_node("dpre", false).unwrap();
    let dpost = g.add_node("dpost", false).unwrap();
    g.add_edge(dpre, a).unwrap();
    g.add_edge(dpre, dpost).unwrap();
    g.add_edge(x, a).unwrap();
    g.add_edge(x, dpost).unwrap();
    g.add_edge(u, a).unwrap();
    g.add_edge(u, dpre).unwrap();
    g.add_edge(u, dpost).unwrap();
    g.add_edge(a, dpost).unwrap();
    g
}
