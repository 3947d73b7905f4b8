//! Discrete graphical models: variables, tabular factors, evidence and the
//! primal graph.

mod factor;
mod uai;

use std::collections::{BTreeMap, BTreeSet};

pub(crate) use factor::Walker;
pub use factor::{
    assignment_to_index, factor_product, factor_sum_out, index_to_assignment, projected_strides,
    strides, table_size, Assignment, Factor, VarId,
};
pub use uai::{parse_evidence, parse_uai, write_evidence, write_uai};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Bayes,
    Markov,
}

impl ModelKind {
    pub fn keyword(self) -> &'static str {
        match self {
            ModelKind::Bayes => "BAYES",
            ModelKind::Markov => "MARKOV",
        }
    }
}

/// A product of nonnegative tables over discrete variables.
///
/// Variables that have been observed keep their id and cardinality but no
/// longer appear in any factor scope; they are excluded from elimination.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cards: Vec<usize>,
    factors: Vec<Factor>,
    kind: ModelKind,
    observed: BTreeMap<VarId, usize>,
}

impl Model {
    pub fn new(cards: Vec<usize>, factors: Vec<Factor>, kind: ModelKind) -> Result<Self> {
        if let Some(v) = cards.iter().position(|&k| k == 0) {
            return Err(Error::Structure(format!("variable {v} has cardinality 0")));
        }
        for (i, f) in factors.iter().enumerate() {
            for (&v, &k) in f.scope().iter().zip(f.cards()) {
                let declared = *cards.get(v).ok_or_else(|| {
                    Error::Structure(format!("factor {i} references undeclared variable {v}"))
                })?;
                if declared != k {
                    return Err(Error::Structure(format!(
                        "factor {i} gives variable {v} cardinality {k}, declared {declared}"
                    )));
                }
            }
        }
        Ok(Model {
            cards,
            factors,
            kind,
            observed: BTreeMap::new(),
        })
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn card(&self, v: VarId) -> usize {
        self.cards[v]
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Evidence already absorbed into the factors.
    pub fn observed(&self) -> &BTreeMap<VarId, usize> {
        &self.observed
    }

    pub fn is_observed(&self, v: VarId) -> bool {
        self.observed.contains_key(&v)
    }

    /// Unobserved variables in id order.
    pub fn active_vars(&self) -> Vec<VarId> {
        (0..self.cards.len())
            .filter(|v| !self.is_observed(*v))
            .collect()
    }

    pub fn max_card(&self) -> usize {
        self.cards.iter().copied().max().unwrap_or(0)
    }

    /// Bytes taken by all factor tables at 8 bytes per entry.
    pub fn table_bytes(&self) -> u64 {
        self.factors.iter().map(|f| 8 * f.len() as u64).sum()
    }

    /// Conditions every factor on `e`. Observed variables drop out of all scopes.
    pub fn apply_evidence(&self, e: &Evidence) -> Result<Model> {
        e.check(self)?;
        let mut observed = self.observed.clone();
        for (&v, &x) in e.iter() {
            match observed.insert(v, x) {
                Some(old) if old != x => {
                    return Err(Error::Domain(format!(
                        "variable {v} already observed as {old}, not {x}"
                    )))
                }
                _ => {}
            }
        }
        let factors = self
            .factors
            .iter()
            .map(|f| {
                let mut g = f.clone();
                for (&v, &x) in e.iter() {
                    if g.contains(v) {
                        g = g.conditioned(v, x)?;
                    }
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            cards: self.cards.clone(),
            factors,
            kind: self.kind,
            observed,
        })
    }
}

/// Observed values keyed by variable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evidence(BTreeMap<VarId, usize>);

impl Evidence {
    pub fn new() -> Self {
        Evidence::default()
    }

    /// Builds evidence from `(variable, value)` pairs; a variable may appear once.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (VarId, usize)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (v, x) in pairs {
            if map.insert(v, x).is_some() {
                return Err(Error::Domain(format!("variable {v} observed twice")));
            }
        }
        Ok(Evidence(map))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VarId, &usize)> {
        self.0.iter()
    }

    pub fn get(&self, v: VarId) -> Option<usize> {
        self.0.get(&v).copied()
    }

    pub fn check(&self, model: &Model) -> Result<()> {
        for (&v, &x) in &self.0 {
            let k = *model
                .cards
                .get(v)
                .ok_or_else(|| Error::Domain(format!("evidence on undeclared variable {v}")))?;
            if x >= k {
                return Err(Error::Domain(format!(
                    "evidence value {x} out of range for variable {v} (cardinality {k})"
                )));
            }
        }
        Ok(())
    }
}

/// Undirected co-occurrence graph over the unobserved variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimalGraph {
    nodes: Vec<VarId>,
    adj: Vec<BTreeSet<VarId>>,
}

impl PrimalGraph {
    /// Graph over ids `0..n` with the given edges. Self-loops are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (VarId, VarId)>) -> Self {
        let mut g = PrimalGraph {
            nodes: (0..n).collect(),
            adj: vec![BTreeSet::new(); n],
        };
        for (a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    fn add_edge(&mut self, a: VarId, b: VarId) {
        if a != b {
            self.adj[a].insert(b);
            self.adj[b].insert(a);
        }
    }

    pub fn nodes(&self) -> &[VarId] {
        &self.nodes
    }

    /// Size of the id space (observed variables included).
    pub fn id_bound(&self) -> usize {
        self.adj.len()
    }

    pub fn contains(&self, v: VarId) -> bool {
        self.nodes.binary_search(&v).is_ok()
    }

    pub fn neighbors(&self, v: VarId) -> &BTreeSet<VarId> {
        &self.adj[v]
    }

    pub fn has_edge(&self, a: VarId, b: VarId) -> bool {
        self.adj[a].contains(&b)
    }

    pub fn edges(&self) -> impl Iterator<Item = (VarId, VarId)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<VarId>> {
        let mut seen = vec![false; self.adj.len()];
        let mut out = Vec::new();
        for &start in &self.nodes {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut i = 0;
            while i < comp.len() {
                for &w in &self.adj[comp[i]] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                    }
                }
                i += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

pub fn primal_graph(model: &Model) -> PrimalGraph {
    let mut g = PrimalGraph {
        nodes: model.active_vars(),
        adj: vec![BTreeSet::new(); model.num_vars()],
    };
    for f in &model.factors {
        let s = f.scope();
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                g.add_edge(s[i], s[j]);
            }
        }
    }
    g
}
