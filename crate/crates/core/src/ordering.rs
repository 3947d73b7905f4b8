//! Elimination orderings, induced width, and the bucket tree with its scope
//! ordering.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Factor, Model, PrimalGraph, VarId};

/// An ordering `d = X(1), ..., X(n)` of the graph's nodes together with its induced width.
/// Buckets are processed from the last variable to the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EliminationOrdering {
    order: Vec<VarId>,
    width: usize,
}

impl EliminationOrdering {
    /// Validates `order` against `g` and computes its induced width.
    pub fn new(g: &PrimalGraph, order: Vec<VarId>) -> Result<Self> {
        let width = induced_width(g, &order)?;
        Ok(EliminationOrdering { order, width })
    }

    pub fn order(&self) -> &[VarId] {
        &self.order
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

fn positions(g: &PrimalGraph, d: &[VarId]) -> Result<Vec<Option<usize>>> {
    let mut pos = vec![None; g.id_bound()];
    for (i, &v) in d.iter().enumerate() {
        if v >= g.id_bound() || !g.contains(v) {
            return Err(Error::Contract(format!(
                "ordering names unknown variable {v}"
            )));
        }
        if pos[v].replace(i).is_some() {
            return Err(Error::Contract(format!("ordering repeats variable {v}")));
        }
    }
    if d.len() != g.nodes().len() {
        return Err(Error::Contract(format!(
            "ordering covers {} of {} variables",
            d.len(),
            g.nodes().len()
        )));
    }
    Ok(pos)
}

/// For each position of `d`, the earlier neighbors of that node in the induced graph.
fn induced_earlier(g: &PrimalGraph, d: &[VarId]) -> Result<Vec<Vec<VarId>>> {
    let pos = positions(g, d)?;
    let mut adj: Vec<BTreeSet<VarId>> = (0..g.id_bound()).map(|v| g.neighbors(v).clone()).collect();
    let mut earlier = vec![Vec::new(); d.len()];
    for i in (0..d.len()).rev() {
        let v = d[i];
        let prev: Vec<VarId> = adj[v]
            .iter()
            .copied()
            .filter(|&u| pos[u].is_some_and(|p| p < i))
            .collect();
        for (a, &x) in prev.iter().enumerate() {
            for &y in &prev[a + 1..] {
                adj[x].insert(y);
                adj[y].insert(x);
            }
        }
        earlier[i] = prev;
    }
    Ok(earlier)
}

/// Induced width of `g` along `d`: nodes are processed from last to first and each
/// node's earlier neighbors are connected before moving on.
pub fn induced_width(g: &PrimalGraph, d: &[VarId]) -> Result<usize> {
    Ok(induced_earlier(g, d)?
        .iter()
        .map(Vec::len)
        .max()
        .unwrap_or(0))
}

/// Best of `restarts` randomized min-fill runs. Ties in fill count are broken
/// uniformly at random; each connected component is ordered on its own and the
/// component orderings are concatenated.
pub fn min_fill_ordering(g: &PrimalGraph, seed: u64, restarts: usize) -> EliminationOrdering {
    let comps = g.components();
    let mut best: Option<EliminationOrdering> = None;
    for r in 0..restarts.max(1) {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order = Vec::with_capacity(g.nodes().len());
        for comp in &comps {
            order.extend(min_fill_component(g, comp, &mut rng));
        }
        let width = induced_width(g, &order).expect("min-fill yields a permutation");
        if best.as_ref().is_none_or(|b| width < b.width) {
            best = Some(EliminationOrdering { order, width });
        }
    }
    best.expect("at least one restart")
}

fn fill_count(adj: &[BTreeSet<VarId>], v: VarId) -> usize {
    let ns: Vec<VarId> = adj[v].iter().copied().collect();
    let mut missing = 0;
    for (i, &a) in ns.iter().enumerate() {
        for &b in &ns[i + 1..] {
            if !adj[a].contains(&b) {
                missing += 1;
            }
        }
    }
    missing
}

/// Returns `d` for one component: the reverse of the min-fill elimination sequence.
fn min_fill_component(g: &PrimalGraph, comp: &[VarId], rng: &mut ChaCha8Rng) -> Vec<VarId> {
    let mut adj: Vec<BTreeSet<VarId>> = vec![BTreeSet::new(); g.id_bound()];
    for &v in comp {
        adj[v] = g.neighbors(v).clone();
    }
    let mut alive: Vec<VarId> = comp.to_vec();
    let mut score = vec![0usize; g.id_bound()];
    for &v in comp {
        score[v] = fill_count(&adj, v);
    }
    let mut elim = Vec::with_capacity(comp.len());
    while !alive.is_empty() {
        let min = alive.iter().map(|&v| score[v]).min().expect("nonempty");
        let ties: Vec<usize> = (0..alive.len())
            .filter(|&i| score[alive[i]] == min)
            .collect();
        let pick = *ties.choose(rng).expect("nonempty");
        let v = alive.swap_remove(pick);
        let ns: Vec<VarId> = adj[v].iter().copied().collect();
        for (i, &a) in ns.iter().enumerate() {
            for &b in &ns[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        for &a in &ns {
            adj[a].remove(&v);
        }
        adj[v].clear();
        let mut touched: BTreeSet<VarId> = ns.iter().copied().collect();
        for &a in &ns {
            touched.extend(adj[a].iter().copied());
        }
        for u in touched {
            score[u] = fill_count(&adj, u);
        }
        elim.push(v);
    }
    elim.reverse();
    elim
}

/// Reads an ordering file: one variable id per line, blank lines ignored.
pub fn parse_ordering(text: &str) -> Result<Vec<VarId>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<VarId>().map_err(|_| Error::Parse {
                line: i + 1,
                column: 1,
                message: format!("expected a variable id, found `{}`", l.trim()),
            })
        })
        .collect()
}

/// Ordering for a conditioned model from a user-supplied list; observed variables
/// in the list are skipped.
pub fn ordering_for_model(
    model: &Model,
    g: &PrimalGraph,
    list: &[VarId],
) -> Result<EliminationOrdering> {
    let order: Vec<VarId> = list
        .iter()
        .copied()
        .filter(|&v| !model.is_observed(v))
        .collect();
    EliminationOrdering::new(g, order)
}

/// Original factors grouped by the bucket of their latest variable under `d`.
#[derive(Debug, Clone)]
pub struct BucketPartition {
    /// Factors per position of `d`.
    pub buckets: Vec<Vec<Factor>>,
    /// Values of empty-scope factors (fully observed), multiplied into the result.
    pub constants: Vec<f64>,
}

pub fn build_buckets(model: &Model, d: &EliminationOrdering) -> Result<BucketPartition> {
    let mut pos = vec![None; model.num_vars()];
    for (i, &v) in d.order().iter().enumerate() {
        if v >= model.num_vars() || model.is_observed(v) {
            return Err(Error::Contract(format!(
                "ordering names inactive variable {v}"
            )));
        }
        pos[v] = Some(i);
    }
    let mut buckets = vec![Vec::new(); d.len()];
    let mut constants = Vec::new();
    for f in model.factors() {
        if f.scope().is_empty() {
            constants.push(f.table()[0]);
            continue;
        }
        let mut latest = 0;
        for &v in f.scope() {
            let p = pos[v].ok_or_else(|| {
                Error::Contract(format!("factor variable {v} missing from the ordering"))
            })?;
            latest = latest.max(p);
        }
        buckets[latest].push(f.clone());
    }
    Ok(BucketPartition { buckets, constants })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub var: VarId,
    pub parent: Option<VarId>,
    /// Child buckets in processing order (latest position first).
    pub children: Vec<VarId>,
    /// Original factors placed in this bucket.
    pub factors: Vec<Factor>,
    /// Scope of the function this bucket sends to its parent.
    pub out_scope: Vec<VarId>,
    pub depth: usize,
}

impl Bucket {
    /// Neighbor count in the bucket tree.
    pub fn degree(&self) -> usize {
        self.children.len() + usize::from(self.parent.is_some())
    }
}

/// One input function of a bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRef {
    /// Function produced by the child bucket of this variable.
    Message(VarId),
    /// Original factor, by index within the bucket.
    Original(usize),
}

/// An input function whose scope is not a prefix of its consumer's output scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gap {
    pub bucket: VarId,
    pub input: InputRef,
    /// Output-scope variables missing from the input that precede one of its variables.
    pub vars: Vec<VarId>,
}

/// The bucket tree over an elimination ordering. Disconnected models give a forest
/// with one root per component.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketTree {
    cards: Vec<usize>,
    order: Vec<VarId>,
    pos: Vec<Option<usize>>,
    buckets: Vec<Bucket>,
    constants: Vec<f64>,
    width: usize,
    scopes_ordered: bool,
}

/// Builds the bucket tree of `model` along `d`: each bucket's parent is its latest
/// earlier neighbor in the induced graph and its output scope is the set of its
/// earlier induced neighbors.
pub fn build_bucket_tree(model: &Model, d: &EliminationOrdering) -> Result<BucketTree> {
    let g = crate::model::primal_graph(model);
    let part = build_buckets(model, d)?;
    let earlier = induced_earlier(&g, d.order())?;
    let mut pos = vec![None; model.num_vars()];
    for (i, &v) in d.order().iter().enumerate() {
        pos[v] = Some(i);
    }
    let n = d.len();
    let mut buckets: Vec<Bucket> = Vec::with_capacity(n);
    for (i, factors) in part.buckets.into_iter().enumerate() {
        let mut out_scope = earlier[i].clone();
        out_scope.sort_unstable();
        let parent = earlier[i].iter().copied().max_by_key(|&u| pos[u]);
        let depth = parent.map_or(0, |p| buckets[pos[p].expect("earlier")].depth + 1);
        buckets.push(Bucket {
            var: d.order()[i],
            parent,
            children: Vec::new(),
            factors,
            out_scope,
            depth,
        });
    }
    for i in (0..n).rev() {
        if let Some(p) = buckets[i].parent {
            let v = buckets[i].var;
            buckets[pos[p].expect("in order")].children.push(v);
        }
    }
    Ok(BucketTree {
        cards: model.cards().to_vec(),
        order: d.order().to_vec(),
        pos,
        buckets,
        constants: part.constants,
        width: d.width(),
        scopes_ordered: false,
    })
}

impl BucketTree {
    pub fn order(&self) -> &[VarId] {
        &self.order
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    pub fn scopes_ordered(&self) -> bool {
        self.scopes_ordered
    }

    /// Position of `v` in the ordering, if it has a bucket.
    pub fn position(&self, v: VarId) -> Option<usize> {
        self.pos.get(v).copied().flatten()
    }

    pub fn bucket(&self, v: VarId) -> &Bucket {
        &self.buckets[self.position(v).expect("variable has a bucket")]
    }

    pub fn bucket_at(&self, pos: usize) -> &Bucket {
        &self.buckets[pos]
    }

    /// Buckets in ordering position.
    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    /// Root buckets in ordering position.
    pub fn roots(&self) -> impl Iterator<Item = &Bucket> {
        self.buckets.iter().filter(|b| b.parent.is_none())
    }

    /// Entries in the output table of `v`'s bucket; roots produce a scalar.
    pub fn out_size(&self, v: VarId) -> Result<u64> {
        self.bucket(v)
            .out_scope
            .iter()
            .try_fold(1u64, |acc, &u| acc.checked_mul(self.cards[u] as u64))
            .ok_or(Error::TableOverflow(self.bucket(v).out_scope.len()))
    }

    /// Scope of the combined function of `v`'s bucket: output scope then `v`.
    pub fn combined_scope(&self, v: VarId) -> Vec<VarId> {
        let mut s = self.bucket(v).out_scope.clone();
        s.push(v);
        s
    }

    /// Scope ordering: walk the tree breadth-first from the roots and, at each bucket,
    /// order every input scope (child outputs and original factors) so that the bucket
    /// variable comes last and the rest follow the bucket's own output scope.
    pub fn order_scopes(mut self) -> Result<Self> {
        let mut queue: VecDeque<usize> = (0..self.buckets.len())
            .filter(|&i| self.buckets[i].parent.is_none())
            .collect();
        for i in queue.iter() {
            self.buckets[*i].out_scope.clear();
        }
        while let Some(i) = queue.pop_front() {
            let x = self.buckets[i].var;
            let out = self.buckets[i].out_scope.clone();
            let rank = |v: VarId| out.iter().position(|&u| u == v);
            let arrange = |scope: &[VarId]| -> Result<Vec<VarId>> {
                let mut keyed = Vec::with_capacity(scope.len());
                for &v in scope.iter().filter(|&&v| v != x) {
                    let r = rank(v).ok_or_else(|| {
                        Error::Invariant(format!(
                            "variable {v} of an input to bucket {x} is not in its output scope"
                        ))
                    })?;
                    keyed.push((r, v));
                }
                keyed.sort_unstable();
                let mut s: Vec<VarId> = keyed.into_iter().map(|(_, v)| v).collect();
                s.push(x);
                Ok(s)
            };
            let factors = std::mem::take(&mut self.buckets[i].factors);
            let mut reordered = Vec::with_capacity(factors.len());
            for f in factors {
                let s = arrange(f.scope())?;
                reordered.push(f.reordered(&s)?);
            }
            self.buckets[i].factors = reordered;
            let children = self.buckets[i].children.clone();
            for c in children {
                let ci = self.position(c).expect("child in order");
                let s = arrange(&self.buckets[ci].out_scope)?;
                self.buckets[ci].out_scope = s;
                queue.push_back(ci);
            }
        }
        self.scopes_ordered = true;
        Ok(self)
    }

    /// Input functions of a bucket: original factors first, then child messages.
    pub fn inputs(&self, v: VarId) -> Vec<InputRef> {
        let b = self.bucket(v);
        (0..b.factors.len())
            .map(InputRef::Original)
            .chain(b.children.iter().map(|&c| InputRef::Message(c)))
            .collect()
    }

    /// Ordered scope of an input function of `v`'s bucket.
    pub fn input_scope(&self, v: VarId, input: InputRef) -> &[VarId] {
        match input {
            InputRef::Original(i) => self.bucket(v).factors[i].scope(),
            InputRef::Message(c) => &self.bucket(c).out_scope,
        }
    }

    /// Reports every child message whose access is not monotone with respect to its
    /// consumer's output enumeration. Original factors stay resident and are not
    /// checked. Requires ordered scopes.
    pub fn detect_gaps(&self) -> Vec<Gap> {
        let mut gaps = Vec::new();
        for b in &self.buckets {
            for &c in &b.children {
                let input = &self.bucket(c).out_scope;
                let prefix = &input[..input.len().saturating_sub(1)];
                let Some(last) = prefix
                    .iter()
                    .filter_map(|v| b.out_scope.iter().position(|u| u == v))
                    .max()
                else {
                    continue;
                };
                let vars: Vec<VarId> = b.out_scope[..last]
                    .iter()
                    .copied()
                    .filter(|v| !prefix.contains(v))
                    .collect();
                if !vars.is_empty() {
                    gaps.push(Gap {
                        bucket: b.var,
                        input: InputRef::Message(c),
                        vars,
                    });
                }
            }
        }
        gaps
    }

    /// Checks the ordered-scope invariants: every input of a bucket ends with the bucket
    /// variable and its other variables appear in the order of the bucket's output scope.
    pub fn check_scope_order(&self) -> Result<()> {
        for b in &self.buckets {
            for input in self.inputs(b.var) {
                let s = self.input_scope(b.var, input);
                if s.last() != Some(&b.var) {
                    return Err(Error::Invariant(format!(
                        "input {input:?} of bucket {} does not end with it",
                        b.var
                    )));
                }
                let ranks: Vec<Option<usize>> = s[..s.len() - 1]
                    .iter()
                    .map(|v| b.out_scope.iter().position(|u| u == v))
                    .collect();
                if ranks.iter().any(Option::is_none) || !ranks.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::Invariant(format!(
                        "input {input:?} of bucket {} disagrees with its output scope",
                        b.var
                    )));
                }
            }
        }
        Ok(())
    }
}
