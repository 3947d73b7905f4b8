//! Block-size planning.
//!
//! Every intermediate function table is cut into equal blocks (the last one may
//! be short). While a bucket computes one output block it keeps one block of each
//! child function in memory, so for every bucket `i`
//!
//! ```text
//! b_i + sum_{j in children(i)} b_j + slack_i = Mpt,   slack_i >= 0
//! ```
//!
//! with sizes counted in table entries. Sizes are chosen greedily, most
//! constrained (highest degree) bucket first.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::VarId;
use crate::ordering::BucketTree;

/// Memory available to the external engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBudget {
    /// Total memory `M` in bytes.
    pub total_bytes: u64,
    /// Bytes held by the original functions (`O`).
    pub original_bytes: u64,
    /// Worker count `m`.
    pub workers: usize,
    pub entry_size: u64,
    /// Per-worker budget in table entries.
    pub mpt: u64,
}

/// `Mpt = (M - O) / m`, rounded down to whole entries.
pub fn compute_mpt(
    total: u64,
    original: u64,
    workers: usize,
    entry_size: u64,
) -> Result<MemoryBudget> {
    if workers == 0 {
        return Err(Error::Budget("at least one worker is required".into()));
    }
    if entry_size == 0 {
        return Err(Error::Budget("entry size must be positive".into()));
    }
    if total <= original {
        return Err(Error::Budget(format!(
            "memory {total} B does not exceed the {original} B held by original functions"
        )));
    }
    let mpt = (total - original) / (workers as u64 * entry_size);
    Ok(MemoryBudget {
        total_bytes: total,
        original_bytes: original,
        workers,
        entry_size,
        mpt,
    })
}

impl MemoryBudget {
    /// Budget given directly as a per-worker entry count (8-byte entries, `O = 0`).
    pub fn from_entries(mpt: u64, workers: usize) -> Self {
        MemoryBudget {
            total_bytes: mpt * 8 * workers as u64,
            original_bytes: 0,
            workers,
            entry_size: 8,
            mpt,
        }
    }

    /// Bound on resident block bytes across all workers.
    pub fn resident_limit_bytes(&self) -> u64 {
        self.mpt * self.entry_size * self.workers as u64
    }
}

/// One bucket as seen by the planner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanNode {
    pub label: VarId,
    pub parent: Option<usize>,
    /// Entries in this bucket's output table.
    pub table_size: u64,
    /// Block sizes must be multiples of this (cardinality of the consuming bucket's variable).
    pub align: u64,
}

/// Bucket-tree shape with function sizes, indexed densely.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<PlanNode>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
}

impl Topology {
    /// Parents must precede their children in `nodes`.
    pub fn new(nodes: Vec<PlanNode>) -> Result<Self> {
        let mut children = vec![Vec::new(); nodes.len()];
        let mut depth = vec![0; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if n.align == 0 || n.table_size == 0 || n.table_size % n.align != 0 {
                return Err(Error::Contract(format!(
                    "node {i}: table size {} is not a positive multiple of {}",
                    n.table_size, n.align
                )));
            }
            match n.parent {
                Some(p) if p >= i => {
                    return Err(Error::Contract(format!("node {i} has parent {p} after it")))
                }
                Some(p) => {
                    children[p].push(i);
                    depth[i] = depth[p] + 1;
                }
                None if n.table_size != 1 => {
                    return Err(Error::Contract(format!("root {i} must output a scalar")))
                }
                None => {}
            }
        }
        Ok(Topology {
            nodes,
            children,
            depth,
        })
    }

    /// Planner view of a bucket tree, in ordering position.
    pub fn from_tree(t: &BucketTree) -> Result<Self> {
        let nodes = t
            .buckets()
            .iter()
            .map(|b| {
                Ok(PlanNode {
                    label: b.var,
                    parent: b
                        .parent
                        .map(|p| t.position(p).expect("parent has a bucket")),
                    table_size: t.out_size(b.var)?,
                    align: b.parent.map_or(1, |p| t.cards()[p] as u64),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Topology::new(nodes)
    }

    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.children[i].len() + usize::from(self.nodes[i].parent.is_some())
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    /// Functions held in memory while bucket `i` computes: its output, then its children's.
    pub fn functions_at(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(i).chain(self.children[i].iter().copied())
    }
}

/// Blocking of one function table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunctionPlan {
    pub var: VarId,
    pub table_size: u64,
    pub block_size: u64,
    pub n_blocks: u64,
}

impl FunctionPlan {
    fn new(var: VarId, table_size: u64, block_size: u64) -> Self {
        let n_blocks = if block_size == 0 {
            0
        } else {
            table_size.div_ceil(block_size)
        };
        FunctionPlan {
            var,
            table_size,
            block_size,
            n_blocks,
        }
    }

    /// First and last entry index of block `i`.
    pub fn bounds(&self, i: u64) -> (u64, u64) {
        let s = i * self.block_size;
        let e = ((i + 1) * self.block_size).min(self.table_size) - 1;
        (s, e)
    }

    pub fn block_len(&self, i: u64) -> u64 {
        let (s, e) = self.bounds(i);
        e - s + 1
    }

    pub fn block_of(&self, idx: u64) -> Result<u64> {
        if idx >= self.table_size {
            return Err(Error::Contract(format!(
                "entry {idx} outside table of {} entries",
                self.table_size
            )));
        }
        Ok(idx / self.block_size)
    }
}

/// Block sizes for every function plus per-bucket slack, indexed like the topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPlan {
    pub mpt: u64,
    pub functions: Vec<FunctionPlan>,
    /// `Mpt` minus the entries bucket `i` holds; negative only in hand-built invalid plans.
    pub slack: Vec<i64>,
    by_var: Vec<Option<usize>>,
}

impl BlockPlan {
    /// Plan with explicitly chosen block sizes; slack is derived.
    pub fn from_sizes(topo: &Topology, sizes: &[u64], mpt: u64) -> Self {
        let functions: Vec<FunctionPlan> = topo
            .nodes()
            .iter()
            .zip(sizes)
            .map(|(n, &b)| FunctionPlan::new(n.label, n.table_size, b))
            .collect();
        let slack = (0..topo.len())
            .map(|i| {
                let used: u64 = topo.functions_at(i).map(|j| functions[j].block_size).sum();
                mpt as i64 - used as i64
            })
            .collect();
        let max_var = topo.nodes().iter().map(|n| n.label + 1).max().unwrap_or(0);
        let mut by_var = vec![None; max_var];
        for (i, n) in topo.nodes().iter().enumerate() {
            by_var[n.label] = Some(i);
        }
        BlockPlan {
            mpt,
            functions,
            slack,
            by_var,
        }
    }

    /// Plan entry of the function produced by `var`'s bucket.
    pub fn for_var(&self, var: VarId) -> Option<&FunctionPlan> {
        self.index_of(var).map(|i| &self.functions[i])
    }

    pub fn index_of(&self, var: VarId) -> Option<usize> {
        self.by_var.get(var).copied().flatten()
    }

    pub fn total_slack(&self) -> i64 {
        self.slack.iter().sum()
    }

    pub fn total_blocks(&self) -> u64 {
        self.functions.iter().map(|f| f.n_blocks).sum()
    }

    /// Tab-separated dump: variable, table size, block size, block count.
    pub fn dump(&self) -> String {
        let mut out = String::from("var\ttable_size\tblock_size\tn_blocks\n");
        for f in &self.functions {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                f.var, f.table_size, f.block_size, f.n_blocks
            );
        }
        out
    }
}

pub fn block_of_entry(p: &BlockPlan, f: usize, idx: u64) -> Result<u64> {
    p.functions
        .get(f)
        .ok_or_else(|| Error::Contract(format!("no function {f} in plan")))?
        .block_of(idx)
}

/// Smallest `Mpt` for which a plan exists: one aligned block per function at
/// every bucket.
pub fn min_mpt(topo: &Topology) -> u64 {
    (0..topo.len())
        .map(|i| {
            topo.functions_at(i)
                .map(|j| topo.nodes()[j].align)
                .sum::<u64>()
        })
        .max()
        .unwrap_or(0)
}

/// Greedy block sizing for a bucket tree.
pub fn compute_block_sizes(t: &BucketTree, mb: &MemoryBudget) -> Result<BlockPlan> {
    plan_topology(&Topology::from_tree(t)?, mb.mpt)
}

/// Greedy block sizing.
///
/// Buckets are visited by decreasing degree (deeper first, then lower label). At each
/// bucket the memory not yet claimed is split evenly over its undetermined functions,
/// smallest table first so capped tables hand their leftovers to the rest. A function
/// also never takes more than its even share at its other bucket, nor eats into the
/// one-aligned-block minimum reserved for every function still undetermined at
/// either bucket; that reserve keeps every remaining equation satisfiable.
pub fn plan_topology(topo: &Topology, mpt: u64) -> Result<BlockPlan> {
    let n = topo.len();
    let nodes = topo.nodes();
    let mut det = vec![0u64; n];
    let mut open = vec![0u64; n];
    let mut reserve = vec![0u64; n];
    for i in 0..n {
        for j in topo.functions_at(i) {
            open[i] += 1;
            reserve[i] += nodes[j].align;
        }
        if reserve[i] > mpt {
            return Err(Error::InfeasibleBudget {
                bucket: nodes[i].label,
                required: reserve[i],
                available: mpt,
            });
        }
    }

    let mut visit: Vec<usize> = (0..n).collect();
    visit.sort_by(|&a, &b| {
        topo.degree(b)
            .cmp(&topo.degree(a))
            .then(topo.depth(b).cmp(&topo.depth(a)))
            .then(nodes[a].label.cmp(&nodes[b].label))
    });

    let mut size: Vec<Option<u64>> = vec![None; n];
    for &i in &visit {
        let mut pending: Vec<usize> = topo
            .functions_at(i)
            .filter(|&j| size[j].is_none())
            .collect();
        pending.sort_by_key(|&j| (nodes[j].table_size, j));
        for j in pending {
            let other = if j == i { nodes[i].parent } else { Some(j) };
            let align = nodes[j].align;
            let hard = |b: usize| mpt - det[b] - (reserve[b] - align);
            let mut cap = ((mpt - det[i]) / open[i])
                .min(hard(i))
                .min(nodes[j].table_size);
            if let Some(z) = other {
                let mut tables: Vec<u64> = topo
                    .functions_at(z)
                    .filter(|&f| size[f].is_none())
                    .map(|f| nodes[f].table_size)
                    .collect();
                tables.sort_unstable();
                cap = cap.min(fill_level(mpt - det[z], &tables)).min(hard(z));
            }
            let b = (cap / align * align).max(align);
            size[j] = Some(b);
            for bucket in std::iter::once(i).chain(other) {
                det[bucket] += b;
                open[bucket] -= 1;
                reserve[bucket] -= align;
            }
        }
    }
    let sizes: Vec<u64> = size
        .into_iter()
        .map(|s| s.expect("every function sized"))
        .collect();
    Ok(BlockPlan::from_sizes(topo, &sizes, mpt))
}

/// Largest even share of `avail` once every table smaller than the share takes
/// just its own size. `tables` must be sorted ascending.
fn fill_level(mut avail: u64, tables: &[u64]) -> u64 {
    let mut left = tables.len() as u64;
    for &t in tables {
        let level = avail / left;
        if t > level {
            return level;
        }
        avail -= t;
        left -= 1;
    }
    u64::MAX
}

/// A broken planning constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    OverBudget {
        bucket: VarId,
        used: u64,
        mpt: u64,
    },
    SlackMismatch {
        bucket: VarId,
    },
    EmptyBlock {
        function: VarId,
    },
    Misaligned {
        function: VarId,
        block_size: u64,
        align: u64,
    },
    Tiling {
        function: VarId,
    },
}

/// Checks every per-bucket memory equation, slack sign, block tiling and alignment.
pub fn validate_plan(topo: &Topology, p: &BlockPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let nodes = topo.nodes();
    if p.functions.len() != nodes.len() || p.slack.len() != nodes.len() {
        out.push(Violation::Tiling {
            function: usize::MAX,
        });
        return out;
    }
    for (i, node) in nodes.iter().enumerate() {
        let f = &p.functions[i];
        if f.block_size == 0 {
            out.push(Violation::EmptyBlock {
                function: node.label,
            });
        } else {
            if !f.block_size.is_multiple_of(node.align) {
                out.push(Violation::Misaligned {
                    function: node.label,
                    block_size: f.block_size,
                    align: node.align,
                });
            }
            let last = f.n_blocks.saturating_sub(1);
            let tiles = f.table_size == node.table_size
                && f.n_blocks >= 1
                && f.bounds(0).0 == 0
                && f.bounds(last).1 == f.table_size - 1
                && last * f.block_size < f.table_size;
            if !tiles {
                out.push(Violation::Tiling {
                    function: node.label,
                });
            }
        }
        let used: u64 = topo
            .functions_at(i)
            .map(|j| p.functions[j].block_size)
            .sum();
        if used > p.mpt {
            out.push(Violation::OverBudget {
                bucket: node.label,
                used,
                mpt: p.mpt,
            });
        }
        if p.slack[i] != p.mpt as i64 - used as i64 {
            out.push(Violation::SlackMismatch { bucket: node.label });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(label: usize, parent: Option<usize>, table_size: u64, align: u64) -> PlanNode {
        PlanNode {
            label,
            parent,
            table_size,
            align,
        }
    }

    #[test]
    fn mpt_arithmetic() {
        assert_eq!(compute_mpt(100, 20, 4, 1).unwrap().mpt, 20);
        assert_eq!(compute_mpt(1 << 30, 0, 4, 8).unwrap().mpt, 1 << 25);
        assert!(matches!(compute_mpt(100, 100, 1, 8), Err(Error::Budget(_))));
        assert!(compute_mpt(100, 0, 0, 8).is_err());
    }

    #[test]
    fn single_bucket_takes_whole_table() {
        // root scalar plus one child whose table is smaller than the budget
        let topo = Topology::new(vec![node(0, None, 1, 1), node(1, Some(0), 6, 2)]).unwrap();
        let p = plan_topology(&topo, 20).unwrap();
        assert!(validate_plan(&topo, &p).is_empty());
        assert_eq!(p.functions[1].block_size, 6);
        assert_eq!(p.functions[1].n_blocks, 1);
        assert_eq!(p.slack[1], 14);
        assert_eq!(p.slack[0], 20 - 1 - 6);
    }

    #[test]
    fn high_degree_parent_bounds_child_block() {
        // v has degree 6 (parent + 5 children), u has degree 3 (parent v + 2 children).
        let mut nodes = vec![node(0, None, 1, 1), node(1, Some(0), 1 << 20, 1)];
        for c in 0..5 {
            nodes.push(node(2 + c, Some(1), 1 << 20, 1));
        }
        let u = 2;
        nodes.push(node(7, Some(u), 1 << 20, 1));
        nodes.push(node(8, Some(u), 1 << 20, 1));
        let topo = Topology::new(nodes).unwrap();
        assert_eq!(topo.degree(1), 6);
        assert_eq!(topo.degree(u), 3);
        let mpt = 600;
        let p = plan_topology(&topo, mpt).unwrap();
        assert!(validate_plan(&topo, &p).is_empty());
        assert_eq!(p.functions[u].block_size, mpt / 6);
        assert!(p.functions[u].block_size < mpt / 3);
    }

    #[test]
    fn infeasible_budget_rejected() {
        let topo = Topology::new(vec![
            node(0, None, 1, 1),
            node(1, Some(0), 9, 3),
            node(2, Some(1), 9, 3),
        ])
        .unwrap();
        assert!(matches!(
            plan_topology(&topo, 5),
            Err(Error::InfeasibleBudget {
                bucket: 1,
                required: 6,
                available: 5
            })
        ));
        assert!(plan_topology(&topo, 6).is_ok());
    }

    #[test]
    fn hand_built_violations() {
        let topo = Topology::new(vec![node(0, None, 1, 1), node(1, Some(0), 12, 3)]).unwrap();
        let p = BlockPlan::from_sizes(&topo, &[1, 12], 10);
        let v = validate_plan(&topo, &p);
        assert!(v.contains(&Violation::OverBudget {
            bucket: 1,
            used: 12,
            mpt: 10
        }));
        assert!(v.contains(&Violation::OverBudget {
            bucket: 0,
            used: 13,
            mpt: 10
        }));

        let p = BlockPlan::from_sizes(&topo, &[1, 4], 10);
        assert_eq!(
            validate_plan(&topo, &p),
            vec![Violation::Misaligned {
                function: 1,
                block_size: 4,
                align: 3
            }]
        );
    }

    #[test]
    fn block_lookup() {
        let f = FunctionPlan::new(0, 27, 8);
        assert_eq!(f.n_blocks, 4);
        assert_eq!(f.block_of(0).unwrap(), 0);
        assert_eq!(f.block_of(3).unwrap(), 0);
        assert_eq!(f.block_of(12).unwrap(), 1);
        assert_eq!(f.block_of(21).unwrap(), 2);
        assert_eq!(f.bounds(3), (24, 26));
        assert!(f.block_of(27).is_err());
    }

    #[test]
    fn dump_format() {
        let topo = Topology::new(vec![node(4, None, 1, 1), node(2, Some(0), 6, 2)]).unwrap();
        let p = plan_topology(&topo, 5).unwrap();
        assert_eq!(
            p.dump(),
            "var\ttable_size\tblock_size\tn_blocks\n4\t1\t1\t1\n2\t6\t4\t2\n"
        );
    }
}
