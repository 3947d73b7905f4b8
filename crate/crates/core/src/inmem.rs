//! Reference engines: exhaustive enumeration and classic in-memory bucket elimination.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{factor_product, factor_sum_out, projected_strides, Factor, Model, Walker};
use crate::ordering::{build_bucket_tree, BucketTree, EliminationOrdering};

/// Largest number of joint assignments the brute-force oracle will enumerate.
pub const DEFAULT_BRUTE_FORCE_CAP: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InferenceResult {
    pub pe: f64,
    /// `log10(pe)`, negative infinity when `pe` is zero.
    pub log10_pe: f64,
    pub elapsed: Duration,
}

impl InferenceResult {
    pub fn new(pe: f64, elapsed: Duration) -> Self {
        InferenceResult {
            pe,
            log10_pe: pe.log10(),
            elapsed,
        }
    }
}

/// `P(e)` from the bucket-tree constants and root scalars, multiplied in a fixed order.
pub(crate) fn combine_roots(constants: &[f64], roots: impl IntoIterator<Item = f64>) -> f64 {
    let mut pe = 1.0;
    for c in constants {
        pe *= c;
    }
    for r in roots {
        pe *= r;
    }
    pe
}

pub fn brute_force_pe(model: &Model) -> Result<InferenceResult> {
    brute_force_pe_capped(model, DEFAULT_BRUTE_FORCE_CAP)
}

/// Sums the product of all factors over every assignment of the unobserved variables.
pub fn brute_force_pe_capped(model: &Model, cap: u64) -> Result<InferenceResult> {
    let start = Instant::now();
    let vars = model.active_vars();
    let cards: Vec<usize> = vars.iter().map(|&v| model.card(v)).collect();
    let assignments = cards
        .iter()
        .fold(1u128, |acc, &k| acc.saturating_mul(k as u128));
    if assignments > cap as u128 {
        return Err(Error::OracleCap { assignments, cap });
    }
    let factors = model.factors();
    let strides = factors
        .iter()
        .map(|f| projected_strides(&vars, f.scope(), f.cards()))
        .collect();
    let mut walk = Walker::new(cards, strides);
    let mut pe = 0.0;
    for _ in 0..assignments {
        let mut p = 1.0;
        for (t, f) in factors.iter().enumerate() {
            p *= f.table()[walk.offset(t)];
        }
        pe += p;
        walk.advance();
    }
    Ok(InferenceResult::new(pe, start.elapsed()))
}

/// Bucket elimination along `d` with every table in memory.
pub fn be_inmem(model: &Model, d: &EliminationOrdering) -> Result<InferenceResult> {
    let tree = build_bucket_tree(model, d)?.order_scopes()?;
    Ok(BucketElimination::new(&tree).run()?.result)
}

/// Output of an in-memory run with its per-bucket detail, indexed by ordering position.
#[derive(Debug, Clone)]
pub struct InMemRun {
    pub result: InferenceResult,
    /// Output function of every bucket, kept only when requested.
    pub messages: Vec<Option<Factor>>,
    /// Entries of each bucket's combined table (one multiply chain each).
    pub entries: Vec<u64>,
}

impl InMemRun {
    pub fn total_entries(&self) -> u64 {
        self.entries.iter().sum()
    }
}

pub struct BucketElimination<'a> {
    tree: &'a BucketTree,
    table_limit_bytes: Option<u64>,
    keep_messages: bool,
}

impl<'a> BucketElimination<'a> {
    pub fn new(tree: &'a BucketTree) -> Self {
        BucketElimination {
            tree,
            table_limit_bytes: None,
            keep_messages: false,
        }
    }

    /// Refuse to start if any combined table would exceed `bytes`.
    pub fn with_table_limit(mut self, bytes: u64) -> Self {
        self.table_limit_bytes = Some(bytes);
        self
    }

    pub fn keep_messages(mut self, keep: bool) -> Self {
        self.keep_messages = keep;
        self
    }

    /// Bytes of the largest combined table this run would build.
    pub fn peak_table_bytes(&self) -> Result<u64> {
        let t = self.tree;
        let mut peak = 0u64;
        for b in t.buckets() {
            let entries = t
                .out_size(b.var)?
                .checked_mul(t.cards()[b.var] as u64)
                .and_then(|x| x.checked_mul(8))
                .ok_or(Error::TableOverflow(b.out_scope.len() + 1))?;
            peak = peak.max(entries);
        }
        Ok(peak)
    }

    pub fn run(&self) -> Result<InMemRun> {
        let start = Instant::now();
        let t = self.tree;
        if let Some(limit) = self.table_limit_bytes {
            let needed = self.peak_table_bytes()?;
            if needed > limit {
                return Err(Error::MemoryExceeded { needed, limit });
            }
        }
        let n = t.len();
        let mut messages: Vec<Option<Factor>> = vec![None; n];
        let mut entries = vec![0u64; n];
        let mut roots = Vec::new();
        for i in (0..n).rev() {
            let b = t.bucket_at(i);
            let mut fs: Vec<&Factor> = b.factors.iter().collect();
            for &c in &b.children {
                let m = messages[t.position(c).expect("child has a bucket")]
                    .as_ref()
                    .ok_or_else(|| Error::Invariant(format!("message of {c} consumed twice")))?;
                fs.push(m);
            }
            let combined = factor_product(&fs, &t.combined_scope(b.var), t.cards())?;
            entries[i] = combined.len() as u64;
            let out = factor_sum_out(&combined, b.var)?;
            if !self.keep_messages {
                for &c in &b.children {
                    messages[t.position(c).expect("child has a bucket")] = None;
                }
            }
            if b.parent.is_none() {
                roots.push((i, out.table()[0]));
            }
            messages[i] = Some(out);
        }
        roots.sort_by_key(|&(i, _)| i);
        let pe = combine_roots(t.constants(), roots.into_iter().map(|(_, v)| v));
        if !self.keep_messages {
            messages.iter_mut().for_each(|m| *m = None);
        }
        Ok(InMemRun {
            result: InferenceResult::new(pe, start.elapsed()),
            messages,
            entries,
        })
    }
}
