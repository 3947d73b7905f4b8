//! Out-of-core bucket elimination.
//!
//! Every bucket output is split into blocks according to a [`BlockPlan`] and each
//! block lives in its own file. A pool of workers repeatedly claims a block from a
//! bucket whose children are complete, enumerates its entries while keeping one
//! block of each child function resident, and saves the result. Blocks in memory
//! are shared between workers through per-block holder lists: the first holder
//! loads the file, the last one to let go unloads it.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::Range;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inmem::{combine_roots, InferenceResult};
use crate::model::{
    assignment_to_index, index_to_assignment, projected_strides, Model, VarId, Walker,
};
use crate::ordering::{build_bucket_tree, BucketTree, EliminationOrdering};
use crate::plan::{compute_block_sizes, BlockPlan, MemoryBudget};
use crate::store::{Block, BlockId, BlockStore};

pub type WorkerId = usize;

/// How a worker picks among eligible buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectPolicy {
    /// Stay on the current bucket while it has unclaimed blocks, otherwise take the
    /// eligible bucket latest in the ordering.
    #[default]
    InOrder,
    /// Uniformly random eligible bucket (schedule fuzzing).
    Randomized { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ExternalConfig {
    pub budget: MemoryBudget,
    pub workdir: PathBuf,
    /// Delete a bucket's input blocks once its output is complete, and the root
    /// outputs at the end of the run.
    pub delete_blocks: bool,
    pub policy: SelectPolicy,
}

impl ExternalConfig {
    pub fn new(budget: MemoryBudget, workdir: impl Into<PathBuf>) -> Self {
        ExternalConfig {
            budget,
            workdir: workdir.into(),
            delete_blocks: true,
            policy: SelectPolicy::InOrder,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BucketStats {
    pub var: VarId,
    pub blocks: u64,
    /// Entries of the combined table evaluated (output entries times the bucket's cardinality).
    pub entries: u64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub loads: u64,
    pub saves: u64,
    pub deletes: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub peak_resident_bytes: u64,
    pub peak_disk_bytes: u64,
    /// Loads of a block that had already been loaded and unloaded earlier in the run.
    pub gap_reloads: u64,
    pub entries: u64,
    pub per_bucket: Vec<BucketStats>,
}

impl RunStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStatus {
    NotComputed,
    Computing,
    Computed,
}

/// Scheduling state: per-bucket claimed (`nc`) and finished block counts and the
/// set of buckets that may be worked on. Indexed by ordering position.
#[derive(Debug, Clone)]
pub struct RunState {
    nb: Vec<u64>,
    nc: Vec<u64>,
    done: Vec<u64>,
    status: Vec<Vec<BlockStatus>>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    waiting_on: Vec<usize>,
    ready: BTreeSet<usize>,
    rng: Option<ChaCha8Rng>,
    complete: usize,
}

impl RunState {
    pub fn new(tree: &BucketTree, plan: &BlockPlan, policy: SelectPolicy) -> Self {
        let n = tree.len();
        let nb: Vec<u64> = plan.functions.iter().map(|f| f.n_blocks).collect();
        let parent: Vec<Option<usize>> = tree
            .buckets()
            .iter()
            .map(|b| b.parent.and_then(|p| tree.position(p)))
            .collect();
        let children: Vec<Vec<usize>> = tree
            .buckets()
            .iter()
            .map(|b| {
                b.children
                    .iter()
                    .filter_map(|&c| tree.position(c))
                    .collect()
            })
            .collect();
        let waiting_on: Vec<usize> = children.iter().map(Vec::len).collect();
        let ready = (0..n)
            .filter(|&i| waiting_on[i] == 0 && nb[i] > 0)
            .collect();
        let rng = match policy {
            SelectPolicy::InOrder => None,
            SelectPolicy::Randomized { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        RunState {
            status: nb
                .iter()
                .map(|&k| vec![BlockStatus::NotComputed; k as usize])
                .collect(),
            nc: vec![0; n],
            done: vec![0; n],
            nb,
            parent,
            children,
            waiting_on,
            ready,
            rng,
            complete: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nb.is_empty()
    }

    pub fn claimed(&self, pos: usize) -> u64 {
        self.nc[pos]
    }

    pub fn n_blocks(&self, pos: usize) -> u64 {
        self.nb[pos]
    }

    pub fn status(&self, pos: usize, block: u64) -> BlockStatus {
        self.status[pos][block as usize]
    }

    /// Every block of the bucket has been computed and saved.
    pub fn is_complete(&self, pos: usize) -> bool {
        self.done[pos] == self.nb[pos]
    }

    pub fn all_complete(&self) -> bool {
        self.complete == self.nb.len()
    }

    pub fn children(&self, pos: usize) -> &[usize] {
        &self.children[pos]
    }

    /// Claims an uncomputed block from a bucket whose children are all complete and
    /// marks it as computing. `hint` is the bucket the caller worked on last.
    pub fn select_block(&mut self, hint: Option<usize>) -> Option<(usize, u64)> {
        let pos = match self.rng.as_mut() {
            Some(rng) => *self.ready.iter().choose(rng)?,
            None => match hint {
                Some(h) if self.ready.contains(&h) => h,
                _ => *self.ready.last()?,
            },
        };
        let block = self.nc[pos];
        debug_assert!(self.children[pos]
            .iter()
            .all(|&c| self.done[c] == self.nb[c]));
        self.nc[pos] += 1;
        self.status[pos][block as usize] = BlockStatus::Computing;
        if self.nc[pos] == self.nb[pos] {
            self.ready.remove(&pos);
        }
        Some((pos, block))
    }

    /// Records a saved block. Returns whether this finished the bucket.
    pub fn complete_block(&mut self, pos: usize, block: u64) -> Result<bool> {
        let st = &mut self.status[pos][block as usize];
        if *st != BlockStatus::Computing {
            return Err(Error::Invariant(format!(
                "block {block} of bucket at {pos} completed while {st:?}"
            )));
        }
        *st = BlockStatus::Computed;
        self.done[pos] += 1;
        if self.done[pos] < self.nb[pos] {
            return Ok(false);
        }
        self.complete += 1;
        if let Some(p) = self.parent[pos] {
            self.waiting_on[p] -= 1;
            if self.waiting_on[p] == 0 && self.nb[p] > 0 {
                self.ready.insert(p);
            }
        }
        Ok(true)
    }
}

#[derive(Debug, Default)]
struct Counters {
    loads: AtomicU64,
    saves: AtomicU64,
    deletes: AtomicU64,
    bytes_read: AtomicU64,
    bytes_written: AtomicU64,
    reloads: AtomicU64,
}

struct Slot {
    data: Option<Arc<Vec<f64>>>,
    holders: Vec<WorkerId>,
    bytes: u64,
}

#[derive(Default)]
struct Residency {
    slots: HashMap<BlockId, Slot>,
    ever_loaded: HashSet<BlockId>,
    bytes: u64,
    peak: u64,
}

impl Residency {
    fn grow(&mut self, bytes: u64) {
        self.bytes += bytes;
        self.peak = self.peak.max(self.bytes);
    }
}

/// Blocks currently in memory with their holder lists.
pub struct ResidentSet {
    inner: Mutex<Residency>,
    loaded: Condvar,
    counters: Counters,
}

impl Default for ResidentSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ResidentSet {
    pub fn new() -> Self {
        ResidentSet {
            inner: Mutex::new(Residency::default()),
            loaded: Condvar::new(),
            counters: Counters::default(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Residency> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Registers `worker` as a holder of block `id` (entries `first..=last`), loading
    /// it if no one holds it yet.
    pub fn acquire(
        &self,
        worker: WorkerId,
        id: BlockId,
        first: u64,
        last: u64,
        store: &BlockStore,
    ) -> Result<Arc<Vec<f64>>> {
        let mut g = self.lock();
        let mut registered = false;
        while let Some(slot) = g.slots.get_mut(&id) {
            if !registered {
                if slot.holders.contains(&worker) {
                    return Err(Error::Invariant(format!(
                        "worker {worker} acquired block {} twice",
                        id.file_name()
                    )));
                }
                slot.holders.push(worker);
                registered = true;
            }
            if let Some(data) = &slot.data {
                return Ok(Arc::clone(data));
            }
            g = self.loaded.wait(g).unwrap_or_else(|p| p.into_inner());
        }
        let bytes = 8 * (last - first + 1);
        g.slots.insert(
            id,
            Slot {
                data: None,
                holders: vec![worker],
                bytes,
            },
        );
        g.grow(bytes);
        if !g.ever_loaded.insert(id) {
            self.counters.reloads.fetch_add(1, Ordering::Relaxed);
        }
        drop(g);

        let loaded = store.load_span(id, first, last);
        let mut g = self.lock();
        match loaded {
            Ok(block) => {
                self.counters.loads.fetch_add(1, Ordering::Relaxed);
                self.counters.bytes_read.fetch_add(bytes, Ordering::Relaxed);
                let data = Arc::new(block.data);
                g.slots.get_mut(&id).expect("slot reserved").data = Some(Arc::clone(&data));
                self.loaded.notify_all();
                Ok(data)
            }
            Err(e) => {
                g.slots.remove(&id);
                g.bytes -= bytes;
                self.loaded.notify_all();
                Err(e)
            }
        }
    }

    /// Drops `worker` from the holders of `id`; the block is unloaded when none remain.
    pub fn release(&self, worker: WorkerId, id: BlockId) -> Result<()> {
        let mut g = self.lock();
        let slot = g.slots.get_mut(&id).ok_or_else(|| {
            Error::Invariant(format!("release of non-resident block {}", id.file_name()))
        })?;
        let at = slot
            .holders
            .iter()
            .position(|&w| w == worker)
            .ok_or_else(|| {
                Error::Invariant(format!(
                    "worker {worker} does not hold block {}",
                    id.file_name()
                ))
            })?;
        slot.holders.swap_remove(at);
        if slot.holders.is_empty() {
            let bytes = slot.bytes;
            g.slots.remove(&id);
            g.bytes -= bytes;
        }
        Ok(())
    }

    /// Accounts for an output block under computation.
    pub fn reserve(&self, bytes: u64) {
        self.lock().grow(bytes);
    }

    pub fn unreserve(&self, bytes: u64) {
        self.lock().bytes -= bytes;
    }

    pub fn is_resident(&self, id: BlockId) -> bool {
        self.lock().slots.contains_key(&id)
    }

    pub fn holders(&self, id: BlockId) -> Vec<WorkerId> {
        self.lock()
            .slots
            .get(&id)
            .map(|s| s.holders.clone())
            .unwrap_or_default()
    }

    pub fn resident_bytes(&self) -> u64 {
        self.lock().bytes
    }

    pub fn peak_bytes(&self) -> u64 {
        self.lock().peak
    }

    pub fn loads(&self) -> u64 {
        self.counters.loads.load(Ordering::Relaxed)
    }

    pub fn reloads(&self) -> u64 {
        self.counters.reloads.load(Ordering::Relaxed)
    }
}

/// Per-bucket enumeration recipe: strides of every input over the output scope.
struct Kernel {
    out_cards: Vec<usize>,
    card: usize,
    /// Strides for original factors first, then child messages.
    strides: Vec<Vec<usize>>,
    n_original: usize,
    /// Plan index of each child message.
    child_fn: Vec<usize>,
}

fn kernels(tree: &BucketTree, plan: &BlockPlan) -> Result<Vec<Kernel>> {
    if !tree.scopes_ordered() {
        return Err(Error::Contract(
            "external engine needs ordered scopes".into(),
        ));
    }
    tree.buckets()
        .iter()
        .map(|b| {
            let comb = tree.combined_scope(b.var);
            let out_cards: Vec<usize> = b.out_scope.iter().map(|&v| tree.cards()[v]).collect();
            let mut strides = Vec::new();
            let mut push = |scope: &[VarId]| -> Result<()> {
                let cards: Vec<usize> = scope.iter().map(|&v| tree.cards()[v]).collect();
                let mut st = projected_strides(&comb, scope, &cards);
                if st.pop() != Some(1) {
                    return Err(Error::Invariant(format!(
                        "input {scope:?} of bucket {} does not end with it",
                        b.var
                    )));
                }
                strides.push(st);
                Ok(())
            };
            for f in &b.factors {
                push(f.scope())?;
            }
            let mut child_fn = Vec::new();
            for &c in &b.children {
                push(&tree.bucket(c).out_scope)?;
                child_fn.push(plan.index_of(c).expect("child planned"));
            }
            Ok(Kernel {
                out_cards,
                card: tree.cards()[b.var],
                strides,
                n_original: b.factors.len(),
                child_fn,
            })
        })
        .collect()
}

struct Held {
    id: BlockId,
    first: usize,
    data: Arc<Vec<f64>>,
}

struct Shared<'a> {
    tree: &'a BucketTree,
    plan: &'a BlockPlan,
    kernels: Vec<Kernel>,
    store: BlockStore,
    resident: ResidentSet,
    delete_blocks: bool,
    sched: Mutex<Sched>,
    changed: Condvar,
}

struct Sched {
    state: RunState,
    in_flight: usize,
    failure: Option<Error>,
    roots: Vec<(usize, f64)>,
    per_bucket: Vec<BucketStats>,
    disk_bytes: u64,
    peak_disk: u64,
}

impl Shared<'_> {
    fn lock(&self) -> MutexGuard<'_, Sched> {
        self.sched.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn worker(&self, me: WorkerId) {
        let mut held: Vec<Option<Held>> = Vec::new();
        let mut current: Option<usize> = None;
        let res = self.work(me, &mut held, &mut current);
        let released = self.release_all(me, &mut held);
        if let Err(e) = res.and(released) {
            let mut g = self.lock();
            g.failure.get_or_insert(e);
            self.changed.notify_all();
        }
    }

    fn release_all(&self, me: WorkerId, held: &mut Vec<Option<Held>>) -> Result<()> {
        for h in held.drain(..).flatten() {
            self.resident.release(me, h.id)?;
        }
        Ok(())
    }

    fn work(
        &self,
        me: WorkerId,
        held: &mut Vec<Option<Held>>,
        current: &mut Option<usize>,
    ) -> Result<()> {
        loop {
            let (pos, block) = {
                let mut g = self.lock();
                loop {
                    if g.failure.is_some() || g.state.all_complete() {
                        return Ok(());
                    }
                    if let Some(pick) = g.state.select_block(*current) {
                        g.in_flight += 1;
                        break pick;
                    }
                    if g.in_flight == 0 {
                        return Err(Error::Invariant(
                            "no eligible block and nothing in flight".into(),
                        ));
                    }
                    g = self.changed.wait(g).unwrap_or_else(|p| p.into_inner());
                }
            };
            if *current != Some(pos) {
                self.release_all(me, held)?;
                held.resize_with(self.kernels[pos].child_fn.len(), || None);
                *current = Some(pos);
            }
            let started = Instant::now();
            let outcome = self.compute_and_save(me, pos, block, held);
            let mut g = self.lock();
            g.in_flight -= 1;
            let (entries, bytes, root_value) = match outcome {
                Ok(v) => v,
                Err(e) => {
                    self.changed.notify_all();
                    return Err(e);
                }
            };
            g.disk_bytes += bytes;
            g.peak_disk = g.peak_disk.max(g.disk_bytes);
            let stats = &mut g.per_bucket[pos];
            stats.blocks += 1;
            stats.entries += entries;
            stats.elapsed_ms += started.elapsed().as_secs_f64() * 1e3;
            if let Some(v) = root_value {
                g.roots.push((pos, v));
            }
            if g.state.complete_block(pos, block)? && self.delete_blocks {
                let mut freed = 0;
                for &c in self.tree.bucket_at(pos).children.iter() {
                    let f = self.plan.for_var(c).expect("child planned");
                    for i in 0..f.n_blocks {
                        if self.store.delete_block(BlockId::new(c, i))? {
                            self.resident
                                .counters
                                .deletes
                                .fetch_add(1, Ordering::Relaxed);
                            freed += 8 * f.block_len(i);
                        }
                    }
                }
                g.disk_bytes -= freed;
            }
            self.changed.notify_all();
        }
    }

    /// Enumerates block `block` of bucket `pos` and saves it. Returns the number of
    /// combined entries evaluated, the bytes written and, for roots, the scalar value.
    fn compute_and_save(
        &self,
        me: WorkerId,
        pos: usize,
        block: u64,
        held: &mut [Option<Held>],
    ) -> Result<(u64, u64, Option<f64>)> {
        let var = self.tree.bucket_at(pos).var;
        let f = self.plan.functions[pos];
        let (s, e) = f.bounds(block);
        let len = (e - s + 1) as usize;
        let bytes = 8 * len as u64;
        self.resident.reserve(bytes);
        let data = self.compute_block(me, pos, s as usize, len, held);
        let saved = data.and_then(|data| {
            let b = Block::new(BlockId::new(var, block), s, e, data)?;
            self.store.save_block(&b)?;
            Ok(b)
        });
        self.resident.unreserve(bytes);
        let b = saved?;
        self.resident.counters.saves.fetch_add(1, Ordering::Relaxed);
        self.resident
            .counters
            .bytes_written
            .fetch_add(bytes, Ordering::Relaxed);
        let root = self.tree.bucket_at(pos).parent.is_none().then(|| b.data[0]);
        let k = self.kernels[pos].card as u64;
        Ok((len as u64 * k, bytes, root))
    }

    /// Output entries `first..first + len` of bucket `pos`: for each one, the sum over
    /// the bucket variable of the product of all inputs.
    fn compute_block(
        &self,
        me: WorkerId,
        pos: usize,
        first: usize,
        len: usize,
        held: &mut [Option<Held>],
    ) -> Result<Vec<f64>> {
        let kern = &self.kernels[pos];
        let bucket = self.tree.bucket_at(pos);
        let k = kern.card;
        let originals: Vec<&[f64]> = bucket.factors.iter().map(|f| f.table()).collect();
        let mut walk = Walker::new(kern.out_cards.clone(), kern.strides.clone());
        walk.seek(first);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            for (c, &fi) in kern.child_fn.iter().enumerate() {
                let fplan = &self.plan.functions[fi];
                let base = walk.offset(kern.n_original + c) as u64;
                let need = base / fplan.block_size;
                if held[c].as_ref().is_some_and(|h| h.id.index == need) {
                    continue;
                }
                if let Some(old) = held[c].take() {
                    self.resident.release(me, old.id)?;
                }
                let id = BlockId::new(fplan.var, need);
                let (bs, be) = fplan.bounds(need);
                let data = self.resident.acquire(me, id, bs, be, &self.store)?;
                held[c] = Some(Held {
                    id,
                    first: bs as usize,
                    data,
                });
            }
            let mut sum = 0.0;
            for y in 0..k {
                let mut p = 1.0;
                for (t, table) in originals.iter().enumerate() {
                    p *= table[walk.offset(t) + y];
                }
                for (c, h) in held.iter().enumerate() {
                    let h = h.as_ref().expect("child block held");
                    p *= h.data[walk.offset(kern.n_original + c) - h.first + y];
                }
                sum += p;
            }
            out.push(sum);
            walk.advance();
        }
        Ok(out)
    }
}

/// Runs the external engine on a tree with ordered scopes and a plan for it.
pub fn run_beem_tree(
    tree: &BucketTree,
    plan: &BlockPlan,
    cfg: &ExternalConfig,
) -> Result<(InferenceResult, RunStats)> {
    let start = Instant::now();
    let store = BlockStore::open(&cfg.workdir)?;
    for stale in store.block_files()? {
        log::warn!("removing stale block file {}", stale.display());
        std::fs::remove_file(&stale).map_err(|e| Error::storage(&stale, e))?;
    }
    let shared = Shared {
        tree,
        plan,
        kernels: kernels(tree, plan)?,
        store,
        resident: ResidentSet::new(),
        delete_blocks: cfg.delete_blocks,
        sched: Mutex::new(Sched {
            state: RunState::new(tree, plan, cfg.policy),
            in_flight: 0,
            failure: None,
            roots: Vec::new(),
            per_bucket: tree
                .buckets()
                .iter()
                .map(|b| BucketStats {
                    var: b.var,
                    ..BucketStats::default()
                })
                .collect(),
            disk_bytes: 0,
            peak_disk: 0,
        }),
        changed: Condvar::new(),
    };
    let workers = cfg.budget.workers.max(1);
    std::thread::scope(|s| {
        for w in 0..workers {
            let shared = &shared;
            s.spawn(move || shared.worker(w));
        }
    });
    let mut sched = shared.sched.into_inner().unwrap_or_else(|p| p.into_inner());
    if let Some(e) = sched.failure.take() {
        return Err(e);
    }
    if cfg.delete_blocks {
        for b in tree.roots() {
            if shared.store.delete_block(BlockId::new(b.var, 0))? {
                shared
                    .resident
                    .counters
                    .deletes
                    .fetch_add(1, Ordering::Relaxed);
            }
        }
    }
    sched.roots.sort_by_key(|&(p, _)| p);
    let pe = combine_roots(tree.constants(), sched.roots.iter().map(|&(_, v)| v));
    let c = &shared.resident.counters;
    let stats = RunStats {
        loads: c.loads.load(Ordering::Relaxed),
        saves: c.saves.load(Ordering::Relaxed),
        deletes: c.deletes.load(Ordering::Relaxed),
        bytes_read: c.bytes_read.load(Ordering::Relaxed),
        bytes_written: c.bytes_written.load(Ordering::Relaxed),
        peak_resident_bytes: shared.resident.peak_bytes(),
        peak_disk_bytes: sched.peak_disk,
        gap_reloads: c.reloads.load(Ordering::Relaxed),
        entries: sched.per_bucket.iter().map(|b| b.entries).sum(),
        per_bucket: sched.per_bucket,
    };
    Ok((InferenceResult::new(pe, start.elapsed()), stats))
}

/// Plans and runs the external engine on a model with evidence applied.
pub fn run_beem(
    model: &Model,
    d: &EliminationOrdering,
    cfg: &ExternalConfig,
) -> Result<(InferenceResult, RunStats)> {
    let tree = build_bucket_tree(model, d)?.order_scopes()?;
    let plan = compute_block_sizes(&tree, &cfg.budget)?;
    run_beem_tree(&tree, &plan, cfg)
}

/// For each output entry in `range` of a bucket eliminating `elim`, the entry indices
/// of an input over `input_scope` that the entry reads, one per value of `elim`.
/// `cards` is indexed by variable id.
pub fn input_entry_runs(
    out_scope: &[VarId],
    input_scope: &[VarId],
    elim: VarId,
    cards: &[usize],
    range: Range<usize>,
) -> Result<Vec<Vec<usize>>> {
    range
        .map(|k| {
            let mut a = index_to_assignment(out_scope, cards, k)?;
            a.retain(|v, _| input_scope.contains(v));
            (0..cards[elim])
                .map(|y| {
                    a.insert(elim, y);
                    assignment_to_index(input_scope, cards, &a)
                })
                .collect()
        })
        .collect()
}

/// Time spent is reported per bucket in milliseconds; this sums it.
pub fn total_bucket_time(stats: &RunStats) -> Duration {
    Duration::from_secs_f64(stats.per_bucket.iter().map(|b| b.elapsed_ms).sum::<f64>() / 1e3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{primal_graph, Factor, ModelKind};

    #[test]
    fn paper_style_entry_runs() {
        // f(X1, X2) from h(X1, X2, Y): entry 1 reads 3..=5, entry 2 reads 6..=8.
        let (x1, x2, y) = (0, 1, 2);
        let runs = input_entry_runs(&[x1, x2], &[x1, x2, y], y, &[3, 3, 3], 1..3).unwrap();
        assert_eq!(runs, vec![vec![3, 4, 5], vec![6, 7, 8]]);
        // unordered h(Y, X2, X1): entry 1 reads 3, 12, 21
        let runs = input_entry_runs(&[x1, x2], &[y, x2, x1], y, &[3, 3, 3], 1..2).unwrap();
        assert_eq!(runs, vec![vec![3, 12, 21]]);
    }

    fn two_level_tree() -> (BucketTree, BlockPlan) {
        let fs = vec![
            Factor::new(vec![0, 1], vec![2, 3], vec![1.0; 6]).unwrap(),
            Factor::new(vec![1, 2], vec![3, 2], vec![1.0; 6]).unwrap(),
        ];
        let m = Model::new(vec![2, 3, 2], fs, ModelKind::Markov).unwrap();
        let d = EliminationOrdering::new(&primal_graph(&m), vec![0, 1, 2]).unwrap();
        let t = build_bucket_tree(&m, &d).unwrap().order_scopes().unwrap();
        let p = compute_block_sizes(&t, &MemoryBudget::from_entries(8, 1)).unwrap();
        (t, p)
    }

    #[test]
    fn fresh_state_selects_leaf_block_zero() {
        let (t, p) = two_level_tree();
        let mut st = RunState::new(&t, &p, SelectPolicy::InOrder);
        let (pos, block) = st.select_block(None).unwrap();
        assert_eq!(t.bucket_at(pos).var, 2);
        assert_eq!(block, 0);
        assert_eq!(st.status(pos, 0), BlockStatus::Computing);
    }

    #[test]
    fn exhausted_state_selects_nothing() {
        let (t, p) = two_level_tree();
        let mut st = RunState::new(&t, &p, SelectPolicy::InOrder);
        while let Some((pos, b)) = st.select_block(None) {
            st.complete_block(pos, b).unwrap();
        }
        assert!(st.all_complete());
        assert!(st.select_block(None).is_none());
    }

    #[test]
    fn completing_unclaimed_block_is_an_invariant_error() {
        let (t, p) = two_level_tree();
        let mut st = RunState::new(&t, &p, SelectPolicy::InOrder);
        assert!(matches!(st.complete_block(0, 0), Err(Error::Invariant(_))));
    }

    #[test]
    fn shared_acquire_loads_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlockStore::open(dir.path()).unwrap();
        let id = BlockId::new(4, 0);
        store
            .save_block(&Block::new(id, 0, 2, vec![1.0, 2.0, 3.0]).unwrap())
            .unwrap();
        let rs = ResidentSet::new();
        let a = rs.acquire(0, id, 0, 2, &store).unwrap();
        let b = rs.acquire(1, id, 0, 2, &store).unwrap();
        assert_eq!(a, b);
        assert_eq!(rs.loads(), 1);
        assert_eq!(rs.holders(id), vec![0, 1]);
        rs.release(0, id).unwrap();
        assert!(rs.is_resident(id));
        rs.release(1, id).unwrap();
        assert!(!rs.is_resident(id));
        assert_eq!(rs.resident_bytes(), 0);
        assert!(matches!(rs.release(1, id), Err(Error::Invariant(_))));
        rs.acquire(0, id, 0, 2, &store).unwrap();
        assert_eq!(rs.reloads(), 1);
    }

    #[test]
    fn concurrent_holders_share_loads() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlockStore::open(dir.path()).unwrap();
        let ids: Vec<BlockId> = (0..3).map(|i| BlockId::new(1, i)).collect();
        for &id in &ids {
            store
                .save_block(&Block::new(id, 0, 63, vec![id.index as f64; 64]).unwrap())
                .unwrap();
        }
        let rs = ResidentSet::new();
        std::thread::scope(|s| {
            for w in 0..8 {
                let (rs, store, ids) = (&rs, &store, &ids);
                s.spawn(move || {
                    for round in 0..200 {
                        let id = ids[(w + round) % 3];
                        let data = rs.acquire(w, id, 0, 63, store).unwrap();
                        assert_eq!(data[0], id.index as f64);
                        rs.release(w, id).unwrap();
                    }
                });
            }
        });
        assert_eq!(rs.resident_bytes(), 0);
        assert!(rs.peak_bytes() <= 3 * 64 * 8);
        assert!(rs.loads() <= 8 * 200);
    }

    #[test]
    fn acquire_of_missing_block_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlockStore::open(dir.path()).unwrap();
        let rs = ResidentSet::new();
        let id = BlockId::new(0, 0);
        assert!(matches!(
            rs.acquire(0, id, 0, 0, &store),
            Err(Error::MissingBlock { .. })
        ));
        assert!(!rs.is_resident(id));
        assert_eq!(rs.resident_bytes(), 0);
    }
}
