//! Pipelined parallel exact search.
//!
//! Threads split into a loading group and a computing group sharing two
//! eta-slot buffers. Each cycle the loaders read the packs registered in
//! one buffer while the computers fold the previously loaded buffer into
//! the best-so-far answers; the designated computer then qualifies the next
//! batch of candidates against the refreshed bound. Packs already buffered
//! when the queue head stops qualifying are still computed before the
//! search terminates.
//!
//! A single worker degenerates to a sequential qualify-load-compute loop,
//! which visits exactly the packs the serial search visits when eta is 1.

use std::collections::{BinaryHeap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Barrier, Mutex};

use crate::error::Result;
use crate::query::{
    extended_core, scan_pack_bytes, CandidateQueueEntry, KnnCollector, OrdF64, PreparedQuery,
    QueryResult, SearchCounters, TraversalState,
};
use crate::tree::storage::{read_pack_bytes, FilePool};
use crate::tree::{Index, NodeId, NodeRef, ROOT};

struct Shared {
    heap: BinaryHeap<CandidateQueueEntry>,
    knn: KnnCollector,
    visited: HashSet<NodeId>,
    seq: u64,
    lb_computations: u64,
}

impl Shared {
    /// Pop candidates until `eta` unvisited packs are registered. Internal
    /// nodes expand in place; pruning uses the current k-th distance and is
    /// strict, so boundary ties are never dropped. Once the queue head no
    /// longer qualifies it never will again (the bound only tightens).
    fn qualify(&mut self, index: &Index, pq: &PreparedQuery, eta: usize) -> Vec<NodeId> {
        let mut registered = Vec::new();
        while registered.len() < eta {
            let head_prunable = self.heap.peek().map_or(true, |e| {
                self.knn.is_full() && e.lb.0 > self.knn.cutoff_sq()
            });
            if head_prunable {
                break;
            }
            let entry = self.heap.pop().expect("peeked entry");
            match entry.node {
                NodeRef::Internal(id) => {
                    for (child, sids) in crate::query::distinct_children(index, id) {
                        let mut scratch = SearchCounters::default();
                        let lb =
                            crate::query::child_lb_sq(index, pq, id, child, &sids, &mut scratch);
                        self.lb_computations += scratch.lb_computations;
                        if !self.knn.is_full() || lb <= self.knn.cutoff_sq() {
                            self.seq += 1;
                            self.heap.push(CandidateQueueEntry {
                                lb: OrdF64(lb),
                                seq: self.seq,
                                node: child,
                            });
                        }
                    }
                }
                NodeRef::Pack(id) => {
                    if self.visited.insert(id) {
                        registered.push(id);
                    }
                }
            }
        }
        registered
    }
}

struct Slot {
    pack: NodeId,
    bytes: Vec<u8>,
}

/// Buffer of slots; loaders and computers touch disjoint slot indices, so
/// per-slot locks never contend within a phase.
type Buffer = Arc<Vec<Mutex<Slot>>>;

fn buffer_from(packs: Vec<NodeId>) -> Buffer {
    Arc::new(
        packs
            .into_iter()
            .map(|pack| {
                Mutex::new(Slot {
                    pack,
                    bytes: Vec::new(),
                })
            })
            .collect(),
    )
}

/// Parallel exact search returning the same result set as
/// [`crate::query::exact_search`] for any worker count and buffer size.
///
/// `workers` is the total thread budget: one runs the degenerate sequential
/// pipeline, two or more split evenly into loaders and computers.
pub fn parallel_exact_search(
    index: &Index,
    pq: &PreparedQuery,
    k: usize,
    eta: usize,
    workers: usize,
) -> Result<QueryResult> {
    let eta = eta.max(1);
    let workers = workers.max(1);

    // seed the best-so-far with the single-leaf approximate answer
    let mut state = TraversalState::new(k);
    let mut seed_budget = 1i64;
    extended_core(index, pq, 1, &mut state, &mut seed_budget, false)?;
    let TraversalState {
        knn,
        counters,
        visited,
    } = state;

    let mut shared = Shared {
        heap: BinaryHeap::new(),
        knn,
        visited,
        seq: 0,
        lb_computations: 0,
    };
    shared.heap.push(CandidateQueueEntry {
        lb: OrdF64(0.0),
        seq: 0,
        node: NodeRef::Internal(ROOT),
    });

    if workers == 1 {
        return sequential_pipeline(index, pq, k, eta, shared, counters);
    }

    let loaders = (workers / 2).max(1);
    let computers = (workers - loaders).max(1);
    let first_batch = shared.qualify(index, pq, eta);
    let shared = Mutex::new(shared);
    let counters_acc = AtomicCounters::from(counters);
    let done = AtomicBool::new(false);
    let cycle_barrier = Barrier::new(loaders + computers);
    let compute_barrier = Barrier::new(computers);
    // ready: loaded last cycle, computed now; loading: read now; staged:
    // qualified now, read next cycle
    let ready: Mutex<Buffer> = Mutex::new(buffer_from(Vec::new()));
    let loading: Mutex<Buffer> = Mutex::new(buffer_from(first_batch));
    let staged: Mutex<Vec<NodeId>> = Mutex::new(Vec::new());
    let io_error: Mutex<Option<crate::error::DumpyError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for li in 0..loaders {
            let (cycle_barrier, loading, ready, staged, done, counters_acc, io_error) = (
                &cycle_barrier,
                &loading,
                &ready,
                &staged,
                &done,
                &counters_acc,
                &io_error,
            );
            scope.spawn(move || {
                let mut pool = FilePool::reader();
                loop {
                    let buffer = loading.lock().expect("loading buffer").clone();
                    for (i, slot) in buffer.iter().enumerate() {
                        if i % loaders != li {
                            continue;
                        }
                        let mut slot = slot.lock().expect("slot");
                        match read_pack_bytes(index, index.pack(slot.pack), &mut pool) {
                            Ok(bytes) => {
                                counters_acc
                                    .bytes_read
                                    .fetch_add(bytes.len() as u64, Ordering::Relaxed);
                                slot.bytes = bytes;
                            }
                            Err(e) => *io_error.lock().expect("error slot") = Some(e),
                        }
                    }
                    if sync_cycle(cycle_barrier, done, || rotate(ready, loading, staged)) {
                        break;
                    }
                }
            });
        }
        for ci in 0..computers {
            let (
                cycle_barrier,
                compute_barrier,
                ready,
                loading,
                staged,
                shared,
                done,
                counters_acc,
            ) = (
                &cycle_barrier,
                &compute_barrier,
                &ready,
                &loading,
                &staged,
                &shared,
                &done,
                &counters_acc,
            );
            scope.spawn(move || loop {
                let buffer = ready.lock().expect("ready buffer").clone();
                let floor = shared.lock().expect("shared state").knn.cutoff_sq();
                let mut local = KnnCollector::with_floor(k, floor);
                let mut local_counters = SearchCounters::default();
                let rec = crate::tree::storage::record_size(&index.config());
                for (i, slot) in buffer.iter().enumerate() {
                    if i % computers != ci {
                        continue;
                    }
                    let slot = slot.lock().expect("slot");
                    if slot.bytes.len() < index.pack(slot.pack).len as usize * rec {
                        continue; // loader hit an I/O error, reported at exit
                    }
                    local_counters.packs_visited += 1;
                    scan_pack_bytes(
                        index,
                        slot.pack,
                        &slot.bytes,
                        pq,
                        &mut local,
                        &mut local_counters,
                    );
                }
                counters_acc.fold(local_counters);
                {
                    let mut guard = shared.lock().expect("shared state");
                    for (sq, ord) in local.into_entries() {
                        guard.knn.offer(sq, ord);
                    }
                }
                // all distance updates fold in before the next
                // qualification round
                compute_barrier.wait();
                if ci == 0 {
                    let mut guard = shared.lock().expect("shared state");
                    let packs = guard.qualify(index, pq, eta);
                    *staged.lock().expect("staged buffer") = packs;
                }
                if sync_cycle(cycle_barrier, done, || rotate(ready, loading, staged)) {
                    break;
                }
            });
        }
    });

    if let Some(e) = io_error.into_inner().expect("error slot") {
        return Err(e);
    }
    let shared = shared.into_inner().expect("shared state");
    let mut counters = counters_acc.into_counters();
    counters.lb_computations += shared.lb_computations;
    let truncated = shared.knn.len() < k;
    let mut visited: Vec<NodeId> = shared.visited.into_iter().collect();
    visited.sort_unstable();
    Ok(QueryResult {
        hits: shared.knn.into_hits(),
        counters,
        truncated,
        visited,
    })
}

/// Two-phase barrier: every thread waits, the leader rotates the buffers
/// and decides termination, every thread waits again and reads the flag.
fn sync_cycle(barrier: &Barrier, done: &AtomicBool, rotate: impl FnOnce() -> bool) -> bool {
    if barrier.wait().is_leader() && rotate() {
        done.store(true, Ordering::SeqCst);
    }
    barrier.wait();
    done.load(Ordering::SeqCst)
}

/// Swap buffer roles at the cycle boundary; true when fully drained.
fn rotate(ready: &Mutex<Buffer>, loading: &Mutex<Buffer>, staged: &Mutex<Vec<NodeId>>) -> bool {
    let mut ready = ready.lock().expect("ready buffer");
    let mut loading = loading.lock().expect("loading buffer");
    let mut staged = staged.lock().expect("staged buffer");
    *ready = std::mem::replace(&mut *loading, buffer_from(staged.drain(..).collect()));
    ready.is_empty() && loading.is_empty()
}

/// One worker: qualify, load, compute, strictly in that order.
fn sequential_pipeline(
    index: &Index,
    pq: &PreparedQuery,
    k: usize,
    eta: usize,
    mut shared: Shared,
    mut counters: SearchCounters,
) -> Result<QueryResult> {
    let mut pool = FilePool::reader();
    loop {
        let packs = shared.qualify(index, pq, eta);
        if packs.is_empty() {
            break;
        }
        for pack in packs {
            let bytes = read_pack_bytes(index, index.pack(pack), &mut pool)?;
            counters.bytes_read += bytes.len() as u64;
            counters.packs_visited += 1;
            scan_pack_bytes(index, pack, &bytes, pq, &mut shared.knn, &mut counters);
        }
    }
    counters.lb_computations += shared.lb_computations;
    let truncated = shared.knn.len() < k;
    let mut visited: Vec<NodeId> = shared.visited.into_iter().collect();
    visited.sort_unstable();
    Ok(QueryResult {
        hits: shared.knn.into_hits(),
        counters,
        truncated,
        visited,
    })
}

struct AtomicCounters {
    packs_visited: AtomicU64,
    series_scanned: AtomicU64,
    bytes_read: AtomicU64,
    lb_computations: AtomicU64,
}

impl AtomicCounters {
    fn from(c: SearchCounters) -> Self {
        Self {
            packs_visited: AtomicU64::new(c.packs_visited),
            series_scanned: AtomicU64::new(c.series_scanned),
            bytes_read: AtomicU64::new(c.bytes_read),
            lb_computations: AtomicU64::new(c.lb_computations),
        }
    }

    fn fold(&self, c: SearchCounters) {
        self.packs_visited
            .fetch_add(c.packs_visited, Ordering::Relaxed);
        self.series_scanned
            .fetch_add(c.series_scanned, Ordering::Relaxed);
        self.bytes_read.fetch_add(c.bytes_read, Ordering::Relaxed);
        self.lb_computations
            .fetch_add(c.lb_computations, Ordering::Relaxed);
    }

    fn into_counters(self) -> SearchCounters {
        SearchCounters {
            packs_visited: self.packs_visited.into_inner(),
            series_scanned: self.series_scanned.into_inner(),
            bytes_read: self.bytes_read.into_inner(),
            lb_computations: self.lb_computations.into_inner(),
        }
    }
}
