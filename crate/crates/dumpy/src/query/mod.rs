//! Search algorithms: single-leaf approximate search, budgeted extended
//! approximate search, fuzzy-prioritized search, and pruning-based exact
//! search in serial and pipelined-parallel form.

pub mod fuzzy;
pub mod parallel;

use std::collections::BinaryHeap;
use std::collections::HashSet;

use dumpy_core::metrics::{
    band_radius, dtw_squared_banded, ed_squared_with_cutoff, lb_isax_dtw_squared,
    lb_isax_ed_squared, lb_keogh_squared_with_cutoff,
};
use dumpy_core::series::{IsaxWord, Sid};
use dumpy_core::{DistanceKind, Envelope};

use crate::dataset::{canonicalize, lift};
use crate::error::Result;
use crate::tree::storage::{decode_record, read_pack_bytes, record_size, FilePool};
use crate::tree::{Index, NodeId, NodeRef, ROOT};

/// Instrumentation shared by every search mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct SearchCounters {
    pub packs_visited: u64,
    pub series_scanned: u64,
    pub bytes_read: u64,
    pub lb_computations: u64,
}

impl std::ops::AddAssign for SearchCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.packs_visited += rhs.packs_visited;
        self.series_scanned += rhs.series_scanned;
        self.bytes_read += rhs.bytes_read;
        self.lb_computations += rhs.lb_computations;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Hit {
    pub ordinal: u64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// k nearest hits, ascending by (distance, ordinal).
    pub hits: Vec<Hit>,
    pub counters: SearchCounters,
    /// Fewer than k series were available to the search.
    pub truncated: bool,
    /// Packs scanned, ascending; instrumentation for trace audits.
    pub visited: Vec<NodeId>,
}

/// A query lifted into its canonical form with every derived artifact the
/// search paths need (PAA, SAX word, DTW envelope and its segment means).
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub canonical: Vec<f64>,
    pub paa: Vec<f64>,
    pub sax: Vec<u8>,
    pub kind: DistanceKind,
    envelope: Option<Envelope>,
    env_upper_paa: Vec<f64>,
    env_lower_paa: Vec<f64>,
}

impl PreparedQuery {
    pub fn new(index: &Index, raw: &[f32], kind: DistanceKind) -> Result<Self> {
        index.check_series_len(raw.len())?;
        let canonical = lift(&canonicalize(raw)?);
        let w = index.cfg.w as usize;
        let paa = dumpy_core::paa(&canonical, w)?;
        let sax = dumpy_core::sax_from_paa(&paa, index.breakpoints());
        let (envelope, env_upper_paa, env_lower_paa) = match kind {
            DistanceKind::Ed => (None, Vec::new(), Vec::new()),
            DistanceKind::Dtw { window_ratio } => {
                let env = Envelope::new(&canonical, band_radius(canonical.len(), window_ratio));
                let (u, l) = env.paa_means(w)?;
                (Some(env), u, l)
            }
        };
        Ok(Self {
            canonical,
            paa,
            sax,
            kind,
            envelope,
            env_upper_paa,
            env_lower_paa,
        })
    }

    fn radius(&self) -> usize {
        match self.kind {
            DistanceKind::Ed => 0,
            DistanceKind::Dtw { window_ratio } => band_radius(self.canonical.len(), window_ratio),
        }
    }
}

/// f64 ordered by total order; distances are never NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OrdF64(pub f64);

impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Bounded best-k collector over squared distances with ascending-ordinal
/// tie-breaking. An optional cutoff floor lets parallel workers collect
/// against a snapshot of the global k-th distance.
#[derive(Debug, Clone)]
pub(crate) struct KnnCollector {
    k: usize,
    floor_sq: f64,
    heap: BinaryHeap<(OrdF64, u64)>,
}

impl KnnCollector {
    pub fn new(k: usize) -> Self {
        Self::with_floor(k, f64::INFINITY)
    }

    pub fn with_floor(k: usize, floor_sq: f64) -> Self {
        Self {
            k,
            floor_sq,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.k
    }

    /// Squared distance a candidate must not exceed to be useful.
    pub fn cutoff_sq(&self) -> f64 {
        if self.is_full() {
            self.heap.peek().expect("full heap").0 .0.min(self.floor_sq)
        } else {
            self.floor_sq
        }
    }

    pub fn into_entries(self) -> Vec<(f64, u64)> {
        self.heap
            .into_vec()
            .into_iter()
            .map(|(sq, ord)| (sq.0, ord))
            .collect()
    }

    pub fn offer(&mut self, dist_sq: f64, ordinal: u64) {
        let entry = (OrdF64(dist_sq), ordinal);
        if self.heap.len() < self.k {
            self.heap.push(entry);
        } else if let Some(&worst) = self.heap.peek() {
            if entry < worst {
                self.heap.pop();
                self.heap.push(entry);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn into_hits(self) -> Vec<Hit> {
        let mut entries: Vec<(OrdF64, u64)> = self.heap.into_vec();
        entries.sort_unstable();
        entries
            .into_iter()
            .map(|(sq, ordinal)| Hit {
                ordinal,
                distance: sq.0.sqrt(),
            })
            .collect()
    }
}

impl Index {
    /// The lower-bounding distance the search engines prune with: the
    /// minimum over the pack's member-sid boxes under the query's distance
    /// kind (at most the demoted-word bound, never above a true distance).
    pub fn pack_lower_bound(&self, pq: &PreparedQuery, pack: NodeId) -> f64 {
        let mut scratch = SearchCounters::default();
        if let Some(path) = self.path_to_pack(pack) {
            let (parent, _) = *path.last().expect("packs have parents");
            let sids: Vec<Sid> = self
                .internal(parent)
                .routing
                .iter()
                .filter(|(_, &c)| c == NodeRef::Pack(pack))
                .map(|(&s, _)| s)
                .collect();
            child_lb_sq(self, pq, parent, NodeRef::Pack(pack), &sids, &mut scratch).sqrt()
        } else {
            node_lb_sq(self, pq, &self.pack(pack).isax, &mut scratch).sqrt()
        }
    }
}

/// Squared lower bound from the query to everything under an iSAX word.
pub(crate) fn node_lb_sq(
    index: &Index,
    pq: &PreparedQuery,
    isax: &IsaxWord,
    counters: &mut SearchCounters,
) -> f64 {
    counters.lb_computations += 1;
    let n = index.cfg.n as usize;
    match pq.kind {
        DistanceKind::Ed => lb_isax_ed_squared(&pq.paa, isax, index.breakpoints(), n),
        DistanceKind::Dtw { .. } => lb_isax_dtw_squared(
            &pq.env_upper_paa,
            &pq.env_lower_paa,
            isax,
            index.breakpoints(),
            n,
        ),
    }
}

/// Scan every live record of a pack, folding candidates into the collector.
/// Distance kernels abandon against the current k-th best; abandoned
/// records can never enter the result, so reported distances stay exact.
pub(crate) fn scan_pack(
    index: &Index,
    pack_id: NodeId,
    pq: &PreparedQuery,
    knn: &mut KnnCollector,
    counters: &mut SearchCounters,
    pool: &mut FilePool,
) -> Result<()> {
    let pack = index.pack(pack_id);
    let bytes = read_pack_bytes(index, pack, pool)?;
    counters.packs_visited += 1;
    counters.bytes_read += bytes.len() as u64;
    scan_pack_bytes(index, pack_id, &bytes, pq, knn, counters);
    Ok(())
}

/// The compute half of a pack scan, usable on pre-loaded buffers.
pub(crate) fn scan_pack_bytes(
    index: &Index,
    pack_id: NodeId,
    bytes: &[u8],
    pq: &PreparedQuery,
    knn: &mut KnnCollector,
    counters: &mut SearchCounters,
) {
    let pack = index.pack(pack_id);
    let rec = record_size(&index.cfg);
    debug_assert!(bytes.len() >= pack.len as usize * rec);
    let n = index.cfg.n as usize;
    let mut values = vec![0f64; n];
    let radius = pq.radius();
    for slot in 0..pack.len {
        if pack.is_deleted(slot) {
            continue;
        }
        let view = decode_record(
            &bytes[slot as usize * rec..(slot as usize + 1) * rec],
            &index.cfg,
        );
        crate::tree::storage::decode_values(view.values, &mut values);
        counters.series_scanned += 1;
        let cutoff = knn.cutoff_sq();
        match pq.kind {
            DistanceKind::Ed => {
                if let Some(sq) = ed_squared_with_cutoff(&pq.canonical, &values, cutoff) {
                    knn.offer(sq, view.ordinal);
                }
            }
            DistanceKind::Dtw { .. } => {
                let env = pq.envelope.as_ref().expect("DTW queries carry an envelope");
                if lb_keogh_squared_with_cutoff(env, &values, cutoff).is_some() {
                    if let Some(sq) = dtw_squared_banded(&pq.canonical, &values, radius, cutoff) {
                        knn.offer(sq, view.ordinal);
                    }
                }
            }
        }
    }
}

/// Children of an internal node deduplicated (a pack spans several sids),
/// each with every sid routing to it, smallest first.
pub(crate) fn distinct_children(index: &Index, node: NodeId) -> Vec<(NodeRef, Vec<Sid>)> {
    let mut seen: Vec<(NodeRef, Vec<Sid>)> = Vec::new();
    for (&sid, &child) in &index.internal(node).routing {
        match seen.iter_mut().find(|(c, _)| *c == child) {
            Some((_, sids)) => sids.push(sid),
            None => seen.push((child, vec![sid])),
        }
    }
    seen
}

/// Squared lower bound of one child of `parent`. Internal children use
/// their iSAX word. A pack is bounded by the minimum over its member-sid
/// boxes: every stored series lies inside one of them, so the bound stays
/// sound while staying tight for demoted packs.
pub(crate) fn child_lb_sq(
    index: &Index,
    pq: &PreparedQuery,
    parent: NodeId,
    child: NodeRef,
    sids: &[Sid],
    counters: &mut SearchCounters,
) -> f64 {
    match child {
        NodeRef::Internal(_) => node_lb_sq(index, pq, index.node_isax(child), counters),
        NodeRef::Pack(_) => {
            let node = index.internal(parent);
            sids.iter()
                .map(|&sid| {
                    let word = node.isax.extend(&node.csl, sid);
                    node_lb_sq(index, pq, &word, counters)
                })
                .fold(f64::INFINITY, f64::min)
        }
    }
}

pub(crate) struct TraversalState {
    pub knn: KnnCollector,
    pub counters: SearchCounters,
    pub visited: HashSet<NodeId>,
}

impl TraversalState {
    pub fn new(k: usize) -> Self {
        Self {
            knn: KnnCollector::new(k),
            counters: SearchCounters::default(),
            visited: HashSet::new(),
        }
    }

    fn finish(self, _index: &Index, k: usize) -> QueryResult {
        let truncated = self.knn.len() < k;
        let mut visited: Vec<NodeId> = self.visited.into_iter().collect();
        visited.sort_unstable();
        QueryResult {
            hits: self.knn.into_hits(),
            counters: self.counters,
            truncated,
            visited,
        }
    }
}

/// Packs of a subtree in deterministic order, the unit the `nbr` budget
/// counts.
fn visit_subtree(
    index: &Index,
    root: NodeRef,
    pq: &PreparedQuery,
    state: &mut TraversalState,
    budget: &mut i64,
    strict: bool,
    pool: &mut FilePool,
) -> Result<()> {
    let mut packs = Vec::new();
    index.collect_subtree_packs(root, &mut packs);
    for pack in packs {
        if strict && *budget <= 0 {
            return Ok(());
        }
        if state.visited.contains(&pack) {
            continue;
        }
        scan_pack(index, pack, pq, &mut state.knn, &mut state.counters, pool)?;
        state.visited.insert(pack);
        *budget -= 1;
        // without `strict` a started subtree is finished even when the
        // budget runs out mid-way; the caller stops before the next one
    }
    Ok(())
}

/// Core of the extended approximate search: descend while the subtree holds
/// more packs than the budget, then visit the stopping node's siblings in
/// ascending lower-bound order, whole subtrees at a time.
///
/// With `strict` the budget is enforced per pack (the fuzzy search promises
/// never to exceed it); otherwise a started subtree is finished.
pub(crate) fn extended_core(
    index: &Index,
    pq: &PreparedQuery,
    nbr: usize,
    state: &mut TraversalState,
    budget: &mut i64,
    strict: bool,
) -> Result<()> {
    let mut pool = FilePool::reader();
    let mut parent: Option<NodeId> = None;
    let mut node = NodeRef::Internal(ROOT);
    while index.subtree_leaf_count(node) > nbr as u32 {
        let id = match node {
            NodeRef::Internal(id) => id,
            NodeRef::Pack(_) => unreachable!("packs hold exactly one leaf"),
        };
        parent = Some(id);
        node = descend_step(index, pq, id, &mut state.counters)?;
    }

    let ranked = match parent {
        Some(p) => {
            let mut ranked: Vec<(OrdF64, bool, Sid, NodeRef)> = distinct_children(index, p)
                .into_iter()
                .map(|(r, sids)| {
                    let lb = child_lb_sq(index, pq, p, r, &sids, &mut state.counters);
                    (OrdF64(lb), r != node, sids[0], r)
                })
                .collect();
            ranked.sort_unstable_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
            ranked
        }
        None => vec![(OrdF64(0.0), false, 0, NodeRef::Internal(ROOT))],
    };

    for (_, _, _, r) in ranked {
        if *budget <= 0 {
            break;
        }
        visit_subtree(index, r, pq, state, budget, strict, &mut pool)?;
    }
    Ok(())
}

/// One routing step of a descent. A sid with no node (the query lies in an
/// unpopulated region) falls back to the child with the smallest lower
/// bound, ties to the smallest sid, so every descent reaches a real leaf.
pub(crate) fn descend_step(
    index: &Index,
    pq: &PreparedQuery,
    node: NodeId,
    counters: &mut SearchCounters,
) -> Result<NodeRef> {
    let internal = index.internal(node);
    let sid = dumpy_core::promote_isax(&internal.isax, &pq.sax, &internal.csl)?;
    if let Some(&child) = internal.routing.get(&sid) {
        return Ok(child);
    }
    Ok(distinct_children(index, node)
        .into_iter()
        .map(|(r, sids)| {
            let lb = child_lb_sq(index, pq, node, r, &sids, counters);
            (OrdF64(lb), sids[0], r)
        })
        .min_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)))
        .expect("internal nodes always have children")
        .2)
}

/// Classical approximate search: the query's own leaf pack only.
pub fn approx_search(index: &Index, pq: &PreparedQuery, k: usize) -> Result<QueryResult> {
    extended_approx_search(index, pq, k, 1)
}

/// Extended approximate search over an `nbr`-pack budget.
pub fn extended_approx_search(
    index: &Index,
    pq: &PreparedQuery,
    k: usize,
    nbr: usize,
) -> Result<QueryResult> {
    let mut state = TraversalState::new(k);
    let mut budget = nbr.max(1) as i64;
    extended_core(index, pq, nbr.max(1), &mut state, &mut budget, false)?;
    Ok(state.finish(index, k))
}

pub(crate) struct CandidateQueueEntry {
    pub lb: OrdF64,
    pub seq: u64,
    pub node: NodeRef,
}

impl PartialEq for CandidateQueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.lb == other.lb && self.seq == other.seq
    }
}
impl Eq for CandidateQueueEntry {}
impl PartialOrd for CandidateQueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for CandidateQueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap: invert for smallest-bound-first
        (other.lb, other.seq).cmp(&(self.lb, self.seq))
    }
}

/// Exact kNN: best-first traversal with lower-bound pruning, seeded by the
/// single-leaf approximate answer. Nodes are pruned only when their bound
/// strictly exceeds the current k-th distance, which keeps the result
/// set-identical to brute force under ascending-ordinal tie-breaking.
pub fn exact_search(index: &Index, pq: &PreparedQuery, k: usize) -> Result<QueryResult> {
    let mut state = TraversalState::new(k);
    let mut seed_budget = 1i64;
    extended_core(index, pq, 1, &mut state, &mut seed_budget, false)?;

    let mut pool = FilePool::reader();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(CandidateQueueEntry {
        lb: OrdF64(0.0),
        seq,
        node: NodeRef::Internal(ROOT),
    });
    while let Some(entry) = heap.pop() {
        if state.knn.is_full() && entry.lb.0 > state.knn.cutoff_sq() {
            break;
        }
        match entry.node {
            NodeRef::Internal(id) => {
                for (child, sids) in distinct_children(index, id) {
                    let lb = child_lb_sq(index, pq, id, child, &sids, &mut state.counters);
                    if !state.knn.is_full() || lb <= state.knn.cutoff_sq() {
                        seq += 1;
                        heap.push(CandidateQueueEntry {
                            lb: OrdF64(lb),
                            seq,
                            node: child,
                        });
                    }
                }
            }
            NodeRef::Pack(id) => {
                if state.visited.insert(id) {
                    scan_pack(
                        index,
                        id,
                        pq,
                        &mut state.knn,
                        &mut state.counters,
                        &mut pool,
                    )?;
                }
            }
        }
    }
    Ok(state.finish(index, k))
}
