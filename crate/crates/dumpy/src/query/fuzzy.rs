//! Fuzzy-prioritized approximate search on a plain index.
//!
//! While routing to the target leaf, every chosen segment whose breakpoint
//! lies within the fuzzy band of the query's PAA value pushes the 1-bit
//! sibling node into a priority queue keyed by that estimated distance.
//! After the target leaf, fuzzy nodes are searched closest-first (internal
//! ones resolved through adapted routing), and any remaining budget goes to
//! the extended approximate search, skipping visited packs. The total pack
//! budget is `nbr` across all three phases.

use std::collections::BinaryHeap;

use dumpy_core::series::Sid;

use crate::error::{DumpyError, Result};
use crate::query::{extended_core, scan_pack, OrdF64, PreparedQuery, QueryResult, TraversalState};
use crate::tree::storage::FilePool;
use crate::tree::{Index, NodeId, NodeRef, ROOT};

struct FuzzyEntry {
    es_dis: OrdF64,
    seq: u64,
    node: NodeRef,
}

impl PartialEq for FuzzyEntry {
    fn eq(&self, other: &Self) -> bool {
        (self.es_dis, self.seq) == (other.es_dis, other.seq)
    }
}
impl Eq for FuzzyEntry {}
impl PartialOrd for FuzzyEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FuzzyEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (other.es_dis, other.seq).cmp(&(self.es_dis, self.seq))
    }
}

/// Fuzzy-prioritized search with an `nbr`-pack budget and band fraction `f`.
pub fn fuzzy_search(
    index: &Index,
    pq: &PreparedQuery,
    k: usize,
    nbr: usize,
    f: f64,
) -> Result<QueryResult> {
    let mut state = TraversalState::new(k);
    let mut budget = nbr.max(1) as i64;
    let mut pool = FilePool::reader();
    let bp = index.breakpoints();

    // phase 1: route to the target leaf, collecting fuzzy siblings; a sid
    // with no node falls back to the smallest-bound child exactly like the
    // extended search
    let mut queue: BinaryHeap<FuzzyEntry> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut node = ROOT;
    let target: NodeId = loop {
        let internal = index.internal(node);
        let sid = dumpy_core::promote_isax(&internal.isax, &pq.sax, &internal.csl)?;
        let child = crate::query::descend_step(index, pq, node, &mut state.counters)?;
        let lambda = internal.csl.len();
        for (pos, &seg) in internal.csl.iter().enumerate() {
            let sym = internal.isax.symbol(seg as usize);
            let breakpoint = bp.split_threshold(sym.code, sym.depth);
            let es_dis = (pq.paa[seg as usize] - breakpoint).abs();
            let own_bit = ((sid >> (lambda - 1 - pos)) & 1) as u8;
            let range = bp.width((sym.code << 1) | own_bit, sym.depth + 1);
            if es_dis < f * range {
                let sibling: Sid = sid ^ (1 << (lambda - 1 - pos));
                if let Some(&sib) = internal.routing.get(&sibling) {
                    if sib != child {
                        seq += 1;
                        queue.push(FuzzyEntry {
                            es_dis: OrdF64(es_dis),
                            seq,
                            node: sib,
                        });
                    }
                }
            }
        }
        match child {
            NodeRef::Pack(p) => break p,
            NodeRef::Internal(i) => node = i,
        }
    };

    if budget > 0 && state.visited.insert(target) {
        scan_pack(
            index,
            target,
            pq,
            &mut state.knn,
            &mut state.counters,
            &mut pool,
        )?;
        budget -= 1;
    }

    // phase 2: fuzzy nodes in ascending estimated distance; duplicates of
    // one node resolve to its first (smallest-distance) entry
    while budget > 0 {
        let Some(entry) = queue.pop() else { break };
        let pack = match entry.node {
            NodeRef::Pack(p) => p,
            NodeRef::Internal(i) => adapted_routing(index, pq, i)?,
        };
        if state.visited.insert(pack) {
            scan_pack(
                index,
                pack,
                pq,
                &mut state.knn,
                &mut state.counters,
                &mut pool,
            )?;
            budget -= 1;
        }
    }

    // phase 3: remaining budget spent like the extended search
    if budget > 0 {
        extended_core(index, pq, nbr.max(1), &mut state, &mut budget, true)?;
    }

    let truncated = state.knn.len() < k;
    let mut visited: Vec<NodeId> = state.visited.into_iter().collect();
    visited.sort_unstable();
    Ok(QueryResult {
        hits: state.knn.into_hits(),
        counters: state.counters,
        truncated,
        visited,
    })
}

/// Descend a fuzzy node to the leaf nearest the query: find the one segment
/// where the node's label is not a prefix of the query's SAX word, then
/// route with that segment's bit pinned toward the query's side.
pub fn adapted_routing(index: &Index, pq: &PreparedQuery, fuzzy: NodeId) -> Result<NodeId> {
    let start = index.internal(fuzzy);
    let mismatch: Vec<usize> = (0..start.isax.segment_count())
        .filter(|&seg| !start.isax.segment_is_prefix(seg, pq.sax[seg]))
        .collect();
    let &special = mismatch.first().ok_or_else(|| {
        DumpyError::invalid("adapted routing requires a node off the query's path")
    })?;
    let label = start.isax.symbol(special);
    let pinned_bit = !(label.code & 1) & 1;

    let mut node = fuzzy;
    let mut counters_scratch = crate::query::SearchCounters::default();
    loop {
        let internal = index.internal(node);
        let sid = dumpy_core::promote_isax_fixed(
            &internal.isax,
            &pq.sax,
            &internal.csl,
            special as u8,
            pinned_bit,
        )?;
        let next = match internal.routing.get(&sid) {
            Some(r) => *r,
            None => {
                // pinned region is empty: fall back to the reachable child
                // with the smallest lower bound (ties to the smallest sid)
                crate::query::distinct_children(index, node)
                    .into_iter()
                    .map(|(r, sids)| {
                        let lb = crate::query::child_lb_sq(
                            index,
                            pq,
                            node,
                            r,
                            &sids,
                            &mut counters_scratch,
                        );
                        (OrdF64(lb), sids[0], r)
                    })
                    .min_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)))
                    .expect("internal nodes always have children")
                    .2
            }
        };
        match next {
            NodeRef::Pack(p) => return Ok(p),
            NodeRef::Internal(i) => node = i,
        }
    }
}
