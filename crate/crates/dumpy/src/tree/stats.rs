//! Index structure statistics: leaf and node counts, height, fill factor
//! and the in-memory footprint of the structure.

use serde::Serialize;

use crate::tree::{Index, NodeRef, ROOT};

#[derive(Debug, Clone, Serialize)]
pub struct IndexStats {
    pub leaf_count: u64,
    pub node_count: u64,
    pub height: u32,
    pub series: u64,
    pub duplicate_copies: u64,
    pub avg_fill_factor: f64,
    pub oversized_leaves: u64,
    pub memory_bytes: u64,
}

impl Index {
    pub fn stats(&self) -> IndexStats {
        let mut leaf_count = 0u64;
        let mut stored = 0u64;
        let mut oversized = 0u64;
        for (_, pack) in self.alive_packs() {
            leaf_count += 1;
            stored += pack.live as u64;
            if pack.oversized {
                oversized += 1;
            }
        }
        let internal_count = self.internals.iter().filter(|n| n.alive).count() as u64;
        let height = self.height(NodeRef::Internal(ROOT));
        let duplicate_copies = self
            .duplicates
            .values()
            .map(|v| v.len() as u64)
            .sum::<u64>();
        let avg_fill_factor = if leaf_count == 0 {
            0.0
        } else {
            stored as f64 / (leaf_count as f64 * self.cfg.th as f64)
        };
        IndexStats {
            leaf_count,
            node_count: internal_count + leaf_count,
            height,
            series: self.live_series(),
            duplicate_copies,
            avg_fill_factor,
            oversized_leaves: oversized,
            memory_bytes: self.memory_bytes(),
        }
    }

    fn height(&self, node: NodeRef) -> u32 {
        match node {
            NodeRef::Pack(_) => 1,
            NodeRef::Internal(id) => {
                let n = self.internal(id);
                1 + n
                    .routing
                    .values()
                    .map(|&c| self.height(c))
                    .max()
                    .unwrap_or(0)
            }
        }
    }

    /// Approximate in-memory bytes of the structure: per-segment iSAX words,
    /// chosen-segment lists, routing entries and pack bookkeeping.
    fn memory_bytes(&self) -> u64 {
        let w = self.cfg.w as u64;
        let mut total = 0u64;
        for node in self.internals.iter().filter(|n| n.alive) {
            total += 2 * w; // isax
            total += node.csl.len() as u64;
            total += node.routing.len() as u64 * 13; // sid + tagged child id
            total += 24; // counters
        }
        for (_, pack) in self.alive_packs() {
            total += 2 * w;
            total += pack.members.len() as u64 * 4;
            total += pack.deleted.len() as u64 * 8;
            total += 40; // extent + counters
        }
        total
    }
}
