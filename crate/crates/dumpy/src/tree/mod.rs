//! The index tree: an adaptive multi-ary node graph over iSAX words, with
//! leaf packs materialized as contiguous extents in per-subtree files.

pub mod build;
pub mod pack;
pub mod persist;
pub mod stats;
pub mod storage;
pub mod update;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dumpy_core::series::{Breakpoints, IsaxWord, Sid};

use crate::config::IndexConfig;
use crate::error::{DumpyError, Result};
use crate::saxtable::SaxTable;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Internal(NodeId),
    Pack(NodeId),
}

/// Inner node: splits its region on `csl` and routes by sid.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalNode {
    pub isax: IsaxWord,
    pub csl: Vec<u8>,
    pub routing: BTreeMap<Sid, NodeRef>,
    /// Primary series in the subtree (fuzzy copies not counted).
    pub size: u64,
    pub layer: u8,
    /// Leaf packs in the subtree.
    pub leaf_count: u32,
    /// Leaf extractions under this node since the last sibling repack.
    pub extractions: u32,
    /// Leaf file this subtree appends to (`u32::MAX` for the root).
    pub file: u32,
    pub alive: bool,
}

/// Contiguous on-disk region of one leaf pack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub file: u32,
    pub offset: u64,
    /// Slots the extent can hold before the pack must be relocated.
    pub capacity: u32,
}

/// One or more packed sibling leaves stored as a single extent.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPack {
    pub isax: IsaxWord,
    /// Sids (under the parent's csl) routed to this pack, ascending.
    pub members: Vec<Sid>,
    pub demotion_bits: u8,
    pub extent: Extent,
    /// Slots written (deleted ones included).
    pub len: u32,
    /// Non-deleted records.
    pub live: u32,
    /// Deletion bitmap over `len` slots.
    pub deleted: Vec<u64>,
    /// Could not be split (identical SAX words or exhausted bits): may
    /// exceed the leaf threshold.
    pub oversized: bool,
    pub layer: u8,
    pub alive: bool,
}

impl LeafPack {
    pub fn is_deleted(&self, slot: u32) -> bool {
        let word = (slot / 64) as usize;
        word < self.deleted.len() && self.deleted[word] >> (slot % 64) & 1 == 1
    }

    pub fn set_deleted(&mut self, slot: u32, value: bool) {
        let word = (slot / 64) as usize;
        if word >= self.deleted.len() {
            self.deleted.resize(word + 1, 0);
        }
        if value {
            self.deleted[word] |= 1 << (slot % 64);
        } else {
            self.deleted[word] &= !(1 << (slot % 64));
        }
    }

    pub fn first_deleted_slot(&self) -> Option<u32> {
        for (wi, &word) in self.deleted.iter().enumerate() {
            if word != 0 {
                let slot = wi as u32 * 64 + word.trailing_zeros();
                if slot < self.len {
                    return Some(slot);
                }
            }
        }
        None
    }
}

/// A leaf data file; extents are appended at `allocated`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafFile {
    pub name: String,
    pub allocated: u64,
}

/// The root is `internals[0]` and always splits on all `w` segments.
pub const ROOT: NodeId = 0;

#[derive(Debug)]
pub struct Index {
    pub(crate) cfg: IndexConfig,
    pub(crate) dir: PathBuf,
    pub(crate) breakpoints: Breakpoints,
    pub(crate) internals: Vec<InternalNode>,
    pub(crate) packs: Vec<LeafPack>,
    pub(crate) files: Vec<LeafFile>,
    pub(crate) sax: SaxTable,
    /// Fuzzy copies: ordinal -> packs holding a duplicate of it.
    pub(crate) duplicates: BTreeMap<u64, Vec<NodeId>>,
}

impl Index {
    pub fn config(&self) -> &IndexConfig {
        &self.cfg
    }

    pub fn directory(&self) -> &Path {
        &self.dir
    }

    pub fn breakpoints(&self) -> &Breakpoints {
        &self.breakpoints
    }

    pub fn sax_table(&self) -> &SaxTable {
        &self.sax
    }

    pub fn root(&self) -> &InternalNode {
        &self.internals[ROOT as usize]
    }

    pub fn internal(&self, id: NodeId) -> &InternalNode {
        &self.internals[id as usize]
    }

    pub fn pack(&self, id: NodeId) -> &LeafPack {
        &self.packs[id as usize]
    }

    pub fn node_isax(&self, node: NodeRef) -> &IsaxWord {
        match node {
            NodeRef::Internal(id) => &self.internal(id).isax,
            NodeRef::Pack(id) => &self.pack(id).isax,
        }
    }

    /// Packs in a subtree, counting fallback leaves too.
    pub fn subtree_leaf_count(&self, node: NodeRef) -> u32 {
        match node {
            NodeRef::Internal(id) => self.internal(id).leaf_count,
            NodeRef::Pack(_) => 1,
        }
    }

    pub fn live_series(&self) -> u64 {
        self.internals[ROOT as usize].size
    }

    /// Packs of a subtree in deterministic order (packs of a node before
    /// its child subtrees, children ascending by sid, member packs once).
    pub fn collect_subtree_packs(&self, node: NodeRef, out: &mut Vec<NodeId>) {
        match node {
            NodeRef::Pack(id) => {
                if !out.contains(&id) {
                    out.push(id);
                }
            }
            NodeRef::Internal(id) => {
                let mut seen_packs = Vec::new();
                let mut internals = Vec::new();
                for child in self.internal(id).routing.values() {
                    match child {
                        NodeRef::Pack(p) => {
                            if !seen_packs.contains(p) {
                                seen_packs.push(*p);
                            }
                        }
                        NodeRef::Internal(i) => {
                            if !internals.contains(i) {
                                internals.push(*i);
                            }
                        }
                    }
                }
                out.extend(seen_packs);
                for i in internals {
                    self.collect_subtree_packs(NodeRef::Internal(i), out);
                }
            }
        }
    }

    /// Route a SAX word to its leaf pack. `None` when routing dead-ends in
    /// a region with no node.
    pub fn route(&self, sax: &[u8]) -> Result<Option<NodeId>> {
        let mut node = ROOT;
        loop {
            let internal = self.internal(node);
            let sid = dumpy_core::promote_isax(&internal.isax, sax, &internal.csl)?;
            match internal.routing.get(&sid) {
                None => return Ok(None),
                Some(NodeRef::Pack(p)) => return Ok(Some(*p)),
                Some(NodeRef::Internal(i)) => node = *i,
            }
        }
    }

    /// Leaf data directory.
    pub fn leaves_dir(&self) -> PathBuf {
        self.dir.join("leaves")
    }

    pub fn file_path(&self, file: u32) -> PathBuf {
        self.leaves_dir().join(&self.files[file as usize].name)
    }

    /// Structural identity: same nodes, routing, packs, extents, bitmaps
    /// and duplicate placement. Raw leaf bytes are not compared here (the
    /// builder tests hash the files separately).
    pub fn structure_eq(&self, other: &Index) -> bool {
        self.cfg == other.cfg
            && self.internals == other.internals
            && self.packs == other.packs
            && self.files == other.files
            && self.sax == other.sax
            && self.duplicates == other.duplicates
    }

    pub(crate) fn alive_packs(&self) -> impl Iterator<Item = (NodeId, &LeafPack)> {
        self.packs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.alive)
            .map(|(i, p)| (i as NodeId, p))
    }

    /// Pack arena view for audits: `None` marks tombstoned entries.
    pub fn packs_for_audit(&self) -> Vec<Option<&LeafPack>> {
        self.packs
            .iter()
            .map(|p| if p.alive { Some(p) } else { None })
            .collect()
    }

    pub fn file_count(&self) -> u32 {
        self.files.len() as u32
    }

    /// Chosen-segment count of the split that produced this pack.
    pub fn parent_lambda_of_pack(&self, pack: &LeafPack) -> f64 {
        for node in self.internals.iter().filter(|n| n.alive) {
            let target = pack.members.first().and_then(|m| node.routing.get(m));
            if let Some(NodeRef::Pack(p)) = target {
                if std::ptr::eq(&self.packs[*p as usize], pack) {
                    return node.csl.len() as f64;
                }
            }
        }
        self.cfg.w as f64
    }

    /// Whether two indexes agree on every iSAX word and routing key, the
    /// property fuzzy duplication must preserve (sizes and extents differ).
    pub fn same_isax_words(&self, other: &Index) -> bool {
        self.internals.len() == other.internals.len()
            && self.packs.len() == other.packs.len()
            && self.internals.iter().zip(&other.internals).all(|(a, b)| {
                a.isax == b.isax && a.csl == b.csl && a.routing == b.routing && a.layer == b.layer
            })
            && self.packs.iter().zip(&other.packs).all(|(a, b)| {
                a.isax == b.isax
                    && a.members == b.members
                    && a.demotion_bits == b.demotion_bits
                    && a.layer == b.layer
            })
    }

    /// The pack a series' own SAX word routes to.
    pub fn primary_pack_of(&self, ordinal: u64) -> Option<NodeId> {
        if ordinal >= self.sax.count() {
            return None;
        }
        self.route(self.sax.row(ordinal)).ok().flatten()
    }

    /// Root-to-pack routing chain as (internal node, sid taken) pairs.
    pub fn path_to_pack(&self, pack: NodeId) -> Option<Vec<(NodeId, Sid)>> {
        fn walk(index: &Index, node: NodeId, pack: NodeId, path: &mut Vec<(NodeId, Sid)>) -> bool {
            for (&sid, &child) in &index.internal(node).routing {
                match child {
                    NodeRef::Pack(p) if p == pack => {
                        path.push((node, sid));
                        return true;
                    }
                    NodeRef::Internal(i) => {
                        path.push((node, sid));
                        if walk(index, i, pack, path) {
                            return true;
                        }
                        path.pop();
                    }
                    NodeRef::Pack(_) => {}
                }
            }
            false
        }
        let mut path = Vec::new();
        walk(self, ROOT, pack, &mut path).then_some(path)
    }

    /// Audit predicate for one fuzzy copy: walking toward the pack, the
    /// series' own routing must diverge from the pack's path exactly once,
    /// one bit away from a sid of the subtree it was copied into, with its
    /// PAA value inside `f * width` of the separating breakpoint.
    pub fn duplicate_in_band(&self, pack: NodeId, ordinal: u64, paa: &[f64], f: f64) -> bool {
        let Some(path) = self.path_to_pack(pack) else {
            return false;
        };
        let sax = self.sax.row(ordinal).to_vec();
        for (node, path_sid) in path {
            let internal = self.internal(node);
            let Ok(own_sid) = dumpy_core::promote_isax(&internal.isax, &sax, &internal.csl) else {
                return false;
            };
            let path_child = internal.routing.get(&path_sid).copied();
            if internal.routing.get(&own_sid).copied() == path_child {
                continue;
            }
            // first divergence: qualified against some sid of the target
            let lambda = internal.csl.len();
            return internal
                .routing
                .iter()
                .filter(|(_, &c)| Some(c) == path_child)
                .any(|(&member, _)| {
                    let diff = member ^ own_sid;
                    if diff.count_ones() != 1 {
                        return false;
                    }
                    let pos = lambda - 1 - diff.trailing_zeros() as usize;
                    let seg = internal.csl[pos] as usize;
                    let sym = internal.isax.symbol(seg);
                    let sep = self.breakpoints.split_threshold(sym.code, sym.depth);
                    let own_bit = ((own_sid >> (lambda - 1 - pos)) & 1) as u8;
                    let width = self
                        .breakpoints
                        .width((sym.code << 1) | own_bit, sym.depth + 1);
                    (paa[seg] - sep).abs() < f * width
                });
        }
        false
    }

    pub(crate) fn check_series_len(&self, len: usize) -> Result<()> {
        if len != self.cfg.n as usize {
            return Err(DumpyError::invalid(format!(
                "series length {} does not match index n {}",
                len, self.cfg.n
            )));
        }
        Ok(())
    }
}
