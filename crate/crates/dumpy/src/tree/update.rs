//! Insertions and deletions.
//!
//! Inserts route to the target pack and reuse deleted slots first. A full
//! pack either has the target leaf extracted from it (multi-member packs;
//! sibling repacking is deferred and batched) or is re-split through the
//! standard split-and-pack workflow (single-member packs). Deletes set a
//! bit in the pack's deletion bitmap; queries skip those slots, and empty
//! packs are unlinked and their extents freed.

use std::collections::HashMap;

use dumpy_core::series::Sid;

use crate::dataset::canonicalize;
use crate::error::Result;
use crate::saxtable::sax_word_of;
use crate::tree::build::{grow_subtree, GrowContext};
use crate::tree::pack::{agreed_bits, pack_leaves, LeafCandidate};
use crate::tree::storage::{
    decode_record, encode_record, preallocate, read_pack_bytes, record_size, write_record_at,
    FilePool,
};
use crate::tree::{Extent, Index, NodeId, NodeRef, ROOT};

const MIN_PACK_CAPACITY: u32 = 8;

impl Index {
    /// Insert one series; returns its ordinal.
    pub fn insert(&mut self, raw: &[f32]) -> Result<u64> {
        self.check_series_len(raw.len())?;
        let canonical = canonicalize(raw)?;
        let sax = sax_word_of(&canonical, self.cfg.w as usize, &self.breakpoints)?;
        let ordinal = self.sax.count();
        self.sax.push_row(&sax);

        let rec = record_size(&self.cfg);
        let mut record = Vec::with_capacity(rec);
        encode_record(&mut record, ordinal, &canonical, &sax);
        self.insert_record(&record, &sax)?;
        Ok(ordinal)
    }

    /// Insert an already-encoded record (used by the split workflows too).
    fn insert_record(&mut self, record: &[u8], sax: &[u8]) -> Result<()> {
        loop {
            let (path, slot) = self.descend_for_insert(sax)?;
            let pack_id = slot;
            let pack = &self.packs[pack_id as usize];
            if !pack.oversized && pack.live + 1 > self.cfg.th {
                if self.resolve_overflow(&path, pack_id, record)? {
                    // the re-split placed the incoming record already
                    for &(node, _) in &path {
                        self.internals[node as usize].size += 1;
                    }
                    return Ok(());
                }
                continue; // extraction freed room: re-descend
            }
            self.store_record(pack_id, record)?;
            for &(node, _) in &path {
                self.internals[node as usize].size += 1;
            }
            return Ok(());
        }
    }

    /// Walk the routing tables; create a fresh pack when a sid has no node.
    /// Returns the internal path (node, sid taken) and the target pack.
    fn descend_for_insert(&mut self, sax: &[u8]) -> Result<(Vec<(NodeId, Sid)>, NodeId)> {
        let mut path = Vec::new();
        let mut node = ROOT;
        loop {
            let internal = &self.internals[node as usize];
            let sid = dumpy_core::promote_isax(&internal.isax, sax, &internal.csl)?;
            path.push((node, sid));
            match internal.routing.get(&sid) {
                Some(NodeRef::Pack(p)) => return Ok((path, *p)),
                Some(NodeRef::Internal(i)) => node = *i,
                None => {
                    let pack_id = self.create_pack_for(node, sid)?;
                    for &(n, _) in &path {
                        self.internals[n as usize].leaf_count += 1;
                    }
                    return Ok((path, pack_id));
                }
            }
        }
    }

    /// New empty pack for a previously unpopulated sid.
    fn create_pack_for(&mut self, node: NodeId, sid: Sid) -> Result<NodeId> {
        let internal = &self.internals[node as usize];
        let isax = internal.isax.extend(&internal.csl, sid);
        let layer = internal.layer + 1;
        let file = if node == ROOT {
            let name = format!("l1p{sid:05}.bin");
            self.new_leaf_file(name)?
        } else {
            internal.file
        };
        let extent = self.allocate_extent(file, MIN_PACK_CAPACITY)?;
        let pack_id = self.packs.len() as NodeId;
        self.packs.push(crate::tree::LeafPack {
            isax,
            members: vec![sid],
            demotion_bits: 0,
            extent,
            len: 0,
            live: 0,
            deleted: Vec::new(),
            oversized: false,
            layer,
            alive: true,
        });
        self.internals[node as usize]
            .routing
            .insert(sid, NodeRef::Pack(pack_id));
        Ok(pack_id)
    }

    fn new_leaf_file(&mut self, name: String) -> Result<u32> {
        if let Some(existing) = self.files.iter().position(|f| f.name == name) {
            return Ok(existing as u32);
        }
        let id = self.files.len() as u32;
        self.files
            .push(crate::tree::LeafFile { name, allocated: 0 });
        Ok(id)
    }

    fn allocate_extent(&mut self, file: u32, capacity: u32) -> Result<Extent> {
        let rec = record_size(&self.cfg) as u64;
        let offset = self.files[file as usize].allocated;
        self.files[file as usize].allocated += capacity as u64 * rec;
        let path = self.leaves_dir().join(&self.files[file as usize].name);
        preallocate(&path, self.files[file as usize].allocated)?;
        Ok(Extent {
            file,
            offset,
            capacity,
        })
    }

    /// Write a record into a pack, reusing deleted slots first, then free
    /// capacity, else relocating the extent with doubled capacity.
    fn store_record(&mut self, pack_id: NodeId, record: &[u8]) -> Result<()> {
        let mut pool = FilePool::writer();
        if let Some(slot) = self.packs[pack_id as usize].first_deleted_slot() {
            write_record_at(self, &self.packs[pack_id as usize], slot, record, &mut pool)?;
            let pack = &mut self.packs[pack_id as usize];
            pack.set_deleted(slot, false);
            pack.live += 1;
            return Ok(());
        }
        let (len, capacity) = (
            self.packs[pack_id as usize].len,
            self.packs[pack_id as usize].extent.capacity,
        );
        if len == capacity {
            self.grow_extent(pack_id)?;
        }
        write_record_at(self, &self.packs[pack_id as usize], len, record, &mut pool)?;
        let pack = &mut self.packs[pack_id as usize];
        pack.len += 1;
        pack.live += 1;
        Ok(())
    }

    fn grow_extent(&mut self, pack_id: NodeId) -> Result<()> {
        let mut pool = FilePool::reader();
        let bytes = read_pack_bytes(self, &self.packs[pack_id as usize], &mut pool)?;
        let (file, len) = {
            let p = &self.packs[pack_id as usize];
            (p.extent.file, p.len)
        };
        let new_capacity = (len * 2).max(MIN_PACK_CAPACITY);
        let extent = self.allocate_extent(file, new_capacity)?;
        let path = self.file_path(file);
        crate::tree::storage::write_bytes_at(&path, extent.offset, &bytes)?;
        self.packs[pack_id as usize].extent = extent;
        Ok(())
    }

    /// A full pack is in the way: extract the target leaf from a multi-node
    /// pack (returns false, the caller retries), or re-split a single-node
    /// pack through the standard workflow with the incoming record included
    /// (returns true, the record is placed).
    fn resolve_overflow(
        &mut self,
        path: &[(NodeId, Sid)],
        pack_id: NodeId,
        incoming: &[u8],
    ) -> Result<bool> {
        let &(parent, sid) = path.last().expect("packs always have a parent");
        if self.packs[pack_id as usize].members.len() > 1 {
            self.extract_member(parent, pack_id, sid)?;
            self.internals[parent as usize].extractions += 1;
            for &(n, _) in path {
                self.internals[n as usize].leaf_count += 1;
            }
            if self.internals[parent as usize].extractions >= self.cfg.repack_threshold {
                self.repack_siblings(parent, path)?;
            }
            Ok(false)
        } else {
            self.split_pack(parent, pack_id, path, incoming)?;
            Ok(true)
        }
    }

    /// Live records of a pack in slot order.
    fn live_records(&self, pack_id: NodeId) -> Result<Vec<Vec<u8>>> {
        let rec = record_size(&self.cfg);
        let mut pool = FilePool::reader();
        let pack = &self.packs[pack_id as usize];
        let bytes = read_pack_bytes(self, pack, &mut pool)?;
        let mut out = Vec::with_capacity(pack.live as usize);
        for slot in 0..pack.len {
            if !pack.is_deleted(slot) {
                out.push(bytes[slot as usize * rec..(slot as usize + 1) * rec].to_vec());
            }
        }
        Ok(out)
    }

    fn record_sid_under(&self, parent: NodeId, record: &[u8]) -> Result<Sid> {
        let internal = &self.internals[parent as usize];
        let view = decode_record(record, &self.cfg);
        Ok(dumpy_core::promote_isax(
            &internal.isax,
            view.sax,
            &internal.csl,
        )?)
    }

    /// Pull the records of one member sid out of a pack into a fresh pack;
    /// the remainder keeps the (shrunken) pack identity.
    fn extract_member(&mut self, parent: NodeId, pack_id: NodeId, sid: Sid) -> Result<()> {
        let records = self.live_records(pack_id)?;
        let mut target = Vec::new();
        let mut rest = Vec::new();
        for record in records {
            if self.record_sid_under(parent, &record)? == sid {
                target.push(record);
            } else {
                rest.push(record);
            }
        }
        let file = self.packs[pack_id as usize].extent.file;

        // fresh pack for the extracted leaf
        let parent_node = &self.internals[parent as usize];
        let new_isax = parent_node.isax.extend(&parent_node.csl, sid);
        let layer = self.packs[pack_id as usize].layer;
        let new_pack = self.packs.len() as NodeId;
        let extent =
            self.allocate_extent(file, (target.len() as u32 * 2).max(MIN_PACK_CAPACITY))?;
        self.packs.push(crate::tree::LeafPack {
            isax: new_isax,
            members: vec![sid],
            demotion_bits: 0,
            extent,
            len: 0,
            live: 0,
            deleted: Vec::new(),
            oversized: false,
            layer,
            alive: true,
        });
        self.rewrite_pack(new_pack, &target)?;
        self.internals[parent as usize]
            .routing
            .insert(sid, NodeRef::Pack(new_pack));
        self.retarget_duplicates(&target, pack_id, new_pack);

        // shrink the remainder in place
        let lambda = self.internals[parent as usize].csl.len();
        let (members, parent_isax, csl) = {
            let p = &self.packs[pack_id as usize];
            let parent_node = &self.internals[parent as usize];
            let members: Vec<Sid> = p.members.iter().copied().filter(|&m| m != sid).collect();
            (members, parent_node.isax.clone(), parent_node.csl.clone())
        };
        let mut isax = parent_isax;
        for (pos, bit) in agreed_bits(&members, lambda) {
            isax.refine(csl[pos] as usize, bit);
        }
        let or_mask = members.iter().fold(0, |a, &s| a | s);
        let and_mask = members.iter().fold(Sid::MAX, |a, &s| a & s);
        let extent = self.allocate_extent(file, (rest.len() as u32 * 2).max(MIN_PACK_CAPACITY))?;
        {
            let p = &mut self.packs[pack_id as usize];
            p.isax = isax;
            p.members = members;
            p.demotion_bits = (or_mask ^ and_mask).count_ones() as u8;
            p.extent = extent;
            p.len = 0;
            p.live = 0;
            p.deleted.clear();
        }
        self.rewrite_pack(pack_id, &rest)?;
        Ok(())
    }

    /// Replace a pack's contents wholesale (extent already sized).
    fn rewrite_pack(&mut self, pack_id: NodeId, records: &[Vec<u8>]) -> Result<()> {
        let rec = record_size(&self.cfg);
        let mut bytes = Vec::with_capacity(records.len() * rec);
        for r in records {
            bytes.extend_from_slice(r);
        }
        let pack = &self.packs[pack_id as usize];
        debug_assert!(records.len() as u32 <= pack.extent.capacity || pack.oversized);
        let path = self.file_path(pack.extent.file);
        crate::tree::storage::write_bytes_at(&path, pack.extent.offset, &bytes)?;
        let pack = &mut self.packs[pack_id as usize];
        pack.len = records.len() as u32;
        pack.live = records.len() as u32;
        pack.deleted = vec![0; (records.len() + 63) / 64];
        Ok(())
    }

    /// Point the duplicates map at a record's new pack after it moved.
    fn retarget_duplicates(&mut self, records: &[Vec<u8>], from: NodeId, to: NodeId) {
        for record in records {
            let ordinal = u64::from_le_bytes(record[..8].try_into().expect("record header"));
            if let Some(list) = self.duplicates.get_mut(&ordinal) {
                for slot in list.iter_mut() {
                    if *slot == from {
                        *slot = to;
                    }
                }
            }
        }
    }

    /// Re-split an overfull single-leaf pack through the standard workflow,
    /// growing a subtree from its SAX rows (the incoming record included)
    /// in place.
    fn split_pack(
        &mut self,
        parent: NodeId,
        pack_id: NodeId,
        path: &[(NodeId, Sid)],
        incoming: &[u8],
    ) -> Result<()> {
        let mut records = self.live_records(pack_id)?;
        records.push(incoming.to_vec());
        let mut by_ordinal: HashMap<u64, &Vec<u8>> = HashMap::new();
        let mut members = Vec::with_capacity(records.len());
        for r in &records {
            let view = decode_record(r, &self.cfg);
            by_ordinal.insert(view.ordinal, r);
            members.push(view.ordinal as u32);
        }
        members.sort_unstable();

        // updates re-split without fuzzy duplication
        let mut quiet_cfg = self.cfg.clone();
        quiet_cfg.fuzzy_f = 0.0;
        let ctx = GrowContext {
            rows: self.sax.rows(),
            paa: None,
            cfg: &quiet_cfg,
            bp: &self.breakpoints,
        };
        let isax = self.packs[pack_id as usize].isax.clone();
        let result = grow_subtree(&ctx, isax, members, Vec::new());

        // splice local arenas into the index
        let internal_base = self.internals.len() as NodeId;
        let pack_base = self.packs.len() as NodeId;
        let file = self.packs[pack_id as usize].extent.file;
        let remap = |r: NodeRef| match r {
            NodeRef::Internal(i) => NodeRef::Internal(internal_base + i),
            NodeRef::Pack(p) => NodeRef::Pack(pack_base + p),
        };
        for mut node in result.internals {
            let routing = std::mem::take(&mut node.routing);
            node.routing = routing.into_iter().map(|(k, v)| (k, remap(v))).collect();
            node.file = file;
            self.internals.push(node);
        }
        let new_leaves = result.packs.len() as u32;
        for (local, (mut pack, primaries)) in result
            .packs
            .into_iter()
            .zip(result.pack_primaries)
            .enumerate()
        {
            let new_id = pack_base + local as NodeId;
            let records: Vec<Vec<u8>> = primaries
                .iter()
                .map(|ord| by_ordinal[&(*ord as u64)].clone())
                .collect();
            pack.extent =
                self.allocate_extent(file, (records.len() as u32 * 2).max(MIN_PACK_CAPACITY))?;
            self.packs.push(pack);
            self.rewrite_pack(new_id, &records)?;
            self.retarget_duplicates(&records, pack_id, new_id);
        }

        // the old pack gives way to the subtree root
        let sid = path.last().expect("non-root path").1;
        self.internals[parent as usize]
            .routing
            .insert(sid, remap_root(result.root, internal_base, pack_base));
        self.packs[pack_id as usize].alive = false;
        let delta = new_leaves.saturating_sub(1);
        for &(n, _) in path {
            self.internals[n as usize].leaf_count += delta;
        }
        Ok(())
    }

    /// Deferred sibling repacking: dissolve a node's packs back into
    /// per-sid leaves and run the packing pass again.
    fn repack_siblings(&mut self, parent: NodeId, path: &[(NodeId, Sid)]) -> Result<()> {
        let lambda = self.internals[parent as usize].csl.len();
        let mut pack_ids: Vec<NodeId> = Vec::new();
        for child in self.internals[parent as usize].routing.values() {
            if let NodeRef::Pack(p) = child {
                if !pack_ids.contains(p) && !self.packs[*p as usize].oversized {
                    pack_ids.push(*p);
                }
            }
        }
        pack_ids.sort_unstable();

        // group every live record of those packs by member sid
        let mut per_sid: Vec<(Sid, Vec<Vec<u8>>)> = Vec::new();
        for &p in &pack_ids {
            for record in self.live_records(p)? {
                let sid = self.record_sid_under(parent, &record)?;
                match per_sid.iter_mut().find(|(s, _)| *s == sid) {
                    Some((_, v)) => v.push(record),
                    None => per_sid.push((sid, vec![record])),
                }
            }
        }
        per_sid.sort_by_key(|(s, _)| *s);

        let candidates: Vec<LeafCandidate> = per_sid
            .iter()
            .map(|(sid, v)| LeafCandidate {
                sid: *sid,
                size: v.len() as u32,
            })
            .collect();
        let assignments = pack_leaves(&candidates, self.cfg.rho, self.cfg.th, lambda);

        let old_leaves = pack_ids.len() as u32;
        for &p in &pack_ids {
            self.packs[p as usize].alive = false;
        }
        let file = self.internals[parent as usize].file;
        let layer = self.internals[parent as usize].layer + 1;
        let (parent_isax, csl) = {
            let n = &self.internals[parent as usize];
            (n.isax.clone(), n.csl.clone())
        };
        let mut new_leaves = 0u32;
        for assignment in assignments {
            let mut isax = parent_isax.clone();
            for (pos, bit) in agreed_bits(&assignment.members, lambda) {
                isax.refine(csl[pos] as usize, bit);
            }
            let mut records = Vec::new();
            for &m in &assignment.members {
                if let Some((_, v)) = per_sid.iter().find(|(s, _)| *s == m) {
                    records.extend(v.iter().cloned());
                }
            }
            let new_id = self.packs.len() as NodeId;
            let extent =
                self.allocate_extent(file, (records.len() as u32 * 2).max(MIN_PACK_CAPACITY))?;
            self.packs.push(crate::tree::LeafPack {
                isax,
                members: assignment.members.clone(),
                demotion_bits: assignment.demotion_bits,
                extent,
                len: 0,
                live: 0,
                deleted: Vec::new(),
                oversized: false,
                layer,
                alive: true,
            });
            self.rewrite_pack(new_id, &records)?;
            for &p in &pack_ids {
                self.retarget_duplicates(&records, p, new_id);
            }
            for &m in &assignment.members {
                self.internals[parent as usize]
                    .routing
                    .insert(m, NodeRef::Pack(new_id));
            }
            new_leaves += 1;
        }
        self.internals[parent as usize].extractions = 0;
        // leaf-count delta propagates to the whole path including parent
        for &(n, _) in path {
            let node = &mut self.internals[n as usize];
            node.leaf_count = node.leaf_count + new_leaves - old_leaves;
        }
        Ok(())
    }

    /// Mark one series deleted. Queries skip it immediately; the slot is
    /// reused by later inserts. Returns false when the ordinal is unknown
    /// or already deleted.
    pub fn delete(&mut self, ordinal: u64) -> Result<bool> {
        if ordinal >= self.sax.count() {
            return Ok(false);
        }
        let sax = self.sax.row(ordinal).to_vec();
        let mut path = Vec::new();
        let mut node = ROOT;
        let pack_id = loop {
            let internal = &self.internals[node as usize];
            let sid = dumpy_core::promote_isax(&internal.isax, &sax, &internal.csl)?;
            path.push((node, sid));
            match internal.routing.get(&sid) {
                None => return Ok(false),
                Some(NodeRef::Pack(p)) => break *p,
                Some(NodeRef::Internal(i)) => node = *i,
            }
        };
        if !self.mark_deleted(pack_id, ordinal)? {
            return Ok(false);
        }
        for &(n, _) in &path {
            self.internals[n as usize].size -= 1;
        }
        if self.packs[pack_id as usize].live == 0 {
            self.unlink_pack(&path, pack_id);
        }
        // fuzzy copies die with the primary
        if let Some(copies) = self.duplicates.remove(&ordinal) {
            for p in copies {
                if self.packs[p as usize].alive {
                    self.mark_deleted(p, ordinal)?;
                }
            }
        }
        Ok(true)
    }

    fn mark_deleted(&mut self, pack_id: NodeId, ordinal: u64) -> Result<bool> {
        let rec = record_size(&self.cfg);
        let mut pool = FilePool::reader();
        let bytes = read_pack_bytes(self, &self.packs[pack_id as usize], &mut pool)?;
        let len = self.packs[pack_id as usize].len;
        for slot in 0..len {
            let view = decode_record(&bytes[slot as usize * rec..], &self.cfg);
            if view.ordinal == ordinal {
                let pack = &mut self.packs[pack_id as usize];
                if pack.is_deleted(slot) {
                    return Ok(false);
                }
                pack.set_deleted(slot, true);
                pack.live -= 1;
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Remove an empty pack from its parent, cascading the removal of
    /// internal nodes whose routing became empty.
    fn unlink_pack(&mut self, path: &[(NodeId, Sid)], pack_id: NodeId) {
        self.packs[pack_id as usize].alive = false;
        let members = self.packs[pack_id as usize].members.clone();
        let parent = path.last().expect("non-root path").0;
        for m in members {
            self.internals[parent as usize].routing.remove(&m);
        }
        for &(n, _) in path {
            self.internals[n as usize].leaf_count -= 1;
        }
        // cascade upward while internal nodes are empty (never the root)
        for i in (1..path.len()).rev() {
            let (node, _) = path[i];
            if self.internals[node as usize].routing.is_empty() {
                self.internals[node as usize].alive = false;
                let (up, sid) = path[i - 1];
                self.internals[up as usize].routing.remove(&sid);
            } else {
                break;
            }
        }
    }
}

fn remap_root(root: NodeRef, internal_base: NodeId, pack_base: NodeId) -> NodeRef {
    match root {
        NodeRef::Internal(i) => NodeRef::Internal(internal_base + i),
        NodeRef::Pack(p) => NodeRef::Pack(pack_base + p),
    }
}
