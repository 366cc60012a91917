//! Leaf packing: merge small sibling leaves of one split into shared packs
//! without spending more than `floor(rho * lambda)` demotion bits, keeping
//! the packed iSAX words tight enough to preserve pruning power.

use dumpy_core::series::Sid;

/// A small leaf awaiting packing: one populated sid of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafCandidate {
    pub sid: Sid,
    pub size: u32,
}

/// One pack produced by the packing pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackAssignment {
    /// Member sids, ascending.
    pub members: Vec<Sid>,
    pub size: u32,
    pub demotion_bits: u8,
}

struct OpenPack {
    members: Vec<Sid>,
    or_mask: Sid,
    and_mask: Sid,
    size: u32,
}

impl OpenPack {
    fn demotion_bits(&self) -> u32 {
        (self.or_mask ^ self.and_mask).count_ones()
    }

    fn demotion_with(&self, sid: Sid) -> u32 {
        ((self.or_mask | sid) ^ (self.and_mask & sid)).count_ones()
    }
}

/// Greedy packing: candidates in descending size order (ascending sid on
/// ties) each join the open pack whose demotion-bit count grows the least,
/// subject to the bit budget and the size threshold, else open a new pack.
pub fn pack_leaves(
    candidates: &[LeafCandidate],
    rho: f64,
    th: u32,
    lambda: usize,
) -> Vec<PackAssignment> {
    let budget = (rho * lambda as f64).floor() as u32;
    let mut order: Vec<&LeafCandidate> = candidates.iter().filter(|c| c.size > 0).collect();
    order.sort_by(|a, b| b.size.cmp(&a.size).then(a.sid.cmp(&b.sid)));

    let mut packs: Vec<OpenPack> = Vec::new();
    for cand in order {
        debug_assert!(cand.size <= th, "oversized leaves are never packed");
        let mut best: Option<(u32, u32, usize)> = None; // (increase, result, index)
        for (i, pack) in packs.iter().enumerate() {
            if pack.size + cand.size > th {
                continue;
            }
            let result = pack.demotion_with(cand.sid);
            if result > budget {
                continue;
            }
            let increase = result - pack.demotion_bits();
            let key = (increase, result, i);
            if best.map_or(true, |b| key < b) {
                best = Some(key);
            }
        }
        match best {
            Some((_, _, i)) => {
                let pack = &mut packs[i];
                pack.members.push(cand.sid);
                pack.or_mask |= cand.sid;
                pack.and_mask &= cand.sid;
                pack.size += cand.size;
            }
            None => packs.push(OpenPack {
                members: vec![cand.sid],
                or_mask: cand.sid,
                and_mask: cand.sid,
                size: cand.size,
            }),
        }
    }

    packs
        .into_iter()
        .map(|p| {
            let demotion = p.demotion_bits() as u8;
            let mut members = p.members;
            members.sort_unstable();
            PackAssignment {
                members,
                size: p.size,
                demotion_bits: demotion,
            }
        })
        .collect()
}

/// Bits of the lambda-wide sid space on which every member agrees, as
/// (position-from-msb, bit) pairs; these become the pack's refinements.
pub fn agreed_bits(members: &[Sid], lambda: usize) -> Vec<(usize, u8)> {
    let or_mask = members.iter().fold(0, |a, &s| a | s);
    let and_mask = members.iter().fold(Sid::MAX, |a, &s| a & s);
    (0..lambda)
        .filter_map(|pos| {
            let bit = 1 << (lambda - 1 - pos);
            if or_mask & bit == and_mask & bit {
                Some((pos, ((or_mask >> (lambda - 1 - pos)) & 1) as u8))
            } else {
                None
            }
        })
        .collect()
}
