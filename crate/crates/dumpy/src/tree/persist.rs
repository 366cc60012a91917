//! Index persistence.
//!
//! A saved index directory holds `config.toml`, `tree.bin` (node graph,
//! routing tables, pack extents, deletion bitmaps, duplicate placement),
//! `sax.tbl` and the `leaves/` data files. `save` never touches leaf data.
//!
//! `tree.bin`, all integers little-endian:
//!   magic "DTRE", version u32, n u32, w u16, b u16,
//!   internal count u32, pack count u32, file count u32,
//!   internals, packs, files, duplicate entries (count u64 then
//!   {ordinal u64, pack count u16, pack ids u32...}).

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use dumpy_core::series::{Breakpoints, IsaxSymbol, IsaxWord};

use crate::config::IndexConfig;
use crate::error::{DumpyError, Result};
use crate::saxtable::SaxTable;
use crate::tree::{Extent, Index, InternalNode, LeafFile, LeafPack, NodeRef};

const MAGIC: &[u8; 4] = b"DTRE";
const VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u16(&mut self, v: u16) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn bytes(&mut self, v: &[u8]) -> Result<()> {
        Ok(self.0.write_all(v)?)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.0.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.0.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn bytes(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut v = vec![0u8; len];
        self.0.read_exact(&mut v)?;
        Ok(v)
    }
}

fn write_isax<W: Write>(w: &mut Writer<W>, isax: &IsaxWord) -> Result<()> {
    for s in isax.symbols() {
        w.u8(s.code)?;
        w.u8(s.depth)?;
    }
    Ok(())
}

fn read_isax<R: Read>(r: &mut Reader<R>, segments: usize, bits: u8) -> Result<IsaxWord> {
    let mut symbols = Vec::with_capacity(segments);
    for _ in 0..segments {
        let code = r.u8()?;
        let depth = r.u8()?;
        if depth > bits {
            return Err(DumpyError::format("iSAX depth exceeds symbol bits"));
        }
        symbols.push(IsaxSymbol { code, depth });
    }
    Ok(IsaxWord::from_symbols(symbols, bits))
}

fn write_node_ref<W: Write>(w: &mut Writer<W>, r: NodeRef) -> Result<()> {
    match r {
        NodeRef::Internal(i) => {
            w.u8(0)?;
            w.u32(i)
        }
        NodeRef::Pack(p) => {
            w.u8(1)?;
            w.u32(p)
        }
    }
}

fn read_node_ref<R: Read>(r: &mut Reader<R>) -> Result<NodeRef> {
    let tag = r.u8()?;
    let id = r.u32()?;
    match tag {
        0 => Ok(NodeRef::Internal(id)),
        1 => Ok(NodeRef::Pack(id)),
        _ => Err(DumpyError::format("bad node reference tag")),
    }
}

impl Index {
    pub fn save(&self) -> Result<()> {
        std::fs::write(self.dir.join("config.toml"), self.cfg.to_toml())?;
        self.sax.save(&self.dir.join("sax.tbl"))?;

        let file = std::fs::File::create(self.dir.join("tree.bin"))?;
        let mut w = Writer(BufWriter::new(file));
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(self.cfg.n)?;
        w.u16(self.cfg.w)?;
        w.u16(self.cfg.b)?;
        w.u32(self.internals.len() as u32)?;
        w.u32(self.packs.len() as u32)?;
        w.u32(self.files.len() as u32)?;

        for node in &self.internals {
            write_isax(&mut w, &node.isax)?;
            w.u8(node.csl.len() as u8)?;
            w.bytes(&node.csl)?;
            w.u8(node.layer)?;
            w.u8(node.alive as u8)?;
            w.u64(node.size)?;
            w.u32(node.leaf_count)?;
            w.u32(node.extractions)?;
            w.u32(node.file)?;
            w.u32(node.routing.len() as u32)?;
            for (&sid, &child) in &node.routing {
                w.u32(sid)?;
                write_node_ref(&mut w, child)?;
            }
        }
        for pack in &self.packs {
            write_isax(&mut w, &pack.isax)?;
            w.u16(pack.members.len() as u16)?;
            for &m in &pack.members {
                w.u32(m)?;
            }
            w.u8(pack.demotion_bits)?;
            w.u8(pack.layer)?;
            w.u8(pack.oversized as u8)?;
            w.u8(pack.alive as u8)?;
            w.u32(pack.extent.file)?;
            w.u64(pack.extent.offset)?;
            w.u32(pack.extent.capacity)?;
            w.u32(pack.len)?;
            w.u32(pack.live)?;
            w.u32(pack.deleted.len() as u32)?;
            for &word in &pack.deleted {
                w.u64(word)?;
            }
        }
        for f in &self.files {
            w.u16(f.name.len() as u16)?;
            w.bytes(f.name.as_bytes())?;
            w.u64(f.allocated)?;
        }
        w.u64(self.duplicates.len() as u64)?;
        for (&ordinal, packs) in &self.duplicates {
            w.u64(ordinal)?;
            w.u16(packs.len() as u16)?;
            for &p in packs {
                w.u32(p)?;
            }
        }
        w.0.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Index> {
        let cfg = IndexConfig::from_toml(&std::fs::read_to_string(dir.join("config.toml"))?)?;
        let sax = SaxTable::load(&dir.join("sax.tbl"))?;
        if sax.w() != cfg.w as usize || sax.bits() != cfg.b as u8 {
            return Err(DumpyError::format(
                "SAX table does not match the index config",
            ));
        }

        let file = std::fs::File::open(dir.join("tree.bin"))?;
        let mut r = Reader(BufReader::new(file));
        let magic = r.bytes(4)?;
        if magic != MAGIC {
            return Err(DumpyError::format("not an index tree file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DumpyError::format(format!(
                "unsupported tree version {version}"
            )));
        }
        let n = r.u32()?;
        let w_segments = r.u16()?;
        let bits = r.u16()?;
        if n != cfg.n || w_segments != cfg.w || bits != cfg.b {
            return Err(DumpyError::format(format!(
                "tree built for n={n} w={w_segments} b={bits}, config says n={} w={} b={}",
                cfg.n, cfg.w, cfg.b
            )));
        }
        let internal_count = r.u32()? as usize;
        let pack_count = r.u32()? as usize;
        let file_count = r.u32()? as usize;

        let seg = cfg.w as usize;
        let b = cfg.b as u8;
        let mut internals = Vec::with_capacity(internal_count);
        for _ in 0..internal_count {
            let isax = read_isax(&mut r, seg, b)?;
            let csl_len = r.u8()? as usize;
            let csl = r.bytes(csl_len)?;
            let layer = r.u8()?;
            let alive = r.u8()? != 0;
            let size = r.u64()?;
            let leaf_count = r.u32()?;
            let extractions = r.u32()?;
            let file = r.u32()?;
            let routing_len = r.u32()? as usize;
            let mut routing = BTreeMap::new();
            for _ in 0..routing_len {
                let sid = r.u32()?;
                routing.insert(sid, read_node_ref(&mut r)?);
            }
            internals.push(InternalNode {
                isax,
                csl,
                routing,
                size,
                layer,
                leaf_count,
                extractions,
                file,
                alive,
            });
        }
        let mut packs = Vec::with_capacity(pack_count);
        for _ in 0..pack_count {
            let isax = read_isax(&mut r, seg, b)?;
            let member_count = r.u16()? as usize;
            let mut members = Vec::with_capacity(member_count);
            for _ in 0..member_count {
                members.push(r.u32()?);
            }
            let demotion_bits = r.u8()?;
            let layer = r.u8()?;
            let oversized = r.u8()? != 0;
            let alive = r.u8()? != 0;
            let extent = Extent {
                file: r.u32()?,
                offset: r.u64()?,
                capacity: r.u32()?,
            };
            let len = r.u32()?;
            let live = r.u32()?;
            let bitmap_len = r.u32()? as usize;
            let mut deleted = Vec::with_capacity(bitmap_len);
            for _ in 0..bitmap_len {
                deleted.push(r.u64()?);
            }
            packs.push(LeafPack {
                isax,
                members,
                demotion_bits,
                extent,
                len,
                live,
                deleted,
                oversized,
                layer,
                alive,
            });
        }
        let mut files = Vec::with_capacity(file_count);
        for _ in 0..file_count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.bytes(name_len)?)
                .map_err(|_| DumpyError::format("bad leaf file name"))?;
            let allocated = r.u64()?;
            files.push(LeafFile { name, allocated });
        }
        let duplicate_count = r.u64()?;
        let mut duplicates = BTreeMap::new();
        for _ in 0..duplicate_count {
            let ordinal = r.u64()?;
            let count = r.u16()? as usize;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                list.push(r.u32()?);
            }
            duplicates.insert(ordinal, list);
        }

        let breakpoints = Breakpoints::new(cfg.cardinality())?;
        Ok(Index {
            cfg,
            dir: PathBuf::from(dir),
            breakpoints,
            internals,
            packs,
            files,
            sax,
            duplicates,
        })
    }
}
