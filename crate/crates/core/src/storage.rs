//! Binary persistence for indexes and profiles.
//!
//! Index files start with the magic `XPIR1` and hold a sequence of sections,
//! each `tag[4] | len u64 | payload | crc32(payload) u32`, followed by a
//! CRC-32 of every preceding byte. All integers are little-endian and floats
//! are stored as raw IEEE-754 bits. Sections, in order:
//!
//! | tag    | contents                                                    |
//! |--------|-------------------------------------------------------------|
//! | `HEAD` | fingerprint, log base, weighting, attribute flag, timestamp, `|N_t|` |
//! | `STAT` | per-concept count of leaves containing the concept          |
//! | `DOCS` | Document(idf_doc, doc_name)                                 |
//! | `ELEM` | Element(idf_doc, begin, ele_name, end, parent)              |
//! | `ATTR` | Attribute(idf_doc, begin, end, parent, att_name, value_att) |
//! | `TEXT` | Text(idf_doc, begin, value, end, parent)                    |
//! | `LEAF` | leaf vectors with raw concept counts                        |
//! | `EVEC` | element vectors with coverage counts                        |

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, TryLockError};

use crate::index::{
    CollectionStats, ConceptCounts, Coverage, DocumentIndex, EntryDetail, IndexError, IndexHeader, IndexStore, LogBase,
    NodeIndexEntry, WeightingMode,
};
use crate::ontology::{ConceptId, Ontology};
use crate::profile::{HistoryEntry, UserProfile};
use crate::vector::ConceptVector;
use crate::xmldoc::{DocId, DocumentTree, NodeDescriptor, NodeType, XmlError};

const INDEX_MAGIC: &[u8; 5] = b"XPIR1";
const PROFILE_MAGIC: &[u8; 5] = b"XPIP1";

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("index was built for ontology {index}, current ontology is {current}")]
    StaleIndex { index: String, current: String },
    #[error(transparent)]
    Structure(#[from] XmlError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("no profile for user `{0}`")]
    NotFound(String),
    #[error("user `{0}` already exists")]
    DuplicateUser(String),
    #[error("profile of `{0}` is being written by another request")]
    Contention(String),
}

#[derive(Default)]
struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("table larger than u32::MAX rows"));
    }
    fn f64(&mut self, v: f64, what: &str) -> Result<(), StorageError> {
        if !v.is_finite() {
            return Err(StorageError::NonFinite(what.to_string()));
        }
        self.u64(v.to_bits());
        Ok(())
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn vector(&mut self, v: &ConceptVector, what: &str) -> Result<(), StorageError> {
        self.len(v.len());
        for (c, w) in v.iter() {
            self.u32(c.0);
            self.f64(w, what)?;
        }
        Ok(())
    }
    fn counts(&mut self, m: &BTreeMap<ConceptId, u32>) {
        self.len(m.len());
        for (c, n) in m {
            self.u32(c.0);
            self.u32(*n);
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    at: usize,
    what: &'static str,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, at: 0, what }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], StorageError> {
        if self.buf.len() - self.at < n {
            return Err(StorageError::Format(format!("{} ends early", self.what)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, StorageError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, StorageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, StorageError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize, StorageError> {
        let n = self.u32()? as usize;
        // Every row takes at least one byte, so a larger count is corrupt.
        if n > self.buf.len() - self.at {
            return Err(StorageError::Format(format!("implausible length in {}", self.what)));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64, StorageError> {
        let v = f64::from_bits(self.u64()?);
        if !v.is_finite() {
            return Err(StorageError::NonFinite(self.what.to_string()));
        }
        Ok(v)
    }
    fn str(&mut self) -> Result<String, StorageError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| StorageError::Format(format!("bad utf-8 in {}", self.what)))
    }
    fn vector(&mut self) -> Result<ConceptVector, StorageError> {
        let n = self.len()?;
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            pairs.push((ConceptId(self.u32()?), self.f64()?));
        }
        Ok(ConceptVector::from_pairs(pairs))
    }
    fn counts(&mut self) -> Result<BTreeMap<ConceptId, u32>, StorageError> {
        let n = self.len()?;
        let mut m = BTreeMap::new();
        for _ in 0..n {
            m.insert(ConceptId(self.u32()?), self.u32()?);
        }
        Ok(m)
    }
    fn finish(&self) -> Result<(), StorageError> {
        if self.at != self.buf.len() {
            return Err(StorageError::Format(format!("trailing bytes in {}", self.what)));
        }
        Ok(())
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

/// Checks the trailing whole-file CRC and the magic, returning the body.
fn open_container<'a>(bytes: &'a [u8], magic: &[u8; 5], what: &str) -> Result<&'a [u8], StorageError> {
    if bytes.len() < magic.len() + 4 {
        return Err(StorageError::Checksum(format!("{what} (truncated)")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body).to_le_bytes() != tail {
        return Err(StorageError::Checksum(what.to_string()));
    }
    if &body[..magic.len()] != magic {
        return Err(StorageError::Format(format!("{what}: bad magic")));
    }
    Ok(&body[magic.len()..])
}

fn next_section<'a>(rest: &mut &'a [u8], tag: &[u8; 4]) -> Result<&'a [u8], StorageError> {
    let name = String::from_utf8_lossy(tag).into_owned();
    if rest.len() < 12 || &rest[..4] != tag {
        return Err(StorageError::Format(format!("expected section {name}")));
    }
    let len = u64::from_le_bytes(rest[4..12].try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| StorageError::Format(format!("section {name} too large")))?;
    if rest.len() - 12 < len.saturating_add(4) {
        return Err(StorageError::Checksum(format!("section {name} (truncated)")));
    }
    let payload = &rest[12..12 + len];
    let crc = &rest[12 + len..16 + len];
    if crc32fast::hash(payload).to_le_bytes() != crc {
        return Err(StorageError::Checksum(format!("section {name}")));
    }
    *rest = &rest[16 + len..];
    Ok(payload)
}

/// Writes `bytes` to `dest` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(dest: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let dir = match dest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dest).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentRow {
    pub idf_doc: u32,
    pub doc_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementRow {
    pub idf_doc: u32,
    pub begin: u32,
    pub ele_name: String,
    pub end: u32,
    pub parent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeRow {
    pub idf_doc: u32,
    pub begin: u32,
    pub end: u32,
    pub parent: u32,
    pub att_name: String,
    pub value_att: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextRow {
    pub idf_doc: u32,
    pub begin: u32,
    pub value: String,
    pub end: u32,
    pub parent: u32,
}

/// The four relational tables describing every stored node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptorTables {
    pub documents: Vec<DocumentRow>,
    pub elements: Vec<ElementRow>,
    pub attributes: Vec<AttributeRow>,
    pub texts: Vec<TextRow>,
}

impl DescriptorTables {
    pub fn from_trees<'a>(trees: impl IntoIterator<Item = (&'a str, &'a DocumentTree)>) -> Self {
        let mut t = Self::default();
        for (name, tree) in trees {
            let idf_doc = tree.doc_id().0;
            t.documents.push(DocumentRow {
                idf_doc,
                doc_name: name.to_string(),
            });
            for d in tree.descriptors() {
                let (begin, end, parent) = (d.start, d.end, d.parent);
                let name = || d.name.clone().unwrap_or_default();
                let value = || d.value.clone().unwrap_or_default();
                match d.node_type {
                    NodeType::Element => t.elements.push(ElementRow {
                        idf_doc,
                        begin,
                        ele_name: name(),
                        end,
                        parent,
                    }),
                    NodeType::Attribute => t.attributes.push(AttributeRow {
                        idf_doc,
                        begin,
                        end,
                        parent,
                        att_name: name(),
                        value_att: value(),
                    }),
                    NodeType::Text => t.texts.push(TextRow {
                        idf_doc,
                        begin,
                        value: value(),
                        end,
                        parent,
                    }),
                }
            }
        }
        t
    }

    /// Reassembles one validated tree per document row, in row order.
    pub fn to_trees(&self) -> Result<Vec<(String, DocumentTree)>, StorageError> {
        let mut per_doc: BTreeMap<u32, Vec<NodeDescriptor>> = BTreeMap::new();
        let mut push = |doc: u32, d: NodeDescriptor| per_doc.entry(doc).or_default().push(d);
        for r in &self.elements {
            push(
                r.idf_doc,
                NodeDescriptor {
                    doc_id: DocId(r.idf_doc),
                    start: r.begin,
                    end: r.end,
                    parent: r.parent,
                    node_type: NodeType::Element,
                    name: Some(r.ele_name.clone()),
                    value: None,
                },
            );
        }
        for r in &self.attributes {
            push(
                r.idf_doc,
                NodeDescriptor {
                    doc_id: DocId(r.idf_doc),
                    start: r.begin,
                    end: r.end,
                    parent: r.parent,
                    node_type: NodeType::Attribute,
                    name: Some(r.att_name.clone()),
                    value: Some(r.value_att.clone()),
                },
            );
        }
        for r in &self.texts {
            push(
                r.idf_doc,
                NodeDescriptor {
                    doc_id: DocId(r.idf_doc),
                    start: r.begin,
                    end: r.end,
                    parent: r.parent,
                    node_type: NodeType::Text,
                    name: None,
                    value: Some(r.value.clone()),
                },
            );
        }
        let mut out = Vec::with_capacity(self.documents.len());
        for row in &self.documents {
            let nodes = per_doc
                .remove(&row.idf_doc)
                .ok_or_else(|| StorageError::Format(format!("document {} has no nodes", row.idf_doc)))?;
            out.push((
                row.doc_name.clone(),
                DocumentTree::from_descriptors(DocId(row.idf_doc), nodes)?,
            ));
        }
        if let Some(doc) = per_doc.keys().next() {
            return Err(StorageError::Format(format!("nodes reference unknown document {doc}")));
        }
        Ok(out)
    }

    fn encode(&self) -> [Vec<u8>; 4] {
        let mut docs = Enc::default();
        docs.len(self.documents.len());
        for r in &self.documents {
            docs.u32(r.idf_doc);
            docs.str(&r.doc_name);
        }
        let mut elems = Enc::default();
        elems.len(self.elements.len());
        for r in &self.elements {
            elems.u32(r.idf_doc);
            elems.u32(r.begin);
            elems.str(&r.ele_name);
            elems.u32(r.end);
            elems.u32(r.parent);
        }
        let mut attrs = Enc::default();
        attrs.len(self.attributes.len());
        for r in &self.attributes {
            attrs.u32(r.idf_doc);
            attrs.u32(r.begin);
            attrs.u32(r.end);
            attrs.u32(r.parent);
            attrs.str(&r.att_name);
            attrs.str(&r.value_att);
        }
        let mut texts = Enc::default();
        texts.len(self.texts.len());
        for r in &self.texts {
            texts.u32(r.idf_doc);
            texts.u32(r.begin);
            texts.str(&r.value);
            texts.u32(r.end);
            texts.u32(r.parent);
        }
        [docs.buf, elems.buf, attrs.buf, texts.buf]
    }

    fn decode(docs: &[u8], elems: &[u8], attrs: &[u8], texts: &[u8]) -> Result<Self, StorageError> {
        let mut t = Self::default();
        let mut d = Dec::new(docs, "DOCS");
        for _ in 0..d.len()? {
            t.documents.push(DocumentRow {
                idf_doc: d.u32()?,
                doc_name: d.str()?,
            });
        }
        d.finish()?;
        let mut d = Dec::new(elems, "ELEM");
        for _ in 0..d.len()? {
            t.elements.push(ElementRow {
                idf_doc: d.u32()?,
                begin: d.u32()?,
                ele_name: d.str()?,
                end: d.u32()?,
                parent: d.u32()?,
            });
        }
        d.finish()?;
        let mut d = Dec::new(attrs, "ATTR");
        for _ in 0..d.len()? {
            t.attributes.push(AttributeRow {
                idf_doc: d.u32()?,
                begin: d.u32()?,
                end: d.u32()?,
                parent: d.u32()?,
                att_name: d.str()?,
                value_att: d.str()?,
            });
        }
        d.finish()?;
        let mut d = Dec::new(texts, "TEXT");
        for _ in 0..d.len()? {
            t.texts.push(TextRow {
                idf_doc: d.u32()?,
                begin: d.u32()?,
                value: d.str()?,
                end: d.u32()?,
                parent: d.u32()?,
            });
        }
        d.finish()?;
        Ok(t)
    }
}

fn weighting_code(w: WeightingMode) -> u8 {
    match w {
        WeightingMode::Ontology => 0,
        WeightingMode::Uniform => 1,
    }
}

/// Serializes an index. Identical stores give identical bytes.
pub fn encode_index(index: &IndexStore) -> Result<Vec<u8>, StorageError> {
    let h = &index.header;
    let mut head = Enc::default();
    head.str(&h.ontology_fingerprint);
    head.u8(match h.log_base {
        LogBase::Natural => 0,
    });
    head.u8(weighting_code(h.weighting));
    head.u8(h.index_attributes as u8);
    head.u64(h.build_timestamp);
    head.u64(h.total_text_nodes);

    let mut stat = Enc::default();
    stat.u64(index.stats.total_text_nodes);
    stat.len(index.stats.text_nodes_containing.len());
    for &n in &index.stats.text_nodes_containing {
        stat.u64(n);
    }

    let tables = DescriptorTables::from_trees(index.documents.iter().map(|d| (d.name.as_str(), &d.tree)));
    let [docs, elems, attrs, texts] = tables.encode();

    let mut leaves = Enc::default();
    let mut evecs = Enc::default();
    let (mut n_leaves, mut n_elems) = (0, 0);
    let mut leaf_rows = Enc::default();
    let mut elem_rows = Enc::default();
    for doc in &index.documents {
        for e in &doc.entries {
            match &e.detail {
                EntryDetail::Leaf { counts } => {
                    n_leaves += 1;
                    leaf_rows.u32(doc.doc_id.0);
                    leaf_rows.u32(e.start);
                    leaf_rows.counts(counts);
                    leaf_rows.vector(&e.base_vector, "leaf vector")?;
                }
                EntryDetail::Element { coverage } => {
                    n_elems += 1;
                    elem_rows.u32(doc.doc_id.0);
                    elem_rows.u32(e.start);
                    elem_rows.u32(coverage.text_nodes);
                    elem_rows.counts(&coverage.containing);
                    elem_rows.vector(&e.base_vector, "element vector")?;
                }
            }
        }
    }
    leaves.len(n_leaves);
    leaves.buf.extend_from_slice(&leaf_rows.buf);
    evecs.len(n_elems);
    evecs.buf.extend_from_slice(&elem_rows.buf);

    let mut out = INDEX_MAGIC.to_vec();
    section(&mut out, b"HEAD", &head.buf);
    section(&mut out, b"STAT", &stat.buf);
    section(&mut out, b"DOCS", &docs);
    section(&mut out, b"ELEM", &elems);
    section(&mut out, b"ATTR", &attrs);
    section(&mut out, b"TEXT", &texts);
    section(&mut out, b"LEAF", &leaves.buf);
    section(&mut out, b"EVEC", &evecs.buf);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save_index(index: &IndexStore, dest: &Path) -> Result<(), StorageError> {
    let bytes = encode_index(index)?;
    write_atomic(dest, &bytes)
}

/// Decodes and validates an index against `ontology`.
pub fn decode_index(bytes: &[u8], ontology: &Ontology) -> Result<IndexStore, StorageError> {
    let mut rest = open_container(bytes, INDEX_MAGIC, "index file")?;
    let head = next_section(&mut rest, b"HEAD")?;
    let stat = next_section(&mut rest, b"STAT")?;
    let docs = next_section(&mut rest, b"DOCS")?;
    let elems = next_section(&mut rest, b"ELEM")?;
    let attrs = next_section(&mut rest, b"ATTR")?;
    let texts = next_section(&mut rest, b"TEXT")?;
    let leaves = next_section(&mut rest, b"LEAF")?;
    let evecs = next_section(&mut rest, b"EVEC")?;
    if !rest.is_empty() {
        return Err(StorageError::Format("trailing sections".into()));
    }

    let mut d = Dec::new(head, "HEAD");
    let ontology_fingerprint = d.str()?;
    let log_base = match d.u8()? {
        0 => LogBase::Natural,
        x => return Err(StorageError::Format(format!("unknown log base {x}"))),
    };
    let weighting = match d.u8()? {
        0 => WeightingMode::Ontology,
        1 => WeightingMode::Uniform,
        x => return Err(StorageError::Format(format!("unknown weighting {x}"))),
    };
    let index_attributes = match d.u8()? {
        0 => false,
        1 => true,
        x => return Err(StorageError::Format(format!("bad attribute flag {x}"))),
    };
    let header = IndexHeader {
        ontology_fingerprint,
        log_base,
        weighting,
        index_attributes,
        build_timestamp: d.u64()?,
        total_text_nodes: d.u64()?,
    };
    d.finish()?;
    if header.ontology_fingerprint != ontology.fingerprint() {
        return Err(StorageError::StaleIndex {
            index: header.ontology_fingerprint,
            current: ontology.fingerprint().to_string(),
        });
    }

    let mut d = Dec::new(stat, "STAT");
    let total_text_nodes = d.u64()?;
    let mut text_nodes_containing = Vec::new();
    for _ in 0..d.len()? {
        text_nodes_containing.push(d.u64()?);
    }
    d.finish()?;
    let stats = CollectionStats {
        total_text_nodes,
        text_nodes_containing,
    };

    let trees = DescriptorTables::decode(docs, elems, attrs, texts)?.to_trees()?;
    let mut by_doc: BTreeMap<u32, Vec<NodeIndexEntry>> = BTreeMap::new();
    let mut d = Dec::new(leaves, "LEAF");
    for _ in 0..d.len()? {
        let doc = d.u32()?;
        let start = d.u32()?;
        let counts: ConceptCounts = d.counts()?;
        let base_vector = d.vector()?;
        by_doc.entry(doc).or_default().push(NodeIndexEntry {
            doc_id: DocId(doc),
            start,
            node_type: NodeType::Text,
            base_vector,
            detail: EntryDetail::Leaf { counts },
        });
    }
    d.finish()?;
    let mut d = Dec::new(evecs, "EVEC");
    for _ in 0..d.len()? {
        let doc = d.u32()?;
        let start = d.u32()?;
        let text_nodes = d.u32()?;
        let containing = d.counts()?;
        let base_vector = d.vector()?;
        by_doc.entry(doc).or_default().push(NodeIndexEntry {
            doc_id: DocId(doc),
            start,
            node_type: NodeType::Element,
            base_vector,
            detail: EntryDetail::Element {
                coverage: Coverage { text_nodes, containing },
            },
        });
    }
    d.finish()?;

    let mut documents = Vec::with_capacity(trees.len());
    for (name, tree) in trees {
        let mut entries = by_doc.remove(&tree.doc_id().0).unwrap_or_default();
        entries.sort_by_key(|e| e.start);
        for e in &mut entries {
            let node = tree
                .get(e.start)
                .ok_or_else(|| StorageError::Format(format!("entry {} has no node", e.start)))?;
            if e.is_leaf() {
                if node.node_type == NodeType::Element {
                    return Err(StorageError::Format(format!("leaf entry {} is an element", e.start)));
                }
                e.node_type = node.node_type;
            } else if node.node_type != NodeType::Element {
                return Err(StorageError::Format(format!("element entry {} is a leaf", e.start)));
            }
            if e.base_vector.concepts().any(|c| !ontology.contains(c)) {
                return Err(StorageError::Format(format!(
                    "entry {} names an unknown concept",
                    e.start
                )));
            }
        }
        if entries.windows(2).any(|w| w[0].start == w[1].start) {
            return Err(StorageError::Format("duplicate index entries".into()));
        }
        documents.push(DocumentIndex {
            doc_id: tree.doc_id(),
            name,
            tree,
            entries,
        });
    }
    if !by_doc.is_empty() {
        return Err(StorageError::Format("index entries for unknown documents".into()));
    }
    if documents.windows(2).any(|w| w[0].doc_id >= w[1].doc_id) {
        return Err(StorageError::Format("documents out of order".into()));
    }

    let store = IndexStore {
        header,
        stats,
        documents,
    };
    let recount = store.recount_stats(ontology.len())?;
    if recount != store.stats || recount.total_text_nodes != store.header.total_text_nodes {
        return Err(StorageError::Format(
            "collection statistics disagree with stored leaves".into(),
        ));
    }
    Ok(store)
}

pub fn load_index(src: &Path, ontology: &Ontology) -> Result<IndexStore, StorageError> {
    decode_index(&fs::read(src)?, ontology)
}

pub fn encode_profile(p: &UserProfile) -> Result<Vec<u8>, StorageError> {
    let mut e = Enc::default();
    e.str(&p.user_id);
    e.str(&p.ontology_fingerprint);
    e.len(p.interests.len());
    for &w in &p.interests {
        e.f64(w, "profile interests")?;
    }
    e.len(p.history.len());
    for h in &p.history {
        e.u64(h.timestamp);
        e.vector(&h.query, "profile history")?;
    }
    let mut out = PROFILE_MAGIC.to_vec();
    out.extend_from_slice(&e.buf);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_profile(bytes: &[u8]) -> Result<UserProfile, StorageError> {
    let body = open_container(bytes, PROFILE_MAGIC, "profile")?;
    let mut d = Dec::new(body, "profile");
    let user_id = d.str()?;
    let ontology_fingerprint = d.str()?;
    let mut interests = Vec::new();
    for _ in 0..d.len()? {
        interests.push(d.f64()?);
    }
    let mut history = Vec::new();
    for _ in 0..d.len()? {
        history.push(HistoryEntry {
            timestamp: d.u64()?,
            query: d.vector()?,
        });
    }
    d.finish()?;
    Ok(UserProfile {
        user_id,
        interests,
        history,
        ontology_fingerprint,
    })
}

/// Directory of binary profile files with per-user write exclusion.
#[derive(Debug)]
pub struct ProfileStore {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ProfileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, user_id: &str) -> PathBuf {
        // Hex keeps arbitrary ids safe as file names.
        self.dir.join(format!("{}.xpp", hex::encode(user_id.as_bytes())))
    }

    fn lock_for(&self, user_id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(user_id.to_string()).or_default().clone()
    }

    pub fn exists(&self, user_id: &str) -> bool {
        self.path_for(user_id).exists()
    }

    /// Persists a new profile; fails if the user already has one.
    pub fn create(&self, profile: &UserProfile) -> Result<(), StorageError> {
        let lock = self.lock_for(&profile.user_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let bytes = encode_profile(profile)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist_noclobber(self.path_for(&profile.user_id)).map_err(|e| {
            if e.error.kind() == std::io::ErrorKind::AlreadyExists {
                StorageError::DuplicateUser(profile.user_id.clone())
            } else {
                StorageError::Io(e.error)
            }
        })?;
        Ok(())
    }

    pub fn load(&self, user_id: &str) -> Result<UserProfile, StorageError> {
        let bytes = match fs::read(self.path_for(user_id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StorageError::NotFound(user_id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let p = decode_profile(&bytes)?;
        if p.user_id != user_id {
            return Err(StorageError::Format(format!(
                "profile file for `{user_id}` names `{}`",
                p.user_id
            )));
        }
        Ok(p)
    }

    /// Overwrites an existing profile.
    pub fn save(&self, profile: &UserProfile) -> Result<(), StorageError> {
        let lock = self.lock_for(&profile.user_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.write_existing(profile)
    }

    fn write_existing(&self, profile: &UserProfile) -> Result<(), StorageError> {
        let path = self.path_for(&profile.user_id);
        if !path.exists() {
            return Err(StorageError::NotFound(profile.user_id.clone()));
        }
        write_atomic(&path, &encode_profile(profile)?)
    }

    /// Load, modify and store one profile while holding its write lock,
    /// waiting for any other writer of the same user.
    pub fn update<T, E>(&self, user_id: &str, f: impl FnOnce(&mut UserProfile) -> Result<T, E>) -> Result<T, E>
    where
        E: From<StorageError>,
    {
        let lock = self.lock_for(user_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.update_locked(user_id, f)
    }

    /// Like [`ProfileStore::update`] but fails with a contention error instead
    /// of waiting.
    pub fn try_update<T, E>(&self, user_id: &str, f: impl FnOnce(&mut UserProfile) -> Result<T, E>) -> Result<T, E>
    where
        E: From<StorageError>,
    {
        let lock = self.lock_for(user_id);
        let _guard = match lock.try_lock() {
            Ok(g) => g,
            Err(TryLockError::Poisoned(e)) => e.into_inner(),
            Err(TryLockError::WouldBlock) => return Err(StorageError::Contention(user_id.to_string()).into()),
        };
        self.update_locked(user_id, f)
    }

    fn update_locked<T, E>(&self, user_id: &str, f: impl FnOnce(&mut UserProfile) -> Result<T, E>) -> Result<T, E>
    where
        E: From<StorageError>,
    {
        let mut p = self.load(user_id)?;
        let out = f(&mut p)?;
        self.write_existing(&p)?;
        Ok(out)
    }

    /// Every stored user id, sorted.
    pub fn users(&self) -> Result<Vec<String>, StorageError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".xpp")) else {
                continue;
            };
            if let Some(id) = hex::decode(stem).ok().and_then(|b| String::from_utf8(b).ok()) {
                out.push(id);
            }
        }
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, IndexOptions, SourceDocument};
    use crate::profile::create_profile;

    fn cs() -> Ontology {
        Ontology::from_json(include_str!("../fixtures/cs_ontology.json")).unwrap()
    }

    fn fixture(o: &Ontology, attrs: bool) -> IndexStore {
        let docs = [
            SourceDocument::new("a.xml", include_str!("../fixtures/numbering_sample.xml")),
            SourceDocument::new(
                "b.xml",
                r#"<doc kind="routing"><p>OSPF and <b>BGP</b> routing over TCP/IP.</p><p>The relational model.</p></doc>"#,
            ),
        ];
        let opts = IndexOptions {
            index_attributes: attrs,
            build_timestamp: 42,
            ..IndexOptions::default()
        };
        build_index(&docs, o, &opts).unwrap()
    }

    #[test]
    fn index_round_trip_and_determinism() {
        let o = cs();
        for attrs in [false, true] {
            let idx = fixture(&o, attrs);
            let a = encode_index(&idx).unwrap();
            let b = encode_index(&fixture(&o, attrs)).unwrap();
            assert_eq!(a, b);
            assert_eq!(&a[..5], b"XPIR1");
            assert_eq!(decode_index(&a, &o).unwrap(), idx);
        }
    }

    #[test]
    fn save_is_atomic_and_loadable() {
        let o = cs();
        let idx = fixture(&o, false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.xpir");
        save_index(&idx, &path).unwrap();
        save_index(&idx, &path).unwrap();
        assert_eq!(load_index(&path, &o).unwrap(), idx);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let missing = dir.path().join("nope").join("i.xpir");
        assert!(matches!(save_index(&idx, &missing), Err(StorageError::Io(_))));
        assert!(!missing.exists());
    }

    #[test]
    fn stale_and_corrupt_files_rejected() {
        let o = cs();
        let bytes = encode_index(&fixture(&o, false)).unwrap();
        let other = Ontology::from_json(include_str!("../fixtures/generic_7class.json")).unwrap();
        assert!(matches!(
            decode_index(&bytes, &other),
            Err(StorageError::StaleIndex { .. })
        ));
        assert!(matches!(
            decode_index(&bytes[..bytes.len() - 9], &o),
            Err(StorageError::Checksum(_))
        ));
        assert!(matches!(decode_index(&bytes[..3], &o), Err(StorageError::Checksum(_))));
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(decode_index(&flipped, &o), Err(StorageError::Checksum(_))));
    }

    #[test]
    fn non_finite_weights_refused() {
        let o = cs();
        let mut idx = fixture(&o, false);
        let e = idx.documents[0]
            .entries
            .iter_mut()
            .find(|e| !e.base_vector.is_empty())
            .unwrap();
        e.base_vector = e.base_vector.scaled_by(|_| f64::NAN);
        assert!(matches!(encode_index(&idx), Err(StorageError::NonFinite(_))));
    }

    #[test]
    fn descriptor_tables_round_trip() {
        let o = cs();
        let idx = fixture(&o, true);
        let tables = DescriptorTables::from_trees(idx.documents.iter().map(|d| (d.name.as_str(), &d.tree)));
        assert_eq!(tables.documents.len(), 2);
        assert_eq!(tables.attributes.len(), 2);
        assert!(tables.elements.iter().all(|r| r.begin < r.end));
        let trees = tables.to_trees().unwrap();
        for ((name, tree), doc) in trees.iter().zip(&idx.documents) {
            assert_eq!(name, &doc.name);
            assert_eq!(tree, &doc.tree);
        }
    }

    #[test]
    fn profile_store_lifecycle() {
        let o = cs();
        let dir = tempfile::tempdir().unwrap();
        let store = ProfileStore::open(dir.path()).unwrap();
        let p = create_profile("alice/../x", &o);
        store.create(&p).unwrap();
        assert!(matches!(store.create(&p), Err(StorageError::DuplicateUser(_))));
        assert_eq!(store.load("alice/../x").unwrap(), p);
        assert!(matches!(store.load("bob"), Err(StorageError::NotFound(_))));
        let c = o.lookup("routing").unwrap();
        for t in 0..3 {
            store
                .update::<_, StorageError>("alice/../x", |p| {
                    p.update(&o, &ConceptVector::from_pairs([(c, 0.7)]), t).unwrap();
                    Ok(())
                })
                .unwrap();
        }
        let loaded = store.load("alice/../x").unwrap();
        assert_eq!(loaded.history.len(), 3);
        assert_eq!(loaded.replay(&o).unwrap().interests, loaded.interests);
        assert_eq!(store.users().unwrap(), vec!["alice/../x".to_string()]);
    }

    #[test]
    fn concurrent_writer_is_refused() {
        let o = cs();
        let dir = tempfile::tempdir().unwrap();
        let store = ProfileStore::open(dir.path()).unwrap();
        store.create(&create_profile("u", &o)).unwrap();
        let inner = store.update::<_, StorageError>("u", |_| {
            Ok(matches!(
                store.try_update::<(), StorageError>("u", |_| Ok(())),
                Err(StorageError::Contention(_))
            ))
        });
        assert!(inner.unwrap());
    }
}
