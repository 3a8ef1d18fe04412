//! Streaming XML parsing into interval-numbered node descriptors.
//!
//! A single counter drives both `start` and `end` values: opening a tag takes
//! the next value as its start, closing it takes the next value as its end.
//! Text runs and attributes are leaves and take two consecutive values.
//! Ancestry and document order then reduce to interval comparisons.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocId(pub u32);

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Element,
    Attribute,
    Text,
}

impl NodeType {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Element => "element",
            NodeType::Attribute => "attribute",
            NodeType::Text => "text",
        }
    }
}

/// `⟨start, end, parent, type, name, value⟩` for one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDescriptor {
    pub doc_id: DocId,
    pub start: u32,
    pub end: u32,
    /// Start of the parent element; 0 for the document element.
    pub parent: u32,
    pub node_type: NodeType,
    /// Tag or attribute name; `None` for text.
    pub name: Option<String>,
    /// Attribute value or text content; `None` for elements.
    pub value: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum XmlError {
    #[error("document {doc}: parse error at byte {offset}: {message}")]
    Parse { doc: DocId, offset: u64, message: String },
    #[error("document {doc}: invalid descriptor table: {message}")]
    InvalidTable { doc: DocId, message: String },
    #[error("nodes belong to different documents ({0} and {1})")]
    CrossDocument(DocId, DocId),
    #[error("node {start} is a {found}, expected {expected}")]
    WrongNodeType {
        start: u32,
        found: &'static str,
        expected: &'static str,
    },
    #[error("node {ancestor} is not an ancestor of node {node}")]
    NotAncestor { ancestor: u32, node: u32 },
}

/// Parsed document: descriptors in start order plus lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentTree {
    doc_id: DocId,
    descriptors: Vec<NodeDescriptor>,
    names: BTreeMap<String, Vec<usize>>,
}

impl DocumentTree {
    /// Rebuilds a tree from a stored descriptor table, checking every
    /// structural invariant.
    pub fn from_descriptors(doc_id: DocId, mut descriptors: Vec<NodeDescriptor>) -> Result<Self, XmlError> {
        let bad = |message: String| XmlError::InvalidTable { doc: doc_id, message };
        descriptors.sort_by_key(|d| d.start);
        if descriptors.is_empty() {
            return Err(bad("empty document".into()));
        }
        let mut stack: Vec<(u32, u32, bool)> = Vec::new();
        let mut roots = 0;
        for (i, d) in descriptors.iter().enumerate() {
            if d.doc_id != doc_id {
                return Err(bad(format!("node {} carries document {}", d.start, d.doc_id)));
            }
            if i > 0 && descriptors[i - 1].start == d.start {
                return Err(bad(format!("duplicate start {}", d.start)));
            }
            if d.start == 0 || d.start >= d.end {
                return Err(bad(format!("node {} has start >= end", d.start)));
            }
            let shape_ok = match d.node_type {
                NodeType::Element => d.name.is_some() && d.value.is_none(),
                NodeType::Attribute => d.name.is_some() && d.value.is_some(),
                NodeType::Text => d.name.is_none() && d.value.is_some(),
            };
            if !shape_ok {
                return Err(bad(format!("node {} has fields inconsistent with its type", d.start)));
            }
            while matches!(stack.last(), Some(&(_, end, _)) if end < d.start) {
                stack.pop();
            }
            match stack.last() {
                None => {
                    roots += 1;
                    if d.parent != 0 || d.node_type != NodeType::Element {
                        return Err(bad(format!("node {} is outside the document element", d.start)));
                    }
                }
                Some(&(ps, pe, leaf)) => {
                    if leaf {
                        return Err(bad(format!("leaf {ps} contains node {}", d.start)));
                    }
                    if d.end > pe {
                        return Err(bad(format!("node {} overlaps its parent {}", d.start, ps)));
                    }
                    if d.parent != ps {
                        return Err(bad(format!(
                            "node {} names parent {}, expected {}",
                            d.start, d.parent, ps
                        )));
                    }
                }
            }
            stack.push((d.start, d.end, d.node_type != NodeType::Element));
        }
        if roots != 1 {
            return Err(bad(format!("{roots} top-level nodes")));
        }
        Ok(Self::assemble(doc_id, descriptors))
    }

    fn assemble(doc_id: DocId, descriptors: Vec<NodeDescriptor>) -> Self {
        let mut names: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, d) in descriptors.iter().enumerate() {
            if let Some(n) = &d.name {
                names.entry(n.clone()).or_default().push(i);
            }
        }
        Self {
            doc_id,
            descriptors,
            names,
        }
    }

    pub fn doc_id(&self) -> DocId {
        self.doc_id
    }

    pub fn descriptors(&self) -> &[NodeDescriptor] {
        &self.descriptors
    }

    pub fn root(&self) -> &NodeDescriptor {
        &self.descriptors[0]
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn get(&self, start: u32) -> Option<&NodeDescriptor> {
        self.position(start).map(|i| &self.descriptors[i])
    }

    pub fn position(&self, start: u32) -> Option<usize> {
        self.descriptors.binary_search_by_key(&start, |d| d.start).ok()
    }

    /// Elements and attributes carrying `name`, in document order.
    pub fn by_name(&self, name: &str) -> impl Iterator<Item = &NodeDescriptor> {
        self.names
            .get(name)
            .into_iter()
            .flat_map(|v| v.iter().map(|&i| &self.descriptors[i]))
    }

    /// Index range of all nodes strictly inside `node`'s interval.
    pub fn inner_range(&self, node: &NodeDescriptor) -> std::ops::Range<usize> {
        let lo = self.descriptors.partition_point(|d| d.start <= node.start);
        let hi = self.descriptors.partition_point(|d| d.start < node.end);
        lo..hi.max(lo)
    }

    /// Path of element names from the document element down to `start`.
    pub fn path_to(&self, start: u32) -> Vec<&str> {
        let mut out = Vec::new();
        let mut at = self.get(start);
        while let Some(d) = at {
            if d.node_type == NodeType::Element {
                if let Some(n) = &d.name {
                    out.push(n.as_str());
                }
            }
            at = if d.parent == 0 { None } else { self.get(d.parent) };
        }
        out.reverse();
        out
    }
}

/// Streams one XML document and numbers its nodes.
///
/// Whitespace-only text runs are dropped. Entity and character references are
/// resolved and CDATA sections join the surrounding text run. Only UTF-8 input
/// is accepted.
pub fn parse_document(doc_id: DocId, source: impl BufRead) -> Result<DocumentTree, XmlError> {
    let mut reader = Reader::from_reader(source);
    reader.config_mut().trim_text(false);
    reader.config_mut().check_end_names = true;
    let mut buf = Vec::new();
    let mut builder = Numbering::new(doc_id);

    macro_rules! fail {
        ($offset:expr, $($arg:tt)*) => {
            return Err(XmlError::Parse { doc: doc_id, offset: $offset, message: format!($($arg)*) })
        };
    }

    loop {
        let before = reader.buffer_position();
        let event = match reader.read_event_into(&mut buf) {
            Ok(e) => e,
            Err(e) => fail!(reader.error_position(), "{e}"),
        };
        match event {
            Event::Decl(decl) => {
                if let Some(enc) = decl.encoding() {
                    let enc = match enc {
                        Ok(v) => v,
                        Err(e) => fail!(before, "{e}"),
                    };
                    let label = String::from_utf8_lossy(&enc).to_ascii_lowercase();
                    if label != "utf-8" && label != "utf8" {
                        fail!(before, "unsupported encoding `{label}`; only UTF-8 is accepted");
                    }
                }
            }
            Event::Start(ref tag) | Event::Empty(ref tag) => {
                let empty = matches!(event, Event::Empty(_));
                let name = match std::str::from_utf8(tag.name().as_ref()) {
                    Ok(s) => s.to_string(),
                    Err(_) => fail!(before, "tag name is not valid UTF-8"),
                };
                let mut attrs = Vec::new();
                for attr in tag.attributes() {
                    let attr = match attr {
                        Ok(a) => a,
                        Err(e) => fail!(before, "{e}"),
                    };
                    let key = match std::str::from_utf8(attr.key.as_ref()) {
                        Ok(s) => s.to_string(),
                        Err(_) => fail!(before, "attribute name is not valid UTF-8"),
                    };
                    let value = match attr.unescape_value() {
                        Ok(v) => v.into_owned(),
                        Err(e) => fail!(before, "{e}"),
                    };
                    attrs.push((key, value));
                }
                if let Err(msg) = builder.open(name, attrs) {
                    fail!(before, "{msg}");
                }
                if empty {
                    builder.close();
                }
            }
            Event::End(_) => {
                if let Err(msg) = builder.flush_text() {
                    fail!(before, "{msg}");
                }
                builder.close();
            }
            Event::Text(text) => {
                let s = match text.unescape() {
                    Ok(s) => s,
                    Err(e) => fail!(before, "{e}"),
                };
                builder.text(&s);
            }
            Event::CData(cdata) => {
                let raw = cdata.into_inner();
                match std::str::from_utf8(&raw) {
                    Ok(s) => builder.text(s),
                    Err(_) => fail!(before, "CDATA is not valid UTF-8"),
                }
            }
            Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
            Event::Eof => break,
        }
        buf.clear();
    }
    let end = reader.buffer_position();
    if let Err(msg) = builder.flush_text() {
        fail!(end, "{msg}");
    }
    if !builder.stack.is_empty() {
        fail!(end, "unexpected end of input inside <{}>", builder.open_name());
    }
    if !builder.saw_root {
        fail!(end, "no document element");
    }
    Ok(DocumentTree::assemble(doc_id, builder.out))
}

/// Parses a document held in memory.
pub fn parse_str(doc_id: DocId, text: &str) -> Result<DocumentTree, XmlError> {
    parse_document(doc_id, text.as_bytes())
}

struct Numbering {
    doc_id: DocId,
    counter: u32,
    /// `(start, index into out)` of elements whose end is still unknown.
    stack: Vec<(u32, usize)>,
    out: Vec<NodeDescriptor>,
    pending_text: String,
    saw_root: bool,
}

impl Numbering {
    fn new(doc_id: DocId) -> Self {
        Self {
            doc_id,
            counter: 0,
            stack: Vec::new(),
            out: Vec::new(),
            pending_text: String::new(),
            saw_root: false,
        }
    }

    fn next(&mut self) -> u32 {
        self.counter += 1;
        self.counter
    }

    fn open_name(&self) -> &str {
        self.stack
            .last()
            .and_then(|&(_, i)| self.out[i].name.as_deref())
            .unwrap_or("")
    }

    fn open(&mut self, name: String, attrs: Vec<(String, String)>) -> Result<(), String> {
        self.flush_text()?;
        if self.stack.is_empty() {
            if self.saw_root {
                return Err(format!("second document element <{name}>"));
            }
            self.saw_root = true;
        }
        let parent = self.stack.last().map_or(0, |&(s, _)| s);
        let start = self.next();
        self.out.push(NodeDescriptor {
            doc_id: self.doc_id,
            start,
            end: 0,
            parent,
            node_type: NodeType::Element,
            name: Some(name),
            value: None,
        });
        self.stack.push((start, self.out.len() - 1));
        for (key, value) in attrs {
            let a_start = self.next();
            let a_end = self.next();
            self.out.push(NodeDescriptor {
                doc_id: self.doc_id,
                start: a_start,
                end: a_end,
                parent: start,
                node_type: NodeType::Attribute,
                name: Some(key),
                value: Some(value),
            });
        }
        Ok(())
    }

    fn close(&mut self) {
        // stack top holds this element's start; the new top is its parent
        if let Some((_, idx)) = self.stack.pop() {
            let end = self.next();
            self.out[idx].end = end;
        }
    }

    fn text(&mut self, s: &str) {
        self.pending_text.push_str(s);
    }

    fn flush_text(&mut self) -> Result<(), String> {
        if self.pending_text.is_empty() {
            return Ok(());
        }
        let text = std::mem::take(&mut self.pending_text);
        if text.trim().is_empty() {
            return Ok(());
        }
        let Some(&(parent, _)) = self.stack.last() else {
            return Err("text outside the document element".into());
        };
        let start = self.next();
        let end = self.next();
        self.out.push(NodeDescriptor {
            doc_id: self.doc_id,
            start,
            end,
            parent,
            node_type: NodeType::Text,
            name: None,
            value: Some(text),
        });
        Ok(())
    }
}

fn same_doc(u: &NodeDescriptor, v: &NodeDescriptor) -> Result<(), XmlError> {
    if u.doc_id != v.doc_id {
        return Err(XmlError::CrossDocument(u.doc_id, v.doc_id));
    }
    Ok(())
}

/// `u` strictly contains `v`.
pub fn is_ancestor(u: &NodeDescriptor, v: &NodeDescriptor) -> Result<bool, XmlError> {
    same_doc(u, v)?;
    Ok(u.start < v.start && v.end < u.end)
}

/// `u` closes before `v` opens.
pub fn precedes(u: &NodeDescriptor, v: &NodeDescriptor) -> Result<bool, XmlError> {
    same_doc(u, v)?;
    Ok(u.end < v.start)
}

/// Text nodes strictly inside `element`, in document order.
pub fn descendant_text_nodes<'t>(
    element: &NodeDescriptor,
    tree: &'t DocumentTree,
) -> Result<Vec<&'t NodeDescriptor>, XmlError> {
    expect_element(element)?;
    if element.doc_id != tree.doc_id() {
        return Err(XmlError::CrossDocument(element.doc_id, tree.doc_id()));
    }
    Ok(tree.descriptors[tree.inner_range(element)]
        .iter()
        .filter(|d| d.node_type == NodeType::Text)
        .collect())
}

/// Number of parent links from `node` up to `element`.
pub fn arc_distance(element: &NodeDescriptor, node: &NodeDescriptor, tree: &DocumentTree) -> Result<u32, XmlError> {
    expect_element(element)?;
    if !is_ancestor(element, node)? {
        return Err(XmlError::NotAncestor {
            ancestor: element.start,
            node: node.start,
        });
    }
    let mut hops = 0;
    let mut at = node;
    while at.start != element.start {
        hops += 1;
        at = tree.get(at.parent).ok_or(XmlError::NotAncestor {
            ancestor: element.start,
            node: node.start,
        })?;
    }
    Ok(hops)
}

fn expect_element(d: &NodeDescriptor) -> Result<(), XmlError> {
    if d.node_type != NodeType::Element {
        return Err(XmlError::WrongNodeType {
            start: d.start,
            found: d.node_type.as_str(),
            expected: "element",
        });
    }
    Ok(())
}
