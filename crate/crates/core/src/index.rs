//! Concept extraction, text-node weighting, upward propagation to elements,
//! and the collection index that ties them together.
//!
//! Element vectors are stored without the user-interest factor; retrieval
//! multiplies it in per user at query time, so one index serves every profile.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ontology::{ConceptId, Ontology};
use crate::vector::ConceptVector;
use crate::xmldoc::{self, arc_distance, DocId, DocumentTree, NodeDescriptor, NodeType, XmlError};

/// Occurrence counts (`cf`) of concepts in one text node.
pub type ConceptCounts = BTreeMap<ConceptId, u32>;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("collection has no text nodes")]
    EmptyCollection,
    #[error("no documents to index")]
    NoDocuments,
    #[error("concept {concept} occurs in a node but in no collection text node")]
    Inconsistent { concept: ConceptId },
    #[error("document `{name}`: {source}")]
    Document {
        name: String,
        #[source]
        source: XmlError,
    },
    #[error(transparent)]
    Structure(#[from] XmlError),
}

/// Counts ontology concepts mentioned in `text`.
///
/// Keywords match case-insensitively on word boundaries, longest first. When a
/// matched span names several concepts, only the most specific ones count.
pub fn extract_concepts(text: &str, ontology: &Ontology) -> ConceptCounts {
    let tokens = crate::text::tokenize(text);
    let mut counts = ConceptCounts::new();
    for span in ontology.matcher().scan(&tokens) {
        let chosen = if span.concepts.len() == 1 {
            span.concepts.to_vec()
        } else {
            ontology
                .most_specific(span.concepts)
                .expect("matcher only yields ontology concepts")
        };
        for c in chosen {
            *counts.entry(c).or_insert(0) += 1;
        }
    }
    counts
}

/// `|N_t|` and `|N_t^{c_j}|` over the whole collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub total_text_nodes: u64,
    /// Indexed by [`ConceptId`].
    pub text_nodes_containing: Vec<u64>,
}

impl CollectionStats {
    pub fn containing(&self, c: ConceptId) -> u64 {
        self.text_nodes_containing.get(c.index()).copied().unwrap_or(0)
    }

    /// Natural-log inverse text-node frequency.
    pub fn iecf(&self, c: ConceptId) -> Option<f64> {
        let n = self.containing(c);
        (n > 0).then(|| (self.total_text_nodes as f64 / n as f64).ln())
    }
}

pub fn compute_stats<'a>(
    all_counts: impl IntoIterator<Item = &'a ConceptCounts>,
    concept_count: usize,
) -> Result<CollectionStats, IndexError> {
    let mut total = 0u64;
    let mut containing = vec![0u64; concept_count];
    for counts in all_counts {
        total += 1;
        for (&c, &cf) in counts {
            if cf > 0 {
                containing[c.index()] += 1;
            }
        }
    }
    if total == 0 {
        return Err(IndexError::EmptyCollection);
    }
    Ok(CollectionStats {
        total_text_nodes: total,
        text_nodes_containing: containing,
    })
}

/// `w_ij = cf_ij × ln(|N_t| / |N_t^{c_j}|) × W_R(c_j)`.
pub fn weight_text_node(
    counts: &ConceptCounts,
    stats: &CollectionStats,
    weights: &[f64],
) -> Result<ConceptVector, IndexError> {
    let mut pairs = Vec::with_capacity(counts.len());
    for (&c, &cf) in counts {
        if cf == 0 {
            continue;
        }
        let iecf = stats.iecf(c).ok_or(IndexError::Inconsistent { concept: c })?;
        pairs.push((c, cf as f64 * iecf * weights[c.index()]));
    }
    Ok(ConceptVector::from_pairs(pairs))
}

/// `|N_t^e|` and per-concept `|N_t^{c_j,e}|` for one element.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub text_nodes: u32,
    pub containing: BTreeMap<ConceptId, u32>,
}

impl Coverage {
    pub fn ratio(&self, c: ConceptId) -> f64 {
        if self.text_nodes == 0 {
            return 0.0;
        }
        self.containing.get(&c).copied().unwrap_or(0) as f64 / self.text_nodes as f64
    }
}

/// Coverage of `element` over the indexed leaves in `leaf_counts` (keyed by start).
pub fn element_coverage(
    element: &NodeDescriptor,
    tree: &DocumentTree,
    leaf_counts: &BTreeMap<u32, ConceptCounts>,
) -> Coverage {
    let mut cov = Coverage::default();
    for d in &tree.descriptors()[tree.inner_range(element)] {
        if let Some(counts) = leaf_counts.get(&d.start) {
            cov.text_nodes += 1;
            for (&c, &cf) in counts {
                if cf > 0 {
                    *cov.containing.entry(c).or_insert(0) += 1;
                }
            }
        }
    }
    cov
}

/// Profile-independent element weight:
/// `Σ_k (|N_t^{c_j,e}| / |N_t^e|) × (1 / Dist(e, t_k)) × w_kj`.
///
/// `leaf_vectors` holds the vector of every indexed leaf keyed by start; an
/// element without indexed descendants gets an empty vector.
pub fn propagate_to_element(
    element: &NodeDescriptor,
    tree: &DocumentTree,
    leaf_vectors: &BTreeMap<u32, ConceptVector>,
    coverage: &Coverage,
) -> Result<ConceptVector, IndexError> {
    let mut acc: BTreeMap<ConceptId, f64> = BTreeMap::new();
    for d in &tree.descriptors()[tree.inner_range(element)] {
        let Some(vector) = leaf_vectors.get(&d.start) else {
            continue;
        };
        if vector.is_empty() {
            continue;
        }
        let dist = arc_distance(element, d, tree)? as f64;
        for (c, w) in vector.iter() {
            *acc.entry(c).or_insert(0.0) += coverage.ratio(c) * (1.0 / dist) * w;
        }
    }
    Ok(ConceptVector::from_pairs(acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingMode {
    /// Real weights derived from the ontology hierarchy.
    Ontology,
    /// Every concept weighs `1/|N|`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogBase {
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorPolicy {
    #[default]
    Abort,
    Skip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexOptions {
    pub weighting: WeightingMode,
    /// Treat attribute values as concept-bearing leaves.
    pub index_attributes: bool,
    /// Logical build time recorded in the header.
    pub build_timestamp: u64,
    pub on_error: ErrorPolicy,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            weighting: WeightingMode::Ontology,
            index_attributes: false,
            build_timestamp: 0,
            on_error: ErrorPolicy::Abort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexHeader {
    pub ontology_fingerprint: String,
    pub log_base: LogBase,
    pub weighting: WeightingMode,
    pub index_attributes: bool,
    pub build_timestamp: u64,
    pub total_text_nodes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EntryDetail {
    /// Text (or indexed attribute) leaf with its raw concept counts.
    Leaf {
        counts: ConceptCounts,
    },
    Element {
        coverage: Coverage,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeIndexEntry {
    pub doc_id: DocId,
    pub start: u32,
    pub node_type: NodeType,
    pub base_vector: ConceptVector,
    pub detail: EntryDetail,
}

impl NodeIndexEntry {
    pub fn is_leaf(&self) -> bool {
        matches!(self.detail, EntryDetail::Leaf { .. })
    }

    pub fn coverage(&self) -> Option<&Coverage> {
        match &self.detail {
            EntryDetail::Element { coverage } => Some(coverage),
            EntryDetail::Leaf { .. } => None,
        }
    }
}

/// Index entries of one document, sorted by start.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentIndex {
    pub doc_id: DocId,
    pub name: String,
    pub tree: DocumentTree,
    pub entries: Vec<NodeIndexEntry>,
}

impl DocumentIndex {
    pub fn entry(&self, start: u32) -> Option<&NodeIndexEntry> {
        self.entries
            .binary_search_by_key(&start, |e| e.start)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Entries strictly inside the interval of the node at `start`.
    pub fn inner_entries(&self, start: u32, end: u32) -> &[NodeIndexEntry] {
        let lo = self.entries.partition_point(|e| e.start <= start);
        let hi = self.entries.partition_point(|e| e.start < end);
        &self.entries[lo..hi.max(lo)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexStore {
    pub header: IndexHeader,
    pub stats: CollectionStats,
    pub documents: Vec<DocumentIndex>,
}

impl IndexStore {
    pub fn document(&self, doc: DocId) -> Option<&DocumentIndex> {
        self.documents
            .binary_search_by_key(&doc, |d| d.doc_id)
            .ok()
            .map(|i| &self.documents[i])
    }

    pub fn document_by_name(&self, name: &str) -> Option<&DocumentIndex> {
        self.documents.iter().find(|d| d.name == name)
    }

    pub fn element_count(&self) -> usize {
        self.documents
            .iter()
            .flat_map(|d| &d.entries)
            .filter(|e| !e.is_leaf())
            .count()
    }

    pub fn leaf_count(&self) -> usize {
        self.documents
            .iter()
            .flat_map(|d| &d.entries)
            .filter(|e| e.is_leaf())
            .count()
    }

    /// Recomputes collection stats from the stored leaf counts.
    pub fn recount_stats(&self, concept_count: usize) -> Result<CollectionStats, IndexError> {
        compute_stats(
            self.documents
                .iter()
                .flat_map(|d| &d.entries)
                .filter_map(|e| match &e.detail {
                    EntryDetail::Leaf { counts } => Some(counts),
                    EntryDetail::Element { .. } => None,
                }),
            concept_count,
        )
    }
}

/// Raw input to [`build_index`].
#[derive(Debug, Clone)]
pub struct SourceDocument {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl SourceDocument {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            bytes: bytes.into(),
        }
    }
}

/// Progress notifications emitted while building.
#[derive(Debug)]
pub enum BuildEvent<'a> {
    Parsed { name: &'a str, nodes: usize },
    Skipped { name: &'a str, error: &'a XmlError },
    Weighted { text_nodes: u64, elements: usize },
}

pub fn build_index(
    documents: &[SourceDocument],
    ontology: &Ontology,
    options: &IndexOptions,
) -> Result<IndexStore, IndexError> {
    build_index_with(documents, ontology, options, |_| {})
}

/// Two-phase build: parse and extract every document, then weight and
/// propagate once collection statistics are known.
pub fn build_index_with(
    documents: &[SourceDocument],
    ontology: &Ontology,
    options: &IndexOptions,
    mut progress: impl FnMut(BuildEvent<'_>),
) -> Result<IndexStore, IndexError> {
    if documents.is_empty() {
        return Err(IndexError::NoDocuments);
    }
    let is_leaf = |d: &NodeDescriptor| {
        d.node_type == NodeType::Text || (options.index_attributes && d.node_type == NodeType::Attribute)
    };

    let mut parsed: Vec<(DocId, &str, DocumentTree, BTreeMap<u32, ConceptCounts>)> = Vec::new();
    for (i, src) in documents.iter().enumerate() {
        let doc_id = DocId(i as u32);
        let tree = match xmldoc::parse_document(doc_id, src.bytes.as_slice()) {
            Ok(t) => t,
            Err(e) => match options.on_error {
                ErrorPolicy::Skip => {
                    progress(BuildEvent::Skipped {
                        name: &src.name,
                        error: &e,
                    });
                    continue;
                }
                ErrorPolicy::Abort => {
                    return Err(IndexError::Document {
                        name: src.name.clone(),
                        source: e,
                    })
                }
            },
        };
        progress(BuildEvent::Parsed {
            name: &src.name,
            nodes: tree.len(),
        });
        let counts: BTreeMap<u32, ConceptCounts> = tree
            .descriptors()
            .iter()
            .filter(|d| is_leaf(d))
            .map(|d| (d.start, extract_concepts(d.value.as_deref().unwrap_or(""), ontology)))
            .collect();
        parsed.push((doc_id, src.name.as_str(), tree, counts));
    }
    if parsed.is_empty() {
        return Err(IndexError::NoDocuments);
    }

    let stats = compute_stats(parsed.iter().flat_map(|p| p.3.values()), ontology.len())?;
    let uniform;
    let weights: &[f64] = match options.weighting {
        WeightingMode::Ontology => ontology.weights(),
        WeightingMode::Uniform => {
            uniform = ontology.uniform_weights();
            &uniform
        }
    };

    let mut out = Vec::with_capacity(parsed.len());
    let mut element_total = 0;
    for (doc_id, name, tree, counts) in parsed {
        let mut leaf_vectors = BTreeMap::new();
        for (&start, cf) in &counts {
            leaf_vectors.insert(start, weight_text_node(cf, &stats, weights)?);
        }
        let mut entries = Vec::new();
        for d in tree.descriptors() {
            if let Some(cf) = counts.get(&d.start) {
                entries.push(NodeIndexEntry {
                    doc_id,
                    start: d.start,
                    node_type: d.node_type,
                    base_vector: leaf_vectors[&d.start].clone(),
                    detail: EntryDetail::Leaf { counts: cf.clone() },
                });
            } else if d.node_type == NodeType::Element {
                let coverage = element_coverage(d, &tree, &counts);
                let base_vector = propagate_to_element(d, &tree, &leaf_vectors, &coverage)?;
                entries.push(NodeIndexEntry {
                    doc_id,
                    start: d.start,
                    node_type: NodeType::Element,
                    base_vector,
                    detail: EntryDetail::Element { coverage },
                });
                element_total += 1;
            }
        }
        out.push(DocumentIndex {
            doc_id,
            name: name.to_string(),
            tree,
            entries,
        });
    }
    progress(BuildEvent::Weighted {
        text_nodes: stats.total_text_nodes,
        elements: element_total,
    });

    Ok(IndexStore {
        header: IndexHeader {
            ontology_fingerprint: ontology.fingerprint().to_string(),
            log_base: LogBase::Natural,
            weighting: options.weighting,
            index_attributes: options.index_attributes,
            build_timestamp: options.build_timestamp,
            total_text_nodes: stats.total_text_nodes,
        },
        stats,
        documents: out,
    })
}
