//! Query construction, scoring and ranking of XML fragments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::index::{extract_concepts, DocumentIndex, EntryDetail, IndexStore, NodeIndexEntry};
use crate::ontology::{ConceptId, Ontology, OntologyError};
use crate::profile::{ProfileError, UserProfile};
use crate::vector::ConceptVector;
use crate::xmldoc::{DocId, NodeType};

/// Scores below this are treated as zero.
pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("query matched no ontology concept")]
    EmptyQuery,
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("index was built for ontology {index}, current ontology is {current}")]
    StaleIndex { index: String, current: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryInput {
    Text(String),
    Concept(ConceptId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expansion {
    /// Named relations to follow besides is-a children.
    pub relations: Vec<String>,
    pub max_hops: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub input: QueryInput,
    #[serde(default)]
    pub expansion: Expansion,
}

impl Query {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            input: QueryInput::Text(text.into()),
            expansion: Expansion::default(),
        }
    }

    pub fn concept(id: ConceptId) -> Self {
        Self {
            input: QueryInput::Concept(id),
            expansion: Expansion::default(),
        }
    }

    pub fn expanded(mut self, relations: &[&str], max_hops: u32) -> Self {
        self.expansion = Expansion {
            relations: relations.iter().map(|s| s.to_string()).collect(),
            max_hops,
        };
        self
    }
}

/// Seeds weigh 1; a concept reached after `h` hops weighs `1/(1+h)`. When
/// several seeds reach a concept the closest one wins.
pub fn build_query_vector(query: &Query, ontology: &Ontology) -> Result<ConceptVector, RetrievalError> {
    let seeds: Vec<ConceptId> = match &query.input {
        QueryInput::Text(text) => {
            let found: Vec<ConceptId> = extract_concepts(text, ontology).into_keys().collect();
            ontology.most_specific(&found)?
        }
        QueryInput::Concept(c) => {
            if !ontology.contains(*c) {
                return Err(OntologyError::UnknownConcept(c.to_string()).into());
            }
            vec![*c]
        }
    };
    if seeds.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let relations: Vec<&str> = query.expansion.relations.iter().map(String::as_str).collect();
    let mut best: BTreeMap<ConceptId, u32> = BTreeMap::new();
    for seed in seeds {
        for (c, hop) in ontology.related_concepts(seed, &relations, query.expansion.max_hops)? {
            let slot = best.entry(c).or_insert(hop);
            *slot = (*slot).min(hop);
        }
    }
    Ok(best.into_iter().map(|(c, h)| (c, 1.0 / (1.0 + h as f64))).collect())
}

pub fn cosine_score(q: &ConceptVector, v: &ConceptVector) -> f64 {
    let denom = q.norm() * v.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (q.dot(v) / denom).clamp(0.0, 1.0)
}

/// Multiplies each entry by the user's interest in that concept. With
/// `normalize`, interests are divided by their mean first.
pub fn personalize_element_vector(
    base: &ConceptVector,
    profile: &UserProfile,
    normalize: bool,
) -> Result<ConceptVector, ProfileError> {
    let scale = if normalize { 1.0 / profile.mean_interest() } else { 1.0 };
    let mut missing = None;
    let out = base.scaled_by(|c| match profile.interests.get(c.index()) {
        Some(w) => w * scale,
        None => {
            missing = Some(c);
            0.0
        }
    });
    match missing {
        Some(c) => Err(ProfileError::UnknownConcept(c.to_string())),
        None => Ok(out),
    }
}

/// Support factor `e^{N_P/(N_P−1)} / e^{N_NP}`. The exponent is taken as 2 at
/// `N_P = 1`, and the factor is 0 without any supporting leaf.
pub fn pertinence_factor(supporting: u32, non_supporting: u32) -> f64 {
    if supporting == 0 {
        return 0.0;
    }
    let lead = if supporting == 1 {
        2.0
    } else {
        supporting as f64 / (supporting as f64 - 1.0)
    };
    (lead - non_supporting as f64).exp()
}

pub fn element_pertinence(supporting: u32, non_supporting: u32, cosine: f64) -> f64 {
    pertinence_factor(supporting, non_supporting) * cosine
}

/// How element vectors are personalized before scoring.
#[derive(Debug, Clone, Copy)]
pub enum Personalization<'a> {
    /// No profile factor; equivalent to a uniform profile.
    Neutral,
    Profile {
        profile: &'a UserProfile,
        normalize: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankOptions {
    /// Maximum results; `None` keeps every node with a positive score.
    pub k: Option<usize>,
    /// Drop the lower-scored node of any ancestor/descendant pair.
    pub overlap_filter: bool,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            k: Some(10),
            overlap_filter: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub doc_id: DocId,
    pub start: u32,
    pub end: u32,
    pub node_type: NodeType,
    pub score: f64,
    pub matched_concepts: Vec<ConceptId>,
}

fn matched(q: &ConceptVector, v: &ConceptVector) -> Vec<ConceptId> {
    q.concepts().filter(|&c| v.get(c) != 0.0).collect()
}

fn score_document(
    doc: &DocumentIndex,
    q: &ConceptVector,
    personalization: Personalization<'_>,
    out: &mut Vec<RankedResult>,
) -> Result<(), RetrievalError> {
    let entries = &doc.entries;
    // Prefix counts of leaves and of supporting leaves over `entries`.
    let mut leaves = Vec::with_capacity(entries.len() + 1);
    let mut supporting = Vec::with_capacity(entries.len() + 1);
    let mut leaf_scores = vec![0.0; entries.len()];
    leaves.push(0u32);
    supporting.push(0u32);
    for (i, e) in entries.iter().enumerate() {
        let (mut l, mut s) = (leaves[i], supporting[i]);
        if e.is_leaf() {
            l += 1;
            let score = cosine_score(q, &e.base_vector);
            if score >= SCORE_FLOOR {
                s += 1;
                leaf_scores[i] = score;
            }
        }
        leaves.push(l);
        supporting.push(s);
    }
    for (i, e) in entries.iter().enumerate() {
        let node = doc.tree.get(e.start).expect("index entries mirror the tree");
        let score = match &e.detail {
            EntryDetail::Leaf { .. } => leaf_scores[i],
            EntryDetail::Element { .. } => {
                element_score(entries, i, node.end, q, &leaves, &supporting, personalization)?
            }
        };
        if score >= SCORE_FLOOR {
            out.push(RankedResult {
                doc_id: doc.doc_id,
                start: e.start,
                end: node.end,
                node_type: e.node_type,
                score,
                matched_concepts: matched(q, &e.base_vector),
            });
        }
    }
    Ok(())
}

fn element_score(
    entries: &[NodeIndexEntry],
    i: usize,
    end: u32,
    q: &ConceptVector,
    leaves: &[u32],
    supporting: &[u32],
    personalization: Personalization<'_>,
) -> Result<f64, RetrievalError> {
    let e = &entries[i];
    if q.dot(&e.base_vector) == 0.0 {
        return Ok(0.0);
    }
    let hi = i + 1 + entries[i + 1..].partition_point(|x| x.start < end);
    let n_p = supporting[hi] - supporting[i + 1];
    let n_np = leaves[hi] - leaves[i + 1] - n_p;
    if n_p == 0 {
        return Ok(0.0);
    }
    let cosine = match personalization {
        Personalization::Neutral => cosine_score(q, &e.base_vector),
        Personalization::Profile { profile, normalize } => {
            cosine_score(q, &personalize_element_vector(&e.base_vector, profile, normalize)?)
        }
    };
    Ok(element_pertinence(n_p, n_np, cosine))
}

fn overlaps(a: &RankedResult, b: &RankedResult) -> bool {
    a.doc_id == b.doc_id && ((a.start < b.start && b.end < a.end) || (b.start < a.start && a.end < b.end))
}

/// Scores every indexed node against `q` and returns them best first.
pub fn rank(
    store: &IndexStore,
    ontology: &Ontology,
    q: &ConceptVector,
    personalization: Personalization<'_>,
    options: &RankOptions,
) -> Result<Vec<RankedResult>, RetrievalError> {
    if store.header.ontology_fingerprint != ontology.fingerprint() {
        return Err(RetrievalError::StaleIndex {
            index: store.header.ontology_fingerprint.clone(),
            current: ontology.fingerprint().to_string(),
        });
    }
    if let Personalization::Profile { profile, .. } = personalization {
        profile.check_fingerprint(ontology)?;
    }
    if q.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let mut all = Vec::new();
    for doc in &store.documents {
        score_document(doc, q, personalization, &mut all)?;
    }
    all.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.doc_id.cmp(&b.doc_id))
            .then(a.start.cmp(&b.start))
    });
    let limit = options.k.unwrap_or(usize::MAX);
    if !options.overlap_filter {
        all.truncate(limit);
        return Ok(all);
    }
    let mut kept: Vec<RankedResult> = Vec::new();
    for r in all {
        if kept.len() >= limit {
            break;
        }
        if !kept.iter().any(|k| overlaps(k, &r)) {
            kept.push(r);
        }
    }
    Ok(kept)
}

/// Answers `query` for `profile`, then reinforces the profile with the query
/// vector at `timestamp`.
pub fn search(
    query: &Query,
    profile: &mut UserProfile,
    store: &IndexStore,
    ontology: &Ontology,
    options: &RankOptions,
    normalize: bool,
    timestamp: u64,
) -> Result<Vec<RankedResult>, RetrievalError> {
    let q = build_query_vector(query, ontology)?;
    let results = rank(
        store,
        ontology,
        &q,
        Personalization::Profile { profile, normalize },
        options,
    )?;
    profile.update(ontology, &q, timestamp)?;
    Ok(results)
}
