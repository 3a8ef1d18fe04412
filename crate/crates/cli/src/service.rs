//! Request handling shared by the HTTP routes and the CLI.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use xpir::profile::ProfileExport;
use xpir::retrieval::{Expansion, QueryInput};
use xpir::storage::{load_index, StorageError};
use xpir::{
    build_query_vector, create_profile, load_ontology, rank, search, DocId, IndexStore, NodeType, Ontology,
    OntologyError, Personalization, ProfileError, ProfileStore, Query, RankOptions, RetrievalError,
};

use crate::config::{SearchDefaults, ServiceConfig};

#[derive(Debug)]
pub enum ServiceError {
    BadRequest(String),
    UnknownUser(String),
    NotFound(String),
    Conflict(String),
    Stale(String),
    EmptyQuery,
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::BadRequest(_) => 400,
            ServiceError::UnknownUser(_) | ServiceError::NotFound(_) => 404,
            ServiceError::Conflict(_) | ServiceError::Stale(_) => 409,
            ServiceError::EmptyQuery => 422,
            ServiceError::Internal(_) => 500,
        }
    }
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServiceError::BadRequest(m) | ServiceError::NotFound(m) | ServiceError::Conflict(m) => f.write_str(m),
            ServiceError::Stale(m) | ServiceError::Internal(m) => f.write_str(m),
            ServiceError::UnknownUser(u) => write!(f, "unknown user `{u}`"),
            ServiceError::EmptyQuery => f.write_str("no concepts recognized in the query"),
        }
    }
}

impl std::error::Error for ServiceError {}

impl From<StorageError> for ServiceError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::NotFound(u) => ServiceError::UnknownUser(u),
            StorageError::DuplicateUser(u) => ServiceError::Conflict(format!("user `{u}` already exists")),
            StorageError::Contention(_) => ServiceError::Conflict(e.to_string()),
            StorageError::StaleIndex { .. } => ServiceError::Stale(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<RetrievalError> for ServiceError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::EmptyQuery => ServiceError::EmptyQuery,
            RetrievalError::StaleIndex { .. } => ServiceError::Stale(e.to_string()),
            RetrievalError::Profile(ProfileError::StaleProfile { .. }) => ServiceError::Stale(e.to_string()),
            RetrievalError::Ontology(o) => ServiceError::BadRequest(o.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<ProfileError> for ServiceError {
    fn from(e: ProfileError) -> Self {
        RetrievalError::Profile(e).into()
    }
}

/// Body of `POST /search`. Exactly one of `query` and `concept` is required.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub user_id: String,
    #[serde(default)]
    pub query: Option<String>,
    /// Concept id used as the query seed.
    #[serde(default)]
    pub concept: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub overlap_filter: Option<bool>,
    /// `false` ranks without the profile and leaves it untouched; `user_id`
    /// may then be empty.
    #[serde(default)]
    pub use_profile: Option<bool>,
    #[serde(default)]
    pub normalize_profile: Option<bool>,
    #[serde(default)]
    pub max_hops: Option<u32>,
    #[serde(default)]
    pub relations: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub rank: usize,
    pub doc_id: u32,
    pub doc_name: String,
    pub start: u32,
    pub end: u32,
    pub node_type: NodeType,
    pub name: Option<String>,
    /// Slash-separated element names from the document element down.
    pub path: String,
    pub score: f64,
    pub matched_concepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub user_id: String,
    /// Query vector keyed by concept id.
    pub query: BTreeMap<String, f64>,
    pub profile_updated: bool,
    pub results: Vec<Hit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRef {
    pub start: u32,
    pub end: u32,
    pub node_type: NodeType,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub doc_id: u32,
    pub doc_name: String,
    pub start: u32,
    pub end: u32,
    pub node_type: NodeType,
    pub name: Option<String>,
    pub value: Option<String>,
    /// Start of the parent element, absent for the document element.
    pub parent: Option<u32>,
    pub path: Vec<String>,
    pub children: Vec<NodeRef>,
    /// Text of every descendant text node, space separated.
    pub text: String,
    /// Indexed concept weights of the node, keyed by concept id.
    pub concepts: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub ontology_name: String,
    pub ontology_fingerprint: String,
    pub concepts: usize,
    pub index_fingerprint: String,
    pub index_build_timestamp: u64,
    pub documents: usize,
    pub text_nodes: u64,
}

/// Loaded ontology, index and profile store.
#[derive(Debug)]
pub struct Engine {
    pub ontology: Ontology,
    pub index: IndexStore,
    pub profiles: ProfileStore,
    pub defaults: SearchDefaults,
}

pub fn read_ontology(path: &Path) -> anyhow::Result<Ontology> {
    let file = File::open(path).with_context(|| format!("cannot open ontology {}", path.display()))?;
    load_ontology(BufReader::new(file)).with_context(|| format!("invalid ontology {}", path.display()))
}

impl Engine {
    pub fn open(config: &ServiceConfig) -> anyhow::Result<Self> {
        Self::from_paths(&config.ontology, &config.index, &config.profiles, config.search.clone())
    }

    pub fn from_paths(
        ontology: &Path,
        index: &Path,
        profiles: &Path,
        defaults: SearchDefaults,
    ) -> anyhow::Result<Self> {
        let ontology = read_ontology(ontology)?;
        let index = load_index(index, &ontology).with_context(|| format!("cannot load index {}", index.display()))?;
        let profiles = ProfileStore::open(profiles)?;
        Ok(Self {
            ontology,
            index,
            profiles,
            defaults,
        })
    }

    pub fn register(&self, user_id: &str) -> Result<ProfileExport, ServiceError> {
        if user_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("user_id must not be empty".into()));
        }
        let profile = create_profile(user_id, &self.ontology);
        self.profiles.create(&profile)?;
        Ok(profile.export(&self.ontology))
    }

    pub fn profile(&self, user_id: &str) -> Result<ProfileExport, ServiceError> {
        let p = self.profiles.load(user_id)?;
        p.check_fingerprint(&self.ontology)?;
        Ok(p.export(&self.ontology))
    }

    fn query_of(&self, req: &SearchRequest) -> Result<Query, ServiceError> {
        let input = match (&req.query, &req.concept) {
            (Some(text), None) => {
                if text.trim().is_empty() {
                    return Err(ServiceError::EmptyQuery);
                }
                QueryInput::Text(text.clone())
            }
            (None, Some(key)) => QueryInput::Concept(
                self.ontology
                    .lookup(key)
                    .map_err(|e: OntologyError| ServiceError::BadRequest(e.to_string()))?,
            ),
            _ => {
                return Err(ServiceError::BadRequest(
                    "give exactly one of `query` and `concept`".into(),
                ))
            }
        };
        Ok(Query {
            input,
            expansion: Expansion {
                relations: req.relations.clone().unwrap_or_else(|| self.defaults.relations.clone()),
                max_hops: req.max_hops.unwrap_or(self.defaults.max_hops),
            },
        })
    }

    /// Ranks against the stored profile as it was before the request, then
    /// persists the reinforced profile. A failed request changes nothing.
    pub fn search(&self, req: &SearchRequest) -> Result<SearchResponse, ServiceError> {
        let k = req.k.unwrap_or(self.defaults.k);
        if k == 0 {
            return Err(ServiceError::BadRequest("k must be positive".into()));
        }
        let options = RankOptions {
            k: Some(k),
            overlap_filter: req.overlap_filter.unwrap_or(self.defaults.overlap_filter),
        };
        let normalize = req.normalize_profile.unwrap_or(self.defaults.normalize_profile);
        let query = self.query_of(req)?;
        let use_profile = req.use_profile.unwrap_or(true);
        let q = build_query_vector(&query, &self.ontology)?;
        let results = if use_profile {
            self.profiles.update(&req.user_id, |p| -> Result<_, ServiceError> {
                let timestamp = p.history.len() as u64 + 1;
                Ok(search(
                    &query,
                    p,
                    &self.index,
                    &self.ontology,
                    &options,
                    normalize,
                    timestamp,
                )?)
            })?
        } else {
            if !req.user_id.is_empty() {
                self.profiles.load(&req.user_id)?.check_fingerprint(&self.ontology)?;
            }
            rank(&self.index, &self.ontology, &q, Personalization::Neutral, &options)?
        };
        let key = |c| self.ontology.key(c).to_string();
        let hits = results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let doc = self.index.document(r.doc_id).expect("results come from the index");
                let node = doc.tree.get(r.start).expect("results come from the index");
                Hit {
                    rank: i + 1,
                    doc_id: r.doc_id.0,
                    doc_name: doc.name.clone(),
                    start: r.start,
                    end: r.end,
                    node_type: r.node_type,
                    name: node.name.clone(),
                    path: format!("/{}", doc.tree.path_to(r.start).join("/")),
                    score: r.score,
                    matched_concepts: r.matched_concepts.into_iter().map(key).collect(),
                }
            })
            .collect();
        Ok(SearchResponse {
            user_id: req.user_id.clone(),
            query: q.iter().map(|(c, w)| (key(c), w)).collect(),
            profile_updated: use_profile,
            results: hits,
        })
    }

    /// `doc` is a numeric document id or a document name.
    pub fn node(&self, doc: &str, start: u32) -> Result<NodeView, ServiceError> {
        let d = doc
            .parse::<u32>()
            .ok()
            .and_then(|id| self.index.document(DocId(id)))
            .or_else(|| self.index.document_by_name(doc))
            .ok_or_else(|| ServiceError::NotFound(format!("unknown document `{doc}`")))?;
        let tree = &d.tree;
        let node = tree
            .get(start)
            .ok_or_else(|| ServiceError::NotFound(format!("document `{doc}` has no node starting at {start}")))?;
        let inner = &tree.descriptors()[tree.inner_range(node)];
        let children = inner
            .iter()
            .filter(|c| c.parent == node.start)
            .map(|c| NodeRef {
                start: c.start,
                end: c.end,
                node_type: c.node_type,
                name: c.name.clone(),
            })
            .collect();
        let text = match node.node_type {
            NodeType::Element => inner
                .iter()
                .filter(|c| c.node_type == NodeType::Text)
                .filter_map(|c| c.value.as_deref())
                .map(str::trim)
                .collect::<Vec<_>>()
                .join(" "),
            _ => node.value.clone().unwrap_or_default(),
        };
        let concepts = d
            .entry(start)
            .map(|e| {
                e.base_vector
                    .iter()
                    .map(|(c, w)| (self.ontology.key(c).to_string(), w))
                    .collect()
            })
            .unwrap_or_default();
        Ok(NodeView {
            doc_id: d.doc_id.0,
            doc_name: d.name.clone(),
            start: node.start,
            end: node.end,
            node_type: node.node_type,
            name: node.name.clone(),
            value: node.value.clone(),
            parent: (node.parent != 0).then_some(node.parent),
            path: tree.path_to(start).into_iter().map(String::from).collect(),
            children,
            text,
            concepts,
        })
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            ontology_name: self.ontology.name().into(),
            ontology_fingerprint: self.ontology.fingerprint().into(),
            concepts: self.ontology.len(),
            index_fingerprint: self.index.header.ontology_fingerprint.clone(),
            index_build_timestamp: self.index.header.build_timestamp,
            documents: self.index.documents.len(),
            text_nodes: self.index.header.total_text_nodes,
        }
    }
}
