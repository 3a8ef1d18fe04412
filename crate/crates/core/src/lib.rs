//! Ontology-driven personalized retrieval over XML collections.

pub mod evalkit;
pub mod index;
pub mod ontology;
pub mod profile;
pub mod retrieval;
pub mod storage;
pub mod text;
pub mod vector;
pub mod xmldoc;

pub use index::{build_index, IndexError, IndexOptions, IndexStore, SourceDocument, WeightingMode};
pub use ontology::{load_ontology, ConceptId, Ontology, OntologyError};
pub use profile::{create_profile, ProfileError, UserProfile};
pub use retrieval::{
    build_query_vector, rank, search, Personalization, Query, RankOptions, RankedResult, RetrievalError,
};
pub use storage::{load_index, save_index, DescriptorTables, ProfileStore, StorageError};
pub use vector::ConceptVector;
pub use xmldoc::{parse_document, parse_str, DocId, DocumentTree, NodeDescriptor, NodeType, XmlError};
