//! Shared inputs for the benchmarks.

use xpir::evalkit::{generate_corpus, Corpus, CorpusConfig};
use xpir::Ontology;

pub fn cs_ontology() -> Ontology {
    Ontology::from_json(include_str!("../../core/fixtures/cs_ontology.json")).expect("fixture ontology is valid")
}

pub fn corpus(ontology: &Ontology, documents: usize) -> Corpus {
    let config = CorpusConfig {
        documents,
        ..CorpusConfig::default()
    };
    generate_corpus(ontology, &config).expect("default corpus settings are valid")
}
