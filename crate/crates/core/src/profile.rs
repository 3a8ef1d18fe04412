//! Per-user centers-of-interest vectors.
//!
//! A profile starts uniform at `1/|C|` and every query adds `e^{w} − 1` to the
//! weight of each concept it touches. Weights only grow.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ontology::{ConceptId, Ontology};
use crate::vector::ConceptVector;

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile of `{user}` was built for ontology {profile}, current ontology is {current}")]
    StaleProfile {
        user: String,
        profile: String,
        current: String,
    },
    #[error("unknown concept {0}")]
    UnknownConcept(String),
    #[error("profile dimension {found} does not match ontology size {expected}")]
    Dimension { found: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Caller-supplied logical time.
    pub timestamp: u64,
    pub query: ConceptVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub interests: Vec<f64>,
    pub history: Vec<HistoryEntry>,
    pub ontology_fingerprint: String,
}

pub fn create_profile(user_id: impl Into<String>, ontology: &Ontology) -> UserProfile {
    let n = ontology.len();
    UserProfile {
        user_id: user_id.into(),
        interests: vec![1.0 / n as f64; n],
        history: Vec::new(),
        ontology_fingerprint: ontology.fingerprint().to_string(),
    }
}

impl UserProfile {
    pub fn check_fingerprint(&self, ontology: &Ontology) -> Result<(), ProfileError> {
        if self.ontology_fingerprint != ontology.fingerprint() {
            return Err(ProfileError::StaleProfile {
                user: self.user_id.clone(),
                profile: self.ontology_fingerprint.clone(),
                current: ontology.fingerprint().to_string(),
            });
        }
        if self.interests.len() != ontology.len() {
            return Err(ProfileError::Dimension {
                found: self.interests.len(),
                expected: ontology.len(),
            });
        }
        Ok(())
    }

    /// `w_CI(t+1) = (e^{w_t} − 1) + w_CI(t)` for every concept of the query,
    /// then records the query in the history.
    pub fn update(&mut self, ontology: &Ontology, query: &ConceptVector, timestamp: u64) -> Result<(), ProfileError> {
        self.check_fingerprint(ontology)?;
        if let Some(bad) = query.concepts().find(|c| !ontology.contains(*c)) {
            return Err(ProfileError::UnknownConcept(bad.to_string()));
        }
        self.reinforce(query);
        self.history.push(HistoryEntry {
            timestamp,
            query: query.clone(),
        });
        Ok(())
    }

    fn reinforce(&mut self, query: &ConceptVector) {
        for (c, w) in query.iter() {
            self.interests[c.index()] += w.exp_m1();
        }
    }

    pub fn interest_weight(&self, concept: ConceptId) -> Result<f64, ProfileError> {
        self.interests
            .get(concept.index())
            .copied()
            .ok_or_else(|| ProfileError::UnknownConcept(concept.to_string()))
    }

    pub fn mean_interest(&self) -> f64 {
        if self.interests.is_empty() {
            return 0.0;
        }
        self.interests.iter().sum::<f64>() / self.interests.len() as f64
    }

    /// Rebuilds a profile from scratch by replaying its history.
    pub fn replay(&self, ontology: &Ontology) -> Result<UserProfile, ProfileError> {
        let mut fresh = create_profile(self.user_id.clone(), ontology);
        for h in &self.history {
            fresh.update(ontology, &h.query, h.timestamp)?;
        }
        Ok(fresh)
    }

    pub fn export(&self, ontology: &Ontology) -> ProfileExport {
        let key = |c: ConceptId| ontology.key(c).to_string();
        ProfileExport {
            user_id: self.user_id.clone(),
            ontology_fingerprint: self.ontology_fingerprint.clone(),
            weights: ontology.ids().map(|c| (key(c), self.interests[c.index()])).collect(),
            history: self
                .history
                .iter()
                .map(|h| ExportedQuery {
                    timestamp: h.timestamp,
                    query: h.query.iter().map(|(c, w)| (key(c), w)).collect(),
                })
                .collect(),
        }
    }

    pub fn import(export: &ProfileExport, ontology: &Ontology) -> Result<UserProfile, ProfileError> {
        let mut interests = vec![0.0; ontology.len()];
        if export.weights.len() != ontology.len() {
            return Err(ProfileError::Dimension {
                found: export.weights.len(),
                expected: ontology.len(),
            });
        }
        let resolve = |k: &str| {
            ontology
                .lookup(k)
                .map_err(|_| ProfileError::UnknownConcept(k.to_string()))
        };
        for (k, &w) in &export.weights {
            interests[resolve(k)?.index()] = w;
        }
        let mut history = Vec::with_capacity(export.history.len());
        for h in &export.history {
            let mut pairs = Vec::new();
            for (k, &w) in &h.query {
                pairs.push((resolve(k)?, w));
            }
            history.push(HistoryEntry {
                timestamp: h.timestamp,
                query: ConceptVector::from_pairs(pairs),
            });
        }
        Ok(UserProfile {
            user_id: export.user_id.clone(),
            interests,
            history,
            ontology_fingerprint: export.ontology_fingerprint.clone(),
        })
    }
}

/// JSON shape of a profile: `{user_id, weights, history}` keyed by concept id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileExport {
    pub user_id: String,
    pub ontology_fingerprint: String,
    pub weights: BTreeMap<String, f64>,
    pub history: Vec<ExportedQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedQuery {
    pub timestamp: u64,
    pub query: BTreeMap<String, f64>,
}
