//! Sparse concept-weight vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ontology::ConceptId;

/// Sparse `concept → weight` map, kept sorted by concept with no stored zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    entries: Vec<(ConceptId, f64)>,
}

impl ConceptVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector from arbitrary pairs; repeated concepts are summed and
    /// zero weights dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (ConceptId, f64)>) -> Self {
        let mut map: BTreeMap<ConceptId, f64> = BTreeMap::new();
        for (c, w) in pairs {
            *map.entry(c).or_insert(0.0) += w;
        }
        Self {
            entries: map.into_iter().filter(|&(_, w)| w != 0.0).collect(),
        }
    }

    pub fn get(&self, concept: ConceptId) -> f64 {
        self.entries
            .binary_search_by_key(&concept, |&(c, _)| c)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConceptId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn concepts(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.entries.iter().map(|&(c, _)| c)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    /// Merge-join dot product.
    pub fn dot(&self, other: &ConceptVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Multiplies each entry by `factor(concept)`; zero products are dropped.
    pub fn scaled_by(&self, mut factor: impl FnMut(ConceptId) -> f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|&(c, w)| (c, w * factor(c)))
                .filter(|&(_, w)| w != 0.0)
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, w)| w.is_finite())
    }
}

impl FromIterator<(ConceptId, f64)> for ConceptVector {
    fn from_iter<T: IntoIterator<Item = (ConceptId, f64)>>(iter: T) -> Self {
        Self::from_pairs(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_dropped_and_duplicates_summed() {
        let v = ConceptVector::from_pairs([(ConceptId(2), 1.0), (ConceptId(1), 0.0), (ConceptId(2), 0.5)]);
        assert_eq!(v.len(), 1);
        assert_eq!(v.get(ConceptId(2)), 1.5);
        assert_eq!(v.get(ConceptId(1)), 0.0);
    }

    #[test]
    fn dot_over_disjoint_and_shared_support() {
        let a = ConceptVector::from_pairs([(ConceptId(0), 1.0), (ConceptId(3), 2.0)]);
        let b = ConceptVector::from_pairs([(ConceptId(3), 4.0), (ConceptId(5), 1.0)]);
        assert_eq!(a.dot(&b), 8.0);
        assert_eq!(a.dot(&ConceptVector::new()), 0.0);
    }
}
