//! Domain ontology: loading, validation, depth coefficients and real weights.
//!
//! Every concept receives a depth coefficient, and the coefficients are turned
//! into real weights that share a total ontology weight of one. Deeper (more
//! specific) concepts end up with larger weights. All of the arithmetic runs on
//! exact rationals; floating point only appears in the exported tables.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::Read;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::KeywordMatcher;

/// Exact rational used for coefficients and weights.
pub type Rational = BigRational;

/// Reserved relation name for is-a child edges in traversal requests.
pub const IS_A: &str = "is-a";

/// Dense index of a concept inside one loaded [`Ontology`].
///
/// Concepts are sorted by their string id at load time, so ordering on
/// `ConceptId` is ordering on the id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptId(pub u32);

impl ConceptId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("malformed ontology file: {0}")]
    Parse(String),
    #[error("ontology has no concepts")]
    Empty,
    #[error("duplicate concept id `{0}`")]
    DuplicateId(String),
    #[error("concept `{0}` has no keywords")]
    EmptyKeywords(String),
    #[error("concept `{0}` has an empty or whitespace-only keyword")]
    BlankKeyword(String),
    #[error("concept `{concept}` references unknown concept `{target}`")]
    DanglingReference { concept: String, target: String },
    #[error("is-a cycle through concept `{0}`")]
    Cycle(String),
    #[error("all coefficients equal the root coefficient; margin is undefined")]
    Degenerate,
    #[error("concept `{concept}` receives a non-positive real weight ({weight})")]
    InvalidWeighting { concept: String, weight: f64 },
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
}

/// On-disk form of an ontology.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OntologyFile {
    pub name: String,
    pub concepts: Vec<ConceptRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptRecord {
    pub id: String,
    pub label: String,
    pub keywords: Vec<String>,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default)]
    pub relations: Vec<RelationRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationRecord {
    pub name: String,
    pub target: String,
}

#[derive(Debug, Clone)]
pub struct Concept {
    pub id: String,
    pub label: String,
    pub keywords: Vec<String>,
    pub parents: Vec<ConceptId>,
    pub children: Vec<ConceptId>,
    pub relations: Vec<(String, ConceptId)>,
}

impl Concept {
    pub fn is_root(&self) -> bool {
        self.parents.is_empty()
    }
}

/// Coefficients, margin, average coefficient and real weights of an ontology.
#[derive(Debug, Clone)]
pub struct Weighting {
    pub coefficients: Vec<Rational>,
    /// `None` when every coefficient equals the root's (uniform fallback).
    pub margin: Option<Rational>,
    pub coef_avg: Rational,
    pub avg_weight: Rational,
    pub weights: Vec<Rational>,
}

impl Weighting {
    /// Applies the margin / average-coefficient / real-weight formulas to a
    /// coefficient table. Roots carry coefficient 1.
    ///
    /// On failure returns the index of the first concept whose weight is not
    /// strictly positive.
    pub fn from_coefficients(coefficients: Vec<Rational>) -> Result<Self, WeightingFailure> {
        let coef_avg = compute_avg_coefficient(&coefficients).map_err(|_| WeightingFailure::Empty)?;
        let n = Rational::from_integer(BigInt::from(coefficients.len()));
        let avg_weight = Rational::one() / n;
        let root = Rational::one();
        let margin = compute_margin(&coefficients, &root, &Rational::one()).ok();
        let weights: Vec<Rational> = match &margin {
            Some(delta) => coefficients
                .iter()
                .map(|c| &avg_weight + delta * (c - &coef_avg))
                .collect(),
            None => vec![avg_weight.clone(); coefficients.len()],
        };
        if let Some((idx, w)) = weights.iter().enumerate().find(|(_, w)| !w.is_positive()) {
            return Err(WeightingFailure::NonPositive {
                index: idx,
                weight: to_f64(w),
            });
        }
        Ok(Self {
            coefficients,
            margin,
            coef_avg,
            avg_weight,
            weights,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightingFailure {
    Empty,
    NonPositive { index: usize, weight: f64 },
}

/// Margin: `total / (Σ_k (coef_k − root))²`.
pub fn compute_margin(
    coefficients: &[Rational],
    root_coefficient: &Rational,
    total_weight: &Rational,
) -> Result<Rational, OntologyError> {
    let spread: Rational = coefficients
        .iter()
        .map(|c| c - root_coefficient)
        .fold(Rational::zero(), |acc, d| acc + d);
    if spread.is_zero() {
        return Err(OntologyError::Degenerate);
    }
    Ok(total_weight / (&spread * &spread))
}

/// Arithmetic mean of the coefficient table.
pub fn compute_avg_coefficient(coefficients: &[Rational]) -> Result<Rational, OntologyError> {
    if coefficients.is_empty() {
        return Err(OntologyError::Empty);
    }
    let sum = coefficients.iter().fold(Rational::zero(), |acc, c| acc + c);
    Ok(sum / Rational::from_integer(BigInt::from(coefficients.len())))
}

/// Depth coefficients, resolved in topological order.
///
/// Roots get 1. A concept with parents gets the mean of its parents'
/// coefficients plus one level, never less than its largest parent
/// coefficient. With a single parent this is the parent's coefficient plus one,
/// so a plain chain numbers its levels 1, 2, 3, ...
///
/// `parents[i]` lists the parent indices of concept `i`.
pub fn assign_coefficients(parents: &[Vec<usize>]) -> Result<Vec<Rational>, CycleAt> {
    let order = topological_order(parents)?;
    let mut coef: Vec<Option<Rational>> = vec![None; parents.len()];
    for &i in &order {
        let value = if parents[i].is_empty() {
            Rational::one()
        } else {
            let ps: Vec<&Rational> = parents[i]
                .iter()
                .map(|&p| coef[p].as_ref().expect("parents resolved first"))
                .collect();
            let count = Rational::from_integer(BigInt::from(ps.len()));
            let mean = ps.iter().fold(Rational::zero(), |acc, c| acc + *c) / count;
            let lifted = mean + Rational::one();
            let highest = ps.iter().max().map(|c| (*c).clone()).unwrap_or_else(Rational::one);
            lifted.max(highest)
        };
        coef[i] = Some(value);
    }
    Ok(coef.into_iter().map(|c| c.expect("every node ordered")).collect())
}

/// Index of a node that sits on an is-a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleAt(pub usize);

fn topological_order(parents: &[Vec<usize>]) -> Result<Vec<usize>, CycleAt> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(|p| p.len()).collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(CycleAt(stuck));
    }
    Ok(order)
}

pub(crate) fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// A validated, weighted ontology. Immutable after load.
#[derive(Debug, Clone)]
pub struct Ontology {
    name: String,
    concepts: Vec<Concept>,
    by_key: HashMap<String, ConceptId>,
    relation_names: BTreeSet<String>,
    ancestors: Vec<HashSet<ConceptId>>,
    weighting: Weighting,
    coefficients: Vec<f64>,
    weights: Vec<f64>,
    fingerprint: String,
    matcher: KeywordMatcher,
}

/// Reads, validates and weights an ontology file.
pub fn load_ontology(source: impl Read) -> Result<Ontology, OntologyError> {
    let file: OntologyFile = serde_json::from_reader(source).map_err(|e| OntologyError::Parse(e.to_string()))?;
    Ontology::from_file(file)
}

impl Ontology {
    pub fn from_json(text: &str) -> Result<Self, OntologyError> {
        load_ontology(text.as_bytes())
    }

    pub fn from_file(file: OntologyFile) -> Result<Self, OntologyError> {
        let OntologyFile { name, mut concepts } = file;
        if concepts.is_empty() {
            return Err(OntologyError::Empty);
        }
        concepts.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in concepts.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(OntologyError::DuplicateId(pair[0].id.clone()));
            }
        }
        let by_key: HashMap<String, ConceptId> = concepts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), ConceptId(i as u32)))
            .collect();

        for c in &concepts {
            if c.keywords.is_empty() {
                return Err(OntologyError::EmptyKeywords(c.id.clone()));
            }
            if c.keywords.iter().any(|k| k.trim().is_empty()) {
                return Err(OntologyError::BlankKeyword(c.id.clone()));
            }
        }

        let resolve = |owner: &str, target: &str| -> Result<ConceptId, OntologyError> {
            by_key
                .get(target)
                .copied()
                .ok_or_else(|| OntologyError::DanglingReference {
                    concept: owner.to_string(),
                    target: target.to_string(),
                })
        };

        let mut built = Vec::with_capacity(concepts.len());
        let mut relation_names = BTreeSet::new();
        for rec in &concepts {
            let mut parents = Vec::with_capacity(rec.parents.len());
            for p in &rec.parents {
                let pid = resolve(&rec.id, p)?;
                if !parents.contains(&pid) {
                    parents.push(pid);
                }
            }
            parents.sort();
            let mut relations = Vec::with_capacity(rec.relations.len());
            for r in &rec.relations {
                relations.push((r.name.clone(), resolve(&rec.id, &r.target)?));
                relation_names.insert(r.name.clone());
            }
            relations.sort();
            relations.dedup();
            built.push(Concept {
                id: rec.id.clone(),
                label: rec.label.clone(),
                keywords: rec.keywords.clone(),
                parents,
                children: Vec::new(),
                relations,
            });
        }
        for i in 0..built.len() {
            for p in built[i].parents.clone() {
                built[p.index()].children.push(ConceptId(i as u32));
            }
        }

        let parent_idx: Vec<Vec<usize>> = built
            .iter()
            .map(|c| c.parents.iter().map(|p| p.index()).collect())
            .collect();
        let coefficients =
            assign_coefficients(&parent_idx).map_err(|CycleAt(i)| OntologyError::Cycle(built[i].id.clone()))?;
        let weighting = Weighting::from_coefficients(coefficients).map_err(|f| match f {
            WeightingFailure::Empty => OntologyError::Empty,
            WeightingFailure::NonPositive { index, weight } => OntologyError::InvalidWeighting {
                concept: built[index].id.clone(),
                weight,
            },
        })?;

        let ancestors = compute_ancestors(&built);
        let fingerprint = fingerprint_of(&name, &concepts);
        let matcher = KeywordMatcher::new(
            built
                .iter()
                .enumerate()
                .flat_map(|(i, c)| c.keywords.iter().map(move |k| (k.as_str(), ConceptId(i as u32)))),
        );

        Ok(Self {
            coefficients: weighting.coefficients.iter().map(to_f64).collect(),
            weights: weighting.weights.iter().map(to_f64).collect(),
            name,
            concepts: built,
            by_key,
            relation_names,
            ancestors,
            weighting,
            fingerprint,
            matcher,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn concept(&self, id: ConceptId) -> &Concept {
        &self.concepts[id.index()]
    }

    pub fn ids(&self) -> impl Iterator<Item = ConceptId> + '_ {
        (0..self.concepts.len() as u32).map(ConceptId)
    }

    pub fn key(&self, id: ConceptId) -> &str {
        &self.concepts[id.index()].id
    }

    pub fn lookup(&self, key: &str) -> Result<ConceptId, OntologyError> {
        self.by_key
            .get(key)
            .copied()
            .ok_or_else(|| OntologyError::UnknownConcept(key.to_string()))
    }

    pub fn contains(&self, id: ConceptId) -> bool {
        id.index() < self.concepts.len()
    }

    pub fn roots(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.ids().filter(|&c| self.concept(c).is_root())
    }

    pub fn relation_names(&self) -> &BTreeSet<String> {
        &self.relation_names
    }

    pub fn weighting(&self) -> &Weighting {
        &self.weighting
    }

    /// Coefficient table as `f64`, indexed by [`ConceptId`].
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Real weights as `f64`, indexed by [`ConceptId`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, id: ConceptId) -> f64 {
        self.weights[id.index()]
    }

    pub fn margin(&self) -> Option<f64> {
        self.weighting.margin.as_ref().map(to_f64)
    }

    pub fn coef_avg(&self) -> f64 {
        to_f64(&self.weighting.coef_avg)
    }

    pub fn avg_weight(&self) -> f64 {
        to_f64(&self.weighting.avg_weight)
    }

    /// Weights of `1/|N|` for every concept, used when ontology weighting is off.
    pub fn uniform_weights(&self) -> Vec<f64> {
        vec![to_f64(&self.weighting.avg_weight); self.concepts.len()]
    }

    /// Hex digest binding indexes and profiles to this exact ontology.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub(crate) fn matcher(&self) -> &KeywordMatcher {
        &self.matcher
    }

    /// True when `ancestor` is a strict is-a ancestor of `descendant`.
    pub fn is_ancestor(&self, ancestor: ConceptId, descendant: ConceptId) -> bool {
        self.ancestors[descendant.index()].contains(&ancestor)
    }

    /// The concept itself plus all of its is-a descendants.
    pub fn descendants_or_self(&self, id: ConceptId) -> BTreeSet<ConceptId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(c) = stack.pop() {
            if out.insert(c) {
                stack.extend(self.concept(c).children.iter().copied());
            }
        }
        out
    }

    /// Breadth-first closure from `seed` over is-a child edges and the named
    /// relations, up to `max_hops`. The seed is reported at hop 0; the result is
    /// ordered by `(hop, id)`.
    pub fn related_concepts(
        &self,
        seed: ConceptId,
        relation_names: &[&str],
        max_hops: u32,
    ) -> Result<Vec<(ConceptId, u32)>, OntologyError> {
        if !self.contains(seed) {
            return Err(OntologyError::UnknownConcept(seed.to_string()));
        }
        let mut follow = BTreeSet::new();
        for &name in relation_names {
            if name == IS_A {
                continue;
            }
            if !self.relation_names.contains(name) {
                return Err(OntologyError::UnknownRelation(name.to_string()));
            }
            follow.insert(name);
        }
        let mut hops: BTreeMap<ConceptId, u32> = BTreeMap::new();
        hops.insert(seed, 0);
        let mut frontier = vec![seed];
        for hop in 1..=max_hops {
            let mut next = Vec::new();
            for &c in &frontier {
                let concept = self.concept(c);
                let targets = concept.children.iter().copied().chain(
                    concept
                        .relations
                        .iter()
                        .filter(|(name, _)| follow.contains(name.as_str()))
                        .map(|(_, t)| *t),
                );
                for t in targets {
                    if let std::collections::btree_map::Entry::Vacant(e) = hops.entry(t) {
                        e.insert(hop);
                        next.push(t);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        let mut out: Vec<(ConceptId, u32)> = hops.into_iter().collect();
        out.sort_by_key(|&(c, h)| (h, c));
        Ok(out)
    }

    /// Drops every concept that is a strict ancestor of another concept in the
    /// input. Output is sorted and deduplicated.
    pub fn most_specific(&self, ids: &[ConceptId]) -> Result<Vec<ConceptId>, OntologyError> {
        if let Some(bad) = ids.iter().find(|c| !self.contains(**c)) {
            return Err(OntologyError::UnknownConcept(bad.to_string()));
        }
        let set: BTreeSet<ConceptId> = ids.iter().copied().collect();
        Ok(set
            .iter()
            .copied()
            .filter(|&a| !set.iter().any(|&d| d != a && self.is_ancestor(a, d)))
            .collect())
    }
}

fn compute_ancestors(concepts: &[Concept]) -> Vec<HashSet<ConceptId>> {
    concepts
        .iter()
        .map(|c| {
            let mut seen = HashSet::new();
            let mut stack: Vec<ConceptId> = c.parents.clone();
            while let Some(p) = stack.pop() {
                if seen.insert(p) {
                    stack.extend(concepts[p.index()].parents.iter().copied());
                }
            }
            seen
        })
        .collect()
}

fn fingerprint_of(name: &str, sorted: &[ConceptRecord]) -> String {
    let mut hasher = Sha256::new();
    let mut feed = |s: &str| {
        hasher.update((s.len() as u64).to_le_bytes());
        hasher.update(s.as_bytes());
    };
    feed(name);
    for c in sorted {
        feed(&c.id);
        feed(&c.label);
        let mut kw = c.keywords.clone();
        kw.sort();
        kw.iter().for_each(|k| feed(k));
        feed("|");
        let mut ps = c.parents.clone();
        ps.sort();
        ps.dedup();
        ps.iter().for_each(|p| feed(p));
        feed("|");
        let mut rs = c.relations.clone();
        rs.sort();
        rs.dedup();
        for r in &rs {
            feed(&r.name);
            feed(&r.target);
        }
        feed(";");
    }
    hex::encode(&hasher.finalize()[..16])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(BigInt::from(n), BigInt::from(d))
    }

    pub(crate) const SEVEN_CLASS: &str = include_str!("../fixtures/generic_7class.json");

    fn concept(id: &str, parents: &[&str]) -> ConceptRecord {
        ConceptRecord {
            id: id.into(),
            label: id.into(),
            keywords: vec![id.into()],
            parents: parents.iter().map(|s| s.to_string()).collect(),
            relations: vec![],
        }
    }

    fn onto(concepts: Vec<ConceptRecord>) -> Result<Ontology, OntologyError> {
        Ontology::from_file(OntologyFile {
            name: "t".into(),
            concepts,
        })
    }

    #[test]
    fn seven_class_coefficients() {
        let o = Ontology::from_json(SEVEN_CLASS).unwrap();
        assert_eq!(o.len(), 7);
        let get = |k: &str| o.weighting().coefficients[o.lookup(k).unwrap().index()].clone();
        assert_eq!(get("domain"), r(1, 1));
        assert_eq!(get("path"), r(2, 1));
        assert_eq!(get("field"), r(5, 2));
        assert_eq!(get("element"), r(3, 1));
        assert_eq!(get("script"), r(4, 1));
        assert_eq!(get("concept"), r(9, 2));
        assert_eq!(get("granule"), r(5, 1));
        assert_eq!(o.weighting().margin, Some(r(1, 225)));
        assert_eq!(o.weighting().coef_avg, r(22, 7));
        assert_eq!(o.weighting().avg_weight, r(1, 7));
    }

    #[test]
    fn seven_class_real_weights() {
        let o = Ontology::from_json(SEVEN_CLASS).unwrap();
        // 1/7 + (1/225)(5 - 22/7) and 1/7 + (1/225)(1 - 22/7)
        let granule = 1.0 / 7.0 + (5.0 - 22.0 / 7.0) / 225.0;
        let domain = 1.0 / 7.0 + (1.0 - 22.0 / 7.0) / 225.0;
        assert!((o.weight(o.lookup("granule").unwrap()) - granule).abs() < 1e-15);
        assert!((o.weight(o.lookup("domain").unwrap()) - domain).abs() < 1e-15);
        assert!((granule - 0.151111).abs() < 1e-6);
        assert!((domain - 0.13333).abs() < 1e-5);
        let exact: Rational = o.weighting().weights.iter().fold(Rational::zero(), |a, w| a + w);
        assert_eq!(exact, Rational::one());
    }

    #[test]
    fn chain_coefficients_count_depth() {
        let o = onto(vec![
            concept("a", &[]),
            concept("b", &["a"]),
            concept("c", &["b"]),
            concept("d", &["c"]),
        ])
        .unwrap();
        let coefs: Vec<f64> = o.coefficients().to_vec();
        assert_eq!(coefs, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn margin_and_average_on_short_chain() {
        let coefs = vec![r(1, 1), r(2, 1), r(3, 1)];
        assert_eq!(compute_margin(&coefs, &r(1, 1), &r(1, 1)).unwrap(), r(1, 9));
        assert_eq!(compute_avg_coefficient(&coefs).unwrap(), r(2, 1));
    }

    #[test]
    fn single_concept_is_degenerate_and_falls_back_to_uniform() {
        assert!(matches!(
            compute_margin(&[r(1, 1)], &r(1, 1), &r(1, 1)),
            Err(OntologyError::Degenerate)
        ));
        assert_eq!(compute_avg_coefficient(&[r(1, 1)]).unwrap(), r(1, 1));
        let o = onto(vec![concept("only", &[])]).unwrap();
        assert_eq!(o.weights(), &[1.0]);
        assert_eq!(o.margin(), None);
        let roots_only = onto(vec![concept("x", &[]), concept("y", &[])]).unwrap();
        assert_eq!(roots_only.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn empty_coefficient_table_is_rejected() {
        assert!(matches!(compute_avg_coefficient(&[]), Err(OntologyError::Empty)));
    }

    #[test]
    fn root_with_single_child_has_zero_root_weight() {
        // spread 1 → margin 1, root weight 1/2 + (1 - 3/2) = 0
        let err = onto(vec![concept("a", &[]), concept("b", &["a"])]).unwrap_err();
        assert!(matches!(err, OntologyError::InvalidWeighting { ref concept, .. } if concept == "a"));
    }

    #[test]
    fn validation_names_the_offender() {
        let err = onto(vec![concept("a", &[]), concept("b", &["ghost"])]).unwrap_err();
        assert!(matches!(err, OntologyError::DanglingReference { ref target, .. } if target == "ghost"));

        let err = onto(vec![concept("a", &[]), concept("a", &[])]).unwrap_err();
        assert!(matches!(err, OntologyError::DuplicateId(ref id) if id == "a"));

        let mut blank = concept("k", &[]);
        blank.keywords = vec!["  ".into()];
        assert!(matches!(onto(vec![blank]).unwrap_err(), OntologyError::BlankKeyword(ref id) if id == "k"));

        let mut none = concept("k", &[]);
        none.keywords.clear();
        assert!(matches!(onto(vec![none]).unwrap_err(), OntologyError::EmptyKeywords(_)));

        let err = onto(vec![concept("r", &[]), concept("a", &["b"]), concept("b", &["a"])]).unwrap_err();
        assert!(matches!(err, OntologyError::Cycle(_)));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"name":"x","concepts":[{"id":"a","label":"a","keywords":["a"],"colour":"red"}]}"#;
        assert!(matches!(Ontology::from_json(text), Err(OntologyError::Parse(_))));
    }

    #[test]
    fn related_concepts_hop_zero_and_one() {
        let o = Ontology::from_json(SEVEN_CLASS).unwrap();
        let domain = o.lookup("domain").unwrap();
        assert_eq!(o.related_concepts(domain, &[], 0).unwrap(), vec![(domain, 0)]);
        let one = o.related_concepts(domain, &[IS_A], 1).unwrap();
        let mut expected = vec![(domain, 0)];
        let mut kids: Vec<ConceptId> = o.concept(domain).children.clone();
        kids.sort();
        expected.extend(kids.into_iter().map(|c| (c, 1)));
        assert_eq!(one, expected);
        assert!(matches!(
            o.related_concepts(domain, &["frobnicates"], 1),
            Err(OntologyError::UnknownRelation(_))
        ));
    }

    #[test]
    fn related_concepts_follow_named_relation() {
        let mut seed = concept("seed", &[]);
        seed.relations.push(RelationRecord {
            name: "made-of".into(),
            target: "part".into(),
        });
        let o = onto(vec![seed, concept("part", &[]), concept("other", &[])]).unwrap();
        let s = o.lookup("seed").unwrap();
        let p = o.lookup("part").unwrap();
        assert_eq!(o.related_concepts(s, &["made-of"], 1).unwrap(), vec![(s, 0), (p, 1)]);
        assert_eq!(o.related_concepts(s, &[], 1).unwrap(), vec![(s, 0)]);
    }

    #[test]
    fn most_specific_keeps_descendants() {
        let o = Ontology::from_json(SEVEN_CLASS).unwrap();
        let domain = o.lookup("domain").unwrap();
        let path = o.lookup("path").unwrap();
        let granule = o.lookup("granule").unwrap();
        assert_eq!(o.most_specific(&[domain, path]).unwrap(), vec![path]);
        assert_eq!(o.most_specific(&[granule]).unwrap(), vec![granule]);
        let a = onto(vec![concept("a", &[]), concept("b", &[])]).unwrap();
        let ids: Vec<ConceptId> = a.ids().collect();
        assert_eq!(a.most_specific(&ids).unwrap(), ids);
        assert!(o.most_specific(&[ConceptId(99)]).is_err());
    }

    #[test]
    fn fingerprint_ignores_concept_order() {
        let a = onto(vec![concept("x", &[]), concept("y", &["x"]), concept("z", &["x"])]).unwrap();
        let b = onto(vec![concept("z", &["x"]), concept("x", &[]), concept("y", &["x"])]).unwrap();
        let c = onto(vec![concept("x", &[]), concept("y", &["x"]), concept("w", &["x"])]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
