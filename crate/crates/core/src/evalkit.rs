//! Synthetic test collections and precision/recall experiments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::index::{build_index, IndexError, IndexOptions, SourceDocument, WeightingMode};
use crate::ontology::{ConceptId, Ontology, OntologyError};
use crate::profile::{create_profile, ProfileError, UserProfile};
use crate::retrieval::{
    build_query_vector, rank, Expansion, Personalization, Query, QueryInput, RankOptions, RankedResult, RetrievalError,
};
use crate::text::tokenize;
use crate::xmldoc::{parse_str, DocId};

/// Mean precision and recall of the published same-user experiment, shown in
/// reports for context.
pub const REFERENCE_BASELINE: (f64, f64) = (0.426, 0.756);
pub const REFERENCE_PROPOSED: (f64, f64) = (0.710, 0.978);

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no relevance judgments for query {0}")]
    EmptyQrels(String),
    #[error("malformed qrels line {line}: {text}")]
    Qrels { line: usize, text: String },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub min: u32,
    pub max: u32,
}

impl Span {
    fn sample(self, rng: &mut impl Rng) -> u32 {
        rng.random_range(self.min..=self.max.max(self.min))
    }
}

/// Shape of a generated collection. Defaults give about 40 documents with
/// roughly 645 element and 580 text nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub documents: usize,
    /// Concept ids of the top-level domains; defaults to the children of the
    /// single root (or the roots when there are several).
    pub domains: Option<Vec<String>>,
    pub sections: Span,
    pub paragraphs: Span,
    pub filler_words: Span,
    /// Chance that a section holds a nested section.
    pub subsection_rate: f64,
    /// Chance that a paragraph wraps one mention in `<em>`.
    pub emphasis_rate: f64,
    /// Chance that a document's topic is its domain concept itself.
    pub domain_topic_rate: f64,
    /// Chance that a document also mentions an ancestor of its topic.
    pub general_mix_rate: f64,
    /// Chance that a section is about another concept of the same domain.
    pub side_topic_rate: f64,
    /// Chance that a paragraph mentions a concept from another domain.
    pub off_topic_rate: f64,
    pub queries: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            documents: 40,
            domains: None,
            sections: Span { min: 2, max: 4 },
            paragraphs: Span { min: 1, max: 2 },
            filler_words: Span { min: 3, max: 8 },
            subsection_rate: 0.1,
            emphasis_rate: 0.5,
            domain_topic_rate: 0.15,
            general_mix_rate: 0.4,
            side_topic_rate: 0.25,
            off_topic_rate: 0.25,
            queries: 24,
        }
    }
}

impl CorpusConfig {
    /// Ten times the default collection size.
    pub fn full_scale() -> Self {
        Self {
            documents: 400,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedDocument {
    pub name: String,
    pub xml: String,
    pub domain: ConceptId,
    pub topic: ConceptId,
    /// Focus concept of every `section` element, in document order.
    pub sections: Vec<ConceptId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQuery {
    pub id: String,
    pub concept: ConceptId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelEntry {
    pub docs: BTreeSet<DocId>,
    pub nodes: BTreeSet<(DocId, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Document,
    Node,
}

/// Relevance judgments keyed by query id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    pub entries: BTreeMap<String, QrelEntry>,
}

impl Qrels {
    pub fn get(&self, query_id: &str) -> Result<&QrelEntry, EvalError> {
        match self.entries.get(query_id) {
            Some(e) if !e.docs.is_empty() || !e.nodes.is_empty() => Ok(e),
            _ => Err(EvalError::EmptyQrels(query_id.to_string())),
        }
    }

    /// TREC-style lines `query_id doc_id node_start relevance`; document-level
    /// judgments use node start 0.
    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (q, e) in &self.entries {
            for d in &e.docs {
                writeln!(out, "{q} {} 0 1", d.0).unwrap();
            }
            for (d, s) in &e.nodes {
                writeln!(out, "{q} {} {s} 1", d.0).unwrap();
            }
        }
        out
    }

    pub fn from_trec(text: &str) -> Result<Self, EvalError> {
        let mut q = Qrels::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || EvalError::Qrels {
                line: i + 1,
                text: line.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let doc = DocId(f[1].parse().map_err(|_| bad())?);
            let start: u32 = f[2].parse().map_err(|_| bad())?;
            let rel: i32 = f[3].parse().map_err(|_| bad())?;
            let entry = q.entries.entry(f[0].to_string()).or_default();
            if rel <= 0 {
                continue;
            }
            if start == 0 {
                entry.docs.insert(doc);
            } else {
                entry.nodes.insert((doc, start));
            }
        }
        Ok(q)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<GeneratedDocument>,
    pub queries: Vec<GeneratedQuery>,
    pub qrels: Qrels,
}

impl Corpus {
    pub fn sources(&self) -> Vec<SourceDocument> {
        self.documents
            .iter()
            .map(|d| SourceDocument::new(d.name.clone(), d.xml.clone().into_bytes()))
            .collect()
    }
}

const FILLER: &[&str] = &[
    "the",
    "a",
    "this",
    "chapter",
    "presents",
    "describes",
    "studies",
    "approach",
    "method",
    "design",
    "practical",
    "example",
    "students",
    "often",
    "course",
    "notes",
    "section",
    "reviews",
    "basic",
    "advanced",
    "topics",
    "with",
    "careful",
    "attention",
    "to",
    "details",
    "and",
    "common",
    "pitfalls",
    "in",
    "modern",
    "practice",
    "we",
    "explain",
    "how",
    "it",
    "works",
    "when",
    "used",
    "by",
    "engineers",
    "real",
    "settings",
    "performance",
    "matters",
    "most",
    "exercises",
    "follow",
    "each",
    "part",
    "summary",
    "key",
    "ideas",
    "lecture",
    "overview",
    "introduces",
    "discussion",
    "of",
    "classic",
    "results",
    "textbook",
    "material",
    "covers",
    "important",
    "aspects",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Generator<'a> {
    ontology: &'a Ontology,
    config: &'a CorpusConfig,
    rng: ChaCha8Rng,
    filler: Vec<&'static str>,
}

/// One run of paragraph content: filler words or a concept mention.
enum Piece {
    Words(String),
    Mention(String),
}

impl Generator<'_> {
    fn keyword(&mut self, c: ConceptId) -> String {
        self.ontology
            .concept(c)
            .keywords
            .choose(&mut self.rng)
            .expect("concepts have keywords")
            .clone()
    }

    fn words(&mut self) -> String {
        let n = self.config.filler_words.sample(&mut self.rng).max(1);
        (0..n)
            .map(|_| *self.filler.choose(&mut self.rng).expect("filler"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Mentions separated by filler so that adjacent keywords never merge.
    fn sentence(&mut self, mentions: &[ConceptId]) -> Vec<Piece> {
        let mut pieces = vec![Piece::Words(self.words())];
        for &c in mentions {
            let kw = self.keyword(c);
            pieces.push(Piece::Mention(kw));
            pieces.push(Piece::Words(self.words()));
        }
        pieces
    }

    fn render(&mut self, pieces: Vec<Piece>, emphasize: bool) -> String {
        let mut out = String::new();
        let mut emphasized = !emphasize;
        let mut pending = String::new();
        for p in pieces {
            match p {
                Piece::Words(w) => {
                    pending.push(' ');
                    pending.push_str(&w);
                }
                Piece::Mention(kw) if !emphasized => {
                    emphasized = true;
                    out.push_str(&escape(pending.trim_start()));
                    out.push_str(" <em>");
                    out.push_str(&escape(&kw));
                    out.push_str("</em>");
                    pending.clear();
                }
                Piece::Mention(kw) => {
                    pending.push(' ');
                    pending.push_str(&kw);
                }
            }
        }
        out.push_str(&escape(&pending));
        let mut s = out.trim().to_string();
        s.push('.');
        s
    }

    fn pick(&mut self, pool: &[ConceptId]) -> ConceptId {
        *pool.choose(&mut self.rng).expect("non-empty pool")
    }

    fn section(
        &mut self,
        xml: &mut String,
        focus: ConceptId,
        general: Option<ConceptId>,
        off_domain: &[ConceptId],
        foci: &mut Vec<ConceptId>,
        nested: bool,
    ) {
        foci.push(focus);
        let heading = self.keyword(focus);
        write!(xml, "<section><heading>{}</heading>", escape(&heading)).unwrap();
        let paragraphs = self.config.paragraphs.sample(&mut self.rng).max(1);
        for _ in 0..paragraphs {
            let mut mentions = vec![focus];
            if self.rng.random_bool(0.5) {
                mentions.push(focus);
            }
            if let Some(g) = general {
                if self.rng.random_bool(0.5) {
                    mentions.push(g);
                }
            }
            if !off_domain.is_empty() && self.rng.random_bool(self.config.off_topic_rate) {
                let other = self.pick(off_domain);
                mentions.push(other);
            }
            mentions.shuffle(&mut self.rng);
            let pieces = self.sentence(&mentions);
            let emphasize = self.rng.random_bool(self.config.emphasis_rate);
            let body = self.render(pieces, emphasize);
            write!(xml, "<para>{body}</para>").unwrap();
        }
        if !nested && self.rng.random_bool(self.config.subsection_rate) {
            self.section(xml, focus, general, off_domain, foci, true);
        }
        xml.push_str("</section>");
    }
}

fn domains_of(ontology: &Ontology, config: &CorpusConfig) -> Result<Vec<ConceptId>, EvalError> {
    let domains: Vec<ConceptId> = match &config.domains {
        Some(keys) => keys.iter().map(|k| ontology.lookup(k)).collect::<Result<_, _>>()?,
        None => {
            let roots: Vec<ConceptId> = ontology.roots().collect();
            if roots.len() == 1 {
                ontology.concept(roots[0]).children.clone()
            } else {
                roots
            }
        }
    };
    if domains.len() < 2 {
        return Err(EvalError::Config(format!(
            "need at least 2 domains, ontology `{}` offers {}",
            ontology.name(),
            domains.len()
        )));
    }
    Ok(domains)
}

/// Seeded collection whose documents each develop one topic concept of one
/// domain, with general mentions, side topics and off-domain noise.
pub fn generate_corpus(ontology: &Ontology, config: &CorpusConfig) -> Result<Corpus, EvalError> {
    if config.documents == 0 {
        return Err(EvalError::Config("document count must be positive".into()));
    }
    if config.queries == 0 {
        return Err(EvalError::Config("query count must be positive".into()));
    }
    for (name, rate) in [
        ("subsection_rate", config.subsection_rate),
        ("emphasis_rate", config.emphasis_rate),
        ("domain_topic_rate", config.domain_topic_rate),
        ("general_mix_rate", config.general_mix_rate),
        ("side_topic_rate", config.side_topic_rate),
        ("off_topic_rate", config.off_topic_rate),
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(EvalError::Config(format!("{name} must lie in [0, 1]")));
        }
    }
    let domains = domains_of(ontology, config)?;
    let keyword_tokens: BTreeSet<String> = ontology
        .concepts()
        .iter()
        .flat_map(|c| c.keywords.iter().flat_map(|k| tokenize(k)))
        .collect();
    let filler: Vec<&'static str> = FILLER
        .iter()
        .copied()
        .filter(|w| !keyword_tokens.contains(*w))
        .collect();
    if filler.is_empty() {
        return Err(EvalError::Config("every filler word collides with a keyword".into()));
    }
    let mut g = Generator {
        ontology,
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        filler,
    };

    let subtree: Vec<Vec<ConceptId>> = domains
        .iter()
        .map(|&d| {
            ontology
                .descendants_or_self(d)
                .into_iter()
                .filter(|&c| c != d)
                .collect()
        })
        .collect();
    // Topics cycle through a shuffled list per domain to spread coverage.
    let mut topic_queue: Vec<Vec<ConceptId>> = vec![Vec::new(); domains.len()];

    let mut documents = Vec::with_capacity(config.documents);
    for i in 0..config.documents {
        let di = i % domains.len();
        let domain = domains[di];
        let topic = if subtree[di].is_empty() || g.rng.random_bool(config.domain_topic_rate) {
            domain
        } else {
            if topic_queue[di].is_empty() {
                let mut fresh = subtree[di].clone();
                fresh.shuffle(&mut g.rng);
                topic_queue[di] = fresh;
            }
            topic_queue[di].pop().expect("refilled")
        };
        let topic_tree: Vec<ConceptId> = ontology.descendants_or_self(topic).into_iter().collect();
        let domain_tree: Vec<ConceptId> = ontology.descendants_or_self(domain).into_iter().collect();
        let off_domain: Vec<ConceptId> = domains
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != di)
            .flat_map(|(j, &d)| std::iter::once(d).chain(subtree[j].iter().copied()))
            .collect();
        let general = if topic != domain && g.rng.random_bool(config.general_mix_rate) {
            let ancestors: Vec<ConceptId> = domain_tree
                .iter()
                .copied()
                .filter(|&a| ontology.is_ancestor(a, topic))
                .collect();
            ancestors.choose(&mut g.rng).copied()
        } else {
            None
        };

        let name = format!("d{:04}", i + 1);
        let mut xml = String::new();
        let title = g.keyword(topic);
        let title_tail = g.words();
        write!(
            xml,
            "<article id=\"{name}\"><title>{} {}</title>",
            escape(&title),
            escape(&title_tail)
        )
        .unwrap();
        let mut abstract_mentions = vec![topic];
        if let Some(gen) = general {
            abstract_mentions.push(gen);
        }
        let pieces = g.sentence(&abstract_mentions);
        let body = g.render(pieces, false);
        write!(xml, "<abstract>{body}</abstract>").unwrap();
        let mut foci = Vec::new();
        let sections = config.sections.sample(&mut g.rng).max(1);
        for s in 0..sections {
            let focus = if s > 0 && g.rng.random_bool(config.side_topic_rate) {
                g.pick(&domain_tree)
            } else {
                g.pick(&topic_tree)
            };
            g.section(&mut xml, focus, general, &off_domain, &mut foci, false);
        }
        xml.push_str("</article>\n");
        documents.push(GeneratedDocument {
            name,
            xml,
            domain,
            topic,
            sections: foci,
        });
    }

    // Queries: concepts with at least one relevant document.
    let mut candidates: Vec<ConceptId> = ontology
        .ids()
        .filter(|&c| {
            documents
                .iter()
                .any(|d| d.topic == c || ontology.is_ancestor(c, d.topic))
        })
        .collect();
    candidates.shuffle(&mut g.rng);
    candidates.truncate(config.queries);
    let queries: Vec<GeneratedQuery> = candidates
        .into_iter()
        .enumerate()
        .map(|(i, concept)| GeneratedQuery {
            id: format!("q{:02}", i + 1),
            concept,
        })
        .collect();

    let mut section_starts = Vec::with_capacity(documents.len());
    for (i, d) in documents.iter().enumerate() {
        let tree =
            parse_str(DocId(i as u32), &d.xml).map_err(|e| EvalError::Config(format!("generated invalid XML: {e}")))?;
        let starts: Vec<u32> = tree.by_name("section").map(|n| n.start).collect();
        debug_assert_eq!(starts.len(), d.sections.len());
        section_starts.push(starts);
    }
    let mut qrels = Qrels::default();
    for q in &queries {
        let scope = ontology.descendants_or_self(q.concept);
        let entry = qrels.entries.entry(q.id.clone()).or_default();
        for (i, d) in documents.iter().enumerate() {
            let doc = DocId(i as u32);
            if scope.contains(&d.topic) {
                entry.docs.insert(doc);
            }
            for (&focus, &start) in d.sections.iter().zip(&section_starts[i]) {
                if scope.contains(&focus) {
                    entry.nodes.insert((doc, start));
                }
            }
        }
    }
    Ok(Corpus {
        documents,
        queries,
        qrels,
    })
}

/// Which ranked nodes count as retrieved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum Cutoff {
    /// Every node with a positive score.
    Positive,
    /// The first `k` nodes.
    TopNodes(usize),
    /// Nodes within a fraction of the best score.
    Relative(f64),
    /// Nodes of the first `k` distinct documents.
    TopDocuments(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub retrieved: usize,
    pub relevant: usize,
    pub hits: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn apply_cutoff(results: &[RankedResult], cutoff: Cutoff) -> Result<&[RankedResult], EvalError> {
    let n = match cutoff {
        Cutoff::Positive => results.iter().take_while(|r| r.score > 0.0).count(),
        Cutoff::TopNodes(k) => {
            if k == 0 {
                return Err(EvalError::Config("cutoff must be at least 1".into()));
            }
            k.min(results.len())
        }
        Cutoff::Relative(t) => {
            if !(t > 0.0 && t <= 1.0) {
                return Err(EvalError::Config("relative cutoff must lie in (0, 1]".into()));
            }
            match results.first() {
                Some(best) => results.iter().take_while(|r| r.score >= t * best.score).count(),
                None => 0,
            }
        }
        Cutoff::TopDocuments(k) => {
            if k == 0 {
                return Err(EvalError::Config("cutoff must be at least 1".into()));
            }
            let mut seen = BTreeSet::new();
            results
                .iter()
                .take_while(|r| {
                    seen.insert(r.doc_id);
                    seen.len() <= k
                })
                .count()
        }
    };
    Ok(&results[..n])
}

/// Precision, recall and F1 of `results` (sorted best first) against one
/// judgment set.
pub fn precision_recall_f1(
    results: &[RankedResult],
    entry: &QrelEntry,
    granularity: Granularity,
    cutoff: Cutoff,
) -> Result<Metrics, EvalError> {
    let kept = apply_cutoff(results, cutoff)?;
    let (retrieved, relevant, hits) = match granularity {
        Granularity::Document => {
            let got: BTreeSet<DocId> = kept.iter().map(|r| r.doc_id).collect();
            (got.len(), entry.docs.len(), got.intersection(&entry.docs).count())
        }
        Granularity::Node => {
            let got: BTreeSet<(DocId, u32)> = kept.iter().map(|r| (r.doc_id, r.start)).collect();
            (got.len(), entry.nodes.len(), got.intersection(&entry.nodes).count())
        }
    };
    if relevant == 0 {
        return Err(EvalError::EmptyQrels("(entry)".into()));
    }
    let precision = if retrieved == 0 {
        0.0
    } else {
        hits as f64 / retrieved as f64
    };
    let recall = hits as f64 / relevant as f64;
    Ok(Metrics {
        retrieved,
        relevant,
        hits,
        precision,
        recall,
        f1: f1_score(precision, recall),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSpec {
    pub id: String,
    /// Concept ids the user declares at registration.
    pub interests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    /// Defaults to one user per domain, each interested in that domain.
    pub users: Vec<UserSpec>,
    /// Query ids issued at instants 1, 2, …; defaults to every query.
    pub schedule: Option<Vec<String>>,
    pub expansion: Expansion,
    pub cutoff: Cutoff,
    pub granularity: Granularity,
    pub overlap_filter: bool,
    pub normalize_profile: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            users: Vec::new(),
            schedule: None,
            expansion: Expansion {
                relations: Vec::new(),
                max_hops: 2,
            },
            cutoff: Cutoff::Positive,
            granularity: Granularity::Document,
            overlap_filter: false,
            normalize_profile: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Configuration {
    Baseline,
    Proposed,
}

impl Configuration {
    pub fn as_str(self) -> &'static str {
        match self {
            Configuration::Baseline => "baseline",
            Configuration::Proposed => "proposed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub configuration: Configuration,
    pub user: String,
    pub instant: usize,
    pub query_id: String,
    pub concept: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub configuration: Configuration,
    pub requests: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub baseline: Summary,
    pub proposed: Summary,
}

fn summarize(configuration: Configuration, rows: &[ReportRow]) -> Summary {
    let mine: Vec<&Metrics> = rows
        .iter()
        .filter(|r| r.configuration == configuration)
        .map(|r| &r.metrics)
        .collect();
    let n = mine.len().max(1) as f64;
    Summary {
        configuration,
        requests: mine.len(),
        precision: mine.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: mine.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: mine.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

fn default_users(ontology: &Ontology, config: &CorpusConfig) -> Result<Vec<UserSpec>, EvalError> {
    Ok(domains_of(ontology, config)?
        .into_iter()
        .enumerate()
        .map(|(i, d)| UserSpec {
            id: format!("user{}", i + 1),
            interests: vec![ontology.key(d).to_string()],
        })
        .collect())
}

/// A fresh profile reinforced once per declared interest, as if the user had
/// queried each of them at registration.
pub fn registered_profile(
    user: &UserSpec,
    ontology: &Ontology,
    expansion: &Expansion,
) -> Result<UserProfile, EvalError> {
    let mut profile = create_profile(user.id.clone(), ontology);
    for key in &user.interests {
        let q = Query {
            input: QueryInput::Concept(ontology.lookup(key)?),
            expansion: expansion.clone(),
        };
        profile.update(ontology, &build_query_vector(&q, ontology)?, 0)?;
    }
    Ok(profile)
}

/// Runs every user through the schedule under both configurations: the
/// baseline indexes with uniform concept weights and ignores profiles, the
/// proposed one uses ontology weights and evolving profiles.
pub fn run_experiment(ontology: &Ontology, config: &ExperimentConfig) -> Result<Report, EvalError> {
    let corpus = generate_corpus(ontology, &config.corpus)?;
    run_experiment_on(ontology, config, &corpus)
}

pub fn run_experiment_on(ontology: &Ontology, config: &ExperimentConfig, corpus: &Corpus) -> Result<Report, EvalError> {
    let users = if config.users.is_empty() {
        default_users(ontology, &config.corpus)?
    } else {
        config.users.clone()
    };
    let by_id: BTreeMap<&str, &GeneratedQuery> = corpus.queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let schedule: Vec<&GeneratedQuery> = match &config.schedule {
        Some(ids) => ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| EvalError::Config(format!("unknown query {id}")))
            })
            .collect::<Result<_, _>>()?,
        None => corpus.queries.iter().collect(),
    };
    if schedule.is_empty() {
        return Err(EvalError::Config("empty schedule".into()));
    }

    let sources = corpus.sources();
    let uniform = build_index(
        &sources,
        ontology,
        &IndexOptions {
            weighting: WeightingMode::Uniform,
            ..IndexOptions::default()
        },
    )?;
    let weighted = build_index(&sources, ontology, &IndexOptions::default())?;
    let options = RankOptions {
        k: None,
        overlap_filter: config.overlap_filter,
    };

    let mut rows = Vec::new();
    for user in &users {
        let mut profile = registered_profile(user, ontology, &config.expansion)?;
        for (t, gq) in schedule.iter().enumerate() {
            let query = Query {
                input: QueryInput::Concept(gq.concept),
                expansion: config.expansion.clone(),
            };
            let q = build_query_vector(&query, ontology)?;
            let entry = corpus.qrels.get(&gq.id)?;
            let base = rank(&uniform, ontology, &q, Personalization::Neutral, &options)?;
            let personalized = Personalization::Profile {
                profile: &profile,
                normalize: config.normalize_profile,
            };
            let prop = rank(&weighted, ontology, &q, personalized, &options)?;
            for (configuration, results) in [(Configuration::Baseline, &base), (Configuration::Proposed, &prop)] {
                rows.push(ReportRow {
                    configuration,
                    user: user.id.clone(),
                    instant: t + 1,
                    query_id: gq.id.clone(),
                    concept: ontology.key(gq.concept).to_string(),
                    metrics: precision_recall_f1(results, entry, config.granularity, config.cutoff)
                        .map_err(|_| EvalError::EmptyQrels(gq.id.clone()))?,
                });
            }
            profile.update(ontology, &q, (t + 1) as u64)?;
        }
    }
    rows.sort_by(|a, b| (a.configuration, &a.user, a.instant).cmp(&(b.configuration, &b.user, b.instant)));
    Ok(Report {
        baseline: summarize(Configuration::Baseline, &rows),
        proposed: summarize(Configuration::Proposed, &rows),
        rows,
    })
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("configuration,user,instant,query,concept,relevant,retrieved,hits,precision,recall,f1\n");
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}",
                r.configuration.as_str(),
                r.user,
                r.instant,
                r.query_id,
                r.concept,
                m.relevant,
                m.retrieved,
                m.hits,
                m.precision,
                m.recall,
                m.f1
            )
            .unwrap();
        }
        for s in [&self.baseline, &self.proposed] {
            writeln!(
                out,
                "{},mean,,,,,,,{:.6},{:.6},{:.6}",
                s.configuration.as_str(),
                s.precision,
                s.recall,
                s.f1
            )
            .unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<10} {:<8} {:>3} {:<6} {:<22} {:>4} {:>4} {:>4} {:>7} {:>7} {:>7}",
            "config", "user", "t", "query", "concept", "rel", "ret", "hit", "P", "R", "F1"
        )
        .unwrap();
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                out,
                "{:<10} {:<8} {:>3} {:<6} {:<22} {:>4} {:>4} {:>4} {:>7.4} {:>7.4} {:>7.4}",
                r.configuration.as_str(),
                r.user,
                r.instant,
                r.query_id,
                r.concept,
                m.relevant,
                m.retrieved,
                m.hits,
                m.precision,
                m.recall,
                m.f1
            )
            .unwrap();
        }
        out.push('\n');
        for (s, (rp, rr)) in [
            (&self.baseline, REFERENCE_BASELINE),
            (&self.proposed, REFERENCE_PROPOSED),
        ] {
            writeln!(
                out,
                "{:<10} mean over {:>3} requests: P={:.4} R={:.4} F1={:.4}   (reference P={:.3} R={:.3})",
                s.configuration.as_str(),
                s.requests,
                s.precision,
                s.recall,
                s.f1,
                rp,
                rr
            )
            .unwrap();
        }
        out
    }
}
