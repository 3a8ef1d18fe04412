#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;
use xpir::ontology::{ConceptRecord, OntologyFile};
use xpir::{DocId, NodeDescriptor, NodeType, Ontology};

pub const SEVEN_CLASS: &str = include_str!("../../fixtures/generic_7class.json");
pub const CS_ONTOLOGY: &str = include_str!("../../fixtures/cs_ontology.json");
pub const NUMBERING_SAMPLE: &str = include_str!("../../fixtures/numbering_sample.xml");

pub fn seven() -> Ontology {
    Ontology::from_json(SEVEN_CLASS).unwrap()
}

pub fn cs() -> Ontology {
    Ontology::from_json(CS_ONTOLOGY).unwrap()
}

/// Random DAG with `n ≥ 3` concepts, at least two of them non-roots. Ids are
/// zero-padded so that sorted order equals creation order.
pub fn random_ontology_file(rng: &mut impl Rng, n: usize) -> OntologyFile {
    assert!(n >= 3);
    let concepts = (0..n)
        .map(|i| {
            let mut parents: Vec<String> = Vec::new();
            if i == 1 || i == 2 {
                parents.push("c0000".into());
            } else if i > 2 && rng.random_bool(0.85) {
                let k = rng.random_range(1..=3.min(i));
                for _ in 0..k {
                    let p = format!("c{:04}", rng.random_range(0..i));
                    if !parents.contains(&p) {
                        parents.push(p);
                    }
                }
            }
            ConceptRecord {
                id: format!("c{i:04}"),
                label: format!("Concept {i}"),
                keywords: vec![format!("kw{i}")],
                parents,
                relations: Vec::new(),
            }
        })
        .collect();
    OntologyFile {
        name: "random".into(),
        concepts,
    }
}

/// Coefficient of each concept recomputed from scratch with `f64`, in id order.
pub fn naive_coefficients(file: &OntologyFile) -> Vec<f64> {
    let idx = |id: &str| file.concepts.iter().position(|c| c.id == id).unwrap();
    let mut coef: Vec<Option<f64>> = vec![None; file.concepts.len()];
    // Parents always precede children in generated files.
    for (i, c) in file.concepts.iter().enumerate() {
        let ps: Vec<f64> = c.parents.iter().map(|p| coef[idx(p)].unwrap()).collect();
        coef[i] = Some(if ps.is_empty() {
            1.0
        } else {
            let mean = ps.iter().sum::<f64>() / ps.len() as f64;
            (mean + 1.0).max(ps.iter().cloned().fold(f64::MIN, f64::max))
        });
    }
    coef.into_iter().map(Option::unwrap).collect()
}

/// In-memory XML model used to derive expected descriptors without the parser.
#[derive(Debug, Clone)]
pub enum XNode {
    Element {
        name: String,
        attrs: Vec<(String, String)>,
        children: Vec<XNode>,
    },
    Text(String),
}

const NAMES: &[&str] = &["a", "b", "sec", "p", "title", "item", "x-y", "ns_1"];
const ATTRS: &[&str] = &["id", "k", "lang", "ref"];
const PIECES: &[&str] = &[
    "alpha",
    " ",
    "beta gamma",
    "&",
    "<",
    ">",
    "\"q\"",
    "é",
    "  ",
    "\n",
    "42",
    "x'y",
];

fn random_text(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=4);
    (0..n).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

/// Random element tree with at most `budget` nodes (attributes included).
pub fn random_tree(rng: &mut impl Rng, budget: usize) -> XNode {
    let mut left = budget.max(1);
    random_element(rng, &mut left, 0)
}

fn random_element(rng: &mut impl Rng, left: &mut usize, depth: usize) -> XNode {
    *left -= 1;
    let mut attrs = Vec::new();
    for &a in ATTRS {
        if *left > 0 && rng.random_bool(0.15) {
            *left -= 1;
            attrs.push((a.to_string(), random_text(rng)));
        }
    }
    let mut children = Vec::new();
    let fanout = rng.random_range(0..=4);
    for _ in 0..fanout {
        if *left == 0 {
            break;
        }
        if depth < 8 && rng.random_bool(0.55) {
            children.push(random_element(rng, left, depth + 1));
        } else {
            *left -= 1;
            children.push(XNode::Text(random_text(rng)));
        }
    }
    XNode::Element {
        name: NAMES.choose(rng).unwrap().to_string(),
        attrs,
        children,
    }
}

fn esc(s: &str, attr: bool) -> String {
    let mut out = s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    if attr {
        out = out.replace('"', "&quot;");
    }
    out
}

pub fn serialize(node: &XNode, out: &mut String) {
    match node {
        XNode::Text(t) => out.push_str(&esc(t, false)),
        XNode::Element { name, attrs, children } => {
            out.push('<');
            out.push_str(name);
            for (k, v) in attrs {
                out.push_str(&format!(" {k}=\"{}\"", esc(v, true)));
            }
            if children.is_empty() {
                out.push_str("/>");
                return;
            }
            out.push('>');
            for c in children {
                serialize(c, out);
            }
            out.push_str(&format!("</{name}>"));
        }
    }
}

/// Expected descriptors: a first pass merges adjacent text children and drops
/// whitespace-only runs, a second pass numbers the cleaned tree depth-first.
pub fn oracle_descriptors(doc: DocId, root: &XNode) -> Vec<NodeDescriptor> {
    fn clean(node: &XNode) -> XNode {
        match node {
            XNode::Text(t) => XNode::Text(t.clone()),
            XNode::Element { name, attrs, children } => {
                let mut merged: Vec<XNode> = Vec::new();
                for c in children {
                    match (c, merged.last_mut()) {
                        (XNode::Text(t), Some(XNode::Text(prev))) => prev.push_str(t),
                        _ => merged.push(clean(c)),
                    }
                }
                merged.retain(|c| !matches!(c, XNode::Text(t) if t.trim().is_empty()));
                XNode::Element {
                    name: name.clone(),
                    attrs: attrs.clone(),
                    children: merged,
                }
            }
        }
    }
    fn number(node: &XNode, doc: DocId, parent: u32, counter: &mut u32, out: &mut Vec<NodeDescriptor>) {
        let mut next = || {
            *counter += 1;
            *counter
        };
        match node {
            XNode::Text(t) => {
                let start = next();
                let end = next();
                out.push(NodeDescriptor {
                    doc_id: doc,
                    start,
                    end,
                    parent,
                    node_type: NodeType::Text,
                    name: None,
                    value: Some(t.clone()),
                });
            }
            XNode::Element { name, attrs, children } => {
                let start = next();
                let slot = out.len();
                out.push(NodeDescriptor {
                    doc_id: doc,
                    start,
                    end: 0,
                    parent,
                    node_type: NodeType::Element,
                    name: Some(name.clone()),
                    value: None,
                });
                for (k, v) in attrs {
                    let s = next();
                    let e = next();
                    out.push(NodeDescriptor {
                        doc_id: doc,
                        start: s,
                        end: e,
                        parent: start,
                        node_type: NodeType::Attribute,
                        name: Some(k.clone()),
                        value: Some(v.clone()),
                    });
                }
                for c in children {
                    number(c, doc, start, counter, out);
                }
                *counter += 1;
                out[slot].end = *counter;
            }
        }
    }
    let cleaned = clean(root);
    let mut out = Vec::new();
    let mut counter = 0;
    number(&cleaned, doc, 0, &mut counter, &mut out);
    out
}

/// Ancestor test by walking parent links.
pub fn ancestor_by_parents(nodes: &[NodeDescriptor], u: usize, v: usize) -> bool {
    let by_start = |s: u32| nodes.iter().position(|n| n.start == s);
    let mut at = nodes[v].parent;
    while at != 0 {
        if at == nodes[u].start {
            return true;
        }
        at = nodes[by_start(at).unwrap()].parent;
    }
    false
}

/// `u` precedes `v` when `v` comes after `u` in document order and is not
/// inside it. `nodes` is in document order.
pub fn precedes_by_order(nodes: &[NodeDescriptor], u: usize, v: usize) -> bool {
    v > u && !ancestor_by_parents(nodes, u, v)
}
