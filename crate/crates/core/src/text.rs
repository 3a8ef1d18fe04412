//! Tokenization and keyword matching over surface text.

use std::collections::HashMap;

use crate::ontology::ConceptId;

/// Lowercased alphanumeric word runs. Everything else separates words.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    next: HashMap<String, usize>,
    concepts: Vec<ConceptId>,
}

/// Token trie over every keyword of an ontology.
#[derive(Debug, Clone)]
pub struct KeywordMatcher {
    nodes: Vec<TrieNode>,
}

/// One greedy match: `len` tokens starting at `start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanMatch<'a> {
    pub start: usize,
    pub len: usize,
    pub concepts: &'a [ConceptId],
}

impl KeywordMatcher {
    pub fn new<'a>(keywords: impl IntoIterator<Item = (&'a str, ConceptId)>) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (keyword, concept) in keywords {
            let tokens = tokenize(keyword);
            if tokens.is_empty() {
                continue;
            }
            let mut at = 0;
            for tok in tokens {
                at = match nodes[at].next.get(&tok) {
                    Some(&n) => n,
                    None => {
                        nodes.push(TrieNode::default());
                        let n = nodes.len() - 1;
                        nodes[at].next.insert(tok, n);
                        n
                    }
                };
            }
            let slot = &mut nodes[at].concepts;
            if !slot.contains(&concept) {
                slot.push(concept);
                slot.sort();
            }
        }
        Self { nodes }
    }

    /// Left-to-right longest-match scan. Tokens consumed by a match are not
    /// matched again.
    pub fn scan<'a>(&'a self, tokens: &[String]) -> Vec<SpanMatch<'a>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut at = 0;
            let mut best: Option<(usize, usize)> = None;
            for (j, tok) in tokens[i..].iter().enumerate() {
                match self.nodes[at].next.get(tok) {
                    Some(&n) => {
                        at = n;
                        if !self.nodes[n].concepts.is_empty() {
                            best = Some((j + 1, n));
                        }
                    }
                    None => break,
                }
            }
            match best {
                Some((len, node)) => {
                    out.push(SpanMatch {
                        start: i,
                        len,
                        concepts: &self.nodes[node].concepts,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}
