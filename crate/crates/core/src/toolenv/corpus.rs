use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ToolError;

pub const SNIPPET_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub url: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub url: String,
    pub title: String,
    pub snippet: String,
}

/// Lowercased alphanumeric runs.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Immutable offline web: documents by url plus an inverted term index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
    index: BTreeMap<String, BTreeSet<String>>,
}

impl Corpus {
    pub fn new(docs: impl IntoIterator<Item = Document>) -> Self {
        let mut corpus = Corpus::default();
        for doc in docs {
            for term in terms(&doc.title).into_iter().chain(terms(&doc.body)) {
                corpus.index.entry(term).or_default().insert(doc.url.clone());
            }
            corpus.documents.insert(doc.url.clone(), doc);
        }
        corpus
    }

    /// Loads a JSONL fixture of `{url, title, body}` records.
    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let docs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<Document>)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(docs))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_jsonl(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, url: &str) -> Option<&Document> {
        self.documents.get(url)
    }

    pub fn indexed_urls(&self) -> impl Iterator<Item = &String> {
        self.index.values().flatten()
    }

    /// Ranks documents by number of distinct query terms they contain,
    /// ties broken by url; documents with no overlap are omitted.
    pub fn search_one(&self, query: &str, top_k: usize) -> Vec<SearchHit> {
        let qterms: BTreeSet<String> = terms(query).into_iter().collect();
        let mut overlap: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &qterms {
            for url in self.index.get(t).into_iter().flatten() {
                *overlap.entry(url.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = overlap.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked
            .into_iter()
            .take(top_k)
            .map(|(url, _)| {
                let doc = &self.documents[url];
                SearchHit { url: doc.url.clone(), title: doc.title.clone(), snippet: snippet(&doc.body, &qterms) }
            })
            .collect()
    }

    pub fn search(&self, queries: &[String], top_k: usize) -> Result<Vec<Vec<SearchHit>>, ToolError> {
        if queries.is_empty() || queries.iter().all(|q| q.trim().is_empty()) {
            return Err(ToolError::Arguments("search needs at least one nonempty query".into()));
        }
        Ok(queries.iter().map(|q| self.search_one(q, top_k)).collect())
    }

    pub fn visit(&self, url: &str) -> Result<String, ToolError> {
        self.documents
            .get(url)
            .map(|d| d.body.clone())
            .ok_or_else(|| ToolError::NotFound(url.to_string()))
    }
}

/// The 200-character window of `body` containing the most distinct query
/// terms; the earliest such window wins.
pub fn snippet(body: &str, qterms: &BTreeSet<String>) -> String {
    let chars: Vec<(usize, char)> = body.char_indices().collect();
    if chars.len() <= SNIPPET_CHARS {
        return body.to_string();
    }
    // (char position, term) for every token in the body
    let mut tokens: Vec<(usize, usize, String)> = Vec::new();
    let mut start: Option<usize> = None;
    for (pos, &(_, c)) in chars.iter().enumerate() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(pos),
            (false, Some(s)) => {
                let word: String = chars[s..pos].iter().map(|&(_, c)| c).collect();
                tokens.push((s, pos, word.to_lowercase()));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        let word: String = chars[s..].iter().map(|&(_, c)| c).collect();
        tokens.push((s, chars.len(), word.to_lowercase()));
    }

    let mut best = (0usize, 0usize); // (start, distinct terms)
    let candidates = std::iter::once(0).chain(tokens.iter().map(|t| t.0));
    for begin in candidates {
        let end = begin + SNIPPET_CHARS;
        let hits: BTreeSet<&str> = tokens
            .iter()
            .filter(|(s, e, w)| *s >= begin && *e <= end && qterms.contains(w))
            .map(|(_, _, w)| w.as_str())
            .collect();
        if hits.len() > best.1 {
            best = (begin, hits.len());
        }
    }
    let begin = best.0.min(chars.len() - SNIPPET_CHARS);
    let from = chars[begin].0;
    let to = chars.get(begin + SNIPPET_CHARS).map(|&(i, _)| i).unwrap_or(body.len());
    body[from..to].to_string()
}
