//! Tagged policy documents: parsing, section structure, condition location,
//! and retrieval.
//!
//! Documents arrive as flat lists of lines, each wrapped in a single tag
//! (`<h1>` through `<h4>`, `<p>`, `<li>`, `<tr>`). Headings impose an
//! outline: a heading owns everything after it up to the next heading of
//! equal or higher rank. Lines before any heading (including the whole of
//! an untagged document) fall into a synthetic rank-zero root section.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    H1,
    H2,
    H3,
    H4,
    P,
    Li,
    Tr,
    Other,
}

impl Tag {
    /// Heading rank: h1 = 1 .. h4 = 4, everything else none.
    pub fn heading_rank(self) -> Option<u8> {
        match self {
            Tag::H1 => Some(1),
            Tag::H2 => Some(2),
            Tag::H3 => Some(3),
            Tag::H4 => Some(4),
            _ => None,
        }
    }
}

/// One source line. `raw` is the line exactly as it appeared; `text` is the
/// content between the tags (equal to `raw` for untagged lines).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentElement {
    pub id: usize,
    pub tag: Tag,
    pub text: String,
    pub raw: String,
}

/// A node of the outline: its heading element (none for the synthetic
/// root), the non-heading elements it directly owns, and nested sections.
/// Direct elements always precede the children in document order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: Option<usize>,
    pub rank: u8,
    pub elements: Vec<usize>,
    pub children: Vec<Section>,
}

impl Section {
    fn contains(&self, element_id: usize) -> bool {
        self.heading == Some(element_id)
            || self.elements.contains(&element_id)
            || self.children.iter().any(|c| c.contains(element_id))
    }

    fn element_ids(&self, out: &mut Vec<usize>) {
        if let Some(h) = self.heading {
            out.push(h);
        }
        out.extend(&self.elements);
        for child in &self.children {
            child.element_ids(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub elements: Vec<DocumentElement>,
    /// Top-level sections in document order. A synthetic root (rank 0)
    /// appears first when content precedes the first heading.
    pub sections: Vec<Section>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DocumentError {
    #[error("element id {0} is out of range")]
    UnknownElement(usize),
    #[error("section index {0} is out of range")]
    UnknownSection(usize),
}

const TAGS: [(Tag, &str, &str); 7] = [
    (Tag::H1, "<h1>", "</h1>"),
    (Tag::H2, "<h2>", "</h2>"),
    (Tag::H3, "<h3>", "</h3>"),
    (Tag::H4, "<h4>", "</h4>"),
    (Tag::P, "<p>", "</p>"),
    (Tag::Li, "<li>", "</li>"),
    (Tag::Tr, "<tr>", "</tr>"),
];

fn split_tag(line: &str) -> (Tag, String) {
    let trimmed = line.trim();
    for (tag, open, close) in TAGS {
        if trimmed.starts_with(open) && trimmed.ends_with(close) && trimmed.len() >= open.len() + close.len() {
            let inner = &trimmed[open.len()..trimmed.len() - close.len()];
            return (tag, inner.to_string());
        }
    }
    (Tag::Other, line.to_string())
}

/// Strips one leading and one trailing tag pair if present; used when a
/// condition string carries markup.
pub fn strip_markup(s: &str) -> String {
    split_tag(s).1.trim().to_string()
}

/// Parses tagged lines into elements plus the section outline. Untagged or
/// malformed lines degrade to `Tag::Other` and keep their raw text.
pub fn parse_document<S: AsRef<str>>(lines: &[S]) -> Document {
    let elements: Vec<DocumentElement> = lines
        .iter()
        .enumerate()
        .map(|(id, line)| {
            let (tag, text) = split_tag(line.as_ref());
            DocumentElement { id, tag, text, raw: line.as_ref().to_string() }
        })
        .collect();

    let mut sections: Vec<Section> = Vec::new();
    // Stack of open sections, outermost first; the innermost collects new
    // elements. Popped sections are folded into their parent.
    let mut stack: Vec<Section> = Vec::new();
    let close_into = |sections: &mut Vec<Section>, stack: &mut Vec<Section>| {
        let done = stack.pop().expect("close_into called with a non-empty stack");
        match stack.last_mut() {
            Some(parent) => parent.children.push(done),
            None => sections.push(done),
        }
    };

    for element in &elements {
        match element.tag.heading_rank() {
            Some(rank) => {
                while stack.last().is_some_and(|s| s.rank >= rank) {
                    close_into(&mut sections, &mut stack);
                }
                stack.push(Section {
                    heading: Some(element.id),
                    rank,
                    elements: Vec::new(),
                    children: Vec::new(),
                });
            }
            None => {
                if stack.is_empty() {
                    stack.push(Section { heading: None, rank: 0, elements: Vec::new(), children: Vec::new() });
                }
                stack.last_mut().unwrap().elements.push(element.id);
            }
        }
    }
    while !stack.is_empty() {
        close_into(&mut sections, &mut stack);
    }
    Document { elements, sections }
}

impl Document {
    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// The raw lines, in order. Joining parse output reproduces the input.
    pub fn raw_lines(&self) -> Vec<&str> {
        self.elements.iter().map(|e| e.raw.as_str()).collect()
    }

    /// Full document text: raw lines joined with newlines.
    pub fn text(&self) -> String {
        self.raw_lines().join("\n")
    }

    /// The innermost section containing the element, if any.
    pub fn innermost_section(&self, element_id: usize) -> Option<&Section> {
        fn descend(section: &Section, element_id: usize) -> Option<&Section> {
            for child in &section.children {
                if let Some(found) = descend(child, element_id) {
                    return Some(found);
                }
            }
            if section.heading == Some(element_id) || section.elements.contains(&element_id) {
                Some(section)
            } else {
                None
            }
        }
        self.sections.iter().find_map(|s| descend(s, element_id))
    }

    /// Raw text of one section, children included, in document order.
    pub fn section_text(&self, section: &Section) -> String {
        let mut ids = Vec::new();
        section.element_ids(&mut ids);
        ids.iter()
            .map(|id| self.elements[*id].raw.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn match_tokens(s: &str) -> Vec<String> {
    strip_markup(s)
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn normalized_raw(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn token_overlap_f1(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut counts: std::collections::BTreeMap<&str, isize> = std::collections::BTreeMap::new();
    for t in b {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in a {
        let c = counts.entry(t.as_str()).or_insert(0);
        if *c > 0 {
            *c -= 1;
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / a.len() as f64;
    let r = common as f64 / b.len() as f64;
    2.0 * p * r / (p + r)
}

/// Outcome of matching a condition string against the document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Located {
    /// Element id plus the overlap score that selected it (1.0 for an exact
    /// normalized match).
    Element { id: usize, score: f64 },
    NoMatch,
}

pub const LOCATE_THRESHOLD: f64 = 0.8;

/// Finds the document element a condition refers to: first by normalized
/// raw-string equality, then by best token-overlap F1 at or above the
/// threshold. Ties go to the earliest element.
pub fn locate_condition(doc: &Document, condition: &str) -> Located {
    locate_condition_with_threshold(doc, condition, LOCATE_THRESHOLD)
}

pub fn locate_condition_with_threshold(doc: &Document, condition: &str, threshold: f64) -> Located {
    let wanted = normalized_raw(condition);
    for element in &doc.elements {
        if normalized_raw(&element.raw) == wanted {
            return Located::Element { id: element.id, score: 1.0 };
        }
    }
    let wanted_tokens = match_tokens(condition);
    let mut best: Option<(usize, f64)> = None;
    for element in &doc.elements {
        let score = token_overlap_f1(&wanted_tokens, &match_tokens(&element.raw));
        let better = match best {
            Some((_, b)) => score > b + 1e-12,
            None => true,
        };
        if better {
            best = Some((element.id, score));
        }
    }
    match best {
        Some((id, score)) if score >= threshold => Located::Element { id, score },
        _ => Located::NoMatch,
    }
}

/// Context produced for a condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Augmentation {
    /// Raw text of the innermost section holding the element.
    Section(String),
    /// The element sits outside any heading (synthetic root): there is no
    /// structural context and the caller should fall back to summarizing.
    SummarizeFallback,
}

/// Returns the passage that gives a located condition its context.
pub fn augment_condition(doc: &Document, element_id: usize) -> Result<Augmentation, DocumentError> {
    if element_id >= doc.elements.len() {
        return Err(DocumentError::UnknownElement(element_id));
    }
    let section = doc
        .innermost_section(element_id)
        .ok_or(DocumentError::UnknownElement(element_id))?;
    if section.rank == 0 {
        return Ok(Augmentation::SummarizeFallback);
    }
    Ok(Augmentation::Section(doc.section_text(section)))
}

/// A reduced document plus which top-level sections survived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retrieval {
    pub document: Document,
    /// Indices into the original document's top-level section list.
    pub kept_sections: Vec<usize>,
}

impl Retrieval {
    pub fn is_empty(&self) -> bool {
        self.kept_sections.is_empty()
    }
}

fn rebuild_from_sections(doc: &Document, kept: &[usize]) -> Document {
    let mut lines: Vec<String> = Vec::new();
    for &si in kept {
        let mut ids = Vec::new();
        doc.sections[si].element_ids(&mut ids);
        lines.extend(ids.iter().map(|id| doc.elements[*id].raw.clone()));
    }
    parse_document(&lines)
}

/// Keeps the top-level sections that contain at least one gold evidence
/// line, in original order. No matching section leaves an empty document.
pub fn oracle_retrieve<S: AsRef<str>>(doc: &Document, gold_evidence: &[S]) -> Retrieval {
    let mut kept = Vec::new();
    for (si, section) in doc.sections.iter().enumerate() {
        let hit = gold_evidence.iter().any(|ev| match locate_condition(doc, ev.as_ref()) {
            Located::Element { id, .. } => section.contains(id),
            Located::NoMatch => false,
        });
        if hit {
            kept.push(si);
        }
    }
    Retrieval { document: rebuild_from_sections(doc, &kept), kept_sections: kept }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("embedding service returned malformed data: {0}")]
    Malformed(String),
    #[error("while embedding section {section}: {source}")]
    Section {
        section: usize,
        #[source]
        source: Box<EmbedError>,
    },
}

/// Anything that can turn text into a vector.
pub trait EmbeddingClient: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Ranks top-level sections by cosine similarity to the query and keeps the
/// best `top_k`, preserving original order. Ties break toward the earlier
/// section.
pub fn embedding_retrieve(
    doc: &Document,
    query: &str,
    top_k: usize,
    client: &dyn EmbeddingClient,
) -> Result<Retrieval, EmbedError> {
    if doc.sections.is_empty() || top_k == 0 {
        return Ok(Retrieval { document: rebuild_from_sections(doc, &[]), kept_sections: vec![] });
    }
    let query_vec = client.embed(query)?;
    let mut ranked: Vec<(usize, f64)> = Vec::with_capacity(doc.sections.len());
    for (si, section) in doc.sections.iter().enumerate() {
        let text = doc.section_text(section);
        let vec = client
            .embed(&text)
            .map_err(|e| EmbedError::Section { section: si, source: Box::new(e) })?;
        ranked.push((si, cosine(&query_vec, &vec)));
    }
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
    });
    let mut kept: Vec<usize> = ranked.into_iter().take(top_k).map(|(si, _)| si).collect();
    kept.sort();
    Ok(Retrieval { document: rebuild_from_sections(doc, &kept), kept_sections: kept })
}
