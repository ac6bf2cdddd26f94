//! Property proposal: two LLM calls per document, numbered-list parsing and
//! canonical-key deduplication into a [`PropertyPool`].

pub mod llm;
pub mod templates;

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use log::warn;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::corpus_store::{Corpus, Document, Goal, Split};
pub use llm::{ChatMessage, ChatRequest, LlmClient, LlmError, LlmSettings};

pub const DEFAULT_MAX_PROPERTIES_PER_DOC: usize = 30;
pub const DEFAULT_MAX_FAILURE_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("property pids must be contiguous from 0; found pid {found} at position {position}")]
    NonContiguousPid { position: usize, found: u32 },
    #[error("duplicate canonical key {0:?}")]
    DuplicateKey(String),
    #[error("empty canonical key for property {0}")]
    EmptyKey(u32),
    #[error("positive pair references unknown pid {0}")]
    UnknownPid(u32),
    #[error("positive pair references document {0:?} absent from the corpus")]
    UnknownDocument(String),
    #[error("property {0} has no positive pair")]
    Orphan(u32),
}

#[derive(Debug, Error)]
pub enum ProposeError {
    #[error("invalid goal: {0}")]
    Goal(#[from] crate::corpus_store::CorpusError),
    #[error("max_parallel must be at least 1")]
    Parallelism,
    #[error("{failed} of {total} documents failed proposal (limit {limit:.0}%)")]
    TooManyFailures { failed: usize, total: usize, limit: f64 },
    #[error("llm error: {0}")]
    Llm(#[from] LlmError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Property {
    pub pid: u32,
    pub text: String,
    pub canonical_key: String,
}

/// Deduplicated properties plus the (document id, pid) links that proposed them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PropertyPool {
    properties: Vec<Property>,
    positives: BTreeSet<(String, u32)>,
}

impl PropertyPool {
    pub fn from_parts(properties: Vec<Property>, positives: BTreeSet<(String, u32)>) -> Result<Self, PoolError> {
        let mut keys = std::collections::HashSet::with_capacity(properties.len());
        for (i, p) in properties.iter().enumerate() {
            if p.pid as usize != i {
                return Err(PoolError::NonContiguousPid {
                    position: i,
                    found: p.pid,
                });
            }
            if p.canonical_key.is_empty() {
                return Err(PoolError::EmptyKey(p.pid));
            }
            if !keys.insert(p.canonical_key.as_str()) {
                return Err(PoolError::DuplicateKey(p.canonical_key.clone()));
            }
        }
        if let Some((_, pid)) = positives.iter().find(|(_, pid)| *pid as usize >= properties.len()) {
            return Err(PoolError::UnknownPid(*pid));
        }
        Ok(Self { properties, positives })
    }

    pub fn properties(&self) -> &[Property] {
        &self.properties
    }

    pub fn positives(&self) -> &BTreeSet<(String, u32)> {
        &self.positives
    }

    pub fn len(&self) -> usize {
        self.properties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.properties.is_empty()
    }

    pub fn get(&self, pid: u32) -> Option<&Property> {
        self.properties.get(pid as usize)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.properties.iter().map(|p| p.text.as_str())
    }

    /// Checks the corpus-dependent invariants: every positive document exists
    /// and every property has at least one positive.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<(), PoolError> {
        let ids: std::collections::HashSet<&str> = corpus.ids().collect();
        let mut covered = vec![false; self.properties.len()];
        for (doc, pid) in &self.positives {
            if !ids.contains(doc.as_str()) {
                return Err(PoolError::UnknownDocument(doc.clone()));
            }
            covered[*pid as usize] = true;
        }
        match covered.iter().position(|c| !c) {
            Some(pid) => Err(PoolError::Orphan(pid as u32)),
            None => Ok(()),
        }
    }
}

fn list_item_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.)]|-)\s*(.*)$").expect("static regex"))
}

const QUOTES: &[char] = &['"', '\'', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '`'];

/// Extracts items from a numbered (`1.`, `1)`) or dashed list. Lines without a
/// marker are ignored.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    let re = list_item_regex();
    text.lines()
        .filter_map(|line| re.captures(line))
        .map(|cap| {
            cap[1]
                .trim()
                .trim_matches(|c: char| c.is_whitespace() || QUOTES.contains(&c))
                .to_string()
        })
        .filter(|item| !item.is_empty())
        .collect()
}

fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation() && !"$+<=>^`|~".contains(c);
    }
    matches!(c,
        '\u{00a1}' | '\u{00ab}' | '\u{00b7}' | '\u{00bb}' | '\u{00bf}'
        | '\u{2010}'..='\u{2027}'
        | '\u{2030}'..='\u{205e}'
        | '\u{3001}'..='\u{3003}'
        | '\u{3008}'..='\u{3011}'
        | '\u{ff01}'..='\u{ff0f}')
}

/// Dedup key: NFC, lowercase, single internal spaces, no leading or trailing
/// punctuation.
pub fn canonicalize(text: &str) -> String {
    let lowered: String = text.nfc().collect::<String>().to_lowercase().nfc().collect();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_whitespace() || is_punctuation(c))
        .to_string()
}

/// Runs the describe-then-format exchange for one document and parses the
/// resulting list. Returns at most `max_items` strings.
pub fn propose_for_document(
    doc: &Document,
    goal: &Goal,
    llm: &dyn LlmClient,
    settings: &LlmSettings,
    max_items: usize,
) -> Result<Vec<String>, LlmError> {
    let mut messages = vec![ChatMessage::user(goal.render_description(&doc.text))];
    let description = llm.complete(&settings.request(messages.clone()))?;
    messages.push(ChatMessage::assistant(description));
    messages.push(ChatMessage::user(goal.format_prompt.clone()));
    let listing = llm.complete(&settings.request(messages))?;
    let mut items = parse_numbered_list(&listing);
    if items.len() > max_items {
        warn!(
            "document {:?}: truncating {} proposed properties to {}",
            doc.id,
            items.len(),
            max_items
        );
        items.truncate(max_items);
    }
    Ok(items)
}

#[derive(Debug, Clone)]
pub struct PoolOptions {
    pub max_parallel: usize,
    pub max_items_per_doc: usize,
    pub max_failure_fraction: f64,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            max_parallel: 4,
            max_items_per_doc: DEFAULT_MAX_PROPERTIES_PER_DOC,
            max_failure_fraction: DEFAULT_MAX_FAILURE_FRACTION,
        }
    }
}

/// Documents whose proposal failed, with the reason.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProposalReport {
    pub documents: usize,
    pub skipped: Vec<(String, String)>,
}

/// Proposes properties for every training document and merges them by
/// canonical key. Merging happens in corpus order after all calls finish, so
/// the pool does not depend on completion order.
pub fn build_pool(
    corpus: &Corpus,
    goal: &Goal,
    llm: &dyn LlmClient,
    settings: &LlmSettings,
    options: &PoolOptions,
) -> Result<(PropertyPool, ProposalReport), ProposeError> {
    goal.validate()?;
    if options.max_parallel == 0 {
        return Err(ProposeError::Parallelism);
    }
    let docs: Vec<&Document> = corpus.split(Split::Train).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.max_parallel)
        .build()
        .map_err(|e| ProposeError::ThreadPool(e.to_string()))?;
    let results: Vec<Result<Vec<String>, LlmError>> = pool.install(|| {
        docs.par_iter()
            .map(|doc| propose_for_document(doc, goal, llm, settings, options.max_items_per_doc))
            .collect()
    });

    let mut report = ProposalReport {
        documents: docs.len(),
        skipped: Vec::new(),
    };
    let mut properties: Vec<Property> = Vec::new();
    let mut by_key: HashMap<String, u32> = HashMap::new();
    let mut positives = BTreeSet::new();
    for (doc, result) in docs.iter().zip(results) {
        let items = match result {
            Ok(items) => items,
            Err(e @ LlmError::CacheCorrupt { .. }) => return Err(e.into()),
            Err(e) => {
                warn!("document {:?} skipped: {e}", doc.id);
                report.skipped.push((doc.id.clone(), e.to_string()));
                continue;
            }
        };
        for text in items {
            let key = canonicalize(&text);
            if key.is_empty() {
                continue;
            }
            let pid = *by_key.entry(key.clone()).or_insert_with(|| {
                let pid = properties.len() as u32;
                properties.push(Property {
                    pid,
                    text,
                    canonical_key: key,
                });
                pid
            });
            positives.insert((doc.id.clone(), pid));
        }
    }
    let failed = report.skipped.len();
    if !docs.is_empty() && failed as f64 > options.max_failure_fraction * docs.len() as f64 {
        return Err(ProposeError::TooManyFailures {
            failed,
            total: docs.len(),
            limit: options.max_failure_fraction * 100.0,
        });
    }
    let pool = PropertyPool::from_parts(properties, positives).expect("pool assembled from canonical keys is valid");
    Ok((pool, report))
}
