//! Documents, goals and corpora, plus on-disk formats for every pipeline
//! artifact.

pub mod artifact;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use artifact::{ArtifactError, MATRIX_MAGIC, MATRIX_VERSION};

/// Placeholder substituted with the document text in description prompts.
pub const DOCUMENT_PLACEHOLDER: &str = "<document>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate document id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: document {id:?} has empty text")]
    EmptyText { line: usize, id: String },
    #[error("line {line}: document has empty id")]
    EmptyId { line: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("invalid goal template: {0}")]
    InvalidGoal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
        }
    }
}

/// One unstructured data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_items: Option<Vec<String>>,
    pub split: Split,
    /// Fields not covered above, kept verbatim for forward compatibility.
    #[serde(flatten)]
    pub metadata: BTreeMap<String, Value>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, split: Split) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            labels: None,
            gold_items: None,
            split,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_gold_items(mut self, items: Vec<String>) -> Self {
        self.gold_items = Some(items);
        self
    }

    pub fn with_label(mut self, scheme: impl Into<String>, class: impl Into<String>) -> Self {
        self.labels
            .get_or_insert_with(BTreeMap::new)
            .insert(scheme.into(), class.into());
        self
    }

    pub fn label(&self, scheme: &str) -> Option<&str> {
        self.labels.as_ref()?.get(scheme).map(String::as_str)
    }
}

/// The user's discovery goal, realized as two prompt templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub name: String,
    pub description_prompt: String,
    pub format_prompt: String,
}

impl Goal {
    pub fn new(
        name: impl Into<String>,
        description_prompt: impl Into<String>,
        format_prompt: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let goal = Self {
            name: name.into(),
            description_prompt: description_prompt.into(),
            format_prompt: format_prompt.into(),
        };
        goal.validate()?;
        Ok(goal)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let count = self.description_prompt.matches(DOCUMENT_PLACEHOLDER).count();
        if count != 1 {
            return Err(CorpusError::InvalidGoal(format!(
                "description prompt of goal {:?} must contain {DOCUMENT_PLACEHOLDER} exactly once, found {count}",
                self.name
            )));
        }
        Ok(())
    }

    /// Substitutes `text` into the description prompt.
    pub fn render_description(&self, text: &str) -> String {
        self.description_prompt.replacen(DOCUMENT_PLACEHOLDER, text, 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness and nonempty text. Line numbers
    /// in errors are 1-based document positions.
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            validate_document(doc, i + 1)?;
            if let Some(&first) = seen.get(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: doc.id.clone(),
                    first_line: first,
                    second_line: i + 1,
                });
            }
            seen.insert(&doc.id, i + 1);
        }
        Ok(Self {
            documents,
            metadata: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(move |d| d.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// A new corpus holding only the documents of one split, order preserved.
    pub fn subset(&self, split: Split) -> Corpus {
        Corpus {
            documents: self.split(split).cloned().collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.documents.iter().position(|d| d.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.id.as_str())
    }
}

fn validate_document(doc: &Document, line: usize) -> Result<(), CorpusError> {
    if doc.id.is_empty() {
        return Err(CorpusError::EmptyId { line });
    }
    if doc.text.is_empty() {
        return Err(CorpusError::EmptyText {
            line,
            id: doc.id.clone(),
        });
    }
    Ok(())
}

/// Reads a JSONL corpus. Blank lines are skipped but still counted for line
/// numbers.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_corpus(BufReader::new(file), path)
}

fn read_corpus(reader: impl BufRead, path: &Path) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut lines_of: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        validate_document(&doc, lineno)?;
        if let Some(&first) = lines_of.get(&doc.id) {
            return Err(CorpusError::DuplicateId {
                id: doc.id,
                first_line: first,
                second_line: lineno,
            });
        }
        lines_of.insert(doc.id.clone(), lineno);
        documents.push(doc);
    }
    Ok(Corpus {
        documents,
        metadata: BTreeMap::new(),
    })
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
    let mut buf = Vec::new();
    for doc in &corpus.documents {
        serde_json::to_writer(&mut buf, doc)?;
        buf.push(b'\n');
    }
    artifact::write_atomic(path.as_ref(), &buf)
}

/// One step of an interaction trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "lowercase")]
pub enum Step {
    State(String),
    Action(String),
}

/// Breaks `⟨s1,a1,…,sn,an⟩` into n context/next-action pairs. Context i is
/// the prefix ending at state i, serialized one step per line with `state:` /
/// `action:` prefixes; its gold item is action i.
pub fn split_trajectory(
    trajectory_id: &str,
    trajectory: &[Step],
    split: Split,
) -> Result<Vec<(Document, String)>, CorpusError> {
    if trajectory.is_empty() {
        return Err(CorpusError::EmptyTrajectory);
    }
    if !trajectory.len().is_multiple_of(2) {
        return Err(CorpusError::MalformedTrajectory(format!(
            "expected alternating state/action pairs, got {} steps",
            trajectory.len()
        )));
    }
    let mut context = String::new();
    let mut out = Vec::with_capacity(trajectory.len() / 2);
    for (i, pair) in trajectory.chunks_exact(2).enumerate() {
        let (state, action) = match pair {
            [Step::State(s), Step::Action(a)] => (s, a),
            _ => {
                return Err(CorpusError::MalformedTrajectory(format!(
                    "steps {} and {} are not a (state, action) pair",
                    2 * i,
                    2 * i + 1
                )))
            }
        };
        if !context.is_empty() {
            context.push('\n');
        }
        context.push_str("state: ");
        context.push_str(state);
        let doc =
            Document::new(format!("{trajectory_id}#{i}"), context.clone(), split).with_gold_items(vec![action.clone()]);
        out.push((doc, action.clone()));
        context.push_str("\naction: ");
        context.push_str(action);
    }
    Ok(out)
}

pub(crate) fn write_jsonl_line(out: &mut impl Write, value: &impl Serialize) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str) -> Result<Corpus, CorpusError> {
        read_corpus(Cursor::new(text), Path::new("mem"))
    }

    #[test]
    fn two_lines_preserve_order() {
        let c = read(
            "{\"id\":\"b\",\"text\":\"x\",\"split\":\"train\"}\n{\"id\":\"a\",\"text\":\"y\",\"split\":\"test\"}\n",
        )
        .unwrap();
        assert_eq!(c.ids().collect::<Vec<_>>(), ["b", "a"]);
        assert_eq!(c.count(Split::Train), 1);
        assert_eq!(c.count(Split::Test), 1);
    }

    #[test]
    fn duplicate_id_names_both_lines() {
        let mut text = String::new();
        for i in 1..=7 {
            let id = if i == 3 || i == 7 {
                "d1".to_string()
            } else {
                format!("x{i}")
            };
            text.push_str(&format!("{{\"id\":\"{id}\",\"text\":\"t\",\"split\":\"train\"}}\n"));
        }
        match read(&text) {
            Err(CorpusError::DuplicateId {
                id,
                first_line,
                second_line,
            }) => {
                assert_eq!(id, "d1");
                assert_eq!((first_line, second_line), (3, 7));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_text_rejected() {
        let err = read("{\"id\":\"a\",\"text\":\"\",\"split\":\"train\"}\n").unwrap_err();
        assert!(matches!(err, CorpusError::EmptyText { line: 1, .. }));
    }

    #[test]
    fn parse_error_has_line_number() {
        let err = read("{\"id\":\"a\",\"text\":\"t\",\"split\":\"train\"}\nnot json\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }));
        let err = read("{\"id\":\"a\",\"text\":\"t\",\"split\":\"dev\"}\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
    }

    #[test]
    fn unknown_fields_kept() {
        let c = read("{\"id\":\"a\",\"text\":\"t\",\"split\":\"train\",\"source\":\"inspired\",\"turn\":4}\n").unwrap();
        let doc = &c.documents[0];
        assert_eq!(doc.metadata["source"], Value::from("inspired"));
        let back = serde_json::to_value(doc).unwrap();
        assert_eq!(back["turn"], Value::from(4));
    }

    #[test]
    fn bills_split_sizes() {
        let mut text = String::new();
        for i in 0..(8981 + 7261) {
            let split = if i < 8981 { "train" } else { "test" };
            text.push_str(&format!(
                "{{\"id\":\"bill{i}\",\"text\":\"summary {i}\",\"split\":\"{split}\",\"labels\":{{\"high_level\":\"c{}\"}}}}\n",
                i % 21
            ));
        }
        let c = read(&text).unwrap();
        assert_eq!(c.count(Split::Train), 8981);
        assert_eq!(c.count(Split::Test), 7261);
    }

    #[test]
    fn goal_placeholder_exactly_once() {
        assert!(Goal::new("g", "look at <document>", "list").is_ok());
        assert!(Goal::new("g", "no placeholder", "list").is_err());
        assert!(Goal::new("g", "<document> and <document>", "list").is_err());
    }

    fn traj(n: usize) -> Vec<Step> {
        (1..=n)
            .flat_map(|i| [Step::State(format!("s{i}")), Step::Action(format!("a{i}"))])
            .collect()
    }

    #[test]
    fn minimal_trajectory() {
        let pairs = split_trajectory("t", &traj(1), Split::Train).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].0.text, "state: s1");
        assert_eq!(pairs[0].1, "a1");
        assert_eq!(pairs[0].0.gold_items.as_deref(), Some(&["a1".to_string()][..]));
    }

    #[test]
    fn two_step_prefixes() {
        let pairs = split_trajectory("t", &traj(2), Split::Train).unwrap();
        assert_eq!(pairs[0].0.text, "state: s1");
        assert_eq!(pairs[1].0.text, "state: s1\naction: a1\nstate: s2");
        assert_eq!(pairs[1].1, "a2");
    }

    #[test]
    fn trajectory_count_matches_prefix_enumeration() {
        for n in 1..12 {
            let steps = traj(n);
            // prefixes ending at a state: indices 0, 2, 4, ...
            let expected = (0..steps.len())
                .filter(|&end| matches!(steps[end], Step::State(_)))
                .count();
            let pairs = split_trajectory("t", &steps, Split::Test).unwrap();
            assert_eq!(pairs.len(), expected);
            assert_eq!(pairs.len(), n);
        }
    }

    #[test]
    fn malformed_trajectories() {
        assert!(matches!(
            split_trajectory("t", &[], Split::Train),
            Err(CorpusError::EmptyTrajectory)
        ));
        let bad = vec![Step::Action("a".into()), Step::State("s".into())];
        assert!(matches!(
            split_trajectory("t", &bad, Split::Train),
            Err(CorpusError::MalformedTrajectory(_))
        ));
        let odd = vec![Step::State("s".into())];
        assert!(split_trajectory("t", &odd, Split::Train).is_err());
    }
}
