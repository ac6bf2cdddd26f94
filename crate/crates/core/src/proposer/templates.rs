//! Bundled goal templates and loading of user-supplied ones.

use std::fs;
use std::path::Path;

use crate::corpus_store::{CorpusError, Goal};

const BUNDLED: &[(&str, &str, &str)] = &[
    (
        "inspired",
        include_str!("../../templates/inspired.describe.txt"),
        include_str!("../../templates/inspired.format.txt"),
    ),
    (
        "alfworld",
        include_str!("../../templates/alfworld.describe.txt"),
        include_str!("../../templates/alfworld.format.txt"),
    ),
    (
        "bills",
        include_str!("../../templates/bills.describe.txt"),
        include_str!("../../templates/bills.format.txt"),
    ),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(name, _, _)| *name)
}

pub fn bundled(name: &str) -> Option<Goal> {
    BUNDLED
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(n, describe, format)| Goal {
            name: (*n).to_string(),
            description_prompt: describe.trim_end().to_string(),
            format_prompt: format.trim_end().to_string(),
        })
}

/// Loads `<dir>/<name>.describe.txt` and `<dir>/<name>.format.txt`.
pub fn load_from_dir(dir: impl AsRef<Path>, name: &str) -> Result<Goal, CorpusError> {
    let dir = dir.as_ref();
    let read = |suffix: &str| {
        let path = dir.join(format!("{name}.{suffix}.txt"));
        fs::read_to_string(&path).map_err(|source| CorpusError::Io { path, source })
    };
    Goal::new(name, read("describe")?.trim_end(), read("format")?.trim_end())
}

/// A bundled goal name, or a path prefix `dir/name` pointing at template files.
pub fn resolve(spec: &str) -> Result<Goal, CorpusError> {
    if let Some(goal) = bundled(spec) {
        return Ok(goal);
    }
    let path = Path::new(spec);
    match (path.parent(), path.file_name().and_then(|n| n.to_str())) {
        (Some(dir), Some(name)) => load_from_dir(dir, name),
        _ => Err(CorpusError::InvalidGoal(format!("unknown goal {spec:?}"))),
    }
}
