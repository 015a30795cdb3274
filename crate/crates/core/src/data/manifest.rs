//! Manifest text format:
//!
//! ```text
//! #label 0 Boredom
//! #label 1 Confusion
//! clips/a.efv<TAB>0<TAB>Boredom
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::data::{read_clip, Sample};
use crate::error::{Error, Result};
use crate::tokenizer::Geometry;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub labels: Vec<String>,
    pub entries: Vec<Entry>,
    /// Directory clip paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(labels: Vec<String>, entries: Vec<Entry>, root: PathBuf) -> Result<Self> {
        let m = Self {
            labels,
            entries,
            root,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in &self.labels {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Data(format!("label name `{name}` is empty or has whitespace")));
            }
            if !seen.insert(name) {
                return Err(Error::Data(format!("duplicate label name `{name}`")));
            }
        }
        for e in &self.entries {
            if e.label >= self.labels.len() {
                return Err(Error::Data(format!(
                    "{}: label {} outside label map of {}",
                    e.path.display(),
                    e.label,
                    self.labels.len()
                )));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &Entry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Same labels and root, different entries.
    pub fn with_entries(&self, entries: Vec<Entry>) -> Self {
        Self {
            entries,
            ..self.clone()
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for e in &self.entries {
            counts[e.label] += 1;
        }
        counts
    }

    /// Parses manifest text; `root` is where clip paths resolve.
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut labels: Vec<Option<String>> = Vec::new();
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::Data(format!("manifest line {}: {what}", lineno + 1));
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#label") {
                let mut parts = rest.split_whitespace();
                let (Some(id), Some(name), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(bad("expected `#label <id> <name>`"));
                };
                let id: usize = id.parse().map_err(|_| bad("label id is not an integer"))?;
                if labels.len() <= id {
                    labels.resize(id + 1, None);
                }
                if labels[id].replace(name.to_string()).is_some() {
                    return Err(bad("label id declared twice"));
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, id, name] = fields[..] else {
                return Err(bad("expected `<path>\\t<label id>\\t<label name>`"));
            };
            let id: usize = id.trim().parse().map_err(|_| bad("label id is not an integer"))?;
            records.push((lineno + 1, PathBuf::from(path), id, name.trim().to_string()));
        }
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::Data(format!("label ids not dense: {i} missing"))))
            .collect::<Result<Vec<_>>>()?;
        let mut entries = Vec::with_capacity(records.len());
        for (lineno, path, id, name) in records {
            match labels.get(id) {
                Some(l) if *l == name => entries.push(Entry { path, label: id }),
                Some(l) => {
                    return Err(Error::Data(format!(
                        "manifest line {lineno}: label {id} is `{l}` in the label map, record says `{name}`"
                    )))
                }
                None => {
                    return Err(Error::Data(format!(
                        "manifest line {lineno}: label {id} not in label map"
                    )))
                }
            }
        }
        Self::new(labels, entries, root.to_path_buf())
    }

    /// Reads a manifest; clip paths resolve against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &root).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads and normalises every clip, checking it against `geometry`.
    pub fn load_samples(&self, geometry: &Geometry) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .map(|e| {
                let path = self.resolve(e);
                let clip = read_clip(&path)?;
                if clip.geometry != *geometry {
                    return Err(Error::Data(format!(
                        "{}: clip is {}, model expects {geometry}",
                        path.display(),
                        clip.geometry
                    )));
                }
                Ok(Sample {
                    clip: clip.to_tensor(),
                    label: e.label,
                })
            })
            .collect()
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, name) in self.labels.iter().enumerate() {
            writeln!(f, "#label {i} {name}")?;
        }
        for e in &self.entries {
            writeln!(f, "{}\t{}\t{}", e.path.display(), e.label, self.labels[e.label])?;
        }
        Ok(())
    }
}
