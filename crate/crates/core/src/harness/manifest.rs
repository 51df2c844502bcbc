//! Dataset manifests: `path,onset_s,offset_s,class[,split]`.
//!
//! Paths are relative to the manifest's directory unless absolute. An empty
//! class field marks an unlabelled event. The optional split column holds
//! `train`, `test`, or a session/fold name used for rotation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const HEADER: &str = "path,onset_s,offset_s,class";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEvent {
    pub path: String,
    pub onset_s: f64,
    pub offset_s: f64,
    pub class_name: String,
    /// Id in [`Manifest::classes`]; `None` for unlabelled or unknown classes.
    pub class: Option<usize>,
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub events: Vec<ManifestEvent>,
}

impl Manifest {
    pub fn resolve(&self, event: &ManifestEvent) -> PathBuf {
        let p = Path::new(&event.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Distinct split names in order of first appearance.
    pub fn splits(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in self.events.iter().filter_map(|e| e.split.as_ref()) {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let with_split = self.events.iter().any(|e| e.split.is_some());
        let mut out = String::from(HEADER);
        out.push_str(if with_split { ",split\n" } else { "\n" });
        for e in &self.events {
            let _ = write!(out, "{},{},{},{}", e.path, e.onset_s, e.offset_s, e.class_name);
            if with_split {
                let _ = write!(out, ",{}", e.split.as_deref().unwrap_or(""));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Loads a manifest, assigning class ids in order of first appearance.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    load(path, None)
}

/// Loads a manifest against a fixed class dictionary; unknown names are kept
/// unlabelled.
pub fn load_manifest_with_classes(path: &Path, classes: &[String]) -> Result<Manifest> {
    load(path, Some(classes))
}

fn load(path: &Path, fixed: Option<&[String]>) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = parse_manifest(&text, &path.display().to_string(), root, fixed)?;
    for e in &m.events {
        let p = m.resolve(e);
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
    }
    Ok(m)
}

/// Parses manifest text without touching the file system.
pub fn parse_manifest(text: &str, origin: &str, root: PathBuf, fixed: Option<&[String]>) -> Result<Manifest> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.into(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty manifest".into()))?;
    let header = header.trim();
    let with_split = match header {
        HEADER => false,
        h if h == format!("{HEADER},split") => true,
        _ => return Err(err(1, format!("expected header `{HEADER}[,split]`"))),
    };
    let mut classes: Vec<String> = fixed.map(<[String]>::to_vec).unwrap_or_default();
    let mut events = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        let expected = if with_split { 5 } else { 4 };
        if fields.len() != expected {
            return Err(err(lineno, format!("expected {expected} fields, found {}", fields.len())));
        }
        let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(lineno, format!("bad {what} `{s}`")));
        let onset_s = num(fields[1], "onset")?;
        let offset_s = num(fields[2], "offset")?;
        if !(onset_s >= 0.0 && onset_s < offset_s) {
            return Err(Error::InvalidInterval {
                row: lineno,
                onset: onset_s,
                offset: offset_s,
            });
        }
        let class_name = fields[3].to_string();
        let class = if class_name.is_empty() {
            None
        } else if let Some(id) = classes.iter().position(|c| *c == class_name) {
            Some(id)
        } else if fixed.is_none() {
            classes.push(class_name.clone());
            Some(classes.len() - 1)
        } else {
            None
        };
        let split = with_split.then(|| fields[4].to_string()).filter(|s| !s.is_empty());
        events.push(ManifestEvent {
            path: fields[0].to_string(),
            onset_s,
            offset_s,
            class_name,
            class,
            split,
        });
    }
    Ok(Manifest { root, classes, events })
}
