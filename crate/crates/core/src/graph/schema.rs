use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// The three edge families of the combined graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    /// Member-to-content interactions (likes, clicks, applies).
    Engagement,
    /// Member-to-creator strength of past engagement.
    Affinity,
    /// HAS-A relationships; always weight 1.0.
    Attribute,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Engagement => "engagement",
            EdgeKind::Affinity => "affinity",
            EdgeKind::Attribute => "attribute",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeKind {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "engagement" => Ok(EdgeKind::Engagement),
            "affinity" => Ok(EdgeKind::Affinity),
            "attribute" => Ok(EdgeKind::Attribute),
            other => Err(SchemaError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("unknown edge kind `{0}`")]
    UnknownKind(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("edge type {0} declared twice")]
    DuplicateEdgeType(u16),
}

/// Edge-type registry plus per-node-type feature dimensions.
///
/// Text form is one `key = value` pair per line:
///
/// ```text
/// # comments are allowed
/// edge_type.1 = engagement
/// edge_type.7 = attribute
/// feature_dim.0 = 16
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schema {
    edge_kinds: BTreeMap<u16, EdgeKind>,
    feature_dims: BTreeMap<u16, usize>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_edge_type(mut self, edge_type: u16, kind: EdgeKind) -> Self {
        self.edge_kinds.insert(edge_type, kind);
        self
    }

    pub fn with_feature_dim(mut self, node_type: u16, dim: usize) -> Self {
        self.feature_dims.insert(node_type, dim);
        self
    }

    pub fn register_edge_type(&mut self, edge_type: u16, kind: EdgeKind) -> Result<(), SchemaError> {
        match self.edge_kinds.get(&edge_type) {
            Some(existing) if *existing != kind => Err(SchemaError::DuplicateEdgeType(edge_type)),
            _ => {
                self.edge_kinds.insert(edge_type, kind);
                Ok(())
            }
        }
    }

    pub fn edge_kind(&self, edge_type: u16) -> Option<EdgeKind> {
        self.edge_kinds.get(&edge_type).copied()
    }

    pub fn feature_dim(&self, node_type: u16) -> Option<usize> {
        self.feature_dims.get(&node_type).copied()
    }

    pub fn edge_types(&self) -> impl Iterator<Item = (u16, EdgeKind)> + '_ {
        self.edge_kinds.iter().map(|(t, k)| (*t, *k))
    }

    pub fn feature_dims(&self) -> impl Iterator<Item = (u16, usize)> + '_ {
        self.feature_dims.iter().map(|(t, d)| (*t, *d))
    }

    pub(crate) fn set_feature_dim(&mut self, node_type: u16, dim: usize) {
        self.feature_dims.insert(node_type, dim);
    }

    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let mut schema = Schema::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: &str| SchemaError::Syntax {
                line: line_no,
                message: message.to_string(),
            };
            let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key = value"))?;
            let (section, id) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| syntax("expected <section>.<id> key"))?;
            let id: u16 = id.trim().parse().map_err(|_| syntax("type id must be a u16"))?;
            match section.trim() {
                "edge_type" => {
                    let kind: EdgeKind = value.parse()?;
                    if schema.edge_kinds.insert(id, kind).is_some() {
                        return Err(SchemaError::DuplicateEdgeType(id));
                    }
                }
                "feature_dim" => {
                    let dim: usize = value.trim().parse().map_err(|_| syntax("feature dim must be an integer"))?;
                    schema.feature_dims.insert(id, dim);
                }
                other => return Err(syntax(&format!("unknown section `{other}`"))),
            }
        }
        Ok(schema)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, k) in &self.edge_kinds {
            out.push_str(&format!("edge_type.{t} = {k}\n"));
        }
        for (t, d) in &self.feature_dims {
            out.push_str(&format!("feature_dim.{t} = {d}\n"));
        }
        out
    }
}
