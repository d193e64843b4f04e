use std::path::Path;

use indexmap::IndexSet;

use super::ToolsError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        Self {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
        }
    }

    pub fn render(&self) -> String {
        format!("{} -[{}]-> {}", self.subject, self.relation, self.object)
    }
}

/// Entities and `(subject, relation, object)` edges. Nodes are derived from
/// the edges, so every endpoint is a node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    nodes: IndexSet<String>,
    edges: Vec<Triple>,
}

impl KnowledgeGraph {
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut graph = Self::default();
        for t in triples {
            graph.nodes.insert(t.subject.clone());
            graph.nodes.insert(t.object.clone());
            graph.edges.push(t);
        }
        graph
    }

    /// Parses `subject<TAB>relation<TAB>object` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, ToolsError> {
        let mut triples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            match fields.as_slice() {
                [s, r, o] if !s.is_empty() && !r.is_empty() && !o.is_empty() => triples.push(Triple::new(s, r, o)),
                _ => {
                    return Err(ToolsError::Graph {
                        line: i + 1,
                        message: "expected subject<TAB>relation<TAB>object".into(),
                    })
                }
            }
        }
        Ok(Self::from_triples(triples))
    }

    pub fn load(path: &Path) -> Result<Self, ToolsError> {
        let text = std::fs::read_to_string(path).map_err(|e| ToolsError::Io(path.to_path_buf(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    /// Edges touching `entity` (as subject or object), optionally restricted
    /// to one relation. Matching ignores case and surrounding whitespace.
    pub fn search<'a>(&'a self, entity: &str, relation: Option<&str>) -> Vec<&'a Triple> {
        let entity = entity.trim();
        let relation = relation.map(str::trim).filter(|r| !r.is_empty());
        self.edges
            .iter()
            .filter(|t| t.subject.eq_ignore_ascii_case(entity) || t.object.eq_ignore_ascii_case(entity))
            .filter(|t| relation.is_none_or(|r| t.relation.eq_ignore_ascii_case(r)))
            .collect()
    }
}

/// One matching edge per line, or `no results`.
pub fn kg_search(graph: &KnowledgeGraph, entity: &str, relation: Option<&str>) -> String {
    let hits = graph.search(entity, relation);
    if hits.is_empty() {
        "no results".to_string()
    } else {
        hits.iter().map(|t| t.render()).collect::<Vec<_>>().join("\n")
    }
}
