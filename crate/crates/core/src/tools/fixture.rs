use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::ToolsError;
use crate::registry::ToolError;

/// Lowercased, whitespace-collapsed query text.
pub fn canonical_key(query: &str) -> String {
    query.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn file_stem_for(key: &str) -> String {
    key.replace(['/', '\\'], "_")
}

/// Fixture answers loaded from `<root>/<tool>/<key>.txt`.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    root: PathBuf,
    entries: HashMap<(String, String), String>,
}

impl FixtureStore {
    pub fn empty(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            entries: HashMap::new(),
        }
    }

    pub fn load(root: &Path) -> Result<Self, ToolsError> {
        let io = |p: &Path, e: std::io::Error| ToolsError::Io(p.to_path_buf(), e.to_string());
        let mut entries = HashMap::new();
        for tool_dir in std::fs::read_dir(root).map_err(|e| io(root, e))? {
            let tool_dir = tool_dir.map_err(|e| io(root, e))?.path();
            if !tool_dir.is_dir() {
                continue;
            }
            let Some(tool) = tool_dir.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            for file in std::fs::read_dir(&tool_dir).map_err(|e| io(&tool_dir, e))? {
                let path = file.map_err(|e| io(&tool_dir, e))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                    continue;
                }
                let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                    continue;
                };
                let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
                let text = text.strip_suffix('\n').unwrap_or(&text);
                let text = text.strip_suffix('\r').unwrap_or(text);
                entries.insert((tool.to_string(), canonical_key(stem)), text.to_string());
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn insert(&mut self, tool: &str, query: &str, text: impl Into<String>) {
        self.entries
            .insert((tool.to_string(), canonical_key(query)), text.into());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, tool: &str, query: &str) -> Result<&str, ToolError> {
        let key = canonical_key(query);
        self.entries
            .get(&(tool.to_string(), key.clone()))
            .map(String::as_str)
            .ok_or_else(|| {
                ToolError::Failed(format!(
                    "no fixture for {tool} key {key:?} (expected {})",
                    self.root
                        .join(tool)
                        .join(format!("{}.txt", file_stem_for(&key)))
                        .display()
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_normalization() {
        assert_eq!(canonical_key("  New   York\tCity "), "new york city");
        assert_eq!(canonical_key("PARIS"), "paris");
    }

    #[test]
    fn loads_from_disk_and_tolerates_paraphrase() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("get_weather")).unwrap();
        std::fs::write(dir.path().join("get_weather/paris.txt"), "12°C, clear\n").unwrap();
        std::fs::write(dir.path().join("get_weather/notes.md"), "ignored").unwrap();
        let store = FixtureStore::load(dir.path()).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.lookup("get_weather", " Paris ").unwrap(), "12°C, clear");
        assert_eq!(store.lookup("get_weather", "PARIS").unwrap(), "12°C, clear");
    }

    #[test]
    fn missing_key_names_it() {
        let store = FixtureStore::empty(Path::new("fx"));
        let err = store.lookup("google_search", "Rust 2024").unwrap_err();
        assert!(err.to_string().contains("\"rust 2024\""));
    }
}
