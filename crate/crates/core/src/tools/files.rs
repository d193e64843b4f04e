use std::path::Path;

use walkdir::WalkDir;

use crate::registry::ToolError;

const MAX_LINES_PER_FILE: usize = 5;

/// Lists files under `base` (or `base/sub`) whose name matches a glob.
///
/// Patterns containing `/` are matched against the path relative to the
/// search root, others against the file name. With `contains`, only files
/// holding that text (case-insensitively) are kept and the matching lines
/// are shown as `path:line: text`. The search never leaves `base`.
pub fn file_search(base: &Path, sub: Option<&str>, pattern: &str, contains: Option<&str>) -> Result<String, ToolError> {
    let base = base
        .canonicalize()
        .map_err(|e| ToolError::Failed(format!("search root {}: {e}", base.display())))?;
    let root = match sub.map(str::trim).filter(|s| !s.is_empty() && *s != ".") {
        Some(sub) => base
            .join(sub.trim_start_matches('/'))
            .canonicalize()
            .map_err(|e| ToolError::Failed(format!("directory {sub:?}: {e}")))?,
        None => base.clone(),
    };
    if !root.starts_with(&base) {
        return Err(ToolError::InvalidParameters(format!(
            "root {:?} is outside the searchable directory",
            sub.unwrap_or_default()
        )));
    }
    let glob = glob::Pattern::new(pattern.trim())
        .map_err(|e| ToolError::InvalidParameters(format!("bad pattern {pattern:?}: {e}")))?;
    let match_path = pattern.contains('/');
    let needle = contains.map(str::to_lowercase).filter(|n| !n.is_empty());

    let mut lines = Vec::new();
    let walker = WalkDir::new(&root).sort_by_file_name().follow_links(false);
    for entry in walker.into_iter().filter_map(Result::ok) {
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(&root)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .replace('\\', "/");
        let subject = if match_path {
            rel.as_str()
        } else {
            entry.file_name().to_str().unwrap_or_default()
        };
        if !glob.matches(subject) {
            continue;
        }
        match &needle {
            None => lines.push(rel),
            Some(needle) => {
                let Ok(text) = std::fs::read_to_string(entry.path()) else {
                    continue;
                };
                lines.extend(
                    text.lines()
                        .enumerate()
                        .filter(|(_, l)| l.to_lowercase().contains(needle.as_str()))
                        .take(MAX_LINES_PER_FILE)
                        .map(|(i, l)| format!("{rel}:{}: {}", i + 1, l.trim())),
                );
            }
        }
    }
    if lines.is_empty() {
        Ok(match contains {
            Some(c) => format!("no files match {pattern} containing {c:?}"),
            None => format!("no files match {pattern}"),
        })
    } else {
        Ok(lines.join("\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        std::fs::create_dir_all(p.join("docs/guide")).unwrap();
        std::fs::write(p.join("README.md"), "# Title\nbudget is 42\n").unwrap();
        std::fs::write(p.join("docs/guide/setup.md"), "install it\n").unwrap();
        std::fs::write(p.join("docs/notes.txt"), "Budget approved\n").unwrap();
        dir
    }

    // Independent oracle: walk everything, filter by extension.
    fn oracle_md(root: &Path) -> Vec<String> {
        let mut out: Vec<String> = WalkDir::new(root)
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .filter(|e| e.path().extension().is_some_and(|x| x == "md"))
            .map(|e| e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned())
            .collect();
        out.sort();
        out
    }

    #[test]
    fn glob_by_file_name_matches_walk() {
        let dir = tree();
        let out = file_search(dir.path(), None, "*.md", None).unwrap();
        let mut got: Vec<String> = out.lines().map(str::to_string).collect();
        got.sort();
        assert_eq!(got, oracle_md(dir.path()));
        assert!(got.contains(&"README.md".to_string()));
    }

    #[test]
    fn sub_directory_and_contains() {
        let dir = tree();
        let out = file_search(dir.path(), Some("docs"), "*", Some("budget")).unwrap();
        assert_eq!(out, "notes.txt:1: Budget approved");
    }

    #[test]
    fn escape_attempt_is_rejected() {
        let dir = tree();
        let inner = dir.path().join("docs");
        assert!(matches!(
            file_search(&inner, Some("../"), "*", None),
            Err(ToolError::InvalidParameters(_))
        ));
    }

    #[test]
    fn no_match_message() {
        let dir = tree();
        assert_eq!(
            file_search(dir.path(), None, "*.rs", None).unwrap(),
            "no files match *.rs"
        );
    }
}
