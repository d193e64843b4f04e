//! Live-mode backends for the weather, web-search and arXiv tools.

use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;

use super::{cap_output, LOOKUP_OUTPUT_CAP};
use crate::registry::ToolError;

pub const ENV_GOOGLE_API_KEY: &str = "GOOGLE_API_KEY";
pub const ENV_GOOGLE_CSE_ID: &str = "GOOGLE_CSE_ID";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupKind {
    Weather,
    Search,
    Arxiv,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct LiveEndpoints {
    pub weather: String,
    pub google: String,
    pub arxiv: String,
    pub timeout_s: f64,
}

impl Default for LiveEndpoints {
    fn default() -> Self {
        Self {
            weather: "https://wttr.in".into(),
            google: "https://www.googleapis.com/customsearch/v1".into(),
            arxiv: "http://export.arxiv.org/api/query".into(),
            timeout_s: 20.0,
        }
    }
}

pub struct Lookup {
    endpoints: LiveEndpoints,
    client: reqwest::Client,
}

impl Lookup {
    pub fn new(endpoints: LiveEndpoints) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(endpoints.timeout_s.max(0.1)))
            .user_agent("toolshim")
            .build()
            .expect("http client");
        Self { endpoints, client }
    }

    pub async fn fetch(&self, kind: LookupKind, query: &str) -> Result<String, ToolError> {
        let text = match kind {
            LookupKind::Weather => self.weather(query).await?,
            LookupKind::Search => self.google(query).await?,
            LookupKind::Arxiv => self.arxiv(query).await?,
        };
        Ok(cap_output(&text, LOOKUP_OUTPUT_CAP))
    }

    async fn get_text(&self, request: reqwest::RequestBuilder) -> Result<String, ToolError> {
        let response = request
            .send()
            .await
            .map_err(|e| ToolError::Failed(format!("request failed: {e}")))?;
        let status = response.status();
        let body = response
            .text()
            .await
            .map_err(|e| ToolError::Failed(format!("reading response failed: {e}")))?;
        if !status.is_success() {
            return Err(ToolError::Failed(format!(
                "HTTP {}: {}",
                status.as_u16(),
                cap_output(body.trim(), 200)
            )));
        }
        Ok(body)
    }

    async fn weather(&self, city: &str) -> Result<String, ToolError> {
        let mut url = reqwest::Url::parse(&self.endpoints.weather)
            .map_err(|e| ToolError::Failed(format!("weather endpoint: {e}")))?;
        url.path_segments_mut()
            .map_err(|_| ToolError::Failed("weather endpoint cannot take a path".into()))?
            .pop_if_empty()
            .push(city.trim());
        let body = self.get_text(self.client.get(url).query(&[("format", "3")])).await?;
        Ok(body.trim().to_string())
    }

    async fn google(&self, query: &str) -> Result<String, ToolError> {
        let key = std::env::var(ENV_GOOGLE_API_KEY)
            .map_err(|_| ToolError::Failed(format!("{ENV_GOOGLE_API_KEY} is not set")))?;
        let cx = std::env::var(ENV_GOOGLE_CSE_ID)
            .map_err(|_| ToolError::Failed(format!("{ENV_GOOGLE_CSE_ID} is not set")))?;
        let body = self
            .get_text(self.client.get(&self.endpoints.google).query(&[
                ("key", key.as_str()),
                ("cx", cx.as_str()),
                ("q", query),
                ("num", "5"),
            ]))
            .await?;
        let parsed: Value =
            serde_json::from_str(&body).map_err(|e| ToolError::Failed(format!("search response is not JSON: {e}")))?;
        Ok(google_digest(&parsed))
    }

    async fn arxiv(&self, query: &str) -> Result<String, ToolError> {
        let search = format!("all:{}", query.trim());
        let body = self
            .get_text(self.client.get(&self.endpoints.arxiv).query(&[
                ("search_query", search.as_str()),
                ("start", "0"),
                ("max_results", "5"),
            ]))
            .await?;
        Ok(arxiv_digest(&body))
    }
}

fn google_digest(body: &Value) -> String {
    let items = body.get("items").and_then(Value::as_array);
    match items {
        Some(items) if !items.is_empty() => items
            .iter()
            .map(|item| {
                let field = |k: &str| item.get(k).and_then(Value::as_str).unwrap_or("").trim();
                format!("{}\n{}\n{}", field("title"), field("link"), field("snippet"))
            })
            .collect::<Vec<_>>()
            .join("\n\n"),
        _ => "no results".into(),
    }
}

static ENTRY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<entry>(.*?)</entry>").unwrap());
static TITLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<title>(.*?)</title>").unwrap());
static ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<id>(.*?)</id>").unwrap());

fn arxiv_digest(atom: &str) -> String {
    let lines: Vec<String> = ENTRY
        .captures_iter(atom)
        .map(|entry| {
            let entry = &entry[1];
            let grab = |re: &Regex| {
                re.captures(entry)
                    .map(|c| c[1].split_whitespace().collect::<Vec<_>>().join(" "))
                    .unwrap_or_default()
            };
            format!("{} ({})", grab(&TITLE), grab(&ID))
        })
        .collect();
    if lines.is_empty() {
        "no results".into()
    } else {
        lines.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn google_items_are_summarized() {
        let body = json!({"items": [{"title": "T", "link": "https://x", "snippet": "S"}]});
        assert_eq!(google_digest(&body), "T\nhttps://x\nS");
        assert_eq!(google_digest(&json!({})), "no results");
    }

    #[test]
    fn arxiv_entries_are_summarized() {
        let atom = "<feed><title>feed</title><entry><id>http://arxiv.org/abs/1</id>\n<title>Tool\n  Calling</title></entry></feed>";
        assert_eq!(arxiv_digest(atom), "Tool Calling (http://arxiv.org/abs/1)");
        assert_eq!(arxiv_digest("<feed></feed>"), "no results");
    }
}
