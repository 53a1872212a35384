//! Format tagging for the structured-text documents the engine reads
//! (device definitions, rule domains, fleets, requests, scenario configs).

use std::path::Path;

use serde::de::DeserializeOwned;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocFormat {
    Toml,
    Json,
}

impl DocFormat {
    /// Picks the format from a file extension; anything but `.json` is TOML.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => DocFormat::Json,
            _ => DocFormat::Toml,
        }
    }

    /// Guesses from content: a leading `{` means JSON.
    pub fn sniff(bytes: &[u8]) -> Self {
        match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'{') => DocFormat::Json,
            _ => DocFormat::Toml,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            DocFormat::Toml => "toml",
            DocFormat::Json => "json",
        }
    }
}

/// Deserializes a document, returning the parser's message on failure.
pub fn parse<T: DeserializeOwned>(bytes: &[u8], format: DocFormat) -> Result<T, String> {
    match format {
        DocFormat::Json => serde_json::from_slice(bytes).map_err(|e| e.to_string()),
        DocFormat::Toml => {
            let text = std::str::from_utf8(bytes).map_err(|e| format!("not UTF-8: {e}"))?;
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sniff_tells_tables_from_objects() {
        assert_eq!(DocFormat::sniff(b"  {\"a\": 1}"), DocFormat::Json);
        assert_eq!(
            DocFormat::sniff(b"[request]\nid = \"x\"\n"),
            DocFormat::Toml
        );
        assert_eq!(DocFormat::sniff(b"a = 1"), DocFormat::Toml);
    }
}
