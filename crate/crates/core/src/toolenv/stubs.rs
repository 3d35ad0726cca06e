use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One canned tool output, keyed by the exact input text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubEntry {
    /// `python` or `scholar`
    pub tool: String,
    pub input: String,
    pub output: String,
}

pub fn input_hash(input: &str) -> String {
    hex::encode(Sha256::digest(input.as_bytes()))
}

/// Stand-ins for the python and scholar tools: outputs keyed by
/// `(tool, sha256(input))`.
#[derive(Debug, Clone, Default)]
pub struct StubTable {
    entries: BTreeMap<(String, String), String>,
}

impl StubTable {
    pub fn new(entries: impl IntoIterator<Item = StubEntry>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| ((e.tool, input_hash(&e.input)), e.output))
                .collect(),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<StubEntry>)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(entries))
    }

    pub fn lookup(&self, tool: &str, input: &str) -> Option<&str> {
        self.entries.get(&(tool.to_string(), input_hash(input))).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_keyed_by_tool_and_input() {
        let t = StubTable::new([
            StubEntry { tool: "python".into(), input: "print(1+1)".into(), output: "2".into() },
            StubEntry { tool: "scholar".into(), input: "print(1+1)".into(), output: "[]".into() },
        ]);
        assert_eq!(t.lookup("python", "print(1+1)"), Some("2"));
        assert_eq!(t.lookup("scholar", "print(1+1)"), Some("[]"));
        assert_eq!(t.lookup("python", "print(2)"), None);
    }
}
