use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SENTENCE_SLOT: &str = "{sentence}";

pub const DEFAULT_TEMPLATE: &str =
    "请改正下面句子中的错别字。只输出改正后的句子，不要解释，字数必须与原句相同。\n{sentence}";

/// Single-turn instruction with a `{sentence}` slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptTemplate(String);

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(DEFAULT_TEMPLATE.to_string())
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Config("prompt template is empty".into()));
        }
        if !text.contains(SENTENCE_SLOT) {
            return Err(Error::Config(format!("prompt template lacks the {SENTENCE_SLOT} slot")));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn build_prompt(&self, sentence: &str) -> Result<String> {
        if sentence.is_empty() {
            return Err(Error::Input("cannot build a prompt for an empty sentence".into()));
        }
        Ok(self.0.replace(SENTENCE_SLOT, sentence))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_appears_verbatim() {
        let t = PromptTemplate::new("fix this:\n{sentence}").unwrap();
        assert_eq!(t.build_prompt("我受中国").unwrap(), "fix this:\n我受中国");
        assert!(PromptTemplate::default()
            .build_prompt("我受中国")
            .unwrap()
            .contains("我受中国"));
    }

    #[test]
    fn empty_or_slotless_templates_are_rejected() {
        assert!(matches!(PromptTemplate::new(""), Err(Error::Config(_))));
        assert!(matches!(PromptTemplate::new("fix it"), Err(Error::Config(_))));
        assert!(PromptTemplate::default().build_prompt("").is_err());
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let t = PromptTemplate::new("「改」\n{sentence}\t✓").unwrap();
        let json = serde_json::to_string(&t).unwrap();
        let back: PromptTemplate = serde_json::from_str(&json).unwrap();
        assert_eq!(back.as_str().as_bytes(), t.as_str().as_bytes());
    }
}
