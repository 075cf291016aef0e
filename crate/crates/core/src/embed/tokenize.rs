use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Unicode lowercase, then split on anything that is not alphanumeric.
    #[default]
    WhitespaceLower,
    /// One token per non-whitespace character (for CJK text).
    CharLevel,
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::WhitespaceLower => text
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .map(str::to_lowercase)
                .collect(),
            Tokenizer::CharLevel => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| c.to_lowercase().collect())
                .collect(),
        }
    }
}

impl std::str::FromStr for Tokenizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace_lower" => Ok(Tokenizer::WhitespaceLower),
            "char_level" => Ok(Tokenizer::CharLevel),
            other => Err(format!("unknown tokenizer {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_lower_strips_punctuation() {
        assert_eq!(
            Tokenizer::WhitespaceLower.tokenize("Hello, World!  Bye-bye ÉTÉ"),
            ["hello", "world", "bye", "bye", "été"]
        );
    }

    #[test]
    fn char_level() {
        assert_eq!(Tokenizer::CharLevel.tokenize("你好 A"), ["你", "好", "a"]);
    }
}
