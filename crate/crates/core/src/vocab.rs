//! Noun and adjective vocabularies for word retrieval.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Bundled object-class noun list (169 tokens).
pub const BUNDLED_NOUNS: &str = include_str!("../data/nouns.txt");
/// Bundled adjective list (1463 tokens); also the fallback part-of-speech allowlist.
pub const BUNDLED_ADJECTIVES: &str = include_str!("../data/adjectives.txt");

/// Sorted, deduplicated, lowercase token lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    nouns: Vec<String>,
    adjectives: Vec<String>,
    source: String,
}

impl Vocabulary {
    pub fn new(nouns: Vec<String>, adjectives: Vec<String>, source: impl Into<String>) -> Result<Self> {
        let nouns = canonical(nouns, "nouns")?;
        let adjectives = canonical(adjectives, "adjectives")?;
        Ok(Self {
            nouns,
            adjectives,
            source: source.into(),
        })
    }

    pub fn bundled() -> Self {
        let nouns = parse_token_list(BUNDLED_NOUNS, "bundled nouns").expect("bundled nouns parse");
        let adjectives =
            parse_token_list(BUNDLED_ADJECTIVES, "bundled adjectives").expect("bundled adjectives parse");
        Self::new(nouns, adjectives, "bundled").expect("bundled lists are non-empty")
    }

    pub fn nouns(&self) -> &[String] {
        &self.nouns
    }

    pub fn adjectives(&self) -> &[String] {
        &self.adjectives
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Writes both lists in the plain-text vocabulary format.
    pub fn save(&self, nouns_path: &Path, adjectives_path: &Path) -> Result<()> {
        write_token_list(nouns_path, &self.nouns)?;
        write_token_list(adjectives_path, &self.adjectives)
    }
}

fn canonical(tokens: Vec<String>, what: &str) -> Result<Vec<String>> {
    let mut set = BTreeSet::new();
    for t in tokens {
        let t = normalize_token(&t);
        if t.is_empty() {
            continue;
        }
        if t.chars().any(char::is_whitespace) {
            return Err(Error::InvalidVocabulary(format!(
                "{what} token {t:?} contains whitespace"
            )));
        }
        set.insert(t);
    }
    if set.is_empty() {
        return Err(Error::InvalidVocabulary(format!("{what} list is empty")));
    }
    Ok(set.into_iter().collect())
}

pub fn normalize_token(t: &str) -> String {
    t.trim().to_lowercase()
}

/// Parses one token per line; blank lines and `#` comments are skipped.
pub fn parse_token_list(text: &str, what: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if t.chars().any(char::is_whitespace) {
            return Err(Error::at_line(what, i + 1, format!("token {t:?} contains whitespace")));
        }
        out.push(t.to_lowercase());
    }
    Ok(out)
}

fn read_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_token_list(&text, &path.display().to_string())
}

fn write_token_list(path: &Path, tokens: &[String]) -> Result<()> {
    let mut s = String::new();
    for t in tokens {
        s.push_str(t);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_vocabulary(nouns_path: &Path, adjectives_path: &Path) -> Result<Vocabulary> {
    let nouns = read_list(nouns_path)?;
    let adjectives = read_list(adjectives_path)?;
    Vocabulary::new(
        nouns,
        adjectives,
        format!("{} + {}", nouns_path.display(), adjectives_path.display()),
    )
}

/// Keeps tokens the part-of-speech predicate accepts; output is normalized,
/// deduplicated and sorted.
pub fn build_adjectives<F>(raw_tokens: &[String], is_adjective: F) -> Vec<String>
where
    F: Fn(&str) -> bool,
{
    raw_tokens
        .iter()
        .map(|t| normalize_token(t))
        .filter(|t| !t.is_empty() && !t.chars().any(char::is_whitespace))
        .filter(|t| is_adjective(t))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Membership filter over a fixed token list.
#[derive(Debug, Clone)]
pub struct Allowlist(BTreeSet<String>);

impl Allowlist {
    pub fn from_text(text: &str) -> Result<Self> {
        Ok(Self(parse_token_list(text, "allowlist")?.into_iter().collect()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self(read_list(path)?.into_iter().collect()))
    }

    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_ADJECTIVES).expect("bundled allowlist parses")
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
