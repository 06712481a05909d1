use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::conll::tokenize_chunk;
use crate::{Error, Result};

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.tsv");
const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

/// Lowercased token to synonym list, plus a set of tokens never replaced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
    stopwords: BTreeSet<String>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// The small bundled lexicon with the bundled English stopword list.
    pub fn bundled() -> Self {
        let mut lex = Self::parse(DEFAULT_LEXICON.as_bytes(), Path::new("<bundled lexicon>"))
            .expect("bundled lexicon is valid");
        lex.stopwords = bundled_stopwords();
        lex
    }

    /// Adds an entry. Synonyms equal to the token are dropped; the remaining
    /// list must be nonempty and every synonym a single token.
    pub fn insert(&mut self, token: &str, synonyms: Vec<String>) -> Result<()> {
        let key = token.trim().to_lowercase();
        if key.is_empty() {
            return Err(Error::Invalid("lexicon token is empty".into()));
        }
        let mut list: Vec<String> = Vec::new();
        for syn in synonyms {
            let syn = syn.trim().to_string();
            if syn.is_empty() || syn.to_lowercase() == key || list.contains(&syn) {
                continue;
            }
            if syn.chars().any(char::is_whitespace) || tokenize_chunk(&syn).len() != 1 {
                return Err(Error::Invalid(format!(
                    "synonym {syn:?} for {key:?} is not a single token"
                )));
            }
            list.push(syn);
        }
        if list.is_empty() {
            return Err(Error::Invalid(format!("lexicon entry {key:?} has no synonyms other than itself")));
        }
        self.entries.insert(key, list);
        Ok(())
    }

    /// Reads `token<TAB>syn1,syn2,...` lines. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn parse<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            let t = line.trim_end_matches('\r');
            if t.trim().is_empty() || t.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let (token, syns) = t
                .split_once('\t')
                .ok_or_else(|| parse_err("expected token<TAB>synonyms".into()))?;
            lex.insert(token, syns.split(',').map(str::to_string).collect())
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), path)
    }

    pub fn with_stopwords(mut self, stopwords: BTreeSet<String>) -> Self {
        self.stopwords = stopwords;
        self
    }

    pub fn synonyms(&self, token: &str) -> Option<&[String]> {
        self.entries.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(&token.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn bundled_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_lexicon_loads() {
        let lex = SynonymLexicon::bundled();
        assert!(lex.len() > 50);
        assert!(lex.synonyms("BAD").unwrap().contains(&"evil".to_string()));
        assert!(lex.is_stopword("The"));
    }

    #[test]
    fn self_only_entries_rejected() {
        let mut lex = SynonymLexicon::new();
        assert!(lex.insert("bad", vec!["bad".into()]).is_err());
        assert!(lex.insert("bad", vec!["very bad".into()]).is_err());
        lex.insert("bad", vec!["Bad".into(), "evil".into()]).unwrap();
        assert_eq!(lex.synonyms("bad").unwrap(), ["evil".to_string()]);
    }

    #[test]
    fn parse_reports_line() {
        let err = SynonymLexicon::parse("# c\nok\tfine\nbroken\n".as_bytes(), Path::new("x.tsv")).unwrap_err();
        assert!(err.to_string().starts_with("x.tsv:3:"), "{err}");
    }
}
