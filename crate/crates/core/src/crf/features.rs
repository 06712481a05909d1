use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Which feature templates are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    pub identity: bool,
    pub lowercase: bool,
    pub length_bucket: bool,
    pub trigrams: bool,
    pub digit: bool,
    pub special: bool,
    pub shape: bool,
    pub in_vocabulary: bool,
    pub in_names: bool,
    pub neighbors: bool,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            identity: true,
            lowercase: true,
            length_bucket: true,
            trigrams: true,
            digit: true,
            special: true,
            shape: true,
            in_vocabulary: true,
            in_names: true,
            neighbors: true,
        }
    }
}

/// Feature templates plus the lexical resources some of them consult.
///
/// The vocabulary is filled from the training tokens when a model is
/// trained. Pre-annotated columns (part-of-speech and similar) are read from
/// the input file; only the first `columns` of them are used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub templates: Templates,
    #[serde(default)]
    pub vocabulary: BTreeSet<String>,
    #[serde(default)]
    pub names: BTreeSet<String>,
    #[serde(default)]
    pub columns: usize,
}

/// Length buckets {1, 2, 3, 4-6, 7+}.
pub fn length_bucket(token: &str) -> &'static str {
    match token.chars().count() {
        0 | 1 => "1",
        2 => "2",
        3 => "3",
        4..=6 => "4-6",
        _ => "7+",
    }
}

/// Per-character shape: `X` upper, `x` lower, `d` digit, anything else kept.
pub fn shape(token: &str) -> String {
    token
        .chars()
        .map(|c| {
            if c.is_uppercase() {
                'X'
            } else if c.is_lowercase() {
                'x'
            } else if c.is_numeric() {
                'd'
            } else {
                c
            }
        })
        .collect()
}

pub fn trigrams(token: &str) -> Vec<String> {
    let chars: Vec<char> = token.to_lowercase().chars().collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn has_digit(token: &str) -> bool {
    token.chars().any(|c| c.is_numeric())
}

pub fn has_special(token: &str) -> bool {
    token.chars().any(|c| !c.is_alphanumeric())
}

impl FeatureSet {
    /// Feature strings for the token at `pos`, sorted and deduplicated.
    pub fn extract(&self, tokens: &[String], pos: usize, columns: Option<&[String]>) -> Vec<String> {
        let t = &self.templates;
        let tok = tokens[pos].as_str();
        let lower = tok.to_lowercase();
        let mut f = vec!["bias".to_string()];
        if t.identity {
            f.push(format!("w={tok}"));
        }
        if t.lowercase {
            f.push(format!("lw={lower}"));
        }
        if t.length_bucket {
            f.push(format!("len={}", length_bucket(tok)));
        }
        if t.trigrams {
            f.extend(trigrams(tok).into_iter().map(|g| format!("tri={g}")));
        }
        if t.digit {
            f.push(format!("digit={}", has_digit(tok) as u8));
        }
        if t.special {
            f.push(format!("special={}", has_special(tok) as u8));
        }
        if t.shape {
            f.push(format!("shape={}", shape(tok)));
        }
        if t.in_vocabulary {
            f.push(format!("invocab={}", self.vocabulary.contains(&lower) as u8));
        }
        if t.in_names && !self.names.is_empty() {
            f.push(format!("inname={}", self.names.contains(&lower) as u8));
        }
        if t.neighbors {
            let prev = if pos == 0 { "<s>" } else { tokens[pos - 1].as_str() };
            let next = tokens.get(pos + 1).map_or("</s>", String::as_str);
            f.push(format!("prev={prev}"));
            f.push(format!("next={next}"));
        }
        if let Some(cols) = columns {
            for (i, v) in cols.iter().take(self.columns).enumerate() {
                f.push(format!("col{i}={v}"));
            }
        }
        f.sort();
        f.dedup();
        f
    }
}
