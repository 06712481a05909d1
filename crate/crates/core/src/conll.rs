//! Tokenization and BIO conversion for the sequence-labeling route.
//!
//! CoNLL files hold one `token<TAB>tag` line per token with a blank line
//! between sequences. Extra TAB-separated columns between the token and the
//! tag carry optional pre-annotations (part-of-speech tags and the like). A
//! line starting with `# ` before a sequence records its meme id; tokens
//! never contain whitespace, so such a line cannot be a token line.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::MemeRecord;
use crate::{Error, Result, Role};

/// Characters split off the start and end of a whitespace-delimited chunk.
/// Punctuation inside a chunk (`COVID-19`, `don't`) stays attached.
pub fn is_detachable(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{00AB}' | '\u{00BB}'
                | '\u{2013}' | '\u{2014}' | '\u{00BF}' | '\u{00A1}'
        )
}

/// Splits one whitespace-free chunk into tokens.
pub fn tokenize_chunk(chunk: &str) -> Vec<String> {
    let chars: Vec<char> = chunk.chars().collect();
    let mut start = 0;
    let mut end = chars.len();
    let mut out = Vec::new();
    while start < end && is_detachable(chars[start]) {
        out.push(chars[start].to_string());
        start += 1;
    }
    let mut trailing = Vec::new();
    while end > start && is_detachable(chars[end - 1]) {
        trailing.push(chars[end - 1].to_string());
        end -= 1;
    }
    if start < end {
        out.push(chars[start..end].iter().collect());
    }
    out.extend(trailing.into_iter().rev());
    out
}

/// Whitespace split, then leading and trailing punctuation detached as
/// separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().flat_map(tokenize_chunk).collect()
}

/// A BIO tag over the four roles. `OTHER` is a real entity class, distinct
/// from `O`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(Role),
    I(Role),
}

impl Tag {
    /// The nine tags in canonical label order.
    pub fn all() -> Vec<Tag> {
        let mut v = vec![Tag::O];
        for r in Role::ALL {
            v.push(Tag::B(r));
            v.push(Tag::I(r));
        }
        v
    }

    pub fn role(self) -> Option<Role> {
        match self {
            Tag::O => None,
            Tag::B(r) | Tag::I(r) => Some(r),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(r) => write!(f, "B-{}", r.tag_name()),
            Tag::I(r) => write!(f, "I-{}", r.tag_name()),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let bad = || Error::Invalid(format!("unknown tag {s:?}"));
        let (prefix, name) = s.split_once('-').ok_or_else(bad)?;
        let role = name.parse::<Role>().map_err(|_| bad())?;
        match prefix {
            "B" => Ok(Tag::B(role)),
            "I" => Ok(Tag::I(role)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A token sequence with one BIO tag per token.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaggedSequence {
    pub meme_id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
    /// Optional per-token pre-annotation columns; empty, or one row per token.
    pub columns: Vec<Vec<String>>,
}

impl TaggedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks equal lengths and that every `I-X` continues an `X` span.
    pub fn validate(&self) -> Result<()> {
        if self.tags.len() != self.tokens.len() {
            return Err(Error::MalformedBio {
                position: self.tags.len().min(self.tokens.len()),
                message: format!("{} tokens but {} tags", self.tokens.len(), self.tags.len()),
            });
        }
        if !self.columns.is_empty() && self.columns.len() != self.tokens.len() {
            return Err(Error::MalformedBio {
                position: self.columns.len().min(self.tokens.len()),
                message: "annotation column count differs from token count".into(),
            });
        }
        check_bio(&self.tags)
    }
}

fn check_bio(tags: &[Tag]) -> Result<()> {
    let mut prev = Tag::O;
    for (position, &tag) in tags.iter().enumerate() {
        if let Tag::I(role) = tag {
            if prev.role() != Some(role) {
                return Err(Error::MalformedBio {
                    position,
                    message: format!("{tag} follows {prev}"),
                });
            }
        }
        prev = tag;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BioMode {
    /// The full OCR text, entity spans tagged, implicit entities appended.
    AllTokens,
    /// Only the concatenated entity spans.
    EntitiesOnly,
}

impl FromStr for BioMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_tokens" | "all-tokens" => Ok(BioMode::AllTokens),
            "entities_only" | "entities-only" => Ok(BioMode::EntitiesOnly),
            _ => Err(Error::Usage(format!("unknown mode {s:?}"))),
        }
    }
}

fn lower(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

/// First start position where `needle` occurs in `hay` without overlapping a
/// claimed token.
fn first_free_match(hay: &[String], claimed: &[bool], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len()).find(|&start| {
        (0..needle.len()).all(|k| !claimed[start + k] && hay[start + k] == needle[k])
    })
}

fn push_span(tokens: &mut Vec<String>, tags: &mut Vec<Tag>, span: &[String], role: Role) {
    for (k, tok) in span.iter().enumerate() {
        tokens.push(tok.clone());
        tags.push(if k == 0 { Tag::B(role) } else { Tag::I(role) });
    }
}

/// Converts a meme to a BIO-tagged sequence.
///
/// In [`BioMode::AllTokens`], entities are matched against the text
/// case-insensitively, longest entity first; among equal-length entities the
/// earliest match claims its tokens first. Only the first free occurrence of
/// an entity is tagged and a claimed token is never retagged. Entities with no
/// free occurrence are appended after the text in annotation order.
pub fn to_bio(record: &MemeRecord, mode: BioMode) -> TaggedSequence {
    let entities: Vec<(Vec<String>, Role)> = record
        .annotations
        .iter()
        .map(|a| (tokenize(&a.entity), a.role))
        .filter(|(toks, _)| !toks.is_empty())
        .collect();

    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    match mode {
        BioMode::EntitiesOnly => {
            for (span, role) in &entities {
                push_span(&mut tokens, &mut tags, span, *role);
            }
        }
        BioMode::AllTokens => {
            tokens = tokenize(&record.ocr_text);
            tags = vec![Tag::O; tokens.len()];
            let hay = lower(&tokens);
            let mut claimed = vec![false; tokens.len()];
            let mut matched = vec![false; entities.len()];

            let mut lengths: Vec<usize> = entities.iter().map(|(t, _)| t.len()).collect();
            lengths.sort_unstable_by(|a, b| b.cmp(a));
            lengths.dedup();
            for len in lengths {
                let mut pending: Vec<usize> =
                    (0..entities.len()).filter(|&i| entities[i].0.len() == len).collect();
                loop {
                    let best = pending
                        .iter()
                        .enumerate()
                        .filter_map(|(slot, &i)| {
                            first_free_match(&hay, &claimed, &lower(&entities[i].0))
                                .map(|pos| (pos, slot))
                        })
                        .min();
                    let Some((pos, slot)) = best else { break };
                    let i = pending.remove(slot);
                    let role = entities[i].1;
                    for k in 0..len {
                        claimed[pos + k] = true;
                        tags[pos + k] = if k == 0 { Tag::B(role) } else { Tag::I(role) };
                    }
                    matched[i] = true;
                }
            }
            for (i, (span, role)) in entities.iter().enumerate() {
                if !matched[i] {
                    push_span(&mut tokens, &mut tags, span, *role);
                }
            }
        }
    }
    TaggedSequence {
        meme_id: record.id.clone(),
        tokens,
        tags,
        columns: Vec::new(),
    }
}

/// Maximal B/I spans of a sequence, in order.
pub fn from_bio(seq: &TaggedSequence) -> Result<Vec<(Vec<String>, Role)>> {
    seq.validate()?;
    let mut spans: Vec<(Vec<String>, Role)> = Vec::new();
    for (tok, tag) in seq.tokens.iter().zip(&seq.tags) {
        match tag {
            Tag::O => {}
            Tag::B(r) => spans.push((vec![tok.clone()], *r)),
            // validate() guarantees a span is open
            Tag::I(_) => spans.last_mut().expect("open span").0.push(tok.clone()),
        }
    }
    Ok(spans)
}

/// Writes sequences in CoNLL format.
pub fn write_conll<W: Write>(seqs: &[TaggedSequence], mut out: W) -> std::io::Result<()> {
    for seq in seqs {
        if !seq.meme_id.is_empty() {
            writeln!(out, "# {}", seq.meme_id)?;
        }
        for (i, (tok, tag)) in seq.tokens.iter().zip(&seq.tags).enumerate() {
            out.write_all(tok.as_bytes())?;
            if let Some(cols) = seq.columns.get(i) {
                for c in cols {
                    write!(out, "\t{c}")?;
                }
            }
            writeln!(out, "\t{tag}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parses CoNLL text. Every token line needs at least a token and a tag.
pub fn parse_conll<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<TaggedSequence>> {
    let mut seqs = Vec::new();
    let mut cur = TaggedSequence::default();
    let mut has_header = false;
    let mut any_columns = false;
    let finish = |cur: &mut TaggedSequence,
                  has_header: &mut bool,
                  any_columns: &mut bool,
                  seqs: &mut Vec<TaggedSequence>| {
        if !cur.tokens.is_empty() || *has_header {
            if !*any_columns {
                cur.columns.clear();
            }
            seqs.push(std::mem::take(cur));
        }
        *has_header = false;
        *any_columns = false;
    };
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        if line.is_empty() {
            finish(&mut cur, &mut has_header, &mut any_columns, &mut seqs);
            continue;
        }
        if let Some(id) = line.strip_prefix("# ") {
            if !cur.tokens.is_empty() {
                finish(&mut cur, &mut has_header, &mut any_columns, &mut seqs);
            }
            cur.meme_id = id.to_string();
            has_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields[0].is_empty() {
            return Err(parse_err(format!("expected token<TAB>tag, got {line:?}")));
        }
        let tag: Tag = fields[fields.len() - 1]
            .parse()
            .map_err(|e: Error| parse_err(e.to_string()))?;
        let cols: Vec<String> = fields[1..fields.len() - 1].iter().map(|s| s.to_string()).collect();
        any_columns |= !cols.is_empty();
        cur.tokens.push(fields[0].to_string());
        cur.tags.push(tag);
        cur.columns.push(cols);
    }
    finish(&mut cur, &mut has_header, &mut any_columns, &mut seqs);
    for (i, seq) in seqs.iter().enumerate() {
        check_bio(&seq.tags).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            message: format!("sequence {} ({:?}): {e}", i + 1, seq.meme_id),
        })?;
    }
    Ok(seqs)
}

pub fn load_conll(path: impl AsRef<Path>) -> Result<Vec<TaggedSequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_conll(BufReader::new(file), path)
}

pub fn save_conll(seqs: &[TaggedSequence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_conll(seqs, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
