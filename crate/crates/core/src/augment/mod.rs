//! Class-balancing text augmentation for classification instances.
//!
//! Each instance of a role receives a configured number of extra copies whose
//! OCR text has some words replaced, either from a synonym lexicon or by an
//! external contextual substitution provider. Tokens belonging to the entity
//! are never changed.

mod lexicon;
mod provider;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conll::{tokenize, tokenize_chunk};
use crate::dataset::{EntityInstance, Provenance};
use crate::{Error, Result, Role};

pub use lexicon::{bundled_stopwords, SynonymLexicon};
pub use provider::{ProviderRequest, SubstitutionProvider};

/// A token with its half-open character range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Tokens as produced by [`tokenize`], with character offsets.
pub fn token_spans(text: &str) -> Vec<TokenSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let chunk: String = chars[start..i].iter().collect();
        let mut pos = start;
        for tok in tokenize_chunk(&chunk) {
            let len = tok.chars().count();
            spans.push(TokenSpan {
                start: pos,
                end: pos + len,
                text: tok,
            });
            pos += len;
        }
    }
    spans
}

fn entity_tokens(entity_name: &str) -> Vec<String> {
    tokenize(entity_name).iter().map(|t| t.to_lowercase()).collect()
}

fn occurrences(spans: &[TokenSpan], entity: &[String]) -> Vec<usize> {
    if entity.is_empty() || entity.len() > spans.len() {
        return Vec::new();
    }
    (0..=spans.len() - entity.len())
        .filter(|&i| {
            entity
                .iter()
                .enumerate()
                .all(|(k, e)| spans[i + k].text.to_lowercase() == *e)
        })
        .collect()
}

/// Positions that must not change: every case-insensitive occurrence of the
/// entity's token sequence, and any single token equal to one of the
/// entity's tokens.
pub fn protected_positions(spans: &[TokenSpan], entity_name: &str) -> Vec<bool> {
    let entity = entity_tokens(entity_name);
    let mut mask: Vec<bool> = spans
        .iter()
        .map(|s| entity.contains(&s.text.to_lowercase()))
        .collect();
    for i in occurrences(spans, &entity) {
        for m in &mut mask[i..i + entity.len()] {
            *m = true;
        }
    }
    mask
}

/// Character range of the first occurrence of the entity in `text`.
pub fn protected_span(text: &str, entity_name: &str) -> Option<[usize; 2]> {
    let spans = token_spans(text);
    let entity = entity_tokens(entity_name);
    occurrences(&spans, &entity)
        .first()
        .map(|&i| [spans[i].start, spans[i + entity.len() - 1].end])
}

fn match_case(original: &str, synonym: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return synonym.to_uppercase();
    }
    let mut chars = synonym.chars();
    match (original.chars().next(), chars.next()) {
        (Some(o), Some(first)) if o.is_uppercase() => first.to_uppercase().chain(chars).collect(),
        _ => synonym.to_string(),
    }
}

fn rebuild(text: &str, spans: &[TokenSpan], mut replace: impl FnMut(usize, &TokenSpan) -> Option<String>) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (i, s) in spans.iter().enumerate() {
        out.extend(&chars[cursor..s.start]);
        match replace(i, s) {
            Some(r) => out.push_str(&r),
            None => out.push_str(&s.text),
        }
        cursor = s.end;
    }
    out.extend(&chars[cursor..]);
    out
}

/// Replaces each eligible token with a uniformly chosen synonym with
/// probability `p`. A token is eligible when it has a lexicon entry, is not
/// a stopword and is not protected. Whitespace is preserved and replacements
/// follow the original token's capitalization.
pub fn substitute<R: Rng + ?Sized>(
    text: &str,
    entity_name: &str,
    lexicon: &SynonymLexicon,
    p: f64,
    rng: &mut R,
) -> String {
    let spans = token_spans(text);
    let protected = protected_positions(&spans, entity_name);
    rebuild(text, &spans, |i, s| {
        if protected[i] || lexicon.is_stopword(&s.text) {
            return None;
        }
        let syns = lexicon.synonyms(&s.text)?;
        if rng.gen::<f64>() >= p {
            return None;
        }
        let pick = &syns[rng.gen_range(0..syns.len())];
        Some(match_case(&s.text, pick))
    })
}

/// Restores protected tokens in a provider's output. When the output has a
/// different token count the positions cannot be aligned, and the original
/// text is kept.
pub fn protect_output(original: &str, entity_name: &str, candidate: &str) -> String {
    let spans = token_spans(original);
    let protected = protected_positions(&spans, entity_name);
    if !protected.contains(&true) {
        return candidate.to_string();
    }
    let out_spans = token_spans(candidate);
    if out_spans.len() != spans.len() {
        log::warn!(
            "provider output changed the token count ({} -> {}); keeping the original text",
            spans.len(),
            out_spans.len()
        );
        return original.to_string();
    }
    rebuild(candidate, &out_spans, |i, _| protected[i].then(|| spans[i].text.clone()))
}

/// Word substitution delegated to an external provider, with the entity
/// restored afterwards.
pub fn contextual_substitute(
    text: &str,
    entity_name: &str,
    provider: &mut SubstitutionProvider,
    p: f64,
    seed: u64,
) -> Result<String> {
    let req = ProviderRequest {
        text: text.to_string(),
        protected_span: protected_span(text, entity_name),
        p,
        seed,
    };
    let out = provider.request(&req)?;
    Ok(protect_output(text, entity_name, &out))
}

/// Extra copies per role and the substitution settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub hero: usize,
    pub villain: usize,
    pub victim: usize,
    pub other: usize,
    /// Per-token substitution probability.
    pub p: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            hero: 6,
            villain: 2,
            victim: 3,
            other: 0,
            p: 0.3,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn copies(&self, role: Role) -> usize {
        match role {
            Role::Hero => self.hero,
            Role::Villain => self.villain,
            Role::Victim => self.victim,
            Role::Other => self.other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Invalid(format!("substitution probability must be in (0, 1], got {}", self.p)));
        }
        if Role::ALL.iter().any(|&r| self.copies(r) >= 1 << 20) {
            return Err(Error::Invalid("copy counts must be below 2^20".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    None,
    Lexicon,
    Contextual,
    /// Lexicon for even copy indices, contextual for odd ones.
    Mix,
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMode::None => "none",
            AugmentMode::Lexicon => "lexicon",
            AugmentMode::Contextual => "contextual",
            AugmentMode::Mix => "mix",
        })
    }
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentMode::None),
            "lexicon" => Ok(AugmentMode::Lexicon),
            "contextual" => Ok(AugmentMode::Contextual),
            "mix" => Ok(AugmentMode::Mix),
            _ => Err(Error::Usage(format!(
                "unknown augmentation mode {s:?} (expected none, lexicon, contextual or mix)"
            ))),
        }
    }
}

/// Independent random stream for copy `copy` of instance `index`.
pub fn copy_rng(seed: u64, index: usize, copy: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index as u64) << 20) | copy as u64);
    rng
}

fn make_copy(inst: &EntityInstance, copy: usize, text: String) -> EntityInstance {
    EntityInstance {
        meme_id: format!("{}~aug{}~{}", inst.meme_id, copy, inst.entity_name),
        entity_name: inst.entity_name.clone(),
        ocr_text: text,
        image_ref: inst.image_ref.clone(),
        role: inst.role,
        augmented: Some(Provenance {
            source_meme_id: inst.image_key().to_string(),
            copy,
        }),
    }
}

fn jobs(instances: &[EntityInstance], policy: &AugmentPolicy) -> Vec<(usize, usize)> {
    instances
        .iter()
        .enumerate()
        .flat_map(|(i, inst)| (0..policy.copies(inst.role)).map(move |k| (i, k)))
        .collect()
}

/// Originals followed by lexicon-substituted copies, in instance order.
pub fn balance(
    instances: &[EntityInstance],
    lexicon: &SynonymLexicon,
    policy: &AugmentPolicy,
) -> Result<Vec<EntityInstance>> {
    policy.validate()?;
    let copies: Vec<EntityInstance> = jobs(instances, policy)
        .into_par_iter()
        .map(|(i, k)| {
            let inst = &instances[i];
            let mut rng = copy_rng(policy.seed, i, k);
            make_copy(inst, k, substitute(&inst.ocr_text, &inst.entity_name, lexicon, policy.p, &mut rng))
        })
        .collect();
    let mut out = instances.to_vec();
    out.extend(copies);
    Ok(out)
}

/// Augments according to `mode`. Contextual and mixed modes need a provider
/// and run sequentially over it.
pub fn augment_instances(
    instances: &[EntityInstance],
    policy: &AugmentPolicy,
    mode: AugmentMode,
    lexicon: &SynonymLexicon,
    provider: Option<&mut SubstitutionProvider>,
) -> Result<Vec<EntityInstance>> {
    match mode {
        AugmentMode::None => Ok(instances.to_vec()),
        AugmentMode::Lexicon => balance(instances, lexicon, policy),
        AugmentMode::Contextual | AugmentMode::Mix => {
            policy.validate()?;
            let provider = provider.ok_or_else(|| {
                Error::Provider(format!("augmentation mode {mode} needs a substitution provider"))
            })?;
            let mut out = instances.to_vec();
            for (i, k) in jobs(instances, policy) {
                let inst = &instances[i];
                let mut rng = copy_rng(policy.seed, i, k);
                let text = if mode == AugmentMode::Mix && k % 2 == 0 {
                    substitute(&inst.ocr_text, &inst.entity_name, lexicon, policy.p, &mut rng)
                } else {
                    let seed = rng.next_u64();
                    contextual_substitute(&inst.ocr_text, &inst.entity_name, provider, policy.p, seed)?
                };
                out.push(make_copy(inst, k, text));
            }
            Ok(out)
        }
    }
}
