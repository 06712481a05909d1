//! Meme dataset representation and the meme → entity-instance reorganization.
//!
//! Datasets are JSON-lines files, one meme per line:
//!
//! ```text
//! {"id": "m1", "image": "img/m1.png", "text": "...", "hero": [], "villain": ["a"], "victim": [], "other": ["b"]}
//! ```
//!
//! Role arrays may be omitted (treated as empty). Unknown keys are ignored with
//! a warning. All strings are NFC-normalized on load.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result, Role};

/// One annotated entity of a meme.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub entity: String,
    pub role: Role,
}

/// One meme with its OCR text and role annotations.
///
/// Annotations are kept in role order, then in the order they appear in the
/// source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemeRecord {
    pub id: String,
    pub image_ref: String,
    pub ocr_text: String,
    pub annotations: Vec<Annotation>,
}

impl MemeRecord {
    /// Builds a record, checking the per-meme annotation invariants.
    pub fn new(
        id: impl Into<String>,
        image_ref: impl Into<String>,
        ocr_text: impl Into<String>,
        annotations: impl IntoIterator<Item = (String, Role)>,
    ) -> Result<Self> {
        let mut annotations: Vec<Annotation> = annotations
            .into_iter()
            .map(|(entity, role)| Annotation { entity, role })
            .collect();
        // stable: keeps file order within a role
        annotations.sort_by_key(|a| a.role);
        let record = MemeRecord {
            id: id.into(),
            image_ref: image_ref.into(),
            ocr_text: ocr_text.into(),
            annotations,
        };
        record.validate()?;
        Ok(record)
    }

    fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, Role> = HashMap::new();
        for ann in &self.annotations {
            if ann.entity.trim().is_empty() {
                return Err(Error::InvalidRecord {
                    meme_id: self.id.clone(),
                    message: "empty entity name".into(),
                });
            }
            if let Some(&first) = seen.get(ann.entity.as_str()) {
                if first == ann.role {
                    return Err(Error::InvalidRecord {
                        meme_id: self.id.clone(),
                        message: format!("entity {:?} listed twice under {}", ann.entity, first),
                    });
                }
                return Err(Error::ConflictingRole {
                    meme_id: self.id.clone(),
                    entity: ann.entity.clone(),
                    first,
                    second: ann.role,
                });
            }
            seen.insert(&ann.entity, ann.role);
        }
        Ok(())
    }

    pub fn entities(&self, role: Role) -> impl Iterator<Item = &str> {
        self.annotations
            .iter()
            .filter(move |a| a.role == role)
            .map(|a| a.entity.as_str())
    }
}

/// Provenance of an augmented copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Meme the copy was derived from; its image embedding is reused.
    pub source_meme_id: String,
    /// 0-based copy index for this source instance.
    pub copy: usize,
}

/// One (meme, entity, role) classification example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityInstance {
    /// Meme id, or a derived id for augmented copies. Text embeddings are
    /// keyed by this value.
    pub meme_id: String,
    pub entity_name: String,
    pub ocr_text: String,
    pub image_ref: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented: Option<Provenance>,
}

impl EntityInstance {
    /// Key of the text embedding for this instance.
    pub fn text_key(&self) -> &str {
        &self.meme_id
    }

    /// Key of the image embedding; augmented copies share their source image.
    pub fn image_key(&self) -> &str {
        match &self.augmented {
            Some(p) => &p.source_meme_id,
            None => &self.meme_id,
        }
    }
}

/// Per-role instance counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCounts {
    pub hero: u64,
    pub villain: u64,
    pub victim: u64,
    pub other: u64,
    pub total: u64,
}

impl RoleCounts {
    pub fn from_counts(counts: [u64; 4]) -> Self {
        RoleCounts {
            hero: counts[0],
            villain: counts[1],
            victim: counts[2],
            other: counts[3],
            total: counts.iter().sum(),
        }
    }

    pub fn get(&self, role: Role) -> u64 {
        match role {
            Role::Hero => self.hero,
            Role::Villain => self.villain,
            Role::Victim => self.victim,
            Role::Other => self.other,
        }
    }

    pub fn as_array(&self) -> [u64; 4] {
        [self.hero, self.villain, self.victim, self.other]
    }

    /// `round(100 · count / total)`, or 0 for an empty distribution.
    pub fn percent(&self, role: Role) -> u64 {
        if self.total == 0 {
            return 0;
        }
        (100.0 * self.get(role) as f64 / self.total as f64).round() as u64
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    id: String,
    image: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    hero: Vec<String>,
    #[serde(default)]
    villain: Vec<String>,
    #[serde(default)]
    victim: Vec<String>,
    #[serde(default)]
    other: Vec<String>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, serde_json::Value>,
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Parses a dataset from any reader. `origin` is used in error messages.
pub fn parse_dataset<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<MemeRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let mut warned = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        for key in raw.extra.keys() {
            if warned.insert(key.clone()) {
                log::warn!("{}:{line_no}: ignoring unknown key {key:?}", origin.display());
            }
        }
        let id = nfc(&raw.id);
        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let annotations = [
            (Role::Hero, raw.hero),
            (Role::Villain, raw.villain),
            (Role::Victim, raw.victim),
            (Role::Other, raw.other),
        ]
        .into_iter()
        .flat_map(|(role, names)| names.into_iter().map(move |n| (nfc(&n), role)));
        let record = MemeRecord::new(id, nfc(&raw.image), nfc(&raw.text), annotations)
            .map_err(|e| match e {
                Error::InvalidRecord { .. } | Error::ConflictingRole { .. } => Error::Parse {
                    path: origin.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                },
                other => other,
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Loads a JSON-lines dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<MemeRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file), path)
}

/// Serializes records in the same JSON-lines schema `load_dataset` reads.
pub fn write_dataset<W: Write>(records: &[MemeRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        let names = |role| r.entities(role).map(str::to_owned).collect::<Vec<_>>();
        let raw = RawRecord {
            id: r.id.clone(),
            image: r.image_ref.clone(),
            text: r.ocr_text.clone(),
            hero: names(Role::Hero),
            villain: names(Role::Villain),
            victim: names(Role::Victim),
            other: names(Role::Other),
            extra: BTreeMap::new(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(records: &[MemeRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(records, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// One example per annotated entity, in record order, then role order, then
/// annotation order.
pub fn flatten_to_instances(records: &[MemeRecord]) -> Vec<EntityInstance> {
    records
        .iter()
        .flat_map(|r| {
            r.annotations.iter().map(move |a| EntityInstance {
                meme_id: r.id.clone(),
                entity_name: a.entity.clone(),
                ocr_text: r.ocr_text.clone(),
                image_ref: r.image_ref.clone(),
                role: a.role,
                augmented: None,
            })
        })
        .collect()
}

pub fn class_distribution(instances: &[EntityInstance]) -> RoleCounts {
    let mut counts = [0u64; 4];
    for inst in instances {
        counts[inst.role.index()] += 1;
    }
    RoleCounts::from_counts(counts)
}

/// Writes instances as JSON lines (used for augmented corpora).
pub fn save_instances(instances: &[EntityInstance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        for inst in instances {
            serde_json::to_writer(&mut w, inst)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<EntityInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<MemeRecord>> {
        parse_dataset(s.as_bytes(), Path::new("test.jsonl"))
    }

    #[test]
    fn empty_file_gives_no_records() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn one_line_two_annotations() {
        let recs =
            parse(r#"{"id":"m1","image":"m1.png","text":"a and b","hero":["a"],"villain":["b"]}"#)
                .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].annotations.len(), 2);
        assert_eq!(recs[0].annotations[0].role, Role::Hero);
        assert_eq!(recs[0].annotations[1].entity, "b");
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse("{\"id\":\"x\",\"image\":\"\"}\n{\"id\":\"x\",\"image\":\"\"}").unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "x"));
    }

    #[test]
    fn entity_under_two_roles_rejected_with_line() {
        let input = "{\"id\":\"a\",\"image\":\"\"}\n{\"id\":\"b\",\"image\":\"\",\"hero\":[\"x\"],\"victim\":[\"x\"]}";
        match parse(input).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("hero") && message.contains("victim"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn duplicate_within_role_rejected() {
        assert!(parse(r#"{"id":"a","image":"","other":["x","x"]}"#).is_err());
    }

    #[test]
    fn entity_names_are_case_sensitive() {
        let recs = parse(r#"{"id":"a","image":"","hero":["Biden"],"villain":["biden"]}"#).unwrap();
        assert_eq!(recs[0].annotations.len(), 2);
    }

    #[test]
    fn parse_error_reports_line() {
        match parse("{\"id\":\"a\",\"image\":\"\"}\n\n{oops").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_ignored() {
        let recs = parse(r#"{"id":"a","image":"","extra":1,"hero":["x"]}"#).unwrap();
        assert_eq!(recs[0].annotations.len(), 1);
    }

    #[test]
    fn text_is_nfc_normalized() {
        // "e" + combining acute
        let recs = parse("{\"id\":\"a\",\"image\":\"\",\"text\":\"caf\\u0065\\u0301\"}").unwrap();
        assert_eq!(recs[0].ocr_text, "caf\u{e9}");
    }

    #[test]
    fn flatten_orders_and_shares_context() {
        let r = MemeRecord::new(
            "m",
            "m.png",
            "t",
            vec![("b".to_string(), Role::Other), ("a".to_string(), Role::Hero)],
        )
        .unwrap();
        let empty = MemeRecord::new("e", "e.png", "", Vec::new()).unwrap();
        let inst = flatten_to_instances(&[r, empty]);
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[0].entity_name, "a");
        assert_eq!(inst[1].entity_name, "b");
        assert!(inst.iter().all(|i| i.ocr_text == "t" && i.image_ref == "m.png"));
    }

    #[test]
    fn distribution_of_empty_is_zero() {
        assert_eq!(class_distribution(&[]), RoleCounts::default());
        assert_eq!(RoleCounts::default().percent(Role::Hero), 0);
    }

    #[test]
    fn percentages_round() {
        let c = RoleCounts::from_counts([52, 350, 114, 1917]);
        assert_eq!(c.total, 2433);
        let pct: Vec<u64> = Role::ALL.iter().map(|&r| c.percent(r)).collect();
        assert_eq!(pct, vec![2, 14, 5, 79]);
        // train split: 13,702 / 17,514 = 78.2%
        let train = RoleCounts::from_counts([475, 2427, 910, 13702]);
        assert_eq!(train.total, 17514);
        assert_eq!(train.percent(Role::Other), 78);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let recs = parse(
            "{\"id\":\"a\",\"image\":\"a.png\",\"text\":\"hi \\\"there\\\"\",\"victim\":[\"x\",\"y\"],\"hero\":[\"z\"]}",
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&recs, &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), recs);
    }
}
