#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rolefuse::crf::{CrfModel, FeatureSet};
use rolefuse::fusion::{AttentionSpec, BlockFusionModel, FusionDims, FusionParams};
use rolefuse::{MemeRecord, Role};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

// ---------------------------------------------------------------- bilinear

/// `y_k = Σ_i Σ_j T[i][j][k] x1_i x2_j`, with `t` flattened row-major.
pub fn triple_loop(t: &[f64], dims: (usize, usize, usize), x1: &[f64], x2: &[f64]) -> Vec<f64> {
    let (ni, nj, nk) = dims;
    let mut y = vec![0.0; nk];
    for k in 0..nk {
        let mut acc = 0.0;
        for i in 0..ni {
            for j in 0..nj {
                acc += t[(i * nj + j) * nk + k] * x1[i] * x2[j];
            }
        }
        y[k] = acc;
    }
    y
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_dims(rng: &mut ChaCha8Rng) -> FusionDims {
    FusionDims {
        hidden: rng.gen_range(2..=6),
        blocks: rng.gen_range(1..=3),
        rank_entity: rng.gen_range(1..=3),
        rank_context: rng.gen_range(1..=3),
        rank_out: rng.gen_range(1..=3),
        fused: rng.gen_range(2..=5),
    }
}

/// Replaces every parameter with uniform noise so no gradient path is
/// trivially zero (the head starts at zero after initialization).
pub fn scramble(params: &mut FusionParams, rng: &mut ChaCha8Rng, scale: f64) {
    for (_, t) in params.named_mut() {
        for x in &mut t.data {
            *x = rng.gen_range(-scale..scale);
        }
    }
}

pub fn random_model(
    rng: &mut ChaCha8Rng,
    entity_dim: usize,
    context_dim: usize,
    attention: Option<AttentionSpec>,
    normalize: bool,
) -> BlockFusionModel {
    let dims = random_dims(rng);
    let mut m = BlockFusionModel::init(dims, entity_dim, context_dim, attention, 0.25, normalize, rng).unwrap();
    scramble(&mut m.params, rng, 0.8);
    m
}

/// Largest elementwise relative error between the analytic gradient and
/// central differences, per parameter group.
pub fn gradient_errors(
    model: &BlockFusionModel,
    entity: &[f64],
    context: &[f64],
    role: Role,
    mask: Option<&[f64]>,
    h: f64,
) -> Vec<(String, f64)> {
    let mut grad = model.params.zeros_like();
    model.loss_and_grad(entity, context, role, mask, &mut grad).unwrap();
    let analytic: HashMap<&str, Vec<f64>> = grad
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.data.clone()))
        .collect();
    let mut probe = model.clone();
    let names: Vec<&'static str> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for name in names {
        let len = analytic[name].len();
        let mut worst: f64 = 0.0;
        for idx in 0..len {
            let orig = tensor_mut(&mut probe, name)[idx];
            tensor_mut(&mut probe, name)[idx] = orig + h;
            let plus = probe.loss(entity, context, role, mask).unwrap();
            tensor_mut(&mut probe, name)[idx] = orig - h;
            let minus = probe.loss(entity, context, role, mask).unwrap();
            tensor_mut(&mut probe, name)[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[name][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        out.push((name.to_string(), worst));
    }
    out
}

fn tensor_mut<'a>(model: &'a mut BlockFusionModel, name: &str) -> &'a mut Vec<f64> {
    model
        .params
        .named_mut()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| &mut t.data)
        .unwrap()
}

// --------------------------------------------------------------------- CRF

pub const VOCAB: &[&str] = &[
    "the", "Biden", "joe", "trump", "2020", "vote", "!", "cats", "#maga", "fake", "news", "we", "Love",
];

pub fn random_tokens(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    (0..len).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect()
}

/// A CRF over `labels` labels whose features are everything the default
/// templates fire on `VOCAB`, with random weights.
pub fn random_crf(rng: &mut ChaCha8Rng, labels: usize) -> CrfModel {
    let fs = FeatureSet {
        vocabulary: VOCAB.iter().take(8).map(|s| s.to_string()).collect(),
        ..FeatureSet::default()
    };
    let mut features = std::collections::BTreeSet::new();
    for _ in 0..20 {
        let toks = random_tokens(rng, 6);
        for i in 0..toks.len() {
            features.extend(fs.extract(&toks, i, None));
        }
    }
    let names = (0..labels).map(|i| format!("L{i}")).collect();
    let mut m = CrfModel::new(names, fs, features.into_iter().collect(), 1.0);
    for w in m.emission.iter_mut().chain(m.transition.iter_mut()) {
        *w = rng.gen_range(-1.0..1.0);
    }
    m
}

/// Score of a labeling computed straight from feature strings and the
/// weight layout: emission row per feature, transition row per from-label.
pub fn brute_path_score(model: &CrfModel, tokens: &[String], path: &[usize]) -> f64 {
    let l = model.labels.len();
    let mut s = 0.0;
    for (t, &y) in path.iter().enumerate() {
        for f in model.feature_set.extract(tokens, t, None) {
            if let Some(id) = model.features.iter().position(|x| *x == f) {
                s += model.emission[id * l + y];
            }
        }
        if t > 0 {
            s += model.transition[path[t - 1] * l + y];
        }
    }
    s
}

/// `(log Σ exp(score), max score)` over all `l^n` labelings.
pub fn brute_force(model: &CrfModel, tokens: &[String]) -> (f64, f64) {
    let l = model.labels.len();
    let n = tokens.len();
    let em: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            (0..l)
                .map(|y| {
                    model
                        .feature_set
                        .extract(tokens, t, None)
                        .iter()
                        .filter_map(|f| model.features.iter().position(|x| x == f))
                        .map(|id| model.emission[id * l + y])
                        .sum()
                })
                .collect()
        })
        .collect();
    let total = l.pow(n as u32);
    let mut scores = Vec::with_capacity(total);
    let mut path = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % l;
            c /= l;
        }
        let mut s = em[0][path[0]];
        for t in 1..n {
            s += em[t][path[t]] + model.transition[path[t - 1] * l + path[t]];
        }
        scores.push(s);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    (max + sum.ln(), max)
}

// ----------------------------------------------------------------- metrics

/// Reference metrics computed per class from the label lists, without a
/// confusion matrix: `(accuracy, macro P, macro R, macro F1)`.
pub fn reference_metrics(gold: &[usize], pred: &[usize], classes: &[usize]) -> (f64, f64, f64, f64) {
    let n = gold.len() as f64;
    let acc = gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / n;
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for &c in classes {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
        let fp = gold.iter().zip(pred).filter(|(g, p)| **g != c && **p == c).count() as f64;
        let fne = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p != c).count() as f64;
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fne > 0.0 { tp / (tp + fne) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        sp += p;
        sr += r;
        sf += f;
    }
    let k = classes.len() as f64;
    (acc, sp / k, sr / k, sf / k)
}

// ----------------------------------------------------------------- corpora

const WORDS: &[&str] = &[
    "when", "you", "see", "the", "news", "about", "taxes", "again", "lol", "why", "is", "this", "so", "true",
];
const NAMES: &[&str] = &[
    "Joe", "Biden", "Donald", "Trump", "Democrats", "GOP", "China", "Fauci", "CNN", "vaccine", "America",
];

fn random_entity(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| *NAMES.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// A meme with 1 to 5 entities. Entities may be mentioned once, twice or not
/// at all, may nest inside one another and may appear with different case
/// or trailing punctuation.
pub fn random_meme(rng: &mut ChaCha8Rng, id: usize) -> MemeRecord {
    let mut entities: Vec<(String, Role)> = Vec::new();
    let k = rng.gen_range(1..=5);
    while entities.len() < k {
        let name = random_entity(rng);
        if entities.iter().any(|(e, _)| e.eq_ignore_ascii_case(&name)) {
            continue;
        }
        entities.push((name, Role::ALL[rng.gen_range(0..4)]));
    }
    let mut pieces: Vec<String> = (0..rng.gen_range(0..8)).map(|_| WORDS.choose(rng).unwrap().to_string()).collect();
    for (name, _) in &entities {
        let mentions = [0, 1, 1, 2][rng.gen_range(0..4)];
        for _ in 0..mentions {
            let mut m = if rng.gen_bool(0.3) { name.to_uppercase() } else { name.clone() };
            if rng.gen_bool(0.3) {
                m.push_str([",", "!", "..."][rng.gen_range(0..3)]);
            }
            let at = rng.gen_range(0..=pieces.len());
            pieces.insert(at, m);
        }
    }
    MemeRecord::new(
        format!("meme{id:04}"),
        format!("meme{id:04}.png"),
        pieces.join(" "),
        entities,
    )
    .unwrap()
}

// --------------------------------------------------------------- synthetic

pub fn synthetic_tables() -> rolefuse::fusion::EmbeddingTables {
    use rolefuse::embeddings::read_table;
    let dir = fixture("synthetic");
    rolefuse::fusion::EmbeddingTables {
        entity: read_table(dir.join("entity.emb")).unwrap(),
        text: Some(read_table(dir.join("text.emb")).unwrap()),
        image: Some(read_table(dir.join("image.emb")).unwrap()),
    }
}

pub fn synthetic_instances() -> Vec<rolefuse::EntityInstance> {
    let records = rolefuse::dataset::load_dataset(fixture("synthetic/dataset.jsonl")).unwrap();
    rolefuse::dataset::flatten_to_instances(&records)
}

/// Small entity+text configuration used by the synthetic training checks.
pub fn synthetic_config(seed: u64) -> rolefuse::fusion::TrainConfig {
    rolefuse::fusion::TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        epochs: 200,
        seed,
        dropout: 0.1,
        dims: FusionDims { hidden: 32, blocks: 4, rank_entity: 8, rank_context: 8, rank_out: 4, fused: 16 },
        ..Default::default()
    }
}

// --------------------------------------------------------------------- CLI

pub struct Triplet {
    pub dataset: PathBuf,
    pub entity: PathBuf,
    pub text: PathBuf,
    pub image: PathBuf,
    pub instances: usize,
}

/// Writes a random dataset together with EMB1 tables covering it.
pub fn random_triplet(rng: &mut ChaCha8Rng, dir: &std::path::Path, memes: usize) -> Triplet {
    use rolefuse::embeddings::{write_table, EmbeddingTable};
    let records: Vec<MemeRecord> = (0..memes).map(|i| random_meme(rng, i)).collect();
    let (de, dt, di) = (rng.gen_range(2..10), rng.gen_range(2..10), rng.gen_range(2..10));
    let mut entity = EmbeddingTable::new(de).unwrap();
    let mut text = EmbeddingTable::new(dt).unwrap();
    let mut image = EmbeddingTable::new(di).unwrap();
    let mut instances = 0;
    for r in &records {
        text.insert(r.id.clone(), random_vec(rng, dt, 1.0)).unwrap();
        image.insert(r.id.clone(), random_vec(rng, di, 1.0)).unwrap();
        for a in &r.annotations {
            instances += 1;
            if !entity.contains(&a.entity) {
                entity.insert(a.entity.clone(), random_vec(rng, de, 1.0)).unwrap();
            }
        }
    }
    let t = Triplet {
        dataset: dir.join("data.jsonl"),
        entity: dir.join("entity.emb"),
        text: dir.join("text.emb"),
        image: dir.join("image.emb"),
        instances,
    };
    rolefuse::dataset::save_dataset(&records, &t.dataset).unwrap();
    write_table(&entity, &t.entity).unwrap();
    write_table(&text, &t.text).unwrap();
    write_table(&image, &t.image).unwrap();
    t
}

/// Structural check of an evaluation report: field names and types, a
/// square confusion matrix over the four roles summing to `instances`, and
/// scores inside [0, 1].
pub fn check_report(v: &serde_json::Value, instances: u64) -> Result<(), String> {
    let obj = v.as_object().ok_or("report is not an object")?;
    let expected = [
        "labels", "confusion", "total", "accuracy", "per_class", "macro_precision", "macro_recall", "macro_f1",
    ];
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    let mut want = expected.to_vec();
    want.sort_unstable();
    if keys != want {
        return Err(format!("report keys {keys:?}"));
    }
    let labels: Vec<&str> = v["labels"].as_array().ok_or("labels")?.iter().filter_map(|l| l.as_str()).collect();
    if labels != ["hero", "villain", "victim", "other"] {
        return Err(format!("labels {labels:?}"));
    }
    let rows = v["confusion"].as_array().ok_or("confusion")?;
    let mut sum = 0;
    if rows.len() != 4 {
        return Err("confusion is not 4x4".into());
    }
    for row in rows {
        let row = row.as_array().ok_or("confusion row")?;
        if row.len() != 4 {
            return Err("confusion is not 4x4".into());
        }
        for c in row {
            sum += c.as_u64().ok_or("confusion cell is not a count")?;
        }
    }
    if sum != instances || v["total"].as_u64() != Some(instances) {
        return Err(format!("confusion sums to {sum}, total {}, expected {instances}", v["total"]));
    }
    let unit = |x: &serde_json::Value| x.as_f64().is_some_and(|f| (0.0..=1.0).contains(&f));
    for k in ["accuracy", "macro_precision", "macro_recall", "macro_f1"] {
        if !unit(&v[k]) {
            return Err(format!("{k} = {}", v[k]));
        }
    }
    let per = v["per_class"].as_array().ok_or("per_class")?;
    if per.len() != 4 {
        return Err("per_class length".into());
    }
    for (c, l) in per.iter().zip(labels) {
        if c["label"] != l || !unit(&c["precision"]) || !unit(&c["recall"]) || !unit(&c["f1"]) || !c["support"].is_u64() {
            return Err(format!("bad class entry {c}"));
        }
    }
    Ok(())
}
