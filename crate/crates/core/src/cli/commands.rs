use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::augment::{augment_instances, AugmentMode, AugmentPolicy, SubstitutionProvider, SynonymLexicon};
use crate::conll::{load_conll, save_conll, to_bio, BioMode, TaggedSequence};
use crate::crf::{self, CrfHyper, CrfModel, FeatureSet};
use crate::dataset::{class_distribution, flatten_to_instances, load_dataset, load_instances, save_instances};
use crate::embeddings::read_table;
use crate::eval::{evaluate as score, majority_baseline, sequence_evaluate, EvalReport};
use crate::fusion::{self, checkpoint, train_linear_svm, EmbeddingTables, FusionDims, FusionSetting, SvmHyper, TrainConfig};
use crate::{EntityInstance, Error, Result, Role, RoleCounts};

use super::config::{merge, resolve_seed, Manifest};
use super::*;

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub meme_id: String,
    pub entity: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<[f64; 4]>,
}

fn write_predictions(preds: &[Prediction], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for p in preds {
        serde_json::to_writer(&mut out, p).expect("prediction serializes");
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Loads classification examples from a dataset JSONL (flattened) or from an
/// instance JSONL as written by `augment`.
fn load_examples(path: &Path) -> Result<Vec<EntityInstance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = None;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            first = Some(line);
            break;
        }
    }
    let is_instances = first
        .and_then(|l| serde_json::from_str::<serde_json::Value>(&l).ok())
        .is_some_and(|v| v.get("entity_name").is_some());
    if is_instances {
        load_instances(path)
    } else {
        Ok(flatten_to_instances(&load_dataset(path)?))
    }
}

fn is_jsonl(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"))
}

fn parse_mode(mode: Option<&str>) -> Result<BioMode> {
    mode.unwrap_or("all_tokens").parse()
}

fn load_sequences(path: &Path, mode: BioMode) -> Result<Vec<TaggedSequence>> {
    if is_jsonl(path) {
        Ok(load_dataset(path)?.iter().map(|r| to_bio(r, mode)).collect())
    } else {
        load_conll(path)
    }
}

fn counts_json(c: &RoleCounts) -> serde_json::Value {
    json!({
        "hero": c.hero,
        "villain": c.villain,
        "victim": c.victim,
        "other": c.other,
        "total": c.total,
    })
}

fn report_json(r: &EvalReport) -> serde_json::Value {
    serde_json::to_value(r).expect("report serializes")
}

pub fn convert(args: ConvertArgs) -> Result<Outcome> {
    let a = merge(&args, args.config.as_deref())?;
    let input = required(a.input.clone(), "input")?;
    let output = required(a.output.clone(), "output")?;
    let mode = parse_mode(a.mode.as_deref())?;
    let records = load_dataset(&input)?;
    let seqs: Vec<TaggedSequence> = records.iter().map(|r| to_bio(r, mode)).collect();
    save_conll(&seqs, &output)?;
    let tokens: usize = seqs.iter().map(TaggedSequence::len).sum();
    let metrics = json!({ "memes": seqs.len(), "tokens": tokens });
    Manifest::new("convert", &a, None).output(&output).metrics(metrics.clone()).write(&output)?;
    Ok(Outcome {
        text: format!("wrote {} sequences ({tokens} tokens) to {}\n", seqs.len(), output.display()),
        json: metrics,
    })
}

fn read_names(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

pub fn train_crf(args: TrainCrfArgs) -> Result<Outcome> {
    let a = merge(&args, args.config.as_deref())?;
    let train = required(a.train.clone(), "train")?;
    let model_path = required(a.model.clone(), "model")?;
    let seed = resolve_seed(a.seed)?;
    let seqs = load_sequences(&train, parse_mode(a.mode.as_deref())?)?;
    let mut features = FeatureSet {
        columns: a.columns.unwrap_or(0),
        ..FeatureSet::default()
    };
    if let Some(names) = &a.names {
        features.names = read_names(names)?;
    }
    let defaults = CrfHyper::default();
    let hyper = CrfHyper {
        l2: a.l2.unwrap_or(defaults.l2),
        max_iterations: a.max_iterations.unwrap_or(defaults.max_iterations),
        seed,
    };
    let trained = crf::train_crf(&seqs, features, hyper)?;
    trained.model.save(&model_path)?;
    let gold: Vec<_> = seqs.iter().map(|s| s.tags.clone()).collect();
    let pred = seqs
        .iter()
        .map(|s| trained.model.tag_sequence(s))
        .collect::<Result<Vec<_>>>()?;
    let report = sequence_evaluate(&gold, &pred)?;
    let metrics = json!({
        "sequences": seqs.len(),
        "iterations": trained.objective_trace.len() - 1,
        "converged": trained.converged,
        "final_objective": trained.objective_trace.last(),
        "train_token_accuracy": report.accuracy,
        "train_macro_f1": report.macro_f1,
    });
    Manifest::new("train-crf", &a, Some(seed))
        .output(&model_path)
        .metrics(metrics.clone())
        .write(&model_path)?;
    Ok(Outcome {
        text: format!(
            "trained on {} sequences, {} iterations (converged: {}), train token accuracy {:.4}\n",
            seqs.len(),
            trained.objective_trace.len() - 1,
            trained.converged,
            report.accuracy
        ),
        json: metrics,
    })
}

pub fn tag(args: TagArgs) -> Result<Outcome> {
    let a = merge(&args, args.config.as_deref())?;
    let model_path = required(a.model.clone(), "model")?;
    let input = required(a.input.clone(), "input")?;
    let output = required(a.output.clone(), "output")?;
    let model = CrfModel::load(&model_path)?;
    let seqs = load_sequences(&input, parse_mode(a.mode.as_deref())?)?;
    let tagged = seqs
        .into_iter()
        .map(|mut s| {
            s.tags = model.tag_sequence(&s)?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    save_conll(&tagged, &output)?;
    let metrics = json!({ "sequences": tagged.len() });
    Manifest::new("tag", &a, None).output(&output).metrics(metrics.clone()).write(&output)?;
    Ok(Outcome {
        text: format!("tagged {} sequences into {}\n", tagged.len(), output.display()),
        json: metrics,
    })
}

fn load_tables(
    setting: FusionSetting,
    entity: Option<&Path>,
    text: Option<&Path>,
    image: Option<&Path>,
) -> Result<EmbeddingTables> {
    let entity = read_table(required(entity, "entity-emb")?)?;
    let text = if setting.uses_text() {
        Some(read_table(required(text, "text-emb")?)?)
    } else {
        None
    };
    let image = if setting.uses_image() {
        Some(read_table(required(image, "image-emb")?)?)
    } else {
        None
    };
    Ok(EmbeddingTables { entity, text, image })
}

fn parse_copies(s: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::Usage(format!("--copies expects four counts hero,villain,victim,other; got {s:?}"));
    if parts.len() != 4 {
        return Err(bad());
    }
    let mut out = [0; 4];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| bad())?;
    }
    Ok(out)
}

fn augment_policy(copies: Option<&str>, p: Option<f64>, seed: u64) -> Result<AugmentPolicy> {
    let mut policy = AugmentPolicy {
        seed,
        ..AugmentPolicy::default()
    };
    if let Some(c) = copies {
        let [hero, villain, victim, other] = parse_copies(c)?;
        policy = AugmentPolicy { hero, villain, victim, other, ..policy };
    }
    if let Some(p) = p {
        policy.p = p;
    }
    policy.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(policy)
}

fn run_augmentation(
    instances: &[EntityInstance],
    mode: AugmentMode,
    lexicon: Option<&Path>,
    provider: Option<&str>,
    policy: &AugmentPolicy,
) -> Result<Vec<EntityInstance>> {
    let lexicon = match lexicon {
        Some(p) => SynonymLexicon::load(p)?.with_stopwords(crate::augment::bundled_stopwords()),
        None => SynonymLexicon::bundled(),
    };
    let mut provider = match (mode, provider) {
        (AugmentMode::Contextual | AugmentMode::Mix, Some(cmd)) => Some(SubstitutionProvider::spawn(cmd)?),
        (AugmentMode::Contextual | AugmentMode::Mix, None) => {
            return Err(Error::Usage(format!("--augment {mode} needs --provider")));
        }
        _ => None,
    };
    augment_instances(instances, policy, mode, &lexicon, provider.as_mut())
}

fn dims_from(a: &TrainFusionArgs) -> FusionDims {
    let d = FusionDims::default();
    FusionDims {
        hidden: a.hidden.unwrap_or(d.hidden),
        blocks: a.blocks.unwrap_or(d.blocks),
        rank_entity: a.rank_entity.unwrap_or(d.rank_entity),
        rank_context: a.rank_context.unwrap_or(d.rank_context),
        rank_out: a.rank_out.unwrap_or(d.rank_out),
        fused: a.fused.unwrap_or(d.fused),
    }
}

fn train_config(a: &TrainFusionArgs, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let setting = match &a.setting {
        Some(s) => s.parse()?,
        None => d.setting,
    };
    let cfg = TrainConfig {
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        max_text_length: a.max_text_length.unwrap_or(d.max_text_length),
        epochs: a.epochs.unwrap_or(d.epochs),
        seed,
        setting,
        attention: a.attention,
        attention_slots: a.attention_slots.unwrap_or(d.attention_slots),
        attention_dim: a.attention_dim.unwrap_or(d.attention_dim),
        dropout: a.dropout.unwrap_or(d.dropout),
        normalize: a.normalize,
        dims: dims_from(a),
    };
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg)
}

fn predict_all(
    model: &fusion::BlockFusionModel,
    cfg: &TrainConfig,
    instances: &[EntityInstance],
    tables: &EmbeddingTables,
) -> Result<Vec<Prediction>> {
    instances
        .iter()
        .map(|inst| {
            let (e, c) = tables.inputs(inst, cfg.setting)?;
            let probs = model.forward(&e, &c)?;
            Ok(Prediction {
                meme_id: inst.meme_id.clone(),
                entity: inst.entity_name.clone(),
                role: fusion::role_of(&probs),
                probabilities: Some([probs[0], probs[1], probs[2], probs[3]]),
            })
        })
        .collect()
}

pub fn train_fusion(args: TrainFusionArgs) -> Result<Outcome> {
    let a = merge(&args, args.config.as_deref())?;
    let train = required(a.train.clone(), "train")?;
    let model_path = required(a.model.clone(), "model")?;
    let seed = resolve_seed(a.seed)?;
    let cfg = train_config(&a, seed)?;
    let mode: AugmentMode = a.augment.as_deref().unwrap_or("none").parse()?;

    let mut instances = load_examples(&train)?;
    if mode != AugmentMode::None {
        let policy = augment_policy(a.copies.as_deref(), a.augment_p, seed)?;
        instances = run_augmentation(&instances, mode, a.lexicon.as_deref(), a.provider.as_deref(), &policy)?;
    }
    let tables = load_tables(
        cfg.setting,
        a.entity_emb.as_deref(),
        a.text_emb.as_deref(),
        a.image_emb.as_deref(),
    )?;
    let trained = fusion::train_fusion(&cfg, &instances, &tables)?;
    checkpoint::save(&trained, &model_path)?;

    let preds = predict_all(&trained.model, &cfg, &instances, &tables)?;
    let gold: Vec<Role> = instances.iter().map(|i| i.role).collect();
    let pred: Vec<Role> = preds.iter().map(|p| p.role).collect();
    let report = score(&gold, &pred)?;
    let metrics = json!({
        "instances": instances.len(),
        "distribution": counts_json(&class_distribution(&instances)),
        "initial_loss": trained.initial_loss,
        "final_loss": trained.loss_trace.last(),
        "loss_trace": trained.loss_trace,
        "train_accuracy": report.accuracy,
        "train_macro_f1": report.macro_f1,
    });
    Manifest::new("train-fusion", &a, Some(seed))
        .output(&model_path)
        .output(&checkpoint::metadata_path(&model_path))
        .metrics(metrics.clone())
        .write(&model_path)?;
    Ok(Outcome {
        text: format!(
            "trained {} on {} instances for {} epochs: loss {:.4} -> {:.4}, train accuracy {:.4}\n",
            cfg.setting,
            instances.len(),
            cfg.epochs,
            trained.initial_loss,
            trained.loss_trace.last().copied().unwrap_or(trained.initial_loss),
            report.accuracy
        ),
        json: metrics,
    })
}

pub fn predict(args: PredictArgs) -> Result<Outcome> {
    let a = merge(&args, args.config.as_deref())?;
    let model_path = required(a.model.clone(), "model")?;
    let input = required(a.input.clone(), "input")?;
    let output = required(a.output.clone(), "output")?;
    let trained = checkpoint::load(&model_path)?;
    let cfg = &trained.config;
    let instances = load_examples(&input)?;
    let tables = load_tables(
        cfg.setting,
        a.entity_emb.as_deref(),
        a.text_emb.as_deref(),
        a.image_emb.as_deref(),
    )?;
    let preds = predict_all(&trained.model, cfg, &instances, &tables)?;
    write_predictions(&preds, &output)?;
    let metrics = json!({
        "instances": preds.len(),
        "predicted_distribution": counts_json(&RoleCounts::from_counts(
            Role::ALL.map(|r| preds.iter().filter(|p| p.role == r).count() as u64)
        )),
    });
    Manifest::new("predict", &a, Some(cfg.seed))
        .output(&output)
        .metrics(metrics.clone())
        .write(&output)?;
    Ok(Outcome {
        text: format!("wrote {} predictions to {}\n", preds.len(), output.display()),
        json: metrics,
    })
}

fn align_classification(gold: &[EntityInstance], preds: &[Prediction]) -> Result<(Vec<Role>, Vec<Role>)> {
    if gold.len() != preds.len() {
        return Err(Error::Invalid(format!(
            "{} gold instances but {} predictions",
            gold.len(),
            preds.len()
        )));
    }
    let mut by_key: HashMap<(&str, &str), Role> = HashMap::new();
    for p in preds {
        if by_key.insert((&p.meme_id, &p.entity), p.role).is_some() {
            return Err(Error::Invalid(format!(
                "duplicate prediction for meme {:?}, entity {:?}",
                p.meme_id, p.entity
            )));
        }
    }
    let mut g = Vec::with_capacity(gold.len());
    let mut p = Vec::with_capacity(gold.len());
    for inst in gold {
        let role = by_key
            .get(&(inst.meme_id.as_str(), inst.entity_name.as_str()))
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "no prediction for meme {:?}, entity {:?}",
                    inst.meme_id, inst.entity_name
                ))
            })?;
        g.push(inst.role);
        p.push(*role);
    }
    Ok((g, p))
}

fn align_sequences(gold: &[TaggedSequence], pred: &[TaggedSequence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Invalid(format!(
            "{} gold sequences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (g, p) in gold.iter().zip(pred) {
        if g.meme_id != p.meme_id || g.tokens != p.tokens {
            return Err(Error::Invalid(format!(
                "sequence {:?} does not line up with predicted sequence {:?}",
                g.meme_id, p.meme_id
            )));
        }
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<Outcome> {
    let a = merge(&args, args.config.as_deref())?;
    let gold_path = required(a.gold.clone(), "gold")?;
    let pred_path = required(a.pred.clone(), "pred")?;
    let report = match a.format.as_deref().unwrap_or("classification") {
        "classification" => {
            let gold = load_examples(&gold_path)?;
            let preds = read_predictions(&pred_path)?;
            let (g, p) = align_classification(&gold, &preds)?;
            score(&g, &p)?
        }
        "sequence" => {
            let gold = load_conll(&gold_path)?;
            let pred = load_conll(&pred_path)?;
            align_sequences(&gold, &pred)?;
            let g: Vec<_> = gold.into_iter().map(|s| s.tags).collect();
            let p: Vec<_> = pred.into_iter().map(|s| s.tags).collect();
            sequence_evaluate(&g, &p)?
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown format {other:?} (expected classification or sequence)"
            )))
        }
    };
    let json = report_json(&report);
    if let Some(out) = &a.output {
        let bytes = serde_json::to_vec_pretty(&json).expect("report serializes");
        fs::write(out, bytes).map_err(|e| Error::io(out, e))?;
        Manifest::new("evaluate", &a, None)
            .output(out)
            .metrics(json!({
                "accuracy": report.accuracy,
                "macro_precision": report.macro_precision,
                "macro_recall": report.macro_recall,
                "macro_f1": report.macro_f1,
            }))
            .write(out)?;
    }
    let title = a.title.clone().unwrap_or_else(|| pred_path.display().to_string());
    Ok(Outcome {
        text: report.to_table(&title),
        json,
    })
}

pub fn augment(args: AugmentArgs) -> Result<Outcome> {
    let a = merge(&args, args.config.as_deref())?;
    let input = required(a.input.clone(), "input")?;
    let output = required(a.output.clone(), "output")?;
    let seed = resolve_seed(a.seed)?;
    let mode: AugmentMode = a.augment.as_deref().unwrap_or("lexicon").parse()?;
    let policy = augment_policy(a.copies.as_deref(), a.augment_p, seed)?;
    let instances = load_examples(&input)?;
    let out = run_augmentation(&instances, mode, a.lexicon.as_deref(), a.provider.as_deref(), &policy)?;
    save_instances(&out, &output)?;
    let before = class_distribution(&instances);
    let after = class_distribution(&out);
    let metrics = json!({ "before": counts_json(&before), "after": counts_json(&after) });
    Manifest::new("augment", &a, Some(seed))
        .output(&output)
        .metrics(metrics.clone())
        .write(&output)?;
    Ok(Outcome {
        text: format!(
            "{} -> {} instances (hero {}, villain {}, victim {}, other {})\n",
            before.total, after.total, after.hero, after.villain, after.victim, after.other
        ),
        json: metrics,
    })
}

pub fn distribution(args: DistributionArgs) -> Result<Outcome> {
    let a = merge(&args, args.config.as_deref())?;
    let input = required(a.input.clone(), "input")?;
    let counts = class_distribution(&load_examples(&input)?);
    let mut text = String::new();
    for r in Role::ALL {
        text.push_str(&format!("{:<8} {:>7} {:>4}%\n", r.as_str(), counts.get(r), counts.percent(r)));
    }
    text.push_str(&format!("{:<8} {:>7}\n", "total", counts.total));
    let mut json = counts_json(&counts);
    json["percent"] = json!(Role::ALL.map(|r| counts.percent(r)));
    Ok(Outcome { text, json })
}

pub fn baseline(args: BaselineArgs) -> Result<Outcome> {
    let a = merge(&args, args.config.as_deref())?;
    let train_path = required(a.train.clone(), "train")?;
    let test_path = required(a.test.clone(), "test")?;
    let output = required(a.output.clone(), "output")?;
    let train = load_examples(&train_path)?;
    let test = load_examples(&test_path)?;
    let kind = a.kind.as_deref().unwrap_or("majority");
    let (seed, roles) = match kind {
        "majority" => {
            let m = majority_baseline(&class_distribution(&train))?;
            (None, vec![m.predict(); test.len()])
        }
        "svm" => {
            let seed = resolve_seed(a.seed)?;
            let table = read_table(required(a.image_emb.as_deref(), "image-emb")?)?;
            let features = |xs: &[EntityInstance]| -> Result<Vec<Vec<f64>>> {
                xs.iter().map(|i| table.lookup(i.image_key()).map(<[f64]>::to_vec)).collect()
            };
            let d = SvmHyper::default();
            let hyper = SvmHyper {
                c: a.c.unwrap_or(d.c),
                epochs: a.epochs.unwrap_or(d.epochs),
                seed,
            };
            let labels: Vec<Role> = train.iter().map(|i| i.role).collect();
            let svm = train_linear_svm(&features(&train)?, &labels, hyper)?;
            (Some(seed), features(&test)?.iter().map(|x| svm.predict(x)).collect())
        }
        other => return Err(Error::Usage(format!("unknown baseline {other:?} (expected majority or svm)"))),
    };
    let preds: Vec<Prediction> = test
        .iter()
        .zip(roles)
        .map(|(i, role)| Prediction {
            meme_id: i.meme_id.clone(),
            entity: i.entity_name.clone(),
            role,
            probabilities: None,
        })
        .collect();
    write_predictions(&preds, &output)?;
    let metrics = json!({ "kind": kind, "instances": preds.len() });
    Manifest::new("baseline", &a, seed)
        .output(&output)
        .metrics(metrics.clone())
        .write(&output)?;
    Ok(Outcome {
        text: format!("wrote {} {kind} predictions to {}\n", preds.len(), output.display()),
        json: metrics,
    })
}
