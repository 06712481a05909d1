//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rolefuse::augment::{balance, copy_rng, protected_positions, substitute, token_spans, AugmentPolicy, SynonymLexicon};
use rolefuse::conll::{from_bio, to_bio, tokenize, BioMode};
use rolefuse::dataset::class_distribution;
use rolefuse::embeddings::EmbeddingTable;
use rolefuse::eval::{evaluate, majority_baseline};
use rolefuse::fusion::{
    assemble_full_tensor, bilinear_contract, predict, train_fusion, AttentionSpec, BilinearTensor, BlockFusionModel, EmbeddingTables,
    FusionSetting,
};
use rolefuse::linalg::Tensor;
use rolefuse::{EntityInstance, MemeRecord, Role, RoleCounts};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn majority_baseline_row() -> Outcome {
    let start = Instant::now();
    let train = RoleCounts::from_counts([475, 2427, 910, 13702]);
    let role = majority_baseline(&train).map_err(|e| e.to_string())?.predict();
    let gold: Vec<Role> = Role::ALL
        .iter()
        .zip([52usize, 350, 114, 1917])
        .flat_map(|(&r, n)| std::iter::repeat_n(r, n))
        .collect();
    let r = evaluate(&gold, &vec![role; gold.len()]).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let row = [r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1].map(|x| format!("{x:.2}"));
    ensure(row == ["0.79", "0.20", "0.25", "0.22"], || format!("row {row:?}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("Acc {} P {} R {} F1 {} in {elapsed:?}", row[0], row[1], row[2], row[3]))
}

fn bilinear_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dims = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=6));
        let data = random_vec(&mut rng, dims.0 * dims.1 * dims.2, 1.0);
        let x1 = random_vec(&mut rng, dims.0, 1.0);
        let x2 = random_vec(&mut rng, dims.1, 1.0);
        let t = BilinearTensor::new(Tensor::from_vec(&[dims.0, dims.1, dims.2], data.clone())).map_err(|e| e.to_string())?;
        let y = bilinear_contract(&t, &x1, &x2).map_err(|e| e.to_string())?;
        for (a, b) in y.iter().zip(triple_loop(&data, dims, &x1, &x2)) {
            worst = worst.max((a - b).abs());
        }
    }
    let mut worst_block: f64 = 0.0;
    for _ in 0..50 {
        let dims = random_dims(&mut rng);
        let mut m = BlockFusionModel::init(dims, 3, 3, None, 0.0, false, &mut rng).map_err(|e| e.to_string())?;
        scramble(&mut m.params, &mut rng, 1.0);
        let h = dims.hidden;
        let he = random_vec(&mut rng, h, 1.0);
        let hc = random_vec(&mut rng, h, 1.0);
        let full = assemble_full_tensor(&m);
        let a = m.fuse(&he, &hc).map_err(|e| e.to_string())?;
        let b = bilinear_contract(&full, &he, &hc).map_err(|e| e.to_string())?;
        for (x, y) in a.iter().zip(&b) {
            worst_block = worst_block.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-10 && worst_block <= 1e-10, || format!("max diff {worst:e} / {worst_block:e}"))?;
    Ok(format!("100 contractions max diff {worst:.1e}; 50 block models max diff {worst_block:.1e}"))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: (f64, String) = (0.0, String::new());
    let mut groups = std::collections::BTreeSet::new();
    for case in 0..20 {
        let kind = case % 3;
        let normalize = case % 4 == 1;
        let (m, e, c, role) = if kind == 2 {
            let (dt, di) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let mut entity = EmbeddingTable::new(2).unwrap();
            let mut text = EmbeddingTable::new(dt).unwrap();
            let mut image = EmbeddingTable::new(di).unwrap();
            entity.insert("e", random_vec(&mut rng, 2, 1.0)).unwrap();
            text.insert("m", random_vec(&mut rng, dt, 1.0)).unwrap();
            image.insert("m", random_vec(&mut rng, di, 1.0)).unwrap();
            let tables = EmbeddingTables { entity, text: Some(text), image: Some(image) };
            let inst = EntityInstance {
                meme_id: "m".into(),
                entity_name: "e".into(),
                ocr_text: String::new(),
                image_ref: "m.png".into(),
                role: Role::ALL[case % 4],
                augmented: None,
            };
            let (e, c) = tables.inputs(&inst, FusionSetting::EntityTextImage).map_err(|e| e.to_string())?;
            let attention = (case % 2 == 1).then_some(AttentionSpec { slots: 1, dim: 2 });
            (random_model(&mut rng, 2, dt + di, attention, normalize), e, c, inst.role)
        } else {
            let de = rng.gen_range(1..=5);
            let (dc, attention) = if kind == 1 {
                let slots = rng.gen_range(1..=3);
                (slots * rng.gen_range(1..=3), Some(AttentionSpec { slots, dim: rng.gen_range(1..=4) }))
            } else {
                (rng.gen_range(1..=5), None)
            };
            let m = random_model(&mut rng, de, dc, attention, normalize);
            let e = random_vec(&mut rng, de, 1.0);
            let c = random_vec(&mut rng, dc, 1.0);
            (m, e, c, Role::ALL[rng.gen_range(0..4)])
        };
        let mask = m.sample_mask(&mut rng);
        for errs in [gradient_errors(&m, &e, &c, role, Some(&mask), 1e-5), gradient_errors(&m, &e, &c, role, None, 1e-5)] {
            for (name, err) in errs {
                if err > worst.0 {
                    worst = (err, format!("{name} in config {case}"));
                }
                groups.insert(name);
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(groups.len() == 13, || format!("only {} parameter groups exercised", groups.len()))?;
    ensure(worst.0 <= 1e-4, || format!("rel err {:e} at {}", worst.0, worst.1))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("20 configs, {} groups, max rel err {:.1e}, {elapsed:.2?}", groups.len(), worst.0))
}

fn crf_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut z_err, mut v_err, mut fb_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..50 {
        let model = random_crf(&mut rng, 9);
        let len = rng.gen_range(1..=6);
        let tokens = random_tokens(&mut rng, len);
        let (log_z, best) = brute_force(&model, &tokens);
        let pot = model.potentials(&tokens, &[]);
        let fwd = pot.log_partition().map_err(|e| e.to_string())?;
        let bwd = pot.log_partition_backward().map_err(|e| e.to_string())?;
        let (_, score) = pot.viterbi().map_err(|e| e.to_string())?;
        z_err = z_err.max(((fwd.exp() - log_z.exp()) / log_z.exp()).abs());
        v_err = v_err.max((score - best).abs());
        fb_err = fb_err.max((fwd - bwd).abs());
    }
    ensure(z_err <= 1e-8 && v_err <= 1e-9 && fb_err <= 1e-9, || {
        format!("Z rel {z_err:e}, viterbi {v_err:e}, fwd/bwd {fb_err:e}")
    })?;
    Ok(format!("50 models: Z rel err {z_err:.1e}, Viterbi err {v_err:.1e}, fwd-bwd {fb_err:.1e}"))
}

fn bio_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let corpus: Vec<MemeRecord> = (0..500).map(|i| random_meme(&mut rng, i)).collect();
    let key = |toks: &[String]| toks.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>();
    let mut annotations = 0;
    for mode in [BioMode::AllTokens, BioMode::EntitiesOnly] {
        for r in &corpus {
            let mut want = BTreeMap::new();
            for a in &r.annotations {
                *want.entry((key(&tokenize(&a.entity)), a.role)).or_insert(0) += 1;
            }
            let mut got = BTreeMap::new();
            for (toks, role) in from_bio(&to_bio(r, mode)).map_err(|e| e.to_string())? {
                *got.entry((key(&toks), role)).or_insert(0) += 1;
            }
            ensure(got == want, || format!("{mode:?} {}: {got:?} vs {want:?}", r.id))?;
            annotations += r.annotations.len();
        }
    }
    Ok(format!("500 memes, {} annotations per mode recovered exactly once", annotations / 2))
}

fn synthetic_training() -> Outcome {
    let tables = synthetic_tables();
    let insts = synthetic_instances();
    let cfg = synthetic_config(7);
    let a = train_fusion(&cfg, &insts, &tables).map_err(|e| e.to_string())?;
    let b = train_fusion(&cfg, &insts, &tables).map_err(|e| e.to_string())?;
    let right = insts
        .iter()
        .filter(|i| predict(&a.model, i, &tables, &cfg).is_ok_and(|r| r == i.role))
        .count();
    let acc = right as f64 / insts.len() as f64;
    let same = a.loss_trace.len() == b.loss_trace.len()
        && a.loss_trace.iter().zip(&b.loss_trace).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(cfg.epochs <= 200 && acc >= 0.95, || format!("train accuracy {acc:.4} after {} epochs", cfg.epochs))?;
    ensure(same, || "loss traces differ between runs".into())?;
    Ok(format!("entity+text train accuracy {acc:.4} after {} epochs, identical loss traces", cfg.epochs))
}

const WORDS: &[&str] = &["bad", "good", "boss", "fake", "news", "friend", "the", "is", "hate", "great", "!", "crazy"];

fn augmentation() -> Outcome {
    let insts: Vec<EntityInstance> = Role::ALL
        .iter()
        .zip([475usize, 2427, 910, 13702])
        .flat_map(|(&role, n)| {
            (0..n).map(move |i| EntityInstance {
                meme_id: format!("{role}{i}"),
                entity_name: "boss".into(),
                ocr_text: "the bad boss is good".into(),
                image_ref: "x.png".into(),
                role,
                augmented: None,
            })
        })
        .collect();
    let lexicon = SynonymLexicon::bundled();
    let out = balance(&insts, &lexicon, &AugmentPolicy::default()).map_err(|e| e.to_string())?;
    let counts = class_distribution(&out).as_array();
    ensure(counts == [3325, 7281, 3640, 13702], || format!("counts {counts:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut changed = 0;
    for trial in 0..1000 {
        let entity: Vec<&str> = (0..rng.gen_range(1..=3)).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        let entity = entity.join(" ");
        let mut words: Vec<String> = (0..rng.gen_range(0..10)).map(|_| WORDS.choose(&mut rng).unwrap().to_string()).collect();
        for _ in 0..rng.gen_range(1..=2) {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, entity.clone());
        }
        let text = words.join(" ");
        let sub = substitute(&text, &entity, &lexicon, 1.0, &mut copy_rng(trial, 0, 0));
        let (before, after) = (token_spans(&text), token_spans(&sub));
        ensure(before.len() == after.len(), || format!("{text:?} -> {sub:?}"))?;
        for ((b, a), keep) in before.iter().zip(&after).zip(protected_positions(&before, &entity)) {
            ensure(!keep || a.text == b.text, || format!("entity {entity:?}: {text:?} -> {sub:?}"))?;
        }
        changed += usize::from(sub != text);
    }
    Ok(format!("counts {counts:?}; 1000 substitutions ({changed} changed text) left entities intact"))
}

fn cli_pipeline() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_rolefuse");
    let run = |args: &[&str]| -> Result<Vec<u8>, String> {
        let o = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        ensure(o.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))?;
        Ok(o.stdout)
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut cases: Vec<(String, Triplet)> = Vec::new();
    for k in 0..3 {
        let sub = dir.path().join(format!("random{k}"));
        std::fs::create_dir(&sub).map_err(|e| e.to_string())?;
        let memes = rng.gen_range(10..60);
        cases.push((format!("random{k}"), random_triplet(&mut rng, &sub, memes)));
    }
    let syn = fixture("synthetic");
    cases.push((
        "synthetic".into(),
        Triplet {
            dataset: syn.join("dataset.jsonl"),
            entity: syn.join("entity.emb"),
            text: syn.join("text.emb"),
            image: syn.join("image.emb"),
            instances: 400,
        },
    ));
    let settings = ["entity+text", "entity+image", "entity+text_image", "entity+text"];
    let mut summary = Vec::new();
    for ((name, t), setting) in cases.iter().zip(settings) {
        let p = |s: &std::path::Path| s.to_str().unwrap().to_string();
        let model = dir.path().join(format!("{name}.bfm"));
        let preds = dir.path().join(format!("{name}.jsonl"));
        let emb = [
            "--entity-emb".to_string(), p(&t.entity), "--text-emb".into(), p(&t.text), "--image-emb".into(), p(&t.image),
        ];
        let mut train: Vec<String> = ["train-fusion", "--train", &p(&t.dataset), "--model", &p(&model), "--setting", setting]
            .map(String::from)
            .to_vec();
        train.extend(emb.iter().cloned());
        train.extend(["--epochs", "3", "--hidden", "8", "--blocks", "2", "--rank-entity", "2", "--rank-context", "2"].map(String::from));
        train.extend(["--rank-out", "2", "--fused", "4", "--learning-rate", "0.01"].map(String::from));
        if name == "random1" {
            train.extend(["--attention", "--attention-slots", "1", "--attention-dim", "3"].map(String::from));
        }
        run(&train.iter().map(String::as_str).collect::<Vec<_>>())?;
        let mut pred: Vec<String> = ["predict", "--model", &p(&model), "--input", &p(&t.dataset), "--output", &p(&preds)]
            .map(String::from)
            .to_vec();
        pred.extend(emb.iter().cloned());
        run(&pred.iter().map(String::as_str).collect::<Vec<_>>())?;
        let out = run(&["--json", "evaluate", "--gold", &p(&t.dataset), "--pred", &p(&preds)])?;
        let report: serde_json::Value = serde_json::from_slice(&out).map_err(|e| e.to_string())?;
        check_report(&report, t.instances as u64).map_err(|e| format!("{name}: {e}"))?;
        summary.push(format!("{name}/{setting} n={}", t.instances));
    }
    Ok(format!("valid reports for {}", summary.join(", ")))
}

fn main() {
    type Check = (&'static str, fn() -> Outcome);
    let checks: [Check; 8] = [
        ("majority baseline row", majority_baseline_row),
        ("bilinear contraction oracle", bilinear_oracle),
        ("gradient suite", gradient_suite),
        ("CRF enumeration oracle", crf_oracle),
        ("BIO round trip", bio_round_trip),
        ("synthetic training", synthetic_training),
        ("augmentation counts and entity protection", augmentation),
        ("CLI train/predict/evaluate pipeline", cli_pipeline),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
