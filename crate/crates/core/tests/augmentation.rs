mod common;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rolefuse::augment::{
    augment_instances, balance, copy_rng, protected_positions, substitute, token_spans, AugmentMode, AugmentPolicy,
    SubstitutionProvider, SynonymLexicon,
};
use rolefuse::dataset::class_distribution;
use rolefuse::{EntityInstance, Role};

fn instance(id: String, entity: &str, text: &str, role: Role) -> EntityInstance {
    EntityInstance {
        meme_id: id,
        entity_name: entity.to_string(),
        ocr_text: text.to_string(),
        image_ref: "x.png".to_string(),
        role,
        augmented: None,
    }
}

#[test]
fn default_policy_balances_train_counts() {
    let train = [475usize, 2427, 910, 13702];
    let insts: Vec<EntityInstance> = Role::ALL
        .iter()
        .zip(train)
        .flat_map(|(&r, n)| (0..n).map(move |i| instance(format!("{r}{i}"), "joe", "joe is a bad good boss", r)))
        .collect();
    let out = balance(&insts, &SynonymLexicon::bundled(), &AugmentPolicy::default()).unwrap();
    assert_eq!(class_distribution(&out).as_array(), [3325, 7281, 3640, 13702]);
    assert!(out[insts.len()..].iter().all(|i| i.augmented.is_some() && i.entity_name == "joe"));
}

const WORDS: &[&str] = &["bad", "good", "boss", "fake", "news", "friend", "the", "is", "hate", "great", "!", "crazy"];

#[test]
fn entity_tokens_survive_random_substitution() {
    let lexicon = SynonymLexicon::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut changed = 0;
    for trial in 0..1000 {
        let entity: Vec<&str> = (0..rng.gen_range(1..=3)).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        let entity = entity.join(" ");
        let mut words: Vec<String> = (0..rng.gen_range(0..10)).map(|_| WORDS.choose(&mut rng).unwrap().to_string()).collect();
        for _ in 0..rng.gen_range(1..=2) {
            let mention = if rng.gen_bool(0.3) { entity.to_uppercase() } else { entity.clone() };
            let at = rng.gen_range(0..=words.len());
            words.insert(at, mention);
        }
        let text = words.join(" ");
        let p = rng.gen_range(0.2..=1.0);
        let out = substitute(&text, &entity, &lexicon, p, &mut copy_rng(trial, 0, 0));
        let before = token_spans(&text);
        let after = token_spans(&out);
        assert_eq!(before.len(), after.len());
        for ((b, a), keep) in before.iter().zip(&after).zip(protected_positions(&before, &entity)) {
            if keep {
                assert_eq!(b.text, a.text, "{text:?} -> {out:?} for entity {entity:?}");
            }
        }
        changed += usize::from(out != text);
    }
    assert!(changed > 300, "only {changed} texts changed");
}

#[test]
fn augmentation_is_deterministic_per_seed() {
    let insts: Vec<EntityInstance> = (0..40)
        .map(|i| instance(format!("m{i}"), "Trump", "a bad and crazy boss called Trump", Role::ALL[i % 4]))
        .collect();
    let lex = SynonymLexicon::bundled();
    let policy = AugmentPolicy { seed: 5, p: 0.8, ..Default::default() };
    let a = balance(&insts, &lex, &policy).unwrap();
    let b = balance(&insts, &lex, &policy).unwrap();
    assert_eq!(a, b);
    let c = balance(&insts, &lex, &AugmentPolicy { seed: 6, ..policy }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn contextual_provider_cannot_touch_entity() {
    let insts = vec![
        instance("m0".into(), "man", "the man is a bad man", Role::Hero),
        instance("m1".into(), "woman", "the man and the woman", Role::Villain),
    ];
    let mut provider = SubstitutionProvider::spawn("sed -u 's/man/MAN/g; s/bad/BAD/g'").unwrap();
    let policy = AugmentPolicy::default();
    let out = augment_instances(&insts, &policy, AugmentMode::Contextual, &SynonymLexicon::bundled(), Some(&mut provider))
        .unwrap();
    assert_eq!(out.len(), 2 + 6 + 2);
    for inst in &out[2..] {
        let tokens: Vec<String> = token_spans(&inst.ocr_text).into_iter().map(|s| s.text).collect();
        assert!(tokens.iter().any(|t| t == &inst.entity_name), "{inst:?}");
    }
    assert!(out[2..8].iter().all(|i| i.ocr_text.contains("BAD")));
}

#[test]
fn contextual_mode_requires_provider() {
    let insts = vec![instance("m0".into(), "x", "x y", Role::Hero)];
    let err = augment_instances(&insts, &AugmentPolicy::default(), AugmentMode::Mix, &SynonymLexicon::bundled(), None)
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
