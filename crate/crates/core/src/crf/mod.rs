//! Linear-chain CRF for BIO role tagging.
//!
//! Emission scores are sums of per-(feature, label) weights; transitions are a
//! dense label × label matrix. Training maximizes the L2-regularized
//! conditional log-likelihood with full-batch gradient ascent and a
//! backtracking line search, so every accepted step increases the objective.

mod features;
mod inference;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conll::{Tag, TaggedSequence};
use crate::linalg::dot;
use crate::{Error, Result};

pub use features::{has_digit, has_special, length_bucket, shape, trigrams, FeatureSet, Templates};
pub use inference::{Marginals, Potentials};

pub const MODEL_FORMAT: &str = "rolefuse-crf";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfHyper {
    pub l2: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for CrfHyper {
    fn default() -> Self {
        CrfHyper {
            l2: 1.0,
            max_iterations: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    pub labels: Vec<String>,
    pub feature_set: FeatureSet,
    /// Feature strings; position is the feature id.
    pub features: Vec<String>,
    /// `features.len() × labels.len()`, row-major.
    pub emission: Vec<f64>,
    /// `labels.len() × labels.len()`, from-label major.
    pub transition: Vec<f64>,
    pub l2: f64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: CrfModel,
}

impl CrfModel {
    /// A model with all weights zero.
    pub fn new(labels: Vec<String>, feature_set: FeatureSet, features: Vec<String>, l2: f64) -> Self {
        let (f, l) = (features.len(), labels.len());
        let mut m = CrfModel {
            labels,
            feature_set,
            features,
            emission: vec![0.0; f * l],
            transition: vec![0.0; l * l],
            l2,
            index: HashMap::new(),
        };
        m.rebuild_index();
        m
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn num_weights(&self) -> usize {
        self.emission.len() + self.transition.len()
    }

    pub fn feature_id(&self, feature: &str) -> Option<usize> {
        self.index.get(feature).copied()
    }

    /// Known feature ids for the token at `pos`; unseen features are dropped.
    pub fn extract_features(
        &self,
        tokens: &[String],
        pos: usize,
        columns: Option<&[String]>,
    ) -> Vec<usize> {
        self.feature_set
            .extract(tokens, pos, columns)
            .iter()
            .filter_map(|f| self.feature_id(f))
            .collect()
    }

    fn sequence_features(&self, tokens: &[String], columns: &[Vec<String>]) -> Vec<Vec<usize>> {
        (0..tokens.len())
            .map(|i| self.extract_features(tokens, i, columns.get(i).map(Vec::as_slice)))
            .collect()
    }

    fn potentials_from_ids(&self, ids: &[Vec<usize>]) -> Potentials {
        let l = self.num_labels();
        let mut em = vec![0.0; ids.len() * l];
        for (t, feats) in ids.iter().enumerate() {
            for &f in feats {
                for y in 0..l {
                    em[t * l + y] += self.emission[f * l + y];
                }
            }
        }
        Potentials::new(l, em, self.transition.clone())
    }

    pub fn potentials(&self, tokens: &[String], columns: &[Vec<String>]) -> Potentials {
        self.potentials_from_ids(&self.sequence_features(tokens, columns))
    }

    pub fn log_partition(&self, tokens: &[String]) -> Result<f64> {
        self.potentials(tokens, &[]).log_partition()
    }

    /// Most likely label indices for a token sequence.
    pub fn viterbi(&self, tokens: &[String], columns: &[Vec<String>]) -> Result<Vec<usize>> {
        Ok(self.potentials(tokens, columns).viterbi()?.0)
    }

    /// Viterbi labels as strings.
    pub fn tag(&self, tokens: &[String], columns: &[Vec<String>]) -> Result<Vec<String>> {
        Ok(self
            .viterbi(tokens, columns)?
            .into_iter()
            .map(|y| self.labels[y].clone())
            .collect())
    }

    /// Tags a sequence with BIO tags; an `I-X` that does not continue an `X`
    /// span is turned into `B-X` so the result is always well formed.
    pub fn tag_sequence(&self, seq: &TaggedSequence) -> Result<Vec<Tag>> {
        if seq.is_empty() {
            return Ok(Vec::new());
        }
        let tags = self
            .tag(&seq.tokens, &seq.columns)?
            .iter()
            .map(|s| s.parse::<Tag>())
            .collect::<Result<Vec<_>>>()?;
        Ok(repair_bio(tags))
    }

    fn set_weights(&mut self, w: &[f64]) {
        let e = self.emission.len();
        self.emission.copy_from_slice(&w[..e]);
        self.transition.copy_from_slice(&w[e..]);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let doc = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(&mut w, &doc)
            .map_err(|e| Error::io(path, e.into()))
            .and_then(|_| w.flush().map_err(|e| Error::io(path, e)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let doc: ModelFile =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::Invalid(format!(
                "{}: unsupported model {} v{}",
                path.display(),
                doc.format,
                doc.version
            )));
        }
        let mut model = doc.model;
        let (f, l) = (model.features.len(), model.labels.len());
        if model.emission.len() != f * l || model.transition.len() != l * l {
            return Err(Error::Invalid(format!("{}: weight shapes do not match", path.display())));
        }
        if !model.emission.iter().chain(&model.transition).all(|w| w.is_finite()) {
            return Err(Error::Invalid(format!("{}: non-finite weight", path.display())));
        }
        model.rebuild_index();
        Ok(model)
    }
}

/// Replaces every `I-X` that does not continue an `X` span with `B-X`.
pub fn repair_bio(mut tags: Vec<Tag>) -> Vec<Tag> {
    let mut prev = Tag::O;
    for t in tags.iter_mut() {
        if let Tag::I(r) = *t {
            if prev.role() != Some(r) {
                *t = Tag::B(r);
            }
        }
        prev = *t;
    }
    tags
}

/// Training data with features resolved to ids, and the regularized
/// log-likelihood over a flat weight vector (emission weights then
/// transition weights).
pub struct CrfObjective {
    labels: usize,
    emission_len: usize,
    l2: f64,
    sequences: Vec<(Vec<Vec<usize>>, Vec<usize>)>,
}

/// Tokens, extra columns per token, and gold label indices.
pub type LabeledSequence = (Vec<String>, Vec<Vec<String>>, Vec<usize>);

impl CrfObjective {
    pub fn new(model: &CrfModel, data: &[LabeledSequence]) -> Self {
        let sequences = data
            .iter()
            .filter(|(tokens, _, _)| !tokens.is_empty())
            .map(|(tokens, cols, gold)| (model.sequence_features(tokens, cols), gold.clone()))
            .collect();
        CrfObjective {
            labels: model.num_labels(),
            emission_len: model.emission.len(),
            l2: model.l2,
            sequences,
        }
    }

    /// `Σ log p(gold | x) − (l2/2)·‖w‖²` and its gradient.
    pub fn evaluate(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let l = self.labels;
        let (ew, tw) = w.split_at(self.emission_len);
        let mut grad = vec![0.0; w.len()];
        let mut ll = 0.0;
        for (ids, gold) in &self.sequences {
            let n = ids.len();
            let mut em = vec![0.0; n * l];
            for (t, feats) in ids.iter().enumerate() {
                for &f in feats {
                    for y in 0..l {
                        em[t * l + y] += ew[f * l + y];
                    }
                }
            }
            let pot = Potentials::new(l, em, tw.to_vec());
            let m = pot.marginals().expect("nonempty");
            ll += pot.path_score(gold) - m.log_z;
            let (ge, gt) = grad.split_at_mut(self.emission_len);
            for (t, feats) in ids.iter().enumerate() {
                for &f in feats {
                    ge[f * l + gold[t]] += 1.0;
                    for y in 0..l {
                        ge[f * l + y] -= m.unary[t * l + y];
                    }
                }
                if t > 0 {
                    gt[gold[t - 1] * l + gold[t]] += 1.0;
                }
            }
            for (g, p) in gt.iter_mut().zip(&m.pairwise) {
                *g -= p;
            }
        }
        let obj = ll - 0.5 * self.l2 * dot(w, w);
        for (g, wi) in grad.iter_mut().zip(w) {
            *g -= self.l2 * wi;
        }
        (obj, grad)
    }
}

/// Result of [`train_crf`].
#[derive(Debug, Clone)]
pub struct CrfTraining {
    pub model: CrfModel,
    /// Objective after initialization and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Trains a CRF on BIO-tagged sequences over the nine-tag label set.
pub fn train_crf(
    data: &[TaggedSequence],
    feature_set: FeatureSet,
    hyper: CrfHyper,
) -> Result<CrfTraining> {
    let labels = Tag::all();
    let label_names: Vec<String> = labels.iter().map(Tag::to_string).collect();
    let prepared: Vec<LabeledSequence> = data
        .iter()
        .map(|s| {
            s.validate()?;
            let gold = s
                .tags
                .iter()
                .map(|t| labels.iter().position(|l| l == t).expect("closed tag set"))
                .collect();
            Ok((s.tokens.clone(), s.columns.clone(), gold))
        })
        .collect::<Result<_>>()?;
    train_crf_labels(&prepared, label_names, feature_set, hyper)
}

/// Trains over arbitrary label indices into `labels`.
pub fn train_crf_labels(
    data: &[LabeledSequence],
    labels: Vec<String>,
    mut feature_set: FeatureSet,
    hyper: CrfHyper,
) -> Result<CrfTraining> {
    if data.iter().all(|(t, _, _)| t.is_empty()) {
        return Err(Error::Invalid("no training tokens".into()));
    }
    if !(hyper.l2 >= 0.0 && hyper.l2.is_finite()) {
        return Err(Error::Invalid(format!("l2 must be finite and >= 0, got {}", hyper.l2)));
    }
    for (tokens, _, gold) in data {
        if gold.len() != tokens.len() || gold.iter().any(|&y| y >= labels.len()) {
            return Err(Error::Invalid("label indices inconsistent with label set".into()));
        }
    }
    feature_set.vocabulary = data
        .iter()
        .flat_map(|(t, _, _)| t.iter().map(|w| w.to_lowercase()))
        .collect();
    let mut features = BTreeSet::new();
    for (tokens, cols, _) in data {
        for i in 0..tokens.len() {
            features.extend(feature_set.extract(tokens, i, cols.get(i).map(Vec::as_slice)));
        }
    }
    let mut model = CrfModel::new(labels, feature_set, features.into_iter().collect(), hyper.l2);
    let objective = CrfObjective::new(&model, data);

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut w: Vec<f64> = (0..model.num_weights())
        .map(|_| rng.gen_range(-1e-3..1e-3))
        .collect();
    let (mut obj, mut grad) = objective.evaluate(&w);
    check_finite(obj, 0)?;
    let mut trace = vec![obj];
    let mut step = 1.0 / dot(&grad, &grad).sqrt().max(1.0);
    let mut converged = false;

    for iter in 1..=hyper.max_iterations {
        let gnorm2 = dot(&grad, &grad);
        if gnorm2.sqrt() < 1e-6 {
            converged = true;
            break;
        }
        let mut accepted = None;
        step *= 2.0;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi + step * gi).collect();
            let (cobj, cgrad) = objective.evaluate(&cand);
            if cobj.is_finite() && cobj >= obj + ARMIJO * step * gnorm2 {
                accepted = Some((cand, cobj, cgrad));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cobj, cgrad)) = accepted else {
            converged = true;
            break;
        };
        check_finite(cobj, iter)?;
        let gain = cobj - obj;
        w = cand;
        obj = cobj;
        grad = cgrad;
        trace.push(obj);
        log::debug!("crf iter {iter}: objective {obj:.6} step {step:.3e}");
        if gain.abs() <= 1e-10 * obj.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    model.set_weights(&w);
    Ok(CrfTraining {
        model,
        objective_trace: trace,
        converged,
    })
}

fn check_finite(obj: f64, iter: usize) -> Result<()> {
    if obj.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "CRF objective became {obj} at iteration {iter}; try a larger l2"
        )))
    }
}
