use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EntityInstance;
use crate::embeddings::{concat, EmbeddingTable};
use crate::{Error, Result, Role};

use super::model::{AttentionSpec, BlockFusionModel, FusionDims, FusionParams};

/// Which context is fused with the entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionSetting {
    #[serde(rename = "entity+text")]
    EntityText,
    #[serde(rename = "entity+image")]
    EntityImage,
    /// Text and image embeddings concatenated, text first.
    #[serde(rename = "entity+text_image")]
    EntityTextImage,
}

impl FusionSetting {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionSetting::EntityText => "entity+text",
            FusionSetting::EntityImage => "entity+image",
            FusionSetting::EntityTextImage => "entity+text_image",
        }
    }

    pub fn uses_text(self) -> bool {
        matches!(self, FusionSetting::EntityText | FusionSetting::EntityTextImage)
    }

    pub fn uses_image(self) -> bool {
        matches!(self, FusionSetting::EntityImage | FusionSetting::EntityTextImage)
    }
}

impl fmt::Display for FusionSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity+text" => Ok(FusionSetting::EntityText),
            "entity+image" => Ok(FusionSetting::EntityImage),
            "entity+text_image" | "entity+text+image" => Ok(FusionSetting::EntityTextImage),
            _ => Err(Error::Usage(format!(
                "unknown setting {s:?} (expected entity+text, entity+image or entity+text_image)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Passed through to text embedding extraction; recorded for provenance.
    pub max_text_length: usize,
    pub epochs: usize,
    pub seed: u64,
    pub setting: FusionSetting,
    pub attention: bool,
    pub attention_slots: usize,
    pub attention_dim: usize,
    pub dropout: f64,
    pub normalize: bool,
    pub dims: FusionDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-6,
            batch_size: 8,
            max_text_length: 512,
            epochs: 10,
            seed: 0,
            setting: FusionSetting::EntityText,
            attention: false,
            attention_slots: 8,
            attention_dim: 64,
            dropout: 0.1,
            normalize: false,
            dims: FusionDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_text_length == 0 {
            return Err(Error::Invalid("batch size and max text length must be positive".into()));
        }
        if self.attention && (self.attention_slots == 0 || self.attention_dim == 0) {
            return Err(Error::Invalid("attention slots and dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    fn attention_spec(&self) -> Option<AttentionSpec> {
        self.attention.then_some(AttentionSpec {
            slots: self.attention_slots,
            dim: self.attention_dim,
        })
    }
}

/// Entity, text and image embedding tables. Text and image are optional;
/// only the ones the setting needs are required.
#[derive(Debug, Clone)]
pub struct EmbeddingTables {
    pub entity: EmbeddingTable,
    pub text: Option<EmbeddingTable>,
    pub image: Option<EmbeddingTable>,
}

impl EmbeddingTables {
    fn text(&self) -> Result<&EmbeddingTable> {
        self.text
            .as_ref()
            .ok_or_else(|| Error::Invalid("setting needs a text embedding table".into()))
    }

    fn image(&self) -> Result<&EmbeddingTable> {
        self.image
            .as_ref()
            .ok_or_else(|| Error::Invalid("setting needs an image embedding table".into()))
    }

    pub fn context_dim(&self, setting: FusionSetting) -> Result<usize> {
        Ok(match setting {
            FusionSetting::EntityText => self.text()?.dim(),
            FusionSetting::EntityImage => self.image()?.dim(),
            FusionSetting::EntityTextImage => self.text()?.dim() + self.image()?.dim(),
        })
    }

    /// `(entity vector, context vector)` for one instance.
    pub fn inputs(&self, inst: &EntityInstance, setting: FusionSetting) -> Result<(Vec<f64>, Vec<f64>)> {
        let entity = self.entity.lookup(&inst.entity_name)?.to_vec();
        let context = match setting {
            FusionSetting::EntityText => self.text()?.lookup(inst.text_key())?.to_vec(),
            FusionSetting::EntityImage => self.image()?.lookup(inst.image_key())?.to_vec(),
            FusionSetting::EntityTextImage => concat(
                self.text()?.lookup(inst.text_key())?,
                self.image()?.lookup(inst.image_key())?,
            ),
        };
        Ok((entity, context))
    }
}

/// A trained model with its configuration and loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedFusion {
    pub model: BlockFusionModel,
    pub config: TrainConfig,
    /// Mean loss over the training set before the first update, no dropout.
    pub initial_loss: f64,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

fn derive_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds an untrained model sized for the given tables.
pub fn init_model(cfg: &TrainConfig, tables: &EmbeddingTables) -> Result<BlockFusionModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    BlockFusionModel::init(
        cfg.dims,
        tables.entity.dim(),
        tables.context_dim(cfg.setting)?,
        cfg.attention_spec(),
        cfg.dropout,
        cfg.normalize,
        &mut rng,
    )
}

/// Mini-batch SGD on mean cross-entropy.
///
/// Per-instance gradients within a batch are computed in parallel and summed
/// in batch order, so results are bitwise reproducible for a given seed.
pub fn train_fusion(
    cfg: &TrainConfig,
    instances: &[EntityInstance],
    tables: &EmbeddingTables,
) -> Result<TrainedFusion> {
    if instances.is_empty() {
        return Err(Error::Invalid("no training instances".into()));
    }
    let mut model = init_model(cfg, tables)?;
    let data: Vec<(Vec<f64>, Vec<f64>, Role)> = instances
        .iter()
        .map(|inst| tables.inputs(inst, cfg.setting).map(|(e, c)| (e, c, inst.role)))
        .collect::<Result<_>>()?;
    let n = data.len();

    let initial_loss = data
        .iter()
        .map(|(e, c, r)| model.loss(e, c, *r, None))
        .sum::<Result<f64>>()?
        / n as f64;

    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED_5EED_5EED);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let current = &model;
            let results: Vec<Result<(f64, FusionParams)>> = batch
                .par_iter()
                .map(|&i| {
                    let (e, c, r) = &data[i];
                    let mask = (current.dropout > 0.0).then(|| {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch, i));
                        current.sample_mask(&mut rng)
                    });
                    let mut g = current.params.zeros_like();
                    let loss = current.loss_and_grad(e, c, *r, mask.as_deref(), &mut g)?;
                    Ok((loss, g))
                })
                .collect();
            let mut sum: Option<FusionParams> = None;
            for res in results {
                let (loss, g) = res?;
                total += loss;
                match &mut sum {
                    None => sum = Some(g),
                    Some(s) => s.axpy(1.0, &g),
                }
            }
            let sum = sum.expect("nonempty batch");
            model
                .params
                .axpy(-cfg.learning_rate / batch.len() as f64, &sum);
        }
        let mean = total / n as f64;
        if !mean.is_finite() || !model.params.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch} (mean loss {mean}); lower the learning rate"
            )));
        }
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        loss_trace.push(mean);
    }
    Ok(TrainedFusion {
        model,
        config: cfg.clone(),
        initial_loss,
        loss_trace,
    })
}

/// Role prediction for one instance.
pub fn predict(
    model: &BlockFusionModel,
    instance: &EntityInstance,
    tables: &EmbeddingTables,
    cfg: &TrainConfig,
) -> Result<Role> {
    let (e, c) = tables.inputs(instance, cfg.setting)?;
    model.predict(&e, &c)
}
