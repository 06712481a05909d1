//! Scaled dot-product attention of an entity query over context slots.
//!
//! The context vector is cut into `m` equal slots. The entity embedding is
//! projected to a query, each slot to a key and a value, and the output is the
//! softmax-weighted sum of values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{add_outer, dot, mat_t_vec, softmax, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub slots: usize,
    /// `entity_dim × d_a`
    pub query: Tensor,
    /// `slot_dim × d_a`
    pub key: Tensor,
    /// `slot_dim × d_a`
    pub value: Tensor,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub query: Vec<f64>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl AttentionParams {
    pub fn init<R: Rng>(
        entity_dim: usize,
        context_dim: usize,
        slots: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_slots(context_dim, slots)?;
        let slot_dim = context_dim / slots;
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(AttentionParams {
            slots,
            query: Tensor::uniform(&[entity_dim, dim], glorot(entity_dim, dim), rng),
            key: Tensor::uniform(&[slot_dim, dim], glorot(slot_dim, dim), rng),
            value: Tensor::uniform(&[slot_dim, dim], glorot(slot_dim, dim), rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.query.cols()
    }

    pub fn slot_dim(&self) -> usize {
        self.key.rows()
    }

    pub fn zeros_like(&self) -> Self {
        AttentionParams {
            slots: self.slots,
            query: Tensor::zeros(&self.query.shape),
            key: Tensor::zeros(&self.key.shape),
            value: Tensor::zeros(&self.value.shape),
        }
    }

    pub fn forward(&self, entity: &[f64], context: &[f64]) -> Result<(Vec<f64>, AttentionCache)> {
        check_slots(context.len(), self.slots)?;
        if context.len() / self.slots != self.slot_dim() || entity.len() != self.query.rows() {
            return Err(Error::Shape(format!(
                "attention expects entity dim {} and context dim {}, got {} and {}",
                self.query.rows(),
                self.slot_dim() * self.slots,
                entity.len(),
                context.len()
            )));
        }
        let scale = 1.0 / (self.dim() as f64).sqrt();
        let query = mat_t_vec(&self.query, entity);
        let slots: Vec<&[f64]> = context.chunks_exact(self.slot_dim()).collect();
        let keys: Vec<Vec<f64>> = slots.iter().map(|s| mat_t_vec(&self.key, s)).collect();
        let values: Vec<Vec<f64>> = slots.iter().map(|s| mat_t_vec(&self.value, s)).collect();
        let scores: Vec<f64> = keys.iter().map(|k| dot(&query, k) * scale).collect();
        let weights = softmax(&scores);
        let mut out = vec![0.0; self.dim()];
        for (w, v) in weights.iter().zip(&values) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
        Ok((
            out,
            AttentionCache {
                query,
                keys,
                values,
                weights,
            },
        ))
    }

    /// Accumulates parameter gradients given `d_out = ∂L/∂output`.
    pub fn backward(
        &self,
        entity: &[f64],
        context: &[f64],
        cache: &AttentionCache,
        d_out: &[f64],
        grad: &mut AttentionParams,
    ) {
        let scale = 1.0 / (self.dim() as f64).sqrt();
        let d_weights: Vec<f64> = cache.values.iter().map(|v| dot(d_out, v)).collect();
        let mean = dot(&cache.weights, &d_weights);
        let mut d_query = vec![0.0; self.dim()];
        for (s, slot) in context.chunks_exact(self.slot_dim()).enumerate() {
            let w = cache.weights[s];
            let d_score = w * (d_weights[s] - mean) * scale;
            let d_value: Vec<f64> = d_out.iter().map(|g| w * g).collect();
            add_outer(&mut grad.value, slot, &d_value);
            let d_key: Vec<f64> = cache.query.iter().map(|q| d_score * q).collect();
            add_outer(&mut grad.key, slot, &d_key);
            for (dq, k) in d_query.iter_mut().zip(&cache.keys[s]) {
                *dq += d_score * k;
            }
        }
        add_outer(&mut grad.query, entity, &d_query);
    }
}

fn check_slots(context_dim: usize, slots: usize) -> Result<()> {
    if slots == 0 || !context_dim.is_multiple_of(slots) {
        return Err(Error::Shape(format!(
            "context dim {context_dim} is not divisible into {slots} slots"
        )));
    }
    Ok(())
}

/// Attended context vector for an entity.
pub fn attend(params: &AttentionParams, entity: &[f64], context: &[f64]) -> Result<Vec<f64>> {
    Ok(params.forward(entity, context)?.0)
}

/// `value` applied to one slot; exposed for tests of the single-slot case.
pub fn project_value(params: &AttentionParams, slot: &[f64]) -> Vec<f64> {
    mat_t_vec(&params.value, slot)
}
