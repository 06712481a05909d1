use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{add_assign, add_outer, argmax, mat_t_vec, mat_vec, softmax, Tensor};
use crate::{Error, Result, Role};

use super::attention::{AttentionCache, AttentionParams};

/// Sizes of the fusion network.
///
/// Both inputs are mapped to `hidden` units, projected into `blocks` chunks
/// of `rank_entity` and `rank_context` units, mixed per block through an
/// `rank_entity × rank_context × rank_out` core, and the concatenated block
/// outputs are mapped to `fused` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    pub hidden: usize,
    pub blocks: usize,
    pub rank_entity: usize,
    pub rank_context: usize,
    pub rank_out: usize,
    pub fused: usize,
}

impl Default for FusionDims {
    fn default() -> Self {
        FusionDims {
            hidden: 512,
            blocks: 8,
            rank_entity: 64,
            rank_context: 64,
            rank_out: 32,
            fused: 256,
        }
    }
}

impl FusionDims {
    fn validate(&self) -> Result<()> {
        let d = self;
        if [d.hidden, d.blocks, d.rank_entity, d.rank_context, d.rank_out, d.fused].contains(&0) {
            return Err(Error::Invalid(format!("fusion dimensions must be positive: {d:?}")));
        }
        Ok(())
    }
}

pub const NUM_ROLES: usize = 4;

/// All trainable tensors. Gradients use the same struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub entity_w: Tensor,
    pub entity_b: Tensor,
    pub context_w: Tensor,
    pub context_b: Tensor,
    pub proj_entity: Tensor,
    pub proj_context: Tensor,
    /// `blocks × rank_entity × rank_context × rank_out`
    pub cores: Tensor,
    pub out_proj: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub attention: Option<AttentionParams>,
}

impl FusionParams {
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![
            ("entity_w", &self.entity_w),
            ("entity_b", &self.entity_b),
            ("context_w", &self.context_w),
            ("context_b", &self.context_b),
            ("proj_entity", &self.proj_entity),
            ("proj_context", &self.proj_context),
            ("cores", &self.cores),
            ("out_proj", &self.out_proj),
            ("head_w", &self.head_w),
            ("head_b", &self.head_b),
        ];
        if let Some(a) = &self.attention {
            v.push(("attn_query", &a.query));
            v.push(("attn_key", &a.key));
            v.push(("attn_value", &a.value));
        }
        v
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v = vec![
            ("entity_w", &mut self.entity_w),
            ("entity_b", &mut self.entity_b),
            ("context_w", &mut self.context_w),
            ("context_b", &mut self.context_b),
            ("proj_entity", &mut self.proj_entity),
            ("proj_context", &mut self.proj_context),
            ("cores", &mut self.cores),
            ("out_proj", &mut self.out_proj),
            ("head_w", &mut self.head_w),
            ("head_b", &mut self.head_b),
        ];
        if let Some(a) = &mut self.attention {
            v.push(("attn_query", &mut a.query));
            v.push(("attn_key", &mut a.key));
            v.push(("attn_value", &mut a.value));
        }
        v
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(&t.shape);
        FusionParams {
            entity_w: z(&self.entity_w),
            entity_b: z(&self.entity_b),
            context_w: z(&self.context_w),
            context_b: z(&self.context_b),
            proj_entity: z(&self.proj_entity),
            proj_context: z(&self.proj_context),
            cores: z(&self.cores),
            out_proj: z(&self.out_proj),
            head_w: z(&self.head_w),
            head_b: z(&self.head_b),
            attention: self.attention.as_ref().map(AttentionParams::zeros_like),
        }
    }

    /// `self += c · other`, tensor by tensor.
    pub fn axpy(&mut self, c: f64, other: &FusionParams) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.axpy(c, b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

/// BLOCK bilinear fusion classifier over (entity, context) embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFusionModel {
    pub dims: FusionDims,
    pub entity_dim: usize,
    /// Raw context dimension (text, image, or both concatenated).
    pub context_dim: usize,
    pub dropout: f64,
    /// Per-block signed square root followed by L2 normalization.
    pub normalize: bool,
    pub params: FusionParams,
}

/// Attention settings when building a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub slots: usize,
    pub dim: usize,
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct BlockNorm {
    signed_sqrt: Vec<f64>,
    norm: f64,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
struct Trace {
    attention: Option<AttentionCache>,
    context_in: Vec<f64>,
    h_entity: Vec<f64>,
    h_context: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    w_raw: Vec<f64>,
    w: Vec<f64>,
    norms: Vec<BlockNorm>,
    dropped: Vec<f64>,
    probs: Vec<f64>,
}

impl BlockFusionModel {
    /// Random initialization. Head weights and bias start at zero, so the
    /// initial prediction is uniform over the four roles.
    pub fn init<R: Rng>(
        dims: FusionDims,
        entity_dim: usize,
        context_dim: usize,
        attention: Option<AttentionSpec>,
        dropout: f64,
        normalize: bool,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        if entity_dim == 0 || context_dim == 0 {
            return Err(Error::Invalid("input dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Invalid(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let attention = attention
            .map(|a| AttentionParams::init(entity_dim, context_dim, a.slots, a.dim, rng))
            .transpose()?;
        let ctx_in = attention.as_ref().map_or(context_dim, AttentionParams::dim);
        let d = dims;
        let (w1, w2, w3) = (d.blocks * d.rank_entity, d.blocks * d.rank_context, d.blocks * d.rank_out);
        let core_limit = (3.0 / (d.rank_entity * d.rank_context) as f64).sqrt();
        let params = FusionParams {
            entity_w: Tensor::uniform(&[entity_dim, d.hidden], glorot(entity_dim, d.hidden), rng),
            entity_b: Tensor::zeros(&[d.hidden]),
            context_w: Tensor::uniform(&[ctx_in, d.hidden], glorot(ctx_in, d.hidden), rng),
            context_b: Tensor::zeros(&[d.hidden]),
            proj_entity: Tensor::uniform(&[d.hidden, w1], glorot(d.hidden, w1), rng),
            proj_context: Tensor::uniform(&[d.hidden, w2], glorot(d.hidden, w2), rng),
            cores: Tensor::uniform(
                &[d.blocks, d.rank_entity, d.rank_context, d.rank_out],
                core_limit,
                rng,
            ),
            out_proj: Tensor::uniform(&[w3, d.fused], glorot(w3, d.fused), rng),
            head_w: Tensor::zeros(&[d.fused, NUM_ROLES]),
            head_b: Tensor::zeros(&[NUM_ROLES]),
            attention,
        };
        Ok(BlockFusionModel {
            dims,
            entity_dim,
            context_dim,
            dropout,
            normalize,
            params,
        })
    }

    /// Checks every tensor shape against the declared dimensions.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let d = &self.dims;
        let p = &self.params;
        let ctx_in = p.attention.as_ref().map_or(self.context_dim, AttentionParams::dim);
        let expect: Vec<(&str, &Tensor, Vec<usize>)> = vec![
            ("entity_w", &p.entity_w, vec![self.entity_dim, d.hidden]),
            ("entity_b", &p.entity_b, vec![d.hidden]),
            ("context_w", &p.context_w, vec![ctx_in, d.hidden]),
            ("context_b", &p.context_b, vec![d.hidden]),
            ("proj_entity", &p.proj_entity, vec![d.hidden, d.blocks * d.rank_entity]),
            ("proj_context", &p.proj_context, vec![d.hidden, d.blocks * d.rank_context]),
            ("cores", &p.cores, vec![d.blocks, d.rank_entity, d.rank_context, d.rank_out]),
            ("out_proj", &p.out_proj, vec![d.blocks * d.rank_out, d.fused]),
            ("head_w", &p.head_w, vec![d.fused, NUM_ROLES]),
            ("head_b", &p.head_b, vec![NUM_ROLES]),
        ];
        for (name, t, shape) in expect {
            if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("{name}: expected {shape:?}, got {:?}", t.shape)));
            }
        }
        if let Some(a) = &p.attention {
            if a.query.shape != [self.entity_dim, a.dim()]
                || a.slots == 0
                || a.key.shape != [self.context_dim / a.slots, a.dim()]
                || a.value.shape != a.key.shape
                || !self.context_dim.is_multiple_of(a.slots)
            {
                return Err(Error::Shape("attention tensors inconsistent with input dims".into()));
            }
        }
        if !p.is_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    fn check_inputs(&self, entity: &[f64], context: &[f64]) -> Result<()> {
        if entity.len() != self.entity_dim || context.len() != self.context_dim {
            return Err(Error::Shape(format!(
                "model expects entity dim {} and context dim {}, got {} and {}",
                self.entity_dim,
                self.context_dim,
                entity.len(),
                context.len()
            )));
        }
        Ok(())
    }

    /// The fusion sub-network on already-projected inputs of length
    /// `hidden`: block projections, per-block core contraction, output
    /// projection. With `normalize` off this equals the bilinear contraction
    /// with [`super::assemble_full_tensor`].
    pub fn fuse(&self, h_entity: &[f64], h_context: &[f64]) -> Result<Vec<f64>> {
        let h = self.dims.hidden;
        if h_entity.len() != h || h_context.len() != h {
            return Err(Error::Shape(format!(
                "fusion expects two vectors of length {h}, got {} and {}",
                h_entity.len(),
                h_context.len()
            )));
        }
        let (_, _, _, w, _) = self.fuse_parts(h_entity, h_context);
        Ok(mat_t_vec(&self.params.out_proj, &w))
    }

    #[allow(clippy::type_complexity)]
    fn fuse_parts(
        &self,
        h_entity: &[f64],
        h_context: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<BlockNorm>) {
        let d = &self.dims;
        let (r1, r2, r3) = (d.rank_entity, d.rank_context, d.rank_out);
        let u = mat_t_vec(&self.params.proj_entity, h_entity);
        let v = mat_t_vec(&self.params.proj_context, h_context);
        let mut w_raw = vec![0.0; d.blocks * r3];
        let cores = &self.params.cores.data;
        for b in 0..d.blocks {
            let out = &mut w_raw[b * r3..(b + 1) * r3];
            for a in 0..r1 {
                let ua = u[b * r1 + a];
                for c in 0..r2 {
                    let s = ua * v[b * r2 + c];
                    let core = &cores[((b * r1 + a) * r2 + c) * r3..((b * r1 + a) * r2 + c + 1) * r3];
                    for (o, g) in out.iter_mut().zip(core) {
                        *o += g * s;
                    }
                }
            }
        }
        let mut norms = Vec::new();
        let w = if self.normalize {
            let mut w = Vec::with_capacity(w_raw.len());
            for block in w_raw.chunks_exact(r3) {
                let signed_sqrt: Vec<f64> = block.iter().map(|&x| x.signum() * x.abs().sqrt()).collect();
                let norm = signed_sqrt.iter().map(|x| x * x).sum::<f64>().sqrt();
                let denom = norm.max(NORM_EPS);
                w.extend(signed_sqrt.iter().map(|x| x / denom));
                norms.push(BlockNorm { signed_sqrt, norm });
            }
            w
        } else {
            w_raw.clone()
        };
        (u, v, w_raw, w, norms)
    }

    fn run(&self, entity: &[f64], context: &[f64], mask: Option<&[f64]>) -> Result<Trace> {
        self.check_inputs(entity, context)?;
        let p = &self.params;
        let (context_in, attention) = match &p.attention {
            Some(a) => {
                let (out, cache) = a.forward(entity, context)?;
                (out, Some(cache))
            }
            None => (context.to_vec(), None),
        };
        let mut h_entity = mat_t_vec(&p.entity_w, entity);
        add_assign(&mut h_entity, &p.entity_b.data);
        let mut h_context = mat_t_vec(&p.context_w, &context_in);
        add_assign(&mut h_context, &p.context_b.data);
        let (u, v, w_raw, w, norms) = self.fuse_parts(&h_entity, &h_context);
        let mut dropped = mat_t_vec(&p.out_proj, &w);
        if let Some(m) = mask {
            if m.len() != dropped.len() {
                return Err(Error::Shape("dropout mask length".into()));
            }
            for (z, k) in dropped.iter_mut().zip(m) {
                *z *= k;
            }
        }
        let mut logits = mat_t_vec(&p.head_w, &dropped);
        add_assign(&mut logits, &p.head_b.data);
        if !logits.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric("non-finite activation".into()));
        }
        let probs = softmax(&logits);
        Ok(Trace {
            attention,
            context_in,
            h_entity,
            h_context,
            u,
            v,
            w_raw,
            w,
            norms,
            dropped,
            probs,
        })
    }

    /// Class probabilities in role order. Dropout is inactive.
    pub fn forward(&self, entity: &[f64], context: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(entity, context, None)?.probs)
    }

    /// Most probable role; exact ties go to the earlier role.
    pub fn predict(&self, entity: &[f64], context: &[f64]) -> Result<Role> {
        Ok(role_of(&self.forward(entity, context)?))
    }

    /// A training-time dropout mask over the fused vector: each unit is
    /// zeroed with probability `dropout`, survivors scaled by `1/(1-dropout)`.
    pub fn sample_mask<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.dropout);
        (0..self.dims.fused)
            .map(|_| if rng.gen::<f64>() < self.dropout { 0.0 } else { keep })
            .collect()
    }

    /// Cross-entropy `-ln p(role)` with an optional dropout mask.
    pub fn loss(&self, entity: &[f64], context: &[f64], role: Role, mask: Option<&[f64]>) -> Result<f64> {
        let t = self.run(entity, context, mask)?;
        Ok(-t.probs[role.index()].ln())
    }

    /// Cross-entropy loss; its gradient is added into `grad`.
    pub fn loss_and_grad(
        &self,
        entity: &[f64],
        context: &[f64],
        role: Role,
        mask: Option<&[f64]>,
        grad: &mut FusionParams,
    ) -> Result<f64> {
        let t = self.run(entity, context, mask)?;
        let p = &self.params;
        let d = &self.dims;
        let (r1, r2, r3) = (d.rank_entity, d.rank_context, d.rank_out);
        let loss = -t.probs[role.index()].ln();

        let mut d_logits = t.probs.clone();
        d_logits[role.index()] -= 1.0;
        add_outer(&mut grad.head_w, &t.dropped, &d_logits);
        add_assign(&mut grad.head_b.data, &d_logits);

        let mut d_z = mat_vec(&p.head_w, &d_logits);
        if let Some(m) = mask {
            for (g, k) in d_z.iter_mut().zip(m) {
                *g *= k;
            }
        }
        add_outer(&mut grad.out_proj, &t.w, &d_z);
        let mut d_w = mat_vec(&p.out_proj, &d_z);

        if self.normalize {
            for (b, bn) in t.norms.iter().enumerate() {
                let seg = &mut d_w[b * r3..(b + 1) * r3];
                let raw = &t.w_raw[b * r3..(b + 1) * r3];
                let d_s: Vec<f64> = if bn.norm > NORM_EPS {
                    let n: Vec<f64> = bn.signed_sqrt.iter().map(|x| x / bn.norm).collect();
                    let proj: f64 = n.iter().zip(seg.iter()).map(|(a, b)| a * b).sum();
                    seg.iter().zip(&n).map(|(g, ni)| (g - ni * proj) / bn.norm).collect()
                } else {
                    seg.iter().map(|g| g / NORM_EPS).collect()
                };
                for ((g, ds), &x) in seg.iter_mut().zip(d_s).zip(raw) {
                    *g = if x == 0.0 { 0.0 } else { ds / (2.0 * x.abs().sqrt()) };
                }
            }
        }

        let mut d_u = vec![0.0; d.blocks * r1];
        let mut d_v = vec![0.0; d.blocks * r2];
        let cores = &p.cores.data;
        let g_cores = &mut grad.cores.data;
        for b in 0..d.blocks {
            let dw = &d_w[b * r3..(b + 1) * r3];
            for a in 0..r1 {
                let ua = t.u[b * r1 + a];
                for c in 0..r2 {
                    let vc = t.v[b * r2 + c];
                    let base = ((b * r1 + a) * r2 + c) * r3;
                    let core = &cores[base..base + r3];
                    let gcore = &mut g_cores[base..base + r3];
                    let s = ua * vc;
                    let mut acc = 0.0;
                    for e in 0..r3 {
                        gcore[e] += s * dw[e];
                        acc += core[e] * dw[e];
                    }
                    d_u[b * r1 + a] += acc * vc;
                    d_v[b * r2 + c] += acc * ua;
                }
            }
        }
        add_outer(&mut grad.proj_entity, &t.h_entity, &d_u);
        add_outer(&mut grad.proj_context, &t.h_context, &d_v);
        let d_he = mat_vec(&p.proj_entity, &d_u);
        let d_hc = mat_vec(&p.proj_context, &d_v);
        add_outer(&mut grad.entity_w, entity, &d_he);
        add_assign(&mut grad.entity_b.data, &d_he);
        add_outer(&mut grad.context_w, &t.context_in, &d_hc);
        add_assign(&mut grad.context_b.data, &d_hc);

        if let (Some(a), Some(cache)) = (&p.attention, &t.attention) {
            let d_ctx = mat_vec(&p.context_w, &d_hc);
            let ga = grad.attention.as_mut().expect("gradient has attention");
            a.backward(entity, context, cache, &d_ctx, ga);
        }
        Ok(loss)
    }
}

/// Argmax over role probabilities, ties broken by role order.
pub fn role_of(probs: &[f64]) -> Role {
    Role::from_index(argmax(probs)).expect("four classes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> FusionDims {
        FusionDims {
            hidden: 5,
            blocks: 2,
            rank_entity: 3,
            rank_context: 2,
            rank_out: 2,
            fused: 4,
        }
    }

    #[test]
    fn zero_head_gives_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = BlockFusionModel::init(small(), 3, 4, None, 0.1, false, &mut rng).unwrap();
        let p = m.forward(&[1.0, 2.0, 3.0], &[0.5, -1.0, 0.0, 2.0]).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        let loss = m.loss(&[1.0, 2.0, 3.0], &[0.5, -1.0, 0.0, 2.0], Role::Victim, None).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn probabilities_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = BlockFusionModel::init(small(), 3, 4, None, 0.0, true, &mut rng).unwrap();
        m.params.head_w = Tensor::uniform(&[4, 4], 2.0, &mut rng);
        for _ in 0..20 {
            let e: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = m.forward(&e, &c).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn tie_break_and_argmax() {
        assert_eq!(role_of(&[0.1, 0.6, 0.2, 0.1]), Role::Villain);
        assert_eq!(role_of(&[0.4, 0.4, 0.1, 0.1]), Role::Hero);
    }

    #[test]
    fn input_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = BlockFusionModel::init(small(), 3, 4, None, 0.0, false, &mut rng).unwrap();
        assert!(matches!(m.forward(&[1.0], &[0.0; 4]), Err(Error::Shape(_))));
        assert!(m.fuse(&[0.0; 4], &[0.0; 5]).is_err());
        assert!(BlockFusionModel::init(small(), 3, 4, None, 1.0, false, &mut rng).is_err());
    }

    #[test]
    fn mask_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = FusionDims { fused: 10_000, ..small() };
        let m = BlockFusionModel::init(dims, 2, 2, None, 0.1, false, &mut rng).unwrap();
        let mask = m.sample_mask(&mut rng);
        let zeros = mask.iter().filter(|&&x| x == 0.0).count() as f64 / mask.len() as f64;
        assert!((zeros - 0.1).abs() < 0.02);
        assert!(mask.iter().all(|&x| x == 0.0 || (x - 1.0 / 0.9).abs() < 1e-15));
    }
}
