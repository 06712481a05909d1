use crate::linalg::Tensor;
use crate::{Error, Result};

use super::BlockFusionModel;

/// A dense third-order interaction tensor of shape `I × J × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearTensor(pub Tensor);

impl BilinearTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.shape.len() != 3 {
            return Err(Error::Shape(format!("expected a 3-way tensor, got shape {:?}", tensor.shape)));
        }
        if !tensor.is_finite() {
            return Err(Error::Numeric("non-finite tensor entry".into()));
        }
        Ok(BilinearTensor(tensor))
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = &self.0.shape;
        (s[0], s[1], s[2])
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, nj, nk) = self.dims();
        self.0.data[(i * nj + j) * nk + k]
    }
}

/// `y_k = Σ_i Σ_j T_ijk · x1_i · x2_j`.
pub fn bilinear_contract(t: &BilinearTensor, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
    let (ni, nj, nk) = t.dims();
    if x1.len() != ni || x2.len() != nj {
        return Err(Error::Shape(format!(
            "tensor is {ni}×{nj}×{nk}, inputs have lengths {} and {}",
            x1.len(),
            x2.len()
        )));
    }
    let mut y = vec![0.0; nk];
    for (i, &a) in x1.iter().enumerate() {
        for (j, &b) in x2.iter().enumerate() {
            let ab = a * b;
            let fiber = &t.0.data[(i * nj + j) * nk..(i * nj + j + 1) * nk];
            for (yk, &tk) in y.iter_mut().zip(fiber) {
                *yk += tk * ab;
            }
        }
    }
    Ok(y)
}

/// Materializes the interaction tensor encoded by the block decomposition:
///
/// `T_ijk = Σ_b Σ_{a,c,e} P1[i, b·r1+a] · P2[j, b·r2+c] · G_b[a,c,e] · O[b·r3+e, k]`
///
/// Size grows as `hidden² × fused`, so this is for checking small models.
pub fn assemble_full_tensor(model: &BlockFusionModel) -> BilinearTensor {
    let d = &model.dims;
    let p = &model.params;
    let (ni, nj, nk) = (d.hidden, d.hidden, d.fused);
    let (r1, r2, r3) = (d.rank_entity, d.rank_context, d.rank_out);
    let (w1, w2) = (d.blocks * r1, d.blocks * r2);
    let mut t = Tensor::zeros(&[ni, nj, nk]);
    for b in 0..d.blocks {
        // core_b contracted with O's block rows: H[a,c,k] = Σ_e G_b[a,c,e] O[b·r3+e, k]
        let mut h = vec![0.0; r1 * r2 * nk];
        for a in 0..r1 {
            for c in 0..r2 {
                for e in 0..r3 {
                    let g = p.cores.data[((b * r1 + a) * r2 + c) * r3 + e];
                    let orow = &p.out_proj.data[(b * r3 + e) * nk..(b * r3 + e + 1) * nk];
                    for k in 0..nk {
                        h[(a * r2 + c) * nk + k] += g * orow[k];
                    }
                }
            }
        }
        for i in 0..ni {
            for j in 0..nj {
                let fiber = &mut t.data[(i * nj + j) * nk..(i * nj + j + 1) * nk];
                for a in 0..r1 {
                    let pa = p.proj_entity.data[i * w1 + b * r1 + a];
                    for c in 0..r2 {
                        let pc = p.proj_context.data[j * w2 + b * r2 + c];
                        let s = pa * pc;
                        for (k, f) in fiber.iter_mut().enumerate() {
                            *f += s * h[(a * r2 + c) * nk + k];
                        }
                    }
                }
            }
        }
    }
    BilinearTensor(t)
}
