//! BLOCK bilinear fusion of entity and context embeddings.
//!
//! The interaction between the projected entity vector `x¹` and context
//! vector `x²` is a bilinear map `y_k = Σᵢ Σⱼ T_ijk x¹ᵢ x²ⱼ` whose tensor is
//! constrained to a block-superdiagonal decomposition: `B` small cores with
//! factor matrices on each mode. [`bilinear_contract`] and
//! [`assemble_full_tensor`] give the dense form for checking the factored
//! forward pass.

mod attention;
mod bilinear;
pub mod checkpoint;
mod model;
mod svm;
mod train;

pub use attention::{attend, project_value, AttentionCache, AttentionParams};
pub use bilinear::{assemble_full_tensor, bilinear_contract, BilinearTensor};
pub use model::{role_of, AttentionSpec, BlockFusionModel, FusionDims, FusionParams, NUM_ROLES};
pub use svm::{hinge_objective, train_linear_svm, BinarySvm, LinearSvm, SvmHyper};
pub use train::{
    init_model, predict, train_fusion, EmbeddingTables, FusionSetting, TrainConfig, TrainedFusion,
};
