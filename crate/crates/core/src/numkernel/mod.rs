//! Dense numeric kernel: tensors, a reverse-mode tape, MLP / bi-LSTM layers,
//! and Adam.

mod checkpoint;
mod nn;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{write_atomic, ParamSnapshot, CHECKPOINT_VERSION};
pub use nn::{
    attention_pool, bilstm_encode, input, mlp_apply, BiLstm, Encoded, LstmDirection, Mlp,
};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tape::{OpKind, Tape, Var};
pub use tensor::{l2_normalize, sigmoid, softmax, softmax_slice, Tensor};

/// Bias-corrected Adam step over every parameter in `store`.
pub fn adam_step(
    store: &mut ParamStore,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> crate::Result<()> {
    store.adam_step(&AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    })
}
