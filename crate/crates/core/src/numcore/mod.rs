//! Dense tensors, a reverse-mode tape, parameter storage and SGD.

pub mod graph;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Var};
pub use params::{
    init_embedding, init_uniform, init_weight, sgd_step, Grad, GradStore, ParamId, ParamStore,
};
pub use tensor::{log_sum_exp, Scalar, Tensor};
