//! Tensor arithmetic, seeded randomness, gate kernels and gradients.

mod gradcheck;
mod kernels;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{eval_loss, fd_check, fd_check_against, grad};
pub use kernels::{
    argmax, check_tau, entropy, gumbel_from_uniform, gumbel_softmax, gumbel_softmax_with_noise,
    sample_gumbel, softmax, softmax_in_place, softmax_rows, ProbVec, UNIFORM_GUARD,
};
pub use rng::Rng;
pub use tape::{mix, Gradients, Tape, Var, PROB_FLOOR};
pub use tensor::{matmul, Tensor};
