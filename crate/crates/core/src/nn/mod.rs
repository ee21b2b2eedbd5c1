//! Dense numeric core: arrays, forward kernels, a gradient tape, Adam, a
//! finite-difference gradient checker, and the parameter container format.

mod array;
pub mod checkpoint;
mod gradcheck;
pub mod ops;
mod optim;
mod params;
mod tape;

pub use array::NumArray;
pub use gradcheck::{grad_check, grad_check_strided, GradCheckReport};
pub use ops::{conv2d_forward, cross_entropy_loss, global_max_pool, linear_forward, softmax};
pub use optim::Adam;
pub use params::{glorot, uniform, Params};
pub use tape::{Gradients, Tape, Var};
