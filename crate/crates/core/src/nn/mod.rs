//! Dense networks trained with hand-written backpropagation and RMSprop.

mod checkpoint;
mod gradcheck;
mod mlp;
mod rmsprop;

pub use checkpoint::{
    decode_bundle, decode_net, encode_bundle, encode_net, load_bundle, save_bundle, take_named, FORMAT_VERSION,
};
pub use gradcheck::{fd_gradient, max_relative_error};
pub use mlp::{sigmoid, stack_rows, Activation, ForwardCache, Gradients, Layer, MlpNet};
pub use rmsprop::{Rmsprop, RMSPROP_DECAY, RMSPROP_EPS};

#[cfg(test)]
pub(crate) use gradcheck::assert_grad_close;
