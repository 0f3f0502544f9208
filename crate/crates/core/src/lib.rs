//! Meta-continual learning over streams of supervised NLP tasks.
//!
//! A model is split into a representation network (RLN, parameters θ) shared
//! across tasks and a per-task prediction network (PLN, parameters W).
//! [`metaobj`] meta-trains θ with the MAML-Rep or OML objective;
//! [`evalcl`] fine-tunes on target tasks in sequence and measures how much
//! of each task is forgotten by the end of the stream.

pub mod data;
pub mod error;
pub mod evalcl;
pub mod metaobj;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{Bound, Grads, ParamSet, Role};
pub use tensor::{DropoutKey, Graph, Mode, Tensor, Var};
