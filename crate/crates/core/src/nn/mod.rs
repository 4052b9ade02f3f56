//! Neural building blocks with hand-written backward passes.

pub mod gat;
pub mod linalg;
pub mod lstm;
pub mod mlp;

pub use gat::{gat_layer, gat_layer_backward, AttentionMode, AttentionSupport, GatCache, GatHead, GatLayerParams};
pub use linalg::{Mat, Parameters};
pub use lstm::{bilstm_backward, bilstm_fuse, BiLstm, BiLstmCache, LstmCell};
pub use mlp::{micro_score, micro_score_backward, clamp_prob, MicroCache, MicroHead, MLP_HIDDEN, PROB_CLAMP};
