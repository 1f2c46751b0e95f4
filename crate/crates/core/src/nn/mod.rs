//! Reusable layers: parameters, linear/MLP blocks, dropout, attention,
//! positional encodings and the optimizer.

pub mod attention;
pub mod linear;
pub mod optim;
pub mod params;
pub mod posenc;

pub use attention::{Attention, AttentionConfig, AttentionOutput, KvSource, LogitHook};
pub use linear::{dropout, LayerNorm, Linear, Mlp};
pub use optim::{lr_schedule, Adam, AdamState};
pub use params::{Binding, ParamId, ParamStore};
pub use posenc::positional_encoding_2d;
