//! Neural network building blocks: a reverse-mode autodiff tape, the frame
//! encoder / positional encoder / Transformer stack, heads, optimizers,
//! learning-rate schedules and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod graph;
pub mod model;
pub mod optim;
pub mod params;
pub mod schedule;

pub use checkpoint::Checkpoint;
pub use config::{ConvLayerConfig, EncoderConfig, ModelConfig, PositionalConfig, TransformerConfig};
pub use graph::{masked_loss_value, Graph, LossKind, Var};
pub use model::{is_backbone, BackboneOut, ClassifierHead, MaskSpec, Model, Pooling, Session};
pub use optim::{Optimizer, OptimizerKind};
pub use params::ParamStore;
pub use schedule::{LrSchedule, Plateau};
