//! WaveletMixer architecture, parameters and checkpoints.

pub mod calendar;
pub mod checkpoint;
pub mod config;
pub mod network;
pub mod params;
pub mod schema;

pub use calendar::{encode_calendar, MARK_WIDTH};
pub use checkpoint::{read_checkpoint, write_checkpoint, Selection};
pub use config::{Ablations, Component, ModelConfig};
pub use network::{
    landcover_row, BatchInput, DriverSequence, ForwardOutput, FusionLayer, Mlp, ParamRegistry,
    TcMixer, WaveletBlock, WaveletMixer,
};
pub use params::{BoundParams, ParamId, ParamStore};
pub use schema::{ChannelRole, ChannelSchema, TokenLayout};
