//! Architecture graphs: the baseline builder, the SIRe rewrite passes,
//! parameter bookkeeping and graph execution.

mod builder;
mod forward;
mod graph;
mod params;
mod passes;
mod sire;

pub use builder::{build_baseline, DROPOUT_RATE, ENCODER_WIDTHS, HIDDEN_UNITS, POOLS};
pub use forward::{ForwardPass, Mode, Network, Outputs};
pub use graph::{LayerGraph, LayerKind, LayerNode, NodeId, Tag};
pub use params::{count_parameters, init_weights, param_specs, Param, ParamStore};
pub use passes::{add_residual_connections, add_skip_connections, attach_autoencoders};
pub use sire::{all_masks, mask_text, parse_mask, SIReConfig, DEFAULT_LAMBDA, FULL_MASK};
