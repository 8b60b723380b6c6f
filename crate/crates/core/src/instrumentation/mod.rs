//! Gradient-flow sampling, reconstruction dumps, metrics files and
//! checkpoints.

mod checkpoint;
mod gradflow;
mod metrics;
mod recon;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradflow::{encoder_conv_weights, mean_profile, record_gradflow, spread, GradFlowSample};
pub use metrics::{gradflow_csv, metrics_csv, write_gradflow, write_metrics, GRADFLOW_HEADER, METRICS_HEADER};
pub use recon::{dump_reconstructions, encode_pnm, write_pnm, ReconReport};
