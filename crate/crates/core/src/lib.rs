//! A VGG-style baseline CNN, the SIRe rewrite passes that extend it with
//! interlaced auto-encoders, short residual and long skip connections, and
//! the machinery to train, evaluate and instrument the resulting networks.
//!
//! The typical flow:
//!
//! ```no_run
//! use sire_core::data::Dataset;
//! use sire_core::netgraph::{build_baseline, Network, SIReConfig};
//! use sire_core::training::{train, TrainConfig};
//!
//! let data = Dataset::load_mnist("data/mnist").unwrap();
//! let baseline = build_baseline(data.input_shape(), data.meta.classes).unwrap();
//! let graph = SIReConfig::full(0.2).apply(&baseline).unwrap();
//! let mut net = Network::new(graph, 7);
//! let record = train(&mut net, &data, &TrainConfig::constrained(7)).unwrap();
//! println!("test top-1 error {:.2}%", record.test.top1_error);
//! ```

pub mod ablation;
pub mod config;
pub mod data;
mod error;
pub mod instrumentation;
pub mod netgraph;
pub mod training;

pub use error::{Error, Result};
