//! Files in and out: run specifications, checkpoints, web export,
//! trajectories and keyframes.

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod formats;

pub use checkpoint::{decode_model, encode_model, load_model, save_model};
pub use config::{parse_run_spec, RunSpec};
pub use export::{export_web, web_fixture};
