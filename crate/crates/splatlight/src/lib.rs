//! IO, file formats, drivers and the HTTP service around `splatlight-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod imageio;
pub mod pipeline;
pub mod service;
pub mod trajectory_json;
pub mod view;
