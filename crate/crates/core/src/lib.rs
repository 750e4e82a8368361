#![no_std]
#![doc = include_str!("../README.md")]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod dataset;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod scene;
pub mod schedule;
pub mod math;
pub mod nn;
pub mod params;
pub mod real;
pub mod raster;
pub mod shading;
pub mod shadow;
pub mod sss;
pub mod trainer;
pub mod trajectory;
