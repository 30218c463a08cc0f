//! False-positive sampling for LiDAR 3D detection: oriented-box geometry,
//! GT/FP sample databases, FP mining, joint GT+FP augmentation, evaluation,
//! and a small trainable detector with a training harness.

pub mod augmentor;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod fp_miner;
pub mod fsutil;
pub mod geometry;
pub mod harness;
pub mod keyval;
pub mod rng;
pub mod sample_db;
pub mod toy_detector;

pub use error::{Error, Result};
