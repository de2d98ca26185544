#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod engine;
pub mod ensemble;
pub mod enumerate;
pub mod error;
pub mod model;
pub mod neighbor;
pub mod noise;
pub mod projected;
pub mod runner;
pub mod sample;
pub mod walk;
