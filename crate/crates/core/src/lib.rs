//! Scene ingestion, action labeling, grounded caption generation, MLLM
//! orchestration, evaluation metrics and a small temporal-memory reference.
//!
//! Coordinates are ego-centric: +x forward, +y left, yaw counterclockwise
//! about +z.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action_labeler;
pub mod analysis;
pub mod config;
pub mod eval_metrics;
pub mod geometry;
pub mod pipeline;
pub mod reasoning_orchestrator;
pub mod scene_store;
pub mod template_engine;
pub mod temporal_memory;
pub mod text;
