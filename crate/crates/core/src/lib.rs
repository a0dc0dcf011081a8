//! Core of a stereotype audit engine for text-to-image models.
//!
//! An agent plans a five-step tool trajectory per detection request:
//! understand the request, retrieve or extract an instruction pair, generate
//! images, classify each image into a demographic subgroup and score the
//! batch. This crate holds the domain model, the planner, the tools, the
//! backend traits with deterministic simulated backends, the instruction
//! store and the evaluation harness. It needs only `alloc`; file formats,
//! HTTP clients and the CLI live in the `stereo-audit` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backend;
pub mod domain;
pub mod evaluation;
pub mod golden;
pub mod notation;
pub mod planner;
pub mod store;
pub mod synth;
pub mod tools;
pub mod trajectory;
pub mod vocabulary;

pub use domain::{
    parse_instruction_pair, validate_subgroup, DetectionIntent, InstructionPair, Label, LabeledImage,
    SocialDimension, Subgroup,
};
pub use planner::{run_trajectory, PlannerConfig, PlannerError, StereotypeReport};
pub use tools::{DecisionRule, StereotypeScore, Verdict};
