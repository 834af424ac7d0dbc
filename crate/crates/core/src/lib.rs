//! Iterative, LLM-guided prompt refinement for physics-grounded text-to-video
//! generation.
//!
//! Each refinement round extracts the physical rules a prompt implies, finds
//! the mismatches between the prompt and a caption of the generated video,
//! and asks a reasoner for a refined prompt grounded in both, with the
//! evaluator's score of the last video steering the rewrite.

pub mod bench;
pub mod domain;
pub mod engine;
pub mod gateway;
pub mod ledger;
pub mod prompt_kit;
