//! Knowledge editing for multi-hop question answering over masked reasoning
//! paths.

pub mod error;
pub mod gateway;
pub mod knowledge;
pub mod mask_path;
pub mod prompts;
pub mod resolve;
pub mod retrieval;
pub mod selection;
pub mod seeding;
pub mod synth;
pub mod harness;
