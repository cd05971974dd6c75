//! Multi-task multilingual NMT: joint translation, masked-LM and denoising
//! auto-encoding training with temperature-based pair sampling and noise
//! ratio curricula.

pub mod corpus;
pub mod tokenizer;
pub mod noising;
pub mod seeding;
pub mod scheduling;
pub mod model;
pub mod eval;
pub mod trainer;
pub mod toy;
pub mod experiments;
