//! Objectives, optimiser, checkpoints and the training loop.

pub mod checkpoint;
pub mod losses;
pub mod optim;
pub mod plan;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrainState};
pub use optim::{clip_grad_norm, noam_lr, prosody_lr, AdamW};
pub use plan::{sample_prompt_plan, PromptPlan};
pub use trainer::{evaluate, prepare_examples, train, train_step, EvalStats, Example, StepStats};
