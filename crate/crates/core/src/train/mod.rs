//! Scheduled-sampling training: schedules, optimizer, window loss and the
//! training loop.

pub mod loss;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use loss::{teacher_draws, window_loss, WindowBatch, WindowSampler};
pub use optim::{clip_gradients, global_norm, AdamConfig, AdamW};
pub use schedule::{lr_at, sampling_prob, LrSchedule, SamplingSchedule};
pub use trainer::{Event, StepRecord, TrainConfig, TrainState, Trainer, ValidRecord};
