//! Optimizer, learning-rate schedule, pre-training and the alternating
//! fine-tuning of the enhancement and quality models.

mod adam;
mod finetune;
mod plan;
mod pretrain;
mod schedule;
mod steps;
mod trace;

pub use adam::{adam_step, OptimState};
pub use finetune::{alternate_finetune, FinetuneOutput, FreezeCheck};
pub use plan::{Protocol, TrainPlan};
pub use pretrain::{pretrain, pretrain_dns, pretrain_qnet, EpochRecord, PretrainOutput};
pub use schedule::{lr_schedule_update, ScheduleDecision};
pub use trace::{DataKind, Granularity, ScheduleTrace, Target, TraceStep};
