//! Distillation, adversarial and denoising losses, the joint training step
//! over teacher, student, learnable downsampler and both discriminators, and
//! teacher pretraining.

mod bundle;
mod losses;
mod pretrain;
mod step;

pub use bundle::{
    get_adam, get_schedule, get_u64, get_unet, put_adam, put_schedule, put_u64, put_unet, student_schedule_for,
    Downsampler, DownsamplerKind, ModelBundle,
};
pub use losses::{
    d_loss, denoise_loss, distill_loss, downsampler_total_loss, g_loss, student_total_loss, GanForm, LossParts,
    LossReport, LossWeights,
};
pub use pretrain::{denoise_eval, pretrain_teacher, PretrainConfig, TeacherState, TeacherWeighting};
pub use step::{sample_batch, step_gradients, train_step, StepConfig, TeacherCache, TeacherTargets};
