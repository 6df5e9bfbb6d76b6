//! Shifting-sequence noise schedules, the forward (degrading) process and the
//! deterministic reverse sampler used by both the multi-step teacher and the
//! one-step student.

mod sampler;
mod schedule;

pub use sampler::{
    downsample_predict, forward_diffuse, init_state, reverse_chain, reverse_step, student_forward,
    student_predict, student_predict_with_noise, teacher_sample, teacher_sample_with_noise,
    upsample_condition, SampleTrace,
};
pub use schedule::{shift_coeffs, NoiseSchedule, ScheduleParams, BETA_START};
