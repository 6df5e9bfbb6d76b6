use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use colearn_core::colearn::{DownsamplerKind, GanForm, TeacherWeighting};
use colearn_core::data::DownsampleKernel;

#[derive(Debug, Parser)]
#[command(name = "colearn", version, about = "Co-learning single-step diffusion super-resolution", args_override_self = true)]
pub struct Cli {
    /// Optional key=value file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic HR/LR pairs as PPM files plus a manifest.
    GenData(GenDataArgs),
    /// Train the multi-step teacher on the training split.
    PretrainTeacher(PretrainArgs),
    /// Distil the teacher into a one-step student with G, D_H and D_L.
    Distill(DistillArgs),
    /// Score student, teacher and baselines on the validation split.
    Eval(EvalArgs),
    /// Train and evaluate the loss/downsampler ablation grid.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Box,
    Tent,
}

impl From<KernelArg> for DownsampleKernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Box => DownsampleKernel::Box,
            KernelArg::Tent => DownsampleKernel::Tent,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// Number of HR/LR pairs.
    #[arg(long, default_value_t = 80)]
    pub n: usize,
    /// HR side length; a power of two >= 32.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    pub blur_min: f64,
    #[arg(long, default_value_t = 1.2)]
    pub blur_max: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_min: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise_max: f64,
    /// LR quantisation levels; 0 disables.
    #[arg(long, default_value_t = 64)]
    pub quantize: u32,
    #[arg(long, value_enum, default_value_t = KernelArg::Box)]
    pub kernel: KernelArg,
}

/// Dataset location and the train/validation split.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Every k-th pair (k-1, 2k-1, ...) goes to validation.
    #[arg(long, default_value_t = 5)]
    pub val_every: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    /// Teacher steps T (default 15).
    #[arg(long)]
    pub t_teacher: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    pub eta1: f64,
    #[arg(long, default_value_t = 0.9999)]
    pub eta_t: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.02)]
    pub beta_max: f64,
}

#[derive(Debug, Clone, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training curve; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Total optimiser steps (a resumed run continues up to this count).
    #[arg(long, default_value_t = 3000)]
    pub iters: u64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub log_every: u64,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = TeacherWeighting::Uniform)]
    pub weighting: TeacherWeighting,
    /// Teacher checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

/// Hyper-parameters shared by `distill` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 2000)]
    pub iters: u64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Adam rate for the student and G.
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f32,
    /// Adam rate for the discriminators (defaults to --lr).
    #[arg(long)]
    pub disc_lr: Option<f32>,
    /// Weight of the auxiliary losses, or "schedule" for ᾱ_T/(1−ᾱ_T).
    #[arg(long, default_value = "1.0", value_parser = parse_lambda)]
    pub lambda_override: LambdaArg,
    #[arg(long, default_value_t = GanForm::Saturating)]
    pub gan_form: GanForm,
    /// Cached teacher noise draws per training pair; 0 runs the teacher live.
    #[arg(long, default_value_t = 8)]
    pub teacher_draws: usize,
    /// Expected teacher steps; must match the checkpoint.
    #[arg(long)]
    pub t_teacher: Option<usize>,
    /// Student steps; only 1 is supported.
    #[arg(long, default_value_t = 1)]
    pub t_student: usize,
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaArg(pub Option<f64>);

fn parse_lambda(s: &str) -> Result<LambdaArg, String> {
    if s == "schedule" {
        return Ok(LambdaArg(None));
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(LambdaArg(Some(v))),
        _ => Err(format!("expected a non-negative number or \"schedule\", got {s:?}")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Teacher checkpoint from pretrain-teacher.
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub no_distill: bool,
    #[arg(long)]
    pub no_hr: bool,
    #[arg(long)]
    pub no_lr: bool,
    #[arg(long, default_value_t = DownsamplerKind::Diffusion)]
    pub downsampler: DownsamplerKind,
    /// Distillation checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Distillation or teacher checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub teacher: PathBuf,
    /// Directory for per-run checkpoints, loss logs and result tables.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of seeds per configuration.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// First seed; run i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated subset of configurations (default: all five).
    #[arg(long, value_delimiter = ',')]
    pub configs: Vec<String>,
    #[command(flatten)]
    pub train: TrainArgs,
}
