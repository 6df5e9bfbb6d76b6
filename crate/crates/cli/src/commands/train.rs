use colearn_core::colearn::{
    sample_batch, train_step, LossReport, LossWeights, ModelBundle, StepConfig, TeacherCache, TeacherTargets,
};
use colearn_core::data::ImagePair;
use colearn_core::tensor::derive_seed;
use colearn_core::Rng;

use crate::args::TrainArgs;
use crate::{CliError, CliResult};

/// Seed stream for the cached teacher noise draws.
pub const CACHE_STREAM: u64 = 0x6361636865;

const CACHE_CHUNK: usize = 16;

pub fn step_config(a: &TrainArgs, use_distill: bool, use_hr: bool, use_lr: bool) -> CliResult<StepConfig> {
    if a.t_student != 1 {
        return Err(CliError::Usage(format!("--t-student must be 1 (single-step student), got {}", a.t_student)));
    }
    if a.batch == 0 || a.log_every == 0 {
        return Err(CliError::Usage("--batch and --log-every must be >= 1".into()));
    }
    let disc_lr = a.disc_lr.unwrap_or(a.lr);
    if !(a.lr > 0.0) || !(disc_lr > 0.0) {
        return Err(CliError::Usage("learning rates must be > 0".into()));
    }
    let weights = LossWeights { lambda_override: a.lambda_override.0, use_distill, use_hr, use_lr };
    weights.validate()?;
    Ok(StepConfig { lr: a.lr, disc_lr, weights, gan_form: a.gan_form })
}

/// Teacher targets for `seed`; `None` when the teacher is run live or unused.
pub fn build_cache(
    bundle: &ModelBundle,
    train: &[ImagePair],
    draws: usize,
    seed: u64,
    use_distill: bool,
) -> CliResult<Option<TeacherCache>> {
    if draws == 0 || !use_distill {
        return Ok(None);
    }
    let cache = TeacherCache::build(
        &bundle.teacher,
        &bundle.teacher_schedule,
        train,
        draws,
        derive_seed(seed, CACHE_STREAM),
        CACHE_CHUNK,
    )?;
    Ok(Some(cache))
}

/// Steps `bundle` until it reaches `iters`; step `k` draws its batch and
/// noise from `derive_seed(seed, k)`, so resumed runs replay exactly.
pub fn train_loop(
    bundle: &mut ModelBundle,
    train: &[ImagePair],
    cfg: &StepConfig,
    batch: usize,
    iters: u64,
    seed: u64,
    cache: Option<&TeacherCache>,
    mut on_report: impl FnMut(&LossReport) -> CliResult<()>,
) -> CliResult<()> {
    let targets = cache.map_or(TeacherTargets::Live, TeacherTargets::Cached);
    while bundle.step < iters {
        let mut rng = Rng::new(derive_seed(seed, bundle.step));
        let picks = sample_batch(train, batch, &mut rng)?;
        let report = train_step(bundle, &picks, cfg, &mut rng, targets)?;
        on_report(&report)?;
    }
    Ok(())
}
