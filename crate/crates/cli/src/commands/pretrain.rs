use colearn_core::colearn::{denoise_eval, PretrainConfig, TeacherState};
use colearn_core::diffusion::ScheduleParams;
use colearn_core::nn::ArchSpec;

use super::{check_resolution, check_t_teacher, load_checkpoint, load_split, with_csv_extension};
use crate::args::PretrainArgs;
use crate::csv::CsvLog;
use crate::{CliError, CliResult};

pub const PRETRAIN_HEADER: &str = "step,denoise_loss";

pub fn pretrain(a: &PretrainArgs) -> CliResult<()> {
    if a.batch == 0 || a.log_every == 0 || !(a.lr > 0.0) {
        return Err(CliError::Usage("--batch and --log-every must be >= 1 and --lr > 0".into()));
    }
    let (train, val) = load_split(&a.data)?;
    let csv_path = a.csv.clone().unwrap_or_else(|| with_csv_extension(&a.out));

    let (mut state, mut log) = match &a.resume {
        Some(path) => {
            let state = TeacherState::from_checkpoint(&load_checkpoint(path, "teacher")?)?;
            check_t_teacher(a.schedule.t_teacher, state.schedule.steps())?;
            if state.step % a.log_every != 0 {
                return Err(CliError::Incompatible(format!(
                    "checkpoint step {} is not a multiple of --log-every {}",
                    state.step, a.log_every
                )));
            }
            let log = CsvLog::resume(&csv_path, PRETRAIN_HEADER, state.step)?;
            (state, log)
        }
        None => {
            let sp = &a.schedule;
            let t = sp.t_teacher.unwrap_or(15);
            if t == 0 {
                return Err(CliError::Usage("--t-teacher must be >= 1".into()));
            }
            let schedule =
                ScheduleParams { steps: t, eta1: sp.eta1, eta_t: sp.eta_t, kappa: sp.kappa, beta_max: sp.beta_max }
                    .build()?;
            let c = train[0].hr.shape()[0];
            let res = train[0].hr.shape()[1];
            let spec = ArchSpec::super_resolution(c, res, t).with_width(a.width);
            (TeacherState::new(spec, schedule, a.seed)?, CsvLog::create(&csv_path, PRETRAIN_HEADER)?)
        }
    };
    check_resolution(&state.net, &train)?;

    let cfg = PretrainConfig {
        iters: a.iters,
        batch: a.batch,
        lr: a.lr,
        seed: state.seed,
        log_every: a.log_every,
        weighting: a.weighting,
    };
    let mut acc = 0.0;
    while state.step < a.iters {
        acc += state.train_step(&train, &cfg)?;
        if state.step % a.log_every == 0 {
            let mean = acc / a.log_every as f64;
            log.row(&format!("{},{}", state.step, mean))?;
            eprintln!("step {}/{} denoise_loss {mean:.6}", state.step, a.iters);
            acc = 0.0;
        }
    }
    state.to_checkpoint()?.save(&a.out)?;
    let val_loss = denoise_eval(&state.net, &val, &state.schedule, 0)?;
    println!("teacher at step {} saved to {}; validation denoise loss {val_loss:.6}", state.step, a.out.display());
    Ok(())
}
