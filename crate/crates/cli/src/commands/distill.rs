use colearn_core::colearn::{get_u64, put_u64, LossReport, ModelBundle};
use colearn_core::Error;

use super::{check_resolution, check_t_teacher, load_checkpoint, load_split, load_teacher, with_csv_extension};
use super::{build_cache, step_config, train_loop};
use crate::args::DistillArgs;
use crate::csv::CsvLog;
use crate::{CliError, CliResult};

pub fn distill(a: &DistillArgs) -> CliResult<()> {
    let cfg = step_config(&a.train, !a.no_distill, !a.no_hr, !a.no_lr)?;
    let (train, _) = load_split(&a.data)?;
    let csv_path = a.csv.clone().unwrap_or_else(|| with_csv_extension(&a.out));
    let log_every = a.train.log_every;

    let (mut bundle, mut log) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path, "distillation")?;
            let bundle = ModelBundle::from_checkpoint(&ck)?;
            let (teacher, _) = load_teacher(&a.teacher)?;
            if teacher.params().checksum() != bundle.teacher.params().checksum() {
                return Err(CliError::Incompatible("resume checkpoint was distilled from a different teacher".into()));
            }
            let seed = get_u64(&ck, "meta/run_seed")?;
            if seed != a.seed {
                return Err(CliError::Incompatible(format!("checkpoint was trained with --seed {seed}, not {}", a.seed)));
            }
            if bundle.downsampler.kind() != a.downsampler {
                return Err(CliError::Incompatible(format!(
                    "checkpoint uses the {} downsampler, not {}",
                    bundle.downsampler.kind(),
                    a.downsampler
                )));
            }
            if bundle.step % log_every != 0 {
                return Err(CliError::Incompatible(format!(
                    "checkpoint step {} is not a multiple of --log-every {log_every}",
                    bundle.step
                )));
            }
            let log = CsvLog::resume(&csv_path, LossReport::CSV_HEADER, bundle.step)?;
            (bundle, log)
        }
        None => {
            let (teacher, schedule) = load_teacher(&a.teacher)?;
            check_t_teacher(a.train.t_teacher, schedule.steps())?;
            (ModelBundle::new(teacher, schedule, a.downsampler, a.seed)?, CsvLog::create(&csv_path, LossReport::CSV_HEADER)?)
        }
    };
    check_t_teacher(a.train.t_teacher, bundle.teacher_schedule.steps())?;
    check_resolution(&bundle.teacher, &train)?;

    let cache = build_cache(&bundle, &train, a.train.teacher_draws, a.seed, cfg.weights.use_distill)?;
    let before = bundle.teacher.params().checksum();
    train_loop(&mut bundle, &train, &cfg, a.train.batch, a.train.iters, a.seed, cache.as_ref(), |r| {
        if r.step % log_every == 0 {
            log.row(&r.csv_row())?;
        }
        if r.step % 100 == 0 {
            eprintln!("step {}/{} total_student {:.6} total_G {:.6}", r.step, a.train.iters, r.total_student, r.total_g);
        }
        Ok(())
    })?;
    let after = bundle.teacher.params().checksum();
    if before != after {
        return Err(Error::Contract(format!("teacher parameters changed: {before:016x} -> {after:016x}")).into());
    }

    let mut ck = bundle.to_checkpoint()?;
    put_u64(&mut ck, "meta/run_seed", a.seed)?;
    ck.save(&a.out)?;
    println!(
        "distilled to step {} ({} downsampler); teacher checksum {after:016x} unchanged; saved {}",
        bundle.step,
        a.downsampler,
        a.out.display()
    );
    Ok(())
}
