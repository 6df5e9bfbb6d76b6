use std::path::Path;

use colearn_core::colearn::{get_schedule, get_unet, student_schedule_for};
use colearn_core::data::{bicubic_upsample, ImagePair};
use colearn_core::diffusion::{student_predict, teacher_sample, upsample_condition, NoiseSchedule};
use colearn_core::metrics::{evaluate_set, MetricReport};
use colearn_core::nn::UNet;
use colearn_core::tensor::derive_seed;
use colearn_core::{Error, Rng, Tensor};

use super::{check_resolution, load_checkpoint, load_split};
use crate::args::{DataArgs, EvalArgs};
use crate::CliResult;

pub const EVAL_HEADER: &str = "model,psnr,ssim,ms_ssim,frechet";

/// One scored model; `calls_per_image` counts network evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub report: MetricReport,
    pub calls_per_image: Option<u64>,
}

impl EvalRow {
    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!("{},{:.6},{:.6},{:.6},{:.6}", self.model, r.psnr, r.ssim, r.ms_ssim, r.frechet)
    }
}

fn threads() -> usize {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("COLEARN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(default)
}

struct ImageOut {
    student: (Tensor, u64),
    teacher: Option<(Tensor, u64)>,
}

fn as_image(t: Tensor) -> CliResult<Tensor> {
    let s = t.shape()[1..].to_vec();
    Ok(t.reshape(&s)?.map(|v| v.clamp(-1.0, 1.0)))
}

fn predict_one(
    i: usize,
    pair: &ImagePair,
    student: &UNet,
    s_student: &NoiseSchedule,
    teacher: Option<(&UNet, &NoiseSchedule)>,
    seed: u64,
) -> CliResult<ImageOut> {
    let mut shape = vec![1];
    shape.extend_from_slice(pair.lr.shape());
    let y = pair.lr.clone().reshape(&shape)?;
    let item_seed = derive_seed(seed, i as u64);

    let before = student.calls();
    let xs = student_predict(student, &y, &mut Rng::new(derive_seed(item_seed, 0)), s_student)?;
    let student_out = (as_image(xs)?, student.calls() - before);

    let teacher_out = match teacher {
        Some((net, s)) => {
            let before = net.calls();
            let (xt, _) = teacher_sample(net, &y, s, &mut Rng::new(derive_seed(item_seed, 1)))?;
            Some((as_image(xt)?, net.calls() - before))
        }
        None => None,
    };
    Ok(ImageOut { student: student_out, teacher: teacher_out })
}

/// Per-image predictions, parallel over `COLEARN_THREADS` workers. Each
/// worker owns network clones so call counts are exact per image.
fn predict_all(
    val: &[ImagePair],
    student: &UNet,
    s_student: &NoiseSchedule,
    teacher: Option<(&UNet, &NoiseSchedule)>,
    seed: u64,
) -> CliResult<Vec<ImageOut>> {
    let workers = threads().min(val.len()).max(1);
    let mut slots: Vec<Option<CliResult<ImageOut>>> = (0..val.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let st = student.clone();
                    let tc = teacher.map(|(n, s)| (n.clone(), s));
                    (w..val.len())
                        .step_by(workers)
                        .map(|i| (i, predict_one(i, &val[i], &st, s_student, tc.as_ref().map(|(n, s)| (n, *s)), seed)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, out) in h.join().expect("evaluation worker panicked") {
                slots[i] = Some(out);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every image assigned")).collect()
}

fn single_calls(model: &str, calls: &[u64], expected: u64) -> CliResult<u64> {
    if let Some((i, &c)) = calls.iter().enumerate().find(|(_, &c)| c != expected) {
        return Err(Error::Contract(format!("{model}: image {i} used {c} network calls, expected {expected}")).into());
    }
    Ok(expected)
}

/// Scores the student on `val`; with a teacher also the reference, teacher,
/// bicubic and skip (nearest-upsampled LR) rows.
pub fn evaluate_models(
    student: &UNet,
    teacher: Option<(&UNet, &NoiseSchedule)>,
    val: &[ImagePair],
    seed: u64,
) -> CliResult<Vec<EvalRow>> {
    check_resolution(student, val)?;
    let s_student = match teacher {
        Some((_, s)) => student_schedule_for(s)?,
        None => return Err(Error::Argument("evaluation needs the teacher schedule".into()).into()),
    };
    evaluate_with(student, &s_student, teacher, val, seed)
}

fn evaluate_with(
    student: &UNet,
    s_student: &NoiseSchedule,
    teacher: Option<(&UNet, &NoiseSchedule)>,
    val: &[ImagePair],
    seed: u64,
) -> CliResult<Vec<EvalRow>> {
    let truths: Vec<Tensor> = val.iter().map(|p| p.hr.clone()).collect();
    let outs = predict_all(val, student, s_student, teacher, seed)?;
    let mut rows = Vec::new();
    rows.push(EvalRow { model: "reference".into(), report: evaluate_set(&truths, &truths)?, calls_per_image: None });

    let calls: Vec<u64> = outs.iter().map(|o| o.student.1).collect();
    let preds: Vec<Tensor> = outs.iter().map(|o| o.student.0.clone()).collect();
    rows.push(EvalRow {
        model: "student".into(),
        report: evaluate_set(&preds, &truths)?,
        calls_per_image: Some(single_calls("student", &calls, 1)?),
    });

    if let Some((_, s)) = teacher {
        let calls: Vec<u64> = outs.iter().map(|o| o.teacher.as_ref().map_or(0, |t| t.1)).collect();
        let preds: Vec<Tensor> = outs.iter().filter_map(|o| o.teacher.as_ref().map(|t| t.0.clone())).collect();
        rows.push(EvalRow {
            model: "teacher".into(),
            report: evaluate_set(&preds, &truths)?,
            calls_per_image: Some(single_calls("teacher", &calls, s.steps() as u64)?),
        });
    }

    let res = student.spec().in_res;
    let mut bicubic = Vec::with_capacity(val.len());
    let mut skip = Vec::with_capacity(val.len());
    for p in val {
        let mut shape = vec![1];
        shape.extend_from_slice(p.lr.shape());
        let y = p.lr.clone().reshape(&shape)?;
        bicubic.push(as_image(bicubic_upsample(&y, res / p.lr.shape()[1])?)?);
        skip.push(as_image(upsample_condition(&y, res)?)?);
    }
    rows.push(EvalRow { model: "bicubic".into(), report: evaluate_set(&bicubic, &truths)?, calls_per_image: Some(0) });
    rows.push(EvalRow { model: "skip".into(), report: evaluate_set(&skip, &truths)?, calls_per_image: Some(0) });
    Ok(rows)
}

/// Student-only score, used by the ablation sweep.
pub(crate) fn evaluate_student(
    student: &UNet,
    teacher_schedule: &NoiseSchedule,
    val: &[ImagePair],
    seed: u64,
) -> CliResult<EvalRow> {
    check_resolution(student, val)?;
    let s_student = student_schedule_for(teacher_schedule)?;
    let rows = evaluate_with(student, &s_student, None, val, seed)?;
    Ok(rows.into_iter().find(|r| r.model == "student").expect("student row"))
}

/// Loads a distillation checkpoint (or a teacher checkpoint, whose one-step
/// copy then stands in for the student) and scores it on the validation split.
pub fn evaluate_checkpoint(checkpoint: &Path, data: &DataArgs, seed: u64) -> CliResult<Vec<EvalRow>> {
    let ck = load_checkpoint(checkpoint, "evaluation")?;
    let (_, val) = load_split(data)?;
    let teacher = get_unet(&ck, "teacher")?;
    let schedule = get_schedule(&ck, "schedule/teacher")?;
    check_resolution(&teacher, &val)?;
    let student = if ck.get("arch/student").is_some() { get_unet(&ck, "student")? } else { teacher.one_step_copy()? };
    evaluate_models(&student, Some((&teacher, &schedule)), &val, seed)
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let rows = evaluate_checkpoint(&a.checkpoint, &a.data, a.seed)?;
    let mut text = format!("{EVAL_HEADER}\n");
    for r in &rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    match &a.csv {
        Some(path) => std::fs::write(path, &text)?,
        None => print!("{text}"),
    }
    for r in &rows {
        if let Some(c) = r.calls_per_image.filter(|&c| c > 0) {
            eprintln!("{}: {c} network call(s) per image", r.model);
        }
    }
    Ok(())
}
