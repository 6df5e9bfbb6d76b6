use colearn_core::colearn::{put_u64, DownsamplerKind, LossReport, ModelBundle};

use super::eval::evaluate_student;
use super::{build_cache, check_resolution, check_t_teacher, load_split, load_teacher, step_config, train_loop};
use crate::args::AblateArgs;
use crate::csv::CsvLog;
use crate::{CliError, CliResult};

/// One row of the loss/downsampler ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationConfig {
    pub label: &'static str,
    pub downsampler: DownsamplerKind,
    pub distill: bool,
    pub hr: bool,
    pub lr: bool,
}

pub const ABLATION_CONFIGS: [AblationConfig; 5] = [
    AblationConfig { label: "diff-all", downsampler: DownsamplerKind::Diffusion, distill: true, hr: true, lr: true },
    AblationConfig { label: "conv-all", downsampler: DownsamplerKind::Conv, distill: true, hr: true, lr: true },
    AblationConfig { label: "distill+hr", downsampler: DownsamplerKind::Diffusion, distill: true, hr: true, lr: false },
    AblationConfig { label: "distill+lr", downsampler: DownsamplerKind::Diffusion, distill: true, hr: false, lr: true },
    AblationConfig { label: "distill-only", downsampler: DownsamplerKind::Diffusion, distill: true, hr: false, lr: false },
];

pub const RUNS_HEADER: &str = "config,seed,psnr,ssim,ms_ssim,frechet";
pub const SUMMARY_HEADER: &str =
    "config,downsampler,distill,hr,lr,runs,psnr_mean,psnr_std,ssim_mean,ssim_std,ms_ssim_mean,ms_ssim_std,frechet_mean,frechet_std";

fn mark(on: bool) -> &'static str {
    if on {
        "O"
    } else {
        "X"
    }
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn select(names: &[String]) -> CliResult<Vec<AblationConfig>> {
    if names.is_empty() {
        return Ok(ABLATION_CONFIGS.to_vec());
    }
    names
        .iter()
        .map(|n| {
            ABLATION_CONFIGS.iter().copied().find(|c| c.label == n).ok_or_else(|| {
                let known: Vec<&str> = ABLATION_CONFIGS.iter().map(|c| c.label).collect();
                CliError::Usage(format!("unknown ablation config {n:?}; expected one of {}", known.join(", ")))
            })
        })
        .collect()
}

pub fn ablate(a: &AblateArgs) -> CliResult<()> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be >= 1".into()));
    }
    let configs = select(&a.configs)?;
    let cfgs = configs
        .iter()
        .map(|c| step_config(&a.train, c.distill, c.hr, c.lr))
        .collect::<CliResult<Vec<_>>>()?;
    let (train, val) = load_split(&a.data)?;
    let (teacher, schedule) = load_teacher(&a.teacher)?;
    check_t_teacher(a.train.t_teacher, schedule.steps())?;
    check_resolution(&teacher, &train)?;
    std::fs::create_dir_all(&a.out_dir)?;

    let mut runs = CsvLog::create(&a.out_dir.join("runs.csv"), RUNS_HEADER)?;
    let mut scores: Vec<Vec<[f64; 4]>> = vec![Vec::new(); configs.len()];
    for i in 0..a.seeds {
        let seed = a.seed + i;
        let mut cache = None;
        for (ci, (c, cfg)) in configs.iter().zip(&cfgs).enumerate() {
            let mut bundle = ModelBundle::new(teacher.clone(), schedule.clone(), c.downsampler, seed)?;
            if cache.is_none() {
                cache = build_cache(&bundle, &train, a.train.teacher_draws, seed, c.distill)?;
            }
            let stem = format!("{}_seed{seed}", c.label);
            let mut log = CsvLog::create(&a.out_dir.join(format!("{stem}.csv")), LossReport::CSV_HEADER)?;
            train_loop(&mut bundle, &train, cfg, a.train.batch, a.train.iters, seed, cache.as_ref(), |r| {
                if r.step % a.train.log_every == 0 {
                    log.row(&r.csv_row())?;
                }
                Ok(())
            })?;
            let mut ck = bundle.to_checkpoint()?;
            put_u64(&mut ck, "meta/run_seed", seed)?;
            ck.save(a.out_dir.join(format!("{stem}.clsr")))?;

            let row = evaluate_student(&bundle.student, &bundle.teacher_schedule, &val, 0)?;
            let r = row.report;
            runs.row(&format!("{},{seed},{:.6},{:.6},{:.6},{:.6}", c.label, r.psnr, r.ssim, r.ms_ssim, r.frechet))?;
            eprintln!("{stem}: psnr {:.3} ssim {:.4} ms_ssim {:.4} frechet {:.5}", r.psnr, r.ssim, r.ms_ssim, r.frechet);
            scores[ci].push([r.psnr, r.ssim, r.ms_ssim, r.frechet]);
        }
    }

    let mut summary = CsvLog::create(&a.out_dir.join("summary.csv"), SUMMARY_HEADER)?;
    for (c, s) in configs.iter().zip(&scores) {
        let mut fields = vec![
            c.label.to_string(),
            c.downsampler.to_string(),
            mark(c.distill).into(),
            mark(c.hr).into(),
            mark(c.lr).into(),
            s.len().to_string(),
        ];
        for k in 0..4 {
            let (m, sd) = mean_std(&s.iter().map(|v| v[k]).collect::<Vec<_>>());
            fields.push(format!("{m:.6}"));
            fields.push(format!("{sd:.6}"));
        }
        summary.row(&fields.join(","))?;
        println!("{:<13} psnr {}±{}  ssim {}±{}  ms_ssim {}±{}  frechet {}±{}", c.label, fields[6], fields[7], fields[8], fields[9], fields[10], fields[11], fields[12], fields[13]);
    }
    Ok(())
}
