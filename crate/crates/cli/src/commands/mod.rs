mod ablate;
mod distill;
mod eval;
mod gen_data;
mod pretrain;
mod train;

use std::path::{Path, PathBuf};

use colearn_core::colearn::{get_schedule, get_unet};
use colearn_core::data::{read_dataset, split_train_val, Checkpoint, ImagePair, MANIFEST_NAME};
use colearn_core::diffusion::NoiseSchedule;
use colearn_core::nn::UNet;

pub use ablate::{ablate, AblationConfig, ABLATION_CONFIGS, RUNS_HEADER, SUMMARY_HEADER};
pub use distill::distill;
pub use eval::{eval, evaluate_checkpoint, evaluate_models, EvalRow, EVAL_HEADER};
pub use gen_data::gen_data;
pub use pretrain::{pretrain, PRETRAIN_HEADER};
pub use train::{build_cache, step_config, train_loop, CACHE_STREAM};

use crate::args::{Cli, Command, DataArgs};
use crate::{CliError, CliResult};

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::PretrainTeacher(a) => pretrain(&a),
        Command::Distill(a) => distill(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_NAME)
    } else {
        data.to_path_buf()
    }
}

/// Reads the dataset and splits it into (train, validation).
pub fn load_split(a: &DataArgs) -> CliResult<(Vec<ImagePair>, Vec<ImagePair>)> {
    let manifest = manifest_path(&a.data);
    if !manifest.is_file() {
        return Err(CliError::Missing(format!("dataset manifest not found: {}", manifest.display())));
    }
    let pairs = read_dataset(&manifest)?;
    let (train, val) = split_train_val(pairs, a.val_every)?;
    if train.is_empty() || val.is_empty() {
        return Err(CliError::Usage(format!(
            "--val-every {} leaves {} training and {} validation pairs; both must be non-empty",
            a.val_every,
            train.len(),
            val.len()
        )));
    }
    Ok((train, val))
}

pub fn load_checkpoint(path: &Path, what: &str) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::Missing(format!("{what} checkpoint not found: {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

/// Teacher network and schedule from a pretraining or distillation checkpoint.
pub fn load_teacher(path: &Path) -> CliResult<(UNet, NoiseSchedule)> {
    let ck = load_checkpoint(path, "teacher")?;
    Ok((get_unet(&ck, "teacher")?, get_schedule(&ck, "schedule/teacher")?))
}

/// HR resolution and channel count of the data must match the network.
fn check_resolution(net: &UNet, pairs: &[ImagePair]) -> CliResult<()> {
    let spec = net.spec();
    let shape = pairs[0].hr.shape();
    if shape[0] != spec.out_channels || shape[1] != spec.in_res || shape[2] != spec.in_res {
        return Err(CliError::Incompatible(format!(
            "checkpoint expects {}x{}x{} HR images but the data has {}x{}x{}",
            spec.out_channels, spec.in_res, spec.in_res, shape[0], shape[1], shape[2]
        )));
    }
    Ok(())
}

fn check_t_teacher(requested: Option<usize>, actual: usize) -> CliResult<()> {
    match requested {
        Some(t) if t != actual => Err(CliError::Incompatible(format!(
            "teacher schedule mismatch: checkpoint has T = {actual}, --t-teacher requested T = {t}"
        ))),
        _ => Ok(()),
    }
}

fn with_csv_extension(path: &Path) -> PathBuf {
    path.with_extension("csv")
}
