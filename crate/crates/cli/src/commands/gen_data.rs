use colearn_core::data::{make_dataset, write_dataset, DegradationConfig};

use crate::args::GenDataArgs;
use crate::{CliError, CliResult};

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    if a.size < 32 || !a.size.is_power_of_two() {
        return Err(CliError::Usage(format!(
            "--size must be a power of two >= 32 (divisible by the 4x scale factor), got {}",
            a.size
        )));
    }
    if a.n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    let cfg = DegradationConfig {
        blur_sigma_range: [a.blur_min, a.blur_max],
        noise_sigma_range: [a.noise_min, a.noise_max],
        quantize_levels: (a.quantize > 0).then_some(a.quantize),
        downsample_kernel: a.kernel.into(),
    };
    cfg.validate()?;
    let pairs = make_dataset(a.n, a.size, &cfg, a.seed)?;
    let manifest = write_dataset(&a.out, &pairs)?;
    println!("wrote {} pairs to {}", pairs.len(), manifest.display());
    Ok(())
}
