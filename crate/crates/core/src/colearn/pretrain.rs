use std::fmt;
use std::str::FromStr;

use super::bundle::{get_adam, get_schedule, get_u64, get_unet, put_adam, put_schedule, put_u64, put_unet};
use crate::data::{stack_pairs, Checkpoint, ImagePair};
use crate::diffusion::{forward_diffuse, upsample_condition, NoiseSchedule};
use crate::error::{arg_err, Error, Result};
use crate::nn::{ArchSpec, UNet};
use crate::tensor::{derive_seed, AdamState, Graph, Rng, Tensor};

/// Per-timestep weighting of the teacher's x̂_0 regression loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TeacherWeighting {
    /// Plain MSE at every t.
    #[default]
    Uniform,
    /// ᾱ_t/(1−ᾱ_t) · MSE.
    Schedule,
}

impl FromStr for TeacherWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "schedule" => Ok(Self::Schedule),
            _ => Err(Error::Config(format!("unknown teacher weighting {s:?} (expected uniform or schedule)"))),
        }
    }
}

impl fmt::Display for TeacherWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Schedule => "schedule",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub iters: u64,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
    pub log_every: u64,
    pub weighting: TeacherWeighting,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { iters: 2000, batch: 4, lr: 1e-3, seed: 0, log_every: 50, weighting: TeacherWeighting::Uniform }
    }
}

/// Teacher network mid-training, resumable from a checkpoint.
#[derive(Debug, Clone)]
pub struct TeacherState {
    pub net: UNet,
    pub adam: AdamState,
    pub schedule: NoiseSchedule,
    pub step: u64,
    pub seed: u64,
}

impl TeacherState {
    pub fn new(spec: ArchSpec, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        if spec.timesteps != schedule.steps() {
            return Err(Error::Config(format!(
                "architecture has {} timesteps, schedule has T = {}",
                spec.timesteps,
                schedule.steps()
            )));
        }
        let net = UNet::new(spec, &mut Rng::new(derive_seed(seed, u64::MAX)))?;
        let adam = AdamState::new(net.params().tensors());
        Ok(Self { net, adam, schedule, step: 0, seed })
    }

    /// One regression step on a random batch; randomness depends only on
    /// `(seed, step)`, so resumed runs replay the same sequence.
    /// Uses `cfg.batch`, `cfg.lr` and `cfg.weighting`.
    pub fn train_step(&mut self, data: &[ImagePair], cfg: &PretrainConfig) -> Result<f64> {
        if data.is_empty() || cfg.batch == 0 {
            return Err(arg_err!("teacher pretraining needs data and batch >= 1"));
        }
        let mut rng = Rng::new(derive_seed(self.seed, self.step));
        let picks: Vec<&ImagePair> =
            (0..cfg.batch).map(|_| &data[rng.int_range(0, data.len() as i64 - 1) as usize]).collect();
        let t = rng.int_range(1, self.schedule.steps() as i64) as usize;
        let (x0, y) = stack_pairs(&picks)?;
        let y_up = upsample_condition(&y, self.net.spec().in_res)?;
        let eps = Tensor::randn(x0.shape(), &mut rng, 1.0)?;
        let x_t = forward_diffuse(&x0, &y_up, t, &eps, &self.schedule)?;

        let mut g = Graph::new();
        let b = self.net.params().bind(&mut g);
        let (xv, yv) = (g.constant(&x_t), g.constant(&y_up));
        let input = g.concat_channels(&[xv, yv])?;
        let pred = self.net.forward(&mut g, &b, input, t)?;
        let truth = g.constant(&x0);
        let mse = g.mse(pred, truth)?;
        let loss = match cfg.weighting {
            TeacherWeighting::Uniform => mse,
            TeacherWeighting::Schedule => g.mul_scalar(mse, self.schedule.loss_weight(t)? as f32),
        };
        let v = g.scalar_value(loss) as f64;
        if !v.is_finite() {
            return Err(Error::NonFiniteStep { step: self.step as usize + 1, what: "denoise_loss".into() });
        }
        g.backward(loss)?;
        self.net.params_mut().collect_grads(&g, &b);
        self.adam.step(self.net.params_mut().tensors_mut(), cfg.lr)?;
        self.step += 1;
        Ok(v)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        put_u64(&mut ck, "meta/step", self.step)?;
        put_u64(&mut ck, "meta/seed", self.seed)?;
        put_schedule(&mut ck, "schedule/teacher", &self.schedule)?;
        put_unet(&mut ck, "teacher", &self.net)?;
        put_adam(&mut ck, "adam/teacher", &self.adam)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net = get_unet(ck, "teacher")?;
        let schedule = get_schedule(ck, "schedule/teacher")?;
        if net.spec().timesteps != schedule.steps() {
            return Err(Error::Config("teacher checkpoint: network and schedule disagree on T".into()));
        }
        Ok(Self {
            adam: get_adam(ck, "adam/teacher", net.params())?,
            net,
            schedule,
            step: get_u64(ck, "meta/step")?,
            seed: get_u64(ck, "meta/seed")?,
        })
    }
}

/// Trains a teacher from scratch; returns the network and `(step, mean loss)`
/// every `log_every` steps.
pub fn pretrain_teacher(
    data: &[ImagePair],
    spec: ArchSpec,
    s: &NoiseSchedule,
    cfg: &PretrainConfig,
) -> Result<(UNet, Vec<(u64, f64)>)> {
    if cfg.log_every == 0 {
        return Err(arg_err!("log_every must be >= 1"));
    }
    let mut state = TeacherState::new(spec, s.clone(), cfg.seed)?;
    let mut curve = Vec::new();
    let mut acc = 0.0;
    for _ in 0..cfg.iters {
        acc += state.train_step(data, cfg)?;
        if state.step % cfg.log_every == 0 {
            curve.push((state.step, acc / cfg.log_every as f64));
            acc = 0.0;
        }
    }
    Ok((state.net, curve))
}

/// Unweighted x̂_0 MSE averaged over every timestep and pair, with noise
/// fixed by `seed`.
pub fn denoise_eval(net: &UNet, pairs: &[ImagePair], s: &NoiseSchedule, seed: u64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(arg_err!("denoise_eval needs at least one pair"));
    }
    let refs: Vec<&ImagePair> = pairs.iter().collect();
    let (x0, y) = stack_pairs(&refs)?;
    let y_up = upsample_condition(&y, net.spec().in_res)?;
    let mut total = 0.0;
    for t in 1..=s.steps() {
        let eps = Tensor::randn(x0.shape(), &mut Rng::new(derive_seed(seed, t as u64)), 1.0)?;
        let x_t = forward_diffuse(&x0, &y_up, t, &eps, s)?;
        let mut g = Graph::new();
        let (xv, yv) = (g.constant(&x_t), g.constant(&y_up));
        let input = g.concat_channels(&[xv, yv])?;
        let pred = net.predict(g.value(input), t)?;
        total += pred.zip_map(&x0, |a, b| (a - b) * (a - b))?.mean();
    }
    Ok(total / s.steps() as f64)
}
