use std::fmt;
use std::str::FromStr;

use crate::data::Checkpoint;
use crate::diffusion::{NoiseSchedule, ScheduleParams};
use crate::error::{Error, Result};
use crate::nn::{ArchSpec, Bound, ConvDownsampler, Discriminator, ParamSet, UNet};
use crate::tensor::{derive_seed, AdamState, Graph, Rng, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsamplerKind {
    Diffusion,
    Conv,
}

impl FromStr for DownsamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(Self::Diffusion),
            "conv" => Ok(Self::Conv),
            _ => Err(Error::Config(format!("unknown downsampler {s:?} (expected diffusion or conv)"))),
        }
    }
}

impl fmt::Display for DownsamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Diffusion => "diffusion",
            Self::Conv => "conv",
        })
    }
}

/// Learnable HR→LR map G.
#[derive(Debug, Clone)]
pub enum Downsampler {
    /// U-Net on concat(x̂, ε′).
    Diffusion(UNet),
    /// Plain conv stack on x̂ alone.
    Conv(ConvDownsampler),
}

impl Downsampler {
    pub fn kind(&self) -> DownsamplerKind {
        match self {
            Self::Diffusion(_) => DownsamplerKind::Diffusion,
            Self::Conv(_) => DownsamplerKind::Conv,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Self::Diffusion(n) => n.params(),
            Self::Conv(n) => n.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Self::Diffusion(n) => n.params_mut(),
            Self::Conv(n) => n.params_mut(),
        }
    }

    /// ŷ from an HR estimate and HR-resolution noise ε′ (ignored by the conv variant).
    pub fn forward(&self, g: &mut Graph, b: &Bound, x_hat: Var, eps: Var) -> Result<Var> {
        match self {
            Self::Diffusion(n) => {
                let input = g.concat_channels(&[x_hat, eps])?;
                n.forward(g, b, input, 1)
            }
            Self::Conv(n) => n.forward(g, b, x_hat),
        }
    }
}

/// The five networks of one co-learning run with their optimizer states.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub teacher: UNet,
    pub student: UNet,
    pub downsampler: Downsampler,
    pub d_hr: Discriminator,
    pub d_lr: Discriminator,
    pub opt_student: AdamState,
    pub opt_down: AdamState,
    pub opt_d_hr: AdamState,
    pub opt_d_lr: AdamState,
    pub teacher_schedule: NoiseSchedule,
    pub student_schedule: NoiseSchedule,
    pub step: u64,
}

/// One-step schedule ending at the teacher's η_T.
pub fn student_schedule_for(teacher: &NoiseSchedule) -> Result<NoiseSchedule> {
    let p = schedule_params(teacher);
    ScheduleParams { steps: 1, ..p }.build()
}

fn schedule_params(s: &NoiseSchedule) -> ScheduleParams {
    ScheduleParams {
        steps: s.steps(),
        eta1: s.eta(1),
        eta_t: s.eta(s.steps()),
        kappa: s.kappa(),
        beta_max: s.beta(s.steps()),
    }
}

impl ModelBundle {
    /// Student copied from the teacher; G and both discriminators freshly
    /// initialised from `seed`.
    pub fn new(teacher: UNet, teacher_schedule: NoiseSchedule, kind: DownsamplerKind, seed: u64) -> Result<Self> {
        let spec = *teacher.spec();
        if spec.timesteps != teacher_schedule.steps() {
            return Err(Error::Config(format!(
                "teacher network has {} timesteps but its schedule has T = {}",
                spec.timesteps,
                teacher_schedule.steps()
            )));
        }
        let c = spec.out_channels;
        let res = spec.in_res;
        let student = teacher.one_step_copy()?;
        let student_schedule = student_schedule_for(&teacher_schedule)?;
        let mut rng = Rng::new(derive_seed(seed, 0x6d6f64656c));
        let downsampler = match kind {
            DownsamplerKind::Diffusion => {
                Downsampler::Diffusion(UNet::new(ArchSpec::downsampler(c, res).with_width(spec.width), &mut rng)?)
            }
            DownsamplerKind::Conv => Downsampler::Conv(ConvDownsampler::new(c, res, spec.width, &mut rng)?),
        };
        let d_hr = Discriminator::new(ArchSpec::discriminator(c, res).with_width(spec.width), &mut rng)?;
        let d_lr = Discriminator::new(ArchSpec::discriminator(c, res / 4).with_width(spec.width), &mut rng)?;
        Ok(Self {
            opt_student: AdamState::new(student.params().tensors()),
            opt_down: AdamState::new(downsampler.params().tensors()),
            opt_d_hr: AdamState::new(d_hr.params().tensors()),
            opt_d_lr: AdamState::new(d_lr.params().tensors()),
            teacher,
            student,
            downsampler,
            d_hr,
            d_lr,
            teacher_schedule,
            student_schedule,
            step: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        put_u64(&mut ck, "meta/step", self.step)?;
        put_schedule(&mut ck, "schedule/teacher", &self.teacher_schedule)?;
        put_unet(&mut ck, "teacher", &self.teacher)?;
        put_unet(&mut ck, "student", &self.student)?;
        match &self.downsampler {
            Downsampler::Diffusion(n) => put_unet(&mut ck, "down", n)?,
            Downsampler::Conv(n) => {
                let geom = [n.channels() as f32, n.hr_res() as f32, conv_width(n) as f32];
                ck.insert("arch/down_conv", Tensor::from_vec(&[3], geom.to_vec())?)?;
                put_params(&mut ck, "down", n.params())?;
            }
        }
        put_disc(&mut ck, "d_hr", &self.d_hr)?;
        put_disc(&mut ck, "d_lr", &self.d_lr)?;
        put_adam(&mut ck, "adam/student", &self.opt_student)?;
        put_adam(&mut ck, "adam/down", &self.opt_down)?;
        put_adam(&mut ck, "adam/d_hr", &self.opt_d_hr)?;
        put_adam(&mut ck, "adam/d_lr", &self.opt_d_lr)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let teacher_schedule = get_schedule(ck, "schedule/teacher")?;
        let teacher = get_unet(ck, "teacher")?;
        let student = get_unet(ck, "student")?;
        let downsampler = if ck.get("arch/down_conv").is_some() {
            let g = ck.require("arch/down_conv")?.data().to_vec();
            let mut n = ConvDownsampler::new(g[0] as usize, g[1] as usize, g[2] as usize, &mut Rng::new(0))?;
            get_params(ck, "down", n.params_mut())?;
            Downsampler::Conv(n)
        } else {
            Downsampler::Diffusion(get_unet(ck, "down")?)
        };
        let d_hr = get_disc(ck, "d_hr")?;
        let d_lr = get_disc(ck, "d_lr")?;
        Ok(Self {
            opt_student: get_adam(ck, "adam/student", student.params())?,
            opt_down: get_adam(ck, "adam/down", downsampler.params())?,
            opt_d_hr: get_adam(ck, "adam/d_hr", d_hr.params())?,
            opt_d_lr: get_adam(ck, "adam/d_lr", d_lr.params())?,
            student_schedule: student_schedule_for(&teacher_schedule)?,
            teacher_schedule,
            teacher,
            student,
            downsampler,
            d_hr,
            d_lr,
            step: get_u64(ck, "meta/step")?,
        })
    }
}

fn conv_width(n: &ConvDownsampler) -> usize {
    n.params().tensors()[0].shape()[0]
}

fn bits_pair(bits: u64) -> [f32; 2] {
    [f32::from_bits(bits as u32), f32::from_bits((bits >> 32) as u32)]
}

fn from_pair(v: &[f32]) -> u64 {
    v[0].to_bits() as u64 | (v[1].to_bits() as u64) << 32
}

/// Stores a u64 bit-exactly as two f32 bit patterns.
pub fn put_u64(ck: &mut Checkpoint, name: &str, v: u64) -> Result<()> {
    ck.insert(name, Tensor::from_vec(&[2], bits_pair(v).to_vec())?)
}

pub fn get_u64(ck: &Checkpoint, name: &str) -> Result<u64> {
    let t = ck.require(name)?;
    if t.shape() != [2] {
        return Err(Error::Config(format!("{name} must hold two words")));
    }
    Ok(from_pair(t.data()))
}

fn put_f64s(ck: &mut Checkpoint, name: &str, vals: &[f64]) -> Result<()> {
    let data = vals.iter().flat_map(|v| bits_pair(v.to_bits())).collect();
    ck.insert(name, Tensor::from_vec(&[vals.len(), 2], data)?)
}

fn get_f64s(ck: &Checkpoint, name: &str, n: usize) -> Result<Vec<f64>> {
    let t = ck.require(name)?;
    if t.shape() != [n, 2] {
        return Err(Error::Config(format!("{name} must have shape [{n}, 2], got {:?}", t.shape())));
    }
    Ok(t.data().chunks(2).map(|p| f64::from_bits(from_pair(p))).collect())
}

/// Schedule construction parameters, stored bit-exactly.
pub fn put_schedule(ck: &mut Checkpoint, name: &str, s: &NoiseSchedule) -> Result<()> {
    let p = schedule_params(s);
    put_f64s(ck, name, &[p.steps as f64, p.eta1, p.eta_t, p.kappa, p.beta_max])
}

pub fn get_schedule(ck: &Checkpoint, name: &str) -> Result<NoiseSchedule> {
    let v = get_f64s(ck, name, 5)?;
    ScheduleParams { steps: v[0] as usize, eta1: v[1], eta_t: v[2], kappa: v[3], beta_max: v[4] }.build()
}

fn put_params(ck: &mut Checkpoint, prefix: &str, p: &ParamSet) -> Result<()> {
    for (name, t) in p.names().iter().zip(p.tensors()) {
        ck.insert(format!("{prefix}/{name}"), t.clone())?;
    }
    Ok(())
}

fn get_params(ck: &Checkpoint, prefix: &str, p: &mut ParamSet) -> Result<()> {
    let names = p.names().to_vec();
    for (name, t) in names.iter().zip(p.tensors_mut()) {
        let src = ck.require(&format!("{prefix}/{name}"))?;
        if src.shape() != t.shape() {
            return Err(Error::Config(format!(
                "{prefix}/{name} has shape {:?}, architecture expects {:?}",
                src.shape(),
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}

pub fn put_unet(ck: &mut Checkpoint, prefix: &str, net: &UNet) -> Result<()> {
    ck.insert(format!("arch/{prefix}"), Tensor::from_vec(&[7], net.spec().to_values())?)?;
    put_params(ck, prefix, net.params())
}

pub fn get_unet(ck: &Checkpoint, prefix: &str) -> Result<UNet> {
    let spec = ArchSpec::from_values(ck.require(&format!("arch/{prefix}"))?.data())?;
    let mut net = UNet::new(spec, &mut Rng::new(0))?;
    get_params(ck, prefix, net.params_mut())?;
    Ok(net)
}

fn put_disc(ck: &mut Checkpoint, prefix: &str, d: &Discriminator) -> Result<()> {
    ck.insert(format!("arch/{prefix}"), Tensor::from_vec(&[7], d.spec().to_values())?)?;
    put_params(ck, prefix, d.params())
}

fn get_disc(ck: &Checkpoint, prefix: &str) -> Result<Discriminator> {
    let spec = ArchSpec::from_values(ck.require(&format!("arch/{prefix}"))?.data())?;
    let mut d = Discriminator::new(spec, &mut Rng::new(0))?;
    get_params(ck, prefix, d.params_mut())?;
    Ok(d)
}

pub fn put_adam(ck: &mut Checkpoint, prefix: &str, a: &AdamState) -> Result<()> {
    let [lo, hi] = bits_pair(a.step_count);
    ck.insert(format!("{prefix}/meta"), Tensor::from_vec(&[5], vec![lo, hi, a.beta1, a.beta2, a.eps])?)?;
    for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        ck.insert(format!("{prefix}/m{i}"), Tensor::from_vec(&[m.len()], m.clone())?)?;
        ck.insert(format!("{prefix}/v{i}"), Tensor::from_vec(&[v.len()], v.clone())?)?;
    }
    Ok(())
}

/// Restores optimizer moments and checks them against the parameter sizes.
pub fn get_adam(ck: &Checkpoint, prefix: &str, params: &ParamSet) -> Result<AdamState> {
    let meta = ck.require(&format!("{prefix}/meta"))?.data().to_vec();
    if meta.len() != 5 {
        return Err(Error::Config(format!("{prefix}/meta must hold 5 values")));
    }
    let mut a = AdamState::new(params.tensors());
    a.step_count = from_pair(&meta[..2]);
    (a.beta1, a.beta2, a.eps) = (meta[2], meta[3], meta[4]);
    for i in 0..a.m.len() {
        for (buf, tag) in [(&mut a.m[i], "m"), (&mut a.v[i], "v")] {
            let t = ck.require(&format!("{prefix}/{tag}{i}"))?;
            if t.numel() != buf.len() {
                return Err(Error::Config(format!("{prefix}/{tag}{i} does not match its parameter size")));
            }
            buf.copy_from_slice(t.data());
        }
    }
    Ok(a)
}
