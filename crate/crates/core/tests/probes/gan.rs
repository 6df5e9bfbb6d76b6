//! Shared adversarial-mechanics probes (also used by the CLI acceptance suite).

#![allow(dead_code)]

use colearn_core::colearn::{d_loss, g_loss, train_step, DownsamplerKind, GanForm, ModelBundle, StepConfig, TeacherTargets};
use colearn_core::data::ImagePair;
use colearn_core::diffusion::{student_forward, student_predict_with_noise, upsample_condition, NoiseSchedule};
use colearn_core::nn::{ArchSpec, Discriminator, UNet};
use colearn_core::{AdamState, Graph, Rng, Tensor};

pub const SEEDS: u64 = 10;
const LR: f32 = 2e-4;
const RES: usize = 32;

pub fn bundle(seed: u64) -> ModelBundle {
    let schedule = NoiseSchedule::new(4, 0.001, 0.9999, 1.0, 0.02).unwrap();
    let teacher = UNet::new(ArchSpec::super_resolution(3, RES, 4).with_width(4), &mut Rng::new(seed)).unwrap();
    ModelBundle::new(teacher, schedule, DownsamplerKind::Diffusion, seed).unwrap()
}

pub fn pairs(seed: u64) -> Vec<ImagePair> {
    (0..2)
        .map(|i| {
            let bt = batch(&mut Rng::new(seed + i));
            let hr = bt.x0.batch_item(0).unwrap();
            let lr = bt.y.batch_item(0).unwrap();
            ImagePair { id: format!("p{i}"), hr, lr, degradation_seed: i }
        })
        .collect()
}

/// A freshly built bundle is degenerate for D_L: the copied student and the
/// initial G compose to the identity on LR images, so real and fake coincide.
/// A few joint steps move every network off its initialisation.
pub fn warmed_bundle(seed: u64) -> ModelBundle {
    let mut m = bundle(seed);
    let data = pairs(1000 + seed);
    let refs: Vec<&ImagePair> = data.iter().collect();
    let cfg = StepConfig { lr: 1e-3, disc_lr: 1e-3, ..StepConfig::default() };
    let mut rng = Rng::new(seed);
    for _ in 0..5 {
        train_step(&mut m, &refs, &cfg, &mut rng, TeacherTargets::Live).unwrap();
    }
    m
}

pub struct Batch {
    pub x0: Tensor,
    pub y: Tensor,
    pub y_up: Tensor,
    pub eps: Tensor,
    pub eps_g: Tensor,
}

pub fn batch(rng: &mut Rng) -> Batch {
    let x0 = Tensor::randn(&[2, 3, RES, RES], rng, 0.4).unwrap().map(|v| v.clamp(-1.0, 1.0));
    let y = x0.avg_pool(4).unwrap();
    let y_up = upsample_condition(&y, RES).unwrap();
    let eps = Tensor::randn(y_up.shape(), rng, 1.0).unwrap();
    let eps_g = Tensor::randn(x0.shape(), rng, 1.0).unwrap();
    Batch { x0, y, y_up, eps, eps_g }
}

fn disc_loss(d: &Discriminator, real: &Tensor, fake: &Tensor, form: GanForm) -> f32 {
    let mut g = Graph::new();
    let b = d.params().bind_frozen(&mut g);
    let (r, f) = (g.constant(real), g.constant(fake));
    let (sr, sf) = (d.forward(&mut g, &b, r).unwrap(), d.forward(&mut g, &b, f).unwrap());
    let l = d_loss(&mut g, sr, sf, form).unwrap();
    g.scalar_value(l)
}

/// Applies one Adam step to `d` on fixed batches; returns (before, after).
fn disc_step(d: &mut Discriminator, real: &Tensor, fake: &Tensor, form: GanForm) -> (f32, f32) {
    let before = disc_loss(d, real, fake, form);
    let mut g = Graph::new();
    let b = d.params().bind(&mut g);
    let (r, f) = (g.constant(real), g.constant(fake));
    let (sr, sf) = (d.forward(&mut g, &b, r).unwrap(), d.forward(&mut g, &b, f).unwrap());
    let l = d_loss(&mut g, sr, sf, form).unwrap();
    g.backward(l).unwrap();
    d.params_mut().collect_grads(&g, &b);
    let mut opt = AdamState::new(d.params().tensors());
    opt.step(d.params_mut().tensors_mut(), LR).unwrap();
    (before, disc_loss(d, real, fake, form))
}

fn student_adv(m: &ModelBundle, bt: &Batch, form: GanForm, train: bool) -> (f32, Option<ModelBundle>) {
    let mut g = Graph::new();
    let bs = if train { m.student.params().bind(&mut g) } else { m.student.params().bind_frozen(&mut g) };
    let bd = m.d_hr.params().bind_frozen(&mut g);
    let x = student_forward(&mut g, &m.student, &bs, &bt.y_up, &bt.eps, &m.student_schedule).unwrap();
    let s = m.d_hr.forward(&mut g, &bd, x).unwrap();
    let l = g_loss(&mut g, s, form).unwrap();
    let v = g.scalar_value(l);
    if !train {
        return (v, None);
    }
    g.backward(l).unwrap();
    assert!(bd.vars().iter().all(|&p| g.grad(p).is_none()), "gradient reached the frozen D_H");
    let mut next = m.clone();
    next.student.params_mut().collect_grads(&g, &bs);
    let mut opt = AdamState::new(next.student.params().tensors());
    opt.step(next.student.params_mut().tensors_mut(), LR).unwrap();
    (v, Some(next))
}

fn down_adv(m: &ModelBundle, x_phi: &Tensor, bt: &Batch, form: GanForm, train: bool) -> (f32, Option<ModelBundle>) {
    let mut g = Graph::new();
    let bg = if train { m.downsampler.params().bind(&mut g) } else { m.downsampler.params().bind_frozen(&mut g) };
    let bd = m.d_lr.params().bind_frozen(&mut g);
    let (xin, ein) = (g.constant(x_phi), g.constant(&bt.eps_g));
    let y_hat = m.downsampler.forward(&mut g, &bg, xin, ein).unwrap();
    let s = m.d_lr.forward(&mut g, &bd, y_hat).unwrap();
    let l = g_loss(&mut g, s, form).unwrap();
    let v = g.scalar_value(l);
    if !train {
        return (v, None);
    }
    g.backward(l).unwrap();
    assert!(bd.vars().iter().all(|&p| g.grad(p).is_none()), "gradient reached the frozen D_L");
    let mut next = m.clone();
    next.downsampler.params_mut().collect_grads(&g, &bg);
    let mut opt = AdamState::new(next.downsampler.params().tensors());
    opt.step(next.downsampler.params_mut().tensors_mut(), LR).unwrap();
    (v, Some(next))
}

fn downsample(m: &ModelBundle, x_phi: &Tensor, eps_g: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let b = m.downsampler.params().bind_frozen(&mut g);
    let (xin, ein) = (g.constant(x_phi), g.constant(eps_g));
    let y = m.downsampler.forward(&mut g, &b, xin, ein).unwrap();
    g.value(y).clone()
}

/// Counts, per update, the seeds in which one Adam step lowered its own
/// objective: [D_H, D_L, student vs D_H, G vs D_L]. As in training, the
/// generators step against the freshly updated discriminators.
pub fn decrease_counts(form: GanForm) -> [u64; 4] {
    let mut wins = [0u64; 4];
    for seed in 0..SEEDS {
        let mut m = warmed_bundle(100 + seed);
        let bt = batch(&mut Rng::new(seed));
        let x_phi = student_predict_with_noise(&m.student, &bt.y_up, &bt.eps, &m.student_schedule).unwrap();
        let y_hat = downsample(&m, &x_phi, &bt.eps_g);

        let (b, a) = disc_step(&mut m.d_hr, &bt.x0, &x_phi, form);
        wins[0] += (a < b) as u64;
        let (b, a) = disc_step(&mut m.d_lr, &bt.y, &y_hat, form);
        wins[1] += (a < b) as u64;

        let (b, next) = student_adv(&m, &bt, form, true);
        let (a, _) = student_adv(&next.unwrap(), &bt, form, false);
        wins[2] += (a < b) as u64;
        let (b, next) = down_adv(&m, &x_phi, &bt, form, true);
        let (a, _) = down_adv(&next.unwrap(), &x_phi, &bt, form, false);
        wins[3] += (a < b) as u64;
    }
    wins
}

/// D_H loss on a detached student output: the student receives exactly zero
/// gradient while D_H receives a non-zero one.
pub fn detached_fake_isolates_generator(seed: u64) -> bool {
    let m = bundle(seed);
    let bt = batch(&mut Rng::new(seed));
    let mut g = Graph::new();
    let bs = m.student.params().bind(&mut g);
    let bd = m.d_hr.params().bind(&mut g);
    let x = student_forward(&mut g, &m.student, &bs, &bt.y_up, &bt.eps, &m.student_schedule).unwrap();
    let fake = g.detach(x);
    let real = g.constant(&bt.x0);
    let (sr, sf) = (m.d_hr.forward(&mut g, &bd, real).unwrap(), m.d_hr.forward(&mut g, &bd, fake).unwrap());
    let l = d_loss(&mut g, sr, sf, GanForm::Saturating).unwrap();
    g.backward(l).unwrap();
    let generator_clean = bs.vars().iter().all(|&p| g.grad(p).map_or(true, |d| d.iter().all(|&v| v == 0.0)));
    let discriminator_trained = bd.vars().iter().any(|&p| g.grad(p).is_some_and(|d| d.iter().any(|&v| v != 0.0)));
    generator_clean && discriminator_trained
}
