use std::collections::HashMap;

use super::bundle::ModelBundle;
use super::losses::{d_loss, denoise_loss, distill_loss, g_loss, GanForm, LossReport, LossWeights};
use crate::data::{stack_pairs, ImagePair};
use crate::diffusion::{student_forward, teacher_sample_with_noise, upsample_condition, NoiseSchedule};
use crate::error::{arg_err, Error, Result};
use crate::nn::{Discriminator, UNet};
use crate::tensor::{derive_seed, AdamState, Graph, Rng, Tensor, Var};

/// Per-step hyper-parameters of the co-learning update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    /// Adam rate for the student and G.
    pub lr: f32,
    /// Adam rate for both discriminators.
    pub disc_lr: f32,
    pub weights: LossWeights,
    pub gan_form: GanForm,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { lr: 5e-5, disc_lr: 5e-5, weights: LossWeights::default(), gan_form: GanForm::Saturating }
    }
}

/// Memoised teacher outputs: `draws` fixed noise samples per training pair,
/// each with the teacher's full-chain prediction from that noise.
#[derive(Debug, Clone, Default)]
pub struct TeacherCache {
    draws: usize,
    entries: HashMap<String, Vec<(Tensor, Tensor)>>,
}

impl TeacherCache {
    /// Runs the frozen teacher `draws` times per pair, `chunk` items per batch.
    pub fn build(
        teacher: &UNet,
        s: &NoiseSchedule,
        pairs: &[ImagePair],
        draws: usize,
        seed: u64,
        chunk: usize,
    ) -> Result<Self> {
        if draws == 0 || chunk == 0 {
            return Err(arg_err!("teacher cache needs draws >= 1 and chunk >= 1"));
        }
        let hr = teacher.spec().in_res;
        let jobs: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|i| (0..draws).map(move |k| (i, k))).collect();
        let mut entries: HashMap<String, Vec<(Tensor, Tensor)>> = HashMap::new();
        for group in jobs.chunks(chunk) {
            let ys: Vec<&Tensor> = group.iter().map(|&(i, _)| &pairs[i].lr).collect();
            let y_up = upsample_condition(&Tensor::stack(&ys)?, hr)?;
            let item = y_up.numel() / group.len();
            let mut eps = Vec::with_capacity(y_up.numel());
            for &(i, k) in group {
                let mut rng = Rng::new(derive_seed(derive_seed(seed, i as u64), k as u64));
                eps.extend((0..item).map(|_| rng.normal() as f32));
            }
            let eps = Tensor::from_vec(y_up.shape(), eps)?;
            let (x0, _) = teacher_sample_with_noise(teacher, &y_up, &eps, s, seed)?;
            for (j, &(i, _)) in group.iter().enumerate() {
                entries
                    .entry(pairs[i].id.clone())
                    .or_default()
                    .push((eps.batch_item(j)?, x0.batch_item(j)?));
            }
        }
        Ok(Self { draws, entries })
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// (ε, teacher x̂_0) for draw `k` of pair `id`.
    pub fn get(&self, id: &str, k: usize) -> Option<&(Tensor, Tensor)> {
        self.entries.get(id).and_then(|v| v.get(k))
    }
}

/// Source of distillation targets.
#[derive(Debug, Clone, Copy)]
pub enum TeacherTargets<'a> {
    /// Run the teacher chain every step on fresh noise.
    Live,
    /// Pick one of the cached noise draws per pair.
    Cached(&'a TeacherCache),
}

/// `batch` indices drawn uniformly with replacement.
pub fn sample_batch<'a>(pairs: &'a [ImagePair], batch: usize, rng: &mut Rng) -> Result<Vec<&'a ImagePair>> {
    if pairs.is_empty() || batch == 0 {
        return Err(arg_err!("need a non-empty dataset and batch >= 1"));
    }
    Ok((0..batch).map(|_| &pairs[rng.int_range(0, pairs.len() as i64 - 1) as usize]).collect())
}

fn check_finite(step: u64, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteStep { step: step as usize, what: what.to_string() })
    }
}

/// One discriminator update on detached real/fake batches; returns the pre-step loss.
fn update_discriminator(
    d: &mut Discriminator,
    opt: &mut AdamState,
    real: &Tensor,
    fake: &Tensor,
    form: GanForm,
    lr: f32,
    step: u64,
    what: &str,
) -> Result<f64> {
    let mut g = Graph::new();
    let b = d.params().bind(&mut g);
    let (r, f) = (g.constant(real), g.constant(fake));
    let sr = d.forward(&mut g, &b, r)?;
    let sf = d.forward(&mut g, &b, f)?;
    let loss = d_loss(&mut g, sr, sf, form)?;
    let v = check_finite(step, what, g.scalar_value(loss) as f64)?;
    g.backward(loss)?;
    d.params_mut().collect_grads(&g, &b);
    opt.step(d.params_mut().tensors_mut(), lr)?;
    Ok(v)
}

fn weighted_sum(g: &mut Graph, base: Var, terms: &[Var], w: f64) -> Result<Var> {
    let mut total = base;
    for &t in terms {
        let scaled = g.mul_scalar(t, w as f32);
        total = g.add(total, scaled)?;
    }
    Ok(total)
}

/// One co-learning iteration: teacher target, student prediction, G
/// prediction, D_H and D_L updates on detached fakes, then one Adam step on
/// the student and on G against the freshly updated discriminators.
pub fn train_step(
    bundle: &mut ModelBundle,
    batch: &[&ImagePair],
    cfg: &StepConfig,
    rng: &mut Rng,
    targets: TeacherTargets<'_>,
) -> Result<LossReport> {
    let report = step_gradients(bundle, batch, cfg, rng, targets)?;
    bundle.opt_student.step(bundle.student.params_mut().tensors_mut(), cfg.lr)?;
    if cfg.weights.use_lr {
        bundle.opt_down.step(bundle.downsampler.params_mut().tensors_mut(), cfg.lr)?;
    }
    bundle.step = report.step;
    Ok(report)
}

/// Everything in [`train_step`] except the student and G updates: the
/// discriminators are stepped and the student (and, with the LR loss on, G)
/// parameters are left holding their gradients.
pub fn step_gradients(
    bundle: &mut ModelBundle,
    batch: &[&ImagePair],
    cfg: &StepConfig,
    rng: &mut Rng,
    targets: TeacherTargets<'_>,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(arg_err!("batch must contain at least one pair"));
    }
    let w = cfg.weights;
    w.validate()?;
    let step = bundle.step + 1;
    let ts = &bundle.teacher_schedule;
    let t_last = ts.steps();
    let aux_w = w.factor(t_last, ts)?;
    let kappa = ts.kappa() as f32;
    let res = bundle.student.spec().in_res;

    let (x0, y) = stack_pairs(batch)?;
    let y_up = upsample_condition(&y, res)?;
    let (eps, target) = match targets {
        TeacherTargets::Live => {
            let eps = Tensor::randn(y_up.shape(), rng, 1.0)?;
            let target = if w.use_distill {
                Some(teacher_sample_with_noise(&bundle.teacher, &y_up, &eps, ts, 0)?.0)
            } else {
                None
            };
            (eps, target)
        }
        TeacherTargets::Cached(cache) => {
            let mut eps = Vec::with_capacity(batch.len());
            let mut tgt = Vec::with_capacity(batch.len());
            for p in batch {
                let k = rng.int_range(0, cache.draws() as i64 - 1) as usize;
                let (e, x) = cache
                    .get(&p.id, k)
                    .ok_or_else(|| Error::Config(format!("teacher cache has no entry for pair {}", p.id)))?;
                eps.push(e);
                tgt.push(x);
            }
            (Tensor::stack(&eps)?, Some(Tensor::stack(&tgt)?))
        }
    };
    let eps_g = Tensor::randn(x0.shape(), rng, kappa)?;

    // student prediction (graph kept open for the student loss)
    let mut gs = Graph::new();
    let bs = bundle.student.params().bind(&mut gs);
    let x_phi = student_forward(&mut gs, &bundle.student, &bs, &y_up, &eps, &bundle.student_schedule)?;
    let x_phi_val = gs.value(x_phi).clone();

    // G prediction on the detached student output
    let mut gg = Graph::new();
    let bg = bundle.downsampler.params().bind(&mut gg);
    let xin = gg.constant(&x_phi_val);
    let ein = gg.constant(&eps_g);
    let y_hat = bundle.downsampler.forward(&mut gg, &bg, xin, ein)?;
    let y_hat_val = gg.value(y_hat).clone();

    let mut report = LossReport { step, ..LossReport::default() };
    if w.use_hr {
        report.d_hr = update_discriminator(
            &mut bundle.d_hr,
            &mut bundle.opt_d_hr,
            &x0,
            &x_phi_val,
            cfg.gan_form,
            cfg.disc_lr,
            step,
            "d_hr",
        )?;
    }
    if w.use_lr {
        report.d_lr = update_discriminator(
            &mut bundle.d_lr,
            &mut bundle.opt_d_lr,
            &y,
            &y_hat_val,
            cfg.gan_form,
            cfg.disc_lr,
            step,
            "d_lr",
        )?;
    }

    // student objective
    let den_s = denoise_loss(&mut gs, x_phi, &x0, t_last, ts)?;
    let mut terms = Vec::new();
    if let (true, Some(t)) = (w.use_distill, &target) {
        let l = distill_loss(&mut gs, x_phi, t)?;
        report.distill = gs.scalar_value(l) as f64;
        terms.push(l);
    }
    if w.use_hr {
        let bd = bundle.d_hr.params().bind_frozen(&mut gs);
        let score = bundle.d_hr.forward(&mut gs, &bd, x_phi)?;
        let l = g_loss(&mut gs, score, cfg.gan_form)?;
        report.g_hr = gs.scalar_value(l) as f64;
        terms.push(l);
    }
    if w.use_lr {
        let bgf = bundle.downsampler.params().bind_frozen(&mut gs);
        let e = gs.constant(&eps_g);
        let y_s = bundle.downsampler.forward(&mut gs, &bgf, x_phi, e)?;
        let bd = bundle.d_lr.params().bind_frozen(&mut gs);
        let score = bundle.d_lr.forward(&mut gs, &bd, y_s)?;
        let l = g_loss(&mut gs, score, cfg.gan_form)?;
        report.g_lr = gs.scalar_value(l) as f64;
        terms.push(l);
    }
    let total_s = weighted_sum(&mut gs, den_s, &terms, aux_w)?;
    report.denoise_student = gs.scalar_value(den_s) as f64;
    report.total_student = gs.scalar_value(total_s) as f64;

    // downsampler objective, only trained through the LR path
    let total_g = if w.use_lr {
        let den_g = denoise_loss(&mut gg, y_hat, &y, t_last, ts)?;
        let bd = bundle.d_lr.params().bind_frozen(&mut gg);
        let score = bundle.d_lr.forward(&mut gg, &bd, y_hat)?;
        let l = g_loss(&mut gg, score, cfg.gan_form)?;
        let total = weighted_sum(&mut gg, den_g, &[l], aux_w)?;
        report.denoise_g = gg.scalar_value(den_g) as f64;
        report.total_g = gg.scalar_value(total) as f64;
        Some(total)
    } else {
        None
    };

    for (name, v) in report.terms() {
        check_finite(step, name, v)?;
    }

    bundle.student.params_mut().zero_grads();
    gs.backward(total_s)?;
    bundle.student.params_mut().collect_grads(&gs, &bs);
    if let Some(total) = total_g {
        bundle.downsampler.params_mut().zero_grads();
        gg.backward(total)?;
        bundle.downsampler.params_mut().collect_grads(&gg, &bg);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colearn::{student_total_loss, downsampler_total_loss, DownsamplerKind, LossParts};
    use crate::data::{make_dataset, DegradationConfig};
    use crate::diffusion::ScheduleParams;
    use crate::nn::ArchSpec;

    fn setup(kind: DownsamplerKind) -> (ModelBundle, Vec<ImagePair>) {
        let s = ScheduleParams::default().with_steps(4).build().unwrap();
        let mut teacher = UNet::new(ArchSpec::super_resolution(3, 32, 4).with_width(4), &mut Rng::new(2)).unwrap();
        // non-zero head so the teacher is not a pure skip
        for t in teacher.params_mut().tensors_mut() {
            let noise = Tensor::randn(t.shape(), &mut Rng::new(t.numel() as u64), 0.02).unwrap();
            *t = t.zip_map(&noise, |a, b| a + b).unwrap().with_grad();
        }
        let pairs = make_dataset(3, 32, &DegradationConfig::default(), 4).unwrap();
        (ModelBundle::new(teacher, s, kind, 1).unwrap(), pairs)
    }

    fn cfg(weights: LossWeights) -> StepConfig {
        StepConfig { lr: 1e-3, disc_lr: 1e-3, weights, gan_form: GanForm::Saturating }
    }

    #[test]
    fn teacher_is_frozen_and_everything_else_moves() {
        let (mut b, pairs) = setup(DownsamplerKind::Diffusion);
        let before = b.clone();
        let batch: Vec<&ImagePair> = pairs.iter().collect();
        let r = train_step(&mut b, &batch, &cfg(LossWeights::default()), &mut Rng::new(0), TeacherTargets::Live).unwrap();
        assert_eq!(r.step, 1);
        assert_eq!(b.step, 1);
        assert_eq!(b.teacher.params().checksum(), before.teacher.params().checksum());
        assert_ne!(b.student.params(), before.student.params());
        assert_ne!(b.downsampler.params(), before.downsampler.params());
        assert_ne!(b.d_hr.params(), before.d_hr.params());
        assert_ne!(b.d_lr.params(), before.d_lr.params());
        for (name, v) in r.terms() {
            assert!(v.is_finite() && v != 0.0, "{name} = {v}");
        }
    }

    #[test]
    fn distill_only_leaves_gan_networks_untouched() {
        for kind in [DownsamplerKind::Diffusion, DownsamplerKind::Conv] {
            let (mut b, pairs) = setup(kind);
            let before = b.clone();
            let w = LossWeights { use_hr: false, use_lr: false, ..LossWeights::default() };
            let batch: Vec<&ImagePair> = pairs.iter().collect();
            let r = train_step(&mut b, &batch, &cfg(w), &mut Rng::new(0), TeacherTargets::Live).unwrap();
            assert_eq!(b.downsampler.params(), before.downsampler.params());
            assert_eq!(b.d_hr.params(), before.d_hr.params());
            assert_eq!(b.d_lr.params(), before.d_lr.params());
            assert_ne!(b.student.params(), before.student.params());
            assert_eq!((r.d_hr, r.g_hr, r.d_lr, r.g_lr, r.denoise_g, r.total_g), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
            assert!(r.distill > 0.0);
        }
    }

    #[test]
    fn reported_totals_match_scalar_formulas() {
        let s = ScheduleParams::default().with_steps(4).build().unwrap();
        for w in [
            LossWeights::default(),
            LossWeights { lambda_override: Some(0.3), use_hr: false, ..LossWeights::default() },
            LossWeights { lambda_override: None, use_distill: false, ..LossWeights::default() },
        ] {
            let (mut b, pairs) = setup(DownsamplerKind::Diffusion);
            let batch: Vec<&ImagePair> = pairs.iter().collect();
            let r = train_step(&mut b, &batch, &cfg(w), &mut Rng::new(5), TeacherTargets::Live).unwrap();
            let parts = LossParts {
                denoise_student: r.denoise_student,
                distill: r.distill,
                g_hr: r.g_hr,
                g_lr: r.g_lr,
                denoise_g: r.denoise_g,
            };
            let st = student_total_loss(&parts, &w, 4, &s).unwrap();
            let gt = downsampler_total_loss(&parts, &w, 4, &s).unwrap();
            assert!((st - r.total_student).abs() <= 1e-5 * st.abs().max(1.0), "{st} vs {}", r.total_student);
            assert!((gt - r.total_g).abs() <= 1e-5 * gt.abs().max(1.0), "{gt} vs {}", r.total_g);
        }
    }

    #[test]
    fn lr_path_changes_student_gradient() {
        let grads = |use_lr: bool| {
            let (mut b, pairs) = setup(DownsamplerKind::Diffusion);
            let w = LossWeights { use_lr, ..LossWeights::default() };
            let batch: Vec<&ImagePair> = pairs.iter().collect();
            step_gradients(&mut b, &batch, &cfg(w), &mut Rng::new(9), TeacherTargets::Live).unwrap();
            let out: Vec<Vec<f32>> = b.student.params().tensors().iter().map(|t| t.grad.clone().unwrap()).collect();
            // the generator losses never leave gradients on the discriminators
            assert!(b.d_hr.params().tensors().iter().all(|t| t.grad.is_none()));
            assert!(b.d_lr.params().tensors().iter().all(|t| t.grad.is_none()));
            out
        };
        assert_ne!(grads(true), grads(false));
    }

    #[test]
    fn cached_targets_match_live_teacher() {
        let (b, pairs) = setup(DownsamplerKind::Diffusion);
        let cache = TeacherCache::build(&b.teacher, &b.teacher_schedule, &pairs, 2, 3, 4).unwrap();
        assert_eq!((cache.len(), cache.draws()), (3, 2));
        let (eps, target) = cache.get(&pairs[1].id, 1).unwrap();
        let y = pairs[1].lr.clone().reshape(&[1, 3, 8, 8]).unwrap();
        let y_up = upsample_condition(&y, 32).unwrap();
        let eps4 = eps.clone().reshape(&[1, 3, 32, 32]).unwrap();
        let (live, _) = teacher_sample_with_noise(&b.teacher, &y_up, &eps4, &b.teacher_schedule, 0).unwrap();
        for (a, c) in live.data().iter().zip(target.data()) {
            assert!((a - c).abs() < 1e-5);
        }

        let mut b2 = b.clone();
        let batch: Vec<&ImagePair> = pairs.iter().collect();
        let r = train_step(&mut b2, &batch, &cfg(LossWeights::default()), &mut Rng::new(1), TeacherTargets::Cached(&cache))
            .unwrap();
        assert!(r.distill > 0.0);
        assert_eq!(b2.teacher.params(), b.teacher.params());
        let stranger = make_dataset(4, 32, &DegradationConfig::default(), 99).unwrap();
        let odd: Vec<&ImagePair> = stranger[3..].iter().collect();
        let mut b3 = b.clone();
        assert!(train_step(&mut b3, &odd, &cfg(LossWeights::default()), &mut Rng::new(1), TeacherTargets::Cached(&cache)).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let (mut b, pairs) = setup(DownsamplerKind::Conv);
        let none = LossWeights { use_distill: false, use_hr: false, use_lr: false, ..LossWeights::default() };
        let batch: Vec<&ImagePair> = pairs.iter().collect();
        assert!(matches!(train_step(&mut b, &batch, &cfg(none), &mut Rng::new(0), TeacherTargets::Live), Err(Error::Config(_))));
        assert!(train_step(&mut b, &[], &cfg(LossWeights::default()), &mut Rng::new(0), TeacherTargets::Live).is_err());
        assert_eq!(b.step, 0);
    }

    #[test]
    fn deterministic_given_seed() {
        let run = || {
            let (mut b, pairs) = setup(DownsamplerKind::Diffusion);
            let mut rng = Rng::new(21);
            let mut rows = Vec::new();
            for _ in 0..3 {
                let batch = sample_batch(&pairs, 2, &mut rng).unwrap();
                rows.push(train_step(&mut b, &batch, &cfg(LossWeights::default()), &mut rng, TeacherTargets::Live).unwrap().csv_row());
            }
            (rows, b.to_checkpoint().unwrap().to_bytes())
        };
        assert_eq!(run(), run());
    }
}
