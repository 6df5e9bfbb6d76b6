use super::NoiseSchedule;
use crate::error::{shape_err, Error, Result};
use crate::nn::{Bound, UNet};
use crate::tensor::{same_shape, Graph, Rng, Tensor, Var};

/// States visited by one reverse run, from x_T down to x_0.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub states: Vec<(usize, Tensor)>,
    pub x0_hat: Tensor,
    /// Seed of the initial-state noise.
    pub seed: u64,
    pub network_calls: u64,
}

/// x_t = (1 − η_t)·x_0 + η_t·y + κ·√η_t·ε
pub fn forward_diffuse(x0: &Tensor, y_up: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    same_shape(x0.shape(), y_up.shape(), "forward_diffuse")?;
    same_shape(x0.shape(), eps.shape(), "forward_diffuse")?;
    if t > s.steps() {
        return Err(crate::error::arg_err!("timestep {t} outside 0..={}", s.steps()));
    }
    let eta = s.eta(t);
    let (a, b, c) = ((1.0 - eta) as f32, eta as f32, (s.kappa() * eta.sqrt()) as f32);
    let data = x0
        .data()
        .iter()
        .zip(y_up.data())
        .zip(eps.data())
        .map(|((&x, &y), &e)| a * x + b * y + c * e)
        .collect();
    Tensor::from_vec(x0.shape(), data)
}

/// x_T = y + κ·√η_T·ε
pub fn init_state(y_up: &Tensor, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    same_shape(y_up.shape(), eps.shape(), "init_state")?;
    let c = (s.kappa() * s.eta(s.steps()).sqrt()) as f32;
    y_up.zip_map(eps, |y, e| y + c * e)
}

/// One deterministic reverse step `x_{t-1} = k·x̂_0 + m·x_t + j·y`.
pub fn reverse_step(x0_hat: &Tensor, x_t: &Tensor, y_up: &Tensor, t: usize, s: &NoiseSchedule) -> Result<Tensor> {
    same_shape(x0_hat.shape(), x_t.shape(), "reverse_step")?;
    same_shape(x0_hat.shape(), y_up.shape(), "reverse_step")?;
    let (k, m, j) = s.ddim_coeffs(t)?;
    let (k, m, j) = (k as f32, m as f32, j as f32);
    let data = x0_hat
        .data()
        .iter()
        .zip(x_t.data())
        .zip(y_up.data())
        .map(|((&x0, &xt), &y)| k * x0 + m * xt + j * y)
        .collect();
    Tensor::from_vec(x_t.shape(), data)
}

/// Runs the full reverse chain from `x_init` (= x_T) with an arbitrary
/// x̂_0 predictor. Returns x_0 and the visited states.
pub fn reverse_chain<F>(mut predict: F, y_up: &Tensor, x_init: Tensor, s: &NoiseSchedule) -> Result<(Tensor, Vec<(usize, Tensor)>)>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    let mut states = Vec::with_capacity(s.steps() + 1);
    let mut x = x_init;
    for t in (1..=s.steps()).rev() {
        if !x.is_finite() {
            return Err(Error::NonFiniteStep { step: t, what: "diffusion state".into() });
        }
        let x0_hat = predict(&x, t)?;
        if !x0_hat.is_finite() {
            return Err(Error::NonFiniteStep { step: t, what: "x̂_0 prediction".into() });
        }
        let next = reverse_step(&x0_hat, &x, y_up, t, s)?;
        states.push((t, x));
        x = next;
    }
    if !x.is_finite() {
        return Err(Error::NonFiniteStep { step: 0, what: "diffusion state".into() });
    }
    states.push((0, x.clone()));
    Ok((x, states))
}

/// Nearest-neighbour upsampling of LR conditions to the network's resolution.
pub fn upsample_condition(y: &Tensor, hr_res: usize) -> Result<Tensor> {
    let (_, _, h, w) = y.dims4()?;
    if h != w || hr_res % h != 0 {
        return Err(shape_err!("cannot upsample {h}x{w} condition to {hr_res}"));
    }
    y.upsample_nearest(hr_res / h)
}

fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a), g.constant(b));
    let c = g.concat_channels(&[av, bv])?;
    Ok(g.value(c).clone())
}

/// Multi-step teacher inference with explicit initial noise ε.
pub fn teacher_sample_with_noise(
    teacher: &UNet,
    y_up: &Tensor,
    eps: &Tensor,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<(Tensor, SampleTrace)> {
    let before = teacher.calls();
    let x_t = init_state(y_up, eps, s)?;
    let (x0, states) = reverse_chain(|x, t| teacher.predict(&concat(x, y_up)?, t), y_up, x_t, s)?;
    let trace = SampleTrace { states, x0_hat: x0.clone(), seed, network_calls: teacher.calls() - before };
    Ok((x0, trace))
}

/// Multi-step teacher inference from an LR batch `y`; the initial noise is
/// seeded from `rng`.
pub fn teacher_sample(teacher: &UNet, y: &Tensor, s: &NoiseSchedule, rng: &mut Rng) -> Result<(Tensor, SampleTrace)> {
    let y_up = upsample_condition(y, teacher.spec().in_res)?;
    let seed = rng.next_u64();
    let eps = Tensor::randn(y_up.shape(), &mut Rng::new(seed), 1.0)?;
    teacher_sample_with_noise(teacher, &y_up, &eps, s, seed)
}

/// Records the one-step student prediction x̂_φ = f_φ(concat(x_T, y↑), T).
pub fn student_forward(
    g: &mut Graph,
    student: &UNet,
    bound: &Bound,
    y_up: &Tensor,
    eps: &Tensor,
    s_student: &NoiseSchedule,
) -> Result<Var> {
    if s_student.steps() != 1 {
        return Err(crate::error::arg_err!("student schedule must have T = 1, got {}", s_student.steps()));
    }
    let x_t = init_state(y_up, eps, s_student)?;
    let xv = g.constant(&x_t);
    let yv = g.constant(y_up);
    let input = g.concat_channels(&[xv, yv])?;
    student.forward(g, bound, input, s_student.steps())
}

/// Single-evaluation student inference from an LR batch.
pub fn student_predict(student: &UNet, y: &Tensor, rng: &mut Rng, s_student: &NoiseSchedule) -> Result<Tensor> {
    let y_up = upsample_condition(y, student.spec().in_res)?;
    let eps = Tensor::randn(y_up.shape(), rng, 1.0)?;
    student_predict_with_noise(student, &y_up, &eps, s_student)
}

pub fn student_predict_with_noise(student: &UNet, y_up: &Tensor, eps: &Tensor, s_student: &NoiseSchedule) -> Result<Tensor> {
    let mut g = Graph::new();
    let b = student.params().bind_frozen(&mut g);
    let out = student_forward(&mut g, student, &b, y_up, eps, s_student)?;
    let x = g.value(out).clone();
    if !x.is_finite() {
        return Err(Error::NonFiniteStep { step: 1, what: "student prediction".into() });
    }
    Ok(x)
}

/// ŷ = G(concat(x̂, ε′)) with ε′ ~ N(0, κ²I) drawn at HR.
pub fn downsample_predict(down: &UNet, x_hat: &Tensor, rng: &mut Rng, kappa: f32) -> Result<Tensor> {
    let eps = Tensor::randn(x_hat.shape(), rng, kappa)?;
    let mut g = Graph::new();
    let b = down.params().bind_frozen(&mut g);
    let x = g.constant(x_hat);
    let e = g.constant(&eps);
    let input = g.concat_channels(&[x, e])?;
    let y = down.forward(&mut g, &b, input, 1)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchSpec;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::new(15, 0.001, 0.9999, 1.0, 0.02).unwrap()
    }

    #[test]
    fn forward_endpoints() {
        let mut rng = Rng::new(0);
        let x0 = Tensor::randn(&[1, 1, 4, 4], &mut rng, 1.0).unwrap();
        let y = Tensor::randn(&[1, 1, 4, 4], &mut rng, 1.0).unwrap();
        let eps = Tensor::randn(&[1, 1, 4, 4], &mut rng, 1.0).unwrap();
        let s = sched();
        assert_eq!(forward_diffuse(&x0, &y, 0, &eps, &s).unwrap(), x0);

        let full = NoiseSchedule::new(4, 0.01, 1.0, 0.7, 0.02).unwrap();
        let xt = forward_diffuse(&x0, &y, 4, &eps, &full).unwrap();
        let init = init_state(&y, &eps, &full).unwrap();
        for ((a, b), (yy, e)) in xt.data().iter().zip(init.data()).zip(y.data().iter().zip(eps.data())) {
            assert!((a - b).abs() < 1e-6);
            assert!((a - (yy + 0.7 * e)).abs() < 1e-6);
        }
        assert!(forward_diffuse(&x0, &Tensor::zeros(&[1, 1, 2, 2]), 1, &eps, &s).is_err());
    }

    #[test]
    fn init_state_examples() {
        let y = Tensor::full(&[1, 1, 2, 2], 0.3);
        let s = sched();
        assert_eq!(init_state(&y, &Tensor::zeros(&[1, 1, 2, 2]), &s).unwrap(), y);
        let forced = NoiseSchedule::from_parts(vec![0.0, 0.1, 0.25], 1.0, vec![0.01, 0.02]).unwrap();
        let x = init_state(&y, &Tensor::full(&[1, 1, 2, 2], 1.0), &forced).unwrap();
        assert!(x.data().iter().all(|&v| (v - 0.8).abs() < 1e-6));
        assert!(init_state(&y, &Tensor::zeros(&[1, 1, 4, 4]), &s).is_err());
    }

    #[test]
    fn oracle_predictor_recovers_x0() {
        let mut rng = Rng::new(21);
        let x0 = Tensor::randn(&[2, 3, 8, 8], &mut rng, 0.5).unwrap();
        let y = Tensor::randn(&[2, 3, 8, 8], &mut rng, 0.5).unwrap();
        let eps = Tensor::randn(&[2, 3, 8, 8], &mut rng, 1.0).unwrap();
        let s = sched();
        let x_t = init_state(&y, &eps, &s).unwrap();
        let (out, states) = reverse_chain(|_, _| Ok(x0.clone()), &y, x_t, &s).unwrap();
        assert_eq!(states.len(), 16);
        let err = out.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-5, "max err {err}");
    }

    #[test]
    fn teacher_with_one_step_is_one_prediction() {
        let mut rng = Rng::new(2);
        let spec = ArchSpec::super_resolution(1, 16, 1);
        let net = UNet::new(spec, &mut rng).unwrap();
        let s1 = NoiseSchedule::new(1, 0.001, 0.9999, 1.0, 0.02).unwrap();
        let y = Tensor::randn(&[1, 1, 4, 4], &mut rng, 0.5).unwrap();
        let (x0, trace) = teacher_sample(&net, &y, &s1, &mut Rng::new(5)).unwrap();
        assert_eq!(trace.states.len(), 2);
        assert_eq!(trace.network_calls, 1);
        let y_up = upsample_condition(&y, 16).unwrap();
        let eps = Tensor::randn(&[1, 1, 16, 16], &mut Rng::new(trace.seed), 1.0).unwrap();
        let direct = net.predict(&concat(&init_state(&y_up, &eps, &s1).unwrap(), &y_up).unwrap(), 1).unwrap();
        assert_eq!(x0, direct);
    }

    #[test]
    fn teacher_sampling_is_deterministic() {
        let mut rng = Rng::new(3);
        let net = UNet::new(ArchSpec::super_resolution(1, 16, 15), &mut rng).unwrap();
        let y = Tensor::randn(&[1, 1, 4, 4], &mut rng, 0.5).unwrap();
        let (a, ta) = teacher_sample(&net, &y, &sched(), &mut Rng::new(9)).unwrap();
        let (b, tb) = teacher_sample(&net, &y, &sched(), &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.states.len(), 16);
        assert_eq!(ta.network_calls, 15);
        for (sa, sb) in ta.states.iter().zip(&tb.states) {
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn student_single_call_and_skip() {
        let mut rng = Rng::new(4);
        let net = UNet::new(ArchSpec::super_resolution(3, 16, 1), &mut rng).unwrap();
        let s1 = NoiseSchedule::new(1, 0.001, 0.9999, 1.0, 0.02).unwrap();
        let y = Tensor::randn(&[2, 3, 4, 4], &mut rng, 0.5).unwrap();
        let x = student_predict(&net, &y, &mut Rng::new(1), &s1).unwrap();
        assert_eq!(net.calls(), 1);
        assert_eq!(x, y.upsample_nearest(4).unwrap());
        let again = student_predict(&net, &y, &mut Rng::new(1), &s1).unwrap();
        assert_eq!(x, again);
        assert!(student_predict(&net, &y, &mut rng, &sched()).is_err());
    }

    #[test]
    fn downsampler_output_and_skip() {
        let mut rng = Rng::new(5);
        let g_net = UNet::new(ArchSpec::downsampler(3, 32), &mut rng).unwrap();
        let x = Tensor::randn(&[2, 3, 32, 32], &mut rng, 0.5).unwrap();
        let y = downsample_predict(&g_net, &x, &mut rng, 1.0).unwrap();
        assert_eq!(y.shape(), &[2, 3, 8, 8]);
        assert_eq!(y, x.avg_pool(4).unwrap());
    }

    #[test]
    fn non_finite_state_reports_step() {
        let y = Tensor::zeros(&[1, 1, 2, 2]);
        let s = sched();
        let res = reverse_chain(
            |x, t| Ok(if t == 9 { x.map(|_| f32::NAN) } else { x.clone() }),
            &y,
            y.clone(),
            &s,
        );
        match res {
            Err(Error::NonFiniteStep { step, .. }) => assert_eq!(step, 9),
            other => panic!("{other:?}"),
        }
    }
}
