use std::fmt;
use std::str::FromStr;

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::SCORE_EPS;
use crate::tensor::{Graph, Tensor, Var};

/// Adversarial objective family shared by the HR and LR discriminators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GanForm {
    /// D minimises mean log(1−D(real)) + mean log(D(fake)); G minimises mean(1−D(fake)).
    #[default]
    Saturating,
    /// Non-saturating: D minimises −log D(real) − log(1−D(fake)); G minimises −log D(fake).
    Standard,
}

impl FromStr for GanForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saturating" => Ok(Self::Saturating),
            "standard" => Ok(Self::Standard),
            _ => Err(Error::Config(format!("unknown gan form {s:?} (expected saturating or standard)"))),
        }
    }
}

impl fmt::Display for GanForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Saturating => "saturating",
            Self::Standard => "standard",
        })
    }
}

/// Scalar factor on the auxiliary terms and the loss toggles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Replaces ᾱ_t/(1−ᾱ_t) when set.
    pub lambda_override: Option<f64>,
    pub use_distill: bool,
    pub use_hr: bool,
    pub use_lr: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_override: Some(1.0), use_distill: true, use_hr: true, use_lr: true }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda_override {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda_override must be finite and >= 0, got {l}")));
            }
        }
        if !(self.use_distill || self.use_hr || self.use_lr) {
            return Err(Error::Config("at least one of distill, HR and LR losses must be enabled".into()));
        }
        Ok(())
    }

    /// W: the override if set, else ᾱ_t/(1−ᾱ_t).
    pub fn factor(&self, t: usize, s: &NoiseSchedule) -> Result<f64> {
        match self.lambda_override {
            Some(l) => Ok(l),
            None => s.loss_weight(t),
        }
    }
}

/// Scalar loss terms of one step; disabled terms are 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub step: u64,
    pub distill: f64,
    pub d_hr: f64,
    pub g_hr: f64,
    pub d_lr: f64,
    pub g_lr: f64,
    pub denoise_student: f64,
    pub denoise_g: f64,
    pub total_student: f64,
    pub total_g: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "step,distill,d_hr,g_hr,d_lr,g_lr,denoise_student,denoise_G,total_student,total_G";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.distill,
            self.d_hr,
            self.g_hr,
            self.d_lr,
            self.g_lr,
            self.denoise_student,
            self.denoise_g,
            self.total_student,
            self.total_g
        )
    }

    /// (name, value) of every term, in CSV order.
    pub fn terms(&self) -> [(&'static str, f64); 9] {
        [
            ("distill", self.distill),
            ("d_hr", self.d_hr),
            ("g_hr", self.g_hr),
            ("d_lr", self.d_lr),
            ("g_lr", self.g_lr),
            ("denoise_student", self.denoise_student),
            ("denoise_G", self.denoise_g),
            ("total_student", self.total_student),
            ("total_G", self.total_g),
        ]
    }
}

/// MSE between the student output and a constant teacher target.
pub fn distill_loss(g: &mut Graph, x_student: Var, x_teacher: &Tensor) -> Result<Var> {
    let t = g.constant(x_teacher);
    g.mse(x_student, t)
}

fn check_scores(g: &Graph, v: Var, what: &str) -> Result<()> {
    if let Some(bad) = g.value(v).data().iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
        return Err(Error::Contract(format!("{what} score {bad} outside (0, 1)")));
    }
    Ok(())
}

fn safe_log(g: &mut Graph, v: Var) -> Var {
    let c = g.clamp(v, SCORE_EPS, 1.0 - SCORE_EPS);
    g.log(c)
}

/// Discriminator objective on per-sample scores; used for both D_H and D_L.
pub fn d_loss(g: &mut Graph, real: Var, fake: Var, form: GanForm) -> Result<Var> {
    check_scores(g, real, "real")?;
    check_scores(g, fake, "fake")?;
    let (a, b) = match form {
        GanForm::Saturating => {
            let inv = g.one_minus(real);
            (safe_log(g, inv), safe_log(g, fake))
        }
        GanForm::Standard => {
            let lr = safe_log(g, real);
            let inv = g.one_minus(fake);
            let lf = safe_log(g, inv);
            (g.mul_scalar(lr, -1.0), g.mul_scalar(lf, -1.0))
        }
    };
    let (ma, mb) = (g.mean(a), g.mean(b));
    g.add(ma, mb)
}

/// Generator objective on the scores of generated samples.
pub fn g_loss(g: &mut Graph, fake: Var, form: GanForm) -> Result<Var> {
    check_scores(g, fake, "fake")?;
    let per = match form {
        GanForm::Saturating => g.one_minus(fake),
        GanForm::Standard => {
            let l = safe_log(g, fake);
            g.mul_scalar(l, -1.0)
        }
    };
    Ok(g.mean(per))
}

/// (ᾱ_t/(1−ᾱ_t)) · mse(x_pred, x_true).
pub fn denoise_loss(g: &mut Graph, x_pred: Var, x_true: &Tensor, t: usize, s: &NoiseSchedule) -> Result<Var> {
    let w = s.loss_weight(t)?;
    let truth = g.constant(x_true);
    let m = g.mse(x_pred, truth)?;
    Ok(g.mul_scalar(m, w as f32))
}

/// Loss values entering the two total objectives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub denoise_student: f64,
    pub distill: f64,
    pub g_hr: f64,
    pub g_lr: f64,
    pub denoise_g: f64,
}

/// denoise_student + W·(distill·[use_distill] + g_hr·[use_hr] + g_lr·[use_lr]).
pub fn student_total_loss(p: &LossParts, w: &LossWeights, t: usize, s: &NoiseSchedule) -> Result<f64> {
    w.validate()?;
    let f = w.factor(t, s)?;
    let on = |b: bool, v: f64| if b { v } else { 0.0 };
    Ok(p.denoise_student + f * (on(w.use_distill, p.distill) + on(w.use_hr, p.g_hr) + on(w.use_lr, p.g_lr)))
}

/// denoise_G + W·g_lr·[use_lr].
pub fn downsampler_total_loss(p: &LossParts, w: &LossWeights, t: usize, s: &NoiseSchedule) -> Result<f64> {
    w.validate()?;
    let f = w.factor(t, s)?;
    Ok(p.denoise_g + if w.use_lr { f * p.g_lr } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleParams;

    fn scores(g: &mut Graph, v: &[f32]) -> Var {
        let t = Tensor::from_vec(&[v.len()], v.to_vec()).unwrap();
        g.param(&t)
    }

    #[test]
    fn distill_values_and_gradient() {
        let mut g = Graph::new();
        let s = g.param(&Tensor::zeros(&[2, 3]));
        let l = distill_loss(&mut g, s, &Tensor::full(&[2, 3], 1.0)).unwrap();
        assert_eq!(g.scalar_value(l), 1.0);

        let mut g = Graph::new();
        let xs = Tensor::from_vec(&[4], vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let xt = Tensor::from_vec(&[4], vec![0.1, 0.0, 1.0, 0.5]).unwrap();
        let s = g.param(&xs);
        let l = distill_loss(&mut g, s, &xt).unwrap();
        g.backward(l).unwrap();
        for ((gr, a), b) in g.grad(s).unwrap().iter().zip(xs.data()).zip(xt.data()) {
            assert!((gr - 2.0 * (a - b) / 4.0).abs() < 1e-6);
        }
        let mut g = Graph::new();
        let s = g.param(&xs);
        let same = distill_loss(&mut g, s, &xs).unwrap();
        assert_eq!(g.scalar_value(same), 0.0);
        assert!(distill_loss(&mut g, s, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn d_loss_hand_values() {
        let mut g = Graph::new();
        let (r, f) = (scores(&mut g, &[0.5, 0.5]), scores(&mut g, &[0.5, 0.5]));
        let l = d_loss(&mut g, r, f, GanForm::Saturating).unwrap();
        assert!((g.scalar_value(l) as f64 - 2.0 * 0.5f64.ln()).abs() < 1e-6);

        let mut g = Graph::new();
        let (r, f) = (scores(&mut g, &[1.0 - 1e-6]), scores(&mut g, &[1e-6]));
        let l = d_loss(&mut g, r, f, GanForm::Saturating).unwrap();
        assert!((g.scalar_value(l) as f64 - 2.0 * 1e-6f64.ln()).abs() < 0.05);

        let mut g = Graph::new();
        let (r, f) = (scores(&mut g, &[0.9]), scores(&mut g, &[0.1]));
        let l = d_loss(&mut g, r, f, GanForm::Saturating).unwrap();
        assert!((g.scalar_value(l) as f64 - 2.0 * 0.1f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn d_loss_swap_symmetry() {
        let (r, f) = ([0.2f32, 0.7, 0.9], [0.4f32, 0.35, 0.05]);
        let mut g = Graph::new();
        let (a, b) = (scores(&mut g, &r), scores(&mut g, &f));
        let l1 = d_loss(&mut g, a, b, GanForm::Saturating).unwrap();
        let (r2, f2): (Vec<f32>, Vec<f32>) = (f.iter().map(|v| 1.0 - v).collect(), r.iter().map(|v| 1.0 - v).collect());
        let (a, b) = (scores(&mut g, &r2), scores(&mut g, &f2));
        let l2 = d_loss(&mut g, a, b, GanForm::Saturating).unwrap();
        assert!((g.scalar_value(l1) - g.scalar_value(l2)).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_scores_rejected() {
        let mut g = Graph::new();
        let (r, f) = (scores(&mut g, &[1.0]), scores(&mut g, &[0.5]));
        assert!(matches!(d_loss(&mut g, r, f, GanForm::Saturating), Err(Error::Contract(_))));
        assert!(matches!(g_loss(&mut g, r, GanForm::Saturating), Err(Error::Contract(_))));
        let z = scores(&mut g, &[0.0]);
        assert!(d_loss(&mut g, f, z, GanForm::Standard).is_err());
    }

    #[test]
    fn g_loss_values_and_gradient() {
        let mut g = Graph::new();
        let f = scores(&mut g, &[1.0 - 1e-7]);
        let l = g_loss(&mut g, f, GanForm::Saturating).unwrap();
        assert!(g.scalar_value(l) < 1e-6);
        let mut g = Graph::new();
        let f = scores(&mut g, &[0.5, 0.5, 0.5, 0.5]);
        let l = g_loss(&mut g, f, GanForm::Saturating).unwrap();
        assert_eq!(g.scalar_value(l), 0.5);
        g.backward(l).unwrap();
        assert!(g.grad(f).unwrap().iter().all(|&d| (d + 0.25).abs() < 1e-7));
    }

    #[test]
    fn standard_form_values() {
        let mut g = Graph::new();
        let (r, f) = (scores(&mut g, &[0.8]), scores(&mut g, &[0.3]));
        let d = d_loss(&mut g, r, f, GanForm::Standard).unwrap();
        let gl = g_loss(&mut g, f, GanForm::Standard).unwrap();
        assert!((g.scalar_value(d) as f64 - (-(0.8f64.ln()) - 0.7f64.ln())).abs() < 1e-6);
        assert!((g.scalar_value(gl) as f64 + 0.3f64.ln()).abs() < 1e-6);
        assert_eq!("standard".parse::<GanForm>().unwrap(), GanForm::Standard);
        assert!("other".parse::<GanForm>().is_err());
    }

    #[test]
    fn denoise_loss_weighting() {
        // one step with β = 0.5 forces ᾱ_1 = 0.5, weight 1
        let s = NoiseSchedule::from_parts(vec![0.0, 0.9], 1.0, vec![0.5]).unwrap();
        let mut g = Graph::new();
        let p = g.param(&Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let truth = Tensor::from_vec(&[2], vec![-1.0, 1.0]).unwrap();
        let l = denoise_loss(&mut g, p, &truth, 1, &s).unwrap();
        assert!((g.scalar_value(l) - 4.0).abs() < 1e-6);
        let own = g.value(p).clone();
        let zero = denoise_loss(&mut g, p, &own, 1, &s).unwrap();
        assert_eq!(g.scalar_value(zero), 0.0);
        assert!(denoise_loss(&mut g, p, &truth, 2, &s).is_err());
        assert!(denoise_loss(&mut g, p, &truth, 0, &s).is_err());
    }

    #[test]
    fn totals_follow_toggles() {
        let s = ScheduleParams::default().build().unwrap();
        let p = LossParts { denoise_student: 0.1, distill: 0.2, g_hr: 0.3, g_lr: 0.4, denoise_g: 0.2 };
        let half = LossWeights { lambda_override: Some(0.5), ..LossWeights::default() };
        assert!((student_total_loss(&p, &half, 15, &s).unwrap() - 0.55).abs() < 1e-12);
        assert!((downsampler_total_loss(&p, &half, 15, &s).unwrap() - 0.4).abs() < 1e-12);

        let distill_only = LossWeights { use_hr: false, use_lr: false, ..LossWeights::default() };
        assert!((student_total_loss(&p, &distill_only, 15, &s).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(downsampler_total_loss(&p, &distill_only, 15, &s).unwrap(), 0.2);

        let zero = LossWeights { lambda_override: Some(0.0), ..LossWeights::default() };
        assert_eq!(student_total_loss(&p, &zero, 15, &s).unwrap(), 0.1);

        let none = LossWeights { use_distill: false, use_hr: false, use_lr: false, ..LossWeights::default() };
        assert!(matches!(student_total_loss(&p, &none, 15, &s), Err(Error::Config(_))));
        let neg = LossWeights { lambda_override: Some(-1.0), ..LossWeights::default() };
        assert!(neg.validate().is_err());

        // structural identity: student total minus its distill/HR terms is the G total form
        let same = LossParts { denoise_g: p.denoise_student, ..p };
        let st = student_total_loss(&same, &half, 15, &s).unwrap();
        assert!((st - 0.5 * (p.distill + p.g_hr) - downsampler_total_loss(&same, &half, 15, &s).unwrap()).abs() < 1e-12);

        // unset override falls back to the schedule weight at T
        let sched = LossWeights { lambda_override: None, ..LossWeights::default() };
        assert_eq!(sched.factor(15, &s).unwrap(), s.loss_weight(15).unwrap());
    }
}
