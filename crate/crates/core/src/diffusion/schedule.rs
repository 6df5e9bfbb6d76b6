use crate::error::{arg_err, Result};

/// First β of the linear variance schedule.
pub const BETA_START: f64 = 1e-4;

/// Shifting sequence η_0..η_T, noise scale κ, and the variance schedule
/// β_1..β_T with its cumulative product ᾱ_t.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    eta: Vec<f64>,
    kappa: f64,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Construction parameters of a geometric-√η schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub steps: usize,
    pub eta1: f64,
    pub eta_t: f64,
    pub kappa: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { steps: 15, eta1: 0.001, eta_t: 0.9999, kappa: 1.0, beta_max: 0.02 }
    }
}

impl ScheduleParams {
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.steps, self.eta1, self.eta_t, self.kappa, self.beta_max)
    }
}

/// Reverse-step weights (k, m, j) for `x_{t-1} = k·x̂_0 + m·x_t + j·y`
/// between two points of the shifting sequence.
///
/// Obtained by substituting ε̂ = (x_t − (1−η_t)x̂_0 − η_t·y)/(κ√η_t) into
/// the marginal at t−1, so κ cancels out.
pub fn shift_coeffs(eta_prev: f64, eta_t: f64) -> (f64, f64, f64) {
    let m = (eta_prev / eta_t).sqrt();
    let j = eta_prev - (eta_prev * eta_t).sqrt();
    (1.0 - m - j, m, j)
}

impl NoiseSchedule {
    /// `√η_t` geometric between `√eta1` and `√eta_t`; β linear from
    /// [`BETA_START`] to `beta_max`.
    pub fn new(steps: usize, eta1: f64, eta_t: f64, kappa: f64, beta_max: f64) -> Result<Self> {
        if !(1..=64).contains(&steps) {
            return Err(arg_err!("step count must be in 1..=64, got {steps}"));
        }
        if !(eta1 > 0.0 && eta1 < eta_t && eta_t <= 1.0) {
            return Err(arg_err!("need 0 < eta1 < etaT <= 1, got eta1={eta1} etaT={eta_t}"));
        }
        if !(kappa > 0.0) {
            return Err(arg_err!("kappa must be positive, got {kappa}"));
        }
        if !(beta_max > BETA_START && beta_max < 1.0) {
            return Err(arg_err!("beta_max must be in ({BETA_START}, 1), got {beta_max}"));
        }
        let mut eta = vec![0.0; steps + 1];
        if steps == 1 {
            eta[1] = eta_t;
        } else {
            let (a, b) = (eta1.sqrt(), eta_t.sqrt());
            for (t, e) in eta.iter_mut().enumerate().skip(1) {
                let frac = (t - 1) as f64 / (steps - 1) as f64;
                *e = (a * (b / a).powf(frac)).powi(2);
            }
            eta[steps] = eta_t;
        }
        let beta: Vec<f64> = (1..=steps)
            .map(|t| {
                if steps == 1 {
                    beta_max
                } else {
                    BETA_START + (beta_max - BETA_START) * (t - 1) as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_parts(eta, kappa, beta)
    }

    /// Builds a schedule from explicit sequences. `eta` holds η_0..η_T and
    /// `beta` holds β_1..β_T.
    pub fn from_parts(eta: Vec<f64>, kappa: f64, beta: Vec<f64>) -> Result<Self> {
        if eta.len() < 2 || beta.len() != eta.len() - 1 {
            return Err(arg_err!("need T+1 eta values and T beta values"));
        }
        if eta[0] != 0.0 {
            return Err(arg_err!("eta_0 must be 0"));
        }
        if eta.windows(2).any(|w| !(w[1] > w[0])) || *eta.last().unwrap() > 1.0 {
            return Err(arg_err!("eta must be strictly increasing and <= 1"));
        }
        if !(kappa > 0.0) {
            return Err(arg_err!("kappa must be positive"));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(arg_err!("every beta must lie in (0, 1)"));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { eta, kappa, beta, alpha_bar })
    }

    /// Number of diffusion steps T.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.eta[t]
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(arg_err!("timestep {t} outside 1..={}", self.steps()));
        }
        Ok(())
    }

    /// ᾱ_t / (1 − ᾱ_t)
    pub fn loss_weight(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        let a = self.alpha_bar(t);
        Ok(a / (1.0 - a))
    }

    /// Reverse-step coefficients (k_t, m_t, j_t) for 1 ≤ t ≤ T.
    pub fn ddim_coeffs(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check_t(t)?;
        Ok(shift_coeffs(self.eta[t - 1], self.eta[t]))
    }

    /// (T, eta_1, eta_T, kappa, beta_max) packed for checkpoints.
    pub fn to_values(&self) -> Vec<f32> {
        vec![
            self.steps() as f32,
            self.eta[1] as f32,
            self.eta[self.steps()] as f32,
            self.kappa as f32,
            self.beta[self.steps() - 1] as f32,
        ]
    }
}
